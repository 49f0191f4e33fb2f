//! Time loops and numerical studies: self-convergence on nested meshes,
//! asymptotic-preserving checks against the diffusion limit, and a
//! manufactured advection problem with a known solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imex::{DiffusionSystem, ImexTableau, KineticSystem, MacroState, SchemeOptions, StepStats, Workspace};
use crate::mesh::Mesh;
use crate::model::{KineticState, ModelKind, ParameterFields, UrbanState};
use crate::ordinates::OrdinateSet;

/// Accumulated diagnostics of a time loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    pub steps: usize,
    pub positivity_fallbacks: usize,
    pub min_dt: f64,
    pub max_dt: f64,
}

impl LoopStats {
    fn record(&mut self, dt: f64, s: StepStats) {
        if self.steps == 0 {
            self.min_dt = dt;
            self.max_dt = dt;
        }
        self.steps += 1;
        self.positivity_fallbacks += s.positivity_fallbacks;
        self.min_dt = self.min_dt.min(dt);
        self.max_dt = self.max_dt.max(dt);
    }
}

/// Advances the kinetic system from `t0` to `t1` with CFL-limited steps.
/// `observe` is called after every step with the new time.
#[allow(clippy::too_many_arguments)]
pub fn advance<F>(
    sys: &KineticSystem,
    state: &mut KineticState,
    urban: &mut UrbanState,
    t0: f64,
    t1: f64,
    cfl: f64,
    dt_max: f64,
    mut observe: F,
) -> Result<LoopStats>
where
    F: FnMut(f64, &KineticState, &UrbanState, &StepStats) -> Result<()>,
{
    let mut ws = Workspace::default();
    let mut t = t0;
    let mut stats = LoopStats::default();
    // guard against a final sliver step from rounding
    let eps = 1e-12 * t1.abs().max(1.0);
    while t < t1 - eps {
        let mut dt = sys.cfl_dt(cfl, dt_max, t, t1)?;
        if t1 - (t + dt) < eps {
            dt = t1 - t;
        }
        let s = sys.step(&mut ws, state, urban, dt, t)?;
        t = if t1 - (t + dt) < eps { t1 } else { t + dt };
        stats.record(dt, s);
        observe(t, state, urban, &s)?;
    }
    Ok(stats)
}

/// Advances the diffusion limit from `t0` to `t1`.
pub fn advance_limit(sys: &DiffusionSystem, y: &mut MacroState, t0: f64, t1: f64, cfl: f64, dt_max: f64) -> Result<LoopStats> {
    let mut t = t0;
    let mut stats = LoopStats::default();
    let eps = 1e-12 * t1.abs().max(1.0);
    while t < t1 - eps {
        let mut dt = sys.cfl_dt(cfl, dt_max, t, t1)?;
        if t1 - (t + dt) < eps {
            dt = t1 - t;
        }
        let s = sys.explicit_rd_step(y, dt).map_err(|e| match e {
            Error::StepFailure { msg, .. } => Error::StepFailure { time: t, msg },
            other => other,
        })?;
        t = if t1 - (t + dt) < eps { t1 } else { t + dt };
        stats.record(dt, s);
    }
    Ok(stats)
}

/// For every cell of `fine`, the cell of `coarse` containing it. Both meshes
/// must be refinements of the same base mesh, the fine one nested in the
/// coarse one.
pub fn nesting_map(coarse: &Mesh, fine: &Mesh) -> Result<Vec<usize>> {
    let pc = coarse
        .parent
        .as_ref()
        .ok_or_else(|| Error::Projection("coarse mesh carries no parent map".into()))?;
    let pf = fine
        .parent
        .as_ref()
        .ok_or_else(|| Error::Projection("fine mesh carries no parent map".into()))?;
    let nbase = pc.iter().chain(pf).max().map_or(0, |m| m + 1);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nbase];
    for (c, &p) in pc.iter().enumerate() {
        children[p].push(c);
    }
    let mut map = Vec::with_capacity(fine.n_cells());
    for (f, &p) in pf.iter().enumerate() {
        let x = fine.cells[f].centroid;
        let hit = children[p].iter().copied().find(|&c| inside_convex(coarse, c, x));
        let c = hit.ok_or_else(|| Error::Projection(format!("fine cell {f} is not contained in any coarse cell (meshes not nested)")))?;
        // every vertex of a nested fine cell lies in the same coarse cell
        for &v in &fine.cells[f].vertices {
            let pv = fine.vertices[v];
            if !inside_convex(coarse, c, [pv.x, pv.y]) {
                return Err(Error::Projection(format!("fine cell {f} straddles coarse cells (meshes not nested)")));
            }
        }
        map.push(c);
    }
    Ok(map)
}

fn inside_convex(mesh: &Mesh, c: usize, p: [f64; 2]) -> bool {
    let vs = &mesh.cells[c].vertices;
    let k = vs.len();
    let scale = mesh.cells[c].perimeter;
    (0..k).all(|i| {
        let a = mesh.vertices[vs[i]];
        let b = mesh.vertices[vs[(i + 1) % k]];
        (b.x - a.x) * (p[1] - a.y) - (b.y - a.y) * (p[0] - a.x) >= -1e-10 * scale * scale
    })
}

/// Conservative average of fine-cell values onto the coarse cells.
pub fn restrict(coarse: &Mesh, fine: &Mesh, map: &[usize], values: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; coarse.n_cells()];
    let mut area = vec![0.0; coarse.n_cells()];
    for (f, &c) in map.iter().enumerate() {
        acc[c] += fine.cells[f].area * values[f];
        area[c] += fine.cells[f].area;
    }
    acc.iter().zip(&area).map(|(a, w)| a / w).collect()
}

/// `sum_k |P_k| |a_k - b_k|`.
pub fn l1_distance(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.cells.iter().zip(a.iter().zip(b)).map(|(c, (x, y))| c.area * (x - y).abs()).sum()
}

pub fn l1_norm(mesh: &Mesh, a: &[f64]) -> f64 {
    mesh.cells.iter().zip(a).map(|(c, x)| c.area * x.abs()).sum()
}

/// One grid level of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub chi: usize,
    pub cells: usize,
    pub h: f64,
    pub errors: Vec<f64>,
    /// Observed order with respect to the previous (coarser) row.
    pub orders: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub quantities: Vec<String>,
    pub reference_chi: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Order of quantity `q` between the two finest grids.
    pub fn finest_order(&self, q: usize) -> Option<f64> {
        self.rows.last().and_then(|r| r.orders[q])
    }
}

/// Observed orders `log(e_k / e_{k+1}) / log(h_k / h_{k+1})` filled in place.
pub fn fill_orders(rows: &mut [ConvergenceRow]) {
    for k in 0..rows.len() {
        let nq = rows[k].errors.len();
        rows[k].orders = (0..nq)
            .map(|q| {
                if k == 0 {
                    return None;
                }
                let (e0, e1) = (rows[k - 1].errors[q], rows[k].errors[q]);
                if e0 > 0.0 && e1 > 0.0 {
                    Some((e0 / e1).ln() / (rows[k - 1].h / rows[k].h).ln())
                } else {
                    None
                }
            })
            .collect();
    }
}

/// Self-convergence study.
///
/// `solve(mesh)` returns one cell field per tracked quantity at the final
/// time. Every `chi` must divide `reference_chi`; the reference solution is
/// averaged onto each grid and L1 errors are taken there.
pub fn convergence_study<F>(base: &Mesh, chis: &[usize], reference_chi: usize, quantities: &[&str], solve: F) -> Result<ConvergenceTable>
where
    F: Fn(&Mesh) -> Result<Vec<Vec<f64>>>,
{
    if chis.is_empty() {
        return Err(Error::Argument("no refinement levels".into()));
    }
    if let Some(c) = chis.iter().find(|&&c| c == 0 || reference_chi % c != 0) {
        return Err(Error::Projection(format!("level {c} is not nested in the reference level {reference_chi}")));
    }
    let fine = crate::mesh::refine_triangles(base, reference_chi)?;
    let reference = solve(&fine)?;
    if reference.len() != quantities.len() {
        return Err(Error::Argument("solver returned the wrong number of quantities".into()));
    }
    let mut rows = Vec::new();
    for &chi in chis {
        let mesh = crate::mesh::refine_triangles(base, chi)?;
        let map = nesting_map(&mesh, &fine)?;
        let sol = solve(&mesh)?;
        let errors = sol
            .iter()
            .zip(&reference)
            .map(|(s, r)| l1_distance(&mesh, s, &restrict(&mesh, &fine, &map, r)))
            .collect();
        rows.push(ConvergenceRow {
            chi,
            cells: mesh.n_cells(),
            h: mesh.mesh_size(),
            errors,
            orders: Vec::new(),
        });
    }
    fill_orders(&mut rows);
    Ok(ConvergenceTable {
        quantities: quantities.iter().map(|s| s.to_string()).collect(),
        reference_chi,
        rows,
    })
}

/// Relaxation regime of the smooth benchmark: `lambda^2 tau = 1` in all of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub tau: f64,
    pub lambda_sq: f64,
}

impl Regime {
    pub const HYPERBOLIC: Regime = Regime { tau: 1.0, lambda_sq: 1.0 };
    pub const INTERMEDIATE: Regime = Regime { tau: 1e-2, lambda_sq: 1e2 };
    pub const DIFFUSIVE: Regime = Regime { tau: 1e-4, lambda_sq: 1e4 };

    /// `tau` with `D = lambda^2 tau / 2` fixed.
    pub fn with_diffusion(tau: f64, d: f64) -> Self {
        Regime { tau, lambda_sq: 2.0 * d / tau }
    }

    pub fn label(&self) -> String {
        format!("tau={:e}, lambda^2={:e}", self.tau, self.lambda_sq)
    }
}

/// Commuter-only SIR benchmark on `[-1,1]^2`: `S = sin(2 pi x) sin(2 pi y)`,
/// `I = 1 - S`, `R = 0`, zero fluxes, `beta = 10`, `gamma = 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothProblem {
    pub regime: Regime,
    pub nodes: usize,
    pub beta: f64,
    pub gamma: f64,
    pub final_time: f64,
    pub cfl: f64,
}

impl SmoothProblem {
    pub fn new(regime: Regime) -> Self {
        SmoothProblem {
            regime,
            nodes: 2,
            beta: 10.0,
            gamma: 4.0,
            final_time: 0.1,
            cfl: 0.4,
        }
    }

    /// Kinetic system without positivity guard (the data change sign).
    pub fn system(&self, mesh: &Mesh) -> Result<KineticSystem> {
        let n = mesh.n_cells();
        let mut f = ParameterFields::uniform(ModelKind::Sir, n);
        f.beta_i = vec![self.beta; n];
        f.gamma_i = vec![self.gamma; n];
        let lam = vec![self.regime.lambda_sq.sqrt(); n];
        let tau = vec![self.regime.tau; n];
        for c in 0..3 {
            f.set_lambda(c, &lam);
            f.set_tau(c, &tau);
        }
        let options = SchemeOptions {
            positivity_guard: false,
            ..SchemeOptions::default()
        };
        KineticSystem::new(mesh.clone(), OrdinateSet::new(self.nodes)?, f, options, ImexTableau::ars222())
    }

    /// Initial densities `[cell][S, I, R]` at centroids.
    pub fn initial_densities(mesh: &Mesh) -> Vec<f64> {
        let tp = 2.0 * std::f64::consts::PI;
        let mut d = Vec::with_capacity(3 * mesh.n_cells());
        for c in &mesh.cells {
            let s = (tp * c.centroid[0]).sin() * (tp * c.centroid[1]).sin();
            d.extend_from_slice(&[s, 1.0 - s, 0.0]);
        }
        d
    }

    pub fn initial_state(sys: &KineticSystem) -> (KineticState, UrbanState) {
        let d = Self::initial_densities(&sys.mesh);
        (KineticState::equilibrium(sys.layout(), &d), UrbanState::zeros(3, sys.n_cells()))
    }

    /// Final `S`, `I`, `j1_S`, `j1_I` cell fields.
    pub fn solve(&self, mesh: &Mesh) -> Result<Vec<Vec<f64>>> {
        let sys = self.system(mesh)?;
        let (mut st, mut ur) = Self::initial_state(&sys);
        advance(&sys, &mut st, &mut ur, 0.0, self.final_time, self.cfl, f64::INFINITY, |_, _, _, _| Ok(()))?;
        if !st.is_finite() {
            return Err(Error::StepFailure {
                time: self.final_time,
                msg: "non-finite state".into(),
            });
        }
        let dens = st.densities(&sys.set);
        let flux = st.first_parity_flux(&sys.set);
        let pick = |v: &[f64], c: usize| v.chunks_exact(3).map(|x| x[c]).collect::<Vec<f64>>();
        Ok(vec![pick(&dens, 0), pick(&dens, 1), pick(&flux, 0), pick(&flux, 1)])
    }
}

/// Self-convergence of the smooth benchmark in the given regime.
pub fn smooth_convergence(base: &Mesh, chis: &[usize], problem: &SmoothProblem) -> Result<ConvergenceTable> {
    let reference = 2 * chis.iter().copied().max().unwrap_or(1);
    convergence_study(base, chis, reference, &["S", "I", "j1_S", "j1_I"], |m| problem.solve(m))
}

/// Benchmark domain `[-1,1]^2` split into `nb x nb` squares of two triangles.
pub fn benchmark_base(nb: usize) -> Result<Mesh> {
    crate::mesh::rectangle_mesh(-1.0, 1.0, -1.0, 1.0, nb, nb)
}

/// Default regimes of the convergence study with their base resolutions.
/// The stiffest regime runs on a coarser base: its step is parabolic.
pub const CONVERGENCE_PLAN: [(Regime, usize); 3] = [(Regime::HYPERBOLIC, 8), (Regime::INTERMEDIATE, 8), (Regime::DIFFUSIVE, 3)];

/// Refinement factors of the convergence study; the reference uses twice the last.
pub const CONVERGENCE_CHIS: [usize; 4] = [1, 2, 4, 8];

/// Default relaxation times and diffusion coefficient of the AP study.
pub const AP_TAUS: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];
pub const AP_DIFFUSION: f64 = 0.5;

/// Mesh of the AP study: base 4 refined by 4 (512 triangles).
pub fn ap_mesh() -> Result<Mesh> {
    crate::mesh::refine_triangles(&benchmark_base(4)?, 4)
}

/// One row of an asymptotic-preserving study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub tau: f64,
    pub lambda_sq: f64,
    /// `sum_k |P_k| |rho_kin - rho_rd|` over all compartments.
    pub distance: f64,
    /// `distance` over the L1 norm of the reference.
    pub relative: f64,
}

/// Kinetic solution against the reaction-diffusion limit from the same
/// initial data, for each `tau` at fixed `D`.
pub fn ap_study(mesh: &Mesh, base: &SmoothProblem, diffusion: f64, taus: &[f64]) -> Result<Vec<ApRow>> {
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let p = SmoothProblem {
            regime: Regime::with_diffusion(tau, diffusion),
            ..*base
        };
        let sys = p.system(mesh)?;
        let (mut st, mut ur) = SmoothProblem::initial_state(&sys);
        let limit = DiffusionSystem::limit_of(&sys)?;
        let mut y = MacroState {
            commuters: st.densities(&sys.set),
            urban: ur.values.clone(),
        };
        advance(&sys, &mut st, &mut ur, 0.0, p.final_time, p.cfl, f64::INFINITY, |_, _, _, _| Ok(()))?;
        advance_limit(&limit, &mut y, 0.0, p.final_time, p.cfl, f64::INFINITY)?;
        let kin = st.densities(&sys.set);
        let nc = 3;
        let mut dist = 0.0;
        let mut norm = 0.0;
        for (k, c) in mesh.cells.iter().enumerate() {
            for q in 0..nc {
                dist += c.area * (kin[k * nc + q] - y.commuters[k * nc + q]).abs();
                norm += c.area * y.commuters[k * nc + q].abs();
            }
        }
        rows.push(ApRow {
            tau,
            lambda_sq: p.regime.lambda_sq,
            distance: dist,
            relative: if norm > 0.0 { dist / norm } else { dist },
        });
    }
    Ok(rows)
}

/// Manufactured check of the convergence machinery: a smooth compact bump
/// `u0` advected with constant velocity `a` on `[0,1]^2`, reconstructed with
/// CWENO, upwind fluxes and the explicit tableau, compared with the exact
/// cell averages at `t = 0.25`.
pub fn advection_self_test(chis: &[usize]) -> Result<ConvergenceTable> {
    let a = [0.8, 0.4];
    let t_end = 0.25;
    let bump = |x: f64, y: f64| {
        let r2 = ((x - 0.35).powi(2) + (y - 0.4).powi(2)) / 0.09;
        if r2 < 1.0 {
            let c = (0.5 * std::f64::consts::PI * r2.sqrt()).cos();
            c.powi(6)
        } else {
            0.0
        }
    };
    let base = crate::mesh::rectangle_mesh(0.0, 1.0, 0.0, 1.0, 4, 4)?;
    let tab = ImexTableau::ars222();
    let mut rows = Vec::new();
    for &chi in chis {
        let mesh = crate::mesh::refine_triangles(&base, chi)?;
        let exact = |t: f64| cell_averages(&mesh, |x, y| bump(x - a[0] * t, y - a[1] * t));
        let mut u = exact(0.0);
        let speed = a[0].hypot(a[1]);
        let hmin = mesh.cells.iter().map(|c| c.h()).fold(f64::INFINITY, f64::min);
        let steps = (t_end / (0.3 * hmin / speed)).ceil() as usize;
        let dt = t_end / steps as f64;
        let s = tab.stages();
        let mut k: Vec<Vec<f64>> = vec![Vec::new(); s];
        for _ in 0..steps {
            for i in 0..s {
                let mut v = u.clone();
                for j in 0..i {
                    let c = tab.at[i][j];
                    if c != 0.0 {
                        v.iter_mut().zip(&k[j]).for_each(|(x, kj)| *x += dt * c * kj);
                    }
                }
                k[i] = advection_rate(&mesh, &v, a)?;
            }
            for j in 0..s {
                if tab.bt[j] != 0.0 {
                    u.iter_mut().zip(&k[j]).for_each(|(x, kj)| *x += dt * tab.bt[j] * kj);
                }
            }
        }
        let e = exact(t_end);
        rows.push(ConvergenceRow {
            chi,
            cells: mesh.n_cells(),
            h: mesh.mesh_size(),
            errors: vec![l1_distance(&mesh, &u, &e)],
            orders: Vec::new(),
        });
    }
    fill_orders(&mut rows);
    Ok(ConvergenceTable {
        quantities: vec!["u".into()],
        reference_chi: 0,
        rows,
    })
}

fn advection_rate(mesh: &Mesh, u: &[f64], a: [f64; 2]) -> Result<Vec<f64>> {
    let p = crate::spatial::cweno_reconstruct(mesh, u)?;
    let mut out = vec![0.0; u.len()];
    for e in &mesh.edges {
        let Some(r) = e.right else { continue };
        let an = a[0] * e.normal[0] + a[1] * e.normal[1];
        let up = if an >= 0.0 { e.left } else { r };
        let q = an * p.eval(mesh, up, e.midpoint[0], e.midpoint[1]) * e.length;
        out[e.left] -= q / mesh.cells[e.left].area;
        out[r] += q / mesh.cells[r].area;
    }
    Ok(out)
}

/// Cell averages by the edge-midpoint rule on four sub-triangles per triangle
/// (fan triangulation for other polygons).
pub fn cell_averages<F: Fn(f64, f64) -> f64>(mesh: &Mesh, f: F) -> Vec<f64> {
    let tri = |p: [[f64; 2]; 3]| {
        let m = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let (m01, m12, m20) = (m(p[0], p[1]), m(p[1], p[2]), m(p[2], p[0]));
        let subs = [[p[0], m01, m20], [m01, p[1], m12], [m20, m12, p[2]], [m01, m12, m20]];
        let mut s = 0.0;
        for q in subs {
            let area = 0.5 * ((q[1][0] - q[0][0]) * (q[2][1] - q[0][1]) - (q[2][0] - q[0][0]) * (q[1][1] - q[0][1]));
            let mids = [m(q[0], q[1]), m(q[1], q[2]), m(q[2], q[0])];
            s += area * mids.iter().map(|x| f(x[0], x[1])).sum::<f64>() / 3.0;
        }
        s
    };
    mesh.cells
        .iter()
        .map(|c| {
            let pt = |v: usize| [mesh.vertices[v].x, mesh.vertices[v].y];
            let mut s = 0.0;
            for i in 1..c.vertices.len() - 1 {
                s += tri([pt(c.vertices[0]), pt(c.vertices[i]), pt(c.vertices[i + 1])]);
            }
            s / c.area
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{rectangle_mesh, refine_triangles};

    #[test]
    fn nesting_and_restriction() {
        let base = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let c = refine_triangles(&base, 2).unwrap();
        let f = refine_triangles(&base, 4).unwrap();
        let map = nesting_map(&c, &f).unwrap();
        let vals: Vec<f64> = f.cells.iter().map(|x| x.centroid[0] + 2.0 * x.centroid[1]).collect();
        let r = restrict(&c, &f, &map, &vals);
        // averages of a linear function are its centroid values
        for (k, cell) in c.cells.iter().enumerate() {
            assert!((r[k] - (cell.centroid[0] + 2.0 * cell.centroid[1])).abs() < 1e-14);
        }
    }

    #[test]
    fn non_nested_levels_rejected() {
        let base = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 1, 1).unwrap();
        let r = convergence_study(&base, &[2, 3], 4, &["u"], |m| Ok(vec![vec![0.0; m.n_cells()]]));
        assert!(matches!(r, Err(Error::Projection(_))));
        let c = refine_triangles(&base, 3).unwrap();
        let f = refine_triangles(&base, 4).unwrap();
        assert!(matches!(nesting_map(&c, &f), Err(Error::Projection(_))));
    }

    #[test]
    fn constant_solutions_have_no_error() {
        let base = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 1, 1).unwrap();
        let t = convergence_study(&base, &[1, 2], 4, &["u"], |m| Ok(vec![vec![0.25; m.n_cells()]])).unwrap();
        assert!(t.rows.iter().all(|r| r.errors[0] <= 1e-12));
    }

    #[test]
    fn advection_self_test_is_second_order() {
        let t = advection_self_test(&[4, 8, 16]).unwrap();
        let o = t.finest_order(0).unwrap();
        assert!(o >= 1.8, "order {o}");
    }

    #[test]
    fn ap_study_without_transport_has_no_discrepancy() {
        let m = rectangle_mesh(-1.0, 1.0, -1.0, 1.0, 3, 3).unwrap();
        let p = SmoothProblem::new(Regime::HYPERBOLIC);
        let rows = ap_study(&m, &p, 0.0, &[1e-2, 1e-6]).unwrap();
        // both reduce to the same explicit integrator; only summation order differs
        for r in rows {
            assert_eq!(r.lambda_sq, 0.0);
            assert!(r.relative <= 1e-14, "{r:?}");
        }
    }

    #[test]
    fn constant_data_converge_exactly() {
        let base = rectangle_mesh(-1.0, 1.0, -1.0, 1.0, 2, 2).unwrap();
        let p = SmoothProblem::new(Regime::INTERMEDIATE);
        let t = convergence_study(&base, &[1, 2], 4, &["S", "I"], |m| {
            let sys = p.system(m)?;
            let d: Vec<f64> = (0..m.n_cells()).flat_map(|_| [0.7, 0.3, 0.0]).collect();
            let mut st = KineticState::equilibrium(sys.layout(), &d);
            let mut ur = UrbanState::zeros(3, m.n_cells());
            // a common step below every level's limit makes the reaction path identical
            advance(&sys, &mut st, &mut ur, 0.0, 0.02, 0.4, 1e-4, |_, _, _, _| Ok(()))?;
            let dens = st.densities(&sys.set);
            Ok(vec![dens.iter().step_by(3).copied().collect(), dens.iter().skip(1).step_by(3).copied().collect()])
        })
        .unwrap();
        for r in &t.rows {
            assert!(r.errors.iter().all(|e| *e <= 1e-12), "{r:?}");
        }
    }
}
