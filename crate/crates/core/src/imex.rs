//! Implicit-explicit Runge-Kutta time stepping.
//!
//! The commuter system is split into stiff relaxation (implicit) and
//! transport plus epidemic terms (explicit). Within each stage the odd
//! parities are advanced first; the central part of the even-parity flux,
//! which is linear in the odd parities, then takes the implicit weights and
//! the freshly computed odd stage values. Relaxation of both parities is
//! local and linear, so every implicit solve is explicit in closed form:
//! the density moment is unchanged by relaxation, which gives the even
//! stage values from the moment of the pre-relaxation state.
//!
//! For vanishing `tau` at fixed `lambda^2 tau` this ordering reduces the
//! scheme to the explicit tableau applied to the diffusion-limit operator,
//! see [`DiffusionSystem`].

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::model::{
    epidemic_even_into, epidemic_odd_into, forces_into, moments_into, urban_reaction_into, FluxSourceForm, KineticState,
    ParameterFields, StateLayout, UrbanDiffusionArgument, UrbanState,
};
use crate::ordinates::OrdinateSet;
use crate::spatial::{Reconstruction, Transport, TransportCoefficients};

/// A pair of Butcher tableaux: `a` implicit, `at` explicit (strictly lower).
#[derive(Debug, Clone, PartialEq)]
pub struct ImexTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub at: Vec<Vec<f64>>,
    pub bt: Vec<f64>,
    pub ct: Vec<f64>,
}

impl ImexTableau {
    /// Second-order, three-stage, stiffly accurate pair with
    /// `gamma = 1 - sqrt(2)/2` and `delta = 1 - 1/(2 gamma)`.
    pub fn ars222() -> Self {
        let g = 1.0 - std::f64::consts::SQRT_2 / 2.0;
        let d = 1.0 - 1.0 / (2.0 * g);
        Self {
            a: vec![vec![0.0, 0.0, 0.0], vec![0.0, g, 0.0], vec![0.0, 1.0 - g, g]],
            b: vec![0.0, 1.0 - g, g],
            c: vec![0.0, g, 1.0],
            at: vec![vec![0.0, 0.0, 0.0], vec![g, 0.0, 0.0], vec![d, 1.0 - d, 0.0]],
            bt: vec![d, 1.0 - d, 0.0],
            ct: vec![0.0, g, 1.0],
        }
    }

    /// First-order forward/backward Euler pair.
    pub fn euler() -> Self {
        Self {
            a: vec![vec![1.0]],
            b: vec![1.0],
            c: vec![1.0],
            at: vec![vec![0.0]],
            bt: vec![1.0],
            ct: vec![0.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Shape, lower-triangularity and row-sum checks.
    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        let sq = |m: &Vec<Vec<f64>>| m.len() == s && m.iter().all(|r| r.len() == s);
        if s == 0 || !sq(&self.a) || !sq(&self.at) || self.bt.len() != s || self.c.len() != s || self.ct.len() != s {
            return Err(Error::Argument("tableau dimensions are inconsistent".into()));
        }
        for i in 0..s {
            if self.a[i][i + 1..].iter().any(|&x| x != 0.0) {
                return Err(Error::Argument("implicit tableau must be lower triangular".into()));
            }
            if self.at[i][i..].iter().any(|&x| x != 0.0) {
                return Err(Error::Argument("explicit tableau must be strictly lower triangular".into()));
            }
        }
        Ok(())
    }

    /// Globally stiffly accurate: last rows equal the weights.
    pub fn gsa_check(&self) -> bool {
        let s = self.stages();
        if s == 0 {
            return false;
        }
        (0..s).all(|j| self.a[s - 1][j] == self.b[j]) && (0..s - 1).all(|j| self.at[s - 1][j] == self.bt[j])
    }

    /// Residuals of the second-order conditions, including coupling terms.
    pub fn order2_residuals(&self) -> [f64; 6] {
        let s = self.stages();
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let row = |m: &Vec<Vec<f64>>, i: usize| m[i].iter().sum::<f64>();
        let c: Vec<f64> = (0..s).map(|i| row(&self.a, i)).collect();
        let ct: Vec<f64> = (0..s).map(|i| row(&self.at, i)).collect();
        [
            sum(&self.b) - 1.0,
            sum(&self.bt) - 1.0,
            dot(&self.b, &c) - 0.5,
            dot(&self.bt, &ct) - 0.5,
            dot(&self.b, &ct) - 0.5,
            dot(&self.bt, &c) - 0.5,
        ]
    }
}

/// Numerical switches of the commuter scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOptions {
    pub flux_form: FluxSourceForm,
    pub urban_argument: UrbanDiffusionArgument,
    pub positivity_guard: bool,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            flux_form: FluxSourceForm::Appendix,
            urban_argument: UrbanDiffusionArgument::Urban,
            positivity_guard: true,
        }
    }
}

/// Mesh, parameters and precomputed operators of one kinetic problem.
#[derive(Debug, Clone)]
pub struct KineticSystem {
    pub mesh: Mesh,
    pub set: OrdinateSet,
    pub fields: ParameterFields,
    pub options: SchemeOptions,
    pub tableau: ImexTableau,
    pub(crate) rec: Reconstruction,
    pub(crate) transport: Transport,
    pub(crate) coef: TransportCoefficients,
    inv_tau: Vec<f64>,
}

/// Diagnostics of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub positivity_fallbacks: usize,
}

/// Scratch buffers reused between steps.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    xe: Vec<Vec<f64>>,
    ie: Vec<Vec<f64>>,
    xo: Vec<Vec<f64>>,
    io: Vec<Vec<f64>>,
    xw: Vec<Vec<f64>>,
    u: Vec<f64>,
    v: Vec<f64>,
    /// `v / lambda`, the reconstructed odd variable.
    g: Vec<f64>,
    w: Vec<f64>,
    ug: Vec<f64>,
    vg: Vec<f64>,
    dens: Vec<f64>,
    totals: Vec<f64>,
    phi_i: Vec<f64>,
    phi_e: Vec<f64>,
    tmp: Vec<f64>,
}

/// Unclamped step bound shared by the kinetic and limit systems.
fn stable_dt(mesh: &Mesh, coef: &TransportCoefficients, du: &[f64], nc: usize, cfl: f64) -> f64 {
    let speed = |k: usize| coef.lambda_eff[k * nc..(k + 1) * nc].iter().cloned().fold(0.0, f64::max);
    let mut dt = f64::INFINITY;
    for (k, cell) in mesh.cells.iter().enumerate() {
        let h = cell.h();
        let s = cell.neighbors.iter().map(|&j| speed(j)).fold(speed(k), f64::max);
        let d = du[k * nc..(k + 1) * nc].iter().cloned().fold(0.0, f64::max);
        if s > 0.0 {
            dt = dt.min(cfl * h / s);
        }
        if d > 0.0 {
            dt = dt.min(cfl * h * h / (4.0 * d));
        }
    }
    dt
}

impl KineticSystem {
    pub fn new(mesh: Mesh, set: OrdinateSet, fields: ParameterFields, options: SchemeOptions, tableau: ImexTableau) -> Result<Self> {
        fields.validate()?;
        tableau.validate()?;
        if fields.n_cells() != mesh.n_cells() {
            return Err(Error::Argument(format!(
                "fields have {} cells, mesh has {}",
                fields.n_cells(),
                mesh.n_cells()
            )));
        }
        let nc = fields.kind.count();
        let rec = Reconstruction::new(&mesh);
        let transport = Transport::new(&mesh, &set, nc);
        let coef = TransportCoefficients::new(&mesh, &fields);
        let inv_tau = fields.tau.iter().map(|t| 1.0 / t).collect();
        Ok(Self {
            mesh,
            set,
            fields,
            options,
            tableau,
            rec,
            transport,
            coef,
            inv_tau,
        })
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            compartments: self.fields.kind.count(),
            nodes: self.set.len(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    /// Stable step `cfl * min_k min(h_k / s_k, h_k^2 / (4 D_k))`, capped by
    /// `dt_max` and by the remaining time. `s_k` is the largest effective
    /// transport speed on the edges of cell `k` (interface fluxes use the
    /// larger speed of the two sides) and `D_k` the largest urban diffusion.
    pub fn cfl_dt(&self, cfl: f64, dt_max: f64, current: f64, end: f64) -> Result<f64> {
        if !(cfl > 0.0) || !(dt_max > 0.0) {
            return Err(Error::Argument(format!("cfl {cfl} and dt_max {dt_max} must be positive")));
        }
        let mut dt = stable_dt(&self.mesh, &self.coef, &self.fields.du, self.fields.kind.count(), cfl);
        if !dt.is_finite() {
            dt = cfl * (end - current);
        }
        let dt = dt.min(dt_max).min(end - current);
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("no time left to step (t = {current}, end = {end})")));
        }
        Ok(dt)
    }

    fn prepare(&self, ws: &mut Workspace) {
        let s = self.tableau.stages();
        let len = self.n_cells() * self.layout().per_cell();
        let nw = self.n_cells() * self.fields.kind.count();
        let fit = |v: &mut Vec<Vec<f64>>, n: usize| {
            if v.len() != s || v.iter().any(|x| x.len() != n) {
                *v = vec![vec![0.0; n]; s];
            }
        };
        fit(&mut ws.xe, len);
        fit(&mut ws.ie, len);
        fit(&mut ws.xo, len);
        fit(&mut ws.io, len);
        fit(&mut ws.xw, nw);
        for (b, n) in [
            (&mut ws.u, len),
            (&mut ws.v, len),
            (&mut ws.g, len),
            (&mut ws.ug, 2 * len),
            (&mut ws.vg, 2 * len),
            (&mut ws.tmp, len),
            (&mut ws.w, nw),
            (&mut ws.dens, nw),
            (&mut ws.totals, nw),
            (&mut ws.phi_i, self.n_cells()),
            (&mut ws.phi_e, self.n_cells()),
        ] {
            b.resize(n, 0.0);
        }
    }

    /// Advances `(state, urban)` by `dt` in place.
    pub fn step(&self, ws: &mut Workspace, state: &mut KineticState, urban: &mut UrbanState, dt: f64, time: f64) -> Result<StepStats> {
        let layout = self.layout();
        if state.layout != layout || state.n_cells != self.n_cells() || urban.values.len() != self.n_cells() * layout.compartments {
            return Err(Error::Argument("state does not match the system".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Argument(format!("time step must be positive and finite, got {dt}")));
        }
        self.prepare(ws);
        let tb = &self.tableau;
        let s = tb.stages();
        let m = layout.per_cell();
        let nc = layout.compartments;
        let n = layout.nodes;
        let group = 2 * n;
        let mut stats = StepStats::default();
        let needs_central = |k: usize| (k..s).any(|r| tb.a[r][k] != 0.0) || tb.b[k] != 0.0;
        let needs_explicit = |k: usize| (k + 1..s).any(|r| tb.at[r][k] != 0.0) || tb.bt[k] != 0.0;

        for k in 0..s {
            // odd stage: explicit transport and sources, implicit relaxation
            ws.v.copy_from_slice(&state.odd);
            for j in 0..k {
                let (wa, wi) = (dt * tb.at[k][j], dt * tb.a[k][j]);
                axpy2(&mut ws.v, wa, &ws.xo[j], wi, &ws.io[j]);
            }
            let akk = dt * tb.a[k][k];
            {
                let io = &mut ws.io[k];
                for (cell, (vb, ib)) in ws.v.chunks_exact_mut(m).zip(io.chunks_exact_mut(m)).enumerate() {
                    for c in 0..nc {
                        let it = self.inv_tau[cell * nc + c];
                        let fac = 1.0 / (1.0 + akk * it);
                        for f in c * group..(c + 1) * group {
                            vb[f] *= fac;
                            ib[f] = -vb[f] * it;
                        }
                    }
                }
            }
            let odd_ready = if needs_central(k) || needs_explicit(k) {
                self.coef.scale_odd(layout, &ws.v, &mut ws.g);
                self.rec.reconstruct(&ws.g, m, group, Some(&self.coef.diffusive), false, &mut ws.vg);
                true
            } else {
                false
            };
            // even stage: central flux with implicit weights, then relaxation
            ws.u.copy_from_slice(&state.even);
            for j in 0..k {
                let (wa, wi) = (dt * tb.at[k][j], dt * tb.a[k][j]);
                axpy2(&mut ws.u, wa, &ws.xe[j], wi, &ws.ie[j]);
            }
            let ie = &mut ws.ie[k];
            ie.iter_mut().for_each(|x| *x = 0.0);
            if odd_ready && needs_central(k) {
                self.transport.add_even_central(&self.coef, &ws.g, &ws.vg, ie);
                if akk != 0.0 {
                    for (u, c) in ws.u.iter_mut().zip(ie.iter()) {
                        *u += akk * c;
                    }
                }
            }
            moments_into(&ws.u, layout, &self.set, &mut ws.dens);
            for (cell, (ub, ib)) in ws.u.chunks_exact_mut(m).zip(ie.chunks_exact_mut(m)).enumerate() {
                for c in 0..nc {
                    let it = self.inv_tau[cell * nc + c];
                    let rho = ws.dens[cell * nc + c];
                    let fac = 1.0 / (1.0 + akk * it);
                    for f in c * group..(c + 1) * group {
                        let unew = rho + (ub[f] - rho) * fac;
                        ib[f] += (rho - unew) * it;
                        ub[f] = unew;
                    }
                }
            }
            // urban stage
            ws.w.copy_from_slice(&urban.values);
            for j in 0..k {
                let wa = dt * tb.at[k][j];
                if wa != 0.0 {
                    for (w, x) in ws.w.iter_mut().zip(&ws.xw[j]) {
                        *w += wa * x;
                    }
                }
            }
            if !needs_explicit(k) {
                continue;
            }
            // explicit evaluations at this stage
            for (t, (d, w)) in ws.totals.iter_mut().zip(ws.dens.iter().zip(&ws.w)) {
                *t = d + w;
            }
            forces_into(&self.fields, &ws.totals, &mut ws.phi_i, &mut ws.phi_e);
            stats.positivity_fallbacks +=
                self.rec
                    .reconstruct(&ws.u, m, group, None, self.options.positivity_guard, &mut ws.ug);
            if !odd_ready {
                self.coef.scale_odd(layout, &ws.v, &mut ws.g);
                self.rec.reconstruct(&ws.g, m, group, Some(&self.coef.diffusive), false, &mut ws.vg);
            }
            let (xe, xo) = (&mut ws.xe[k], &mut ws.xo[k]);
            epidemic_even_into(&ws.u, layout, &self.fields, &ws.phi_i, &ws.phi_e, xe);
            epidemic_odd_into(&ws.v, layout, &self.fields, self.options.flux_form, &ws.phi_i, &ws.phi_e, xo);
            self.transport.add_explicit(&self.coef, &ws.u, &ws.ug, &ws.g, &ws.vg, xe, xo);
            let xw = &mut ws.xw[k];
            urban_reaction_into(&ws.w, &self.fields, &ws.phi_i, &ws.phi_e, xw);
            match self.options.urban_argument {
                UrbanDiffusionArgument::Urban => self.transport.add_urban_diffusion(&ws.w, &self.fields.du, nc, xw),
                UrbanDiffusionArgument::Commuter => self.transport.add_urban_diffusion(&ws.dens, &self.fields.du, nc, xw),
            }
        }

        if tb.gsa_check() {
            // the update coincides with the last stage, plus the explicit tail if any
            let last = s - 1;
            let wb = dt * tb.bt[last];
            state.even.copy_from_slice(&ws.u);
            state.odd.copy_from_slice(&ws.v);
            urban.values.copy_from_slice(&ws.w);
            if wb != 0.0 {
                axpy2(&mut state.even, wb, &ws.xe[last], 0.0, &ws.ie[last]);
                axpy2(&mut state.odd, wb, &ws.xo[last], 0.0, &ws.io[last]);
                for (w, x) in urban.values.iter_mut().zip(&ws.xw[last]) {
                    *w += wb * x;
                }
            }
        } else {
            for j in 0..s {
                let (wa, wi) = (dt * tb.bt[j], dt * tb.b[j]);
                axpy2(&mut state.even, wa, &ws.xe[j], wi, &ws.ie[j]);
                axpy2(&mut state.odd, wa, &ws.xo[j], wi, &ws.io[j]);
                if wa != 0.0 {
                    for (w, x) in urban.values.iter_mut().zip(&ws.xw[j]) {
                        *w += wa * x;
                    }
                }
            }
        }
        let finite = state.even.iter().chain(&state.odd).chain(&urban.values).all(|x| x.is_finite());
        if !finite {
            return Err(Error::StepFailure {
                time,
                msg: "non-finite value after step".into(),
            });
        }
        Ok(stats)
    }
}

#[inline]
fn axpy2(y: &mut [f64], a: f64, x: &[f64], b: f64, z: &[f64]) {
    match (a != 0.0, b != 0.0) {
        (true, true) => y.iter_mut().zip(x.iter().zip(z)).for_each(|(y, (x, z))| *y += a * x + b * z),
        (true, false) => y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x),
        (false, true) => y.iter_mut().zip(z).for_each(|(y, z)| *y += b * z),
        (false, false) => {}
    }
}

/// One step of the kinetic system. Convenience wrapper that rebuilds the
/// operators; use [`KineticSystem::step`] in loops.
#[allow(clippy::too_many_arguments)]
pub fn imex_step(
    state: &KineticState,
    urban: &UrbanState,
    mesh: &Mesh,
    set: &OrdinateSet,
    fields: &ParameterFields,
    dt: f64,
    tableau: &ImexTableau,
    options: SchemeOptions,
) -> Result<(KineticState, UrbanState)> {
    let sys = KineticSystem::new(mesh.clone(), set.clone(), fields.clone(), options, tableau.clone())?;
    let mut ws = Workspace::default();
    let mut s = state.clone();
    let mut u = urban.clone();
    sys.step(&mut ws, &mut s, &mut u, dt, 0.0)?;
    Ok((s, u))
}

/// Macroscopic state of the reaction-diffusion limit.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    /// Commuter densities `[cell][compartment]`.
    pub commuters: Vec<f64>,
    /// Urban densities `[cell][compartment]`.
    pub urban: Vec<f64>,
}

/// Reaction-diffusion limit of a kinetic system: commuters diffuse with
/// `D = lambda^2 tau / 2` through the limit operator, urban populations as
/// in the kinetic system. Integrated with the explicit tableau only.
#[derive(Debug, Clone)]
pub struct DiffusionSystem {
    pub mesh: Mesh,
    pub set: OrdinateSet,
    pub fields: ParameterFields,
    pub options: SchemeOptions,
    pub tableau: ImexTableau,
    /// Commuter diffusion, `[cell][compartment]`.
    pub diffusion: Vec<f64>,
    rec: Reconstruction,
    transport: Transport,
    coef: TransportCoefficients,
}

impl DiffusionSystem {
    pub fn new(mesh: Mesh, set: OrdinateSet, fields: ParameterFields, diffusion: Vec<f64>, options: SchemeOptions, tableau: ImexTableau) -> Result<Self> {
        fields.validate()?;
        tableau.validate()?;
        let nc = fields.kind.count();
        if diffusion.len() != mesh.n_cells() * nc {
            return Err(Error::Argument("diffusion field has the wrong length".into()));
        }
        if diffusion.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::Domain("diffusion coefficients must be finite and non-negative".into()));
        }
        let rec = Reconstruction::new(&mesh);
        let transport = Transport::new(&mesh, &set, nc);
        let coef = TransportCoefficients::diffusion_limit(&mesh, &diffusion, nc);
        Ok(Self {
            mesh,
            set,
            fields,
            options,
            tableau,
            diffusion,
            rec,
            transport,
            coef,
        })
    }

    /// The diffusion limit of a kinetic system with uniform `tau`.
    pub fn limit_of(sys: &KineticSystem) -> Result<Self> {
        let diffusion: Vec<f64> = sys
            .fields
            .lambda
            .iter()
            .zip(&sys.fields.tau)
            .map(|(l, t)| if t.is_finite() { 0.5 * l * l * t } else { 0.0 })
            .collect();
        Self::new(sys.mesh.clone(), sys.set.clone(), sys.fields.clone(), diffusion, sys.options, sys.tableau.clone())
    }

    /// Same step rule as [`KineticSystem::cfl_dt`] with the limiting speeds `2 D / h`.
    pub fn cfl_dt(&self, cfl: f64, dt_max: f64, current: f64, end: f64) -> Result<f64> {
        let mut dt = stable_dt(&self.mesh, &self.coef, &self.fields.du, self.fields.kind.count(), cfl);
        if !dt.is_finite() {
            dt = cfl * (end - current);
        }
        let dt = dt.min(dt_max).min(end - current);
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("no time left to step (t = {current}, end = {end})")));
        }
        Ok(dt)
    }

    fn rates(&self, y: &MacroState, out_c: &mut [f64], out_u: &mut [f64]) -> usize {
        let nc = self.fields.kind.count();
        let n = self.mesh.n_cells();
        let totals: Vec<f64> = y.commuters.iter().zip(&y.urban).map(|(a, b)| a + b).collect();
        let mut phi_i = vec![0.0; n];
        let mut phi_e = vec![0.0; n];
        forces_into(&self.fields, &totals, &mut phi_i, &mut phi_e);
        urban_reaction_into(&y.commuters, &self.fields, &phi_i, &phi_e, out_c);
        let fb = self
            .transport
            .add_diffusion_limit(&self.rec, &self.coef, &y.commuters, self.options.positivity_guard, out_c);
        urban_reaction_into(&y.urban, &self.fields, &phi_i, &phi_e, out_u);
        let arg = match self.options.urban_argument {
            UrbanDiffusionArgument::Urban => &y.urban,
            UrbanDiffusionArgument::Commuter => &y.commuters,
        };
        self.transport.add_urban_diffusion(arg, &self.fields.du, nc, out_u);
        fb
    }

    /// One explicit Runge-Kutta step with the explicit tableau.
    pub fn explicit_rd_step(&self, y: &mut MacroState, dt: f64) -> Result<StepStats> {
        let nw = self.mesh.n_cells() * self.fields.kind.count();
        if y.commuters.len() != nw || y.urban.len() != nw {
            return Err(Error::Argument("macroscopic state does not match the system".into()));
        }
        let tb = &self.tableau;
        let s = tb.stages();
        let mut kc = vec![vec![0.0; nw]; s];
        let mut ku = vec![vec![0.0; nw]; s];
        let mut stats = StepStats::default();
        for k in 0..s {
            let mut st = y.clone();
            for j in 0..k {
                let w = dt * tb.at[k][j];
                if w != 0.0 {
                    st.commuters.iter_mut().zip(&kc[j]).for_each(|(a, b)| *a += w * b);
                    st.urban.iter_mut().zip(&ku[j]).for_each(|(a, b)| *a += w * b);
                }
            }
            stats.positivity_fallbacks += self.rates(&st, &mut kc[k], &mut ku[k]);
        }
        for j in 0..s {
            let w = dt * tb.bt[j];
            if w != 0.0 {
                y.commuters.iter_mut().zip(&kc[j]).for_each(|(a, b)| *a += w * b);
                y.urban.iter_mut().zip(&ku[j]).for_each(|(a, b)| *a += w * b);
            }
        }
        if y.commuters.iter().chain(&y.urban).any(|x| !x.is_finite()) {
            return Err(Error::StepFailure {
                time: f64::NAN,
                msg: "non-finite value in reaction-diffusion step".into(),
            });
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{rectangle_mesh, refine_triangles};
    use crate::model::ModelKind;
    use proptest::prelude::*;

    #[test]
    fn default_pair_is_gsa_and_second_order() {
        let t = ImexTableau::ars222();
        t.validate().unwrap();
        assert!(t.gsa_check());
        for r in t.order2_residuals() {
            assert!(r.abs() < 1e-15, "{r}");
        }
        assert!(ImexTableau::euler().gsa_check());
    }

    #[test]
    fn implicit_midpoint_is_not_gsa() {
        let t = ImexTableau {
            a: vec![vec![0.5]],
            b: vec![1.0],
            c: vec![0.5],
            at: vec![vec![0.0]],
            bt: vec![1.0],
            ct: vec![0.0],
        };
        assert!(!t.gsa_check());
    }

    fn sir_system(n: usize, tau: f64, lambda: f64) -> KineticSystem {
        let mesh = rectangle_mesh(0.0, 1.0, 0.0, 1.0, n, n).unwrap();
        let set = OrdinateSet::new(2).unwrap();
        let mut f = ParameterFields::uniform(ModelKind::Sir, mesh.n_cells());
        f.beta_i = vec![3.0; mesh.n_cells()];
        f.gamma_i = vec![1.0; mesh.n_cells()];
        f.tau = vec![tau; mesh.n_cells() * 3];
        f.lambda = vec![lambda; mesh.n_cells() * 3];
        KineticSystem::new(mesh, set, f, SchemeOptions::default(), ImexTableau::ars222()).unwrap()
    }

    #[test]
    fn homogeneous_state_follows_the_ode() {
        // uniform data: transport vanishes, the density moment follows the
        // explicit tableau applied to the SIR system
        let sys = sir_system(3, 1e-3, 2.0);
        let n = sys.n_cells();
        let dens: Vec<f64> = (0..n * 3).map(|i| [0.9, 0.1, 0.0][i % 3]).collect();
        let mut st = KineticState::equilibrium(sys.layout(), &dens);
        let mut ur = UrbanState::zeros(3, n);
        let mut ws = Workspace::default();
        let dt = 1e-3;
        let mut y = [0.9, 0.1, 0.0];
        let tb = ImexTableau::ars222();
        let f = |y: &[f64; 3]| [-3.0 * y[0] * y[1], 3.0 * y[0] * y[1] - y[1], y[1]];
        for _ in 0..50 {
            sys.step(&mut ws, &mut st, &mut ur, dt, 0.0).unwrap();
            let k1 = f(&y);
            let y2: [f64; 3] = std::array::from_fn(|c| y[c] + dt * tb.at[1][0] * k1[c]);
            let k2 = f(&y2);
            y = std::array::from_fn(|c| y[c] + dt * (tb.bt[0] * k1[c] + tb.bt[1] * k2[c]));
        }
        let d = st.densities(&sys.set);
        for k in 0..n {
            for c in 0..3 {
                assert!((d[k * 3 + c] - y[c]).abs() < 1e-12, "{} vs {}", d[k * 3 + c], y[c]);
            }
        }
    }

    #[test]
    fn cfl_dt_reference_value() {
        let mesh = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let h = mesh.cells.iter().map(|c| c.h()).fold(f64::INFINITY, f64::min);
        let set = OrdinateSet::new(2).unwrap();
        let f = ParameterFields::uniform(ModelKind::Sir, mesh.n_cells());
        let sys = KineticSystem::new(mesh, set, f, SchemeOptions::default(), ImexTableau::ars222()).unwrap();
        let dt = sys.cfl_dt(0.5, 10.0, 0.0, 100.0).unwrap();
        assert!((dt - 0.5 * h).abs() < 1e-15);
    }

    #[test]
    fn cfl_dt_without_speeds_uses_dt_max() {
        let mesh = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let set = OrdinateSet::new(1).unwrap();
        let mut f = ParameterFields::uniform(ModelKind::Sir, mesh.n_cells());
        f.lambda = vec![0.0; mesh.n_cells() * 3];
        let sys = KineticSystem::new(mesh, set, f, SchemeOptions::default(), ImexTableau::ars222()).unwrap();
        assert_eq!(sys.cfl_dt(0.9, 0.25, 0.0, 10.0).unwrap(), 0.25);
        assert!((sys.cfl_dt(0.9, 100.0, 0.0, 10.0).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn pure_relaxation_matches_exact_factor() {
        // no transport, no epidemic: each stage relaxation is exact, odd parity
        // decays by the stage-product of 1/(1 + dt a_kk / tau)
        let mesh = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let set = OrdinateSet::new(2).unwrap();
        let mut f = ParameterFields::uniform(ModelKind::Sir, mesh.n_cells());
        f.lambda = vec![0.0; mesh.n_cells() * 3];
        f.tau = vec![0.5; mesh.n_cells() * 3];
        let sys = KineticSystem::new(mesh, set, f, SchemeOptions::default(), ImexTableau::ars222()).unwrap();
        let mut st = KineticState::zeros(sys.layout(), sys.n_cells());
        st.odd.iter_mut().for_each(|x| *x = 1.0);
        st.even.iter_mut().for_each(|x| *x = 0.3);
        let mut ur = UrbanState::zeros(3, sys.n_cells());
        let mut ws = Workspace::default();
        let dt = 0.1;
        sys.step(&mut ws, &mut st, &mut ur, dt, 0.0).unwrap();
        // the same relaxation ODE integrated by the implicit tableau alone
        let t = ImexTableau::ars222();
        let lam = -1.0 / 0.5;
        let mut y = [1.0f64; 3];
        for k in 0..3 {
            let mut rhs = 1.0;
            for j in 0..k {
                rhs += dt * t.a[k][j] * lam * y[j];
            }
            y[k] = rhs / (1.0 - dt * t.a[k][k] * lam);
        }
        for v in &st.odd {
            assert!((v - y[2]).abs() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn step_conserves_population(seed in 0u64..500, tau_exp in -6i32..1) {
            let mesh = refine_triangles(&rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap(), 2).unwrap();
            let set = OrdinateSet::new(2).unwrap();
            let nc = 3;
            let mut f = ParameterFields::uniform(ModelKind::Sir, mesh.n_cells());
            f.beta_i = vec![2.0; mesh.n_cells()];
            f.gamma_i = vec![0.5; mesh.n_cells()];
            f.tau = vec![10f64.powi(tau_exp); mesh.n_cells() * nc];
            f.du = vec![1e-3; mesh.n_cells() * nc];
            let sys = KineticSystem::new(mesh, set, f, SchemeOptions::default(), ImexTableau::ars222()).unwrap();
            let mut x = seed as f64 * 0.31;
            let dens: Vec<f64> = (0..sys.n_cells() * nc).map(|_| { x = (x * 3.7 + 0.13).fract(); x }).collect();
            let mut st = KineticState::equilibrium(sys.layout(), &dens);
            let mut ur = UrbanState { compartments: nc, values: dens.iter().map(|d| 0.5 * d).collect() };
            let area: Vec<f64> = sys.mesh.cells.iter().map(|c| c.area).collect();
            let total = |st: &KineticState, ur: &UrbanState| {
                let d = st.densities(&sys.set);
                (0..sys.n_cells()).map(|k| area[k] * (0..nc).map(|c| d[k * nc + c] + ur.get(k, c)).sum::<f64>()).sum::<f64>()
            };
            let before = total(&st, &ur);
            let mut ws = Workspace::default();
            for _ in 0..3 {
                let dt = sys.cfl_dt(0.5, 0.05, 0.0, 1.0).unwrap();
                sys.step(&mut ws, &mut st, &mut ur, dt, 0.0).unwrap();
            }
            let after = total(&st, &ur);
            prop_assert!(((after - before) / before).abs() <= 1e-12);
        }
    }
}
