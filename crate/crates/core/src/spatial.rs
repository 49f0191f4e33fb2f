//! Finite-volume transport on the mesh.
//!
//! Cell values are reconstructed as linear polynomials with a second-order
//! CWENO rule: a least-squares central stencil over all edge neighbours
//! blended with one-sided fits built from pairs of adjacent neighbours. Edge
//! fluxes are local Lax-Friedrichs fluxes of each `(r, j)` parity pair,
//! evaluated at the edge midpoint. Walls use a mirror ghost state (even
//! parities copied, odd parities negated), which makes the mass flux vanish.
//!
//! Dissipation speeds depend on the ratio `r = lambda * tau / h` of mean free
//! path to cell size. Both are plain LLF (`lambda`) for `r >= 1`. Below that
//! the odd parities use `lambda * r` (`2 D / h`) and the even parities
//! `lambda * r^6`, so the even flux tends to the central one as `tau -> 0`.
//! Odd parities are reconstructed with the unlimited central stencil in the
//! diffusive regime, where they carry the smooth Fickian flux.
//!
//! Where `lambda` varies in space the odd variable is carried as
//! `g = j / lambda`: the even flux is `a (lambda g)` averaged over the two
//! sides, each cell's odd update uses its own `lambda^2`, and odd dissipation
//! acts on jumps of `g`. With uniform `lambda` this is the plain LLF scheme.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::model::{KineticState, ParameterFields, StateLayout, UrbanDiffusionArgument, UrbanState};
use crate::ordinates::{OrdinateSet, Parity, VelocityNode};

const WENO_EPS: f64 = 1e-14;
const MAX_SIDED: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Sided {
    a: usize,
    b: usize,
    ma: [f64; 2],
    mb: [f64; 2],
}

/// Precomputed reconstruction stencils.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    nb_start: Vec<usize>,
    nb: Vec<usize>,
    w_central: Vec<[f64; 2]>,
    sided_start: Vec<usize>,
    sided: Vec<Sided>,
    mid_start: Vec<usize>,
    mid_offsets: Vec<[f64; 2]>,
    area: Vec<f64>,
    /// Cells without a usable central stencil; their gradient is always zero.
    pub deficient: Vec<usize>,
}

impl Reconstruction {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.n_cells();
        let mut nb_start = Vec::with_capacity(n + 1);
        let mut nb = Vec::new();
        let mut w_central = Vec::new();
        let mut sided_start = Vec::with_capacity(n + 1);
        let mut sided = Vec::new();
        let mut mid_start = Vec::with_capacity(n + 1);
        let mut mid_offsets = Vec::new();
        let mut deficient = Vec::new();
        for (k, cell) in mesh.cells.iter().enumerate() {
            nb_start.push(nb.len());
            sided_start.push(sided.len());
            mid_start.push(mid_offsets.len());
            let c0 = cell.centroid;
            for &e in &cell.edges {
                let m = mesh.edges[e].midpoint;
                mid_offsets.push([m[0] - c0[0], m[1] - c0[1]]);
            }
            // cells with fewer than three neighbours (walls) borrow the second ring
            let direct = &cell.neighbors;
            let mut stencil: Vec<usize> = direct.clone();
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            if direct.len() >= 3 {
                let kk = direct.len();
                pairs.extend((0..kk).map(|t| (direct[t], direct[(t + 1) % kk])));
            } else {
                if direct.len() == 2 {
                    pairs.push((direct[0], direct[1]));
                }
                for &a in direct {
                    for &b in &mesh.cells[a].neighbors {
                        if b != k && !direct.contains(&b) {
                            if !stencil.contains(&b) {
                                stencil.push(b);
                            }
                            pairs.push((a, b));
                        }
                    }
                }
            }
            let off = |j: usize| {
                let c = mesh.cells[j].centroid;
                [c[0] - c0[0], c[1] - c0[1]]
            };
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for &j in &stencil {
                let v = off(j);
                sxx += v[0] * v[0];
                sxy += v[0] * v[1];
                syy += v[1] * v[1];
            }
            let det = sxx * syy - sxy * sxy;
            let tr = sxx + syy;
            if stencil.len() < 2 || det <= 1e-12 * tr * tr {
                deficient.push(k);
                continue;
            }
            for &j in &stencil {
                let v = off(j);
                nb.push(j);
                w_central.push([(syy * v[0] - sxy * v[1]) / det, (sxx * v[1] - sxy * v[0]) / det]);
            }
            for (ja, jb) in pairs {
                let da = off(ja);
                let db = off(jb);
                let det2 = da[0] * db[1] - da[1] * db[0];
                let scale = (da[0] * da[0] + da[1] * da[1]) * (db[0] * db[0] + db[1] * db[1]);
                if det2 * det2 <= 1e-12 * scale {
                    continue;
                }
                sided.push(Sided {
                    a: ja,
                    b: jb,
                    ma: [db[1] / det2, -db[0] / det2],
                    mb: [-da[1] / det2, da[0] / det2],
                });
            }
        }
        nb_start.push(nb.len());
        sided_start.push(sided.len());
        mid_start.push(mid_offsets.len());
        Self {
            nb_start,
            nb,
            w_central,
            sided_start,
            sided,
            mid_start,
            mid_offsets,
            area: mesh.cells.iter().map(|c| c.area).collect(),
            deficient,
        }
    }

    /// Gradients of all `m` fields of cell `k` into `gk` (`[m][2]`).
    #[allow(clippy::too_many_arguments)]
    fn cell_gradients(&self, values: &[f64], m: usize, k: usize, cweno: &[bool], guard: bool, gk: &mut [f64], gs: &mut [f64]) -> usize {
        let u0 = &values[k * m..(k + 1) * m];
        gk.iter_mut().for_each(|g| *g = 0.0);
        let (s, e) = (self.nb_start[k], self.nb_start[k + 1]);
        if s == e {
            return 0;
        }
        for t in s..e {
            let w = self.w_central[t];
            let nv = &values[self.nb[t] * m..(self.nb[t] + 1) * m];
            for ((g, a), b) in gk.chunks_exact_mut(2).zip(nv).zip(u0) {
                let du = a - b;
                g[0] += w[0] * du;
                g[1] += w[1] * du;
            }
        }
        let (ss, se) = (self.sided_start[k], self.sided_start[k + 1]);
        if ss != se && cweno.iter().any(|&c| c) {
            let ns = (se - ss).min(MAX_SIDED);
            let dk = 0.5 / ns as f64;
            let area = self.area[k];
            for (t, st) in self.sided[ss..ss + ns].iter().enumerate() {
                let va = &values[st.a * m..(st.a + 1) * m];
                let vb = &values[st.b * m..(st.b + 1) * m];
                let out = &mut gs[t * 2 * m..(t + 1) * 2 * m];
                for (f, g) in out.chunks_exact_mut(2).enumerate() {
                    let da = va[f] - u0[f];
                    let db = vb[f] - u0[f];
                    g[0] = st.ma[0] * da + st.mb[0] * db;
                    g[1] = st.ma[1] * da + st.mb[1] * db;
                }
            }
            let ind = |x: f64, y: f64| (x * x + y * y) * area;
            for f in 0..m {
                if !cweno[f] {
                    continue;
                }
                let mut g0 = [gk[2 * f], gk[2 * f + 1]];
                for t in 0..ns {
                    g0[0] -= dk * gs[t * 2 * m + 2 * f];
                    g0[1] -= dk * gs[t * 2 * m + 2 * f + 1];
                }
                g0[0] /= 0.5;
                g0[1] /= 0.5;
                let q = WENO_EPS + ind(g0[0], g0[1]);
                let w0 = 0.5 / (q * q);
                let mut wsum = w0;
                let mut acc = [w0 * g0[0], w0 * g0[1]];
                for t in 0..ns {
                    let (x, y) = (gs[t * 2 * m + 2 * f], gs[t * 2 * m + 2 * f + 1]);
                    let q = WENO_EPS + ind(x, y);
                    let w = dk / (q * q);
                    wsum += w;
                    acc[0] += w * x;
                    acc[1] += w * y;
                }
                gk[2 * f] = acc[0] / wsum;
                gk[2 * f + 1] = acc[1] / wsum;
            }
        }
        let mut count = 0;
        if guard {
            for (f, g) in gk.chunks_exact_mut(2).enumerate() {
                if u0[f] >= 0.0 && (g[0] != 0.0 || g[1] != 0.0) && self.extrapolates_negative(k, u0[f], [g[0], g[1]]) {
                    g[0] = 0.0;
                    g[1] = 0.0;
                    count += 1;
                }
            }
        }
        count
    }

    #[inline]
    fn extrapolates_negative(&self, k: usize, u0: f64, g: [f64; 2]) -> bool {
        self.mid_offsets[self.mid_start[k]..self.mid_start[k + 1]]
            .iter()
            .any(|o| u0 + g[0] * o[0] + g[1] * o[1] < 0.0)
    }

    /// Gradients of every field of a `[cell][m]` array into `grads` (`[cell][m][2]`).
    ///
    /// Field `f` of cell `k` uses the linear rule when `linear[k * (m / group) + f / group]`
    /// is set. With `guard`, a field with non-negative mean whose extrapolated
    /// edge value would be negative falls back to a zero gradient; the number
    /// of such fallbacks is returned.
    pub fn reconstruct(&self, values: &[f64], m: usize, group: usize, linear: Option<&[bool]>, guard: bool, grads: &mut [f64]) -> usize {
        let ng = m / group;
        grads
            .par_chunks_mut(2 * m)
            .enumerate()
            .map_init(
                || (vec![true; m], vec![0.0; 2 * m * MAX_SIDED]),
                |(cweno, gs), (k, gk)| {
                    if let Some(l) = linear {
                        for (f, c) in cweno.iter_mut().enumerate() {
                            *c = !l[k * ng + f / group];
                        }
                    }
                    self.cell_gradients(values, m, k, cweno, guard, gk, gs)
                },
            )
            .sum()
    }
}

/// Linear reconstruction of one scalar cell field.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPolynomials {
    pub mean: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
}

impl CellPolynomials {
    pub fn eval(&self, mesh: &Mesh, k: usize, x: f64, y: f64) -> f64 {
        let c = mesh.cells[k].centroid;
        self.mean[k] + self.grad[k][0] * (x - c[0]) + self.grad[k][1] * (y - c[1])
    }
}

/// CWENO reconstruction of a scalar field, without positivity guard.
pub fn cweno_reconstruct(mesh: &Mesh, values: &[f64]) -> Result<CellPolynomials> {
    if values.len() != mesh.n_cells() {
        return Err(Error::Argument(format!("{} values for {} cells", values.len(), mesh.n_cells())));
    }
    let rec = Reconstruction::new(mesh);
    let mut g = vec![0.0; 2 * values.len()];
    rec.reconstruct(values, 1, 1, None, false, &mut g);
    Ok(CellPolynomials {
        mean: values.to_vec(),
        grad: g.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
    })
}

/// One even/odd parity pair `(r, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParityPair {
    pub r: f64,
    pub j: f64,
}

/// Local Lax-Friedrichs flux of the pair along direction `node`/`parity`
/// through a face with unit normal `normal`.
///
/// Physical flux `(a j, lambda^2 a r)` with `a = d . n`; dissipation speed
/// `lambda (|xi n_x| + |eta n_y|)`.
pub fn llf_flux(wl: ParityPair, wr: ParityPair, normal: [f64; 2], node: &VelocityNode, parity: Parity, lambda: f64) -> Result<ParityPair> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("speed must be finite and non-negative, got {lambda}")));
    }
    let nn = normal[0].hypot(normal[1]);
    if (nn - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!("normal has length {nn}")));
    }
    let d = node.direction(parity);
    let a = d[0] * normal[0] + d[1] * normal[1];
    let s = lambda * ((node.xi * normal[0]).abs() + (node.eta * normal[1]).abs());
    let l2 = lambda * lambda;
    Ok(ParityPair {
        r: 0.5 * a * (wl.j + wr.j) - 0.5 * s * (wr.r - wl.r),
        j: 0.5 * a * l2 * (wl.r + wr.r) - 0.5 * s * (wr.j - wl.j),
    })
}

/// Per-cell, per-compartment speeds derived from the parameter fields.
#[derive(Debug, Clone)]
pub struct TransportCoefficients {
    pub lambda_sq: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `1 / lambda`, zero where `lambda` vanishes.
    pub inv_lambda: Vec<f64>,
    /// Dissipation speed `lambda * min(1, lambda * tau / h)` of the odd
    /// parities; also the stable-step speed.
    pub lambda_eff: Vec<f64>,
    /// Dissipation speed of the even parities, [`even_dissipation_speed`].
    pub even_eff: Vec<f64>,
    /// Odd parities use the unlimited central reconstruction.
    pub diffusive: Vec<bool>,
}

/// Effective dissipation speed of a compartment in a cell of size `h`.
#[inline]
pub fn effective_speed(lambda: f64, tau: f64, h: f64) -> f64 {
    let mfp = lambda * tau;
    if mfp < h {
        lambda * mfp / h
    } else {
        lambda
    }
}

/// `lambda * min(1, lambda * tau / h)^6`: vanishes in the diffusion limit,
/// where the even flux becomes the central one. A speed of order `1 / h`
/// acting on the `O(h^2)` jumps of a linear reconstruction on triangles would
/// leave a first-order flux error; the high power keeps the kinetic scheme
/// within `O(tau)` of the limit scheme.
#[inline]
pub fn even_dissipation_speed(lambda: f64, tau: f64, h: f64) -> f64 {
    let r = (lambda * tau / h).min(1.0);
    let r3 = r * r * r;
    lambda * r3 * r3
}

impl TransportCoefficients {
    pub fn new(mesh: &Mesh, fields: &ParameterFields) -> Self {
        let nc = fields.kind.count();
        let n = mesh.n_cells();
        let mut lambda_sq = vec![0.0; n * nc];
        let mut lambda_eff = vec![0.0; n * nc];
        let mut even_eff = vec![0.0; n * nc];
        let mut diffusive = vec![false; n * nc];
        for k in 0..n {
            let h = mesh.cells[k].h();
            for c in 0..nc {
                let l = fields.lambda[k * nc + c];
                let t = fields.tau[k * nc + c];
                lambda_sq[k * nc + c] = l * l;
                lambda_eff[k * nc + c] = effective_speed(l, t, h);
                even_eff[k * nc + c] = even_dissipation_speed(l, t, h);
                diffusive[k * nc + c] = l * t < h;
            }
        }
        Self::with_speeds(lambda_sq, lambda_eff, even_eff, diffusive)
    }

    /// Coefficients of the diffusion limit with coefficient `d = lambda^2 tau / 2`.
    pub fn diffusion_limit(mesh: &Mesh, d: &[f64], compartments: usize) -> Self {
        let n = mesh.n_cells();
        let mut lambda_sq = vec![0.0; n * compartments];
        let mut lambda_eff = vec![0.0; n * compartments];
        for k in 0..n {
            let h = mesh.cells[k].h();
            for c in 0..compartments {
                lambda_sq[k * compartments + c] = 2.0 * d[k * compartments + c];
                lambda_eff[k * compartments + c] = 2.0 * d[k * compartments + c] / h;
            }
        }
        Self::with_speeds(lambda_sq, lambda_eff, vec![0.0; n * compartments], vec![true; n * compartments])
    }

    /// `j / lambda` per parity value, zero where `lambda` vanishes.
    pub fn scale_odd(&self, layout: StateLayout, odd: &[f64], out: &mut [f64]) {
        let nc = layout.compartments;
        let g = 2 * layout.nodes;
        for (k, (o, x)) in out.chunks_exact_mut(nc * g).zip(odd.chunks_exact(nc * g)).enumerate() {
            for c in 0..nc {
                let il = self.inv_lambda[k * nc + c];
                for f in c * g..(c + 1) * g {
                    o[f] = x[f] * il;
                }
            }
        }
    }

    fn with_speeds(lambda_sq: Vec<f64>, lambda_eff: Vec<f64>, even_eff: Vec<f64>, diffusive: Vec<bool>) -> Self {
        let lambda: Vec<f64> = lambda_sq.iter().map(|l2| l2.sqrt()).collect();
        let inv_lambda = lambda.iter().map(|&l| if l > 0.0 { 1.0 / l } else { 0.0 }).collect();
        Self {
            lambda_sq,
            lambda,
            inv_lambda,
            lambda_eff,
            even_eff,
            diffusive,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct EdgeGeo {
    left: usize,
    right: usize,
    wl: f64,
    wr: f64,
    dl: [f64; 2],
    dr: [f64; 2],
    length: f64,
    dist: f64,
}

const WALL: usize = usize::MAX;

/// Values of all `m` fields of `cell` extrapolated by the offset `d`.
#[inline]
fn extrapolate(vals: &[f64], grads: &[f64], cell: usize, m: usize, d: [f64; 2], out: &mut [f64]) {
    let v = &vals[cell * m..(cell + 1) * m];
    let g = &grads[2 * cell * m..2 * (cell + 1) * m];
    for ((o, x), gk) in out.iter_mut().zip(v).zip(g.chunks_exact(2)) {
        *o = x + gk[0] * d[0] + gk[1] * d[1];
    }
}

/// Edge geometry and direction projections shared by all transport kernels.
#[derive(Debug, Clone)]
pub struct Transport {
    pub layout: StateLayout,
    edges: Vec<EdgeGeo>,
    /// `[edge][node] -> (a1, a2, |xi n_x| + |eta n_y|)`.
    proj: Vec<[f64; 3]>,
    weights: Vec<f64>,
    inv_area: Vec<f64>,
}

impl Transport {
    pub fn new(mesh: &Mesh, set: &OrdinateSet, compartments: usize) -> Self {
        let layout = StateLayout {
            compartments,
            nodes: set.len(),
        };
        let mut edges = Vec::with_capacity(mesh.edges.len());
        let mut proj = Vec::with_capacity(mesh.edges.len() * set.len());
        for e in &mesh.edges {
            let cl = mesh.cells[e.left].centroid;
            let (right, wr, dr, dist) = match e.right {
                Some(r) => {
                    let cr = mesh.cells[r].centroid;
                    (
                        r,
                        e.length / mesh.cells[r].area,
                        [e.midpoint[0] - cr[0], e.midpoint[1] - cr[1]],
                        (cr[0] - cl[0]).hypot(cr[1] - cl[1]),
                    )
                }
                None => (WALL, 0.0, [0.0, 0.0], 0.0),
            };
            edges.push(EdgeGeo {
                left: e.left,
                right,
                wl: e.length / mesh.cells[e.left].area,
                wr,
                dl: [e.midpoint[0] - cl[0], e.midpoint[1] - cl[1]],
                dr,
                length: e.length,
                dist,
            });
            let n = e.normal;
            for nd in &set.nodes {
                proj.push([
                    nd.xi * n[0] - nd.eta * n[1],
                    nd.xi * n[0] + nd.eta * n[1],
                    (nd.xi * n[0]).abs() + (nd.eta * n[1]).abs(),
                ]);
            }
        }
        Self {
            layout,
            edges,
            proj,
            weights: set.nodes.iter().map(|v| v.weight).collect(),
            inv_area: mesh.cells.iter().map(|c| 1.0 / c.area).collect(),
        }
    }

    /// Adds the central part of the even-parity flux divergence, built from
    /// reconstructed scaled odd values `j / lambda` (see
    /// [`TransportCoefficients::scale_odd`]), to `out` as a rate.
    pub fn add_even_central(&self, coef: &TransportCoefficients, odd: &[f64], odd_g: &[f64], out: &mut [f64]) {
        let m = self.layout.per_cell();
        let n = self.layout.nodes;
        let nc = self.layout.compartments;
        let mut vl = vec![0.0; m];
        let mut vr = vec![0.0; m];
        for (ei, e) in self.edges.iter().enumerate() {
            if e.right == WALL {
                continue;
            }
            extrapolate(odd, odd_g, e.left, m, e.dl, &mut vl);
            extrapolate(odd, odd_g, e.right, m, e.dr, &mut vr);
            let pr = &self.proj[ei * n..(ei + 1) * n];
            let (ol, or) = (e.left * m, e.right * m);
            for c in 0..nc {
                let (ll, lr) = (coef.lambda[e.left * nc + c], coef.lambda[e.right * nc + c]);
                for (i, pj) in pr.iter().enumerate() {
                    let f = (c * n + i) * 2;
                    for p in 0..2 {
                        let h = 0.5 * pj[p] * (ll * vl[f + p] + lr * vr[f + p]);
                        out[ol + f + p] -= e.wl * h;
                        out[or + f + p] += e.wr * h;
                    }
                }
            }
        }
    }

    /// Adds the even-parity dissipation and the full odd-parity flux
    /// divergence to `even_out` and `odd_out` as rates. `odd` holds scaled
    /// values `j / lambda`; the rates are for `j`.
    #[allow(clippy::too_many_arguments)]
    pub fn add_explicit(
        &self,
        coef: &TransportCoefficients,
        even: &[f64],
        even_g: &[f64],
        odd: &[f64],
        odd_g: &[f64],
        even_out: &mut [f64],
        odd_out: &mut [f64],
    ) {
        let m = self.layout.per_cell();
        let n = self.layout.nodes;
        let nc = self.layout.compartments;
        let (mut ul, mut ur, mut vl, mut vr) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for (ei, e) in self.edges.iter().enumerate() {
            let ol = e.left * m;
            let pr = &self.proj[ei * n..(ei + 1) * n];
            extrapolate(even, even_g, e.left, m, e.dl, &mut ul);
            extrapolate(odd, odd_g, e.left, m, e.dl, &mut vl);
            if e.right == WALL {
                // mirror state: r copied, j reversed
                for c in 0..nc {
                    let l2 = coef.lambda_sq[e.left * nc + c];
                    let se = coef.lambda_eff[e.left * nc + c] * coef.lambda[e.left * nc + c];
                    for (i, pj) in pr.iter().enumerate() {
                        let f = (c * n + i) * 2;
                        let s = se * pj[2];
                        for p in 0..2 {
                            let hv = pj[p] * l2 * ul[f + p] + s * vl[f + p];
                            odd_out[ol + f + p] -= e.wl * hv;
                        }
                    }
                }
                continue;
            }
            let or = e.right * m;
            extrapolate(even, even_g, e.right, m, e.dr, &mut ur);
            extrapolate(odd, odd_g, e.right, m, e.dr, &mut vr);
            for c in 0..nc {
                let (ql, qr) = (e.left * nc + c, e.right * nc + c);
                let (l2l, l2r) = (coef.lambda_sq[ql], coef.lambda_sq[qr]);
                let (ll, lr) = (coef.lambda[ql], coef.lambda[qr]);
                let se = coef.lambda_eff[ql].max(coef.lambda_eff[qr]);
                let su = coef.even_eff[ql].max(coef.even_eff[qr]);
                for (i, pj) in pr.iter().enumerate() {
                    let f = (c * n + i) * 2;
                    let (s, sv) = (su * pj[2], se * pj[2]);
                    for p in 0..2 {
                        let q = f + p;
                        let hu = -0.5 * s * (ur[q] - ul[q]);
                        // lambda^2 multiplies the gradient of r inside each
                        // cell; the jump is dissipated in j / lambda
                        let rc = 0.5 * pj[p] * (ul[q] + ur[q]);
                        let dg = 0.5 * sv * (vr[q] - vl[q]);
                        even_out[ol + q] -= e.wl * hu;
                        even_out[or + q] += e.wr * hu;
                        odd_out[ol + q] -= e.wl * (l2l * rc - ll * dg);
                        odd_out[or + q] += e.wr * (l2r * rc - lr * dg);
                    }
                }
            }
        }
    }

    /// Two-point diffusion `div(D grad u)` of a `[cell][compartment]` field,
    /// harmonic-mean coefficients, zero flux at walls. Adds rates to `out`.
    pub fn add_urban_diffusion(&self, u: &[f64], d: &[f64], nc: usize, out: &mut [f64]) {
        for e in &self.edges {
            if e.right == WALL {
                continue;
            }
            for c in 0..nc {
                let dl = d[e.left * nc + c];
                let dr = d[e.right * nc + c];
                if dl <= 0.0 || dr <= 0.0 {
                    continue;
                }
                let dh = 2.0 * dl * dr / (dl + dr);
                let q = dh * (u[e.right * nc + c] - u[e.left * nc + c]) / e.dist * e.length;
                out[e.left * nc + c] += q * self.inv_area[e.left];
                out[e.right * nc + c] -= q * self.inv_area[e.right];
            }
        }
    }

    /// Diffusion-limit operator of the commuter transport acting on
    /// densities `[cell][compartment]`, with `coef` from
    /// [`TransportCoefficients::diffusion_limit`]. Adds rates to `out`.
    ///
    /// This is the operator the kinetic scheme collapses to as `tau -> 0`
    /// at fixed `lambda^2 tau`: the odd parities equilibrate to the discrete
    /// directional derivatives of the density, which are then fed back
    /// through the central even flux; the even dissipation vanishes.
    pub fn add_diffusion_limit(&self, rec: &Reconstruction, coef: &TransportCoefficients, u: &[f64], guard: bool, out: &mut [f64]) -> usize {
        let nc = self.layout.compartments;
        let n = self.layout.nodes;
        let ncell = self.inv_area.len();
        let mut ug = vec![0.0; u.len() * 2];
        let fallbacks = rec.reconstruct(u, nc, 1, None, guard, &mut ug);
        let ext = |b: usize, g: &[f64], vals: &[f64], d: [f64; 2]| vals[b] + g[2 * b] * d[0] + g[2 * b + 1] * d[1];
        // limiting odd values, [cell][compartment][node][parity]
        let m = self.layout.per_cell();
        let mut v = vec![0.0; ncell * m];
        for (ei, e) in self.edges.iter().enumerate() {
            let pr = &self.proj[ei * n..(ei + 1) * n];
            for c in 0..nc {
                let ql = e.left * nc + c;
                let ul = ext(ql, &ug, u, e.dl);
                let l2l = coef.lambda_sq[ql];
                if e.right == WALL {
                    for (i, pj) in pr.iter().enumerate() {
                        for p in 0..2 {
                            let f = (c * n + i) * 2 + p;
                            v[e.left * m + f] -= e.wl * pj[p] * l2l * ul;
                        }
                    }
                    continue;
                }
                let qr = e.right * nc + c;
                let ur = ext(qr, &ug, u, e.dr);
                let l2r = coef.lambda_sq[qr];
                for (i, pj) in pr.iter().enumerate() {
                    for p in 0..2 {
                        let f = (c * n + i) * 2 + p;
                        let h = 0.5 * pj[p] * (ul + ur);
                        v[e.left * m + f] -= e.wl * l2l * h;
                        v[e.right * m + f] += e.wr * l2r * h;
                    }
                }
            }
        }
        let mut g = vec![0.0; v.len()];
        coef.scale_odd(self.layout, &v, &mut g);
        let mut vg = vec![0.0; v.len() * 2];
        rec.reconstruct(&g, m, 1, Some(&vec![true; v.len()]), false, &mut vg);
        let mut even_rate = vec![0.0; v.len()];
        self.add_even_central(coef, &g, &vg, &mut even_rate);
        for k in 0..ncell {
            for c in 0..nc {
                let mut s = 0.0;
                for i in 0..n {
                    let o = k * m + (c * n + i) * 2;
                    s += self.weights[i] * (even_rate[o] + even_rate[o + 1]);
                }
                out[k * nc + c] += 0.25 * s;
            }
        }
        fallbacks
    }

    /// Quadrature weights of the ordinate set.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Options of the spatial operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialOptions {
    pub positivity_guard: bool,
    pub urban_argument: UrbanDiffusionArgument,
}

impl Default for SpatialOptions {
    fn default() -> Self {
        Self {
            positivity_guard: true,
            urban_argument: UrbanDiffusionArgument::Urban,
        }
    }
}

/// Transport rates of all unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub even: Vec<f64>,
    pub odd: Vec<f64>,
    pub urban: Vec<f64>,
    pub positivity_fallbacks: usize,
}

/// Full transport residual: LLF flux divergence of the commuter parities and
/// urban diffusion. Sources are not included.
pub fn spatial_residual(
    mesh: &Mesh,
    set: &OrdinateSet,
    state: &KineticState,
    urban: &UrbanState,
    fields: &ParameterFields,
    opts: SpatialOptions,
) -> Result<Residual> {
    let nc = fields.kind.count();
    if state.layout.compartments != nc || state.layout.nodes != set.len() || state.n_cells != mesh.n_cells() {
        return Err(Error::Argument("state does not match mesh, model or ordinates".into()));
    }
    if urban.values.len() != nc * mesh.n_cells() || fields.n_cells() != mesh.n_cells() {
        return Err(Error::Argument("urban state or fields do not match the mesh".into()));
    }
    let rec = Reconstruction::new(mesh);
    let tr = Transport::new(mesh, set, nc);
    let coef = TransportCoefficients::new(mesh, fields);
    let m = state.layout.per_cell();
    let group = 2 * set.len();
    let mut eg = vec![0.0; state.even.len() * 2];
    let mut og = vec![0.0; state.odd.len() * 2];
    let fb = rec.reconstruct(&state.even, m, group, None, opts.positivity_guard, &mut eg);
    let mut scaled = vec![0.0; state.odd.len()];
    coef.scale_odd(state.layout, &state.odd, &mut scaled);
    rec.reconstruct(&scaled, m, group, Some(&coef.diffusive), false, &mut og);
    let mut even = vec![0.0; state.even.len()];
    let mut odd = vec![0.0; state.odd.len()];
    tr.add_even_central(&coef, &scaled, &og, &mut even);
    tr.add_explicit(&coef, &state.even, &eg, &scaled, &og, &mut even, &mut odd);
    let mut ur = vec![0.0; urban.values.len()];
    match opts.urban_argument {
        UrbanDiffusionArgument::Urban => tr.add_urban_diffusion(&urban.values, &fields.du, nc, &mut ur),
        UrbanDiffusionArgument::Commuter => tr.add_urban_diffusion(&state.densities(set), &fields.du, nc, &mut ur),
    }
    Ok(Residual {
        even,
        odd,
        urban: ur,
        positivity_fallbacks: fb,
    })
}

/// Two-point urban diffusion of a scalar field with per-cell coefficient.
pub fn urban_diffusion_div(mesh: &Mesh, field: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if field.len() != mesh.n_cells() || d.len() != mesh.n_cells() {
        return Err(Error::Argument("field length does not match the mesh".into()));
    }
    if d.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Domain("diffusion coefficient must be non-negative".into()));
    }
    let set = OrdinateSet::new(1)?;
    let tr = Transport::new(mesh, &set, 1);
    let mut out = vec![0.0; field.len()];
    tr.add_urban_diffusion(field, d, 1, &mut out);
    Ok(out)
}
