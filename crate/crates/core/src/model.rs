//! Compartments, parameter fields, states and the local epidemic terms.
//!
//! Kinetic unknowns are stored per cell as `[compartment][node][parity]`
//! blocks, split into an even array (`r`) and an odd array (`j`). Urban and
//! macroscopic densities are `[cell][compartment]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ordinates::OrdinateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Sir,
    Seir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compartment {
    S,
    E,
    I,
    R,
}

impl Compartment {
    pub fn name(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::E => "E",
            Compartment::I => "I",
            Compartment::R => "R",
        }
    }
}

impl ModelKind {
    pub fn compartments(self) -> &'static [Compartment] {
        match self {
            ModelKind::Sir => &[Compartment::S, Compartment::I, Compartment::R],
            ModelKind::Seir => &[Compartment::S, Compartment::E, Compartment::I, Compartment::R],
        }
    }

    pub fn count(self) -> usize {
        self.compartments().len()
    }

    pub fn index(self, c: Compartment) -> Option<usize> {
        self.compartments().iter().position(|&x| x == c)
    }

    pub(crate) fn ids(self) -> Ids {
        match self {
            ModelKind::Sir => Ids { s: 0, e: usize::MAX, i: 1 },
            ModelKind::Seir => Ids { s: 0, e: 1, i: 2 },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ids {
    pub s: usize,
    pub e: usize,
    pub i: usize,
}

/// Odd-parity source closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxSourceForm {
    /// Each compartment's odd source uses its own flux variable.
    #[default]
    Appendix,
    /// Sources obtained by taking the flux moment of the kinetic equations,
    /// transferring fluxes between compartments through speed ratios.
    Moment,
}

/// Which density the urban diffusion acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UrbanDiffusionArgument {
    #[default]
    Urban,
    Commuter,
}

/// Spatially varying parameters, one value per cell (per compartment where noted).
#[derive(Debug, Clone)]
pub struct ParameterFields {
    pub kind: ModelKind,
    pub beta_i: Vec<f64>,
    pub kappa_i: Vec<f64>,
    pub p: Vec<f64>,
    pub gamma_i: Vec<f64>,
    pub beta_e: Vec<f64>,
    pub kappa_e: Vec<f64>,
    pub sigma: Vec<f64>,
    pub zeta: Vec<f64>,
    pub a: Vec<f64>,
    pub gamma_e: Vec<f64>,
    /// Characteristic speed, `[cell][compartment]`.
    pub lambda: Vec<f64>,
    /// Relaxation time, `[cell][compartment]`; `f64::INFINITY` disables relaxation.
    pub tau: Vec<f64>,
    /// Urban diffusion coefficient, `[cell][compartment]`.
    pub du: Vec<f64>,
}

impl ParameterFields {
    /// Uniform fields with every rate zero, unit speed and relaxation time.
    pub fn uniform(kind: ModelKind, n_cells: usize) -> Self {
        let c = kind.count();
        let z = vec![0.0; n_cells];
        Self {
            kind,
            beta_i: z.clone(),
            kappa_i: z.clone(),
            p: vec![1.0; n_cells],
            gamma_i: z.clone(),
            beta_e: z.clone(),
            kappa_e: z.clone(),
            sigma: z.clone(),
            zeta: z.clone(),
            a: z.clone(),
            gamma_e: z,
            lambda: vec![1.0; n_cells * c],
            tau: vec![1.0; n_cells * c],
            du: vec![0.0; n_cells * c],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.beta_i.len()
    }

    pub fn set_lambda(&mut self, c: usize, values: &[f64]) {
        let nc = self.kind.count();
        for (k, v) in values.iter().enumerate() {
            self.lambda[k * nc + c] = *v;
        }
    }

    pub fn set_tau(&mut self, c: usize, values: &[f64]) {
        let nc = self.kind.count();
        for (k, v) in values.iter().enumerate() {
            self.tau[k * nc + c] = *v;
        }
    }

    pub fn set_du(&mut self, c: usize, values: &[f64]) {
        let nc = self.kind.count();
        for (k, v) in values.iter().enumerate() {
            self.du[k * nc + c] = *v;
        }
    }

    /// Checks lengths, signs and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_cells();
        let c = self.kind.count();
        let scalar: [(&str, &Vec<f64>); 10] = [
            ("beta_i", &self.beta_i),
            ("kappa_i", &self.kappa_i),
            ("p", &self.p),
            ("gamma_i", &self.gamma_i),
            ("beta_e", &self.beta_e),
            ("kappa_e", &self.kappa_e),
            ("sigma", &self.sigma),
            ("zeta", &self.zeta),
            ("a", &self.a),
            ("gamma_e", &self.gamma_e),
        ];
        for (name, v) in scalar {
            if v.len() != n {
                return Err(Error::Argument(format!("field {name} has {} values for {n} cells", v.len())));
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(Error::Domain(format!("field {name} has invalid value {x}")));
            }
        }
        for (name, v) in [("lambda", &self.lambda), ("tau", &self.tau), ("du", &self.du)] {
            if v.len() != n * c {
                return Err(Error::Argument(format!("field {name} has {} values, expected {}", v.len(), n * c)));
            }
        }
        if let Some(x) = self.lambda.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Domain(format!("speed {x} must be finite and non-negative")));
        }
        if let Some(x) = self.tau.iter().find(|x| x.is_nan() || **x <= 0.0) {
            return Err(Error::Domain(format!("relaxation time {x} must be positive")));
        }
        if let Some(x) = self.du.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Domain(format!("urban diffusion {x} must be finite and non-negative")));
        }
        if self.zeta.iter().chain(&self.sigma).any(|&x| x > 1.0) {
            return Err(Error::Domain("sigma and zeta must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Local rate constants of one cell.
    pub(crate) fn local(&self, k: usize) -> LocalRates {
        let zeta = self.zeta[k];
        LocalRates {
            beta_i: self.beta_i[k],
            kappa_i: self.kappa_i[k],
            p: self.p[k],
            gamma_i: self.gamma_i[k],
            beta_e: self.beta_e[k],
            kappa_e: self.kappa_e[k],
            zeta,
            a_tilde: self.sigma[k] * zeta * self.a[k],
            gamma_e_tilde: (1.0 - zeta) * self.gamma_e[k],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalRates {
    pub beta_i: f64,
    pub kappa_i: f64,
    pub p: f64,
    pub gamma_i: f64,
    pub beta_e: f64,
    pub kappa_e: f64,
    pub zeta: f64,
    pub a_tilde: f64,
    pub gamma_e_tilde: f64,
}

impl LocalRates {
    /// Per-unit-susceptible force of infection from infectious individuals.
    /// Negative undershoots count as zero; with large `kappa_i` the
    /// denominator would otherwise vanish.
    #[inline]
    pub fn phi_i(&self, i_t: f64) -> f64 {
        let i_t = i_t.max(0.0);
        let ip = if self.p == 1.0 { i_t } else { i_t.powf(self.p) };
        self.beta_i * ip / (1.0 + self.kappa_i * i_t)
    }

    /// Per-unit-susceptible force of infection from exposed individuals.
    #[inline]
    pub fn phi_e(&self, e_t: f64) -> f64 {
        let x = (1.0 - self.zeta) * e_t.max(0.0);
        self.beta_e * x / (1.0 + self.kappa_e * x)
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be finite and non-negative, got {v}")));
    }
    Ok(())
}

/// `beta g I^p / (1 + kappa I)`.
pub fn incidence_i(g: f64, i_t: f64, beta: f64, kappa: f64, p: f64) -> Result<f64> {
    for (n, v) in [("g", g), ("I_T", i_t), ("beta", beta), ("kappa", kappa), ("p", p)] {
        check_nonneg(n, v)?;
    }
    let ip = if p == 1.0 { i_t } else { i_t.powf(p) };
    Ok(beta * g * ip / (1.0 + kappa * i_t))
}

/// `beta_E g (1 - zeta) E / (1 + kappa_E (1 - zeta) E)`.
pub fn incidence_e(g: f64, e_t: f64, beta_e: f64, kappa_e: f64, zeta: f64) -> Result<f64> {
    for (n, v) in [("g", g), ("E_T", e_t), ("beta_E", beta_e), ("kappa_E", kappa_e), ("zeta", zeta)] {
        check_nonneg(n, v)?;
    }
    if zeta > 1.0 {
        return Err(Error::Domain(format!("zeta must be at most 1, got {zeta}")));
    }
    let x = (1.0 - zeta) * e_t;
    Ok(beta_e * g * x / (1.0 + kappa_e * x))
}

/// Index arithmetic for the kinetic arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub compartments: usize,
    pub nodes: usize,
}

impl StateLayout {
    /// Values per cell in each of the even and odd arrays.
    #[inline]
    pub fn per_cell(&self) -> usize {
        self.compartments * self.nodes * 2
    }

    /// Offset inside a cell block; parity 0 is `(xi, -eta)`, 1 is `(xi, eta)`.
    #[inline]
    pub fn offset(&self, c: usize, i: usize, parity: usize) -> usize {
        (c * self.nodes + i) * 2 + parity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    pub layout: StateLayout,
    pub n_cells: usize,
    /// `r` values.
    pub even: Vec<f64>,
    /// `j` values.
    pub odd: Vec<f64>,
}

impl KineticState {
    pub fn zeros(layout: StateLayout, n_cells: usize) -> Self {
        let n = layout.per_cell() * n_cells;
        Self {
            layout,
            n_cells,
            even: vec![0.0; n],
            odd: vec![0.0; n],
        }
    }

    /// Isotropic state `r = rho`, `j = 0` from densities `[cell][compartment]`.
    pub fn equilibrium(layout: StateLayout, densities: &[f64]) -> Self {
        let nc = layout.compartments;
        let n_cells = densities.len() / nc;
        let mut s = Self::zeros(layout, n_cells);
        let m = layout.per_cell();
        for k in 0..n_cells {
            for c in 0..nc {
                let rho = densities[k * nc + c];
                for i in 0..layout.nodes {
                    let o = k * m + layout.offset(c, i, 0);
                    s.even[o] = rho;
                    s.even[o + 1] = rho;
                }
            }
        }
        s
    }

    #[inline]
    pub fn r(&self, k: usize, c: usize, i: usize, parity: usize) -> f64 {
        self.even[k * self.layout.per_cell() + self.layout.offset(c, i, parity)]
    }

    #[inline]
    pub fn j(&self, k: usize, c: usize, i: usize, parity: usize) -> f64 {
        self.odd[k * self.layout.per_cell() + self.layout.offset(c, i, parity)]
    }

    /// Densities `[cell][compartment]`.
    pub fn densities(&self, set: &OrdinateSet) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cells * self.layout.compartments];
        moments_into(&self.even, self.layout, set, &mut out);
        out
    }

    /// First-parity flux moments `(1/2) sum_i w_i j_i^(1)`, `[cell][compartment]`.
    pub fn first_parity_flux(&self, set: &OrdinateSet) -> Vec<f64> {
        let nc = self.layout.compartments;
        let mut out = vec![0.0; self.n_cells * nc];
        for k in 0..self.n_cells {
            for c in 0..nc {
                out[k * nc + c] = 0.5 * set.nodes.iter().enumerate().map(|(i, nd)| nd.weight * self.j(k, c, i, 0)).sum::<f64>();
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.even.iter().chain(&self.odd).all(|v| v.is_finite())
    }
}

/// Densities `(1/4) sum_i w_i (r1 + r2)` written to `[cell][compartment]`.
pub(crate) fn moments_into(even: &[f64], layout: StateLayout, set: &OrdinateSet, out: &mut [f64]) {
    let m = layout.per_cell();
    let nc = layout.compartments;
    let n = layout.nodes;
    for (k, blk) in even.chunks_exact(m).enumerate() {
        for c in 0..nc {
            let mut s = 0.0;
            for (i, nd) in set.nodes.iter().enumerate() {
                let o = (c * n + i) * 2;
                s += nd.weight * (blk[o] + blk[o + 1]);
            }
            out[k * nc + c] = 0.25 * s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrbanState {
    pub compartments: usize,
    /// `[cell][compartment]`.
    pub values: Vec<f64>,
}

impl UrbanState {
    pub fn zeros(compartments: usize, n_cells: usize) -> Self {
        Self {
            compartments,
            values: vec![0.0; compartments * n_cells],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, c: usize) -> f64 {
        self.values[k * self.compartments + c]
    }
}

/// Commuter plus urban densities, `[cell][compartment]`.
pub fn total_densities(kinetic: &KineticState, urban: &UrbanState, set: &OrdinateSet) -> Vec<f64> {
    let mut t = kinetic.densities(set);
    for (a, b) in t.iter_mut().zip(&urban.values) {
        *a += b;
    }
    t
}

/// Local reaction rates of one group of compartment values sharing the
/// same forces of infection: `out[c] = d g_c / dt`.
#[inline]
pub(crate) fn reaction(kind: ModelKind, lr: &LocalRates, phi_i: f64, phi_e: f64, g: &[f64], out: &mut [f64]) {
    match kind {
        ModelKind::Sir => {
            let inf = phi_i * g[0];
            let rec = lr.gamma_i * g[1];
            out[0] = -inf;
            out[1] = inf - rec;
            out[2] = rec;
        }
        ModelKind::Seir => {
            let inf = (phi_i + phi_e) * g[0];
            let prog = lr.a_tilde * g[1];
            let rec_e = lr.gamma_e_tilde * g[1];
            let rec_i = lr.gamma_i * g[2];
            out[0] = -inf;
            out[1] = inf - prog - rec_e;
            out[2] = prog - rec_i;
            out[3] = rec_e + rec_i;
        }
    }
}

/// Odd-parity epidemic sources for one node/parity: `g` holds the flux
/// values of every compartment, `lam` the speeds.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn odd_reaction(
    kind: ModelKind,
    form: FluxSourceForm,
    lr: &LocalRates,
    phi_i: f64,
    phi_e: f64,
    g: &[f64],
    lam: &[f64],
    out: &mut [f64],
) {
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    match (kind, form) {
        (ModelKind::Sir, FluxSourceForm::Appendix) => {
            out[0] = -phi_i * g[0];
            out[1] = phi_i * g[1] - lr.gamma_i * g[1];
            out[2] = lr.gamma_i * g[2];
        }
        (ModelKind::Sir, FluxSourceForm::Moment) => {
            out[0] = -phi_i * g[0];
            out[1] = ratio(lam[1], lam[0]) * phi_i * g[0] - lr.gamma_i * g[1];
            out[2] = ratio(lam[2], lam[1]) * lr.gamma_i * g[1];
        }
        (ModelKind::Seir, FluxSourceForm::Appendix) => {
            let f = phi_i + phi_e;
            out[0] = -f * g[0];
            out[1] = f * g[1] - (lr.a_tilde + lr.gamma_e_tilde) * g[1];
            out[2] = lr.a_tilde * g[2] - lr.gamma_i * g[2];
            out[3] = (lr.gamma_e_tilde + lr.gamma_i) * g[3];
        }
        (ModelKind::Seir, FluxSourceForm::Moment) => {
            let f = phi_i + phi_e;
            out[0] = -f * g[0];
            out[1] = ratio(lam[1], lam[0]) * f * g[0] - (lr.a_tilde + lr.gamma_e_tilde) * g[1];
            out[2] = ratio(lam[2], lam[1]) * lr.a_tilde * g[1] - lr.gamma_i * g[2];
            out[3] = ratio(lam[3], lam[1]) * lr.gamma_e_tilde * g[1] + ratio(lam[3], lam[2]) * lr.gamma_i * g[2];
        }
    }
}

/// Forces of infection per cell from total densities `[cell][compartment]`.
pub(crate) fn forces_into(fields: &ParameterFields, totals: &[f64], phi_i: &mut [f64], phi_e: &mut [f64]) {
    let nc = fields.kind.count();
    let ids = fields.kind.ids();
    for k in 0..fields.n_cells() {
        let lr = fields.local(k);
        phi_i[k] = lr.phi_i(totals[k * nc + ids.i]);
        phi_e[k] = if fields.kind == ModelKind::Seir {
            lr.phi_e(totals[k * nc + ids.e])
        } else {
            0.0
        };
    }
}

/// Local source terms of the commuter system, split into the epidemic and
/// relaxation parts.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticSources {
    pub epidemic_even: Vec<f64>,
    pub epidemic_odd: Vec<f64>,
    pub relaxation_even: Vec<f64>,
    pub relaxation_odd: Vec<f64>,
}

/// Epidemic and relaxation sources of the commuter equations.
///
/// `totals` are commuter plus urban densities `[cell][compartment]`.
pub fn commuter_sources(
    state: &KineticState,
    totals: &[f64],
    fields: &ParameterFields,
    set: &OrdinateSet,
    form: FluxSourceForm,
) -> Result<KineticSources> {
    let layout = state.layout;
    let nc = layout.compartments;
    if nc != fields.kind.count() || layout.nodes != set.len() {
        return Err(Error::Argument("state layout does not match model and ordinates".into()));
    }
    if totals.len() != state.n_cells * nc || fields.n_cells() != state.n_cells {
        return Err(Error::Argument("field or totals length does not match the state".into()));
    }
    let n = state.n_cells;
    let mut phi_i = vec![0.0; n];
    let mut phi_e = vec![0.0; n];
    forces_into(fields, totals, &mut phi_i, &mut phi_e);
    let mut ee = vec![0.0; state.even.len()];
    let mut eo = vec![0.0; state.odd.len()];
    epidemic_sources_into(state, fields, form, &phi_i, &phi_e, &mut ee, &mut eo);
    let dens = state.densities(set);
    let m = layout.per_cell();
    let mut re = vec![0.0; state.even.len()];
    let mut ro = vec![0.0; state.odd.len()];
    for k in 0..n {
        for c in 0..nc {
            let inv_tau = 1.0 / fields.tau[k * nc + c];
            for i in 0..layout.nodes {
                for p in 0..2 {
                    let o = k * m + layout.offset(c, i, p);
                    re[o] = (dens[k * nc + c] - state.even[o]) * inv_tau;
                    ro[o] = -state.odd[o] * inv_tau;
                }
            }
        }
    }
    Ok(KineticSources {
        epidemic_even: ee,
        epidemic_odd: eo,
        relaxation_even: re,
        relaxation_odd: ro,
    })
}

/// Epidemic sources for both parity arrays given per-cell forces of infection.
pub(crate) fn epidemic_sources_into(
    state: &KineticState,
    fields: &ParameterFields,
    form: FluxSourceForm,
    phi_i: &[f64],
    phi_e: &[f64],
    even_out: &mut [f64],
    odd_out: &mut [f64],
) {
    epidemic_even_into(&state.even, state.layout, fields, phi_i, phi_e, even_out);
    epidemic_odd_into(&state.odd, state.layout, fields, form, phi_i, phi_e, odd_out);
}

pub(crate) fn epidemic_even_into(
    even: &[f64],
    layout: StateLayout,
    fields: &ParameterFields,
    phi_i: &[f64],
    phi_e: &[f64],
    out: &mut [f64],
) {
    let m = layout.per_cell();
    let nc = layout.compartments;
    let n = layout.nodes;
    let mut g = [0.0; 4];
    let mut r = [0.0; 4];
    for (k, (blk, ob)) in even.chunks_exact(m).zip(out.chunks_exact_mut(m)).enumerate() {
        let lr = fields.local(k);
        for i in 0..n {
            for p in 0..2 {
                for c in 0..nc {
                    g[c] = blk[(c * n + i) * 2 + p];
                }
                reaction(fields.kind, &lr, phi_i[k], phi_e[k], &g[..nc], &mut r[..nc]);
                for c in 0..nc {
                    ob[(c * n + i) * 2 + p] = r[c];
                }
            }
        }
    }
}

pub(crate) fn epidemic_odd_into(
    odd: &[f64],
    layout: StateLayout,
    fields: &ParameterFields,
    form: FluxSourceForm,
    phi_i: &[f64],
    phi_e: &[f64],
    out: &mut [f64],
) {
    let m = layout.per_cell();
    let nc = layout.compartments;
    let n = layout.nodes;
    let mut g = [0.0; 4];
    let mut r = [0.0; 4];
    for (k, (blk, ob)) in odd.chunks_exact(m).zip(out.chunks_exact_mut(m)).enumerate() {
        let lr = fields.local(k);
        let lam = &fields.lambda[k * nc..(k + 1) * nc];
        for i in 0..n {
            for p in 0..2 {
                for c in 0..nc {
                    g[c] = blk[(c * n + i) * 2 + p];
                }
                odd_reaction(fields.kind, form, &lr, phi_i[k], phi_e[k], &g[..nc], lam, &mut r[..nc]);
                for c in 0..nc {
                    ob[(c * n + i) * 2 + p] = r[c];
                }
            }
        }
    }
}

/// Reaction part of the urban equations, `[cell][compartment]`.
pub(crate) fn urban_reaction_into(
    urban: &[f64],
    fields: &ParameterFields,
    phi_i: &[f64],
    phi_e: &[f64],
    out: &mut [f64],
) {
    let nc = fields.kind.count();
    for (k, (u, o)) in urban.chunks_exact(nc).zip(out.chunks_exact_mut(nc)).enumerate() {
        let lr = fields.local(k);
        reaction(fields.kind, &lr, phi_i[k], phi_e[k], u, o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seir_fields(n: usize) -> ParameterFields {
        let mut f = ParameterFields::uniform(ModelKind::Seir, n);
        f.beta_i = vec![0.7; n];
        f.kappa_i = vec![0.3; n];
        f.gamma_i = vec![0.2; n];
        f.beta_e = vec![0.5; n];
        f.kappa_e = vec![0.1; n];
        f.sigma = vec![0.25; n];
        f.zeta = vec![0.25; n];
        f.a = vec![0.4; n];
        f.gamma_e = vec![0.3; n];
        f
    }

    #[test]
    fn incidence_examples() {
        assert_eq!(incidence_i(1.0, 0.5, 2.0, 0.0, 1.0).unwrap(), 1.0);
        assert!((incidence_i(0.5, 0.2, 3.0, 1.0, 2.0).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(incidence_i(0.7, 0.0, 3.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(matches!(incidence_i(-0.1, 0.2, 3.0, 1.0, 1.0), Err(Error::Domain(_))));
        let x = 0.75 * 2.0;
        let expect = 0.5 * 0.9 * x / (1.0 + 0.1 * x);
        assert!((incidence_e(0.9, 2.0, 0.5, 0.1, 0.25).unwrap() - expect).abs() < 1e-15);
        assert!(incidence_e(0.9, 2.0, 0.5, 0.1, 1.5).is_err());
    }

    #[test]
    fn reaction_sums_vanish() {
        let f = seir_fields(1);
        let lr = f.local(0);
        let g = [0.6, 0.1, 0.2, 0.1];
        let mut out = [0.0; 4];
        reaction(ModelKind::Seir, &lr, lr.phi_i(0.3), lr.phi_e(0.15), &g, &mut out);
        assert!(out.iter().sum::<f64>().abs() < 1e-16);
    }

    #[test]
    fn uniform_urban_reaction_matches_closed_form() {
        // SIR with beta = 2, gamma = 1, S_u = 0.9, I_u = 0.1, no commuters
        let mut f = ParameterFields::uniform(ModelKind::Sir, 1);
        f.beta_i = vec![2.0];
        f.gamma_i = vec![1.0];
        let u = [0.9, 0.1, 0.0];
        let mut phi_i = [0.0];
        let mut phi_e = [0.0];
        forces_into(&f, &u, &mut phi_i, &mut phi_e);
        let mut out = [0.0; 3];
        urban_reaction_into(&u, &f, &phi_i, &phi_e, &mut out);
        assert!((out[0] + 0.18).abs() < 1e-15);
        assert!((out[1] - 0.08).abs() < 1e-15);
        assert!((out[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn relaxation_has_zero_moment() {
        let set = OrdinateSet::new(3).unwrap();
        let layout = StateLayout { compartments: 3, nodes: 3 };
        let mut st = KineticState::zeros(layout, 2);
        for (i, v) in st.even.iter_mut().enumerate() {
            *v = 0.1 + 0.37 * (i as f64 * 0.71).sin().abs();
        }
        for (i, v) in st.odd.iter_mut().enumerate() {
            *v = 0.2 * (i as f64).cos();
        }
        let mut f = ParameterFields::uniform(ModelKind::Sir, 2);
        f.tau = vec![0.3; 6];
        let totals = st.densities(&set);
        let src = commuter_sources(&st, &totals, &f, &set, FluxSourceForm::Appendix).unwrap();
        let mut mom = vec![0.0; 6];
        moments_into(&src.relaxation_even, layout, &set, &mut mom);
        assert!(mom.iter().all(|m| m.abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn incidence_is_linear_in_g(g in 0.0f64..5.0, i in 0.0f64..3.0, b in 0.0f64..4.0, k in 0.0f64..10.0, p in 0.5f64..2.0) {
            let one = incidence_i(1.0, i, b, k, p).unwrap();
            let v = incidence_i(g, i, b, k, p).unwrap();
            prop_assert!((v - g * one).abs() <= 1e-12 * (1.0 + v.abs()));
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn even_sources_conserve_population(vals in proptest::collection::vec(0.0f64..2.0, 4), it in 0.0f64..2.0, et in 0.0f64..2.0) {
            let f = seir_fields(1);
            let lr = f.local(0);
            let mut out = [0.0; 4];
            reaction(ModelKind::Seir, &lr, lr.phi_i(it), lr.phi_e(et), &vals, &mut out);
            let scale = 1.0 + out.iter().map(|x| x.abs()).sum::<f64>();
            prop_assert!(out.iter().sum::<f64>().abs() <= 1e-14 * scale);
        }

        #[test]
        fn moment_form_odd_sources_cancel_with_equal_speeds(vals in proptest::collection::vec(-2.0f64..2.0, 4), it in 0.0f64..2.0) {
            let f = seir_fields(1);
            let lr = f.local(0);
            let mut out = [0.0; 4];
            odd_reaction(ModelKind::Seir, FluxSourceForm::Moment, &lr, lr.phi_i(it), lr.phi_e(0.3), &vals, &[1.0; 4], &mut out);
            let scale = 1.0 + out.iter().map(|x| x.abs()).sum::<f64>();
            prop_assert!(out.iter().sum::<f64>().abs() <= 1e-14 * scale);
        }
    }
}
