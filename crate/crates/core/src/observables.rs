//! Integrated quantities: compartment totals, reproduction numbers and
//! region totals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::model::{KineticState, ModelKind, ParameterFields, UrbanState};
use crate::ordinates::OrdinateSet;

/// Integrals of each compartment over a set of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentTotals {
    pub commuter: Vec<f64>,
    pub urban: Vec<f64>,
}

impl CompartmentTotals {
    pub fn total(&self, c: usize) -> f64 {
        self.commuter[c] + self.urban[c]
    }

    pub fn commuter_population(&self) -> f64 {
        self.commuter.iter().sum()
    }

    pub fn urban_population(&self) -> f64 {
        self.urban.iter().sum()
    }

    pub fn population(&self) -> f64 {
        self.commuter_population() + self.urban_population()
    }
}

fn check(mesh: &Mesh, set: &OrdinateSet, state: &KineticState, urban: &UrbanState) -> Result<()> {
    let nc = state.layout.compartments;
    if state.n_cells != mesh.n_cells() || state.layout.nodes != set.len() || urban.values.len() != nc * mesh.n_cells() {
        return Err(Error::Argument("state does not match mesh or ordinates".into()));
    }
    Ok(())
}

/// Area-weighted totals over the whole mesh.
pub fn compartment_totals(mesh: &Mesh, set: &OrdinateSet, state: &KineticState, urban: &UrbanState) -> Result<CompartmentTotals> {
    let all: Vec<usize> = (0..mesh.n_cells()).collect();
    region_totals(mesh, set, state, urban, &all)
}

/// Area-weighted totals over the given cells.
pub fn region_totals(mesh: &Mesh, set: &OrdinateSet, state: &KineticState, urban: &UrbanState, cells: &[usize]) -> Result<CompartmentTotals> {
    check(mesh, set, state, urban)?;
    let nc = state.layout.compartments;
    if let Some(&k) = cells.iter().find(|&&k| k >= mesh.n_cells()) {
        return Err(Error::Argument(format!("region references cell {k}")));
    }
    let dens = state.densities(set);
    let mut commuter = vec![0.0; nc];
    let mut urb = vec![0.0; nc];
    for &k in cells {
        let a = mesh.cells[k].area;
        for c in 0..nc {
            commuter[c] += a * dens[k * nc + c];
            urb[c] += a * urban.get(k, c);
        }
    }
    Ok(CompartmentTotals { commuter, urban: urb })
}

/// `int F(S_T, I_T) / int gamma I_T`; `None` when the denominator vanishes.
///
/// `totals` are commuter plus urban densities `[cell][compartment]`.
pub fn r0_sir(mesh: &Mesh, fields: &ParameterFields, totals: &[f64]) -> Result<Option<f64>> {
    let nc = fields.kind.count();
    if totals.len() != mesh.n_cells() * nc || fields.n_cells() != mesh.n_cells() {
        return Err(Error::Argument("densities do not match the mesh".into()));
    }
    let ids = fields.kind.ids();
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, cell) in mesh.cells.iter().enumerate() {
        let lr = fields.local(k);
        let s = totals[k * nc + ids.s];
        let i = totals[k * nc + ids.i];
        num += cell.area * lr.phi_i(i) * s;
        den += cell.area * lr.gamma_i * i;
    }
    Ok(if den > 0.0 { Some(num / den) } else { None })
}

/// Next-generation estimate for the SEIR model:
/// `int F_E / int (a~ + g~_E) E + [int F_I / int (a~ + g~_E) E] [int a~ E / int g_I I]`.
pub fn r0_seir(mesh: &Mesh, fields: &ParameterFields, totals: &[f64]) -> Result<Option<f64>> {
    if fields.kind != ModelKind::Seir {
        return Err(Error::Argument("r0_seir needs an SEIR model".into()));
    }
    if totals.len() != mesh.n_cells() * 4 || fields.n_cells() != mesh.n_cells() {
        return Err(Error::Argument("densities do not match the mesh".into()));
    }
    let (mut fe, mut fi, mut out_e, mut prog, mut out_i) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, cell) in mesh.cells.iter().enumerate() {
        let lr = fields.local(k);
        let (s, e, i) = (totals[k * 4], totals[k * 4 + 1], totals[k * 4 + 2]);
        let a = cell.area;
        fe += a * lr.phi_e(e) * s;
        fi += a * lr.phi_i(i) * s;
        out_e += a * (lr.a_tilde + lr.gamma_e_tilde) * e;
        prog += a * lr.a_tilde * e;
        out_i += a * lr.gamma_i * i;
    }
    if out_e <= 0.0 {
        return Ok(None);
    }
    let direct = fe / out_e;
    if fi == 0.0 {
        return Ok(Some(direct));
    }
    if out_i <= 0.0 {
        return Ok(None);
    }
    Ok(Some(direct + fi / out_e * prog / out_i))
}

/// The reproduction number matching the model kind.
pub fn reproduction_number(mesh: &Mesh, fields: &ParameterFields, totals: &[f64]) -> Result<Option<f64>> {
    match fields.kind {
        ModelKind::Sir => r0_sir(mesh, fields, totals),
        ModelKind::Seir => r0_seir(mesh, fields, totals),
    }
}

/// One row of a time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub t: f64,
    pub totals: CompartmentTotals,
    pub r0: Option<f64>,
}

/// `t,S,I,R,S_u,I_u,R_u,R0` (with `E`, `E_u` for SEIR).
pub fn csv_header(kind: ModelKind) -> String {
    let names: Vec<&str> = kind.compartments().iter().map(|c| c.name()).collect();
    let mut cols = vec!["t".to_string()];
    cols.extend(names.iter().map(|n| n.to_string()));
    cols.extend(names.iter().map(|n| format!("{n}_u")));
    cols.push("R0".into());
    cols.join(",")
}

/// Shortest round-trip representation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

impl TimeSeriesRecord {
    pub fn csv_row(&self) -> String {
        let mut cols = vec![fmt_num(self.t)];
        cols.extend(self.totals.commuter.iter().map(|x| fmt_num(*x)));
        cols.extend(self.totals.urban.iter().map(|x| fmt_num(*x)));
        cols.push(self.r0.map(fmt_num).unwrap_or_default());
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::rectangle_mesh;
    use crate::model::StateLayout;

    #[test]
    fn constant_sir_reproduction_number() {
        // beta = 2, gamma = 1, S = 0.9, I = 0.1 everywhere: R0 = beta S / gamma
        let mesh = rectangle_mesh(0.0, 2.0, 0.0, 1.0, 3, 2).unwrap();
        let mut f = ParameterFields::uniform(ModelKind::Sir, mesh.n_cells());
        f.beta_i = vec![2.0; mesh.n_cells()];
        f.gamma_i = vec![1.0; mesh.n_cells()];
        let t: Vec<f64> = (0..mesh.n_cells() * 3).map(|i| [0.9, 0.1, 0.0][i % 3]).collect();
        assert!((r0_sir(&mesh, &f, &t).unwrap().unwrap() - 1.8).abs() < 1e-14);
        let z = vec![0.0; mesh.n_cells() * 3];
        assert_eq!(r0_sir(&mesh, &f, &z).unwrap(), None);
    }

    #[test]
    fn seir_reproduction_number_closed_form() {
        let mesh = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let n = mesh.n_cells();
        let mut f = ParameterFields::uniform(ModelKind::Seir, n);
        f.beta_i = vec![0.8; n];
        f.beta_e = vec![0.4; n];
        f.gamma_i = vec![0.25; n];
        f.gamma_e = vec![0.2; n];
        f.a = vec![0.5; n];
        f.sigma = vec![0.5; n];
        f.zeta = vec![0.5; n];
        let (s, e, i) = (0.9, 0.05, 0.05);
        let t: Vec<f64> = (0..n * 4).map(|q| [s, e, i, 0.0][q % 4]).collect();
        let at = 0.5 * 0.5 * 0.5;
        let ge = 0.5 * 0.2;
        let expect = 0.4 * s * 0.5 * e / ((at + ge) * e) + (0.8 * s * i / ((at + ge) * e)) * (at * e / (0.25 * i));
        assert!((r0_seir(&mesh, &f, &t).unwrap().unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn csv_formatting() {
        assert_eq!(csv_header(ModelKind::Sir), "t,S,I,R,S_u,I_u,R_u,R0");
        assert_eq!(csv_header(ModelKind::Seir), "t,S,E,I,R,S_u,E_u,I_u,R_u,R0");
        let rec = TimeSeriesRecord {
            t: 0.1,
            totals: CompartmentTotals {
                commuter: vec![1.0, 1e-20, 0.3],
                urban: vec![0.0; 3],
            },
            r0: None,
        };
        assert_eq!(rec.csv_row(), "0.1,1.0,1e-20,0.3,0.0,0.0,0.0,");
        for x in [0.1, 1.0 / 3.0, 6.02e23, -2.5e-300] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn region_totals_partition() {
        let mesh = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let set = OrdinateSet::new(2).unwrap();
        let layout = StateLayout { compartments: 3, nodes: 2 };
        let dens: Vec<f64> = (0..mesh.n_cells() * 3).map(|i| 1.0 + i as f64).collect();
        let st = KineticState::equilibrium(layout, &dens);
        let ur = UrbanState::zeros(3, mesh.n_cells());
        let all = compartment_totals(&mesh, &set, &st, &ur).unwrap();
        let a: Vec<usize> = (0..4).collect();
        let b: Vec<usize> = (4..8).collect();
        let ta = region_totals(&mesh, &set, &st, &ur, &a).unwrap();
        let tb = region_totals(&mesh, &set, &st, &ur, &b).unwrap();
        for c in 0..3 {
            assert!((ta.commuter[c] + tb.commuter[c] - all.commuter[c]).abs() < 1e-13);
        }
    }
}
