//! Writers for time series, legacy VTK snapshots and the run report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::model::{KineticState, ModelKind, ParameterFields, UrbanState};
use crate::observables::{csv_header, TimeSeriesRecord};
use crate::ordinates::OrdinateSet;

/// Largest relative change of a population total over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationDrift {
    pub commuter: f64,
    pub urban: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub wall_time_s: f64,
    pub steps: usize,
    pub final_time: f64,
    /// Files written, relative to the output directory.
    pub manifest: Vec<String>,
    pub conservation_drift: ConservationDrift,
    pub positivity_fallbacks: usize,
    pub last_fallback_time: Option<f64>,
    /// Output times at which the reproduction number was undefined.
    pub undefined_r0: usize,
    pub warnings: Vec<String>,
}

pub fn timeseries_csv(kind: ModelKind, records: &[TimeSeriesRecord]) -> String {
    let mut s = csv_header(kind);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn vtk_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn scalars(out: &mut String, name: &str, values: impl Iterator<Item = f64>) {
    let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in values {
        out.push_str(&vtk_num(v));
        out.push('\n');
    }
}

/// Legacy ASCII unstructured grid with commuter, urban and total densities
/// per compartment plus the `lambda_sq` and `tau` fields of the first
/// compartment, all as cell data.
pub fn vtk_snapshot(mesh: &Mesh, fields: &ParameterFields, set: &OrdinateSet, state: &KineticState, urban: &UrbanState, title: &str) -> Result<String> {
    let nc = fields.kind.count();
    let n = mesh.n_cells();
    if state.n_cells != n || urban.values.len() != n * nc || fields.n_cells() != n {
        return Err(Error::Argument("snapshot state does not match the mesh".into()));
    }
    let mut s = String::new();
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} 0", vtk_num(v.x), vtk_num(v.y));
    }
    let size: usize = mesh.cells.iter().map(|c| c.vertices.len() + 1).sum();
    let _ = writeln!(s, "CELLS {n} {size}");
    for c in &mesh.cells {
        let _ = write!(s, "{}", c.vertices.len());
        for v in &c.vertices {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {n}");
    for c in &mesh.cells {
        let t = match c.vertices.len() {
            3 => 5,
            4 => 9,
            _ => 7,
        };
        let _ = writeln!(s, "{t}");
    }
    let _ = writeln!(s, "CELL_DATA {n}");
    let dens = state.densities(set);
    for (c, comp) in fields.kind.compartments().iter().enumerate() {
        let name = comp.name();
        scalars(&mut s, name, (0..n).map(|k| dens[k * nc + c]));
        scalars(&mut s, &format!("{name}_u"), (0..n).map(|k| urban.get(k, c)));
        scalars(&mut s, &format!("{name}_T"), (0..n).map(|k| dens[k * nc + c] + urban.get(k, c)));
    }
    scalars(&mut s, "lambda_sq", (0..n).map(|k| fields.lambda[k * nc].powi(2)));
    scalars(&mut s, "tau", (0..n).map(|k| fields.tau[k * nc]));
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, Vertex};
    use crate::model::StateLayout;
    use std::collections::BTreeMap;

    fn two_cells() -> Mesh {
        let v = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (2.0, 0.5)];
        let verts = v.iter().map(|&(x, y)| Vertex { x, y }).collect();
        build_mesh(verts, vec![vec![0, 1, 2, 3], vec![1, 4, 2]]).unwrap()
    }

    /// Minimal reader for the subset of the format written above.
    fn read_back(text: &str) -> (usize, BTreeMap<String, Vec<f64>>) {
        let lines: Vec<&str> = text.lines().collect();
        let mut cells = 0;
        let mut arrays = BTreeMap::new();
        let mut i = 0;
        let mut ncd = 0;
        while i < lines.len() {
            let t: Vec<&str> = lines[i].split_whitespace().collect();
            match t.first() {
                Some(&"CELLS") => cells = t[1].parse().unwrap(),
                Some(&"CELL_DATA") => ncd = t[1].parse().unwrap(),
                Some(&"SCALARS") => {
                    let vals = lines[i + 2..i + 2 + ncd].iter().map(|l| l.parse::<f64>().unwrap()).collect();
                    arrays.insert(t[1].to_string(), vals);
                    i += 1 + ncd;
                }
                _ => {}
            }
            i += 1;
        }
        (cells, arrays)
    }

    #[test]
    fn vtk_structure_and_round_trip() {
        let mesh = two_cells();
        let set = OrdinateSet::new(2).unwrap();
        let mut f = ParameterFields::uniform(ModelKind::Sir, 2);
        f.set_lambda(0, &[0.5, 2.0]);
        let dens = [1.0 / 3.0, 0.1, 1e-300, 2.0, 0.0, 7.25];
        let st = KineticState::equilibrium(StateLayout { compartments: 3, nodes: 2 }, &dens);
        let ur = UrbanState {
            compartments: 3,
            values: vec![0.5, 0.25, 0.0, 1.0 / 7.0, 0.0, 0.0],
        };
        let text = vtk_snapshot(&mesh, &f, &set, &st, &ur, "t = 0").unwrap();
        let (cells, arrays) = read_back(&text);
        assert_eq!(cells, 2);
        assert_eq!(text.matches("CELL_DATA").count(), 1);
        assert_eq!(arrays.len(), 11);
        assert_eq!(text.lines().nth(text.lines().position(|l| l.starts_with("CELL_TYPES")).unwrap() + 1), Some("9"));
        let back = st.densities(&set);
        for k in 0..2 {
            for (c, n) in ["S", "I", "R"].iter().enumerate() {
                let a = arrays[*n][k];
                assert!((a - back[k * 3 + c]).abs() <= 1e-15 * back[k * 3 + c].abs());
                assert_eq!(arrays[&format!("{n}_u")][k], ur.values[k * 3 + c]);
            }
        }
        assert_eq!(arrays["lambda_sq"], vec![0.25, 4.0]);
        assert_eq!(text, vtk_snapshot(&mesh, &f, &set, &st, &ur, "t = 0").unwrap());
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing").join("x.vtk");
        assert!(matches!(write_text(&p, "x"), Err(Error::Io { .. })));
    }
}
