//! Runnable configurations: analytic field builders, city and mobility data,
//! initial conditions, unit scales and the three experiment presets.
//!
//! A scenario document is JSON with sections `mesh`, `model`, `fields`,
//! `initial`, `time` and `output`. A document may instead name a preset
//! (`{"preset": "test1", ...}`), which is expanded into the full form.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::imex::{ImexTableau, KineticSystem, SchemeOptions};
use crate::mesh::{point_in_polygon, point_polyline_distance, read_mesh, read_polyline, rectangle_mesh, Mesh};
use crate::model::{FluxSourceForm, KineticState, ModelKind, ParameterFields, StateLayout, UrbanDiffusionArgument, UrbanState};
use crate::ordinates::OrdinateSet;

/// Conversion between raw inputs (metres, persons, days) and model units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScales {
    /// Metres per model length unit.
    pub alpha_x: f64,
    /// Persons per model population unit.
    pub alpha_p: f64,
    /// Model time units per day.
    pub time_per_day: f64,
}

impl Default for UnitScales {
    fn default() -> Self {
        Self {
            alpha_x: 1.0,
            alpha_p: 1.0,
            time_per_day: 1.0,
        }
    }
}

impl UnitScales {
    /// 1 km = 1e-3 L, 1 person = 1e-5 P, 1 day = 2 T.
    pub const EMILIA_ROMAGNA: UnitScales = UnitScales {
        alpha_x: 1e6,
        alpha_p: 1e5,
        time_per_day: 2.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("alpha_x", self.alpha_x), ("alpha_p", self.alpha_p), ("time_per_day", self.time_per_day)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("unit scale {n} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn length(&self, metres: f64) -> f64 {
        metres / self.alpha_x
    }

    pub fn km(&self, km: f64) -> f64 {
        km * 1e3 / self.alpha_x
    }

    pub fn persons(&self, p: f64) -> f64 {
        p / self.alpha_p
    }

    /// A rate per day in model time.
    pub fn rate(&self, per_day: f64) -> f64 {
        per_day / self.time_per_day
    }

    pub fn days(&self, d: f64) -> f64 {
        d * self.time_per_day
    }

    pub fn unscale_length(&self, l: f64) -> f64 {
        l * self.alpha_x
    }

    pub fn unscale_km(&self, l: f64) -> f64 {
        l * self.alpha_x / 1e3
    }

    pub fn unscale_persons(&self, p: f64) -> f64 {
        p * self.alpha_p
    }

    pub fn unscale_rate(&self, r: f64) -> f64 {
        r * self.time_per_day
    }

    pub fn unscale_days(&self, t: f64) -> f64 {
        t / self.time_per_day
    }
}

/// An urban centre with its initial population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub name: String,
    pub center: [f64; 2],
    pub radius: f64,
    pub population: f64,
    pub infected: f64,
    pub exposed: f64,
    /// Fraction of the population that commutes, in `[0, 1]`.
    pub commuter_fraction: f64,
}

impl City {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Argument(format!("city {} has radius {}", self.name, self.radius)));
        }
        if !(0.0..=1.0).contains(&self.commuter_fraction) {
            return Err(Error::Argument(format!(
                "city {} has commuter fraction {} outside [0, 1]",
                self.name, self.commuter_fraction
            )));
        }
        if !(self.infected >= 0.0 && self.exposed >= 0.0 && self.population >= self.infected + self.exposed) {
            return Err(Error::Argument(format!(
                "city {} needs P >= I + E >= 0 (P = {}, I = {}, E = {})",
                self.name, self.population, self.infected, self.exposed
            )));
        }
        Ok(())
    }

    pub fn susceptible(&self) -> f64 {
        self.population - self.infected - self.exposed
    }

    /// Raw units (metres, km, persons) to model units.
    pub fn scaled(&self, u: &UnitScales) -> City {
        City {
            name: self.name.clone(),
            center: [u.length(self.center[0]), u.length(self.center[1])],
            radius: u.km(self.radius),
            population: u.persons(self.population),
            infected: u.persons(self.infected),
            exposed: u.persons(self.exposed),
            commuter_fraction: self.commuter_fraction,
        }
    }

    pub fn unscaled(&self, u: &UnitScales) -> City {
        City {
            name: self.name.clone(),
            center: [u.unscale_length(self.center[0]), u.unscale_length(self.center[1])],
            radius: u.unscale_km(self.radius),
            population: u.unscale_persons(self.population),
            infected: u.unscale_persons(self.infected),
            exposed: u.unscale_persons(self.exposed),
            commuter_fraction: self.commuter_fraction,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CityRow {
    name: String,
    x: f64,
    y: f64,
    r_km: f64,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "I0")]
    i0: f64,
    #[serde(rename = "E0")]
    e0: f64,
    #[serde(rename = "C")]
    c: f64,
}

#[derive(Debug, Deserialize)]
struct MobilityRow {
    origin: String,
    destination: String,
    count: f64,
}

fn csv_message(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(1);
    Error::ingest(path, line, csv_message(&e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(f))
}

/// Rows of a CSV file with the line each starts on.
fn csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut rd = csv_reader(path)?;
    let headers = rd.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(1);
        let row = rec
            .deserialize::<T>(Some(&headers))
            .map_err(|e| Error::ingest(path, line, csv_message(&e)))?;
        out.push((line, row));
    }
    Ok(out)
}

/// Reads a `name,x,y,r_km,P,I0,E0,C` table in raw units.
pub fn read_cities(path: &Path) -> Result<Vec<City>> {
    let mut out = Vec::new();
    for (line, row) in csv_rows::<CityRow>(path)? {
        let city = City {
            name: row.name,
            center: [row.x, row.y],
            radius: row.r_km,
            population: row.p,
            infected: row.i0,
            exposed: row.e0,
            commuter_fraction: row.c,
        };
        city.validate().map_err(|e| Error::ingest(path, line, e.to_string()))?;
        out.push(city);
    }
    if out.is_empty() {
        return Err(Error::ingest(path, 1, "no cities"));
    }
    Ok(out)
}

/// Daily commuter counts between provinces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityMatrix {
    pub provinces: Vec<String>,
    /// `counts[origin][destination]`.
    pub counts: Vec<Vec<f64>>,
}

impl MobilityMatrix {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.provinces.iter().position(|p| p == name)
    }

    pub fn outgoing(&self, i: usize) -> f64 {
        self.counts[i].iter().sum()
    }

    /// Outgoing commuters relative to `population`.
    pub fn outgoing_fraction(&self, i: usize, population: f64) -> f64 {
        self.outgoing(i) / population
    }
}

/// Reads `origin,destination,count` rows.
pub fn read_mobility(path: &Path) -> Result<MobilityMatrix> {
    let rows = csv_rows::<MobilityRow>(path)?;
    for (ln, row) in &rows {
        if !(row.count >= 0.0 && row.count.is_finite()) {
            return Err(Error::ingest(path, *ln, format!("negative or invalid count {}", row.count)));
        }
        if row.origin == row.destination {
            return Err(Error::ingest(path, *ln, format!("diagonal entry for {}", row.origin)));
        }
    }
    let rows: Vec<MobilityRow> = rows.into_iter().map(|(_, r)| r).collect();
    let mut provinces: Vec<String> = Vec::new();
    for r in &rows {
        for n in [&r.origin, &r.destination] {
            if !provinces.contains(n) {
                provinces.push(n.clone());
            }
        }
    }
    let n = provinces.len();
    let mut counts = vec![vec![0.0; n]; n];
    let idx = |s: &str| provinces.iter().position(|p| p == s).unwrap();
    for r in &rows {
        counts[idx(&r.origin)][idx(&r.destination)] += r.count;
    }
    Ok(MobilityMatrix { provinces, counts })
}

/// Gaussian population of one city sampled at centroids and renormalised so
/// that its integral over the mesh is `f_c`.
pub fn gaussian_city_ic(city: &City, f_c: f64, mesh: &Mesh) -> Result<Vec<f64>> {
    let rc = city.radius;
    if !(rc > 0.0 && rc.is_finite()) {
        return Err(Error::Argument(format!("city {} has radius {rc}", city.name)));
    }
    if !(f_c >= 0.0 && f_c.is_finite()) {
        return Err(Error::Argument(format!("city quantity {f_c} must be non-negative")));
    }
    if f_c == 0.0 {
        return Ok(vec![0.0; mesh.n_cells()]);
    }
    let pre = f_c / (2.0 * PI * rc);
    let mut g: Vec<f64> = mesh
        .cells
        .iter()
        .map(|c| {
            let dx = c.centroid[0] - city.center[0];
            let dy = c.centroid[1] - city.center[1];
            pre * (-(dx * dx + dy * dy) / (2.0 * rc * rc)).exp()
        })
        .collect();
    let mass: f64 = g.iter().zip(&mesh.cells).map(|(v, c)| v * c.area).sum();
    if !(mass > 0.0) {
        return Err(Error::Domain(format!("city {} has no population on the mesh", city.name)));
    }
    let s = f_c / mass;
    g.iter_mut().for_each(|v| *v *= s);
    Ok(g)
}

/// Splits total densities `[cell][compartment]` into an isotropic commuter
/// state and an urban remainder using per-cell fractions of the same shape.
pub fn commuter_split(layout: StateLayout, totals: &[f64], fractions: &[f64]) -> Result<(KineticState, UrbanState)> {
    let nc = layout.compartments;
    if totals.len() != fractions.len() || totals.len() % nc != 0 {
        return Err(Error::Argument("totals and fractions differ in shape".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Argument(format!("commuter fraction {f} outside [0, 1]")));
    }
    if let Some(t) = totals.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("initial density {t} must be finite and non-negative")));
    }
    let commuters: Vec<f64> = totals.iter().zip(fractions).map(|(t, f)| f * t).collect();
    let urban: Vec<f64> = totals.iter().zip(&commuters).map(|(t, c)| t - c).collect();
    let n_cells = totals.len() / nc;
    Ok((
        KineticState::equilibrium(layout, &commuters),
        UrbanState {
            compartments: nc,
            values: if n_cells == 0 { Vec::new() } else { urban },
        },
    ))
}

/// A polyline carrying a field value within a band around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub points: Vec<[f64; 2]>,
    pub value: f64,
}

/// Gaussian bump `exp(-|x - c|^2 / (2 s^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
}

impl Bump {
    fn at(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CityQuantity {
    Population,
    Susceptible,
    Exposed,
    Infected,
}

/// Named constructors of per-cell fields, evaluated at cell centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case")]
pub enum FieldBuilder {
    Constant {
        value: f64,
    },
    Tabulated {
        values: Vec<f64>,
    },
    /// `base (1 + amplitude sin(kx x) sin(ky y))`.
    SinProduct {
        base: f64,
        amplitude: f64,
        kx: f64,
        ky: f64,
    },
    /// `amplitude exp(-coefficient |x - center|^2)`.
    Gaussian {
        amplitude: f64,
        center: [f64; 2],
        coefficient: f64,
    },
    /// `max(0, offset - coefficient |x - center|^2)`.
    Paraboloid {
        offset: f64,
        center: [f64; 2],
        coefficient: f64,
    },
    Sum {
        terms: Vec<FieldBuilder>,
    },
    Scaled {
        factor: f64,
        field: Box<FieldBuilder>,
    },
    /// Largest band value among bands within `half_width`, else `background`.
    Bands {
        bands: Vec<Band>,
        half_width: f64,
        background: f64,
    },
    /// `max(floor, reference - factor reference sum_b bump_b)`.
    RelaxationDip {
        reference: f64,
        floor: f64,
        factor: f64,
        bumps: Vec<Bump>,
    },
    /// `max(inner, outer + (inner - outer) sum_b bump_b)`.
    RelaxationBlend {
        outer: f64,
        inner: f64,
        bumps: Vec<Bump>,
    },
    /// Sum of renormalised city Gaussians.
    CityGaussians {
        cities: Vec<City>,
        quantity: CityQuantity,
    },
    /// Value of the nearest site.
    Partition {
        sites: Vec<[f64; 2]>,
        values: Vec<f64>,
    },
}

fn nearest(sites: &[[f64; 2]], p: [f64; 2]) -> usize {
    let d2 = |s: &[f64; 2]| (s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2);
    let mut best = 0;
    for (i, s) in sites.iter().enumerate() {
        if d2(s) < d2(&sites[best]) {
            best = i;
        }
    }
    best
}

impl FieldBuilder {
    pub fn constant(value: f64) -> Self {
        FieldBuilder::Constant { value }
    }

    pub fn evaluate(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let n = mesh.n_cells();
        let pointwise = |f: &dyn Fn([f64; 2]) -> f64| -> Vec<f64> { mesh.cells.iter().map(|c| f(c.centroid)).collect() };
        Ok(match self {
            FieldBuilder::Constant { value } => vec![*value; n],
            FieldBuilder::Tabulated { values } => {
                if values.len() != n {
                    return Err(Error::Config(format!("tabulated field has {} values for {n} cells", values.len())));
                }
                values.clone()
            }
            FieldBuilder::SinProduct { base, amplitude, kx, ky } => {
                pointwise(&|p| base * (1.0 + amplitude * (kx * p[0]).sin() * (ky * p[1]).sin()))
            }
            FieldBuilder::Gaussian { amplitude, center, coefficient } => pointwise(&|p| {
                amplitude * (-coefficient * ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2))).exp()
            }),
            FieldBuilder::Paraboloid { offset, center, coefficient } => pointwise(&|p| {
                (offset - coefficient * ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2))).max(0.0)
            }),
            FieldBuilder::Sum { terms } => {
                let mut out = vec![0.0; n];
                for t in terms {
                    for (o, v) in out.iter_mut().zip(t.evaluate(mesh)?) {
                        *o += v;
                    }
                }
                out
            }
            FieldBuilder::Scaled { factor, field } => field.evaluate(mesh)?.into_iter().map(|v| factor * v).collect(),
            FieldBuilder::Bands { bands, half_width, background } => {
                if let Some(b) = bands.iter().find(|b| b.points.is_empty()) {
                    return Err(Error::Config(format!("band with value {} has no points", b.value)));
                }
                pointwise(&|p| {
                    bands
                        .iter()
                        .filter(|b| point_polyline_distance(p, &b.points) <= *half_width)
                        .map(|b| b.value)
                        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
                        .unwrap_or(*background)
                })
            }
            FieldBuilder::RelaxationDip { reference, floor, factor, bumps } => pointwise(&|p| {
                let s: f64 = bumps.iter().map(|b| b.at(p)).sum();
                floor.max(reference - factor * reference * s)
            }),
            FieldBuilder::RelaxationBlend { outer, inner, bumps } => pointwise(&|p| {
                let s: f64 = bumps.iter().map(|b| b.at(p)).sum();
                inner.max(outer + (inner - outer) * s)
            }),
            FieldBuilder::CityGaussians { cities, quantity } => {
                let mut out = vec![0.0; n];
                for c in cities {
                    c.validate()?;
                    let f = match quantity {
                        CityQuantity::Population => c.population,
                        CityQuantity::Susceptible => c.susceptible(),
                        CityQuantity::Exposed => c.exposed,
                        CityQuantity::Infected => c.infected,
                    };
                    for (o, v) in out.iter_mut().zip(gaussian_city_ic(c, f, mesh)?) {
                        *o += v;
                    }
                }
                out
            }
            FieldBuilder::Partition { sites, values } => {
                if sites.is_empty() || sites.len() != values.len() {
                    return Err(Error::Config("partition needs one value per site".into()));
                }
                pointwise(&|p| values[nearest(sites, p)])
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshSource {
    Rectangle {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        nx: usize,
        ny: usize,
    },
    /// `MESH2D` file; relative paths are resolved against the scenario file.
    File { path: PathBuf },
}

impl MeshSource {
    pub fn build(&self, base_dir: &Path) -> Result<Mesh> {
        match self {
            MeshSource::Rectangle { x0, x1, y0, y1, nx, ny } => rectangle_mesh(*x0, *x1, *y0, *y1, *nx, *ny),
            MeshSource::File { path } => read_mesh(&base_dir.join(path)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableauChoice {
    #[default]
    Ars222,
    Euler,
}

fn default_nodes() -> usize {
    2
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Gauss-Legendre nodes per quadrant; `4 n` directions in total.
    #[serde(default = "default_nodes")]
    pub ordinates: usize,
    #[serde(default)]
    pub flux_form: FluxSourceForm,
    #[serde(default)]
    pub urban_argument: UrbanDiffusionArgument,
    #[serde(default = "yes")]
    pub positivity_guard: bool,
    #[serde(default)]
    pub tableau: TableauChoice,
}

fn zero() -> FieldBuilder {
    FieldBuilder::constant(0.0)
}

fn one() -> FieldBuilder {
    FieldBuilder::constant(1.0)
}

/// Per-compartment replacements of the transport fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompartmentFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sq: Option<FieldBuilder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<FieldBuilder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du: Option<FieldBuilder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsConfig {
    pub beta_i: FieldBuilder,
    pub gamma_i: FieldBuilder,
    #[serde(default = "zero")]
    pub kappa_i: FieldBuilder,
    #[serde(default = "one")]
    pub p: FieldBuilder,
    #[serde(default = "zero")]
    pub beta_e: FieldBuilder,
    #[serde(default = "zero")]
    pub kappa_e: FieldBuilder,
    #[serde(default = "zero")]
    pub sigma: FieldBuilder,
    #[serde(default = "zero")]
    pub zeta: FieldBuilder,
    #[serde(default = "zero")]
    pub a: FieldBuilder,
    #[serde(default = "zero")]
    pub gamma_e: FieldBuilder,
    /// Squared characteristic speed, shared by all compartments.
    pub lambda_sq: FieldBuilder,
    pub tau: FieldBuilder,
    #[serde(default = "zero")]
    pub du: FieldBuilder,
    /// Keyed by compartment name (`S`, `E`, `I`, `R`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub compartments: BTreeMap<String, CompartmentFields>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConfig {
    /// Total (commuter plus urban) densities by compartment name; missing
    /// compartments start at zero.
    pub totals: BTreeMap<String, FieldBuilder>,
    /// Commuter fractions by compartment name.
    #[serde(default)]
    pub commuter_fraction: BTreeMap<String, FieldBuilder>,
    /// Fraction for compartments absent from `commuter_fraction`.
    #[serde(default = "unit")]
    pub default_fraction: f64,
}

fn unit() -> f64 {
    1.0
}

fn default_cfl() -> f64 {
    0.4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    #[serde(default)]
    pub start: f64,
    #[serde(rename = "final")]
    pub final_time: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    /// Cadence of the time-series rows.
    pub output_interval: f64,
    /// Cadence of VTK snapshots; none when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_interval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    Disc { name: String, center: [f64; 2], radius: f64 },
    /// One region per site, containing the cells nearest to it.
    Partition { names: Vec<String>, sites: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
}

/// Full description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub mesh: MeshSource,
    pub model: ModelConfig,
    pub fields: FieldsConfig,
    pub initial: InitialConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub units: UnitScales,
}

/// Named set of cells used for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub cells: Vec<usize>,
}

/// A configuration resolved against its mesh.
pub struct Scenario {
    pub id: String,
    pub system: KineticSystem,
    pub state: KineticState,
    pub urban: UrbanState,
    pub time: TimeConfig,
    pub regions: Vec<Region>,
    pub units: UnitScales,
}

impl Scenario {
    pub fn mesh(&self) -> &Mesh {
        &self.system.mesh
    }
}

impl ScenarioConfig {
    fn compartment(&self, name: &str) -> Result<usize> {
        let kind = self.model.kind;
        kind.compartments()
            .iter()
            .position(|c| c.name() == name)
            .ok_or_else(|| Error::Config(format!("compartment `{name}` is not part of the {kind:?} model")))
    }

    fn check_time(&self) -> Result<()> {
        let t = &self.time;
        if !(t.final_time > t.start) || !t.final_time.is_finite() || !t.start.is_finite() {
            return Err(Error::Config(format!("time window [{}, {}] is empty", t.start, t.final_time)));
        }
        if !(t.output_interval > 0.0) {
            return Err(Error::Config(format!("output interval {} must be positive", t.output_interval)));
        }
        if let Some(s) = t.snapshot_interval {
            if !(s > 0.0) {
                return Err(Error::Config(format!("snapshot interval {s} must be positive")));
            }
        }
        if !(t.cfl > 0.0) {
            return Err(Error::Config(format!("cfl {} must be positive", t.cfl)));
        }
        if let Some(d) = t.dt_max {
            if !(d > 0.0) {
                return Err(Error::Config(format!("dt_max {d} must be positive")));
            }
        }
        Ok(())
    }

    /// Parameter fields on `mesh`.
    pub fn parameter_fields(&self, mesh: &Mesh) -> Result<ParameterFields> {
        let kind = self.model.kind;
        let n = mesh.n_cells();
        let f = &self.fields;
        let mut p = ParameterFields::uniform(kind, n);
        p.beta_i = f.beta_i.evaluate(mesh)?;
        p.gamma_i = f.gamma_i.evaluate(mesh)?;
        p.kappa_i = f.kappa_i.evaluate(mesh)?;
        p.p = f.p.evaluate(mesh)?;
        p.beta_e = f.beta_e.evaluate(mesh)?;
        p.kappa_e = f.kappa_e.evaluate(mesh)?;
        p.sigma = f.sigma.evaluate(mesh)?;
        p.zeta = f.zeta.evaluate(mesh)?;
        p.a = f.a.evaluate(mesh)?;
        p.gamma_e = f.gamma_e.evaluate(mesh)?;
        let speed = |b: &FieldBuilder| -> Result<Vec<f64>> {
            let v = b.evaluate(mesh)?;
            if let Some(x) = v.iter().find(|x| !(**x >= 0.0)) {
                return Err(Error::Domain(format!("lambda^2 = {x} must be non-negative")));
            }
            Ok(v.into_iter().map(f64::sqrt).collect())
        };
        let lam = speed(&f.lambda_sq)?;
        let tau = f.tau.evaluate(mesh)?;
        let du = f.du.evaluate(mesh)?;
        for c in 0..kind.count() {
            p.set_lambda(c, &lam);
            p.set_tau(c, &tau);
            p.set_du(c, &du);
        }
        for (name, cf) in &f.compartments {
            let c = self.compartment(name)?;
            if let Some(b) = &cf.lambda_sq {
                p.set_lambda(c, &speed(b)?);
            }
            if let Some(b) = &cf.tau {
                p.set_tau(c, &b.evaluate(mesh)?);
            }
            if let Some(b) = &cf.du {
                p.set_du(c, &b.evaluate(mesh)?);
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// Initial totals and commuter fractions, both `[cell][compartment]`.
    pub fn initial_fields(&self, mesh: &Mesh) -> Result<(Vec<f64>, Vec<f64>)> {
        let nc = self.model.kind.count();
        let n = mesh.n_cells();
        let mut totals = vec![0.0; n * nc];
        let mut fractions = vec![self.initial.default_fraction; n * nc];
        for (name, b) in &self.initial.totals {
            let c = self.compartment(name)?;
            for (k, v) in b.evaluate(mesh)?.into_iter().enumerate() {
                totals[k * nc + c] = v;
            }
        }
        for (name, b) in &self.initial.commuter_fraction {
            let c = self.compartment(name)?;
            for (k, v) in b.evaluate(mesh)?.into_iter().enumerate() {
                fractions[k * nc + c] = v;
            }
        }
        Ok((totals, fractions))
    }

    pub fn regions(&self, mesh: &Mesh) -> Result<Vec<Region>> {
        let mut out = Vec::new();
        for r in &self.output.regions {
            match r {
                RegionSpec::Disc { name, center, radius } => {
                    let cells = (0..mesh.n_cells())
                        .filter(|&k| {
                            let c = mesh.cells[k].centroid;
                            (c[0] - center[0]).hypot(c[1] - center[1]) <= *radius
                        })
                        .collect();
                    out.push(Region { name: name.clone(), cells });
                }
                RegionSpec::Partition { names, sites } => {
                    if names.len() != sites.len() || sites.is_empty() {
                        return Err(Error::Config("partition needs one name per site".into()));
                    }
                    let mut cells = vec![Vec::new(); sites.len()];
                    for (k, c) in mesh.cells.iter().enumerate() {
                        cells[nearest(sites, c.centroid)].push(k);
                    }
                    out.extend(names.iter().zip(cells).map(|(n, cells)| Region { name: n.clone(), cells }));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for r in &out {
            if r.name.is_empty() || r.name.contains(['/', '\\']) || !seen.insert(r.name.clone()) {
                return Err(Error::Config(format!("invalid or repeated region name `{}`", r.name)));
            }
        }
        Ok(out)
    }

    /// Resolves the configuration. Relative file paths are taken from `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Scenario> {
        self.check_time()?;
        self.units.validate()?;
        let mesh = self.model_mesh(base_dir)?;
        let fields = self.parameter_fields(&mesh)?;
        let (totals, fractions) = self.initial_fields(&mesh)?;
        let set = OrdinateSet::new(self.model.ordinates)?;
        let options = SchemeOptions {
            flux_form: self.model.flux_form,
            urban_argument: self.model.urban_argument,
            positivity_guard: self.model.positivity_guard,
        };
        let tableau = match self.model.tableau {
            TableauChoice::Ars222 => ImexTableau::ars222(),
            TableauChoice::Euler => ImexTableau::euler(),
        };
        let regions = self.regions(&mesh)?;
        let system = KineticSystem::new(mesh, set, fields, options, tableau)?;
        let (state, urban) = commuter_split(system.layout(), &totals, &fractions)?;
        Ok(Scenario {
            id: self.id.clone(),
            system,
            state,
            urban,
            time: self.time.clone(),
            regions,
            units: self.units,
        })
    }

    fn model_mesh(&self, base_dir: &Path) -> Result<Mesh> {
        self.mesh.build(base_dir)
    }
}

/// Transport regime of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Hyperbolic,
    Parabolic,
}

impl Limit {
    pub fn name(self) -> &'static str {
        match self {
            Limit::Hyperbolic => "hyperbolic",
            Limit::Parabolic => "parabolic",
        }
    }
}

/// Cells per side of the preset rectangle meshes (close to the cell counts
/// used for the published runs).
pub const TEST1_NX: usize = 88;
pub const TEST2_NX: usize = 71;

/// Space-dependent contact rate, commuters only, on `[0, 20]^2`.
pub fn preset_test1(beta_tilde: f64, limit: Limit, nx: usize) -> ScenarioConfig {
    let (tau, lambda_sq) = match limit {
        Limit::Hyperbolic => (1.0, 1.0),
        Limit::Parabolic => (1e-4, 1e4),
    };
    let k = 13.0 * PI / 20.0;
    let infected = FieldBuilder::Gaussian {
        amplitude: 0.01,
        center: [10.0, 10.0],
        coefficient: 1.0,
    };
    let totals = BTreeMap::from([
        (
            "S".to_string(),
            FieldBuilder::Sum {
                terms: vec![
                    FieldBuilder::constant(1.0),
                    FieldBuilder::Scaled {
                        factor: -1.0,
                        field: Box::new(infected.clone()),
                    },
                ],
            },
        ),
        ("I".to_string(), infected),
    ]);
    ScenarioConfig {
        id: format!("test1-beta{beta_tilde}-{}", limit.name()),
        mesh: MeshSource::Rectangle {
            x0: 0.0,
            x1: 20.0,
            y0: 0.0,
            y1: 20.0,
            nx,
            ny: nx,
        },
        model: ModelConfig {
            kind: ModelKind::Sir,
            ordinates: 2,
            flux_form: FluxSourceForm::Moment,
            urban_argument: UrbanDiffusionArgument::Urban,
            positivity_guard: true,
            tableau: TableauChoice::Ars222,
        },
        fields: FieldsConfig {
            beta_i: FieldBuilder::SinProduct {
                base: beta_tilde,
                amplitude: 0.05,
                kx: k,
                ky: k,
            },
            gamma_i: FieldBuilder::constant(10.0),
            kappa_i: zero(),
            p: one(),
            beta_e: zero(),
            kappa_e: zero(),
            sigma: zero(),
            zeta: zero(),
            a: zero(),
            gamma_e: zero(),
            lambda_sq: FieldBuilder::constant(lambda_sq),
            tau: FieldBuilder::constant(tau),
            du: zero(),
            compartments: BTreeMap::new(),
        },
        initial: InitialConfig {
            totals,
            commuter_fraction: BTreeMap::new(),
            default_fraction: 1.0,
        },
        time: TimeConfig {
            start: 0.0,
            final_time: 10.0,
            cfl: default_cfl(),
            dt_max: None,
            output_interval: 0.1,
            snapshot_interval: None,
        },
        output: OutputConfig::default(),
        units: UnitScales::default(),
    }
}

pub const TEST2_CENTERS: [[f64; 2]; 3] = [[0.2, 0.2], [0.9, 0.5], [0.3, 0.9]];
pub const TEST2_S1: f64 = 0.05;
pub const TEST2_S2: f64 = 0.025;
/// Urban diffusion of the non-commuters in the three-city test.
pub const TEST2_URBAN_DIFFUSION: f64 = 1e-6;

/// Three cities joined by paths, commuters and non-commuters, on `[0, 1]^2`.
pub fn preset_test2(limit: Limit, nx: usize) -> ScenarioConfig {
    let [a, b, c] = TEST2_CENTERS;
    let tau_r = match limit {
        Limit::Hyperbolic => 1e4,
        Limit::Parabolic => 1e-4,
    };
    let bump = |center: [f64; 2], offset: f64, coefficient: f64| FieldBuilder::Paraboloid { offset, center, coefficient };
    let totals = BTreeMap::from([
        (
            "S".to_string(),
            FieldBuilder::Sum {
                terms: vec![bump(a, 1.0, 100.0), bump(b, 1.0, 500.0), bump(c, 1.0, 500.0)],
            },
        ),
        ("I".to_string(), bump(b, 1.0, 500.0)),
    ]);
    let fractions = BTreeMap::from([
        ("S".to_string(), FieldBuilder::constant(0.01)),
        ("I".to_string(), FieldBuilder::constant(0.8)),
    ]);
    let band = |p: [f64; 2], q: [f64; 2], value: f64| Band { points: vec![p, q], value };
    let names = ["A", "B", "C"];
    let radii = [3.0 * TEST2_S1, 3.0 * TEST2_S2, 3.0 * TEST2_S2];
    ScenarioConfig {
        id: format!("test2-{}", limit.name()),
        mesh: MeshSource::Rectangle {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
            nx,
            ny: nx,
        },
        model: ModelConfig {
            kind: ModelKind::Sir,
            ordinates: 2,
            flux_form: FluxSourceForm::Moment,
            urban_argument: UrbanDiffusionArgument::Urban,
            positivity_guard: true,
            tableau: TableauChoice::Ars222,
        },
        fields: FieldsConfig {
            beta_i: FieldBuilder::constant(6.0),
            gamma_i: FieldBuilder::constant(1.0),
            kappa_i: zero(),
            p: one(),
            beta_e: zero(),
            kappa_e: zero(),
            sigma: zero(),
            zeta: zero(),
            a: zero(),
            gamma_e: zero(),
            lambda_sq: FieldBuilder::Bands {
                bands: vec![band(a, b, 1e2), band(a, c, 1e2), band(b, c, 1e-2)],
                half_width: 0.02,
                background: 1e-12,
            },
            tau: FieldBuilder::RelaxationDip {
                reference: tau_r,
                floor: 1e-4,
                factor: 1.5,
                bumps: vec![
                    Bump { center: a, width: TEST2_S1 },
                    Bump { center: b, width: TEST2_S2 },
                    Bump { center: c, width: TEST2_S2 },
                ],
            },
            du: FieldBuilder::constant(TEST2_URBAN_DIFFUSION),
            compartments: BTreeMap::new(),
        },
        initial: InitialConfig {
            totals,
            commuter_fraction: fractions,
            default_fraction: 1.0,
        },
        time: TimeConfig {
            start: 0.0,
            final_time: 20.0,
            cfl: default_cfl(),
            dt_max: None,
            output_interval: 0.1,
            snapshot_interval: None,
        },
        output: OutputConfig {
            regions: (0..3)
                .map(|i| RegionSpec::Disc {
                    name: names[i].to_string(),
                    center: TEST2_CENTERS[i],
                    radius: radii[i],
                })
                .collect(),
        },
        units: UnitScales::default(),
    }
}

/// Files of the Emilia-Romagna data directory.
pub const ER_CITIES: &str = "cities.csv";
pub const ER_MOBILITY: &str = "mobility.csv";
pub const ER_BOUNDARY: &str = "boundary.txt";
pub const ER_MESH: &str = "mesh.txt";
pub const ER_CONNECTIONS: &str = "connections";

/// Emilia-Romagna SEIR configuration from a data directory holding the city
/// table, mobility matrix, region outline, mesh and connection polylines.
pub fn preset_emilia_romagna(data_dir: &Path) -> Result<ScenarioConfig> {
    let u = UnitScales::EMILIA_ROMAGNA;
    let raw = read_cities(&data_dir.join(ER_CITIES))?;
    let mobility = read_mobility(&data_dir.join(ER_MOBILITY))?;
    let mob_path = data_dir.join(ER_MOBILITY);
    for p in &mobility.provinces {
        if !raw.iter().any(|c| &c.name == p) {
            return Err(Error::ingest(&mob_path, 1, format!("province `{p}` has no city")));
        }
    }
    let boundary: Vec<[f64; 2]> = read_polyline(&data_dir.join(ER_BOUNDARY))?
        .into_iter()
        .map(|p| [u.length(p[0]), u.length(p[1])])
        .collect();
    let mesh_path = data_dir.join(ER_MESH);
    let mesh = read_mesh(&mesh_path)?;
    let tol = 1e-9;
    if let Some(k) = mesh.cells.iter().position(|c| {
        !point_in_polygon(c.centroid, &boundary)
            && boundary.windows(2).all(|w| crate::mesh::point_segment_distance(c.centroid, w[0], w[1]) > tol)
    }) {
        return Err(Error::ingest(&mesh_path, 1, format!("cell {k} lies outside the region outline")));
    }
    let conn_dir = data_dir.join(ER_CONNECTIONS);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&conn_dir)
        .map_err(|e| Error::io(&conn_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::ingest(&conn_dir, 1, "no connection polylines"));
    }
    let lambda_sq = 6.25e-4;
    let mut bands = Vec::new();
    for f in &files {
        let pts = read_polyline(f)?;
        bands.push(Band {
            points: pts.iter().map(|p| [u.length(p[0]), u.length(p[1])]).collect(),
            value: lambda_sq,
        });
    }
    let cities: Vec<City> = raw.iter().map(|c| c.scaled(&u)).collect();
    let sites: Vec<[f64; 2]> = cities.iter().map(|c| c.center).collect();
    let names: Vec<String> = cities.iter().map(|c| c.name.clone()).collect();
    let tau0 = 1e-4;
    let fraction = FieldBuilder::Partition {
        sites: sites.clone(),
        values: cities.iter().map(|c| c.commuter_fraction).collect(),
    };
    let gauss = |q| FieldBuilder::CityGaussians {
        cities: cities.clone(),
        quantity: q,
    };
    let rate = |r: f64| FieldBuilder::constant(u.rate(r));
    Ok(ScenarioConfig {
        id: "emilia-romagna".into(),
        mesh: MeshSource::File { path: mesh_path },
        model: ModelConfig {
            kind: ModelKind::Seir,
            ordinates: 2,
            flux_form: FluxSourceForm::Moment,
            urban_argument: UrbanDiffusionArgument::Urban,
            positivity_guard: true,
            tableau: TableauChoice::Ars222,
        },
        fields: FieldsConfig {
            beta_i: rate(3.7e-3),
            gamma_i: rate(1.0 / 12.0),
            kappa_i: FieldBuilder::constant(6e7),
            p: one(),
            beta_e: rate(3.7e-3),
            kappa_e: FieldBuilder::constant(2.3e4),
            sigma: FieldBuilder::constant(0.25),
            zeta: FieldBuilder::constant(0.25),
            a: rate(1.0 / 7.0),
            gamma_e: rate(1.0 / 12.0),
            lambda_sq: FieldBuilder::Bands {
                bands,
                half_width: u.km(0.75),
                background: 1e-12,
            },
            tau: FieldBuilder::RelaxationBlend {
                outer: 1e4,
                inner: tau0,
                bumps: cities.iter().map(|c| Bump { center: c.center, width: c.radius }).collect(),
            },
            du: FieldBuilder::constant(0.5 * lambda_sq * tau0),
            compartments: BTreeMap::from([(
                "I".to_string(),
                CompartmentFields {
                    lambda_sq: Some(zero()),
                    ..Default::default()
                },
            )]),
        },
        initial: InitialConfig {
            totals: BTreeMap::from([
                ("S".to_string(), gauss(CityQuantity::Susceptible)),
                ("E".to_string(), gauss(CityQuantity::Exposed)),
                ("I".to_string(), gauss(CityQuantity::Infected)),
            ]),
            commuter_fraction: ["S", "E", "I", "R"].iter().map(|c| (c.to_string(), fraction.clone())).collect(),
            default_fraction: 1.0,
        },
        time: TimeConfig {
            start: 0.0,
            final_time: u.days(10.0),
            cfl: default_cfl(),
            dt_max: None,
            output_interval: u.days(0.25),
            snapshot_interval: None,
        },
        output: OutputConfig {
            regions: vec![RegionSpec::Partition { names, sites }],
        },
        units: u,
    })
}

/// A preset reference inside a scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum PresetSpec {
    Test1 {
        beta_tilde: f64,
        regime: Limit,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nx: Option<usize>,
    },
    Test2 {
        regime: Limit,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nx: Option<usize>,
    },
    EmiliaRomagna {
        /// Relative to the scenario file.
        data_dir: PathBuf,
    },
}

impl PresetSpec {
    pub fn resolve(&self, base_dir: &Path) -> Result<ScenarioConfig> {
        match self {
            PresetSpec::Test1 { beta_tilde, regime, nx } => Ok(preset_test1(*beta_tilde, *regime, nx.unwrap_or(TEST1_NX))),
            PresetSpec::Test2 { regime, nx } => Ok(preset_test2(*regime, nx.unwrap_or(TEST2_NX))),
            PresetSpec::EmiliaRomagna { data_dir } => {
                // absolute, so that the mesh path in the resolved config does
                // not get joined with the scenario directory a second time
                let dir = base_dir.join(data_dir);
                let dir = std::path::absolute(&dir).map_err(|e| Error::io(&dir, e))?;
                preset_emilia_romagna(&dir)
            }
        }
    }
}

/// Sets `key` (dot separated, array indices allowed) in a JSON document.
/// `value` is parsed as JSON and taken as a string when that fails.
pub fn apply_override(doc: &mut Value, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let v: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut cur = doc;
    for (i, p) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert(p.to_string(), v);
                    return Ok(());
                }
                m.get_mut(*p)
                    .ok_or_else(|| Error::Config(format!("override `{key}`: no key `{p}`")))?
            }
            Value::Array(a) => {
                let idx: usize = p
                    .parse()
                    .map_err(|_| Error::Config(format!("override `{key}`: `{p}` is not an index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("override `{key}`: index {idx} out of {len}")))?;
                if last {
                    *slot = v;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("override `{key}`: `{p}` is inside a scalar"))),
        };
    }
    unreachable!("loop returns on the last component")
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not `key=value`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

const PRESET_KEYS: [&str; 4] = ["beta_tilde", "regime", "nx", "data_dir"];

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::ingest(path, e.line().max(1), e.to_string())
}

/// Resolves a scenario document: presets are expanded, then overrides are
/// applied. Overrides whose first key exists in a preset document act on
/// the preset parameters; all others act on the expanded configuration.
pub fn resolve_document(doc: Value, base_dir: &Path, overrides: &[(String, String)], source: &Path) -> Result<ScenarioConfig> {
    let mut doc = doc;
    let (config_doc, rest) = if doc.get("preset").is_some() {
        let mut rest = Vec::new();
        for (k, v) in overrides {
            let head = k.split('.').next().unwrap_or("");
            if doc.get(head).is_some() || PRESET_KEYS.contains(&head) {
                apply_override(&mut doc, k, v)?;
            } else {
                rest.push((k.clone(), v.clone()));
            }
        }
        let spec: PresetSpec = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{}: {e}", source.display())))?;
        let cfg = spec.resolve(base_dir)?;
        (serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?, rest)
    } else {
        (doc, overrides.to_vec())
    };
    let mut config_doc = config_doc;
    for (k, v) in &rest {
        apply_override(&mut config_doc, k, v)?;
    }
    serde_json::from_value(config_doc).map_err(|e| Error::Config(format!("{}: {e}", source.display())))
}

/// Reads a scenario file and resolves it with `overrides`. Returns the
/// configuration and the directory relative paths refer to.
pub fn load_scenario(path: &Path, overrides: &[(String, String)]) -> Result<(ScenarioConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| json_error(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = resolve_document(doc, &base, overrides, path)?;
    Ok((cfg, base))
}
