use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mkepi::error::{Error, Result};
use mkepi::harness::{
    ap_mesh, ap_study, benchmark_base, smooth_convergence, ConvergenceTable, Regime, SmoothProblem, AP_DIFFUSION, AP_TAUS,
    CONVERGENCE_CHIS, CONVERGENCE_PLAN,
};
use mkepi::mesh::{read_mesh, Mesh};
use mkepi::runner::{run, RunOptions};
use mkepi::scenario::{load_scenario, parse_override};

#[derive(Parser)]
#[command(name = "mkepi", version, about = "Multiscale kinetic SIR/SEIR simulator on unstructured meshes")]
struct Cli {
    /// Worker threads for the cell loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write time series, snapshots and a report.
    Run(RunArgs),
    /// Self-convergence study of the smooth benchmark.
    Converge(ConvergeArgs),
    /// Distance between the kinetic solver and its diffusion limit.
    ApCheck(ApArgs),
    /// Mesh statistics of a scenario or mesh file.
    MeshInfo(MeshArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON document (full configuration or preset).
    #[arg(long)]
    scenario: PathBuf,
    /// `key.path=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cfl: Option<f64>,
    /// Gauss-Legendre nodes per quadrant.
    #[arg(long)]
    ordinates: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Hyperbolic,
    Intermediate,
    Diffusive,
    All,
}

#[derive(Args)]
struct ConvergeArgs {
    #[arg(long, value_enum, default_value = "all")]
    regime: RegimeArg,
    /// Base squares per side; defaults to 8, 8 and 3 for the three regimes.
    #[arg(long)]
    base: Option<usize>,
    /// Refinement factors, comma separated.
    #[arg(long, value_delimiter = ',')]
    chis: Option<Vec<usize>>,
    #[arg(long)]
    ordinates: Option<usize>,
    #[arg(long)]
    cfl: Option<f64>,
    /// Writes `convergence.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ApArgs {
    /// Relaxation times, comma separated.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// Diffusion coefficient held fixed.
    #[arg(long, default_value_t = AP_DIFFUSION)]
    diffusion: f64,
    #[arg(long)]
    ordinates: Option<usize>,
    #[arg(long)]
    cfl: Option<f64>,
    /// Writes `ap.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, conflicts_with = "mesh", required_unless_present = "mesh")]
    scenario: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Mesh file in the text format.
    #[arg(long)]
    mesh: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Converge(a) => cmd_converge(a),
        Command::ApCheck(a) => cmd_ap(a),
        Command::MeshInfo(a) => cmd_mesh_info(a),
    }
}

fn overrides(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter().map(|s| parse_override(s)).collect()
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let p = dir.join(name);
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&p, s).map_err(|e| io_error(&p, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut sets = overrides(&a.sets)?;
    if let Some(n) = a.ordinates {
        sets.push(("model.ordinates".into(), n.to_string()));
    }
    let (cfg, base) = load_scenario(&a.scenario, &sets)?;
    let mut scn = cfg.build(&base)?;
    let out = run(
        &mut scn,
        &RunOptions {
            out_dir: a.out.clone(),
            cfl: a.cfl,
        },
    )?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    print_json(&serde_json::to_value(&out.report).map_err(|e| Error::Config(e.to_string()))?)
}

fn regimes(r: RegimeArg) -> Vec<(Regime, usize)> {
    match r {
        RegimeArg::Hyperbolic => vec![CONVERGENCE_PLAN[0]],
        RegimeArg::Intermediate => vec![CONVERGENCE_PLAN[1]],
        RegimeArg::Diffusive => vec![CONVERGENCE_PLAN[2]],
        RegimeArg::All => CONVERGENCE_PLAN.to_vec(),
    }
}

fn table_text(label: &str, base: usize, t: &ConvergenceTable) -> String {
    let mut s = format!("{label}  base {base}x{base}, reference chi {}\n", t.reference_chi);
    s.push_str(&format!("{:>4} {:>7} {:>10}", "chi", "cells", "h"));
    for q in &t.quantities {
        s.push_str(&format!(" {:>11} {:>6}", format!("L1({q})"), "order"));
    }
    s.push('\n');
    for r in &t.rows {
        s.push_str(&format!("{:>4} {:>7} {:>10.4e}", r.chi, r.cells, r.h));
        for (e, o) in r.errors.iter().zip(&r.orders) {
            let o = o.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
            s.push_str(&format!(" {e:>11.4e} {o:>6}"));
        }
        s.push('\n');
    }
    s
}

fn cmd_converge(a: ConvergeArgs) -> Result<()> {
    let chis = a.chis.unwrap_or_else(|| CONVERGENCE_CHIS.to_vec());
    if chis.len() < 2 {
        return Err(Error::Argument("at least two refinement factors are needed".into()));
    }
    let mut results = Vec::new();
    for (regime, nb) in regimes(a.regime) {
        let nb = a.base.unwrap_or(nb);
        let mut p = SmoothProblem::new(regime);
        if let Some(n) = a.ordinates {
            p.nodes = n;
        }
        if let Some(c) = a.cfl {
            p.cfl = c;
        }
        let t = smooth_convergence(&benchmark_base(nb)?, &chis, &p)?;
        print!("{}", table_text(&regime.label(), nb, &t));
        results.push(json!({ "regime": regime, "base": nb, "table": t }));
    }
    if let Some(dir) = &a.out {
        write_json(dir, "convergence.json", &json!(results))?;
    }
    Ok(())
}

fn cmd_ap(a: ApArgs) -> Result<()> {
    let taus = a.taus.unwrap_or_else(|| AP_TAUS.to_vec());
    let mut p = SmoothProblem::new(Regime::HYPERBOLIC);
    if let Some(n) = a.ordinates {
        p.nodes = n;
    }
    if let Some(c) = a.cfl {
        p.cfl = c;
    }
    let rows = ap_study(&ap_mesh()?, &p, a.diffusion, &taus)?;
    println!("{:>10} {:>10} {:>12} {:>12}", "tau", "lambda^2", "L1", "relative");
    for r in &rows {
        println!("{:>10.1e} {:>10.1e} {:>12.4e} {:>12.4e}", r.tau, r.lambda_sq, r.distance, r.relative);
    }
    let monotone = rows.windows(2).all(|w| w[1].relative < w[0].relative);
    println!("monotone decrease: {monotone}");
    if let Some(dir) = &a.out {
        write_json(dir, "ap.json", &json!({ "diffusion": a.diffusion, "rows": rows, "monotone": monotone }))?;
    }
    Ok(())
}

fn mesh_summary(m: &Mesh) -> serde_json::Value {
    let hs: Vec<f64> = m.cells.iter().map(|c| c.h()).collect();
    let mut shapes = std::collections::BTreeMap::new();
    for c in &m.cells {
        *shapes.entry(c.vertices.len().to_string()).or_insert(0usize) += 1;
    }
    json!({
        "vertices": m.vertices.len(),
        "cells": m.n_cells(),
        "edges": m.edges.len(),
        "boundary_edges": m.edges.iter().filter(|e| e.right.is_none()).count(),
        "cells_by_vertex_count": shapes,
        "total_area": m.total_area(),
        "h_min": hs.iter().cloned().fold(f64::INFINITY, f64::min),
        "h_max": hs.iter().cloned().fold(0.0, f64::max),
        "mesh_size": m.mesh_size(),
    })
}

fn cmd_mesh_info(a: MeshArgs) -> Result<()> {
    let mesh = match (&a.mesh, &a.scenario) {
        (Some(p), _) => read_mesh(p)?,
        (None, Some(s)) => {
            let (cfg, base) = load_scenario(s, &overrides(&a.sets)?)?;
            cfg.mesh.build(&base)?
        }
        (None, None) => return Err(Error::Argument("--scenario or --mesh is required".into())),
    };
    print_json(&mesh_summary(&mesh))
}
