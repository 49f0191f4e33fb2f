//! The scenario time loop with output cadence and diagnostics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::advance;
use crate::model::total_densities;
use crate::observables::{compartment_totals, region_totals, reproduction_number, TimeSeriesRecord};
use crate::output::{timeseries_csv, vtk_snapshot, write_text, ConservationDrift, RunReport};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Replaces the scenario's CFL number.
    pub cfl: Option<f64>,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub series: Vec<TimeSeriesRecord>,
    /// Per region, in configuration order.
    pub regions: Vec<(String, Vec<TimeSeriesRecord>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Stop {
    t: f64,
    output: bool,
    snapshot: bool,
}

fn cadence(start: f64, end: f64, step: f64) -> Vec<f64> {
    let eps = 1e-9 * step;
    let mut out = Vec::new();
    let mut k = 1usize;
    loop {
        let t = start + k as f64 * step;
        if t >= end - eps {
            break;
        }
        out.push(t);
        k += 1;
    }
    out.push(end);
    out
}

fn schedule(start: f64, end: f64, output: f64, snapshot: Option<f64>) -> Vec<Stop> {
    let mut stops: Vec<Stop> = cadence(start, end, output)
        .into_iter()
        .map(|t| Stop { t, output: true, snapshot: false })
        .collect();
    if let Some(s) = snapshot {
        let tol = 1e-9 * s.min(output);
        for t in cadence(start, end, s) {
            match stops.iter_mut().find(|x| (x.t - t).abs() <= tol) {
                Some(x) => x.snapshot = true,
                None => stops.push(Stop { t, output: false, snapshot: true }),
            }
        }
        stops.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    stops
}

fn record(scn: &Scenario, t: f64) -> Result<(TimeSeriesRecord, Vec<TimeSeriesRecord>)> {
    let sys = &scn.system;
    let totals = compartment_totals(&sys.mesh, &sys.set, &scn.state, &scn.urban)?;
    let dens = total_densities(&scn.state, &scn.urban, &sys.set);
    let r0 = reproduction_number(&sys.mesh, &sys.fields, &dens)?;
    let mut regions = Vec::with_capacity(scn.regions.len());
    for r in &scn.regions {
        let tot = region_totals(&sys.mesh, &sys.set, &scn.state, &scn.urban, &r.cells)?;
        regions.push(TimeSeriesRecord {
            t,
            totals: tot,
            r0: subset_r0(scn, &r.cells, &dens)?,
        });
    }
    Ok((TimeSeriesRecord { t, totals, r0 }, regions))
}

/// Reproduction number restricted to `cells`.
fn subset_r0(scn: &Scenario, cells: &[usize], dens: &[f64]) -> Result<Option<f64>> {
    let sys = &scn.system;
    let nc = sys.fields.kind.count();
    let mut sub = vec![0.0; dens.len()];
    for &k in cells {
        sub[k * nc..(k + 1) * nc].copy_from_slice(&dens[k * nc..(k + 1) * nc]);
    }
    reproduction_number(&sys.mesh, &sys.fields, &sub)
}

fn drift(series: &[TimeSeriesRecord]) -> ConservationDrift {
    let rel = |f: &dyn Fn(&TimeSeriesRecord) -> f64| {
        let p0 = f(&series[0]);
        let d = series.iter().map(|r| (f(r) - p0).abs()).fold(0.0, f64::max);
        if p0 > 0.0 {
            d / p0
        } else {
            d
        }
    };
    ConservationDrift {
        commuter: rel(&|r| r.totals.commuter_population()),
        urban: rel(&|r| r.totals.urban_population()),
    }
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Runs `scn` from its start to its final time, advancing it in place.
pub fn run(scn: &mut Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    let clock = Instant::now();
    let time = scn.time.clone();
    let cfl = opts.cfl.unwrap_or(time.cfl);
    if !(cfl > 0.0) {
        return Err(Error::Argument(format!("cfl {cfl} must be positive")));
    }
    let dt_max = time.dt_max.unwrap_or(f64::INFINITY);
    let kind = scn.system.fields.kind;
    let mut manifest = Vec::new();
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if !scn.regions.is_empty() {
            let rd = dir.join("regions");
            std::fs::create_dir_all(&rd).map_err(|e| Error::io(&rd, e))?;
        }
    }
    let mut snap = 0usize;
    let mut snapshot = |scn: &Scenario, t: f64, manifest: &mut Vec<String>| -> Result<()> {
        if let Some(dir) = &opts.out_dir {
            let name = format!("snap_{snap}.vtk");
            let sys = &scn.system;
            let text = vtk_snapshot(&sys.mesh, &sys.fields, &sys.set, &scn.state, &scn.urban, &format!("{} t = {t:?}", scn.id))?;
            write_text(&out_path(dir, &name), &text)?;
            manifest.push(name);
        }
        snap += 1;
        Ok(())
    };

    let (first, first_regions) = record(scn, time.start)?;
    let mut series = vec![first];
    let mut regions: Vec<(String, Vec<TimeSeriesRecord>)> = scn
        .regions
        .iter()
        .zip(first_regions)
        .map(|(r, rec)| (r.name.clone(), vec![rec]))
        .collect();
    if time.snapshot_interval.is_some() {
        snapshot(scn, time.start, &mut manifest)?;
    }
    let mut steps = 0;
    let mut fallbacks = 0;
    let mut last_fallback = None;
    let mut t = time.start;
    for stop in schedule(time.start, time.final_time, time.output_interval, time.snapshot_interval) {
        let stats = {
            let Scenario { system, state, urban, .. } = &mut *scn;
            advance(system, state, urban, t, stop.t, cfl, dt_max, |tt, _, _, s| {
                if s.positivity_fallbacks > 0 {
                    last_fallback = Some(tt);
                }
                Ok(())
            })?
        };
        steps += stats.steps;
        fallbacks += stats.positivity_fallbacks;
        t = stop.t;
        if stop.output {
            let (rec, regs) = record(scn, t)?;
            series.push(rec);
            for (r, rec) in regions.iter_mut().zip(regs) {
                r.1.push(rec);
            }
        }
        if stop.snapshot {
            snapshot(scn, t, &mut manifest)?;
        }
    }

    let undefined_r0 = series.iter().filter(|r| r.r0.is_none()).count();
    let mut warnings = Vec::new();
    if fallbacks > 0 {
        warnings.push(format!(
            "{fallbacks} positivity fallbacks, last at t = {}",
            last_fallback.map(|t| format!("{t:?}")).unwrap_or_default()
        ));
    }
    if undefined_r0 > 0 {
        warnings.push(format!("reproduction number undefined at {undefined_r0} output times"));
    }
    if let Some(dir) = &opts.out_dir {
        write_text(&out_path(dir, "timeseries.csv"), &timeseries_csv(kind, &series))?;
        manifest.push("timeseries.csv".into());
        for (name, recs) in &regions {
            let rel = format!("regions/{name}.csv");
            write_text(&out_path(dir, &rel), &timeseries_csv(kind, recs))?;
            manifest.push(rel);
        }
        manifest.push("report.json".into());
    }
    let report = RunReport {
        scenario: scn.id.clone(),
        wall_time_s: clock.elapsed().as_secs_f64(),
        steps,
        final_time: t,
        manifest,
        conservation_drift: drift(&series),
        positivity_fallbacks: fallbacks,
        last_fallback_time: last_fallback,
        undefined_r0,
        warnings,
    };
    if let Some(dir) = &opts.out_dir {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
        write_text(&out_path(dir, "report.json"), &text)?;
    }
    Ok(RunOutcome { report, series, regions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{preset_test1, preset_test2, Limit};

    #[test]
    fn schedule_merges_cadences() {
        let s = schedule(0.0, 1.0, 0.25, Some(0.5));
        let ts: Vec<f64> = s.iter().map(|x| x.t).collect();
        assert_eq!(ts, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.iter().filter(|x| x.snapshot).count(), 2);
        let s = schedule(0.0, 1.0, 0.3, Some(0.45));
        assert!(s.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(s.last().unwrap().t, 1.0);
        assert!(s.last().unwrap().output && s.last().unwrap().snapshot);
        assert_eq!(cadence(0.0, 0.1, 0.1), vec![0.1]);
    }

    #[test]
    fn short_run_writes_manifest_and_conserves() {
        let mut cfg = preset_test2(Limit::Parabolic, 12);
        cfg.time.final_time = 0.2;
        cfg.time.output_interval = 0.05;
        cfg.time.snapshot_interval = Some(0.1);
        let mut scn = cfg.build(Path::new(".")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run(
            &mut scn,
            &RunOptions {
                out_dir: Some(dir.path().to_path_buf()),
                cfl: None,
            },
        )
        .unwrap();
        assert_eq!(out.series.len(), 5);
        assert_eq!(out.regions.len(), 3);
        for f in &out.report.manifest {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(out.report.manifest.contains(&"snap_2.vtk".to_string()));
        assert!(out.report.manifest.contains(&"regions/B.csv".to_string()));
        assert!(out.report.conservation_drift.commuter < 1e-12);
        assert!(out.report.conservation_drift.urban < 1e-12);
        assert_eq!(out.report.final_time, 0.2);
        let csv = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
        assert!(csv.starts_with("t,S,I,R,S_u,I_u,R_u,R0\n0.0,"));
    }

    #[test]
    fn identical_runs_give_identical_series() {
        let go = || {
            let mut cfg = preset_test1(10.0, Limit::Hyperbolic, 10);
            cfg.time.final_time = 0.5;
            let mut scn = cfg.build(Path::new(".")).unwrap();
            timeseries_csv(scn.system.fields.kind, &run(&mut scn, &RunOptions::default()).unwrap().series)
        };
        assert_eq!(go(), go());
    }
}
