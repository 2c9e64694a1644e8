use std::path::Path;

use anyhow::{Context, Result};
use blurvel_core::eval::{
    export_cdf, finite_difference_velocity, report_error_columns, rmse_per_axis, write_cdf_csv, zero_velocity_baseline,
    EvalReport, VelocityRecord, VelocitySeries,
};
use blurvel_core::geometry::Vec3;
use blurvel_core::gradcheck::{self, GradCheckReport, ToySystem};
use blurvel_core::io::{self, SolveRecord};
use serde::Serialize;

use crate::config::ConfigError;

pub const EVAL_REPORT: &str = "eval_report.json";
pub const BASELINE_REPORT: &str = "baseline_report.json";

/// Reads every `*.json` record in `dir`.
fn read_predictions(dir: &Path) -> Result<VelocitySeries> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            paths.push(path);
        }
    }
    paths.sort();
    let records = paths
        .iter()
        .map(|p| {
            let r: SolveRecord = io::read_json(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(VelocityRecord {
                timestamp: r.timestamp_s,
                omega: Vec3::from(r.omega),
                v: Vec3::from(r.v),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VelocitySeries::from_unsorted(records)?)
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub baseline: EvalReport,
}

/// Compares predictions against finite-difference velocities of the
/// ground-truth trajectory and writes reports and CDF tables into `out`.
pub fn run_eval(pred_dir: &Path, gt: &Path, out: &Path, tolerance: f64) -> Result<EvalOutcome> {
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(ConfigError(format!("tolerance must be non-negative, got {tolerance}")).into());
    }
    let poses = io::read_tum(gt).with_context(|| format!("reading {}", gt.display()))?;
    let gt_series = finite_difference_velocity(&poses)?;
    let pred = read_predictions(pred_dir)?;
    let report = rmse_per_axis(&pred, &gt_series, tolerance)?;
    let baseline = rmse_per_axis(&zero_velocity_baseline(&gt_series), &gt_series, tolerance)?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::write_json(out.join(EVAL_REPORT), &report)?;
    io::write_json(out.join(BASELINE_REPORT), &baseline)?;
    for (name, errors) in report_error_columns(&report) {
        write_cdf_csv(out.join(format!("cdf_{name}.csv")), &export_cdf(&errors)?)?;
    }
    Ok(EvalOutcome { report, baseline })
}

#[derive(Debug, Serialize)]
pub struct GradCheckSummary {
    pub systems: Vec<GradCheckReport>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn run_gradcheck(count: usize, size: usize, seed: u64) -> Result<GradCheckSummary> {
    if count == 0 || size < 3 {
        return Err(ConfigError("need at least one system of size 3 or more".into()).into());
    }
    let systems = (0..count as u64)
        .map(|k| {
            let system = ToySystem::random(seed.wrapping_add(k), size)?;
            gradcheck::check(&system)
        })
        .collect::<blurvel_core::Result<Vec<_>>>()?;
    let max_error = systems.iter().map(GradCheckReport::max_error).fold(0.0, f64::max);
    Ok(GradCheckSummary {
        passed: systems.iter().all(GradCheckReport::passed),
        systems,
        max_error,
        tolerance: gradcheck::TOLERANCE,
    })
}
