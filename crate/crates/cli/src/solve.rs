use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use blurvel_core::disambiguation::{disambiguate, Direction, DisambiguationOptions, FrameTriplet};
use blurvel_core::io::{self, DatasetManifest, SampleFiles, SolveRecord};
use blurvel_core::solver::{solve_twist, twist_to_velocity, SolveOptions};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ConfigError;
use crate::synth::DATASET_MANIFEST;

/// Expands dataset manifests, sample directories and sample manifests into
/// samples, ordered as given.
pub fn collect_samples(inputs: &[PathBuf]) -> Result<Vec<SampleFiles>> {
    let mut samples = Vec::new();
    for input in inputs {
        let dataset = if input.is_dir() {
            let candidate = input.join(DATASET_MANIFEST);
            candidate.is_file().then_some(candidate)
        } else {
            (input.file_name().and_then(|n| n.to_str()) == Some(DATASET_MANIFEST)).then(|| input.clone())
        };
        match dataset {
            Some(path) => {
                let manifest: DatasetManifest =
                    io::read_json(&path).with_context(|| format!("reading {}", path.display()))?;
                let root = path.parent().unwrap_or(Path::new("."));
                for rel in &manifest.samples {
                    let dir = root.join(rel);
                    samples.push(SampleFiles::load(&dir).with_context(|| format!("loading {}", dir.display()))?);
                }
            }
            None => samples.push(SampleFiles::load(input).with_context(|| format!("loading {}", input.display()))?),
        }
    }
    Ok(samples)
}

fn record_name(sample: &SampleFiles) -> String {
    format!("pred_{:06}.json", sample.manifest.index)
}

fn solve_one(sample: &SampleFiles, options: &SolveOptions, exposure: Option<f64>) -> Result<SolveRecord> {
    let flow = sample.flow_fw()?;
    let depth = sample.depth()?;
    let exposure_s = exposure.unwrap_or(sample.manifest.exposure_s);
    let report = solve_twist(&flow, &depth, &sample.manifest.intrinsics, options)?;
    let velocity = twist_to_velocity(&report.twist, exposure_s)?;
    Ok(SolveRecord::new(&report, &velocity, exposure_s, sample.manifest.timestamp_s))
}

/// Solves every sample, writing one JSON record per success. Failures are
/// reported after all samples ran; the first one is returned.
pub fn run_solve(inputs: &[PathBuf], out: &Path, stride: usize, exposure: Option<f64>) -> Result<usize> {
    if stride == 0 {
        return Err(ConfigError("stride must be at least 1".into()).into());
    }
    if let Some(e) = exposure {
        if !(e > 0.0 && e.is_finite()) {
            return Err(ConfigError(format!("exposure override must be positive, got {e}")).into());
        }
    }
    let samples = collect_samples(inputs)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let options = SolveOptions {
        stride,
        ..SolveOptions::default()
    };
    let outcomes: Vec<Result<()>> = samples
        .par_iter()
        .map(|sample| {
            let name = record_name(sample);
            let record = solve_one(sample, &options, exposure)
                .with_context(|| format!("sample {}", sample.dir.display()))?;
            io::write_json(out.join(&name), &record)?;
            eprintln!("solve: {} -> {name}", sample.dir.display());
            Ok(())
        })
        .collect();
    finish(outcomes)
}

fn finish(outcomes: Vec<Result<()>>) -> Result<usize> {
    let total = outcomes.len();
    let mut first = None;
    let mut failed = 0;
    for outcome in outcomes {
        if let Err(e) = outcome {
            eprintln!("error: {e:#}");
            failed += 1;
            first.get_or_insert(e);
        }
    }
    match first {
        Some(e) => Err(e.context(format!("{failed} of {total} samples failed"))),
        None => Ok(total),
    }
}

#[derive(Debug, Serialize)]
struct DisambiguationRecord {
    #[serde(flatten)]
    solve: SolveRecord,
    direction: Direction,
    error_fw: f64,
    error_bw: f64,
}

/// For every sample with both neighbours present, chooses between the
/// stored flow and its negation using the neighbouring blurred frames.
pub fn run_disambiguate(inputs: &[PathBuf], out: &Path, options: DisambiguationOptions) -> Result<usize> {
    let samples = collect_samples(inputs)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let solve_options = SolveOptions::default();
    let outcomes: Vec<Result<()>> = (1..samples.len().saturating_sub(1))
        .into_par_iter()
        .filter(|&i| {
            samples[i - 1].manifest.index + 1 == samples[i].manifest.index
                && samples[i].manifest.index + 1 == samples[i + 1].manifest.index
        })
        .map(|i| {
            let (prev, cur, next) = (&samples[i - 1], &samples[i], &samples[i + 1]);
            let m = &cur.manifest;
            let flow_fw = cur.flow_fw()?;
            let flow_bw = flow_fw.negated();
            let depth = cur.depth()?;
            let report = solve_twist(&flow_fw, &depth, &m.intrinsics, &solve_options)
                .with_context(|| format!("sample {}", cur.dir.display()))?;
            let twist_bw = report.twist.scaled(-1.0);
            let (img_prev, img_cur, img_next) = (prev.blurred()?, cur.blurred()?, next.blurred()?);
            let frames = FrameTriplet {
                prev: &img_prev,
                cur: &img_cur,
                next: &img_next,
                exposure_s: m.exposure_s,
                gap_prev_s: m.frame_start_s - prev.manifest.frame_start_s,
                gap_next_s: next.manifest.frame_start_s - m.frame_start_s,
            };
            let d = disambiguate(&frames, &flow_fw, &flow_bw, &report.twist, &twist_bw, &options)
                .with_context(|| format!("sample {}", cur.dir.display()))?;
            let mut chosen = report;
            chosen.twist = d.twist;
            let velocity = twist_to_velocity(&d.twist, m.exposure_s)?;
            let record = DisambiguationRecord {
                solve: SolveRecord::new(&chosen, &velocity, m.exposure_s, m.timestamp_s),
                direction: d.direction,
                error_fw: d.error_fw,
                error_bw: d.error_bw,
            };
            let name = record_name(cur);
            io::write_json(out.join(&name), &record)?;
            eprintln!("disambiguate: {} -> {:?}", cur.dir.display(), d.direction);
            Ok(())
        })
        .collect();
    finish(outcomes)
}
