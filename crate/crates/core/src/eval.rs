//! Sequence-level velocity evaluation: per-axis RMSE, the zero-velocity
//! baseline, finite-difference velocities from poses and error CDFs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relative_pose, TimedPose, Vec3};

/// Default nearest-timestamp matching tolerance in seconds.
pub const MATCH_TOLERANCE_S: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityRecord {
    pub timestamp: f64,
    /// rad/s, camera frame
    pub omega: Vec3,
    /// m/s, camera frame
    pub v: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VelocitySeries {
    records: Vec<VelocityRecord>,
}

impl VelocitySeries {
    pub fn new(records: Vec<VelocityRecord>) -> Result<Self> {
        if let Some(r) = records
            .iter()
            .find(|r| !(r.timestamp.is_finite() && r.omega.iter().chain(r.v.iter()).all(|c| c.is_finite())))
        {
            return Err(Error::InvalidSeries(format!("non-finite record at t = {}", r.timestamp)));
        }
        if let Some(w) = records.windows(2).find(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::InvalidSeries(format!(
                "timestamps not strictly increasing: {} then {}",
                w[0].timestamp, w[1].timestamp
            )));
        }
        Ok(Self { records })
    }

    /// Sorts by timestamp before validating.
    pub fn from_unsorted(mut records: Vec<VelocityRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Self::new(records)
    }

    pub fn records(&self) -> &[VelocityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the record nearest to `t`, if within `tolerance`.
    pub fn nearest(&self, t: f64, tolerance: f64) -> Option<usize> {
        let i = self.records.partition_point(|r| r.timestamp < t);
        [i.checked_sub(1), (i < self.records.len()).then_some(i)]
            .into_iter()
            .flatten()
            .map(|j| (j, (self.records[j].timestamp - t).abs()))
            .filter(|&(_, d)| d <= tolerance)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }
}

/// Absolute per-axis errors of one matched frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub timestamp: f64,
    pub omega: [f64; 3],
    pub v: [f64; 3],
}

impl FrameError {
    pub fn omega_norm(&self) -> f64 {
        Vec3::from(self.omega).norm()
    }

    pub fn v_norm(&self) -> f64 {
        Vec3::from(self.v).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// rad/s per axis
    pub rmse_omega: [f64; 3],
    /// m/s per axis
    pub rmse_v: [f64; 3],
    pub matched: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
    pub frames: Vec<FrameError>,
}

/// Per-axis RMSE over predictions matched to the nearest ground-truth
/// timestamp within `tolerance` seconds.
pub fn rmse_per_axis(pred: &VelocitySeries, gt: &VelocitySeries, tolerance: f64) -> Result<EvalReport> {
    let mut used = vec![false; gt.len()];
    let mut frames = Vec::new();
    for p in pred.records() {
        let Some(j) = gt.nearest(p.timestamp, tolerance) else {
            continue;
        };
        used[j] = true;
        let g = &gt.records()[j];
        let (dw, dv) = (p.omega - g.omega, p.v - g.v);
        frames.push(FrameError {
            timestamp: p.timestamp,
            omega: dw.abs().into(),
            v: dv.abs().into(),
        });
    }
    if frames.is_empty() {
        return Err(Error::NoMatches);
    }
    let n = frames.len() as f64;
    let rms = |get: &dyn Fn(&FrameError) -> [f64; 3]| {
        let mut acc = [0.0; 3];
        for f in &frames {
            let e = get(f);
            for k in 0..3 {
                acc[k] += e[k] * e[k];
            }
        }
        acc.map(|s| (s / n).sqrt())
    };
    Ok(EvalReport {
        rmse_omega: rms(&|f| f.omega),
        rmse_v: rms(&|f| f.v),
        matched: frames.len(),
        unmatched_pred: pred.len() - frames.len(),
        unmatched_gt: used.iter().filter(|&&u| !u).count(),
        frames,
    })
}

/// A predictor that always reports zero motion, at the ground-truth timestamps.
pub fn zero_velocity_baseline(gt: &VelocitySeries) -> VelocitySeries {
    VelocitySeries {
        records: gt
            .records()
            .iter()
            .map(|r| VelocityRecord {
                timestamp: r.timestamp,
                omega: Vec3::zeros(),
                v: Vec3::zeros(),
            })
            .collect(),
    }
}

/// Camera-frame velocities from camera-to-world poses: centred differences
/// at interior samples, one-sided differences at the two ends.
pub fn finite_difference_velocity(poses: &[TimedPose]) -> Result<VelocitySeries> {
    if poses.len() < 3 {
        return Err(Error::TooFewPoses {
            needed: 3,
            got: poses.len(),
        });
    }
    let last = poses.len() - 1;
    let records = (0..poses.len())
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == last => (last - 1, last),
                i => (i - 1, i + 1),
            };
            let (pa, pb) = (&poses[a], &poses[b]);
            let dt = pb.timestamp - pa.timestamp;
            if !(dt > 0.0) {
                return Err(Error::InvalidSeries(format!(
                    "pose timestamps not strictly increasing at {}",
                    pa.timestamp
                )));
            }
            let here = &poses[i].pose;
            Ok(VelocityRecord {
                timestamp: poses[i].timestamp,
                omega: relative_pose(&pa.pose, &pb.pose).rotation.log() / dt,
                v: here.rotation.transpose() * (pb.pose.translation - pa.pose.translation) / dt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    VelocitySeries::new(records)
}

/// Sorted `(error, cumulative fraction)` pairs.
pub fn export_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::Empty("no errors for a CDF"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect())
}

/// Named error columns of a report, for CDF export.
pub fn report_error_columns(report: &EvalReport) -> Vec<(&'static str, Vec<f64>)> {
    let col = |f: &dyn Fn(&FrameError) -> f64| report.frames.iter().map(f).collect::<Vec<_>>();
    vec![
        ("omega_x", col(&|e| e.omega[0])),
        ("omega_y", col(&|e| e.omega[1])),
        ("omega_z", col(&|e| e.omega[2])),
        ("omega_norm", col(&|e| e.omega_norm())),
        ("v_x", col(&|e| e.v[0])),
        ("v_y", col(&|e| e.v[1])),
        ("v_z", col(&|e| e.v[2])),
        ("v_norm", col(&|e| e.v_norm())),
    ]
}

pub fn write_cdf_csv(path: impl AsRef<Path>, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["error", "cum_fraction"])?;
    for (e, c) in rows {
        w.write_record([e.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Rotation};
    use proptest::prelude::*;

    fn rec(t: f64, w: [f64; 3], v: [f64; 3]) -> VelocityRecord {
        VelocityRecord {
            timestamp: t,
            omega: Vec3::from(w),
            v: Vec3::from(v),
        }
    }

    #[test]
    fn series_must_increase() {
        assert!(VelocitySeries::new(vec![rec(1.0, [0.0; 3], [0.0; 3]), rec(1.0, [0.0; 3], [0.0; 3])]).is_err());
        assert!(VelocitySeries::new(vec![rec(f64::NAN, [0.0; 3], [0.0; 3])]).is_err());
        let s = VelocitySeries::from_unsorted(vec![rec(2.0, [0.0; 3], [0.0; 3]), rec(1.0, [0.0; 3], [0.0; 3])]).unwrap();
        assert_eq!(s.records()[0].timestamp, 1.0);
    }

    #[test]
    fn nearest_respects_tolerance() {
        let s = VelocitySeries::new(vec![rec(0.0, [0.0; 3], [0.0; 3]), rec(0.1, [0.0; 3], [0.0; 3])]).unwrap();
        assert_eq!(s.nearest(0.0995, 1e-3), Some(1));
        assert_eq!(s.nearest(0.0004, 1e-3), Some(0));
        assert_eq!(s.nearest(0.05, 1e-3), None);
        assert_eq!(s.nearest(0.2, 1e-3), None);
    }

    #[test]
    fn identical_series_have_zero_error() {
        let gt = VelocitySeries::new(vec![rec(0.0, [1.0, 2.0, 3.0], [0.1, 0.2, 0.3]), rec(0.1, [-1.0, 0.5, 0.0], [0.0, 0.0, 1.0])]).unwrap();
        let r = rmse_per_axis(&gt, &gt, MATCH_TOLERANCE_S).unwrap();
        assert_eq!(r.rmse_omega, [0.0; 3]);
        assert_eq!(r.rmse_v, [0.0; 3]);
        assert_eq!((r.matched, r.unmatched_pred, r.unmatched_gt), (2, 0, 0));
    }

    #[test]
    fn hand_computed_rmse() {
        let gt = VelocitySeries::new(vec![rec(0.0, [1.0, 0.0, 0.0], [0.0; 3]), rec(1.0, [2.0, 0.0, 0.0], [0.0; 3])]).unwrap();
        let r = rmse_per_axis(&zero_velocity_baseline(&gt), &gt, MATCH_TOLERANCE_S).unwrap();
        assert!((r.rmse_omega[0] - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((r.rmse_omega[0] - 1.5811).abs() < 1e-4);
    }

    #[test]
    fn unmatched_frames_are_counted() {
        let gt = VelocitySeries::new(vec![rec(0.0, [1.0; 3], [0.0; 3]), rec(1.0, [0.0; 3], [0.0; 3]), rec(2.0, [0.0; 3], [0.0; 3])]).unwrap();
        let pred = VelocitySeries::new(vec![rec(0.0005, [1.0; 3], [0.0; 3]), rec(1.5, [0.0; 3], [0.0; 3])]).unwrap();
        let r = rmse_per_axis(&pred, &gt, MATCH_TOLERANCE_S).unwrap();
        assert_eq!((r.matched, r.unmatched_pred, r.unmatched_gt), (1, 1, 2));
        let far = VelocitySeries::new(vec![rec(0.5, [0.0; 3], [0.0; 3])]).unwrap();
        assert!(matches!(rmse_per_axis(&far, &gt, MATCH_TOLERANCE_S), Err(Error::NoMatches)));
        assert!(matches!(rmse_per_axis(&VelocitySeries::default(), &gt, MATCH_TOLERANCE_S), Err(Error::NoMatches)));
    }

    fn timed(t: f64, theta: Vec3, p: Vec3) -> TimedPose {
        TimedPose {
            timestamp: t,
            pose: Pose::new(Rotation::from_axis_angle(&theta), p),
        }
    }

    #[test]
    fn finite_differences_of_simple_motions() {
        let still: Vec<TimedPose> = (0..4).map(|k| timed(k as f64 / 30.0, Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 2.0, 3.0))).collect();
        for r in finite_difference_velocity(&still).unwrap().records() {
            assert_eq!(r.omega, Vec3::zeros());
            assert_eq!(r.v, Vec3::zeros());
        }
        let linear: Vec<TimedPose> = (0..5).map(|k| timed(k as f64 / 30.0, Vec3::zeros(), Vec3::new(0.1 * k as f64, 0.0, 0.0))).collect();
        for r in finite_difference_velocity(&linear).unwrap().records() {
            assert!((r.v - Vec3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
        }
        let spin: Vec<TimedPose> = (0..5).map(|k| timed(k as f64 / 30.0, Vec3::new(0.0, 0.0, 0.02 * k as f64), Vec3::zeros())).collect();
        for r in finite_difference_velocity(&spin).unwrap().records() {
            assert!((r.omega - Vec3::new(0.0, 0.0, 0.6)).norm() < 1e-12);
        }
        assert!(matches!(finite_difference_velocity(&still[..2]), Err(Error::TooFewPoses { needed: 3, got: 2 })));
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(export_cdf(&[0.7]).unwrap(), vec![(0.7, 1.0)]);
        assert_eq!(export_cdf(&[3.0, 1.0, 2.0]).unwrap(), vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert!(export_cdf(&[]).is_err());
    }

    #[test]
    fn cdf_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cdf.csv");
        write_cdf_csv(&path, &export_cdf(&[0.5, 0.25]).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "error,cum_fraction\n0.25,0.5\n0.5,1\n");
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(errors in proptest::collection::vec(0.0..10.0f64, 1..1000)) {
            let cdf = export_cdf(&errors).unwrap();
            prop_assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(cdf.last().unwrap().1, 1.0);
        }

        #[test]
        fn rmse_ignores_sign_and_order(vals in proptest::collection::vec(-5.0..5.0f64, 2..40)) {
            let gt = VelocitySeries::new(vals.iter().enumerate().map(|(i, &x)| rec(i as f64, [x, 0.0, 0.0], [0.0, x, 0.0])).collect()).unwrap();
            let plus = VelocitySeries::new(vals.iter().enumerate().map(|(i, &x)| rec(i as f64, [x + 0.5, 0.0, 0.0], [0.0, x - 0.25, 0.0])).collect()).unwrap();
            let minus = VelocitySeries::new(vals.iter().enumerate().map(|(i, &x)| rec(i as f64, [x - 0.5, 0.0, 0.0], [0.0, x + 0.25, 0.0])).collect()).unwrap();
            let a = rmse_per_axis(&plus, &gt, MATCH_TOLERANCE_S).unwrap();
            let b = rmse_per_axis(&minus, &gt, MATCH_TOLERANCE_S).unwrap();
            prop_assert!((a.rmse_omega[0] - b.rmse_omega[0]).abs() < 1e-12);
            prop_assert!((a.rmse_omega[0] - 0.5).abs() < 1e-12);
            prop_assert!((a.rmse_v[1] - 0.25).abs() < 1e-12);
        }
    }
}
