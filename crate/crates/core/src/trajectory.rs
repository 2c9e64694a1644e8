//! Continuous camera trajectories that drive blur synthesis.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blur::split_at_pose_jumps;
use crate::error::{Error, Result};
use crate::geometry::{right_jacobian, Pose, Rotation, TimedPose, Vec3};

/// A camera-to-world pose as a function of time in seconds.
pub trait Trajectory: Sync {
    fn pose_at(&self, t: f64) -> Result<Pose>;
}

#[derive(Debug, Clone, PartialEq)]
struct Harmonic {
    freq_hz: f64,
    lin_amp: Vec3,
    lin_phase: Vec3,
    ang_amp: Vec3,
    ang_phase: Vec3,
}

/// Sum-of-sinusoids motion: translation `c + sum a sin(2 pi f t + phi)` and
/// rotation `exp(sum b sin(2 pi f t + psi))`, per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTrajectory {
    origin: Vec3,
    harmonics: Vec<Harmonic>,
}

const HARMONICS: usize = 3;

impl SmoothTrajectory {
    /// A camera that never moves.
    pub fn stationary(origin: Vec3) -> Self {
        Self {
            origin,
            harmonics: Vec::new(),
        }
    }

    /// Seeded random motion whose per-axis speed never exceeds
    /// `linear_speed` (m/s) and whose per-axis rotation-vector rate never
    /// exceeds `angular_speed` (rad/s).
    pub fn random(seed: u64, origin: Vec3, linear_speed: f64, angular_speed: f64) -> Result<Self> {
        if !(linear_speed >= 0.0 && angular_speed >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "speeds must be non-negative, got {linear_speed} and {angular_speed}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vec3 = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
        };
        let harmonics = (0..HARMONICS)
            .map(|_| {
                let freq_hz = rng.random_range(0.2..1.0);
                let w = TAU * freq_hz * HARMONICS as f64;
                Harmonic {
                    freq_hz,
                    lin_amp: vec3(&mut rng, -1.0, 1.0) * (linear_speed / w),
                    lin_phase: vec3(&mut rng, 0.0, TAU),
                    ang_amp: vec3(&mut rng, -1.0, 1.0) * (angular_speed / w),
                    ang_phase: vec3(&mut rng, 0.0, TAU),
                }
            })
            .collect();
        Ok(Self { origin, harmonics })
    }

    fn position_and_rate(&self, t: f64) -> (Vec3, Vec3, Vec3, Vec3) {
        let mut p = self.origin;
        let mut dp = Vec3::zeros();
        let mut phi = Vec3::zeros();
        let mut dphi = Vec3::zeros();
        for h in &self.harmonics {
            let w = TAU * h.freq_hz;
            for i in 0..3 {
                let a = w * t + h.lin_phase[i];
                p[i] += h.lin_amp[i] * a.sin();
                dp[i] += h.lin_amp[i] * w * a.cos();
                let b = w * t + h.ang_phase[i];
                phi[i] += h.ang_amp[i] * b.sin();
                dphi[i] += h.ang_amp[i] * w * b.cos();
            }
        }
        (p, dp, phi, dphi)
    }

    /// Instantaneous `(omega, v)` in the camera frame at time `t`.
    pub fn body_velocity(&self, t: f64) -> (Vec3, Vec3) {
        let (_, dp, phi, dphi) = self.position_and_rate(t);
        let r = Rotation::from_axis_angle(&phi);
        (right_jacobian(&phi) * dphi, r.transpose() * dp)
    }
}

impl Trajectory for SmoothTrajectory {
    fn pose_at(&self, t: f64) -> Result<Pose> {
        if !t.is_finite() {
            return Err(Error::InvalidParameter(format!("time {t}")));
        }
        let (p, _, phi, _) = self.position_and_rate(t);
        Ok(Pose::new(Rotation::from_axis_angle(&phi), p))
    }
}

/// Poses at discrete timestamps, interpolated along the SE(3) geodesic in between.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    poses: Vec<TimedPose>,
    segments: Vec<Range<usize>>,
}

impl SampledTrajectory {
    pub fn new(poses: Vec<TimedPose>) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::TooFewPoses {
                needed: 2,
                got: poses.len(),
            });
        }
        if poses.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::InvalidSeries("pose timestamps must be strictly increasing".into()));
        }
        let segments = split_at_pose_jumps(&poses);
        Ok(Self { poses, segments })
    }

    pub fn poses(&self) -> &[TimedPose] {
        &self.poses
    }

    pub fn start(&self) -> f64 {
        self.poses[0].timestamp
    }

    pub fn end(&self) -> f64 {
        self.poses[self.poses.len() - 1].timestamp
    }

    /// Index `i` with `t_i <= t <= t_{i+1}`.
    fn bracket(&self, t: f64) -> Option<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return None;
        }
        let i = self.poses.partition_point(|p| p.timestamp <= t);
        Some(i.clamp(1, self.poses.len() - 1) - 1)
    }

    /// Whether `[a, b]` avoids every localization jump in the sequence.
    pub fn is_continuous(&self, a: f64, b: f64) -> bool {
        match (self.bracket(a), self.bracket(b)) {
            (Some(i), Some(j)) => self
                .segments
                .iter()
                .any(|s| s.contains(&i) && s.contains(&(j + 1).min(self.poses.len() - 1))),
            _ => false,
        }
    }
}

impl Trajectory for SampledTrajectory {
    fn pose_at(&self, t: f64) -> Result<Pose> {
        let i = self.bracket(t).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "time {t} outside trajectory span [{}, {}]",
                self.start(),
                self.end()
            ))
        })?;
        let (a, b) = (&self.poses[i], &self.poses[i + 1]);
        if t == a.timestamp {
            return Ok(a.pose);
        }
        if t == b.timestamp {
            return Ok(b.pose);
        }
        let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
        Ok(a.pose.interpolate(&b.pose, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_never_moves() {
        let traj = SmoothTrajectory::stationary(Vec3::new(0.1, 0.2, 0.3));
        assert_eq!(traj.pose_at(0.0).unwrap(), traj.pose_at(3.7).unwrap());
        let (w, v) = traj.body_velocity(1.0);
        assert_eq!(w, Vec3::zeros());
        assert_eq!(v, Vec3::zeros());
    }

    #[test]
    fn random_is_seeded() {
        let a = SmoothTrajectory::random(7, Vec3::zeros(), 1.0, 2.0).unwrap();
        let b = SmoothTrajectory::random(7, Vec3::zeros(), 1.0, 2.0).unwrap();
        let c = SmoothTrajectory::random(8, Vec3::zeros(), 1.0, 2.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(SmoothTrajectory::random(0, Vec3::zeros(), -1.0, 0.0).is_err());
    }

    #[test]
    fn body_velocity_matches_pose_differences() {
        let traj = SmoothTrajectory::random(3, Vec3::zeros(), 1.5, 2.5).unwrap();
        let (t, h) = (0.37, 1e-6);
        let (a, b) = (traj.pose_at(t - h).unwrap(), traj.pose_at(t + h).unwrap());
        let mid = traj.pose_at(t).unwrap();
        let omega = (a.rotation.transpose() * b.rotation).log() / (2.0 * h);
        let v = mid.rotation.transpose() * (b.translation - a.translation) / (2.0 * h);
        let (w_exact, v_exact) = traj.body_velocity(t);
        assert!((omega - w_exact).norm() < 1e-6);
        assert!((v - v_exact).norm() < 1e-6);
        assert!(w_exact.norm() <= 2.5 * 3f64.sqrt());
        assert!(v_exact.norm() <= 1.5 * 3f64.sqrt());
    }

    #[test]
    fn sampled_interpolation() {
        let at = |t: f64, x: f64, yaw: f64| TimedPose {
            timestamp: t,
            pose: Pose::new(Rotation::from_axis_angle(&Vec3::new(0.0, yaw, 0.0)), Vec3::new(x, 0.0, 0.0)),
        };
        let traj = SampledTrajectory::new(vec![at(0.0, 0.0, 0.0), at(1.0, 1.0, 0.2), at(2.0, 1.0, 0.2)]).unwrap();
        let mid = traj.pose_at(0.5).unwrap();
        assert!((mid.translation.x - 0.5).abs() < 1e-15);
        assert!((mid.rotation.log().y - 0.1).abs() < 1e-15);
        assert_eq!(traj.pose_at(1.0).unwrap(), traj.poses()[1].pose);
        assert_eq!(traj.pose_at(2.0).unwrap(), traj.poses()[2].pose);
        assert!(traj.pose_at(2.5).is_err());
        assert!(traj.pose_at(-0.1).is_err());
        assert!(SampledTrajectory::new(vec![at(0.0, 0.0, 0.0)]).is_err());
        assert!(SampledTrajectory::new(vec![at(1.0, 0.0, 0.0), at(1.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn continuity_across_jumps() {
        let at = |t: f64, x: f64| TimedPose { timestamp: t, pose: Pose::new(Rotation::identity(), Vec3::new(x, 0.0, 0.0)) };
        let dt = 1.0 / 30.0;
        let traj = SampledTrajectory::new(vec![at(0.0, 0.0), at(dt, 0.01), at(2.0 * dt, 1.0), at(3.0 * dt, 1.01)]).unwrap();
        assert!(traj.is_continuous(0.0, 0.9 * dt));
        assert!(traj.is_continuous(2.1 * dt, 2.9 * dt));
        assert!(!traj.is_continuous(0.5 * dt, 2.5 * dt));
        assert!(!traj.is_continuous(1.1 * dt, 1.9 * dt));
        assert!(!traj.is_continuous(0.0, 10.0));
    }
}
