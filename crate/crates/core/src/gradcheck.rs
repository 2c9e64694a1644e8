//! Central-difference verification of the solver's vector-Jacobian products.

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{DepthMap, FlowField, Intrinsics, Twist, Vec3};
use crate::motion_field::flow_from_twist;
use crate::solver::{solution_gradients, solve_twist, SolveOptions};

/// Relative finite-difference step: `h = STEP * max(|v|, 1)`.
pub const STEP: f64 = 1e-5;
/// Pass threshold on `|analytic - numeric| / max(1, |analytic|)`.
pub const TOLERANCE: f64 = 1e-5;

/// A small flow/depth pair with residuals, and an upstream gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySystem {
    pub flow: FlowField,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub adjoint: Vector6<f64>,
}

impl ToySystem {
    /// Seeded random scene: depth in `[1, 4]` m, a random twist plus up to
    /// 0.2 px of flow noise so the residual is non-zero.
    pub fn random(seed: u64, size: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intrinsics = Intrinsics::centered(2.5 * size as f64, size, size)?;
        let depth = DepthMap::from_fn(size, size, |_, _| Some(rng.random_range(1.0..4.0)))?;
        let mut v3 = |s: f64| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        let twist = Twist::new(v3(0.1), v3(0.05));
        let clean = flow_from_twist(&twist, &depth, &intrinsics)?;
        let flow = FlowField::from_fn(size, size, |x, y| {
            clean
                .get(x, y)
                .map(|v| [v[0] + rng.random_range(-0.2..0.2), v[1] + rng.random_range(-0.2..0.2)])
        })?;
        let adjoint = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        Ok(Self {
            flow,
            depth,
            intrinsics,
            adjoint,
        })
    }

    /// `adjoint . x(flow, depth)`, whose gradient is the VJP.
    fn objective(&self, flow: &FlowField, depth: &DepthMap) -> Result<f64> {
        let x = solve_twist(flow, depth, &self.intrinsics, &SolveOptions::default())?.twist;
        Ok(self.adjoint.dot(&x.to_vector()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_flow_error: f64,
    pub max_depth_error: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_flow_error.max(self.max_depth_error)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= TOLERANCE
    }
}

fn metric(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares every flow and depth component of the analytic VJP against
/// central differences of the solved objective.
pub fn check(system: &ToySystem) -> Result<GradCheckReport> {
    let grads = solution_gradients(
        &system.flow,
        &system.depth,
        &system.intrinsics,
        &SolveOptions::default(),
        &system.adjoint,
    )?;
    let (width, height) = system.flow.dims();
    let mut report = GradCheckReport {
        coordinates: 0,
        max_flow_error: 0.0,
        max_depth_error: 0.0,
    };
    for y in 0..height {
        for x in 0..width {
            if let Some(v) = system.flow.get(x, y) {
                for c in 0..2 {
                    let h = STEP * v[c].abs().max(1.0);
                    let shifted = |delta: f64| {
                        let mut f = system.flow.clone();
                        let mut w = v;
                        w[c] += delta;
                        f.set(x, y, Some(w));
                        system.objective(&f, &system.depth)
                    };
                    let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
                    let err = metric(grads.flow_at(x, y)[c], numeric);
                    report.max_flow_error = report.max_flow_error.max(err);
                    report.coordinates += 1;
                }
            }
            if let Some(d) = system.depth.get(x, y) {
                let h = STEP * d.abs().max(1.0);
                let plus = system.objective(&system.flow, &system.depth.with_value(x, y, d + h)?)?;
                let minus = system.objective(&system.flow, &system.depth.with_value(x, y, d - h)?)?;
                let err = metric(grads.depth_at(x, y), (plus - minus) / (2.0 * h));
                report.max_depth_error = report.max_depth_error.max(err);
                report.coordinates += 1;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_systems_are_seeded() {
        assert_eq!(ToySystem::random(3, 8).unwrap(), ToySystem::random(3, 8).unwrap());
        assert_ne!(ToySystem::random(3, 8).unwrap(), ToySystem::random(4, 8).unwrap());
    }

    #[test]
    fn analytic_gradients_pass() {
        let report = check(&ToySystem::random(1, 8).unwrap()).unwrap();
        assert_eq!(report.coordinates, 8 * 8 * 3);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        assert!(metric(2.0, 2.0 + 3e-5) > TOLERANCE);
        assert!(metric(0.5, 0.5 + 3e-6) <= TOLERANCE);
    }
}
