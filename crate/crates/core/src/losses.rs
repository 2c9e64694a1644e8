//! Training losses with temporal-direction reorientation of the labels.
//!
//! A blurred image does not reveal which end of the exposure came first, so
//! every supervised quantity has a forward and a backward label and the loss
//! compares the prediction with whichever label it agrees with.

use nalgebra::{Matrix3, Vector6};
use serde::{Deserialize, Serialize};

use crate::disambiguation::Direction;
use crate::error::{Error, Result};
use crate::geometry::{right_jacobian, DepthMap, FlowField, Intrinsics, Pose, Twist, Vec3};
use crate::solver::{solution_gradients, SolutionGradients, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_f: f64,
    pub lambda_d: f64,
    pub lambda_r: f64,
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_f: 1.0,
            lambda_d: 1.0,
            lambda_r: 1.0,
            lambda_t: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_f: f64, lambda_d: f64, lambda_r: f64, lambda_t: f64) -> Result<Self> {
        let w = Self {
            lambda_f,
            lambda_d,
            lambda_r,
            lambda_t,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_f, self.lambda_d, self.lambda_r, self.lambda_t];
        if all.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "loss weights must be finite and non-negative, got {all:?}"
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lambda_f: self.lambda_f * c,
            lambda_d: self.lambda_d * c,
            lambda_r: self.lambda_r * c,
            lambda_t: self.lambda_t * c,
        }
    }
}

fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Frobenius inner products `(<fw, pred>, <bw, pred>)` over pixels valid in all three fields.
pub fn flow_alignment(label_fw: &FlowField, label_bw: &FlowField, pred: &FlowField) -> Result<(f64, f64)> {
    check_dims(pred.dims(), label_fw.dims())?;
    check_dims(pred.dims(), label_bw.dims())?;
    let (mut fw, mut bw) = (0.0, 0.0);
    for i in 0..pred.vectors().len() {
        if !(pred.mask()[i] && label_fw.mask()[i] && label_bw.mask()[i]) {
            continue;
        }
        let p = pred.vectors()[i];
        let (a, b) = (label_fw.vectors()[i], label_bw.vectors()[i]);
        fw += a[0] * p[0] + a[1] * p[1];
        bw += b[0] * p[0] + b[1] * p[1];
    }
    Ok((fw, bw))
}

/// The forward label if it aligns strictly better with the prediction,
/// otherwise the backward label. One choice for the whole field.
pub fn reorient_flow<'a>(
    label_fw: &'a FlowField,
    label_bw: &'a FlowField,
    pred: &FlowField,
) -> Result<(&'a FlowField, Direction)> {
    let (fw, bw) = flow_alignment(label_fw, label_bw, pred)?;
    Ok(if fw > bw {
        (label_fw, Direction::Forward)
    } else {
        (label_bw, Direction::Backward)
    })
}

/// `lambda_F mean|F - h_f| + lambda_D mean|D - D_hat|`. Means run over
/// pixels valid in both operands; the flow mean also runs over both components.
pub fn l1_loss(
    pred_flow: &FlowField,
    label_fw: &FlowField,
    label_bw: &FlowField,
    pred_depth: &DepthMap,
    label_depth: &DepthMap,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    check_dims(pred_depth.dims(), label_depth.dims())?;
    check_dims(pred_flow.dims(), pred_depth.dims())?;
    let (label, _) = reorient_flow(label_fw, label_bw, pred_flow)?;

    let (mut flow_sum, mut flow_n) = (0.0, 0usize);
    for i in 0..pred_flow.vectors().len() {
        if pred_flow.mask()[i] && label.mask()[i] {
            let (p, l) = (pred_flow.vectors()[i], label.vectors()[i]);
            flow_sum += (p[0] - l[0]).abs() + (p[1] - l[1]).abs();
            flow_n += 2;
        }
    }
    let (mut depth_sum, mut depth_n) = (0.0, 0usize);
    for i in 0..pred_depth.values().len() {
        if pred_depth.mask()[i] && label_depth.mask()[i] {
            depth_sum += (pred_depth.values()[i] - label_depth.values()[i]).abs();
            depth_n += 1;
        }
    }
    if flow_n == 0 || depth_n == 0 {
        return Err(Error::Empty("no pixels valid in both prediction and label"));
    }
    Ok(weights.lambda_f * flow_sum / flow_n as f64 + weights.lambda_d * depth_sum / depth_n as f64)
}

/// Forward and backward pose labels for one exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLabels {
    pub fw: Pose,
    pub bw: Pose,
}

impl PoseLabels {
    /// The backward label is the exact inverse of the forward motion.
    pub fn from_forward(fw: Pose) -> Self {
        Self { fw, bw: fw.inverse() }
    }

    pub fn get(&self, direction: Direction) -> &Pose {
        match direction {
            Direction::Forward => &self.fw,
            Direction::Backward => &self.bw,
        }
    }
}

/// `lambda_R |R - R_c|_F^2 + lambda_t |t - t_c|^2` for one candidate.
pub fn pose_distance(pred: &Pose, label: &Pose, weights: &LossWeights) -> f64 {
    let dr = (pred.rotation.matrix() - label.rotation.matrix()).norm_squared();
    let dt = (pred.translation - label.translation).norm_squared();
    weights.lambda_r * dr + weights.lambda_t * dt
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLoss {
    pub value: f64,
    pub direction: Direction,
}

/// Pose loss against the label orientation closest to the prediction;
/// ties keep the forward label.
pub fn pose_loss(pred: &Pose, labels: &PoseLabels, weights: &LossWeights) -> Result<PoseLoss> {
    weights.validate()?;
    let fw = pose_distance(pred, &labels.fw, weights);
    let bw = pose_distance(pred, &labels.bw, weights);
    Ok(if bw < fw {
        PoseLoss {
            value: bw,
            direction: Direction::Backward,
        }
    } else {
        PoseLoss {
            value: fw,
            direction: Direction::Forward,
        }
    })
}

/// Gradient of [`pose_loss`] with respect to the twist vector
/// `[t, theta]` whose camera motion is the predicted pose.
pub fn pose_loss_gradient(
    pred: &Twist,
    labels: &PoseLabels,
    weights: &LossWeights,
) -> Result<(PoseLoss, Vector6<f64>)> {
    let pose = pred.camera_motion();
    let loss = pose_loss(&pose, labels, weights)?;
    let label = labels.get(loss.direction);
    let grad_t = 2.0 * weights.lambda_t * (pose.translation - label.translation);
    // |R - R_c|^2 = 6 - 2 tr(R_c^T R); perturbing R exp([w]x) changes the
    // trace by w . (M23 - M32, M31 - M13, M12 - M21) with M = R_c^T R.
    let m: Matrix3<f64> = label.rotation.matrix().transpose() * pose.rotation.matrix();
    let dtrace = Vec3::new(m[(1, 2)] - m[(2, 1)], m[(2, 0)] - m[(0, 2)], m[(0, 1)] - m[(1, 0)]);
    let grad_w = -2.0 * weights.lambda_r * dtrace;
    let grad_theta = right_jacobian(&pred.theta).transpose() * grad_w;
    Ok((
        loss,
        Vector6::new(grad_t.x, grad_t.y, grad_t.z, grad_theta.x, grad_theta.y, grad_theta.z),
    ))
}

/// Pose loss of the twist solved from `flow` and `depth`, with its gradient
/// backpropagated to both inputs.
pub fn solved_pose_loss(
    flow: &FlowField,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    options: &SolveOptions,
    labels: &PoseLabels,
    weights: &LossWeights,
) -> Result<(PoseLoss, SolutionGradients)> {
    // The solve is repeated inside the gradient call; the adjoint needs the twist first.
    let twist = crate::solver::solve_twist(flow, depth, intrinsics, options)?.twist;
    let (loss, adjoint) = pose_loss_gradient(&twist, labels, weights)?;
    let grads = solution_gradients(flow, depth, intrinsics, options, &adjoint)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use crate::motion_field::flow_from_twist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> [f64; 2]) -> FlowField {
        FlowField::from_fn(w, h, |x, y| Some(f(x, y))).unwrap()
    }

    #[test]
    fn weights_must_be_non_negative() {
        assert!(LossWeights::new(1.0, -0.1, 1.0, 1.0).is_err());
        assert!(LossWeights::new(1.0, 0.0, f64::NAN, 1.0).is_err());
        assert_eq!(LossWeights::new(1.0, 1.0, 1.0, 1.0).unwrap(), LossWeights::default());
    }

    #[test]
    fn reorientation_examples() {
        let fw = field(4, 3, |x, y| [x as f64 + 1.0, y as f64 - 1.0]);
        let bw = fw.negated();
        assert_eq!(reorient_flow(&fw, &bw, &fw).unwrap().1, Direction::Forward);
        assert_eq!(reorient_flow(&fw, &bw, &bw).unwrap().1, Direction::Backward);
        let zero = FlowField::zeros(4, 3);
        let (chosen, dir) = reorient_flow(&fw, &bw, &zero).unwrap();
        assert_eq!(dir, Direction::Backward);
        assert!(std::ptr::eq(chosen, &bw));
        assert!(reorient_flow(&fw, &bw, &FlowField::zeros(3, 3)).is_err());
    }

    #[test]
    fn reorientation_ignores_invalid_pixels() {
        let fw = field(2, 1, |_, _| [1.0, 0.0]);
        let bw = fw.negated();
        let mut pred = field(2, 1, |x, _| if x == 0 { [0.1, 0.0] } else { [-100.0, 0.0] });
        assert_eq!(reorient_flow(&fw, &bw, &pred).unwrap().1, Direction::Backward);
        pred.set(1, 0, None);
        assert_eq!(reorient_flow(&fw, &bw, &pred).unwrap().1, Direction::Forward);
    }

    #[test]
    fn l1_examples() {
        let fw = field(4, 4, |x, _| [x as f64, 1.0]);
        let bw = fw.negated();
        let d = DepthMap::constant(4, 4, 2.0).unwrap();
        let w = LossWeights::default();
        assert_eq!(l1_loss(&fw, &fw, &bw, &d, &d, &w).unwrap(), 0.0);
        assert_eq!(l1_loss(&bw, &fw, &bw, &d, &d, &w).unwrap(), 0.0);

        let shifted = field(4, 4, |x, _| [x as f64 + 1.0, 1.0]);
        let flow_only = LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(l1_loss(&shifted, &fw, &bw, &d, &d, &flow_only).unwrap(), 0.5);

        let off = DepthMap::constant(4, 4, 2.25).unwrap();
        let depth_only = LossWeights::new(0.0, 2.0, 0.0, 0.0).unwrap();
        assert_eq!(l1_loss(&fw, &fw, &bw, &off, &d, &depth_only).unwrap(), 0.5);
    }

    #[test]
    fn l1_is_homogeneous_in_weights() {
        let fw = field(5, 4, |x, y| [x as f64 * 0.3, -(y as f64)]);
        let pred = field(5, 4, |x, y| [x as f64 * 0.25 + 0.1, 0.5 - (y as f64)]);
        let d = DepthMap::from_fn(5, 4, |x, y| Some(1.0 + (x + y) as f64 * 0.1)).unwrap();
        let dp = DepthMap::constant(5, 4, 1.4).unwrap();
        let w = LossWeights::new(0.7, 1.3, 0.0, 0.0).unwrap();
        let base = l1_loss(&pred, &fw, &fw.negated(), &dp, &d, &w).unwrap();
        let scaled = l1_loss(&pred, &fw, &fw.negated(), &dp, &d, &w.scaled(3.0)).unwrap();
        assert!((scaled - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn pose_loss_examples() {
        let fw = Twist::new(Vec3::new(0.02, -0.01, 0.03), Vec3::new(0.01, 0.02, -0.015)).camera_motion();
        let labels = PoseLabels::from_forward(fw);
        let w = LossWeights::default();
        let a = pose_loss(&fw, &labels, &w).unwrap();
        assert_eq!((a.value, a.direction), (0.0, Direction::Forward));
        let b = pose_loss(&fw.inverse(), &labels, &w).unwrap();
        assert_eq!((b.value, b.direction), (0.0, Direction::Backward));
    }

    #[test]
    fn pose_loss_is_min_of_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = |s: f64| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        for _ in 0..200 {
            let fw = Pose::new(Rotation::from_axis_angle(&v(0.5)), v(0.5));
            let pred = Pose::new(Rotation::from_axis_angle(&v(0.5)), v(0.5));
            let labels = PoseLabels::from_forward(fw);
            let w = LossWeights::new(0.5, 0.0, 2.0, 0.3).unwrap();
            let loss = pose_loss(&pred, &labels, &w).unwrap().value;
            let brute = pose_distance(&pred, &labels.fw, &w).min(pose_distance(&pred, &labels.bw, &w));
            assert_eq!(loss, brute);
        }
    }

    #[test]
    fn pose_gradient_matches_finite_differences() {
        let labels = PoseLabels::from_forward(Twist::new(Vec3::new(0.05, 0.01, -0.02), Vec3::new(0.2, -0.1, 0.3)).camera_motion());
        let w = LossWeights::new(0.0, 0.0, 1.5, 0.7).unwrap();
        for pred in [
            Twist::new(Vec3::new(0.04, 0.02, -0.01), Vec3::new(0.25, -0.05, 0.2)),
            Twist::new(Vec3::new(-0.04, 0.0, 0.01), Vec3::new(-0.15, 0.1, -0.35)),
        ] {
            let (_, grad) = pose_loss_gradient(&pred, &labels, &w).unwrap();
            let x = pred.to_vector();
            for i in 0..6 {
                let h = 1e-6;
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let lp = pose_loss(&Twist::from_vector(&xp).camera_motion(), &labels, &w).unwrap().value;
                let lm = pose_loss(&Twist::from_vector(&xm).camera_motion(), &labels, &w).unwrap().value;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - grad[i]).abs() <= 1e-7 * grad[i].abs().max(1.0), "component {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn solved_pose_loss_chain_rule() {
        let k = Intrinsics::centered(20.0, 8, 8).unwrap();
        let depth = DepthMap::from_fn(8, 8, |x, y| Some(1.0 + 0.2 * x as f64 + 0.15 * y as f64 + 0.05 * (x * y) as f64)).unwrap();
        let truth = Twist::new(Vec3::new(0.03, -0.02, 0.05), Vec3::new(0.01, 0.02, -0.015));
        let mut flow = flow_from_twist(&truth, &depth, &k).unwrap();
        // Perturb so the solve has residuals and the depth gradient is non-trivial.
        for y in 0..8 {
            for x in 0..8 {
                let v = flow.get(x, y).unwrap();
                flow.set(x, y, Some([v[0] + 0.05 * ((x * 3 + y) % 5) as f64 - 0.1, v[1] - 0.04 * ((x + 2 * y) % 3) as f64]));
            }
        }
        let labels = PoseLabels::from_forward(Twist::new(Vec3::new(0.02, -0.01, 0.04), Vec3::new(0.015, 0.01, -0.01)).camera_motion());
        let w = LossWeights::default();
        let opts = SolveOptions::default();
        let (loss, grads) = solved_pose_loss(&flow, &depth, &k, &opts, &labels, &w).unwrap();
        assert_eq!(loss.direction, Direction::Forward);
        let eval_flow = |f: &FlowField| {
            let t = crate::solver::solve_twist(f, &depth, &k, &opts).unwrap().twist;
            pose_loss(&t.camera_motion(), &labels, &w).unwrap().value
        };
        let eval_depth = |d: &DepthMap| {
            let t = crate::solver::solve_twist(&flow, d, &k, &opts).unwrap().twist;
            pose_loss(&t.camera_motion(), &labels, &w).unwrap().value
        };
        for &(x, y) in &[(0, 0), (3, 5), (7, 2), (6, 7)] {
            for c in 0..2 {
                let v = flow.get(x, y).unwrap();
                let h = 1e-5 * v[c].abs().max(1.0);
                let (mut fp, mut fm) = (flow.clone(), flow.clone());
                let mut vp = v;
                let mut vm = v;
                vp[c] += h;
                vm[c] -= h;
                fp.set(x, y, Some(vp));
                fm.set(x, y, Some(vm));
                let fd = (eval_flow(&fp) - eval_flow(&fm)) / (2.0 * h);
                let an = grads.flow_at(x, y)[c];
                assert!((fd - an).abs() / an.abs().max(1.0) <= 1e-4, "flow ({x},{y},{c}): {fd} vs {an}");
            }
            let d = depth.get(x, y).unwrap();
            let h = 1e-5 * d.abs().max(1.0);
            let fd = (eval_depth(&depth.with_value(x, y, d + h).unwrap()) - eval_depth(&depth.with_value(x, y, d - h).unwrap())) / (2.0 * h);
            let an = grads.depth_at(x, y);
            assert!((fd - an).abs() / an.abs().max(1.0) <= 1e-4, "depth ({x},{y}): {fd} vs {an}");
        }
    }
}
