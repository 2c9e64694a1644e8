use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Skew-symmetric cross-product matrix, `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rodrigues map from an axis-angle vector (radians).
    pub fn from_axis_angle(theta: &Vec3) -> Self {
        let angle2 = theta.norm_squared();
        let angle = angle2.sqrt();
        let k = hat(theta);
        let (a, b) = if angle < 1e-4 {
            // Taylor series of sin(x)/x and (1 - cos(x))/x^2.
            (
                1.0 - angle2 / 6.0 + angle2 * angle2 / 120.0,
                0.5 - angle2 / 24.0 + angle2 * angle2 / 720.0,
            )
        } else {
            (angle.sin() / angle, (1.0 - angle.cos()) / angle2)
        };
        let m = Matrix3::identity() + k * a + k * k * b;
        Self(orthonormalize(m))
    }

    /// Builds a rotation from a matrix that is orthonormal up to `1e-6`,
    /// projecting it back onto SO(3).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).norm();
        if !err.is_finite() || err > 1e-6 || m.determinant() <= 0.0 {
            return Err(Error::Format(format!(
                "matrix is not a rotation (orthonormality error {err:e})"
            )));
        }
        Ok(Self(orthonormalize(m)))
    }

    /// From a unit quaternion `(x, y, z, w)`; the input is normalized first.
    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-12) {
            return Err(Error::Format("zero quaternion".into()));
        }
        let unit = UnitQuaternion::from_quaternion(q);
        Ok(Self(orthonormalize(*unit.to_rotation_matrix().matrix())))
    }

    /// Returns `(x, y, z, w)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Inverse of [`Rotation::from_axis_angle`]; the returned angle lies in `[0, pi]`.
    pub fn log(&self) -> Vec3 {
        let m = &self.0;
        let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // sin(angle) * axis
        let w = 0.5
            * Vec3::new(
                m[(2, 1)] - m[(1, 2)],
                m[(0, 2)] - m[(2, 0)],
                m[(1, 0)] - m[(0, 1)],
            );
        let sin = w.norm();
        let angle = sin.atan2(cos);
        if angle < 1e-6 {
            return w * (1.0 + sin * sin / 6.0);
        }
        if cos > -0.5 {
            return w * (angle / sin);
        }
        // Near pi the skew part vanishes; recover the axis from the symmetric part,
        // (R + R^T)/2 - cos I = (1 - cos) n n^T.
        let b = 0.5 * (m + m.transpose()) - Matrix3::identity() * cos;
        let i = (0..3)
            .max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)]))
            .unwrap_or(0);
        let mut axis: Vec3 = b.column(i).into_owned() / (b[(i, i)] * (1.0 - cos)).sqrt();
        axis.normalize_mut();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        axis * angle
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Point on the geodesic from `self` (s = 0) to `other` (s = 1).
    pub fn slerp(&self, other: &Rotation, s: f64) -> Rotation {
        let delta = (self.transpose() * *other).log();
        *self * Rotation::from_axis_angle(&(delta * s))
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// One Newton step of the polar decomposition, enough to push an
/// almost-orthonormal matrix back onto SO(3) to machine precision.
fn orthonormalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let mut r = m;
    for _ in 0..2 {
        r = 1.5 * r - 0.5 * r * r.transpose() * r;
    }
    r
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p + self.translation
    }

    /// Geodesic interpolation: rotation along the SO(3) geodesic, translation linearly.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        Pose::new(
            self.rotation.slerp(&other.rotation, s),
            self.translation + (other.translation - self.translation) * s,
        )
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

/// Camera motion over one exposure: translation `t` (m) and axis-angle
/// rotation `theta` (rad), both expressed in the camera frame at the start of
/// the exposure.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub t: Vec3,
    pub theta: Vec3,
}

impl Twist {
    pub fn new(t: Vec3, theta: Vec3) -> Self {
        Self { t, theta }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `[t_x, t_y, t_z, theta_x, theta_y, theta_z]`
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.t.x,
            self.t.y,
            self.t.z,
            self.theta.x,
            self.theta.y,
            self.theta.z,
        )
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self::new(Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5]))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.t * s, self.theta * s)
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(self.theta.iter()).all(|v| v.is_finite())
    }

    /// Pose of the end-of-exposure camera in the start-of-exposure camera frame.
    pub fn camera_motion(&self) -> Pose {
        Pose::new(Rotation::from_axis_angle(&self.theta), self.t)
    }

    pub fn from_camera_motion(motion: &Pose) -> Self {
        Self::new(motion.translation, motion.rotation.log())
    }

    /// Maps points from start-of-exposure camera coordinates to
    /// end-of-exposure camera coordinates.
    pub fn point_transfer(&self) -> Pose {
        self.camera_motion().inverse()
    }
}

/// Right Jacobian of the exponential map: `exp(phi + d) ~ exp(phi) exp(J_r(phi) d)`.
pub fn right_jacobian(phi: &Vec3) -> Matrix3<f64> {
    let angle2 = phi.norm_squared();
    let angle = angle2.sqrt();
    let k = hat(phi);
    let (a, b) = if angle < 1e-4 {
        (0.5 - angle2 / 24.0, 1.0 / 6.0 - angle2 / 120.0)
    } else {
        (
            (1.0 - angle.cos()) / angle2,
            (angle - angle.sin()) / (angle2 * angle),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// exp(hat(theta)) by scaling and squaring a 20-term power series.
    fn expm_series(theta: &Vec3) -> Matrix3<f64> {
        let squarings = 6;
        let a = hat(theta) / f64::powi(2.0, squarings);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..20 {
            term = term * a / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(Rotation::from_axis_angle(&Vec3::zeros()), Rotation::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = Rotation::from_axis_angle(&Vec3::new(0.0, 0.0, PI / 2.0));
        let v = r * Vec3::new(1.0, 0.0, 0.0);
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn matches_series_exponential() {
        let theta = Vec3::new(0.3, -0.2, 0.1);
        let r = Rotation::from_axis_angle(&theta);
        assert!((r.matrix() - expm_series(&theta)).norm() < 1e-14);
    }

    #[test]
    fn log_near_pi() {
        let axis = Vec3::new(0.2, -0.5, 0.7).normalize();
        for angle in [PI - 1e-6, PI - 1e-3, PI - 0.3, 2.5] {
            let theta = axis * angle;
            let back = Rotation::from_axis_angle(&theta).log();
            assert!((back - theta).norm() < 1e-9, "angle {angle}: {}", (back - theta).norm());
        }
    }

    #[test]
    fn log_small_angles() {
        for angle in [1e-12, 1e-8, 1e-6, 1e-5, 1e-3] {
            let theta = Vec3::new(1.0, 2.0, -0.5).normalize() * angle;
            let back = Rotation::from_axis_angle(&theta).log();
            assert!((back - theta).norm() <= 1e-9 * angle.max(1e-9));
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let r = Rotation::from_axis_angle(&Vec3::new(0.4, 0.1, -1.2));
        let [x, y, z, w] = r.to_quaternion();
        let back = Rotation::from_quaternion(x, y, z, w).unwrap();
        assert!((back.matrix() - r.matrix()).norm() < 1e-14);
    }

    #[test]
    fn rejects_non_rotation_matrix() {
        assert!(Rotation::from_matrix(Matrix3::identity() * 2.0).is_err());
        assert!(Rotation::from_matrix(-Matrix3::identity()).is_err());
        assert!(Rotation::from_quaternion(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn slerp_midpoint_is_half_angle() {
        let a = Rotation::identity();
        let b = Rotation::from_axis_angle(&Vec3::new(0.0, 0.6, 0.0));
        let mid = a.slerp(&b, 0.5);
        assert!((mid.log() - Vec3::new(0.0, 0.3, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        for phi in [Vec3::new(0.3, -0.2, 0.5), Vec3::new(1e-6, 2e-6, -1e-6), Vec3::new(0.0, 2.5, 0.1)] {
            let r = Rotation::from_axis_angle(&phi);
            let jr = right_jacobian(&phi);
            let h = 1e-6;
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                let plus = (r.transpose() * Rotation::from_axis_angle(&(phi + e))).log();
                let minus = (r.transpose() * Rotation::from_axis_angle(&(phi - e))).log();
                let col = (plus - minus) / (2.0 * h);
                assert!((col - jr.column(i)).norm() < 1e-8, "{phi:?} column {i}");
            }
        }
    }

    #[test]
    fn transfer_is_inverse_of_motion() {
        let tw = Twist::new(Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.01, 0.02, -0.03));
        let id = tw.camera_motion() * tw.point_transfer();
        assert!((id.rotation.matrix() - Matrix3::identity()).norm() < 1e-15);
        assert!(id.translation.norm() < 1e-15);
        let back = Twist::from_camera_motion(&tw.camera_motion());
        assert!((back.to_vector() - tw.to_vector()).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn orthonormal_after_construction(v in vec3(), scale in 0.0..3.1f64) {
            let r = Rotation::from_axis_angle(&(v * scale));
            let err = (r.matrix().transpose() * r.matrix() - Matrix3::identity()).norm();
            prop_assert!(err <= 1e-9);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn exp_log_round_trip(v in vec3(), angle in 1e-9..(PI - 1e-6)) {
            prop_assume!(v.norm() > 1e-3);
            let theta = v.normalize() * angle;
            let back = Rotation::from_axis_angle(&theta).log();
            prop_assert!((back - theta).norm() <= 1e-9);
        }

        #[test]
        fn composition_is_associative(a in vec3(), b in vec3(), c in vec3()) {
            let (ra, rb, rc) = (
                Rotation::from_axis_angle(&(a * 2.0)),
                Rotation::from_axis_angle(&(b * 2.0)),
                Rotation::from_axis_angle(&(c * 2.0)),
            );
            let lhs = (ra * rb) * rc;
            let rhs = ra * (rb * rc);
            prop_assert!((lhs.matrix() - rhs.matrix()).norm() <= 1e-9);
            let id = ra * ra.inverse();
            prop_assert!((id.matrix() - Matrix3::identity()).norm() <= 1e-9);
        }

        #[test]
        fn pose_group_laws(a in vec3(), b in vec3(), c in vec3(), ta in vec3(), tb in vec3(), tc in vec3()) {
            let pa = Pose::new(Rotation::from_axis_angle(&a), ta);
            let pb = Pose::new(Rotation::from_axis_angle(&b), tb * 5.0);
            let pc = Pose::new(Rotation::from_axis_angle(&c), tc);
            let lhs = (pa * pb) * pc;
            let rhs = pa * (pb * pc);
            prop_assert!((lhs.rotation.matrix() - rhs.rotation.matrix()).norm() <= 1e-9);
            prop_assert!((lhs.translation - rhs.translation).norm() <= 1e-9);
            let id = pb * pb.inverse();
            prop_assert!((id.rotation.matrix() - Matrix3::identity()).norm() <= 1e-9);
            prop_assert!(id.translation.norm() <= 1e-9);
        }
    }
}
