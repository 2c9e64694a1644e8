//! Forward models: the flow a camera twist induces over a depth map.
//!
//! Flow points from the first virtual frame of the exposure toward the last,
//! `F = p'_last - p_first`, in principal-point-centered pixel coordinates,
//! with pixels sampled at integer indices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, FlowField, Intrinsics, Pose, Twist, Vec3};

fn check_dims(depth: &DepthMap, intrinsics: &Intrinsics) -> Result<()> {
    if depth.dims() != intrinsics.dims() {
        return Err(Error::DimensionMismatch {
            expected: intrinsics.dims(),
            found: depth.dims(),
        });
    }
    Ok(())
}

/// Evaluates a per-pixel map row by row in parallel. Every pixel is computed
/// independently, so the result does not depend on the thread count.
fn per_pixel(
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    f: impl Fn(f64, f64, f64) -> Option<[f64; 2]> + Sync,
) -> Result<FlowField> {
    let (width, height) = depth.dims();
    let mut vectors = vec![[0.0; 2]; width * height];
    let mut valid = vec![false; width * height];
    vectors
        .par_chunks_mut(width)
        .zip(valid.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (row, row_valid))| {
            for x in 0..width {
                let Some(d) = depth.get(x, y) else { continue };
                let p = intrinsics.center(x as f64, y as f64);
                if let Some(v) = f(p.x, p.y, d) {
                    row[x] = v;
                    row_valid[x] = true;
                }
            }
        });
    FlowField::new(width, height, vectors, valid)
}

/// Instantaneous motion field of a small camera twist (linear in the twist).
pub fn flow_from_twist(
    twist: &Twist,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
) -> Result<FlowField> {
    check_dims(depth, intrinsics)?;
    let f = intrinsics.focal()?;
    let (t, w) = (twist.t, twist.theta);
    per_pixel(depth, intrinsics, |px, py, d| {
        let fx = (t.z * px - t.x * f) / d - w.y * f + w.z * py + w.x * px * py / f
            - w.y * px * px / f;
        let fy = (t.z * py - t.y * f) / d + w.x * f - w.z * px - w.y * px * py / f
            + w.x * py * py / f;
        Some([fx, fy])
    })
}

/// Exact flow from back-projecting every pixel with its depth, transforming by
/// `pose_rel` (first-frame camera coordinates to last-frame camera
/// coordinates) and projecting again. Points that land at or behind the camera
/// are invalid.
pub fn flow_from_reprojection(
    pose_rel: &Pose,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
) -> Result<FlowField> {
    check_dims(depth, intrinsics)?;
    let f = intrinsics.focal()?;
    per_pixel(depth, intrinsics, |px, py, d| {
        let q = pose_rel.transform_point(&Vec3::new(px * d / f, py * d / f, d));
        (q.z > 0.0).then(|| [f * q.x / q.z - px, f * q.y / q.z - py])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-pixel evaluation of the motion-field equations.
    fn oracle(tw: &Twist, px: f64, py: f64, d: f64, f: f64) -> [f64; 2] {
        let [tx, ty, tz] = [tw.t[0], tw.t[1], tw.t[2]];
        let [ax, ay, az] = [tw.theta[0], tw.theta[1], tw.theta[2]];
        let fx = (tz * px - tx * f) / d - ay * f + az * py + (ax * px * py) / f - (ay * px * px) / f;
        let fy = (tz * py - ty * f) / d + ax * f - az * px - (ay * px * py) / f + (ax * py * py) / f;
        [fx, fy]
    }

    fn random_scene(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (DepthMap, Twist) {
        let depth = DepthMap::from_fn(w, h, |_, _| Some(rng.random_range(1.0..5.0))).unwrap();
        let dir = |rng: &mut ChaCha8Rng| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize()
        };
        let t = dir(rng) * rng.random_range(0.0..0.05);
        let theta = dir(rng) * rng.random_range(0.0..0.02);
        (depth, Twist::new(t, theta))
    }

    #[test]
    fn zero_twist_gives_zero_flow() {
        let k = Intrinsics::centered(100.0, 8, 6).unwrap();
        let d = DepthMap::constant(8, 6, 3.0).unwrap();
        let flow = flow_from_twist(&Twist::zero(), &d, &k).unwrap();
        assert!(flow.vectors().iter().all(|v| *v == [0.0, 0.0]));
        assert_eq!(flow.valid_count(), 48);
    }

    #[test]
    fn roll_only_pattern() {
        let k = Intrinsics::new(300.0, 300.0, 4.0, 3.0, 9, 7).unwrap();
        let d = DepthMap::from_fn(9, 7, |x, y| Some(1.0 + (x * y) as f64)).unwrap();
        let tw = Twist::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 0.01));
        let flow = flow_from_twist(&tw, &d, &k).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                let p = k.centered_coords(x, y).unwrap();
                let v = flow.get(x, y).unwrap();
                assert_eq!(v, [0.01 * p.y, -0.01 * p.x]);
            }
        }
    }

    #[test]
    fn lateral_translation() {
        let k = Intrinsics::centered(500.0, 10, 8).unwrap();
        let d = DepthMap::constant(10, 8, 2.0).unwrap();
        let tw = Twist::new(Vec3::new(0.05, 0.0, 0.0), Vec3::zeros());
        let flow = flow_from_twist(&tw, &d, &k).unwrap();
        assert!(flow.vectors().iter().all(|v| *v == [-12.5, 0.0]));
    }

    #[test]
    fn matches_scalar_oracle_on_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = Intrinsics::new(120.0, 120.0, 15.5, 11.5, 32, 24).unwrap();
        for _ in 0..20 {
            let (d, tw) = random_scene(&mut rng, 32, 24);
            let flow = flow_from_twist(&tw, &d, &k).unwrap();
            for y in 0..24 {
                for x in 0..32 {
                    let expect = oracle(&tw, x as f64 - 15.5, y as f64 - 11.5, d.get(x, y).unwrap(), 120.0);
                    let got = flow.get(x, y).unwrap();
                    assert!((got[0] - expect[0]).abs() <= 1e-12 * (1.0 + expect[0].abs()));
                    assert!((got[1] - expect[1]).abs() <= 1e-12 * (1.0 + expect[1].abs()));
                }
            }
        }
    }

    #[test]
    fn linear_in_twist() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Intrinsics::centered(80.0, 16, 12).unwrap();
        let (d, x1) = random_scene(&mut rng, 16, 12);
        let (_, x2) = random_scene(&mut rng, 16, 12);
        let (a, b) = (0.7, -1.9);
        let combo = Twist::from_vector(&(x1.to_vector() * a + x2.to_vector() * b));
        let lhs = flow_from_twist(&combo, &d, &k).unwrap();
        let f1 = flow_from_twist(&x1, &d, &k).unwrap();
        let f2 = flow_from_twist(&x2, &d, &k).unwrap();
        for ((l, u), v) in lhs.vectors().iter().zip(f1.vectors()).zip(f2.vectors()) {
            for c in 0..2 {
                let rhs = a * u[c] + b * v[c];
                assert!((l[c] - rhs).abs() <= 1e-12 * (l[c].abs() + rhs.abs()).max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn rotational_flow_ignores_depth() {
        let k = Intrinsics::centered(80.0, 16, 12).unwrap();
        let tw = Twist::new(Vec3::zeros(), Vec3::new(0.01, -0.02, 0.005));
        let d1 = DepthMap::constant(16, 12, 1.0).unwrap();
        let d2 = DepthMap::from_fn(16, 12, |x, y| Some(0.5 + (x + 3 * y) as f64)).unwrap();
        assert_eq!(
            flow_from_twist(&tw, &d1, &k).unwrap(),
            flow_from_twist(&tw, &d2, &k).unwrap()
        );
    }

    #[test]
    fn invalid_depth_gives_invalid_flow() {
        let k = Intrinsics::centered(80.0, 4, 4).unwrap();
        let d = DepthMap::from_fn(4, 4, |x, _| (x > 0).then_some(2.0)).unwrap();
        let flow = flow_from_twist(&Twist::new(Vec3::new(0.1, 0.0, 0.0), Vec3::zeros()), &d, &k).unwrap();
        assert_eq!(flow.valid_count(), 12);
        assert_eq!(flow.get(0, 2), None);
    }

    #[test]
    fn identity_pose_gives_zero_reprojection_flow() {
        let k = Intrinsics::centered(80.0, 8, 8).unwrap();
        let d = DepthMap::from_fn(8, 8, |x, y| Some(1.0 + 0.1 * (x + y) as f64)).unwrap();
        let flow = flow_from_reprojection(&Pose::identity(), &d, &k).unwrap();
        assert!(flow.max_abs_diff(&FlowField::zeros(8, 8)) < 1e-12);
    }

    #[test]
    fn epipole_at_principal_point() {
        let k = Intrinsics::new(100.0, 100.0, 4.0, 4.0, 9, 9).unwrap();
        let d = DepthMap::constant(9, 9, 2.0).unwrap();
        let pose = Pose::new(Default::default(), Vec3::new(0.0, 0.0, -0.1));
        let flow = flow_from_reprojection(&pose, &d, &k).unwrap();
        assert_eq!(flow.get(4, 4), Some([0.0, 0.0]));
        assert!(flow.get(0, 0).unwrap()[0] != 0.0);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let k = Intrinsics::centered(100.0, 4, 4).unwrap();
        let d = DepthMap::constant(4, 4, 1.0).unwrap();
        let pose = Pose::new(Default::default(), Vec3::new(0.0, 0.0, -1.5));
        let flow = flow_from_reprojection(&pose, &d, &k).unwrap();
        assert_eq!(flow.valid_count(), 0);
    }

    #[test]
    fn reprojection_agrees_to_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Intrinsics::centered(60.0, 32, 32).unwrap();
        for _ in 0..10 {
            let (d, tw) = random_scene(&mut rng, 32, 32);
            let err = |s: f64| {
                let x = tw.scaled(s);
                let exact = flow_from_reprojection(&x.point_transfer(), &d, &k).unwrap();
                let lin = flow_from_twist(&x, &d, &k).unwrap();
                exact.max_abs_diff(&lin)
            };
            let ratio = err(0.2) / err(0.1);
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn rejects_mismatched_dims() {
        let k = Intrinsics::centered(80.0, 8, 8).unwrap();
        let d = DepthMap::constant(8, 7, 1.0).unwrap();
        assert!(matches!(
            flow_from_twist(&Twist::zero(), &d, &k),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
