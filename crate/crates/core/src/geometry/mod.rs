//! Camera model, rigid-motion types and dense per-pixel maps.

mod camera;
mod maps;
mod rotation;

pub use camera::{Intrinsics, PixelCoord, FOCAL_TOLERANCE};
pub use maps::{DepthMap, FlowField};
pub use rotation::{hat, right_jacobian, Pose, Rotation, Twist, Vec3};

pub fn axis_angle_to_rotation(theta: &Vec3) -> Rotation {
    Rotation::from_axis_angle(theta)
}

/// A camera-to-world pose stamped with a time in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// Pose of `to` expressed in the frame of `from`, i.e. `from^-1 * to`.
/// Bitwise-equal poses give the exact identity.
pub fn relative_pose(from: &Pose, to: &Pose) -> Pose {
    if from == to {
        Pose::identity()
    } else {
        from.inverse() * *to
    }
}
