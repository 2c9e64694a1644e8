//! Motion-blur image formation from sharp virtual frames, and the
//! ground-truth labels that go with a synthesized sample.
//!
//! A blurred image is the sRGB encoding of the mean linear radiance of its
//! virtual frames. Virtual frames are rendered from one sharp base view and
//! its depth by backward warping under the reprojection map, at poses
//! interpolated along the SE(3) geodesic between key poses.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{relative_pose, DepthMap, FlowField, Intrinsics, Pose, TimedPose, Twist, Vec3};
use crate::image::{ColorSpace, Image};
use crate::motion_field::flow_from_reprojection;

/// sRGB decoding of a single value.
#[inline]
pub fn srgb_to_linear_value(s: f64) -> f64 {
    if s <= 0.04045 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB encoding of a single value, clamped to `[0, 1]`.
#[inline]
pub fn linear_to_srgb_value(l: f64) -> f64 {
    let s = if l <= 0.0031308 {
        12.92 * l
    } else if l >= 1.0 {
        1.0
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    };
    s.clamp(0.0, 1.0)
}

pub fn srgb_to_linear(img: &Image) -> Result<Image> {
    img.expect_space(ColorSpace::Srgb)?;
    Image::new(
        img.width(),
        img.height(),
        img.channels(),
        img.data().iter().map(|&s| srgb_to_linear_value(s)).collect(),
        ColorSpace::Linear,
    )
}

pub fn linear_to_srgb(img: &Image) -> Result<Image> {
    img.expect_space(ColorSpace::Linear)?;
    Image::new(
        img.width(),
        img.height(),
        img.channels(),
        img.data().iter().map(|&l| linear_to_srgb_value(l)).collect(),
        ColorSpace::Srgb,
    )
}

/// Averages sRGB frames in linear space and re-encodes the mean.
///
/// Per-pixel contributions are summed in sorted order, so the output is
/// bit-identical under any permutation of the frames. Pixels whose value is
/// the same in every frame are passed through unchanged.
pub fn composite_blur(frames: &[Image]) -> Result<Image> {
    let first = frames.first().ok_or(Error::Empty("no frames to composite"))?;
    for frame in frames {
        frame.expect_space(ColorSpace::Srgb)?;
        first.same_shape(frame)?;
    }
    let n = frames.len();
    let len = first.data().len();
    let data: Vec<f64> = (0..len)
        .into_par_iter()
        .with_min_len(1024)
        .map_init(
            || Vec::with_capacity(n),
            |linear, i| {
                let s0 = first.data()[i];
                if frames.iter().all(|f| f.data()[i] == s0) {
                    return s0;
                }
                linear.clear();
                linear.extend(frames.iter().map(|f| srgb_to_linear_value(f.data()[i])));
                linear.sort_by(f64::total_cmp);
                let mean = linear.iter().sum::<f64>() / n as f64;
                linear_to_srgb_value(mean)
            },
        )
        .collect();
    Image::new(first.width(), first.height(), first.channels(), data, ColorSpace::Srgb)
}

/// A sharp view rendered at `pose` (camera-to-world), with its depth and the
/// pixels that received a trustworthy sample.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualFrame {
    pub image: Image,
    pub depth: DepthMap,
    pub valid: Vec<bool>,
    pub pose: Pose,
    /// Normalized exposure time in `[0, 1]`.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualFrameSet {
    frames: Vec<VirtualFrame>,
}

impl VirtualFrameSet {
    pub fn new(frames: Vec<VirtualFrame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidFrames(format!("need at least 2 frames, got {}", frames.len())));
        }
        if frames[0].timestamp != 0.0 || frames[frames.len() - 1].timestamp != 1.0 {
            return Err(Error::InvalidFrames("timestamps must start at 0 and end at 1".into()));
        }
        if frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::InvalidFrames("timestamps must be strictly increasing".into()));
        }
        for f in &frames[1..] {
            frames[0].image.same_shape(&f.image)?;
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[VirtualFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first(&self) -> &VirtualFrame {
        &self.frames[0]
    }

    pub fn last(&self) -> &VirtualFrame {
        &self.frames[self.frames.len() - 1]
    }

    pub fn images(&self) -> Vec<Image> {
        self.frames.iter().map(|f| f.image.clone()).collect()
    }

    pub fn composite(&self) -> Result<Image> {
        let images: Vec<Image> = self.images();
        composite_blur(&images)
    }
}

/// Image, depth and validity of a view synthesized from a base view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    pub depth: DepthMap,
    pub valid: Vec<bool>,
}

const WARP_ITERATIONS: usize = 50;
const WARP_TOLERANCE_PX: f64 = 1e-9;

/// Renders the base view as seen after `pose_rel`, which maps base camera
/// coordinates to target camera coordinates.
///
/// For each target pixel `q` the source position `p` with `p + F(p) = q` is
/// found by fixed-point iteration on the forward reprojection flow `F`, then
/// the base image is sampled bilinearly at `p`. Pixels whose source falls
/// outside the base view, hits invalid depth or does not converge are filled by
/// edge clamping and flagged invalid.
pub fn render_from_base(
    base_image: &Image,
    base_depth: &DepthMap,
    intrinsics: &Intrinsics,
    pose_rel: &Pose,
) -> Result<RenderedView> {
    if base_image.dims() != base_depth.dims() {
        return Err(Error::DimensionMismatch {
            expected: base_image.dims(),
            found: base_depth.dims(),
        });
    }
    if *pose_rel == Pose::identity() {
        return Ok(RenderedView {
            image: base_image.clone(),
            depth: base_depth.clone(),
            valid: base_depth.mask().to_vec(),
        });
    }
    let f = intrinsics.focal()?;
    let flow = flow_from_reprojection(pose_rel, base_depth, intrinsics)?;
    let (width, height) = base_image.dims();
    let channels = base_image.channels();

    struct Px {
        color: Vec<f64>,
        depth: Option<f64>,
    }
    let pixels: Vec<Px> = (0..width * height)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let (qx, qy) = ((i % width) as f64, (i / width) as f64);
            let mut color = vec![0.0; channels];
            let source = invert_flow(&flow, qx, qy);
            let (sx, sy) = source.unwrap_or((qx, qy));
            let inside = base_image.sample_bilinear(sx, sy, &mut color);
            let depth = source.filter(|_| inside).and_then(|(sx, sy)| {
                let d = base_depth.sample_bilinear(sx, sy)?;
                let p = intrinsics.center(sx, sy);
                let z = pose_rel.transform_point(&Vec3::new(p.x * d / f, p.y * d / f, d)).z;
                (z > 0.0).then_some(z)
            });
            Px { color, depth }
        })
        .collect();

    let mut data = Vec::with_capacity(width * height * channels);
    for px in &pixels {
        data.extend_from_slice(&px.color);
    }
    let image = Image::new(width, height, channels, data, base_image.space())?;
    let depth = DepthMap::from_fn(width, height, |x, y| pixels[y * width + x].depth)?;
    let valid = depth.mask().to_vec();
    Ok(RenderedView { image, depth, valid })
}

/// Solves `p + F(p) = q` for `p`.
fn invert_flow(flow: &FlowField, qx: f64, qy: f64) -> Option<(f64, f64)> {
    let nearest = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
    let start = flow.get(nearest(qx, flow.width()), nearest(qy, flow.height()))?;
    let (mut px, mut py) = (qx - start[0], qy - start[1]);
    for _ in 0..WARP_ITERATIONS {
        let v = flow.sample_bilinear(px, py)?;
        let (nx, ny) = (qx - v[0], qy - v[1]);
        let step = (nx - px).abs().max((ny - py).abs());
        (px, py) = (nx, ny);
        if step < WARP_TOLERANCE_PX {
            return Some((px, py));
        }
    }
    None
}

/// Frames at `per_gap` evenly spaced interpolated poses between each pair of
/// consecutive key poses, plus the key poses themselves. The base image and
/// depth belong to the first key pose; key poses are camera-to-world.
pub fn interpolate_virtual_frames(
    key_poses: &[Pose],
    depth: &DepthMap,
    base_image: &Image,
    intrinsics: &Intrinsics,
    per_gap: usize,
) -> Result<VirtualFrameSet> {
    if key_poses.len() < 2 {
        return Err(Error::InvalidFrames(format!(
            "need at least 2 key poses, got {}",
            key_poses.len()
        )));
    }
    if depth.valid_count() == 0 {
        return Err(Error::InvalidDepth("base depth has no valid pixels".into()));
    }
    if depth.dims() != intrinsics.dims() {
        return Err(Error::DimensionMismatch {
            expected: intrinsics.dims(),
            found: depth.dims(),
        });
    }
    let steps = per_gap + 1;
    let total = (key_poses.len() - 1) * steps + 1;
    let poses: Vec<Pose> = (0..total)
        .map(|j| {
            let (seg, k) = (j / steps, j % steps);
            if k == 0 {
                key_poses[seg]
            } else {
                let (a, b) = (&key_poses[seg], &key_poses[seg + 1]);
                if a == b {
                    *a
                } else {
                    a.interpolate(b, k as f64 / steps as f64)
                }
            }
        })
        .collect();
    let base = key_poses[0];
    let frames = poses
        .par_iter()
        .enumerate()
        .map(|(j, pose)| {
            // Points in base camera coordinates to frame-j camera coordinates.
            let pose_rel = relative_pose(pose, &base);
            let view = render_from_base(base_image, depth, intrinsics, &pose_rel)?;
            let timestamp = if j + 1 == total { 1.0 } else { j as f64 / (total - 1) as f64 };
            Ok(VirtualFrame {
                image: view.image,
                depth: view.depth,
                valid: view.valid,
                pose: *pose,
                timestamp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    VirtualFrameSet::new(frames)
}

/// Labels for one blurred sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// First virtual frame to last, on the first frame's pixel grid.
    pub flow_fw: FlowField,
    /// Last virtual frame to first, on the last frame's pixel grid.
    pub flow_bw: FlowField,
    pub depth: DepthMap,
    /// Camera motion from the first to the last virtual frame.
    pub twist: Twist,
}

/// Reprojection flows in both directions and the exposure twist. `depth`
/// belongs to the first frame; the last frame's rendered depth drives the
/// backward flow.
pub fn ground_truth_labels(
    frames: &VirtualFrameSet,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
) -> Result<GroundTruth> {
    let (first, last) = (frames.first(), frames.last());
    let motion = relative_pose(&first.pose, &last.pose);
    let flow_fw = flow_from_reprojection(&motion.inverse(), depth, intrinsics)?;
    let flow_bw = flow_from_reprojection(&motion, &last.depth, intrinsics)?;
    Ok(GroundTruth {
        flow_fw,
        flow_bw,
        depth: depth.clone(),
        twist: Twist::from_camera_motion(&motion),
    })
}

pub const JUMP_MAX_TRANSLATION_M: f64 = 0.5;
pub const JUMP_MAX_ROTATION_DEG: f64 = 30.0;
pub const JUMP_WINDOW_S: f64 = 1.0 / 30.0;

/// Splits a pose sequence at localization jumps: consecutive poses at most
/// [`JUMP_WINDOW_S`] apart that move more than [`JUMP_MAX_TRANSLATION_M`] or
/// rotate more than [`JUMP_MAX_ROTATION_DEG`]. Returns the index ranges of
/// the jump-free segments.
pub fn split_at_pose_jumps(poses: &[TimedPose]) -> Vec<Range<usize>> {
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..poses.len() {
        let (a, b) = (&poses[i - 1], &poses[i]);
        let dt = b.timestamp - a.timestamp;
        let rel = relative_pose(&a.pose, &b.pose);
        let jump = dt <= JUMP_WINDOW_S * (1.0 + 1e-9)
            && (rel.translation.norm() > JUMP_MAX_TRANSLATION_M
                || rel.rotation.angle() > JUMP_MAX_ROTATION_DEG.to_radians());
        if jump {
            segments.push(start..i);
            start = i;
        }
    }
    if !poses.is_empty() {
        segments.push(start..poses.len());
    }
    segments
}
