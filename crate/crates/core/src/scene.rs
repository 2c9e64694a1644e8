//! Scenes that produce a sharp base view and its depth for a camera pose,
//! and the end-to-end synthesis of one blurred sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blur::{ground_truth_labels, interpolate_virtual_frames, GroundTruth};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Intrinsics, Pose, Vec3};
use crate::image::{ColorSpace, Image};

pub trait Scene: Sync {
    /// Sharp sRGB image and metric depth seen from `pose` (camera-to-world).
    fn render(&self, pose: &Pose, intrinsics: &Intrinsics) -> Result<(Image, DepthMap)>;
}

#[derive(Debug, Clone, PartialEq)]
struct TextureLayer {
    wave: Vec3,
    phase: f64,
    weight: [f64; 3],
}

/// The inside of an axis-aligned box centred on the world origin, painted
/// with a seeded sum of 3D sinusoids. Convex, so nothing is ever occluded.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomScene {
    half_extents: Vec3,
    layers: Vec<TextureLayer>,
}

const TEXTURE_LAYERS: usize = 8;

impl RoomScene {
    pub fn random(seed: u64, half_extents: Vec3) -> Result<Self> {
        if half_extents.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "room half extents must be positive, got {half_extents:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..TEXTURE_LAYERS)
            .map(|_| {
                let dir = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let dir = if dir.norm() > 1e-3 { dir.normalize() } else { Vec3::x() };
                TextureLayer {
                    wave: dir * rng.random_range(4.0..25.0),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    weight: [
                        rng.random_range(0.02..0.07),
                        rng.random_range(0.02..0.07),
                        rng.random_range(0.02..0.07),
                    ],
                }
            })
            .collect();
        Ok(Self {
            half_extents,
            layers,
        })
    }

    pub fn half_extents(&self) -> Vec3 {
        self.half_extents
    }

    fn color(&self, point: &Vec3, out: &mut [f64; 3]) {
        *out = [0.5; 3];
        for layer in &self.layers {
            let s = (layer.wave.dot(point) + layer.phase).sin();
            for (o, w) in out.iter_mut().zip(&layer.weight) {
                *o += w * s;
            }
        }
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Distance along `dir` from an interior `origin` to the first wall.
    fn exit_distance(&self, origin: &Vec3, dir: &Vec3) -> f64 {
        (0..3)
            .filter(|&i| dir[i] != 0.0)
            .map(|i| (self.half_extents[i].copysign(dir[i]) - origin[i]) / dir[i])
            .fold(f64::INFINITY, f64::min)
    }
}

impl Scene for RoomScene {
    fn render(&self, pose: &Pose, intrinsics: &Intrinsics) -> Result<(Image, DepthMap)> {
        let f = intrinsics.focal()?;
        let origin = pose.translation;
        if (0..3).any(|i| !(origin[i].abs() < self.half_extents[i])) {
            return Err(Error::InvalidParameter(format!(
                "camera at {origin:?} is outside the room"
            )));
        }
        let (width, height) = intrinsics.dims();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..height)
            .into_par_iter()
            .map(|y| {
                let mut colors = Vec::with_capacity(width * 3);
                let mut depths = Vec::with_capacity(width);
                let mut rgb = [0.0; 3];
                for x in 0..width {
                    let p = intrinsics.center(x as f64, y as f64);
                    // Unit camera-z component, so the ray parameter is the depth.
                    let dir = pose.rotation * Vec3::new(p.x / f, p.y / f, 1.0);
                    let depth = self.exit_distance(&origin, &dir);
                    self.color(&(origin + dir * depth), &mut rgb);
                    colors.extend_from_slice(&rgb);
                    depths.push(depth);
                }
                (colors, depths)
            })
            .collect();
        let mut colors = Vec::with_capacity(width * height * 3);
        let mut depths = Vec::with_capacity(width * height);
        for (c, d) in rows {
            colors.extend(c);
            depths.extend(d);
        }
        let image = Image::new(width, height, 3, colors, ColorSpace::Srgb)?;
        let depth = DepthMap::new(width, height, depths, vec![true; width * height])?;
        Ok((image, depth))
    }
}

/// A fixed image and depth taken as the view from whatever pose is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticView {
    pub image: Image,
    pub depth: DepthMap,
}

impl Scene for StaticView {
    fn render(&self, _pose: &Pose, intrinsics: &Intrinsics) -> Result<(Image, DepthMap)> {
        if self.image.dims() != intrinsics.dims() || self.depth.dims() != intrinsics.dims() {
            return Err(Error::DimensionMismatch {
                expected: intrinsics.dims(),
                found: self.image.dims(),
            });
        }
        Ok((self.image.clone(), self.depth.clone()))
    }
}

/// One synthesized training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurSample {
    /// Sharp view at the start of the exposure.
    pub sharp: Image,
    pub blurred: Image,
    pub labels: GroundTruth,
    pub virtual_frames: usize,
}

/// Renders the view at the first key pose, warps it to every interpolated
/// pose, composites the blur and derives the labels.
pub fn synthesize_sample(
    scene: &dyn Scene,
    key_poses: &[Pose],
    intrinsics: &Intrinsics,
    per_gap: usize,
) -> Result<BlurSample> {
    let first = key_poses
        .first()
        .ok_or(Error::Empty("no key poses"))?;
    let (sharp, depth) = scene.render(first, intrinsics)?;
    let frames = interpolate_virtual_frames(key_poses, &depth, &sharp, intrinsics, per_gap)?;
    let blurred = frames.composite()?;
    let labels = ground_truth_labels(&frames, &depth, intrinsics)?;
    Ok(BlurSample {
        sharp,
        blurred,
        labels,
        virtual_frames: frames.len(),
    })
}
