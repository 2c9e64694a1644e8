use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use blurvel_core::geometry::{Intrinsics, Pose, TimedPose, Vec3};
use blurvel_core::image::Image;
use blurvel_core::io::{self, DatasetManifest, SampleManifest, TwistRecord, SAMPLE_MANIFEST};
use blurvel_core::scene::{synthesize_sample, RoomScene, Scene, StaticView};
use blurvel_core::trajectory::{SampledTrajectory, SmoothTrajectory, Trajectory};
use rayon::prelude::*;

use crate::config::{ConfigError, SceneConfig, SynthConfig, TrajectoryConfig};

pub const RESOLVED_CONFIG: &str = "config.toml";
pub const DATASET_MANIFEST: &str = "dataset.json";
pub const TRAJECTORY: &str = "trajectory.tum";

/// Trajectory seeds are decorrelated from scene seeds.
const TRAJECTORY_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

enum AnyTrajectory {
    Smooth(SmoothTrajectory),
    Sampled(SampledTrajectory),
}

impl AnyTrajectory {
    fn as_dyn(&self) -> &dyn Trajectory {
        match self {
            AnyTrajectory::Smooth(t) => t,
            AnyTrajectory::Sampled(t) => t,
        }
    }

    fn is_continuous(&self, a: f64, b: f64) -> bool {
        match self {
            AnyTrajectory::Smooth(_) => true,
            AnyTrajectory::Sampled(t) => t.is_continuous(a, b),
        }
    }
}

fn build_scene(config: &SynthConfig) -> Result<Box<dyn Scene>> {
    Ok(match &config.scene {
        SceneConfig::Room { half_extents } => Box::new(
            RoomScene::random(config.seed, Vec3::from(*half_extents)).map_err(|e| ConfigError(e.to_string()))?,
        ),
        SceneConfig::File { image, depth } => Box::new(StaticView {
            image: Image::read_png(image).with_context(|| format!("reading {}", image.display()))?,
            depth: io::read_depth(depth).with_context(|| format!("reading {}", depth.display()))?,
        }),
    })
}

fn build_trajectory(config: &SynthConfig) -> Result<AnyTrajectory> {
    Ok(match &config.trajectory {
        TrajectoryConfig::Random {
            origin,
            linear_speed,
            angular_speed,
        } => AnyTrajectory::Smooth(
            SmoothTrajectory::random(
                config.seed.wrapping_add(TRAJECTORY_SEED_OFFSET),
                Vec3::from(*origin),
                *linear_speed,
                *angular_speed,
            )
            .map_err(|e| ConfigError(e.to_string()))?,
        ),
        TrajectoryConfig::Tum { path } => {
            let poses = io::read_tum(path).with_context(|| format!("reading {}", path.display()))?;
            AnyTrajectory::Sampled(SampledTrajectory::new(poses).map_err(|e| ConfigError(e.to_string()))?)
        }
    })
}

struct Written {
    dir: PathBuf,
    timed_pose: TimedPose,
}

fn write_sample(
    out: &Path,
    index: usize,
    config: &SynthConfig,
    intrinsics: &Intrinsics,
    scene: &dyn Scene,
    trajectory: &AnyTrajectory,
) -> Result<Option<Written>> {
    let c = &config.capture;
    let start = c.start_s + index as f64 * c.frame_interval_s;
    let end = start + c.exposure_s;
    if !trajectory.is_continuous(start, end) {
        return Ok(None);
    }
    let key_poses = (0..c.key_frames)
        .map(|k| {
            let t = start + c.exposure_s * k as f64 / (c.key_frames - 1) as f64;
            trajectory.as_dyn().pose_at(t)
        })
        .collect::<blurvel_core::Result<Vec<Pose>>>()
        .map_err(|e| ConfigError(format!("sample {index}: {e}")))?;
    let sample = synthesize_sample(scene, &key_poses, intrinsics, c.per_gap)
        .map_err(|e| match e {
            blurvel_core::Error::InvalidParameter(msg) => anyhow::Error::new(ConfigError(format!("sample {index}: {msg}"))),
            other => anyhow::Error::new(other),
        })?;

    let rel = PathBuf::from(format!("sample_{index:04}"));
    let dir = out.join(&rel);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    sample.blurred.write_png(dir.join("blurred.png"))?;
    sample.sharp.write_png(dir.join("sharp.png"))?;
    io::write_flow(dir.join("flow_fw.bvfl"), &sample.labels.flow_fw)?;
    io::write_flow(dir.join("flow_bw.bvfl"), &sample.labels.flow_bw)?;
    io::write_depth(dir.join("depth.bvdp"), &sample.labels.depth)?;
    let timestamp = start + 0.5 * c.exposure_s;
    let manifest = SampleManifest {
        index,
        timestamp_s: timestamp,
        frame_start_s: start,
        exposure_s: c.exposure_s,
        blurred: "blurred.png".into(),
        sharp: "sharp.png".into(),
        flow_fw: "flow_fw.bvfl".into(),
        flow_bw: "flow_bw.bvfl".into(),
        depth: "depth.bvdp".into(),
        twist: TwistRecord::from(&sample.labels.twist),
        intrinsics: *intrinsics,
        virtual_frames: sample.virtual_frames,
    };
    io::write_json(dir.join(SAMPLE_MANIFEST), &manifest)?;
    let pose = trajectory
        .as_dyn()
        .pose_at(timestamp)
        .map_err(|e| ConfigError(format!("sample {index}: {e}")))?;
    Ok(Some(Written {
        dir: rel,
        timed_pose: TimedPose { timestamp, pose },
    }))
}

/// Writes the resolved config, every sample, the dataset manifest and the
/// mid-exposure trajectory into `out`.
pub fn run(config: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let intrinsics = config.camera.intrinsics()?;
    let scene = build_scene(config)?;
    if let SceneConfig::File { .. } = config.scene {
        scene
            .render(&Pose::identity(), &intrinsics)
            .map_err(|e| ConfigError(format!("scene files do not match the camera: {e}")))?;
    }
    let trajectory = build_trajectory(config)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(RESOLVED_CONFIG), config.to_toml())?;

    let results = (0..config.samples)
        .into_par_iter()
        .map(|i| {
            let r = write_sample(out, i, config, &intrinsics, scene.as_ref(), &trajectory);
            if let Ok(Some(w)) = &r {
                eprintln!("synth: wrote {}", w.dir.display());
            }
            r
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let written: Vec<Written> = results.into_iter().flatten().collect();

    let poses: Vec<TimedPose> = written.iter().map(|w| w.timed_pose).collect();
    io::write_tum(out.join(TRAJECTORY), &poses)?;
    let manifest = DatasetManifest {
        samples: written.into_iter().map(|w| w.dir).collect(),
        skipped,
        intrinsics,
        exposure_s: config.capture.exposure_s,
        frame_interval_s: config.capture.frame_interval_s,
        trajectory: TRAJECTORY.into(),
    };
    io::write_json(out.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

