//! Synthesis configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use blurvel_core::geometry::Intrinsics;
use serde::{Deserialize, Serialize};

/// Invalid or unreadable configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub samples: usize,
    pub camera: CameraConfig,
    pub capture: CaptureConfig,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            samples: 8,
            camera: CameraConfig::default(),
            capture: CaptureConfig::default(),
            scene: SceneConfig::default(),
            trajectory: TrajectoryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    /// Defaults to the image centre.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            fx: 150.0,
            fy: 150.0,
            cx: None,
            cy: None,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics, ConfigError> {
        let cx = self.cx.unwrap_or((self.width as f64 - 1.0) / 2.0);
        let cy = self.cy.unwrap_or((self.height as f64 - 1.0) / 2.0);
        let k = Intrinsics::new(self.fx, self.fy, cx, cy, self.width, self.height)
            .map_err(|e| ConfigError(format!("camera: {e}")))?;
        k.focal().map_err(|e| ConfigError(format!("camera: {e}")))?;
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    pub exposure_s: f64,
    /// Time between consecutive shutter openings.
    pub frame_interval_s: f64,
    /// Shutter-open time of the first sample.
    pub start_s: f64,
    /// Key poses per exposure, including both ends.
    pub key_frames: usize,
    /// Interpolated frames between consecutive key poses.
    pub per_gap: usize,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            exposure_s: 1.0 / 60.0,
            frame_interval_s: 1.0 / 30.0,
            start_s: 0.0,
            key_frames: 3,
            per_gap: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SceneConfig {
    /// Procedural textured box around the world origin.
    Room { half_extents: [f64; 3] },
    /// A fixed sharp image and depth used as every sample's base view.
    File { image: PathBuf, depth: PathBuf },
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig::Room {
            half_extents: [3.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectoryConfig {
    /// Seeded sum of sinusoids; speeds bound each axis.
    Random {
        origin: [f64; 3],
        linear_speed: f64,
        angular_speed: f64,
    },
    /// Camera-to-world poses from a TUM file.
    Tum { path: PathBuf },
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig::Random {
            origin: [0.0; 3],
            linear_speed: 0.5,
            angular_speed: 1.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError(format!("{name} must be positive, got {v}")))
    }
}

impl SynthConfig {
    /// Reads a config and makes its file paths absolute relative to the
    /// config's own directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut config: SynthConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|e| ConfigError(e.to_string()))?;
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.scene {
            SceneConfig::File { image, depth } => {
                anchor(image);
                anchor(depth);
            }
            SceneConfig::Room { .. } => {}
        }
        if let TrajectoryConfig::Tum { path } = &mut config.trajectory {
            anchor(path);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.samples == 0 {
            return Err(ConfigError("samples must be at least 1".into()));
        }
        self.camera.intrinsics()?;
        let c = &self.capture;
        positive("capture.exposure_s", c.exposure_s)?;
        positive("capture.frame_interval_s", c.frame_interval_s)?;
        if !c.start_s.is_finite() {
            return Err(ConfigError("capture.start_s must be finite".into()));
        }
        if c.exposure_s > c.frame_interval_s {
            return Err(ConfigError(format!(
                "exposure {} s is longer than the frame interval {} s",
                c.exposure_s, c.frame_interval_s
            )));
        }
        if c.key_frames < 2 {
            return Err(ConfigError("capture.key_frames must be at least 2".into()));
        }
        if let SceneConfig::Room { half_extents } = &self.scene {
            for (i, &h) in half_extents.iter().enumerate() {
                positive(&format!("scene.half_extents[{i}]"), h)?;
            }
        }
        if let TrajectoryConfig::Random {
            origin,
            linear_speed,
            angular_speed,
        } = &self.trajectory
        {
            if !(*linear_speed >= 0.0 && *angular_speed >= 0.0 && linear_speed.is_finite() && angular_speed.is_finite()) {
                return Err(ConfigError("trajectory speeds must be finite and non-negative".into()));
            }
            if origin.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError("trajectory.origin must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let config: SynthConfig = toml::from_str("").unwrap();
        assert_eq!(config, SynthConfig::default());
        config.validate().unwrap();
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
            seed = 7
            samples = 3
            [capture]
            key_frames = 10
            [trajectory]
            kind = "random"
            origin = [0.1, 0.0, 0.0]
            linear_speed = 0.0
            angular_speed = 0.0
        "#;
        let config: SynthConfig = toml::from_str(text).unwrap();
        assert_eq!(config.capture.key_frames, 10);
        let again: SynthConfig = toml::from_str(&config.to_toml()).unwrap();
        assert_eq!(again, config);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = SynthConfig::default();
        c.capture.exposure_s = 0.0;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::default();
        c.camera.fy = 200.0;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::default();
        c.capture.key_frames = 1;
        assert!(c.validate().is_err());
        assert!(toml::from_str::<SynthConfig>("sede = 3").is_err());
    }
}
