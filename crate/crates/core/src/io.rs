//! On-disk formats: binary flow and depth grids, TUM trajectories and the
//! JSON manifests and reports exchanged by the command-line tools.
//!
//! Flow files start with `BVFL`, depth files with `BVDP`, followed by the
//! little-endian `u32` width and height, the row-major `f32` payload (two
//! values per pixel for flow, one for depth) and a row-major `u8` validity
//! mask.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, FlowField, Intrinsics, Pose, Rotation, TimedPose, Twist, Vec3};
use crate::solver::{SolverReport, Velocity};

const FLOW_MAGIC: &[u8; 4] = b"BVFL";
const DEPTH_MAGIC: &[u8; 4] = b"BVDP";

fn write_grid(path: &Path, magic: &[u8; 4], dims: (usize, usize), values: impl Iterator<Item = f32>, mask: &[bool]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(magic)?;
    for d in [dims.0, dims.1] {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    let bytes: Vec<u8> = mask.iter().map(|&m| m as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Returns `(width, height, values, mask)` with `per_pixel` values per pixel.
fn read_grid(path: &Path, magic: &[u8; 4], per_pixel: usize) -> Result<(usize, usize, Vec<f32>, Vec<bool>)> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    let name = String::from_utf8_lossy(magic);
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(Error::Format(format!("{}: missing {name} header", path.display())));
    }
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
    let (width, height) = (u32_at(4), u32_at(8));
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format(format!("{}: dimensions overflow", path.display())))?;
    let expected = 12 + n * per_pixel * 4 + n;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {expected} for {width}x{height}",
            path.display(),
            bytes.len()
        )));
    }
    let payload = &bytes[12..12 + n * per_pixel * 4];
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mask = bytes[12 + n * per_pixel * 4..]
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("{}: mask byte {other}", path.display()))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((width, height, values, mask))
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let values = flow
        .vectors()
        .iter()
        .zip(flow.mask())
        .flat_map(|(v, &ok)| if ok { [v[0] as f32, v[1] as f32] } else { [0.0; 2] });
    write_grid(path.as_ref(), FLOW_MAGIC, flow.dims(), values, flow.mask())
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let (w, h, values, mask) = read_grid(path.as_ref(), FLOW_MAGIC, 2)?;
    let vectors = values.chunks_exact(2).map(|c| [c[0] as f64, c[1] as f64]).collect();
    FlowField::new(w, h, vectors, mask)
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let values = depth
        .values()
        .iter()
        .zip(depth.mask())
        .map(|(&d, &ok)| if ok { d as f32 } else { 0.0 });
    write_grid(path.as_ref(), DEPTH_MAGIC, depth.dims(), values, depth.mask())
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let (w, h, values, mask) = read_grid(path.as_ref(), DEPTH_MAGIC, 1)?;
    DepthMap::new(w, h, values.into_iter().map(f64::from).collect(), mask)
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines; blank lines and `#`
/// comments are skipped.
pub fn parse_tum(text: &str) -> Result<Vec<TimedPose>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let fields = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if fields.len() != 8 {
            return Err(parse_err(format!("expected 8 fields, found {}", fields.len())));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        let rotation = Rotation::from_quaternion(fields[4], fields[5], fields[6], fields[7])
            .map_err(|e| parse_err(e.to_string()))?;
        poses.push(TimedPose {
            timestamp: fields[0],
            pose: Pose::new(rotation, Vec3::new(fields[1], fields[2], fields[3])),
        });
    }
    Ok(poses)
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<TimedPose>> {
    let mut text = String::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_tum(&text)
}

pub fn format_tum(poses: &[TimedPose]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = &p.pose.translation;
        let [qx, qy, qz, qw] = p.pose.rotation.to_quaternion();
        out.push_str(&format!("{} {} {} {} {} {} {} {}\n", p.timestamp, t.x, t.y, t.z, qx, qy, qz, qw));
    }
    out
}

pub fn write_tum(path: impl AsRef<Path>, poses: &[TimedPose]) -> Result<()> {
    fs::write(path, format_tum(poses))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistRecord {
    pub t: [f64; 3],
    pub theta: [f64; 3],
}

impl From<&Twist> for TwistRecord {
    fn from(tw: &Twist) -> Self {
        Self {
            t: tw.t.into(),
            theta: tw.theta.into(),
        }
    }
}

impl From<&TwistRecord> for Twist {
    fn from(r: &TwistRecord) -> Self {
        Twist::new(Vec3::from(r.t), Vec3::from(r.theta))
    }
}

/// Everything describing one blurred sample; paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub index: usize,
    /// Mid-exposure time, s.
    pub timestamp_s: f64,
    /// Shutter-open time, s.
    pub frame_start_s: f64,
    pub exposure_s: f64,
    pub blurred: PathBuf,
    pub sharp: PathBuf,
    pub flow_fw: PathBuf,
    pub flow_bw: PathBuf,
    pub depth: PathBuf,
    pub twist: TwistRecord,
    pub intrinsics: Intrinsics,
    pub virtual_frames: usize,
}

/// A sample manifest together with the directory its paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFiles {
    pub dir: PathBuf,
    pub manifest: SampleManifest,
}

pub const SAMPLE_MANIFEST: &str = "sample.json";

impl SampleFiles {
    /// Loads a manifest given either its path or the directory holding `sample.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(SAMPLE_MANIFEST) } else { path.to_path_buf() };
        let manifest: SampleManifest = read_json(&file)?;
        manifest.intrinsics.validate()?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, manifest })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn flow_fw(&self) -> Result<FlowField> {
        read_flow(self.resolve(&self.manifest.flow_fw))
    }

    pub fn flow_bw(&self) -> Result<FlowField> {
        read_flow(self.resolve(&self.manifest.flow_bw))
    }

    pub fn depth(&self) -> Result<DepthMap> {
        read_depth(self.resolve(&self.manifest.depth))
    }

    pub fn blurred(&self) -> Result<crate::image::Image> {
        crate::image::Image::read_png(self.resolve(&self.manifest.blurred))
    }

    pub fn twist(&self) -> Twist {
        Twist::from(&self.manifest.twist)
    }
}

/// Index of a synthesized dataset; sample directories are relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<PathBuf>,
    pub skipped: usize,
    pub intrinsics: Intrinsics,
    pub exposure_s: f64,
    pub frame_interval_s: f64,
    pub trajectory: PathBuf,
}

/// JSON form of a solved sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub timestamp_s: f64,
    pub twist_t: [f64; 3],
    pub twist_theta: [f64; 3],
    pub omega: [f64; 3],
    pub v: [f64; 3],
    pub condition_number: f64,
    pub residual_rms_px: f64,
    pub pixels_used: usize,
    pub exposure_s: f64,
}

impl SolveRecord {
    pub fn new(report: &SolverReport, velocity: &Velocity, exposure_s: f64, timestamp_s: f64) -> Self {
        Self {
            timestamp_s,
            twist_t: report.twist.t.into(),
            twist_theta: report.twist.theta.into(),
            omega: velocity.omega.into(),
            v: velocity.v.into(),
            condition_number: report.condition_number,
            residual_rms_px: report.residual_rms,
            pixels_used: report.pixels_used,
            exposure_s,
        }
    }
}
