//! Resolving the sign ambiguity of blur-derived motion with neighbouring frames.
//!
//! Blur shows how far the camera moved during the exposure but not in which
//! temporal direction. Each candidate flow is stretched to the gap between
//! consecutive shutter starts, used to warp the current frame towards its
//! neighbours, and the candidate whose warps match the neighbours better wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FlowField, Twist};
use crate::image::Image;

/// Warps must leave at least this fraction of pixels valid.
pub const MIN_COVERAGE: f64 = 0.1;

/// `F' = (gap / exposure) F`.
pub fn extrapolate_flow(flow: &FlowField, exposure_s: f64, frame_gap_s: f64) -> Result<FlowField> {
    for t in [exposure_s, frame_gap_s] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositiveTime(t));
        }
    }
    if frame_gap_s == exposure_s {
        return Ok(flow.clone());
    }
    Ok(flow.scaled(frame_gap_s / exposure_s))
}

/// Backward warp that moves image content along `flow`: output pixel `q`
/// samples `img` bilinearly at `q - flow(q)`. Samples outside the image or
/// at pixels without flow are marked invalid.
pub fn warp_image(img: &Image, flow: &FlowField) -> Result<(Image, Vec<bool>)> {
    if img.dims() != flow.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            found: flow.dims(),
        });
    }
    let (width, height) = img.dims();
    let channels = img.channels();
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut data = vec![0.0; width * channels];
            let mut valid = vec![false; width];
            for x in 0..width {
                let out = &mut data[x * channels..(x + 1) * channels];
                match flow.get(x, y) {
                    Some([fx, fy]) => {
                        valid[x] = img.sample_bilinear(x as f64 - fx, y as f64 - fy, out);
                    }
                    None => out.copy_from_slice(img.pixel(x, y)),
                }
            }
            (data, valid)
        })
        .collect();
    let mut data = Vec::with_capacity(width * height * channels);
    let mut valid = Vec::with_capacity(width * height);
    for (d, v) in rows {
        data.extend(d);
        valid.extend(v);
    }
    Ok((Image::new(width, height, channels, data, img.space())?, valid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhotometricMode {
    /// Absolute difference averaged over every channel.
    #[default]
    Rgb,
    /// Absolute difference of Rec. 709 luma.
    Luma,
}

/// Mean absolute difference over pixels where `mask` is set.
pub fn photometric_error(a: &Image, b: &Image, mask: &[bool], mode: PhotometricMode) -> Result<f64> {
    a.same_shape(b)?;
    let (width, height) = a.dims();
    if mask.len() != width * height {
        return Err(Error::Format(format!(
            "mask of {} entries for a {width}x{height} image",
            mask.len()
        )));
    }
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 || (valid as f64) < MIN_COVERAGE * (width * height) as f64 {
        return Err(Error::InsufficientCoverage {
            valid,
            total: width * height,
        });
    }
    let (a, b) = match mode {
        PhotometricMode::Rgb => (a.clone(), b.clone()),
        PhotometricMode::Luma => (a.to_luma(), b.to_luma()),
    };
    let c = a.channels();
    let sum: f64 = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| {
            let (pa, pb) = (&a.data()[i * c..(i + 1) * c], &b.data()[i * c..(i + 1) * c]);
            pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum::<f64>()
        })
        .sum();
    Ok(sum / (valid * c) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    #[default]
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DisambiguationOptions {
    pub tie_break: TieBreak,
    pub photometric: PhotometricMode,
}

/// Three consecutive frames and the shutter-start gaps between them.
#[derive(Debug, Clone, Copy)]
pub struct FrameTriplet<'a> {
    pub prev: &'a Image,
    pub cur: &'a Image,
    pub next: &'a Image,
    pub exposure_s: f64,
    pub gap_prev_s: f64,
    pub gap_next_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disambiguation {
    pub twist: Twist,
    pub direction: Direction,
    pub error_fw: f64,
    pub error_bw: f64,
}

fn warp_error(
    frames: &FrameTriplet,
    flow: &FlowField,
    gap_s: f64,
    target: &Image,
    mode: PhotometricMode,
) -> Result<f64> {
    let (warped, valid) = warp_image(frames.cur, &extrapolate_flow(flow, frames.exposure_s, gap_s)?)?;
    photometric_error(target, &warped, &valid, mode)
}

/// Picks the candidate motion whose extrapolated warps of the current frame
/// better explain both neighbours. Each side uses its own frame gap.
pub fn disambiguate(
    frames: &FrameTriplet,
    flow_fw: &FlowField,
    flow_bw: &FlowField,
    twist_fw: &Twist,
    twist_bw: &Twist,
    options: &DisambiguationOptions,
) -> Result<Disambiguation> {
    frames.cur.same_shape(frames.prev)?;
    frames.cur.same_shape(frames.next)?;
    let mode = options.photometric;
    let fw_next = warp_error(frames, flow_fw, frames.gap_next_s, frames.next, mode)?;
    let bw_prev = warp_error(frames, flow_bw, frames.gap_prev_s, frames.prev, mode)?;
    let bw_next = warp_error(frames, flow_bw, frames.gap_next_s, frames.next, mode)?;
    let fw_prev = warp_error(frames, flow_fw, frames.gap_prev_s, frames.prev, mode)?;
    let error_fw = fw_next + bw_prev;
    let error_bw = bw_next + fw_prev;
    let direction = if error_fw < error_bw {
        Direction::Forward
    } else if error_bw < error_fw {
        Direction::Backward
    } else {
        match options.tie_break {
            TieBreak::Forward => Direction::Forward,
            TieBreak::Backward => Direction::Backward,
        }
    };
    let twist = match direction {
        Direction::Forward => *twist_fw,
        Direction::Backward => *twist_bw,
    };
    Ok(Disambiguation {
        twist,
        direction,
        error_fw,
        error_bw,
    })
}
