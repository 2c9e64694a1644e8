use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum relative disagreement between `fx` and `fy` tolerated by the
/// single-focal-length motion model.
pub const FOCAL_TOLERANCE: f64 = 1e-3;

/// Pinhole intrinsics. Pixel coordinates handed to the motion model are
/// centered on the principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// A pixel position relative to the principal point, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intrinsics = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidIntrinsics(format!(
                "image must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// The single focal length `(fx + fy) / 2` used by the motion model.
    pub fn focal(&self) -> Result<f64> {
        self.validate()?;
        if (self.fx - self.fy).abs() / self.fx.max(self.fy) > FOCAL_TOLERANCE {
            return Err(Error::FocalMismatch {
                fx: self.fx,
                fy: self.fy,
            });
        }
        Ok(0.5 * (self.fx + self.fy))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn centered_coords(&self, raw_x: usize, raw_y: usize) -> Result<PixelCoord> {
        if raw_x >= self.width || raw_y >= self.height {
            return Err(Error::OutOfBounds {
                x: raw_x,
                y: raw_y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.center(raw_x as f64, raw_y as f64))
    }

    /// Unchecked centering of a (possibly fractional) raw position.
    #[inline]
    pub fn center(&self, raw_x: f64, raw_y: f64) -> PixelCoord {
        PixelCoord {
            x: raw_x - self.cx,
            y: raw_y - self.cy,
        }
    }

    #[inline]
    pub fn uncenter(&self, p: PixelCoord) -> (f64, f64) {
        (p.x + self.cx, p.y + self.cy)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, format!("{self}\n"))?;
        Ok(())
    }
}

impl fmt::Display for Intrinsics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }
}

/// Parses the one-line `fx fy cx cy width height` format.
impl FromStr for Intrinsics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lines: Vec<(usize, &str)> = s
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let (idx, line) = match lines.as_slice() {
            [single] => *single,
            [] => return Err(Error::Parse { line: 1, msg: "empty intrinsics file".into() }),
            [_, (idx, _), ..] => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "intrinsics must be a single line".into(),
                })
            }
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |msg: String| Error::Parse { line: idx + 1, msg };
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
        }
        let float = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("field {}: {e}", i + 1)))
        };
        let int = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| parse_err(format!("field {}: {e}", i + 1)))
        };
        Intrinsics::new(float(0)?, float(1)?, float(2)?, float(3)?, int(4)?, int(5)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vga(cx: f64, cy: f64) -> Intrinsics {
        Intrinsics::new(500.0, 500.0, cx, cy, 640, 480).unwrap()
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let p = vga(320.0, 240.0).centered_coords(320, 240).unwrap();
        assert_eq!((p.x, p.y), (0.0, 0.0));
    }

    #[test]
    fn corner_maps_to_negative_principal_point() {
        let p = vga(320.0, 240.0).centered_coords(0, 0).unwrap();
        assert_eq!((p.x, p.y), (-320.0, -240.0));
    }

    #[test]
    fn fractional_principal_point() {
        let p = vga(319.5, 239.5).centered_coords(639, 479).unwrap();
        assert_eq!((p.x, p.y), (319.5, 239.5));
    }

    #[test]
    fn out_of_bounds_index_is_rejected() {
        let k = vga(320.0, 240.0);
        assert!(matches!(k.centered_coords(640, 0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(k.centered_coords(0, 480), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn centered_coords_round_trip_every_pixel() {
        let k = Intrinsics::new(50.0, 50.0, 3.25, 2.5, 7, 5).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                let p = k.centered_coords(x, y).unwrap();
                assert_eq!(k.uncenter(p), (x as f64, y as f64));
            }
        }
    }

    #[test]
    fn focal_averaging_and_mismatch() {
        let k = Intrinsics::new(500.0, 500.4, 320.0, 240.0, 640, 480).unwrap();
        assert_eq!(k.focal().unwrap(), 500.2);
        let k = Intrinsics::new(500.0, 501.0, 320.0, 240.0, 640, 480).unwrap();
        assert!(matches!(k.focal(), Err(Error::FocalMismatch { .. })));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 4).is_err());
        assert!(Intrinsics::new(f64::NAN, 1.0, 0.0, 0.0, 4, 4).is_err());
    }

    #[test]
    fn parses_single_line() {
        let k: Intrinsics = "525 525.0 319.5 239.5 640 480\n".parse().unwrap();
        assert_eq!(k, Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap());
        let back: Intrinsics = k.to_string().parse().unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn strict_field_count() {
        assert!("525 525 319.5 239.5 640".parse::<Intrinsics>().is_err());
        assert!("525 525 319.5 239.5 640 480 1".parse::<Intrinsics>().is_err());
        assert!("525 525 319.5 239.5 640 480\n1 2 3 4 5 6".parse::<Intrinsics>().is_err());
        assert!("525 525 319.5 239.5 640.5 480".parse::<Intrinsics>().is_err());
        assert!("".parse::<Intrinsics>().is_err());
    }
}
