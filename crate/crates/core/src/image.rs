//! Floating-point images with a color-space tag.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Srgb,
    Linear,
}

impl ColorSpace {
    pub fn name(self) -> &'static str {
        match self {
            ColorSpace::Srgb => "sRGB",
            ColorSpace::Linear => "linear",
        }
    }
}

/// Row-major, channel-interleaved image. sRGB-tagged images hold values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    space: ColorSpace,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        space: ColorSpace,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Format(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite pixel value".into()));
        }
        if space == ColorSpace::Srgb && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("sRGB values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            space,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data, space)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64, space: ColorSpace) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels], space)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn expect_space(&self, space: ColorSpace) -> Result<()> {
        if self.space != space {
            return Err(Error::ColorSpace {
                expected: space.name(),
                found: self.space.name(),
            });
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() || self.channels != other.channels {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// Bilinear sample at raw position `(x, y)`, clamping to the border.
    /// Returns whether the position lies inside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        let inside = x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64;
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (xc.floor() as usize).min(self.width - 1);
        let y0 = (yc.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = xc - x0 as f64;
        let ay = yc - y0 as f64;
        let (w00, w10, w01, w11) = (
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        );
        let (p00, p10, p01, p11) = (
            self.pixel(x0, y0),
            self.pixel(x1, y0),
            self.pixel(x0, y1),
            self.pixel(x1, y1),
        );
        for c in 0..self.channels {
            out[c] = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
        }
        inside
    }

    /// Rec. 709 luma of an RGB image; single-channel images are returned unchanged.
    pub fn to_luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
            space: self.space,
        }
    }

    /// Reads an 8-bit PNG as an sRGB image. Grayscale files give one channel,
    /// everything else is converted to RGB.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
        let img = image::open(path)?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, bytes) = match img.color() {
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16 => {
                (1, img.to_luma8().into_raw())
            }
            _ => (3, img.to_rgb8().into_raw()),
        };
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Image::new(width, height, channels, data, ColorSpace::Srgb)
    }

    /// Writes an sRGB image as 8-bit PNG with round-to-nearest quantization.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.expect_space(ColorSpace::Srgb)?;
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            GrayImage::from_raw(w, h, bytes)
                .ok_or_else(|| Error::Format("buffer size".into()))?
                .save(path)?;
        } else {
            RgbImage::from_raw(w, h, bytes)
                .ok_or_else(|| Error::Format("buffer size".into()))?
                .save(path)?;
        }
        Ok(())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_srgb() {
        assert!(Image::new(1, 1, 1, vec![1.5], ColorSpace::Srgb).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5], ColorSpace::Linear).is_ok());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0], ColorSpace::Linear).is_err());
    }

    #[test]
    fn bilinear_is_exact_on_grid_and_interpolates_between() {
        let img = Image::from_fn(4, 3, 1, ColorSpace::Linear, |x, y, _| (x * 10 + y) as f64 * 0.37).unwrap();
        let mut out = [0.0];
        for y in 0..3 {
            for x in 0..4 {
                assert!(img.sample_bilinear(x as f64, y as f64, &mut out));
                assert_eq!(out[0], img.get(x, y, 0));
            }
        }
        assert!(img.sample_bilinear(1.5, 0.25, &mut out));
        assert!((out[0] - (15.0 + 0.25) * 0.37).abs() < 1e-12);
        assert!(!img.sample_bilinear(-0.5, 1.0, &mut out));
        assert_eq!(out[0], img.get(0, 1, 0));
        assert!(!img.sample_bilinear(3.01, 1.0, &mut out));
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(5, 4, 3, ColorSpace::Srgb, |x, y, c| ((x + 2 * y + 3 * c) % 7) as f64 / 6.0).unwrap();
        img.write_png(&path).unwrap();
        let back = Image::read_png(&path).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let gray = img.to_luma();
        gray.write_png(&path).unwrap();
        assert_eq!(Image::read_png(&path).unwrap().channels(), 1);
    }

    #[test]
    fn linear_images_are_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::constant(2, 2, 1, 0.5, ColorSpace::Linear).unwrap();
        assert!(matches!(img.write_png(dir.path().join("x.png")), Err(Error::ColorSpace { .. })));
    }
}
