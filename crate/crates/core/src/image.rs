//! Planar color images in unit range.

use std::path::Path;

use image::{imageops::FilterType, RgbImage};

use crate::error::{Error, Result};

/// A `channels x height x width` image stored plane by plane.
///
/// Values are nominally in `[0, 1]`; noisy inputs and raw network outputs may
/// leave that range and are only clamped by [`crate::datapipe::quantize`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &ImagePlane, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Copies a `size x size` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<ImagePlane> {
        if top + size > self.height || left + size > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {size}x{size} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(ImagePlane::from_fn(self.channels, size, size, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    pub fn flip_horizontal(&self) -> ImagePlane {
        let w = self.width;
        ImagePlane::from_fn(self.channels, self.height, w, |c, y, x| {
            self.get(c, y, w - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> ImagePlane {
        let h = self.height;
        ImagePlane::from_fn(self.channels, h, self.width, |c, y, x| {
            self.get(c, h - 1 - y, x)
        })
    }

    /// Converts an 8-bit RGB raster.
    pub fn from_rgb8(img: &RgbImage) -> ImagePlane {
        let (w, h) = img.dimensions();
        ImagePlane::from_fn(3, h as usize, w as usize, |c, y, x| {
            f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        })
    }

    /// Quantizes to 8-bit RGB using the evaluation rounding rule.
    pub fn to_rgb8(&self) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "RGB output needs 3 channels, got {}",
                self.channels
            )));
        }
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = img.get_pixel_mut(x as u32, y as u32);
                for c in 0..3 {
                    px[c] = crate::datapipe::quantize_value(self.get(c, y, x));
                }
            }
        }
        Ok(img)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ImagePlane> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(ImagePlane::from_rgb8(&img))
    }

    /// Loads and bilinearly resizes to `size x size`.
    pub fn load_resized(path: impl AsRef<Path>, size: u32) -> Result<ImagePlane> {
        let img = image::open(path.as_ref())?.to_rgb8();
        let img = if img.dimensions() == (size, size) {
            img
        } else {
            image::imageops::resize(&img, size, size, FilterType::Triangle)
        };
        Ok(ImagePlane::from_rgb8(&img))
    }

    /// Writes an 8-bit PNG regardless of the path's extension.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()?
            .save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }
}
