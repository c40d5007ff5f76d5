//! Float RGB images and PNG conversion.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Row-major interleaved RGB image with `f64` channels, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.data[(y * width + x) * 3 + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.data.len() == other.data.len()
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            })
        }
    }

    /// Mirror horizontally and/or vertically.
    pub fn flipped(&self, flip_x: bool, flip_y: bool) -> Image {
        Image::from_fn(self.width, self.height, |x, y, c| {
            let sx = if flip_x { self.width - 1 - x } else { x };
            let sy = if flip_y { self.height - 1 - y } else { y };
            self.data[(sy * self.width + sx) * 3 + c]
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::InvalidParameter {
                name: "crop",
                reason: format!(
                    "window {width}x{height}+{x0}+{y0} outside {}x{} image",
                    self.width, self.height
                ),
            });
        }
        Ok(Image::from_fn(width, height, |x, y, c| {
            self.data[((y + y0) * self.width + x + x0) * 3 + c]
        }))
    }

    /// Box-filter downsample by an integer factor.
    pub fn downsample(&self, factor: usize) -> Image {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        Image::from_fn(w, h, |x, y, c| {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += self.data[((y * factor + dy) * self.width + x * factor + dx) * 3 + c];
                }
            }
            acc * norm
        })
    }

    /// Load an 8-bit PNG; channel values are scaled by `1/255`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let rgb = image::open(path)
            .map_err(|source| Error::ImageRead {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(&rgb))
    }

    pub fn from_rgb8(rgb: &RgbImage) -> Image {
        let (w, h) = rgb.dimensions();
        Image {
            width: w as usize,
            height: h as usize,
            data: rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let buf: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|source| Error::ImageWrite {
            path: path.to_path_buf(),
            source,
        })
    }
}
