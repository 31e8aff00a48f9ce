//! Grayscale pixel rasters and their file I/O (portable graymap and PNG).
//!
//! Pixel values are `f32` in `[0, 1]`. Continuous pixel coordinates follow
//! the cell-center convention used everywhere in this crate: the center of
//! pixel `(i, j)` is at `(i + 0.5, j + 0.5)`, so an image spans
//! `[0, width] x [0, height]`.

use std::path::{Path, PathBuf};

use image::{GrayImage as GrayU8Image, ImageFormat, Luma};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("unsupported image extension {0:?} (expected .pgm or .png)")]
    UnsupportedFormat(String),
    #[error("empty image")]
    Empty,
}

/// A grayscale image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || data.len() != (width as usize) * (height as usize) {
            return Err(RasterError::Empty);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Bilinear sample at a continuous pixel-center coordinate.
    ///
    /// Returns `None` when the bilinear support is not fully inside the
    /// image; out-of-image reads are the caller's fill decision.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        let u = x - 0.5;
        let v = y - 0.5;
        if !(0.0..=(self.width as f64 - 1.0)).contains(&u)
            || !(0.0..=(self.height as f64 - 1.0)).contains(&v)
        {
            return None;
        }
        let i0 = (u.floor() as u32).min(self.width - 2);
        let j0 = (v.floor() as u32).min(self.height - 2);
        let fx = (u - i0 as f64) as f32;
        let fy = (v - j0 as f64) as f32;
        let p00 = self.get(i0, j0);
        let p10 = self.get(i0 + 1, j0);
        let p01 = self.get(i0, j0 + 1);
        let p11 = self.get(i0 + 1, j0 + 1);
        // the two-multiply blend is exact at fx/fy of 0 and 1, so sampling
        // at a pixel center returns that pixel bit-for-bit
        let top = (1.0 - fx) * p00 + fx * p10;
        let bottom = (1.0 - fx) * p01 + fx * p11;
        Some((1.0 - fy) * top + fy * bottom)
    }

    /// Box-average downsampling by an integer factor; edge blocks may be
    /// partial.
    pub fn downsample(&self, factor: u32) -> GrayImage {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let out_w = self.width.div_ceil(factor);
        let out_h = self.height.div_ceil(factor);
        let mut data = Vec::with_capacity(out_w as usize * out_h as usize);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let x0 = ox * factor;
                let y0 = oy * factor;
                let x1 = (x0 + factor).min(self.width);
                let y1 = (y0 + factor).min(self.height);
                let mut sum = 0.0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += self.get(x, y) as f64;
                    }
                }
                let count = ((x1 - x0) * (y1 - y0)) as f64;
                data.push((sum / count) as f32);
            }
        }
        GrayImage {
            width: out_w,
            height: out_h,
            data,
        }
    }

    fn to_u8(&self) -> GrayU8Image {
        GrayU8Image::from_fn(self.width, self.height, |x, y| {
            let v = (self.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            Luma([v])
        })
    }
}

/// Writes a raster as `.pgm` or `.png` depending on the extension.
pub fn write_image(img: &GrayImage, path: &Path) -> Result<(), RasterError> {
    let format = format_for(path)?;
    img.to_u8()
        .save_with_format(path, format)
        .map_err(|source| RasterError::Codec {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a `.pgm` or `.png` grayscale raster into `[0, 1]` floats.
pub fn read_image(path: &Path) -> Result<GrayImage, RasterError> {
    let dynamic = image::open(path).map_err(|source| RasterError::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = dynamic.into_luma8();
    let (width, height) = gray.dimensions();
    let data = gray.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
    GrayImage::new(width, height, data)
}

fn format_for(path: &Path) -> Result<ImageFormat, RasterError> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
    {
        Some(ext) if ext == "pgm" || ext == "pnm" => Ok(ImageFormat::Pnm),
        Some(ext) if ext == "png" => Ok(ImageFormat::Png),
        other => Err(RasterError::UnsupportedFormat(
            other.unwrap_or_default().to_string(),
        )),
    }
}
