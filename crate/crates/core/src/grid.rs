//! Dense grid types and their binary file format.
//!
//! Grids are stored in a small self-describing format: the 4-byte magic
//! `SLGD`, three little-endian `u32` fields (width, height, channels), then
//! `width * height * channels` little-endian IEEE-754 `f32` values in
//! row-major, channel-interleaved order. A file with `channels == 1` decodes
//! as a [`SaliencyGrid`], anything else as a [`FeatureGrid`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::geom::Point;

pub const GRID_MAGIC: [u8; 4] = *b"SLGD";

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"SLGD\"")]
    BadMagic,
    #[error("dimension mismatch: header declares {declared} values, payload holds {actual}")]
    DimensionMismatch { declared: u64, actual: u64 },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("saliency value {value} at index {index} outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f32 },
    #[error("invalid dimensions {width}x{height}x{channels}: {reason}")]
    InvalidDimensions {
        width: u32,
        height: u32,
        channels: u32,
        reason: &'static str,
    },
}

/// A scalar field of predicted gaze probability, one value per grid cell.
///
/// Values are row-major and confined to `[0, 1]`; the grid is at least 3x3
/// so every interior maximum has a full neighborhood for subpixel
/// refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyGrid {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl SaliencyGrid {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, GridError> {
        if width < 3 || height < 3 {
            return Err(GridError::InvalidDimensions {
                width,
                height,
                channels: 1,
                reason: "saliency grids must be at least 3x3",
            });
        }
        if values.len() != (width as usize) * (height as usize) {
            return Err(GridError::DimensionMismatch {
                declared: width as u64 * height as u64,
                actual: values.len() as u64,
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(GridError::NonFiniteValue { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(GridError::ValueOutOfRange { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn value(&self, x: u32, y: u32) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.values[y as usize * self.width as usize + x as usize]
    }
}

/// A per-cell feature vector field (last-CNN-layer activations), row-major
/// with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    width: u32,
    height: u32,
    channels: u32,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(width: u32, height: u32, channels: u32, values: Vec<f32>) -> Result<Self, GridError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(GridError::InvalidDimensions {
                width,
                height,
                channels,
                reason: "all dimensions must be nonzero",
            });
        }
        let cells = (width as u64) * (height as u64) * (channels as u64);
        if values.len() as u64 != cells {
            return Err(GridError::DimensionMismatch {
                declared: cells,
                actual: values.len() as u64,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue { index });
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The feature vector at integer cell `(x, y)`.
    pub fn vector(&self, x: u32, y: u32) -> &[f32] {
        debug_assert!(x < self.width && y < self.height);
        let c = self.channels as usize;
        let start = (y as usize * self.width as usize + x as usize) * c;
        &self.values[start..start + c]
    }
}

/// Either grid kind, as decoded from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Saliency(SaliencyGrid),
    Feature(FeatureGrid),
}

impl GridData {
    pub fn width(&self) -> u32 {
        match self {
            GridData::Saliency(g) => g.width(),
            GridData::Feature(g) => g.width(),
        }
    }

    pub fn height(&self) -> u32 {
        match self {
            GridData::Saliency(g) => g.height(),
            GridData::Feature(g) => g.height(),
        }
    }

    pub fn channels(&self) -> u32 {
        match self {
            GridData::Saliency(_) => 1,
            GridData::Feature(g) => g.channels(),
        }
    }
}

/// Reads a grid file; `channels == 1` decodes as a saliency grid.
pub fn read_grid(path: &Path) -> Result<GridData, GridError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != GRID_MAGIC {
        return Err(GridError::BadMagic);
    }
    let mut header = [0u8; 12];
    reader.read_exact(&mut header)?;
    let width = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let channels = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let declared = width as u64 * height as u64 * channels as u64;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 || (payload.len() / 4) as u64 != declared {
        return Err(GridError::DimensionMismatch {
            declared,
            actual: (payload.len() / 4) as u64,
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();

    if channels == 1 {
        Ok(GridData::Saliency(SaliencyGrid::new(width, height, values)?))
    } else {
        Ok(GridData::Feature(FeatureGrid::new(
            width, height, channels, values,
        )?))
    }
}

pub fn read_saliency_grid(path: &Path) -> Result<SaliencyGrid, GridError> {
    match read_grid(path)? {
        GridData::Saliency(g) => Ok(g),
        GridData::Feature(g) => Err(GridError::InvalidDimensions {
            width: g.width,
            height: g.height,
            channels: g.channels,
            reason: "expected a single-channel saliency grid",
        }),
    }
}

/// Reads a feature grid; a single-channel file is widened to a one-channel
/// feature grid.
pub fn read_feature_grid(path: &Path) -> Result<FeatureGrid, GridError> {
    match read_grid(path)? {
        GridData::Feature(g) => Ok(g),
        GridData::Saliency(g) => FeatureGrid::new(g.width, g.height, 1, g.values),
    }
}

fn write_raw(
    path: &Path,
    width: u32,
    height: u32,
    channels: u32,
    values: &[f32],
) -> Result<(), GridError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(&GRID_MAGIC)?;
    writer.write_all(&width.to_le_bytes())?;
    writer.write_all(&height.to_le_bytes())?;
    writer.write_all(&channels.to_le_bytes())?;
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_saliency_grid(grid: &SaliencyGrid, path: &Path) -> Result<(), GridError> {
    write_raw(path, grid.width, grid.height, 1, &grid.values)
}

pub fn write_feature_grid(grid: &FeatureGrid, path: &Path) -> Result<(), GridError> {
    write_raw(path, grid.width, grid.height, grid.channels, &grid.values)
}

/// Image identity plus the mapping from grid cells to image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMeta {
    pub image_id: String,
    pub pixel_width: u32,
    pub pixel_height: u32,
    /// Pixels per grid cell, horizontally.
    pub scale_x: f64,
    /// Pixels per grid cell, vertically.
    pub scale_y: f64,
}

impl ImageMeta {
    /// Derives the cell size from the actual image and grid dimensions
    /// rather than assuming a fixed downsampling factor.
    pub fn derive(
        image_id: impl Into<String>,
        pixel_width: u32,
        pixel_height: u32,
        grid_width: u32,
        grid_height: u32,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            pixel_width,
            pixel_height,
            scale_x: pixel_width as f64 / grid_width as f64,
            scale_y: pixel_height as f64 / grid_height as f64,
        }
    }

    /// Maps a (possibly subpixel) grid position to pixel coordinates.
    ///
    /// Cell centers map to the pixel centers of their receptive block:
    /// `(p + 0.5) * scale` per axis.
    pub fn grid_to_pixel(&self, p: Point) -> Point {
        Point::new((p.x + 0.5) * self.scale_x, (p.y + 0.5) * self.scale_y)
    }

    /// Inverse of [`ImageMeta::grid_to_pixel`].
    pub fn pixel_to_grid(&self, p: Point) -> Point {
        Point::new(p.x / self.scale_x - 0.5, p.y / self.scale_y - 0.5)
    }
}
