//! Dataset manifest: one JSON document describing every image of a dataset,
//! its grid files and optional ground-truth annotations.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geom::Point;
use crate::grid::ImageMeta;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("i/o failure reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error("image {id:?}: {reason}")]
    InvalidImage { id: String, reason: String },
}

/// Fetal-brain standard plane of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Plane {
    /// Transventricular.
    TV,
    /// Transcerebellar.
    TC,
}

impl Plane {
    pub const ALL: [Plane; 2] = [Plane::TV, Plane::TC];
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Plane::TV => write!(f, "TV"),
            Plane::TC => write!(f, "TC"),
        }
    }
}

/// An annotated anatomical structure a cluster label can be mapped onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Structure {
    /// Cavum septi pellucidi, annotated as a point.
    #[serde(rename = "csp")]
    Csp,
    /// Lateral ventricle (TV plane) or transcerebellar diameter (TC plane),
    /// annotated as a segment.
    #[serde(rename = "lv")]
    LvOrTcd,
}

impl Structure {
    pub const ALL: [Structure; 2] = [Structure::Csp, Structure::LvOrTcd];
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Structure::Csp => write!(f, "csp"),
            Structure::LvOrTcd => write!(f, "lv"),
        }
    }
}

impl std::str::FromStr for Structure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csp" => Ok(Structure::Csp),
            "lv" | "tcd" => Ok(Structure::LvOrTcd),
            other => Err(format!("unknown structure {other:?}; expected csp, lv, or tcd")),
        }
    }
}

/// Head-circumference ellipse annotation, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HcEllipse {
    pub center: Point,
    /// Semi-major axis.
    pub a: f64,
    /// Semi-minor axis.
    pub b: f64,
    /// Orientation of the major axis, radians.
    pub theta: f64,
}

impl HcEllipse {
    /// The long axis (2a) used as the error unit in evaluation.
    pub fn long_axis(&self) -> f64 {
        2.0 * self.a
    }
}

/// Per-image ground-truth annotations as they appear in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub csp_center: Point,
    /// LV segment on TV planes, TCD segment on TC planes.
    pub segment: [Point; 2],
    pub hc_ellipse: HcEllipse,
}

/// One dataset image: identity, dimensions, grid file paths and optional
/// annotations. Paths are interpreted relative to the manifest location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    pub pixel_width: u32,
    pub pixel_height: u32,
    pub saliency_grid: PathBuf,
    pub feature_grid: PathBuf,
    pub plane: Plane,
    /// Optional pixel raster (portable graymap or PNG); required only by the
    /// intensity baseline and warp outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Annotations>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Toolkit version that produced the manifest, when generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    /// Generator configuration, when generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub images: Vec<ManifestImage>,
}

/// Ground-truth structures of one image, paired with its identity, as used
/// by the evaluation protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub image_id: String,
    pub plane: Plane,
    pub csp_center: Point,
    pub lv_or_tcd_segment: [Point; 2],
    pub hc_ellipse: HcEllipse,
}

impl AnnotationSet {
    /// Midpoint of the LV/TCD segment, the structure's reference point.
    pub fn segment_midpoint(&self) -> Point {
        (self.lv_or_tcd_segment[0] + self.lv_or_tcd_segment[1]) * 0.5
    }

    pub fn hc_long_axis(&self) -> f64 {
        self.hc_ellipse.long_axis()
    }

    /// Reference point a structure is evaluated at: the CSP's annotated
    /// center, or the LV/TCD segment midpoint.
    pub fn reference_point(&self, structure: Structure) -> Point {
        match structure {
            Structure::Csp => self.csp_center,
            Structure::LvOrTcd => self.segment_midpoint(),
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if !(self.hc_ellipse.a >= self.hc_ellipse.b && self.hc_ellipse.b > 0.0) {
            return Err(ManifestError::InvalidImage {
                id: self.image_id.clone(),
                reason: format!(
                    "hc_ellipse must satisfy a >= b > 0, got a={} b={}",
                    self.hc_ellipse.a, self.hc_ellipse.b
                ),
            });
        }
        Ok(())
    }
}

impl ManifestImage {
    pub fn annotation_set(&self) -> Option<AnnotationSet> {
        self.annotations.map(|ann| AnnotationSet {
            image_id: self.id.clone(),
            plane: self.plane,
            csp_center: ann.csp_center,
            lv_or_tcd_segment: ann.segment,
            hc_ellipse: ann.hc_ellipse,
        })
    }

    /// Grid-to-pixel metadata for this image given its grid dimensions.
    pub fn meta(&self, grid_width: u32, grid_height: u32) -> ImageMeta {
        ImageMeta::derive(
            self.id.clone(),
            self.pixel_width,
            self.pixel_height,
            grid_width,
            grid_height,
        )
    }
}

impl Manifest {
    pub fn new(images: Vec<ManifestImage>) -> Self {
        Self {
            version: None,
            config: None,
            images,
        }
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let file = File::open(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        let file = File::create(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)?;
        use std::io::Write;
        writeln!(writer).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = BTreeSet::new();
        for img in &self.images {
            if !seen.insert(img.id.clone()) {
                return Err(ManifestError::DuplicateId(img.id.clone()));
            }
            if img.pixel_width == 0 || img.pixel_height == 0 {
                return Err(ManifestError::InvalidImage {
                    id: img.id.clone(),
                    reason: "pixel dimensions must be nonzero".into(),
                });
            }
            if let Some(ann) = img.annotation_set() {
                ann.validate()?;
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Result<&ManifestImage, ManifestError> {
        self.images
            .iter()
            .find(|img| img.id == id)
            .ok_or_else(|| ManifestError::UnknownImage(id.to_string()))
    }

    /// Resolves a manifest-relative path against the manifest's directory.
    pub fn resolve(manifest_path: &Path, entry: &Path) -> PathBuf {
        if entry.is_absolute() {
            entry.to_path_buf()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(entry)
        }
    }
}
