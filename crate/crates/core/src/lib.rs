//! Toolkit for discovering visually salient landmarks on precomputed
//! saliency grids, matching them across images by clustering the co-located
//! feature vectors, and aligning image pairs with a two-landmark similarity
//! transform.
//!
//! The pipeline stages map onto the modules of this crate:
//!
//! 1. [`grid`] / [`manifest`] / [`raster`] — dense grid and image I/O plus
//!    dataset metadata.
//! 2. [`peaks`] — landmark extraction: maximum filter, threshold, subpixel
//!    Gaussian refinement.
//! 3. [`cluster`] — feature collection, k-means, silhouette-based selection
//!    of the cluster count.
//! 4. [`transform`] — two-landmark similarity fit (optional horizontal flip,
//!    translation, rotation, isotropic scale) and image warping.
//! 5. [`eval`] — alignment baselines (identity, left-right flip, flip plus
//!    intensity registration), landmark/annotation matching rates, and the
//!    pairwise error report.
//! 6. [`synth`] — deterministic synthetic scenes with known ground truth.

pub mod cluster;
pub mod eval;
pub mod geom;
pub mod grid;
pub mod manifest;
pub mod optim;
pub mod peaks;
pub mod raster;
pub mod synth;
pub mod transform;

pub use geom::{Mat3, Point};
pub use grid::{FeatureGrid, GridData, ImageMeta, SaliencyGrid};
pub use manifest::{AnnotationSet, Manifest, Plane, Structure};
pub use peaks::{Landmark, LandmarkSet, PeakConfig};
pub use transform::{LandmarkPair, SimilarityTransform};

/// Crate version, embedded in every machine-readable output for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
