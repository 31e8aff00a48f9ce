//! The evaluation protocol: alignment methods (no alignment, horizontal
//! flip, flip plus intensity registration, salient-landmark fit), landmark
//! to annotation matching rates, and pairwise error tables with per-method
//! aggregates.

pub mod intensity;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geom::Mat3;
use crate::manifest::{AnnotationSet, Manifest, Plane, Structure};
use crate::peaks::LandmarkSet;
use crate::raster::{self, GrayImage};
use crate::transform::{fit_transform, LandmarkPair, SimilarityTransform, TransformError};

pub use intensity::{masked_ncc, register_intensity, RegistrationOutcome, MAX_ITERATIONS_PER_LEVEL};

/// Default match radius: 10% of the HC long axis.
pub const DEFAULT_MATCH_RADIUS: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("image {image_id} has no annotations")]
    MissingAnnotation { image_id: String },
    #[error("image intensities are constant; correlation is undefined")]
    FlatImage,
    #[error("images must share dimensions, got {source_dims:?} and {target_dims:?}")]
    SizeMismatch {
        source_dims: (u32, u32),
        target_dims: (u32, u32),
    },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("failed to read {path}: {source}")]
    Raster {
        path: PathBuf,
        source: raster::RasterError,
    },
    #[error("failed to write report {path}: {source}")]
    Report {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Alignment method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// No alignment at all.
    #[serde(rename = "None")]
    None,
    /// Horizontal flip when the annotated head orientations differ.
    #[serde(rename = "LR")]
    Lr,
    /// The flip followed by intensity registration.
    #[serde(rename = "LR+Intensity")]
    LrIntensity,
    /// Similarity fit on the two matched salient landmarks.
    #[serde(rename = "SalientLM")]
    SalientLm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Lr, Method::LrIntensity, Method::SalientLm];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::None => "None",
            Method::Lr => "LR",
            Method::LrIntensity => "LR+Intensity",
            Method::SalientLm => "SalientLM",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Method::None),
            "lr" => Ok(Method::Lr),
            "lr-intensity" => Ok(Method::LrIntensity),
            "salient" => Ok(Method::SalientLm),
            other => Err(format!(
                "unknown method {other:?}; expected none, lr, lr-intensity, or salient"
            )),
        }
    }
}

/// Distances between transformed source structures and their target
/// counterparts, as percentages of the target's HC long axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentErrors {
    pub csp_pct: f64,
    pub lv_pct: f64,
    pub hc_pct: f64,
}

impl AlignmentErrors {
    pub const ZERO: AlignmentErrors = AlignmentErrors {
        csp_pct: 0.0,
        lv_pct: 0.0,
        hc_pct: 0.0,
    };

    pub fn as_array(&self) -> [f64; 3] {
        [self.csp_pct, self.lv_pct, self.hc_pct]
    }
}

/// One evaluated image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub source: String,
    pub target: String,
    #[serde(flatten)]
    pub errors: AlignmentErrors,
}

/// All evaluated pairs of one plane under one method, with aggregates. The
/// dispersion is the standard error of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plane: Plane,
    pub method: Method,
    pub pair_count: usize,
    pub mean: AlignmentErrors,
    pub sem: AlignmentErrors,
    pub pairs: Vec<PairError>,
}

/// Landmark/annotation agreement for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub image_id: String,
    pub radius_frac: f64,
    /// All discovered landmarks.
    pub total_landmarks: usize,
    /// Landmarks whose cluster the label map assigns to a structure.
    pub mapped_landmarks: usize,
    /// Mapped landmarks within the radius of their structure's reference.
    pub matched_landmarks: usize,
    /// Structures with at least one matched landmark (of 2).
    pub matched_structures: usize,
    /// Share of discovered landmarks near their correct structure.
    pub precision_pct: f64,
    /// Share of annotated structures found by some landmark.
    pub recall_pct: f64,
}

/// A pair a method could not score, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub plane: Plane,
    pub method: Method,
    pub source: String,
    pub target: String,
    pub reason: String,
}

/// Per-image landmark matches and the rate report.
pub fn match_landmarks(
    set: &LandmarkSet,
    ann: &AnnotationSet,
    label_map: &BTreeMap<usize, Structure>,
    radius_frac: f64,
) -> MatchReport {
    let radius = radius_frac * ann.hc_long_axis();
    let mut mapped = 0usize;
    let mut matched = 0usize;
    let mut matched_structures: BTreeSet<Structure> = BTreeSet::new();
    for lm in &set.landmarks {
        let Some(structure) = lm.cluster.and_then(|c| label_map.get(&c)) else {
            continue;
        };
        mapped += 1;
        if lm.pixel_pos.distance(ann.reference_point(*structure)) <= radius {
            matched += 1;
            matched_structures.insert(*structure);
        }
    }
    let total = set.landmarks.len();
    MatchReport {
        image_id: set.image_id.clone(),
        radius_frac,
        total_landmarks: total,
        mapped_landmarks: mapped,
        matched_landmarks: matched,
        matched_structures: matched_structures.len(),
        precision_pct: if total == 0 {
            0.0
        } else {
            100.0 * matched as f64 / total as f64
        },
        recall_pct: 100.0 * matched_structures.len() as f64 / Structure::ALL.len() as f64,
    }
}

/// The landmark chosen for each structure: the highest-saliency landmark
/// mapped to it that lies within the match radius of its reference point.
pub fn matched_by_structure(
    set: &LandmarkSet,
    ann: &AnnotationSet,
    label_map: &BTreeMap<usize, Structure>,
    radius_frac: f64,
) -> BTreeMap<Structure, crate::geom::Point> {
    let radius = radius_frac * ann.hc_long_axis();
    let mut chosen = BTreeMap::new();
    // landmarks are sorted by descending saliency, so first hit wins
    for lm in &set.landmarks {
        let Some(structure) = lm.cluster.and_then(|c| label_map.get(&c)) else {
            continue;
        };
        if lm.pixel_pos.distance(ann.reference_point(*structure)) <= radius {
            chosen.entry(*structure).or_insert(lm.pixel_pos);
        }
    }
    chosen
}

/// Structure-center distances after applying the transform, as percentages
/// of the target's HC long axis.
pub fn alignment_error(
    tf: &SimilarityTransform,
    source: &AnnotationSet,
    target: &AnnotationSet,
) -> AlignmentErrors {
    let scale = 100.0 / target.hc_long_axis();
    AlignmentErrors {
        csp_pct: tf.apply(source.csp_center).distance(target.csp_center) * scale,
        lv_pct: tf
            .apply(source.segment_midpoint())
            .distance(target.segment_midpoint())
            * scale,
        hc_pct: tf
            .apply(source.hc_ellipse.center)
            .distance(target.hc_ellipse.center)
            * scale,
    }
}

/// The "None" baseline: the identity transform.
pub fn baseline_none() -> SimilarityTransform {
    SimilarityTransform::identity()
}

/// The "LR" baseline: a pure horizontal flip when the annotated head
/// orientations (sign of CSP minus segment midpoint, in x) disagree.
pub fn baseline_lr(
    source: &AnnotationSet,
    target: &AnnotationSet,
    source_width: u32,
) -> Result<SimilarityTransform, EvalError> {
    let orientation = |ann: &AnnotationSet| {
        let dx = ann.csp_center.x - ann.segment_midpoint().x;
        if dx == 0.0 {
            0.0
        } else {
            dx.signum()
        }
    };
    let s = orientation(source);
    let t = orientation(target);
    if s == 0.0 || t == 0.0 {
        return Err(TransformError::AmbiguousOrientation.into());
    }
    if s == t {
        return Ok(SimilarityTransform::identity());
    }
    let mut tf = SimilarityTransform::identity();
    tf.flipped = true;
    tf.matrix = Mat3::flip_x(f64::from(source_width));
    Ok(tf)
}

/// Column means and standard errors of the mean over a set of pair rows.
pub fn summarize(pairs: &[PairError]) -> (AlignmentErrors, AlignmentErrors) {
    let n = pairs.len();
    if n == 0 {
        return (AlignmentErrors::ZERO, AlignmentErrors::ZERO);
    }
    let mut mean = [0.0f64; 3];
    for p in pairs {
        for (m, v) in mean.iter_mut().zip(p.errors.as_array()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut sem = [0.0f64; 3];
    if n > 1 {
        for p in pairs {
            for ((s, v), m) in sem.iter_mut().zip(p.errors.as_array()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut sem {
            *s = (*s / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        }
    }
    let pack = |a: [f64; 3]| AlignmentErrors {
        csp_pct: a[0],
        lv_pct: a[1],
        hc_pct: a[2],
    };
    (pack(mean), pack(sem))
}

/// Everything `evaluate_all` needs.
pub struct EvalContext<'a> {
    pub manifest: &'a Manifest,
    /// Path of the manifest file itself; relative entries resolve against
    /// its directory.
    pub manifest_path: &'a Path,
    /// Landmark sets with cluster labels assigned.
    pub landmark_sets: &'a [LandmarkSet],
    pub label_map: &'a BTreeMap<usize, Structure>,
    pub radius_frac: f64,
    pub methods: &'a [Method],
    /// 1 = fully serial; 0 = one thread per core; n = capped pool.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub reports: Vec<EvalReport>,
    pub matches: Vec<MatchReport>,
    pub skipped: Vec<SkippedPair>,
}

struct PairTask<'a> {
    plane: Plane,
    method: Method,
    source: &'a AnnotationSet,
    target: &'a AnnotationSet,
    source_width: u32,
}

/// Evaluates every requested method on all unordered image pairs of each
/// plane (source = lower manifest index). Pairs a method cannot score are
/// skipped with a reason rather than failing the run.
pub fn evaluate_all(ctx: &EvalContext) -> EvalOutcome {
    let lm_by_id: BTreeMap<&str, &LandmarkSet> = ctx
        .landmark_sets
        .iter()
        .map(|s| (s.image_id.as_str(), s))
        .collect();

    // annotated images in manifest order, with their annotation sets
    let mut annotated: Vec<(usize, AnnotationSet, u32)> = Vec::new();
    for (index, img) in ctx.manifest.images.iter().enumerate() {
        if let Some(ann) = img.annotation_set() {
            annotated.push((index, ann, img.pixel_width));
        }
    }

    // per-image matching, for the report and the SalientLM image filter
    let mut matches = Vec::new();
    let mut salient_pairs: BTreeMap<&str, BTreeMap<Structure, crate::geom::Point>> =
        BTreeMap::new();
    for (_, ann, _) in &annotated {
        if let Some(set) = lm_by_id.get(ann.image_id.as_str()) {
            matches.push(match_landmarks(set, ann, ctx.label_map, ctx.radius_frac));
            let chosen = matched_by_structure(set, ann, ctx.label_map, ctx.radius_frac);
            if chosen.len() == Structure::ALL.len() {
                salient_pairs.insert(ann.image_id.as_str(), chosen);
            }
        }
    }

    // image rasters, only if the intensity method runs
    let mut rasters: BTreeMap<&str, GrayImage> = BTreeMap::new();
    let mut raster_failures: BTreeMap<&str, String> = BTreeMap::new();
    if ctx.methods.contains(&Method::LrIntensity) {
        for (index, ann, _) in &annotated {
            let img = &ctx.manifest.images[*index];
            match &img.image {
                Some(rel) => {
                    let path = Manifest::resolve(ctx.manifest_path, rel);
                    match raster::read_image(&path) {
                        Ok(r) => {
                            rasters.insert(ann.image_id.as_str(), r);
                        }
                        Err(e) => {
                            raster_failures
                                .insert(ann.image_id.as_str(), format!("unreadable image: {e}"));
                        }
                    }
                }
                None => {
                    raster_failures
                        .insert(ann.image_id.as_str(), "no image raster in manifest".into());
                }
            }
        }
    }

    // task list: plane-grouped unordered pairs x methods, in deterministic
    // report order
    let mut tasks: Vec<PairTask> = Vec::new();
    for plane in Plane::ALL {
        let of_plane: Vec<&(usize, AnnotationSet, u32)> = annotated
            .iter()
            .filter(|(_, ann, _)| ann.plane == plane)
            .collect();
        for &method in ctx.methods {
            for (i, (_, src, src_width)) in of_plane.iter().enumerate() {
                for (_, tgt, _) in of_plane.iter().skip(i + 1) {
                    tasks.push(PairTask {
                        plane,
                        method,
                        source: src,
                        target: tgt,
                        source_width: *src_width,
                    });
                }
            }
        }
    }

    let run = |task: &PairTask| -> Result<AlignmentErrors, String> {
        score_pair(task, &salient_pairs, &rasters, &raster_failures)
    };
    let results: Vec<Result<AlignmentErrors, String>> = if ctx.jobs == 1 {
        tasks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.jobs) // 0 means one per core
            .build()
            .expect("thread pool");
        use rayon::prelude::*;
        pool.install(|| tasks.par_iter().map(run).collect())
    };

    // fold into (plane, method) reports, preserving task order
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut skipped: Vec<SkippedPair> = Vec::new();
    for (task, result) in tasks.iter().zip(results) {
        match result {
            Ok(errors) => {
                let report = match reports
                    .iter_mut()
                    .find(|r| r.plane == task.plane && r.method == task.method)
                {
                    Some(r) => r,
                    None => {
                        reports.push(EvalReport {
                            plane: task.plane,
                            method: task.method,
                            pair_count: 0,
                            mean: AlignmentErrors::ZERO,
                            sem: AlignmentErrors::ZERO,
                            pairs: Vec::new(),
                        });
                        reports.last_mut().unwrap()
                    }
                };
                report.pairs.push(PairError {
                    source: task.source.image_id.clone(),
                    target: task.target.image_id.clone(),
                    errors,
                });
            }
            Err(reason) => skipped.push(SkippedPair {
                plane: task.plane,
                method: task.method,
                source: task.source.image_id.clone(),
                target: task.target.image_id.clone(),
                reason,
            }),
        }
    }
    for report in &mut reports {
        report.pair_count = report.pairs.len();
        let (mean, sem) = summarize(&report.pairs);
        report.mean = mean;
        report.sem = sem;
    }
    EvalOutcome {
        reports,
        matches,
        skipped,
    }
}

fn score_pair(
    task: &PairTask,
    salient_pairs: &BTreeMap<&str, BTreeMap<Structure, crate::geom::Point>>,
    rasters: &BTreeMap<&str, GrayImage>,
    raster_failures: &BTreeMap<&str, String>,
) -> Result<AlignmentErrors, String> {
    let src = task.source;
    let tgt = task.target;
    let tf = match task.method {
        Method::None => baseline_none(),
        Method::Lr => baseline_lr(src, tgt, task.source_width).map_err(|e| e.to_string())?,
        Method::LrIntensity => {
            let fetch = |id: &str| {
                rasters.get(id).ok_or_else(|| {
                    raster_failures
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| format!("no raster for {id}"))
                })
            };
            let source_img = fetch(&src.image_id)?;
            let target_img = fetch(&tgt.image_id)?;
            let init = baseline_lr(src, tgt, task.source_width).map_err(|e| e.to_string())?;
            register_intensity(source_img, target_img, &init)
                .map_err(|e| e.to_string())?
                .transform
        }
        Method::SalientLm => {
            let found = |id: &str| {
                salient_pairs
                    .get(id)
                    .ok_or_else(|| format!("structures unmatched on {id}"))
            };
            let s = found(&src.image_id)?;
            let t = found(&tgt.image_id)?;
            let source_pair = LandmarkPair::new(
                s[&Structure::Csp],
                s[&Structure::LvOrTcd],
                task.source_width,
            );
            let target_pair = LandmarkPair::new(
                t[&Structure::Csp],
                t[&Structure::LvOrTcd],
                task.source_width,
            );
            fit_transform(&source_pair, &target_pair).map_err(|e| e.to_string())?
        }
    };
    Ok(alignment_error(&tf, src, tgt))
}

/// Writes the per-pair rows as CSV: plane, method, pair, then the three
/// error columns.
pub fn write_csv_report(path: &Path, reports: &[EvalReport]) -> Result<(), EvalError> {
    let wrap = |source: std::io::Error| EvalError::Report {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    writeln!(out, "plane,method,pair,csp_err,lv_err,hc_err").map_err(wrap)?;
    for report in reports {
        for pair in &report.pairs {
            writeln!(
                out,
                "{},{},{}->{},{},{},{}",
                report.plane,
                report.method,
                pair.source,
                pair.target,
                pair.errors.csp_pct,
                pair.errors.lv_pct,
                pair.errors.hc_pct
            )
            .map_err(wrap)?;
        }
    }
    std::fs::write(path, out).map_err(wrap)
}
