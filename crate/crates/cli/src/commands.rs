//! Implementations of the five subcommands, plus the error type that fixes
//! the exit-code contract: content problems (bad flags, inconsistent or
//! malformed inputs) are validation errors, OS-level file failures are I/O
//! errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

use salient_align::cluster::{
    assign_to_landmarks, auto_cluster, canonicalize_labels, collect_features, ClusteringResult,
};
use salient_align::eval::{evaluate_all, write_csv_report, EvalContext, Method};
use salient_align::grid::{read_feature_grid, read_saliency_grid, GridError};
use salient_align::manifest::{Annotations, Manifest, ManifestError, ManifestImage};
use salient_align::peaks::extract_landmarks;
use salient_align::raster::{self, RasterError};
use salient_align::synth::{make_scene, SceneParams, SynthError};
use salient_align::transform::{fit_transform_with, warp_image, OrientationPolicy};
use salient_align::{LandmarkPair, LandmarkSet, PeakConfig, Plane, Point, Structure, VERSION};

use crate::{ClusterArgs, EvaluateArgs, ExtractArgs, RegisterArgs, SynthArgs};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

fn validation(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Landmarks file: the `extract` output and `cluster` input.
#[derive(Serialize, Deserialize)]
pub struct LandmarksFile {
    pub version: String,
    pub config: serde_json::Value,
    pub landmark_sets: Vec<LandmarkSet>,
}

/// Clusters file: landmark sets with labels assigned, plus the per-plane
/// clustering outcomes (selected k, centroids, per-k silhouettes).
#[derive(Serialize, Deserialize)]
pub struct ClustersFile {
    pub version: String,
    pub config: serde_json::Value,
    pub landmark_sets: Vec<LandmarkSet>,
    pub clusterings: BTreeMap<String, ClusteringResult>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    writeln!(writer).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| validation(format!("malformed JSON in {}: {e}", path.display())))
}

fn read_raster(path: &Path) -> Result<raster::GrayImage, CliError> {
    // the codec folds missing files into its own error type; surface them
    // as I/O so the exit code stays honest
    if !path.exists() {
        return Err(CliError::Io(format!("no such file: {}", path.display())));
    }
    Ok(raster::read_image(path)?)
}

/// Parses `csp=0,lv=1` into a cluster-label-to-structure map; both
/// structures must be covered exactly once.
pub fn parse_label_map(s: &str) -> Result<BTreeMap<usize, Structure>, CliError> {
    let mut map = BTreeMap::new();
    let mut seen = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, label) = part
            .split_once('=')
            .ok_or_else(|| validation(format!("bad label-map entry {part:?}; expected structure=label")))?;
        let structure: Structure = name.trim().parse().map_err(validation)?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|e| validation(format!("bad cluster label in {part:?}: {e}")))?;
        if map.insert(label, structure).is_some() {
            return Err(validation(format!("cluster label {label} mapped twice")));
        }
        if seen.contains(&structure) {
            return Err(validation(format!("structure {structure} mapped twice")));
        }
        seen.push(structure);
    }
    for structure in Structure::ALL {
        if !seen.contains(&structure) {
            return Err(validation(format!("label map must cover {structure}")));
        }
    }
    Ok(map)
}

fn parse_methods(s: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let method: Method = part.parse().map_err(validation)?;
        if !methods.contains(&method) {
            methods.push(method);
        }
    }
    if methods.is_empty() {
        return Err(validation("no methods selected"));
    }
    Ok(methods)
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(validation("--n must be at least 1"));
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out_dir.display())))?;

    let params_for = |plane: Plane| SceneParams {
        plane,
        noise_sigma: args.noise,
        shadows: args.shadows,
        saliency_noise_sigma: args.saliency_noise,
        ..SceneParams::default()
    };
    params_for(Plane::TV).validate()?;

    let mut images = Vec::new();
    for i in 0..args.n {
        let plane = if i % 2 == 0 { Plane::TV } else { Plane::TC };
        let id = format!("img_{i:03}");
        let scene = make_scene(&id, args.seed + u64::from(i), &params_for(plane))?;

        let image_file = PathBuf::from(format!("{id}.pgm"));
        let saliency_file = PathBuf::from(format!("{id}.sal.slgd"));
        let feature_file = PathBuf::from(format!("{id}.feat.slgd"));
        raster::write_image(&scene.image, &args.out_dir.join(&image_file))?;
        salient_align::grid::write_saliency_grid(
            &scene.saliency,
            &args.out_dir.join(&saliency_file),
        )?;
        salient_align::grid::write_feature_grid(
            &scene.features,
            &args.out_dir.join(&feature_file),
        )?;

        images.push(ManifestImage {
            id,
            pixel_width: scene.image.width(),
            pixel_height: scene.image.height(),
            saliency_grid: saliency_file,
            feature_grid: feature_file,
            plane,
            image: Some(image_file),
            annotations: Some(Annotations {
                csp_center: scene.annotations.csp_center,
                segment: scene.annotations.lv_or_tcd_segment,
                hc_ellipse: scene.annotations.hc_ellipse,
            }),
        });
    }

    let mut manifest = Manifest::new(images);
    manifest.version = Some(VERSION.to_string());
    manifest.config = Some(json!({
        "n": args.n,
        "seed": args.seed,
        "noise": args.noise,
        "shadows": args.shadows,
        "saliency_noise": args.saliency_noise,
    }));
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(())
}

pub fn extract(args: &ExtractArgs) -> Result<(), CliError> {
    let config = PeakConfig {
        min_distance: args.min_distance,
        threshold: args.threshold,
    };
    config.validate().map_err(validation)?;
    let manifest = Manifest::read(&args.manifest)?;

    let mut landmark_sets = Vec::new();
    for img in &manifest.images {
        let path = Manifest::resolve(&args.manifest, &img.saliency_grid);
        let grid = read_saliency_grid(&path)?;
        let meta = img.meta(grid.width(), grid.height());
        landmark_sets.push(extract_landmarks(&grid, &meta, &config));
    }

    write_json(
        &args.out,
        &LandmarksFile {
            version: VERSION.to_string(),
            config: json!({
                "manifest": args.manifest,
                "min_distance": args.min_distance,
                "threshold": args.threshold,
            }),
            landmark_sets,
        },
    )
}

pub fn cluster(args: &ClusterArgs) -> Result<(), CliError> {
    if args.k_min < 2 {
        return Err(validation("--k-min must be at least 2"));
    }
    if args.k_min > args.k_max {
        return Err(validation(format!(
            "--k-min {} exceeds --k-max {}",
            args.k_min, args.k_max
        )));
    }
    let manifest = Manifest::read(&args.manifest)?;
    let lm_file: LandmarksFile = read_json(&args.landmarks)?;

    // group landmark sets by the plane their manifest entry declares
    let mut by_id: BTreeMap<String, LandmarkSet> = BTreeMap::new();
    for set in lm_file.landmark_sets {
        manifest.image(&set.image_id)?;
        by_id.insert(set.image_id.clone(), set);
    }

    let mut clusterings = BTreeMap::new();
    for plane in Plane::ALL {
        let ids: Vec<String> = manifest
            .images
            .iter()
            .filter(|img| img.plane == plane && by_id.contains_key(&img.id))
            .map(|img| img.id.clone())
            .collect();
        if ids.is_empty() {
            continue;
        }
        let mut sets: Vec<LandmarkSet> = ids.iter().map(|id| by_id[id].clone()).collect();

        let mut grids = BTreeMap::new();
        for id in &ids {
            let img = manifest.image(id)?;
            let path = Manifest::resolve(&args.manifest, &img.feature_grid);
            grids.insert(id.clone(), read_feature_grid(&path)?);
        }
        let mut collection = collect_features(&sets, &grids).map_err(validation)?;
        if args.l2_normalize {
            collection = collection.l2_normalized();
        }

        let k_max = args.k_max.min(collection.len().saturating_sub(1));
        if k_max < args.k_min {
            return Err(validation(format!(
                "plane {plane}: {} landmark(s) support no k in [{}, {}]",
                collection.len(),
                args.k_min,
                args.k_max
            )));
        }
        let mut result =
            auto_cluster(&collection, args.k_min, k_max, args.seed).map_err(validation)?;
        assign_to_landmarks(&mut sets, &collection, &result.labels);
        canonicalize_labels(&mut sets, &mut result);
        for set in sets {
            by_id.insert(set.image_id.clone(), set);
        }
        clusterings.insert(plane.to_string(), result);
    }

    // emit in manifest order
    let landmark_sets: Vec<LandmarkSet> = manifest
        .images
        .iter()
        .filter_map(|img| by_id.remove(&img.id))
        .collect();

    write_json(
        &args.out,
        &ClustersFile {
            version: VERSION.to_string(),
            config: json!({
                "landmarks": args.landmarks,
                "manifest": args.manifest,
                "k_min": args.k_min,
                "k_max": args.k_max,
                "seed": args.seed,
                "l2_normalize": args.l2_normalize,
            }),
            landmark_sets,
            clusterings,
        },
    )
}

/// The landmark registration uses for a structure: the highest-saliency
/// landmark whose cluster label the map assigns to it.
fn select_landmark(
    set: &LandmarkSet,
    label_map: &BTreeMap<usize, Structure>,
    want: Structure,
) -> Result<Point, CliError> {
    set.landmarks
        .iter()
        .find(|lm| lm.cluster.and_then(|c| label_map.get(&c)) == Some(&want))
        .map(|lm| lm.pixel_pos)
        .ok_or_else(|| {
            validation(format!(
                "image {}: no landmark labeled as {want}",
                set.image_id
            ))
        })
}

pub fn register(args: &RegisterArgs) -> Result<(), CliError> {
    let manifest = Manifest::read(&args.manifest)?;
    let clusters: ClustersFile = read_json(&args.clusters)?;
    let label_map = parse_label_map(&args.label_map)?;

    let find_set = |id: &str| {
        clusters
            .landmark_sets
            .iter()
            .find(|s| s.image_id == id)
            .ok_or_else(|| validation(format!("image {id} not present in the clusters file")))
    };
    let source_img = manifest.image(&args.source)?;
    let target_img = manifest.image(&args.target)?;
    let source_set = find_set(&args.source)?;
    let target_set = find_set(&args.target)?;

    let source_pair = LandmarkPair::new(
        select_landmark(source_set, &label_map, Structure::Csp)?,
        select_landmark(source_set, &label_map, Structure::LvOrTcd)?,
        source_img.pixel_width,
    );
    let target_pair = LandmarkPair::new(
        select_landmark(target_set, &label_map, Structure::Csp)?,
        select_landmark(target_set, &label_map, Structure::LvOrTcd)?,
        target_img.pixel_width,
    );
    let policy = if args.force_no_flip {
        OrientationPolicy::ForceNoFlip
    } else {
        OrientationPolicy::Strict
    };
    let transform = fit_transform_with(&source_pair, &target_pair, policy).map_err(validation)?;

    write_json(
        &args.out,
        &json!({
            "version": VERSION,
            "config": {
                "source": args.source,
                "target": args.target,
                "clusters": args.clusters,
                "manifest": args.manifest,
                "label_map": args.label_map,
                "force_no_flip": args.force_no_flip,
            },
            "transform": transform,
        }),
    )?;

    if let Some(warp_path) = &args.warp {
        let rel = source_img.image.as_ref().ok_or_else(|| {
            validation(format!("manifest has no image raster for {}", args.source))
        })?;
        let img = read_raster(&Manifest::resolve(&args.manifest, rel))?;
        let warped = warp_image(
            &img,
            &transform,
            target_img.pixel_width,
            target_img.pixel_height,
        )
        .map_err(validation)?;
        raster::write_image(&warped, warp_path)?;
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    if !(args.radius > 0.0 && args.radius.is_finite()) {
        return Err(validation(format!(
            "--radius must be positive, got {}",
            args.radius
        )));
    }
    let manifest = Manifest::read(&args.manifest)?;
    let clusters: ClustersFile = read_json(&args.clusters)?;
    let label_map = parse_label_map(&args.label_map)?;
    let methods = parse_methods(&args.methods)?;

    let ctx = EvalContext {
        manifest: &manifest,
        manifest_path: &args.manifest,
        landmark_sets: &clusters.landmark_sets,
        label_map: &label_map,
        radius_frac: args.radius,
        methods: &methods,
        jobs: args.jobs.unwrap_or(0),
    };
    let outcome = evaluate_all(&ctx);

    write_csv_report(&args.out, &outcome.reports)
        .map_err(|e| CliError::Io(e.to_string()))?;

    let json_path = args
        .json
        .clone()
        .unwrap_or_else(|| args.out.with_extension("json"));
    write_json(
        &json_path,
        &json!({
            "version": VERSION,
            "config": {
                "manifest": args.manifest,
                "clusters": args.clusters,
                "label_map": args.label_map,
                "methods": args.methods,
                "radius": args.radius,
                "jobs": args.jobs,
            },
            "dispersion": "standard error of the mean",
            "reports": outcome.reports,
            "matches": outcome.matches,
            "skipped": outcome.skipped,
        }),
    )
}
