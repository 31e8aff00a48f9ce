//! Deterministic synthetic scenes with full ground truth: a fetal-head-like
//! image (skull ellipse, two bright structures, speckle and shadow
//! artifacts), the matching saliency and feature grids, annotations, and
//! planted similarity transforms between scene pairs. Everything derives
//! from a seed through fixed counter-based streams, so scenes reproduce
//! bit-for-bit across platforms.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::Point;
use crate::grid::{FeatureGrid, ImageMeta, SaliencyGrid};
use crate::manifest::{AnnotationSet, HcEllipse, Plane, Structure};
use crate::raster::GrayImage;
use crate::transform::{fit_transform, LandmarkPair, SimilarityTransform};

/// Distance between distinct feature prototypes in feature space.
const PROTOTYPE_GAP: f64 = 10.0;
/// Keep landmarks at least this many grid cells away from the grid border,
/// so every planted peak has a full refinement neighborhood.
const BORDER_MARGIN_CELLS: f64 = 2.5;

// rng stream ids, one per independent randomness source
const STREAM_GEOMETRY: u64 = 0;
const STREAM_SPECKLE: u64 = 1;
const STREAM_FEATURES: u64 = 2;
const STREAM_SHADOWS: u64 = 3;
const STREAM_SALIENCY_NOISE: u64 = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("bad scene parameters: {0}")]
    BadParams(String),
    #[error("{structure} landmark at ({x:.1}, {y:.1}) falls outside the usable frame")]
    OutOfFrame {
        structure: &'static str,
        x: f64,
        y: f64,
    },
}

/// Knobs of the generator. Defaults give a 288x224 image over a 36x28 grid
/// with clean saliency and features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub plane: Plane,
    pub image_width: u32,
    pub image_height: u32,
    pub grid_width: u32,
    pub grid_height: u32,
    /// Skull ellipse semi-major axis range, px.
    pub semi_major_range: (f64, f64),
    /// Semi-minor axis as a fraction of the semi-major.
    pub aspect_range: (f64, f64),
    /// Head tilt range, radians.
    pub tilt_range: (f64, f64),
    /// Additive image speckle sigma (0 disables).
    pub noise_sigma: f64,
    /// Multiplicative wedge-shaped intensity dropouts from the image top.
    pub shadows: bool,
    /// Width of the planted saliency Gaussians, grid cells.
    pub saliency_sigma: f64,
    /// Additive saliency noise sigma (0 disables); degrades landmark
    /// detection for the matching-rate experiments.
    pub saliency_noise_sigma: f64,
    pub feature_dim: u32,
    /// Isotropic noise around the planted feature prototypes.
    pub feature_noise_sigma: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            plane: Plane::TV,
            image_width: 288,
            image_height: 224,
            grid_width: 36,
            grid_height: 28,
            semi_major_range: (70.0, 95.0),
            aspect_range: (0.65, 0.8),
            tilt_range: (-0.3, 0.3),
            noise_sigma: 0.0,
            shadows: false,
            saliency_sigma: 1.2,
            saliency_noise_sigma: 0.0,
            feature_dim: 8,
            feature_noise_sigma: 0.5,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadParams(msg));
        if self.grid_width < 8 || self.grid_height < 8 {
            return bad(format!(
                "grid {}x{} too small; need at least 8x8",
                self.grid_width, self.grid_height
            ));
        }
        if self.image_width < self.grid_width || self.image_height < self.grid_height {
            return bad("image must be at least as large as the grid".into());
        }
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.semi_major_range) || self.semi_major_range.0 <= 0.0 {
            return bad(format!("semi-major range {:?} invalid", self.semi_major_range));
        }
        if !ordered(self.aspect_range)
            || self.aspect_range.0 <= 0.0
            || self.aspect_range.1 > 1.0
        {
            return bad(format!("aspect range {:?} must lie in (0, 1]", self.aspect_range));
        }
        if !ordered(self.tilt_range) {
            return bad(format!("tilt range {:?} invalid", self.tilt_range));
        }
        if !(self.saliency_sigma > 0.0 && self.saliency_sigma.is_finite()) {
            return bad(format!("saliency sigma {} must be positive", self.saliency_sigma));
        }
        for (name, sigma) in [
            ("noise", self.noise_sigma),
            ("saliency noise", self.saliency_noise_sigma),
            ("feature noise", self.feature_noise_sigma),
        ] {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad(format!("{name} sigma {sigma} must be nonnegative"));
            }
        }
        if self.feature_dim < 2 {
            return bad("feature dimension must be at least 2".into());
        }
        // keep the planted prototypes separable: distance > 6 noise sigmas
        if self.feature_noise_sigma * 6.0 >= PROTOTYPE_GAP {
            return bad(format!(
                "feature noise sigma {} too large for prototype gap {PROTOTYPE_GAP}",
                self.feature_noise_sigma
            ));
        }
        Ok(())
    }
}

/// Continuous description of one head: the skull ellipse and the two
/// structure positions. `axis` is the unit direction of the major axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub center: Point,
    pub a: f64,
    pub b: f64,
    pub axis: Point,
    pub csp: Point,
    pub lv: Point,
    pub segment: [Point; 2],
}

/// A planted landmark with its structure identity and feature cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueLandmark {
    pub structure: Structure,
    pub pixel_pos: Point,
    pub cluster: usize,
}

/// One generated image with every byproduct the pipeline consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub image: GrayImage,
    pub meta: ImageMeta,
    pub saliency: SaliencyGrid,
    pub features: FeatureGrid,
    pub annotations: AnnotationSet,
    pub true_landmarks: Vec<TrueLandmark>,
    pub geometry: SceneGeometry,
    pub rng_seed: u64,
}

/// Transform planted between a scene pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairParams {
    pub flip: bool,
    pub translation: Point,
    /// Signed angle in the image frame (y down), radians.
    pub rotation: f64,
    pub scale: f64,
    /// Seed for the target's speckle/shadow/feature noise; reusing the
    /// source seed (None) makes identity params reproduce the source scene
    /// exactly.
    pub target_seed: Option<u64>,
}

impl Default for PairParams {
    fn default() -> Self {
        Self {
            flip: false,
            translation: Point::new(0.0, 0.0),
            rotation: 0.0,
            scale: 1.0,
            target_seed: None,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generates a scene with randomized geometry.
pub fn make_scene(id: &str, seed: u64, params: &SceneParams) -> Result<SynthScene, SynthError> {
    params.validate()?;
    let mut rng = stream(seed, STREAM_GEOMETRY);
    let center = Point::new(
        f64::from(params.image_width) / 2.0 + uniform(&mut rng, (-10.0, 10.0)),
        f64::from(params.image_height) / 2.0 + uniform(&mut rng, (-10.0, 10.0)),
    );
    let a = uniform(&mut rng, params.semi_major_range);
    let b = a * uniform(&mut rng, params.aspect_range);
    let tilt = uniform(&mut rng, params.tilt_range);
    let axis = Point::new(tilt.cos(), tilt.sin());
    let csp = center + axis * (0.3 * a);
    let lv = center - axis * (0.35 * a);
    let perpendicular = Point::new(-axis.y, axis.x);
    let half = perpendicular * (0.15 * b);
    let geometry = SceneGeometry {
        center,
        a,
        b,
        axis,
        csp,
        lv,
        segment: [lv - half, lv + half],
    };
    render_scene(id, seed, params, &geometry)
}

/// Renders a scene from explicit geometry.
pub fn render_scene(
    id: &str,
    seed: u64,
    params: &SceneParams,
    geometry: &SceneGeometry,
) -> Result<SynthScene, SynthError> {
    params.validate()?;
    let meta = ImageMeta::derive(
        id,
        params.image_width,
        params.image_height,
        params.grid_width,
        params.grid_height,
    );
    check_in_frame(params, &meta, geometry)?;

    let saliency = render_saliency(seed, params, &meta, geometry);
    let features = render_features(seed, params, &meta, geometry);
    let image = render_image(seed, params, geometry);

    let annotations = AnnotationSet {
        image_id: id.to_string(),
        plane: params.plane,
        csp_center: geometry.csp,
        lv_or_tcd_segment: geometry.segment,
        hc_ellipse: HcEllipse {
            center: geometry.center,
            a: geometry.a,
            b: geometry.b,
            theta: f64::atan2(geometry.axis.y, geometry.axis.x),
        },
    };
    let true_landmarks = vec![
        TrueLandmark {
            structure: Structure::Csp,
            pixel_pos: geometry.csp,
            cluster: 0,
        },
        TrueLandmark {
            structure: Structure::LvOrTcd,
            pixel_pos: geometry.lv,
            cluster: 1,
        },
    ];
    Ok(SynthScene {
        image,
        meta,
        saliency,
        features,
        annotations,
        true_landmarks,
        geometry: *geometry,
        rng_seed: seed,
    })
}

/// Builds the target of a scene pair: the source geometry pushed through a
/// planted similarity (which is returned), re-rendered with artifact noise
/// from `target_seed`.
pub fn make_pair(
    source: &SynthScene,
    params: &SceneParams,
    pair: &PairParams,
    target_id: &str,
) -> Result<(SynthScene, SimilarityTransform), SynthError> {
    if !(pair.scale > 0.0 && pair.scale.is_finite()) {
        return Err(SynthError::BadParams(format!(
            "pair scale {} must be positive",
            pair.scale
        )));
    }
    // an identity plant must reproduce the source exactly, so skip the
    // numeric round-trip through the fitted transform
    if !pair.flip
        && pair.translation == Point::new(0.0, 0.0)
        && pair.rotation == 0.0
        && pair.scale == 1.0
    {
        let seed = pair.target_seed.unwrap_or(source.rng_seed);
        let target = render_scene(target_id, seed, params, &source.geometry)?;
        return Ok((target, SimilarityTransform::identity()));
    }
    let width = f64::from(params.image_width);
    let mirror = |p: Point| {
        if pair.flip {
            Point::new(width - p.x, p.y)
        } else {
            p
        }
    };
    // target landmarks: mirror, translate, then rotate/scale about the
    // target CSP in the y-down frame
    let c_t = mirror(source.geometry.csp) + pair.translation;
    let u = mirror(source.geometry.lv) - mirror(source.geometry.csp);
    let rotated = Point::new(
        pair.rotation.cos() * u.x + pair.rotation.sin() * u.y,
        -pair.rotation.sin() * u.x + pair.rotation.cos() * u.y,
    ) * pair.scale;
    let d_t = c_t + rotated;

    let source_pair = LandmarkPair::new(
        source.geometry.csp,
        source.geometry.lv,
        params.image_width,
    );
    let target_pair = LandmarkPair::new(c_t, d_t, params.image_width);
    let truth = fit_transform(&source_pair, &target_pair)
        .expect("planted landmarks are never coincident or vertically aligned");

    let g = &source.geometry;
    let center_t = truth.apply(g.center);
    let axis_t = (truth.apply(g.center + g.axis) - center_t) * (1.0 / truth.scale);
    let geometry = SceneGeometry {
        center: center_t,
        a: g.a * truth.scale,
        b: g.b * truth.scale,
        axis: axis_t,
        csp: truth.apply(g.csp),
        lv: truth.apply(g.lv),
        segment: [truth.apply(g.segment[0]), truth.apply(g.segment[1])],
    };
    let seed = pair.target_seed.unwrap_or(source.rng_seed);
    let target = render_scene(target_id, seed, params, &geometry)?;
    Ok((target, truth))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_in_frame(
    params: &SceneParams,
    meta: &ImageMeta,
    geometry: &SceneGeometry,
) -> Result<(), SynthError> {
    let margin_x = BORDER_MARGIN_CELLS * meta.scale_x;
    let margin_y = BORDER_MARGIN_CELLS * meta.scale_y;
    let checks = [
        ("CSP", geometry.csp),
        ("LV/TCD", geometry.lv),
        ("segment endpoint", geometry.segment[0]),
        ("segment endpoint", geometry.segment[1]),
    ];
    for (structure, p) in checks {
        if p.x < margin_x
            || p.y < margin_y
            || p.x > f64::from(params.image_width) - margin_x
            || p.y > f64::from(params.image_height) - margin_y
        {
            return Err(SynthError::OutOfFrame {
                structure,
                x: p.x,
                y: p.y,
            });
        }
    }
    Ok(())
}

fn render_saliency(
    seed: u64,
    params: &SceneParams,
    meta: &ImageMeta,
    geometry: &SceneGeometry,
) -> SaliencyGrid {
    let w = params.grid_width;
    let h = params.grid_height;
    let csp = meta.pixel_to_grid(geometry.csp);
    let lv = meta.pixel_to_grid(geometry.lv);
    let two_sigma_sq = 2.0 * params.saliency_sigma * params.saliency_sigma;
    let mut noise = (params.saliency_noise_sigma > 0.0).then(|| {
        (
            stream(seed, STREAM_SALIENCY_NOISE),
            Normal::new(0.0, params.saliency_noise_sigma).unwrap(),
        )
    });
    let mut values = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        for x in 0..w {
            let p = Point::new(f64::from(x), f64::from(y));
            let d_csp = p - csp;
            let d_lv = p - lv;
            let mut s = (-(d_csp.dot(d_csp)) / two_sigma_sq).exp()
                + 0.85 * (-(d_lv.dot(d_lv)) / two_sigma_sq).exp();
            if let Some((rng, dist)) = &mut noise {
                s += dist.sample(rng);
            }
            values.push(s.clamp(0.0, 1.0) as f32);
        }
    }
    SaliencyGrid::new(w, h, values).expect("generated saliency is valid")
}

fn render_features(
    seed: u64,
    params: &SceneParams,
    meta: &ImageMeta,
    geometry: &SceneGeometry,
) -> FeatureGrid {
    let w = params.grid_width as i64;
    let h = params.grid_height as i64;
    let dim = params.feature_dim as usize;
    let mut rng = stream(seed, STREAM_FEATURES);
    let noise = Normal::new(0.0, params.feature_noise_sigma.max(f64::MIN_POSITIVE)).unwrap();

    // nearest cells of the two landmarks; prototype channel = cluster id
    let nearest = |p: Point| {
        let g = meta.pixel_to_grid(p);
        (g.x.round() as i64, g.y.round() as i64)
    };
    let planted = [(nearest(geometry.csp), 0usize), (nearest(geometry.lv), 1)];

    let mut values = Vec::with_capacity((w * h) as usize * dim);
    for y in 0..h {
        for x in 0..w {
            // 3x3 block around each landmark carries its prototype
            let cluster = planted
                .iter()
                .find(|((cx, cy), _)| (x - cx).abs() <= 1 && (y - cy).abs() <= 1)
                .map(|&(_, c)| c);
            for ch in 0..dim {
                let mut v = if cluster == Some(ch) { PROTOTYPE_GAP } else { 0.0 };
                if params.feature_noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                values.push(v as f32);
            }
        }
    }
    FeatureGrid::new(params.grid_width, params.grid_height, params.feature_dim, values)
        .expect("generated features are valid")
}

fn render_image(seed: u64, params: &SceneParams, geometry: &SceneGeometry) -> GrayImage {
    let w = params.image_width;
    let h = params.image_height;
    let g = geometry;
    let perpendicular = Point::new(-g.axis.y, g.axis.x);
    let mut img = GrayImage::zeros(w, h);

    for j in 0..h {
        for i in 0..w {
            let q = Point::new(f64::from(i) + 0.5, f64::from(j) + 0.5);
            let d = q - g.center;
            // ellipse-frame coordinates; e = 1 on the skull rim
            let ex = d.dot(g.axis) / g.a;
            let ey = d.dot(perpendicular) / g.b;
            let e = ex * ex + ey * ey;
            let mut v = 0.07;
            if e < 1.0 {
                v += 0.10; // brain tissue
            }
            let rim = (e - 1.0) / 0.085;
            v += 0.55 * (-rim * rim).exp();
            let dc = q - g.csp;
            v += 0.75 * (-dc.dot(dc) / (2.0 * 4.5 * 4.5)).exp();
            let dl = q - g.lv;
            v += 0.65 * (-dl.dot(dl) / (2.0 * 5.5 * 5.5)).exp();
            img.set(i, j, v as f32);
        }
    }

    if params.shadows {
        let mut rng = stream(seed, STREAM_SHADOWS);
        for _ in 0..2 {
            let apex = uniform(&mut rng, (0.15, 0.85)) * f64::from(w);
            let slope = uniform(&mut rng, (-0.35, 0.35));
            let half_width = uniform(&mut rng, (6.0, 14.0));
            let spread = uniform(&mut rng, (0.08, 0.22));
            let attenuation = uniform(&mut rng, (0.35, 0.6)) as f32;
            for j in 0..h {
                let y = f64::from(j) + 0.5;
                let mid = apex + slope * y;
                let reach = half_width + spread * y;
                for i in 0..w {
                    let x = f64::from(i) + 0.5;
                    if (x - mid).abs() < reach {
                        img.set(i, j, img.get(i, j) * attenuation);
                    }
                }
            }
        }
    }

    if params.noise_sigma > 0.0 {
        let mut rng = stream(seed, STREAM_SPECKLE);
        let noise = Normal::new(0.0, params.noise_sigma).unwrap();
        for v in img.data_mut() {
            *v += noise.sample(&mut rng) as f32;
        }
    }
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}
