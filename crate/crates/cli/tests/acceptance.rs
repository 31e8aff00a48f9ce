//! Acceptance gate for the toolkit. One test per shipping criterion; each
//! prints a single `criterion N (...): PASS|FAIL — detail` line before
//! asserting, so a plain test run doubles as a release checklist.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use salient_align::cluster::{
    assign_to_landmarks, auto_cluster, canonicalize_labels, collect_features, default_k_range,
    silhouette_score, FeatureCollection, FeatureEntry,
};
use salient_align::eval::{
    evaluate_all, match_landmarks, register_intensity, summarize, EvalContext, Method, PairError,
    MAX_ITERATIONS_PER_LEVEL,
};
use salient_align::grid::{write_feature_grid, write_saliency_grid, FeatureGrid};
use salient_align::manifest::{Annotations, Manifest, ManifestImage};
use salient_align::peaks::{extract_landmarks, local_maxima, refine_subpixel};
use salient_align::raster::write_image;
use salient_align::synth::{make_pair, make_scene, PairParams, SceneParams, SynthScene};
use salient_align::transform::fit_transform;
use salient_align::{
    LandmarkPair, LandmarkSet, PeakConfig, Plane, Point, SaliencyGrid, SimilarityTransform,
    Structure,
};

fn report(number: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {number} ({title}): {verdict} — {detail}\n");
    // written straight to the process stdout, past the harness's per-test
    // capture, so the checklist shows up in a plain `cargo test` log
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {number} ({title}): {detail}");
}

// ---------------------------------------------------------------- criterion 1

/// Independent oracle: quadratic-time windowed maximum, threshold mask, and
/// plateau collapse, written directly against the detection rule rather than
/// sharing the separable filter implementation.
fn brute_force_maxima(s: &SaliencyGrid, d: u32, threshold: f64) -> Vec<[u32; 2]> {
    let w = s.width() as i64;
    let h = s.height() as i64;
    let r = d as i64;
    let idx = |x: i64, y: i64| (y * w + x) as usize;

    let mut mask = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let v = s.value(x as u32, y as u32);
            let mut m = f32::NEG_INFINITY;
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    m = m.max(s.value(xx as u32, yy as u32));
                }
            }
            if v >= threshold as f32 && v == m {
                mask[idx(x, y)] = true;
            }
        }
    }

    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !mask[idx(sx, sy)] || seen[idx(sx, sy)] {
                continue;
            }
            let value = s.value(sx as u32, sy as u32);
            let mut members = Vec::new();
            let mut queue = vec![(sx, sy)];
            seen[idx(sx, sy)] = true;
            while let Some((x, y)) = queue.pop() {
                members.push((x, y));
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let i = idx(nx, ny);
                        if mask[i] && !seen[i] && s.value(nx as u32, ny as u32) == value {
                            seen[i] = true;
                            queue.push((nx, ny));
                        }
                    }
                }
            }
            // centroid (exact: integer coordinates sum exactly in f64),
            // rounded; off-plateau roundings snap to the nearest member with
            // (y, x) ties
            let n = members.len() as f64;
            let cx = members.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
            let cy = members.iter().map(|&(_, y)| y as f64).sum::<f64>() / n;
            let rounded = (cx.round() as i64, cy.round() as i64);
            let chosen = if members.contains(&rounded) {
                rounded
            } else {
                let mut best = members[0];
                let mut best_d2 = f64::INFINITY;
                for &(x, y) in &members {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    if d2 < best_d2 || (d2 == best_d2 && (y, x) < (best.1, best.0)) {
                        best = (x, y);
                        best_d2 = d2;
                    }
                }
                best
            };
            out.push([chosen.0 as u32, chosen.1 as u32]);
        }
    }
    out.sort_unstable_by_key(|&[x, y]| (y, x));
    out
}

#[test]
fn criterion_1_peak_finding_matches_brute_force() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000u32 {
        let w = rng.gen_range(8..=64u32);
        let h = rng.gen_range(8..=64u32);
        // every other grid is quantized to force large tied plateaus
        let quantized = case % 2 == 0;
        let values: Vec<f32> = (0..w * h)
            .map(|_| {
                if quantized {
                    rng.gen_range(0..=10u32) as f32 / 10.0
                } else {
                    rng.gen::<f32>()
                }
            })
            .collect();
        let grid = SaliencyGrid::new(w, h, values).unwrap();
        let d = [1u32, 2, 3][rng.gen_range(0..3usize)];
        let threshold = [0.0f64, 0.1, 0.3][rng.gen_range(0..3usize)];
        let cfg = PeakConfig {
            min_distance: d,
            threshold,
        };
        let got = local_maxima(&grid, &cfg);
        let want = brute_force_maxima(&grid, d, threshold);
        if got != want {
            report(
                1,
                "peak finding matches brute force",
                false,
                &format!("mismatch on case {case}: {w}x{h}, d={d}, t={threshold}"),
            );
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        1,
        "peak finding matches brute force",
        elapsed < 10.0,
        &format!("1000/1000 random grids identical, {elapsed:.2}s (budget 10s)"),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_gaussian_peaks_refine_to_the_true_center() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut max_err = 0.0f64;
    for _ in 0..1000 {
        let sigma = rng.gen_range(0.7..1.6);
        let amp = rng.gen_range(0.5..1.0);
        let cx = 4.0 + rng.gen_range(-0.49..0.49);
        let cy = 4.0 + rng.gen_range(-0.49..0.49);
        let values: Vec<f32> = (0..81)
            .map(|i| {
                let x = (i % 9) as f64;
                let y = (i / 9) as f64;
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                (amp * (-r2 / (2.0 * sigma * sigma)).exp()) as f32
            })
            .collect();
        let grid = SaliencyGrid::new(9, 9, values).unwrap();
        let p = refine_subpixel(&grid, [4, 4]).expect("a sampled gaussian peak is well-formed");
        max_err = max_err.max((p.x - cx).abs().max((p.y - cy).abs()));
    }
    report(
        2,
        "subpixel refinement is exact on gaussians",
        max_err < 1e-6,
        &format!("max |error| {max_err:.3e} over 1000 random gaussians (tolerance 1e-6)"),
    );
}

// ---------------------------------------------------------------- criterion 3

fn collection(vectors: &[&[f64]]) -> FeatureCollection {
    FeatureCollection {
        entries: vectors
            .iter()
            .enumerate()
            .map(|(i, v)| FeatureEntry {
                image_id: format!("s{i}"),
                landmark_index: 0,
                vector: v.to_vec(),
            })
            .collect(),
    }
}

#[test]
fn criterion_3_silhouette_values_and_model_selection() {
    // hand-computed silhouettes for five fixed labelings
    let fixtures: [(&[&[f64]], &[usize], f64); 5] = [
        (&[&[0.0, 0.0], &[0.0, 0.0], &[9.0, 9.0], &[9.0, 9.0]], &[0, 0, 1, 1], 1.0),
        (&[&[0.0], &[1.0], &[5.0], &[6.0]], &[0, 0, 1, 1], 79.0 / 99.0),
        (
            &[&[0.0, 0.0], &[0.0, 2.0], &[4.0, 0.0]],
            &[0, 0, 1],
            (1.5 - 1.0 / 5.0f64.sqrt()) / 3.0,
        ),
        (&[&[0.0], &[2.0], &[3.0], &[10.0]], &[0, 1, 1, 2], 7.0 / 24.0),
        (&[&[3.0], &[3.0], &[3.0], &[3.0]], &[0, 0, 1, 1], 0.0),
    ];
    let mut worst = 0.0f64;
    for (vectors, labels, expected) in fixtures {
        let got = silhouette_score(&collection(vectors), labels).unwrap();
        worst = worst.max((got - expected).abs());
    }

    // model selection: three prototypes spaced 10 apart, unit gaussian
    // scatter, eight points each; the silhouette sweep over k = 2..=6 must
    // recover k = 3 in at least 95% of seeded runs
    let prototypes: [[f64; 2]; 3] = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut hits = 0usize;
    for run in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + run);
        let entries = prototypes
            .iter()
            .enumerate()
            .flat_map(|(ci, proto)| {
                (0..8)
                    .map(|j| FeatureEntry {
                        image_id: format!("r{run}c{ci}p{j}"),
                        landmark_index: 0,
                        vector: proto.iter().map(|&v| v + noise.sample(&mut rng)).collect(),
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let c = FeatureCollection { entries };
        if auto_cluster(&c, 2, 6, run).unwrap().k == 3 {
            hits += 1;
        }
    }

    report(
        3,
        "silhouette scores and cluster-count selection",
        worst <= 1e-12 && hits >= 190,
        &format!(
            "5/5 closed-form silhouettes within {worst:.1e} (tolerance 1e-12); \
             planted k=3 recovered in {hits}/200 runs (need ≥190)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

fn random_pair(rng: &mut ChaCha8Rng, width: u32) -> LandmarkPair {
    loop {
        let c = Point::new(
            rng.gen_range(0.0..f64::from(width)),
            rng.gen_range(0.0..600.0),
        );
        let d = Point::new(
            rng.gen_range(0.0..f64::from(width)),
            rng.gen_range(0.0..600.0),
        );
        // keep the fit well-conditioned and the orientation unambiguous
        if (c.x - d.x).abs() > 1e-3 && c.distance(d) >= 1.0 {
            return LandmarkPair::new(c, d, width);
        }
    }
}

#[test]
fn criterion_4_two_landmark_fit_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut max_map_err = 0.0f64;
    let mut max_scale_err = 0.0f64;
    let mut max_rot_err = 0.0f64;
    let mut flips_fitted = 0usize;
    let mut flip_mismatches = 0usize;

    for _ in 0..10_000 {
        // arbitrary correspondence: the fitted transform must map both
        // source landmarks onto their targets exactly
        let width = rng.gen_range(100..=800u32);
        let src = random_pair(&mut rng, width);
        let tgt = random_pair(&mut rng, width);
        let tf = fit_transform(&src, &tgt).unwrap();
        if tf.flipped {
            flips_fitted += 1;
        }
        let e = tf.apply(src.c).distance(tgt.c).max(tf.apply(src.d).distance(tgt.d));
        max_map_err = max_map_err.max(e);

        // planted similarity: scale, rotation, and the flip flag must all be
        // recovered. The landmark axis stays near horizontal so the planted
        // rotation cannot change the left/right ordering the flip detection
        // keys on.
        let flip = rng.gen_bool(0.5);
        let rho: f64 = rng.gen_range(0.5..2.0);
        let theta: f64 = rng.gen_range(-1.0..1.0);
        let shift = Point::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let c = Point::new(rng.gen_range(150.0..650.0), rng.gen_range(100.0..400.0));
        let phi: f64 = rng.gen_range(-0.15..0.15);
        let len: f64 = rng.gen_range(20.0..120.0);
        let d = Point::new(c.x + len * phi.cos(), c.y + len * phi.sin());
        let planted_src = LandmarkPair::new(c, d, 800);
        let mirror = |p: Point| {
            if flip {
                Point::new(800.0 - p.x, p.y)
            } else {
                p
            }
        };
        let mc = mirror(c) + shift;
        let u = mirror(d) - mirror(c);
        let v = Point::new(
            theta.cos() * u.x + theta.sin() * u.y,
            -theta.sin() * u.x + theta.cos() * u.y,
        ) * rho;
        let planted_tgt = LandmarkPair::new(mc, mc + v, 800);
        let tf = fit_transform(&planted_src, &planted_tgt).unwrap();
        if tf.flipped != flip {
            flip_mismatches += 1;
        }
        max_scale_err = max_scale_err.max((tf.scale - rho).abs() / rho);
        max_rot_err = max_rot_err.max((tf.rotation - theta).abs() / theta.abs().max(1.0));
    }

    let pass = max_map_err < 1e-6
        && max_scale_err <= 1e-9
        && max_rot_err <= 1e-9
        && flip_mismatches == 0
        && flips_fitted > 1000;
    report(
        4,
        "two-landmark similarity fit is exact",
        pass,
        &format!(
            "10000 pairs: max mapping error {max_map_err:.2e}px (tol 1e-6), \
             max relative scale error {max_scale_err:.2e}, max relative rotation error \
             {max_rot_err:.2e} (tol 1e-9), {flip_mismatches} flip mismatches, \
             {flips_fitted} fitted flips"
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

fn signed_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

fn write_scene(dir: &Path, scene: &SynthScene) -> ManifestImage {
    let id = scene.meta.image_id.clone();
    let image_name = format!("{id}.pgm");
    let sal_name = format!("{id}.sal.slgd");
    let feat_name = format!("{id}.feat.slgd");
    write_image(&scene.image, &dir.join(&image_name)).unwrap();
    write_saliency_grid(&scene.saliency, &dir.join(&sal_name)).unwrap();
    write_feature_grid(&scene.features, &dir.join(&feat_name)).unwrap();
    ManifestImage {
        id,
        pixel_width: scene.image.width(),
        pixel_height: scene.image.height(),
        saliency_grid: sal_name.into(),
        feature_grid: feat_name.into(),
        plane: scene.annotations.plane,
        image: Some(image_name.into()),
        annotations: Some(Annotations {
            csp_center: scene.annotations.csp_center,
            segment: scene.annotations.lv_or_tcd_segment,
            hc_ellipse: scene.annotations.hc_ellipse,
        }),
    }
}

/// Extract, cluster, and canonically label the landmarks of a scene group.
fn label_landmarks(scenes: &[SynthScene], seed: u64) -> Vec<LandmarkSet> {
    let cfg = PeakConfig::default();
    let mut sets: Vec<LandmarkSet> = scenes
        .iter()
        .map(|s| extract_landmarks(&s.saliency, &s.meta, &cfg))
        .collect();
    let grids: BTreeMap<String, FeatureGrid> = scenes
        .iter()
        .map(|s| (s.meta.image_id.clone(), s.features.clone()))
        .collect();
    let coll = collect_features(&sets, &grids).unwrap();
    let (k_min, k_max) = default_k_range(coll.len());
    let mut result = auto_cluster(&coll, k_min, k_max, seed).unwrap();
    assign_to_landmarks(&mut sets, &coll, &result.labels);
    canonicalize_labels(&mut sets, &mut result);
    sets
}

fn structure_label_map() -> BTreeMap<usize, Structure> {
    BTreeMap::from([(0, Structure::Csp), (1, Structure::LvOrTcd)])
}

#[test]
fn criterion_5_landmark_alignment_beats_the_baselines() {
    let started = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let label_map = structure_label_map();
    let methods = Method::ALL;
    let mut pooled: BTreeMap<Method, Vec<PairError>> = BTreeMap::new();
    let mut skipped = 0usize;

    for pi in 0..40u32 {
        let plane = if pi % 2 == 0 { Plane::TV } else { Plane::TC };
        let params = SceneParams {
            plane,
            noise_sigma: 0.1,
            shadows: true,
            ..SceneParams::default()
        };
        // redraw until the planted transform keeps every structure in frame
        let (source, target) = loop {
            let seed = rng.gen::<u32>() as u64;
            let Ok(source) = make_scene("a", seed, &params) else {
                continue;
            };
            let pair = PairParams {
                flip: rng.gen_bool(0.5),
                translation: Point::new(
                    signed_range(&mut rng, 8.0, 22.0),
                    signed_range(&mut rng, 8.0, 22.0),
                ),
                rotation: signed_range(&mut rng, 5f64.to_radians(), 25f64.to_radians()),
                scale: rng.gen_range(0.85..1.2),
                target_seed: Some(rng.gen::<u32>() as u64),
            };
            match make_pair(&source, &params, &pair, "b") {
                Ok((target, _truth)) => break (source, target),
                Err(_) => continue,
            }
        };

        let dir = root.path().join(format!("pair{pi:02}"));
        fs::create_dir_all(&dir).unwrap();
        let scenes = [source, target];
        let images = scenes.iter().map(|s| write_scene(&dir, s)).collect();
        let manifest = Manifest::new(images);
        let manifest_path = dir.join("manifest.json");
        manifest.write(&manifest_path).unwrap();

        let sets = label_landmarks(&scenes, 7);
        let ctx = EvalContext {
            manifest: &manifest,
            manifest_path: &manifest_path,
            landmark_sets: &sets,
            label_map: &label_map,
            radius_frac: 0.10,
            methods: &methods,
            jobs: 1,
        };
        let outcome = evaluate_all(&ctx);
        skipped += outcome.skipped.len();
        for rep in outcome.reports {
            pooled.entry(rep.method).or_default().extend(rep.pairs);
        }
    }

    let mean = |m: Method| summarize(&pooled[&m]).0.as_array();
    let salient = mean(Method::SalientLm);
    let lr_intensity = mean(Method::LrIntensity);
    let lr = mean(Method::Lr);
    let none = mean(Method::None);
    let salient_small = salient.iter().all(|&v| v < 3.0);
    let ordered = (0..3).all(|i| {
        salient[i] < lr_intensity[i] && lr_intensity[i] < lr[i] && lr[i] < none[i]
    });
    let complete = pooled.values().all(|rows| rows.len() == 40) && skipped == 0;
    let elapsed = started.elapsed().as_secs_f64();

    let fmt = |a: [f64; 3]| format!("{:.2}/{:.2}/{:.2}", a[0], a[1], a[2]);
    report(
        5,
        "landmark alignment beats the baselines",
        salient_small && ordered && complete && elapsed < 120.0,
        &format!(
            "mean csp/lv/hc errors (% of HC axis) over 40 noisy shadowed pairs: \
             SalientLM {} (< 3), LR+Intensity {}, LR {}, None {}; every column ordered \
             SalientLM < LR+Intensity < LR < None: {}; {:.1}s single-threaded (budget 120s)",
            fmt(salient),
            fmt(lr_intensity),
            fmt(lr),
            fmt(none),
            ordered,
            elapsed
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_intensity_registration_recovers_a_planted_motion() {
    let params = SceneParams::default();
    let source = make_scene("a", 606, &params).unwrap();
    let pair = PairParams {
        flip: false,
        translation: Point::new(10.0, -6.0),
        rotation: 5f64.to_radians(),
        scale: 1.05,
        target_seed: Some(607),
    };
    let (target, truth) = make_pair(&source, &params, &pair, "b").unwrap();

    let outcome =
        register_intensity(&source.image, &target.image, &SimilarityTransform::identity())
            .unwrap();
    let g = &source.geometry;
    let err = outcome
        .transform
        .apply(g.csp)
        .distance(truth.apply(g.csp))
        .max(outcome.transform.apply(g.lv).distance(truth.apply(g.lv)));
    let iters_ok = outcome
        .iterations_per_level
        .iter()
        .all(|&n| n <= MAX_ITERATIONS_PER_LEVEL);

    report(
        6,
        "intensity registration recovers a planted motion",
        outcome.ncc > 0.99 && err < 1.0 && iters_ok,
        &format!(
            "planted (10px, -6px, 5°, x1.05): landmark error {err:.3}px (tol 1px), \
             final NCC {:.4} (floor 0.99), iterations per level {:?} (cap {})",
            outcome.ncc, outcome.iterations_per_level, MAX_ITERATIONS_PER_LEVEL
        ),
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_matching_rates_degrade_monotonically_with_noise() {
    let levels = [0.0f64, 0.3, 0.4, 0.65];
    let label_map = structure_label_map();
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();

    for &level in &levels {
        let params = SceneParams {
            saliency_noise_sigma: level,
            ..SceneParams::default()
        };
        // the same scene seeds at every level, so the only thing that
        // changes is the amount of saliency noise
        let scenes: Vec<SynthScene> = (0..12u64)
            .map(|i| make_scene(&format!("img{i:02}"), 700 + i, &params).unwrap())
            .collect();
        let sets = label_landmarks(&scenes, 11);
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        for (set, scene) in sets.iter().zip(&scenes) {
            let m = match_landmarks(set, &scene.annotations, &label_map, 0.10);
            p_sum += m.precision_pct;
            r_sum += m.recall_pct;
        }
        precisions.push(p_sum / scenes.len() as f64);
        recalls.push(r_sum / scenes.len() as f64);
    }

    let clean_perfect = precisions[0] == 100.0 && recalls[0] == 100.0;
    let monotone = precisions.windows(2).all(|w| w[0] > w[1])
        && recalls.windows(2).all(|w| w[0] > w[1]);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.1}"))
            .collect::<Vec<_>>()
            .join(" > ")
    };
    report(
        7,
        "matching rates are perfect when clean and degrade with noise",
        clean_perfect && monotone,
        &format!(
            "noise levels {levels:?}: precision {}; recall {} (clean must be 100/100, \
             both strictly decreasing)",
            fmt(&precisions),
            fmt(&recalls)
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, fs::read(&path).unwrap());
        }
    }
}

#[test]
fn criterion_8_pipeline_reruns_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_salient-align");
    let parent = tempfile::tempdir().unwrap();
    // identical argv in both run directories: every path on the command
    // line is relative, so the two runs differ only in working directory
    let steps: [&[&str]; 4] = [
        &[
            "synth", "--n", "8", "--seed", "11", "--noise", "0.05", "--shadows", "--out-dir",
            "data",
        ],
        &[
            "extract",
            "--manifest",
            "data/manifest.json",
            "--out",
            "landmarks.json",
        ],
        &[
            "cluster",
            "--landmarks",
            "landmarks.json",
            "--manifest",
            "data/manifest.json",
            "--seed",
            "3",
            "--out",
            "clusters.json",
        ],
        &[
            "evaluate",
            "--manifest",
            "data/manifest.json",
            "--clusters",
            "clusters.json",
            "--out",
            "report.csv",
        ],
    ];
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = parent.path().join(name);
        fs::create_dir_all(&dir).unwrap();
        for step in steps {
            let out = Command::new(bin)
                .args(step)
                .current_dir(&dir)
                .env_remove("SALIENT_ALIGN_SEED")
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "step {step:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let mut files = BTreeMap::new();
        collect_files(&dir, &dir, &mut files);
        runs.push(files);
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a
        .iter()
        .filter(|(name, bytes)| b.get(*name) != Some(bytes))
        .map(|(name, _)| name)
        .collect();
    let pass = a.len() == b.len() && differing.is_empty() && a.len() >= 28;
    report(
        8,
        "identical seeded reruns are byte-identical",
        pass,
        &format!(
            "full synth→extract→cluster→evaluate pipeline twice: {} artifacts each, \
             {} differ {:?}",
            a.len(),
            differing.len(),
            differing
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_help_pins_the_extraction_defaults() {
    let bin = env!("CARGO_BIN_EXE_salient-align");
    let out = Command::new(bin)
        .args(["extract", "--help"])
        .env_remove("SALIENT_ALIGN_SEED")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let code = out.status.code();
    let d_ok = stdout.contains("--min-distance") && stdout.contains("[default: 2]");
    let t_ok = stdout.contains("--threshold") && stdout.contains("[default: 0.1]");
    report(
        9,
        "help text pins the extraction defaults",
        code == Some(0) && d_ok && t_ok,
        &format!(
            "`extract --help` exited {code:?}; min-distance documented with default 2: {d_ok}; \
             threshold documented with default 0.1: {t_ok}"
        ),
    );
}

// ------------------------------------------------------------------- exit codes

#[test]
fn exit_codes_distinguish_validation_from_io_failures() {
    let bin = env!("CARGO_BIN_EXE_salient-align");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        Command::new(bin)
            .args(args)
            .current_dir(dir.path())
            .env_remove("SALIENT_ALIGN_SEED")
            .output()
            .unwrap()
    };

    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0), "--help must exit 0");

    let synth = run(&["synth", "--n", "1", "--seed", "1", "--out-dir", "data"]);
    assert_eq!(synth.status.code(), Some(0));

    // out-of-range threshold: rejected as a validation failure
    let bad = run(&[
        "extract",
        "--manifest",
        "data/manifest.json",
        "--threshold",
        "1.5",
        "--out",
        "x.json",
    ]);
    assert_eq!(bad.status.code(), Some(1), "invalid threshold must exit 1");

    // unreadable input: an i/o failure
    let missing = run(&[
        "extract",
        "--manifest",
        "nope/manifest.json",
        "--out",
        "y.json",
    ]);
    assert_eq!(missing.status.code(), Some(2), "missing manifest must exit 2");
}
