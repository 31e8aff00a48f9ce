//! Cross-image landmark matching: feature vectors sampled at landmark seeds
//! are pooled over all images and clustered with k-means, picking k by the
//! silhouette coefficient. Landmarks sharing a cluster are treated as the
//! same anatomical structure.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::FeatureGrid;
use crate::peaks::LandmarkSet;

const RESTARTS: u64 = 10;
const MAX_ITERATIONS: usize = 300;
const MOVEMENT_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("no feature grid for image {image_id}: {reason}")]
    GridMismatch { image_id: String, reason: String },
    #[error("k-means needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("silhouette is undefined for fewer than two clusters")]
    SingleCluster,
}

/// One pooled feature vector with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub image_id: String,
    pub landmark_index: usize,
    pub vector: Vec<f64>,
}

/// Feature vectors of every landmark across a group of images.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureCollection {
    pub entries: Vec<FeatureEntry>,
}

impl FeatureCollection {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy with every vector scaled to unit Euclidean norm; zero vectors
    /// are left untouched.
    pub fn l2_normalized(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let norm = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
                let vector = if norm > 0.0 {
                    e.vector.iter().map(|v| v / norm).collect()
                } else {
                    e.vector.clone()
                };
                FeatureEntry {
                    image_id: e.image_id.clone(),
                    landmark_index: e.landmark_index,
                    vector,
                }
            })
            .collect();
        Self { entries }
    }

    fn vectors(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|e| e.vector.as_slice()).collect()
    }
}

/// Outcome of clustering one feature collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// One label in `[0, k)` per collection entry, in entry order.
    pub labels: Vec<usize>,
    pub silhouette: f64,
    pub per_k_silhouette: BTreeMap<usize, f64>,
    pub wcss: f64,
}

/// Samples each landmark's feature vector at its integer seed cell and pools
/// them across images, in (image, landmark) order.
pub fn collect_features(
    landmark_sets: &[LandmarkSet],
    grids: &BTreeMap<String, FeatureGrid>,
) -> Result<FeatureCollection, ClusterError> {
    let mut entries = Vec::new();
    for set in landmark_sets {
        let grid = grids
            .get(&set.image_id)
            .ok_or_else(|| ClusterError::GridMismatch {
                image_id: set.image_id.clone(),
                reason: "image id missing from the feature grid map".into(),
            })?;
        for (landmark_index, lm) in set.landmarks.iter().enumerate() {
            let [x, y] = lm.seed;
            if x >= grid.width() || y >= grid.height() {
                return Err(ClusterError::GridMismatch {
                    image_id: set.image_id.clone(),
                    reason: format!(
                        "landmark seed ({x}, {y}) outside {}x{} feature grid",
                        grid.width(),
                        grid.height()
                    ),
                });
            }
            entries.push(FeatureEntry {
                image_id: set.image_id.clone(),
                landmark_index,
                vector: grid.vector(x, y).iter().map(|&v| v as f64).collect(),
            });
        }
    }
    Ok(FeatureCollection { entries })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ initialization: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the nearest chosen one.
fn kmeans_pp_init(data: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(data[rng.gen_range(0..n)].to_vec());
    let mut d2 = vec![f64::INFINITY; n];
    while centroids.len() < k {
        let last = centroids.last().unwrap();
        for (i, v) in data.iter().enumerate() {
            d2[i] = d2[i].min(dist2(v, last));
        }
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                r -= w;
                if r <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all points coincide with a centroid already
            rng.gen_range(0..n)
        };
        centroids.push(data[next].to_vec());
    }
    centroids
}

struct LloydOutcome {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    wcss: f64,
    /// Objective after each iteration; non-increasing.
    #[cfg_attr(not(test), allow(dead_code))]
    trace: Vec<f64>,
}

fn lloyd(data: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> LloydOutcome {
    let n = data.len();
    let k = centroids.len();
    let dim = data[0].len();
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        // assignment, ties toward the lower cluster index
        for (i, v) in data.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d2 = dist2(v, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = dist2(v, centroid);
                if d < best_d2 {
                    best = c;
                    best_d2 = d;
                }
            }
            labels[i] = best;
        }

        // repair empty clusters by reseeding from the farthest point and
        // claiming it; this strictly lowers the objective
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        let mut stolen = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d2 = -1.0;
            for (i, v) in data.iter().enumerate() {
                if stolen[i] || counts[labels[i]] <= 1 {
                    continue;
                }
                let d = dist2(v, &centroids[labels[i]]);
                if d > far_d2 {
                    far = Some(i);
                    far_d2 = d;
                }
            }
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                stolen[i] = true;
                centroids[c] = data[i].to_vec();
            }
        }

        // centroid update: mean of members
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (i, v) in data.iter().enumerate() {
            for (s, x) in sums[labels[i]].iter_mut().zip(v.iter()) {
                *s += x;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // unrepairable only when k > n; keep the seed
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            movement = movement.max(dist2(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }

        let wcss: f64 = data
            .iter()
            .zip(&labels)
            .map(|(v, &l)| dist2(v, &centroids[l]))
            .sum();
        trace.push(wcss);
        if movement < MOVEMENT_TOL {
            break;
        }
    }
    let wcss = *trace.last().unwrap();
    LloydOutcome {
        centroids,
        labels,
        wcss,
        trace,
    }
}

fn kmeans_best_of_restarts(data: &[&[f64]], k: usize, seed: u64) -> LloydOutcome {
    let mut best: Option<LloydOutcome> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((k as u64) << 32) | restart);
        let init = kmeans_pp_init(data, k, &mut rng);
        let outcome = lloyd(data, init);
        let better = match &best {
            None => true,
            Some(b) => outcome.wcss < b.wcss,
        };
        if better {
            best = Some(outcome);
        }
    }
    best.unwrap()
}

/// Lloyd's algorithm with k-means++ initialization and 10 restarts keeping
/// the lowest within-cluster sum of squares; deterministic for a fixed seed.
pub fn kmeans(c: &FeatureCollection, k: usize, seed: u64) -> Result<ClusteringResult, ClusterError> {
    if k < 2 || c.len() < k {
        return Err(ClusterError::TooFewSamples {
            needed: k.max(2),
            got: c.len(),
        });
    }
    let data = c.vectors();
    let outcome = kmeans_best_of_restarts(&data, k, seed);
    let silhouette = silhouette_score(c, &outcome.labels)?;
    let mut per_k_silhouette = BTreeMap::new();
    per_k_silhouette.insert(k, silhouette);
    Ok(ClusteringResult {
        k,
        centroids: outcome.centroids,
        labels: outcome.labels,
        silhouette,
        per_k_silhouette,
        wcss: outcome.wcss,
    })
}

/// Mean silhouette over samples: `(b - a) / max(a, b)` per point, where `a`
/// is the mean distance to the point's own cluster (excluding itself) and
/// `b` the smallest mean distance to any other cluster. Members of singleton
/// clusters contribute 0, as do points with `a = b = 0`.
pub fn silhouette_score(c: &FeatureCollection, labels: &[usize]) -> Result<f64, ClusterError> {
    assert_eq!(c.len(), labels.len(), "one label per entry");
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let data = c.vectors();
    let n = data.len();
    let mut total = 0.0;
    for i in 0..n {
        if counts[labels[i]] == 1 {
            continue; // singleton contributes 0
        }
        let mut sums = vec![0.0f64; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist2(data[i], data[j]).sqrt();
            }
        }
        let a = sums[labels[i]] / (counts[labels[i]] - 1) as f64;
        let mut b = f64::INFINITY;
        for l in 0..k {
            if l != labels[i] && counts[l] > 0 {
                b = b.min(sums[l] / counts[l] as f64);
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Runs k-means for every k in `[k_min, k_max]` and keeps the result with
/// the highest silhouette, breaking ties toward smaller k.
pub fn auto_cluster(
    c: &FeatureCollection,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<ClusteringResult, ClusterError> {
    if k_min < 2 || k_min > k_max || k_max + 1 > c.len() {
        return Err(ClusterError::TooFewSamples {
            needed: k_max + 1,
            got: c.len(),
        });
    }
    let mut per_k_silhouette = BTreeMap::new();
    let mut best: Option<ClusteringResult> = None;
    for k in k_min..=k_max {
        let mut result = kmeans(c, k, seed)?;
        per_k_silhouette.insert(k, result.silhouette);
        let better = match &best {
            None => true,
            Some(b) => result.silhouette > b.silhouette,
        };
        if better {
            result.per_k_silhouette.clear();
            best = Some(result);
        }
    }
    let mut best = best.unwrap();
    best.per_k_silhouette = per_k_silhouette;
    Ok(best)
}

/// Default candidate range for auto-selection: `[2, min(10, N-1)]`.
pub fn default_k_range(sample_count: usize) -> (usize, usize) {
    (2, 10.min(sample_count.saturating_sub(1)))
}

/// Writes cluster labels back onto the landmark sets the collection was
/// built from.
pub fn assign_to_landmarks(
    sets: &mut [LandmarkSet],
    collection: &FeatureCollection,
    labels: &[usize],
) {
    let mut by_id: BTreeMap<String, &mut LandmarkSet> = sets
        .iter_mut()
        .map(|s| (s.image_id.clone(), s))
        .collect();
    for (entry, &label) in collection.entries.iter().zip(labels) {
        if let Some(set) = by_id.get_mut(entry.image_id.as_str()) {
            if let Some(lm) = set.landmarks.get_mut(entry.landmark_index) {
                lm.cluster = Some(label);
            }
        }
    }
}

/// Renumbers clusters by descending mean member saliency (ties toward the
/// lower original label), rewriting the result and the landmark labels in
/// place. k-means label identities are arbitrary; this makes label 0 the
/// most salient structure regardless of seeding, so a fixed label-to-
/// structure map stays meaningful across runs.
pub fn canonicalize_labels(sets: &mut [LandmarkSet], result: &mut ClusteringResult) {
    let k = result.k;
    let mut sum = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    for set in sets.iter() {
        for lm in &set.landmarks {
            if let Some(c) = lm.cluster.filter(|&c| c < k) {
                sum[c] += lm.saliency;
                count[c] += 1;
            }
        }
    }
    let mean = |c: usize| {
        if count[c] == 0 {
            f64::NEG_INFINITY
        } else {
            sum[c] / count[c] as f64
        }
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean(b).partial_cmp(&mean(a)).unwrap().then(a.cmp(&b)));
    let mut relabel = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    for label in &mut result.labels {
        *label = relabel[*label];
    }
    result.centroids = order.iter().map(|&old| result.centroids[old].clone()).collect();
    for set in sets.iter_mut() {
        for lm in &mut set.landmarks {
            if let Some(c) = lm.cluster.filter(|&c| c < k) {
                lm.cluster = Some(relabel[c]);
            }
        }
    }
}
