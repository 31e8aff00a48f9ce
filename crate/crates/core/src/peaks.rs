//! Landmark extraction from a saliency grid: sliding maximum filter,
//! thresholded local maxima with plateau deduplication, and subpixel
//! refinement by a separable log-quadratic peak fit.

use serde::{Deserialize, Serialize};

use crate::geom::Point;
use crate::grid::{ImageMeta, SaliencyGrid};

/// Values are clamped to at least this before taking logarithms in the
/// subpixel fit.
const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PeakError {
    /// The log profile around the peak is not concave, so the quadratic fit
    /// has no maximum; the caller keeps the integer position.
    #[error("degenerate fit: log profile is not concave")]
    DegenerateFit,
    /// The cell has no full 3x3 neighborhood; border peaks keep integer
    /// coordinates.
    #[error("cell lies on the grid border")]
    BorderPeak,
}

/// Peak detection parameters: the minimum Chebyshev distance between maxima
/// and the saliency threshold that suppresses spurious maxima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    pub min_distance: u32,
    pub threshold: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            min_distance: 2,
            threshold: 0.1,
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_distance < 1 {
            return Err("min-distance must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) || !self.threshold.is_finite() {
            return Err(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            ));
        }
        Ok(())
    }
}

/// One discovered landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    /// Integer cell of the detected maximum, before refinement. Feature
    /// vectors are sampled here.
    pub seed: [u32; 2],
    /// Subpixel position in grid cells.
    pub grid_pos: Point,
    /// Position mapped to image pixels.
    pub pixel_pos: Point,
    /// Saliency value at the seed cell.
    pub saliency: f64,
    /// Cluster label, assigned later by the clustering stage.
    pub cluster: Option<usize>,
}

/// All landmarks of one image, sorted by descending saliency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub image_id: String,
    pub landmarks: Vec<Landmark>,
}

/// Sliding-window maximum over a `(2d+1) x (2d+1)` neighborhood, with the
/// window clipped at the grid borders.
pub fn max_filter(s: &SaliencyGrid, d: u32) -> SaliencyGrid {
    assert!(d >= 1, "window radius must be at least 1");
    let w = s.width() as usize;
    let h = s.height() as usize;
    let d = d as usize;
    let values = s.values();

    // horizontal pass, then vertical: the clipped rectangle window separates
    let mut rows = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &values[y * w..(y + 1) * w];
        let out = &mut rows[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(d);
            let hi = (x + d).min(w - 1);
            let mut m = row[lo];
            for &v in &row[lo + 1..=hi] {
                if v > m {
                    m = v;
                }
            }
            out[x] = m;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(d);
        let hi = (y + d).min(h - 1);
        for x in 0..w {
            let mut m = rows[lo * w + x];
            for yy in lo + 1..=hi {
                let v = rows[yy * w + x];
                if v > m {
                    m = v;
                }
            }
            out[y * w + x] = m;
        }
    }
    SaliencyGrid::new(s.width(), s.height(), out).expect("filter preserves validity")
}

/// Thresholded local maxima: cells where the saliency equals the windowed
/// maximum and exceeds the threshold, with connected equal-valued plateaus
/// collapsed to a single cell each.
///
/// The collapse keeps the plateau member nearest the plateau centroid
/// (preferring the rounded centroid itself when it lies on the plateau), so
/// every returned cell is a genuine maximum.
pub fn local_maxima(s: &SaliencyGrid, cfg: &PeakConfig) -> Vec<[u32; 2]> {
    let w = s.width() as i64;
    let h = s.height() as i64;
    let filtered = max_filter(s, cfg.min_distance);
    let threshold = cfg.threshold as f32;

    let mut mask = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let v = s.value(x as u32, y as u32);
            if v >= threshold && v == filtered.value(x as u32, y as u32) {
                mask[(y * w + x) as usize] = true;
            }
        }
    }

    // flood-fill 8-connected components of equal value
    let mut visited = vec![false; (w * h) as usize];
    let mut points = Vec::new();
    let mut component = Vec::new();
    let mut stack = Vec::new();
    for start_y in 0..h {
        for start_x in 0..w {
            let start = (start_y * w + start_x) as usize;
            if !mask[start] || visited[start] {
                continue;
            }
            let value = s.value(start_x as u32, start_y as u32);
            component.clear();
            stack.clear();
            stack.push((start_x, start_y));
            visited[start] = true;
            while let Some((x, y)) = stack.pop() {
                component.push((x, y));
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let idx = (ny * w + nx) as usize;
                        if mask[idx] && !visited[idx] && s.value(nx as u32, ny as u32) == value {
                            visited[idx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            points.push(collapse_plateau(&component));
        }
    }
    points.sort_unstable_by_key(|&[x, y]| (y, x));
    points
}

/// Plateau centroid rounded to the nearest cell, snapped to the nearest
/// plateau member when the rounding lands off the plateau.
fn collapse_plateau(cells: &[(i64, i64)]) -> [u32; 2] {
    let n = cells.len() as f64;
    let cx = cells.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
    let cy = cells.iter().map(|&(_, y)| y as f64).sum::<f64>() / n;
    let rounded = (cx.round() as i64, cy.round() as i64);
    if cells.contains(&rounded) {
        return [rounded.0 as u32, rounded.1 as u32];
    }
    let mut best = cells[0];
    let mut best_d2 = f64::INFINITY;
    for &(x, y) in cells {
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        if d2 < best_d2 || (d2 == best_d2 && (y, x) < (best.1, best.0)) {
            best = (x, y);
            best_d2 = d2;
        }
    }
    [best.0 as u32, best.1 as u32]
}

/// Subpixel peak position from a separable log-quadratic fit to the 3x3
/// neighborhood of `p`. The per-axis offset is
/// `0.5 * (ln l - ln r) / (ln l - 2 ln c + ln r)`, clamped to `[-0.5, 0.5]`;
/// it is exact when the neighborhood samples a true Gaussian peak.
pub fn refine_subpixel(s: &SaliencyGrid, p: [u32; 2]) -> Result<Point, PeakError> {
    let [x, y] = p;
    if x == 0 || y == 0 || x + 1 >= s.width() || y + 1 >= s.height() {
        return Err(PeakError::BorderPeak);
    }
    let ln = |v: f32| (v as f64).max(LOG_CLAMP).ln();
    let dx = axis_offset(ln(s.value(x - 1, y)), ln(s.value(x, y)), ln(s.value(x + 1, y)))?;
    let dy = axis_offset(ln(s.value(x, y - 1)), ln(s.value(x, y)), ln(s.value(x, y + 1)))?;
    Ok(Point::new(x as f64 + dx, y as f64 + dy))
}

fn axis_offset(left: f64, center: f64, right: f64) -> Result<f64, PeakError> {
    let denom = left - 2.0 * center + right;
    // concave log profile has a negative second difference
    if denom >= 0.0 {
        return Err(PeakError::DegenerateFit);
    }
    Ok((0.5 * (left - right) / denom).clamp(-0.5, 0.5))
}

/// Full landmark extraction: thresholded maxima, subpixel refinement where a
/// full neighborhood exists, mapping to pixel coordinates. Landmarks are
/// sorted by descending saliency.
pub fn extract_landmarks(s: &SaliencyGrid, meta: &ImageMeta, cfg: &PeakConfig) -> LandmarkSet {
    let mut landmarks: Vec<Landmark> = local_maxima(s, cfg)
        .into_iter()
        .map(|seed| {
            let grid_pos = refine_subpixel(s, seed)
                .unwrap_or_else(|_| Point::new(seed[0] as f64, seed[1] as f64));
            Landmark {
                seed,
                grid_pos,
                pixel_pos: meta.grid_to_pixel(grid_pos),
                saliency: s.value(seed[0], seed[1]) as f64,
                cluster: None,
            }
        })
        .collect();
    landmarks.sort_by(|a, b| {
        b.saliency
            .partial_cmp(&a.saliency)
            .unwrap()
            .then_with(|| (a.seed[1], a.seed[0]).cmp(&(b.seed[1], b.seed[0])))
    });
    LandmarkSet {
        image_id: meta.image_id.clone(),
        landmarks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: u32, h: u32, f: impl Fn(u32, u32) -> f32) -> SaliencyGrid {
        let mut values = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                values.push(f(x, y));
            }
        }
        SaliencyGrid::new(w, h, values).unwrap()
    }

    fn meta(w: u32, h: u32) -> ImageMeta {
        ImageMeta::derive("test", w * 8, h * 8, w, h)
    }

    #[test]
    fn max_filter_constant_grid() {
        let g = grid(6, 5, |_, _| 0.37);
        let f = max_filter(&g, 2);
        assert!(f.values().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn max_filter_single_peak_floods_window() {
        let g = grid(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 });
        let f = max_filter(&g, 2);
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn max_filter_matches_brute_force() {
        let g = grid(9, 7, |x, y| {
            let k = (x * 31 + y * 17) % 97;
            k as f32 / 96.0
        });
        let d = 2u32;
        let f = max_filter(&g, d);
        for y in 0..7i64 {
            for x in 0..9i64 {
                let mut m = 0.0f32;
                for yy in (y - d as i64).max(0)..=(y + d as i64).min(6) {
                    for xx in (x - d as i64).max(0)..=(x + d as i64).min(8) {
                        m = m.max(g.value(xx as u32, yy as u32));
                    }
                }
                assert_eq!(f.value(x as u32, y as u32), m);
            }
        }
    }

    #[test]
    fn local_maxima_zero_grid_is_empty() {
        let g = grid(8, 8, |_, _| 0.0);
        assert!(local_maxima(&g, &PeakConfig::default()).is_empty());
    }

    #[test]
    fn local_maxima_two_separated_peaks() {
        let g = grid(16, 8, |x, y| {
            if (x, y) == (2, 2) || (x, y) == (10, 2) {
                1.0
            } else {
                0.0
            }
        });
        let peaks = local_maxima(&g, &PeakConfig::default());
        assert_eq!(peaks, vec![[2, 2], [10, 2]]);
    }

    #[test]
    fn local_maxima_below_threshold_suppressed() {
        let g = grid(8, 8, |x, y| if (x, y) == (4, 4) { 0.05 } else { 0.0 });
        assert!(local_maxima(&g, &PeakConfig::default()).is_empty());
    }

    #[test]
    fn plateau_collapses_to_centroid() {
        // 2x2 plateau of equal maxima; centroid (2.5, 2.5) rounds to (3, 3)
        let g = grid(8, 8, |x, y| {
            if (2..=3).contains(&x) && (2..=3).contains(&y) {
                0.8
            } else {
                0.0
            }
        });
        let peaks = local_maxima(&g, &PeakConfig::default());
        assert_eq!(peaks, vec![[3, 3]]);
    }

    #[test]
    fn refine_symmetric_neighborhood_has_zero_offset() {
        let g = grid(5, 5, |x, y| match (x, y) {
            (2, 2) => 0.9,
            (1, 2) | (3, 2) => 0.5,
            (2, 1) | (2, 3) => 0.4,
            _ => 0.1,
        });
        let p = refine_subpixel(&g, [2, 2]).unwrap();
        assert_eq!(p, Point::new(2.0, 2.0));
    }

    #[test]
    fn refine_recovers_exact_gaussian_center() {
        let (x0, y0) = (2.3f64, 1.8f64);
        let sigma = 0.9f64;
        let g = grid(5, 5, |x, y| {
            let dx = x as f64 - x0;
            let dy = y as f64 - y0;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp() as f32
        });
        let p = refine_subpixel(&g, [2, 2]).unwrap();
        assert!((p.x - x0).abs() < 1e-6, "x offset: {}", p.x - x0);
        assert!((p.y - y0).abs() < 1e-6, "y offset: {}", p.y - y0);
    }

    #[test]
    fn refine_flat_neighborhood_is_degenerate() {
        let g = grid(5, 5, |_, _| 0.5);
        assert_eq!(refine_subpixel(&g, [2, 2]), Err(PeakError::DegenerateFit));
    }

    #[test]
    fn refine_rejects_border() {
        let g = grid(5, 5, |_, _| 0.5);
        assert_eq!(refine_subpixel(&g, [0, 2]), Err(PeakError::BorderPeak));
        assert_eq!(refine_subpixel(&g, [2, 4]), Err(PeakError::BorderPeak));
    }

    #[test]
    fn extract_on_zero_grid_is_empty() {
        let g = grid(8, 8, |_, _| 0.0);
        let set = extract_landmarks(&g, &meta(8, 8), &PeakConfig::default());
        assert!(set.landmarks.is_empty());
    }

    #[test]
    fn extract_sorts_by_descending_saliency() {
        let g = grid(16, 8, |x, y| match (x, y) {
            (2, 3) => 0.6,
            (11, 4) => 0.9,
            _ => 0.0,
        });
        let set = extract_landmarks(&g, &meta(16, 8), &PeakConfig::default());
        assert_eq!(set.landmarks.len(), 2);
        assert_eq!(set.landmarks[0].seed, [11, 4]);
        assert_eq!(set.landmarks[1].seed, [2, 3]);
        assert!(set.landmarks[0].saliency > set.landmarks[1].saliency);
    }

    #[test]
    fn default_config_matches_documented_values() {
        let cfg = PeakConfig::default();
        assert_eq!(cfg.min_distance, 2);
        assert_eq!(cfg.threshold, 0.1);
    }

    #[test]
    fn border_peak_keeps_integer_coordinates() {
        let g = grid(8, 8, |x, y| if (x, y) == (0, 3) { 0.7 } else { 0.05 });
        let set = extract_landmarks(&g, &meta(8, 8), &PeakConfig::default());
        assert_eq!(set.landmarks.len(), 1);
        assert_eq!(set.landmarks[0].grid_pos, Point::new(0.0, 3.0));
    }
}
