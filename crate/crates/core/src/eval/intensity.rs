//! Intensity-based registration: maximizes normalized cross-correlation
//! between the target and the warped source over a translation, rotation,
//! and isotropic scale correction, optimized per level of a three-level
//! image pyramid with the Nelder-Mead simplex.

use crate::geom::{Mat3, Point};
use crate::optim::{minimize, SimplexOptions};
use crate::raster::GrayImage;
use crate::transform::{rotation_scale_about, SimilarityTransform};

use super::EvalError;

/// Iteration cap per pyramid level.
pub const MAX_ITERATIONS_PER_LEVEL: usize = 256;
/// Simplex collapse size, in the mixed parameter units.
const DIAMETER_TOL: f64 = 1e-3;
/// Downsampling factors, coarse to fine.
const PYRAMID_FACTORS: [u32; 3] = [4, 2, 1];
/// Initial simplex displacements for (t_x px, t_y px, rotation rad, ln scale):
/// 4 px, 4 px, 2 degrees, 5% of scale.
const SIMPLEX_STEPS: [f64; 4] = [4.0, 4.0, 0.034906585039886591, 0.05];

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOutcome {
    pub transform: SimilarityTransform,
    /// Full-resolution NCC of the returned transform.
    pub ncc: f64,
    pub iterations_per_level: Vec<usize>,
}

/// Normalized cross-correlation between `target` and `source` warped by
/// `matrix`, over target pixels whose inverse-mapped sample lies fully
/// inside the source. `None` when the overlap is empty or either side is
/// constant over it.
pub fn masked_ncc(source: &GrayImage, target: &GrayImage, matrix: &Mat3) -> Option<f64> {
    let inv = matrix.inverse_affine()?;
    let mut n = 0.0f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for j in 0..target.height() {
        for i in 0..target.width() {
            let src = inv.apply(Point::new(f64::from(i) + 0.5, f64::from(j) + 0.5));
            let Some(a) = source.sample_bilinear(src.x, src.y) else {
                continue;
            };
            let a = f64::from(a);
            let b = f64::from(target.get(i, j));
            n += 1.0;
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    }
    if n < 2.0 {
        return None;
    }
    let var_a = saa - sa * sa / n;
    let var_b = sbb - sb * sb / n;
    if var_a <= 0.0 || var_b <= 0.0 {
        return None;
    }
    let cov = sab - sa * sb / n;
    Some((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// Correction matrix for parameters (t_x, t_y, rotation, ln scale):
/// translate, then rotate and scale about the image center.
fn correction_matrix(params: &[f64], center: Point) -> Mat3 {
    let rho = params[3].exp();
    let alpha = rho * params[2].cos();
    let beta = rho * params[2].sin();
    rotation_scale_about(alpha, beta, center).mul_mat(&Mat3::translation(params[0], params[1]))
}

/// Conjugates a full-resolution pixel transform into the coordinates of a
/// pyramid level downsampled by `factor`.
fn at_level(matrix: &Mat3, factor: u32) -> Mat3 {
    let k = f64::from(factor);
    let shrink = Mat3([[1.0 / k, 0.0, 0.0], [0.0, 1.0 / k, 0.0], [0.0, 0.0, 1.0]]);
    let grow = Mat3([[k, 0.0, 0.0], [0.0, k, 0.0], [0.0, 0.0, 1.0]]);
    shrink.mul_mat(matrix).mul_mat(&grow)
}

fn variance(img: &GrayImage) -> f64 {
    let n = img.data().len() as f64;
    let mean = img.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    img.data()
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n
}

/// Refines `init` so that the warped source best correlates with the
/// target, coarse-to-fine. The returned transform never scores a lower
/// full-resolution NCC than the initialization.
pub fn register_intensity(
    source: &GrayImage,
    target: &GrayImage,
    init: &SimilarityTransform,
) -> Result<RegistrationOutcome, EvalError> {
    if source.width() != target.width() || source.height() != target.height() {
        return Err(EvalError::SizeMismatch {
            source_dims: (source.width(), source.height()),
            target_dims: (target.width(), target.height()),
        });
    }
    if variance(source) == 0.0 || variance(target) == 0.0 {
        return Err(EvalError::FlatImage);
    }
    let center = Point::new(
        f64::from(source.width()) / 2.0,
        f64::from(source.height()) / 2.0,
    );

    let mut current = init.matrix;
    let mut iterations_per_level = Vec::with_capacity(PYRAMID_FACTORS.len());
    // candidate matrices for the best-ever selection, initialization first
    let mut candidates = vec![init.matrix];
    for factor in PYRAMID_FACTORS {
        let src = source.downsample(factor);
        let tgt = target.downsample(factor);
        let base = current;
        let outcome = minimize(
            |params| {
                let m = at_level(&correction_matrix(params, center).mul_mat(&base), factor);
                match masked_ncc(&src, &tgt, &m) {
                    Some(ncc) => -ncc,
                    None => 1.0, // no usable overlap: as bad as NCC = -1
                }
            },
            &[0.0; 4],
            &SIMPLEX_STEPS,
            &SimplexOptions {
                max_iterations: MAX_ITERATIONS_PER_LEVEL,
                diameter_tol: DIAMETER_TOL,
            },
        );
        iterations_per_level.push(outcome.iterations);
        current = correction_matrix(&outcome.x, center).mul_mat(&base);
        candidates.push(current);
    }

    // keep the best transform ever reached, measured at full resolution;
    // ties keep the earlier candidate so the initialization never loses
    let mut best: Option<(Mat3, f64)> = None;
    for m in candidates {
        if let Some(ncc) = masked_ncc(source, target, &m) {
            if best.map_or(true, |(_, b)| ncc > b) {
                best = Some((m, ncc));
            }
        }
    }
    let (matrix, ncc) = best.ok_or(EvalError::FlatImage)?;
    let transform = if matrix == init.matrix {
        init.clone()
    } else {
        SimilarityTransform::from_matrix(matrix, source.width(), center)?
    };
    Ok(RegistrationOutcome {
        transform,
        ncc,
        iterations_per_level,
    })
}
