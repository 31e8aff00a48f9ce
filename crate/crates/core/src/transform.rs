//! Two-landmark alignment: an optional horizontal flip to normalize head
//! orientation, a translation bringing the first landmarks into
//! coincidence, and a rotation + isotropic scale about that point bringing
//! the second landmarks into coincidence. The composition is a single
//! homogeneous 3x3 matrix.

use serde::{Deserialize, Serialize};

use crate::geom::{Mat3, Point};
use crate::raster::GrayImage;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TransformError {
    #[error("landmark pair is degenerate: the two landmarks coincide")]
    DegenerateLandmarks,
    #[error("ambiguous orientation: landmarks are vertically aligned")]
    AmbiguousOrientation,
    #[error("transform is singular and cannot be inverted")]
    SingularTransform,
}

/// How to resolve a vertically aligned landmark pair, where the horizontal
/// ordering that normally decides the flip is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrientationPolicy {
    /// Report the ambiguity as an error.
    #[default]
    Strict,
    /// Proceed without flipping.
    ForceNoFlip,
}

/// The two matched landmarks of one image, in pixel coordinates, plus the
/// image width the flip mirrors across.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPair {
    /// First structure's landmark (C).
    pub c: Point,
    /// Second structure's landmark (D).
    pub d: Point,
    pub image_width: u32,
}

impl LandmarkPair {
    pub fn new(c: Point, d: Point, image_width: u32) -> Self {
        Self { c, d, image_width }
    }

    /// Sign of the horizontal landmark ordering; zero means ambiguous.
    fn orientation(&self) -> f64 {
        let dx = self.c.x - self.d.x;
        if dx == 0.0 {
            0.0
        } else {
            dx.signum()
        }
    }
}

/// Whether the source must be mirrored so that its landmark ordering agrees
/// with the target's.
pub fn needs_flip(source: &LandmarkPair, target: &LandmarkPair) -> Result<bool, TransformError> {
    let s = source.orientation();
    let t = target.orientation();
    if s == 0.0 || t == 0.0 {
        return Err(TransformError::AmbiguousOrientation);
    }
    Ok(s != t)
}

/// Mirrors an x coordinate of the source image when the two images disagree
/// on landmark ordering, and returns it unchanged otherwise.
pub fn flip_x(px: f64, source: &LandmarkPair, target: &LandmarkPair) -> Result<f64, TransformError> {
    Ok(if needs_flip(source, target)? {
        f64::from(source.image_width) - px
    } else {
        px
    })
}

/// The fitted alignment. `matrix` is the full composition (flip, then
/// translation, then rotation and scale about the target's first landmark),
/// so applying the transform is a single matrix product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub flipped: bool,
    pub translation: Point,
    /// Signed angle in the image frame (y pointing down).
    pub rotation: f64,
    pub scale: f64,
    pub alpha: f64,
    pub beta: f64,
    pub matrix: Mat3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            flipped: false,
            translation: Point::new(0.0, 0.0),
            rotation: 0.0,
            scale: 1.0,
            alpha: 1.0,
            beta: 0.0,
            matrix: Mat3::IDENTITY,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        self.matrix.apply(p)
    }

    pub fn inverse_matrix(&self) -> Result<Mat3, TransformError> {
        if self.matrix.det_affine().abs() < 1e-12 {
            return Err(TransformError::SingularTransform);
        }
        self.matrix
            .inverse_affine()
            .ok_or(TransformError::SingularTransform)
    }

    /// Recovers the parameter fields from a homogeneous matrix known to be
    /// a similarity, possibly pre-composed with a horizontal mirror across
    /// `image_width` (detected by a negative determinant). `center` anchors
    /// the rotation/translation split, mirroring the fitted form where the
    /// rotation and scale act about the target's first landmark.
    pub fn from_matrix(
        matrix: Mat3,
        image_width: u32,
        center: Point,
    ) -> Result<Self, TransformError> {
        let det = matrix.det_affine();
        if det.abs() < 1e-12 || !det.is_finite() {
            return Err(TransformError::SingularTransform);
        }
        let flipped = det < 0.0;
        let proper = if flipped {
            // the mirror is an involution, so one more right-multiply
            // strips it
            matrix.mul_mat(&Mat3::flip_x(f64::from(image_width)))
        } else {
            matrix
        };
        let alpha = proper.0[0][0];
        let beta = proper.0[0][1];
        let scale = alpha.hypot(beta);
        let rotation = f64::atan2(beta, alpha);
        let rotation_part = rotation_scale_about(alpha, beta, center);
        let translation_part = rotation_part
            .inverse_affine()
            .ok_or(TransformError::SingularTransform)?
            .mul_mat(&proper);
        let translation = Point::new(translation_part.0[0][2], translation_part.0[1][2]);
        Ok(Self {
            flipped,
            translation,
            rotation,
            scale,
            alpha,
            beta,
            matrix,
        })
    }
}

/// Rotation and isotropic scale fixing `center`:
/// `[[alpha, beta, (1-alpha)*cx - beta*cy], [-beta, alpha, beta*cx + (1-alpha)*cy]]`.
pub(crate) fn rotation_scale_about(alpha: f64, beta: f64, center: Point) -> Mat3 {
    Mat3([
        [
            alpha,
            beta,
            (1.0 - alpha) * center.x - beta * center.y,
        ],
        [
            -beta,
            alpha,
            beta * center.x + (1.0 - alpha) * center.y,
        ],
        [0.0, 0.0, 1.0],
    ])
}

/// Fits the similarity transform sending `source.c` to `target.c` and
/// `source.d` to `target.d` exactly, mirroring the source first when the
/// horizontal landmark orderings disagree.
pub fn fit_transform(
    source: &LandmarkPair,
    target: &LandmarkPair,
) -> Result<SimilarityTransform, TransformError> {
    fit_transform_with(source, target, OrientationPolicy::Strict)
}

/// [`fit_transform`] with an explicit policy for vertically aligned
/// landmarks.
pub fn fit_transform_with(
    source: &LandmarkPair,
    target: &LandmarkPair,
    policy: OrientationPolicy,
) -> Result<SimilarityTransform, TransformError> {
    if source.c == source.d || target.c == target.d {
        return Err(TransformError::DegenerateLandmarks);
    }
    let flipped = match needs_flip(source, target) {
        Ok(f) => f,
        Err(TransformError::AmbiguousOrientation)
            if policy == OrientationPolicy::ForceNoFlip =>
        {
            false
        }
        Err(e) => return Err(e),
    };
    let width = f64::from(source.image_width);
    let mirror = |p: Point| {
        if flipped {
            Point::new(width - p.x, p.y)
        } else {
            p
        }
    };
    let c_f = mirror(source.c);
    let d_f = mirror(source.d);

    let translation = target.c - c_f;
    let u = d_f - c_f;
    let v = target.d - target.c;
    let scale = v.norm() / u.norm();
    // the linear block [[a, b], [-b, a]] maps u onto v when the angle is
    // taken in the y-down image frame: theta = atan2(cross(v, u), dot(u, v))
    let rotation = f64::atan2(v.cross(u), u.dot(v));
    let alpha = scale * rotation.cos();
    let beta = scale * rotation.sin();

    let mut matrix = rotation_scale_about(alpha, beta, target.c)
        .mul_mat(&Mat3::translation(translation.x, translation.y));
    if flipped {
        matrix = matrix.mul_mat(&Mat3::flip_x(width));
    }
    Ok(SimilarityTransform {
        flipped,
        translation,
        rotation,
        scale,
        alpha,
        beta,
        matrix,
    })
}

/// Resamples `img` through the transform into an output raster of the given
/// size, by inverse-mapping each output pixel center and interpolating
/// bilinearly; samples outside the source are 0.
pub fn warp_image(
    img: &GrayImage,
    tf: &SimilarityTransform,
    out_width: u32,
    out_height: u32,
) -> Result<GrayImage, TransformError> {
    let inv = tf.inverse_matrix()?;
    let mut out = GrayImage::zeros(out_width, out_height);
    for j in 0..out_height {
        for i in 0..out_width {
            let src = inv.apply(Point::new(f64::from(i) + 0.5, f64::from(j) + 0.5));
            let v = img.sample_bilinear(src.x, src.y).unwrap_or(0.0);
            out.set(i, j, v);
        }
    }
    Ok(out)
}
