//! Elementary 3D types and the closed-form rigid-transform solver.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, SymmetricEigen, Unit, UnitQuaternion, SVD};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Normalized cross products below this are treated as collinear.
pub const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate correspondence set: {0}")]
    DegenerateInput(&'static str),
    #[error("source and target lengths differ ({source_len} vs {target_len})")]
    LengthMismatch { source_len: usize, target_len: usize },
    #[error("matrix is not a proper rotation (orthogonality error {ortho:.3e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
}

/// A proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking `RᵀR = I` and `det R = +1` to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: Vector3, angle: f64, translation: Vector3) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    /// Rotation from a scaled axis (rotation vector) plus translation.
    pub fn from_rotation_vector(omega: Vector3, translation: Vector3) -> Self {
        Self {
            rotation: *Rotation3::new(omega).matrix(),
            translation,
        }
    }

    /// Yaw about +z (radians) with a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3) -> Self {
        Self::from_axis_angle(Vector3::z(), yaw, translation)
    }

    /// Parses the KITTI row-major 3x4 layout `r00 r01 r02 t0 r10 ... t2`.
    pub fn from_row_major_3x4(values: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        Self {
            rotation,
            translation: Vector3::new(values[3], values[7], values[11]),
        }
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    /// Re-orthonormalizes a nearly orthogonal rotation (e.g. parsed at text precision).
    pub fn orthonormalized(&self) -> Self {
        let svd = SVD::new(self.rotation, true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut rotation = u * v_t;
        if rotation.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            rotation = u * v_t;
        }
        Self {
            rotation,
            translation: self.translation,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let angle = c.acos();
        if angle < 1e-4 {
            // acos loses precision near zero; the skew part is accurate there.
            let r = &self.rotation;
            let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
            (0.5 * s.norm()).asin()
        } else {
            angle
        }
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&Point3> for &RigidTransform {
    type Output = Point3;

    fn mul(self, rhs: &Point3) -> Point3 {
        self.apply(rhs)
    }
}

/// Applies `transform` to `p`.
pub fn apply_transform(transform: &RigidTransform, p: &Point3) -> Point3 {
    transform.apply(p)
}

/// Paired point lists with their centroids.
#[derive(Debug, Clone)]
pub struct Correspondences3 {
    source: Vec<Point3>,
    target: Vec<Point3>,
    source_centroid: Point3,
    target_centroid: Point3,
}

impl Correspondences3 {
    pub fn new(source: Vec<Point3>, target: Vec<Point3>) -> Result<Self, GeometryError> {
        if source.len() != target.len() {
            return Err(GeometryError::LengthMismatch {
                source_len: source.len(),
                target_len: target.len(),
            });
        }
        if source.len() < 3 {
            return Err(GeometryError::DegenerateInput("fewer than 3 correspondences"));
        }
        let source_centroid = centroid(&source);
        let target_centroid = centroid(&target);
        Ok(Self {
            source,
            target,
            source_centroid,
            target_centroid,
        })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Point3, Point3)>) -> Result<Self, GeometryError> {
        let (source, target) = pairs.into_iter().unzip();
        Self::new(source, target)
    }

    pub fn source(&self) -> &[Point3] {
        &self.source
    }

    pub fn target(&self) -> &[Point3] {
        &self.target
    }

    pub fn source_centroid(&self) -> Point3 {
        self.source_centroid
    }

    pub fn target_centroid(&self) -> Point3 {
        self.target_centroid
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Sum of squared residuals `Σ‖R a + t − b‖²`.
    pub fn residual(&self, transform: &RigidTransform) -> f64 {
        self.source
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (transform.apply(a) - b).norm_squared())
            .sum()
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len().max(1) as f64;
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / n)
}

/// True when every point lies on a single line (or coincides) to `COLLINEAR_TOL`.
pub fn is_collinear(points: &[Point3]) -> bool {
    let Some(first) = points.first() else {
        return true;
    };
    let Some((far, far_dist)) = points
        .iter()
        .map(|p| (p, (p - first).norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return true;
    };
    if far_dist <= f64::EPSILON {
        return true;
    }
    let dir = (far - first) / far_dist;
    points.iter().all(|p| {
        let d = p - first;
        let len = d.norm();
        len <= f64::EPSILON || (dir.cross(&d) / len).norm() < COLLINEAR_TOL
    })
}

/// Least-squares rigid transform mapping `source` onto `target`.
///
/// The Kabsch objective `max tr(Rᵀ H)` over proper rotations is solved as the
/// top eigenvector of the equivalent 4×4 symmetric quaternion matrix. This
/// never yields a reflection and stays accurate to ~1e-12 on three-point
/// problems, where `H` has rank 2 and a 3×3 SVD loses several digits.
pub fn solve_rigid_svd(c: &Correspondences3) -> Result<RigidTransform, GeometryError> {
    if c.len() < 3 {
        return Err(GeometryError::DegenerateInput("fewer than 3 correspondences"));
    }
    if is_collinear(&c.source) {
        return Err(GeometryError::DegenerateInput("source points are collinear"));
    }
    let qa = c.source_centroid.coords;
    let qb = c.target_centroid.coords;
    let mut h = Matrix3::zeros();
    for (a, b) in c.source.iter().zip(&c.target) {
        h += (a.coords - qa) * (b.coords - qb).transpose();
    }
    let scale = h.norm();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeometryError::DegenerateInput("zero cross-covariance"));
    }
    let h = h / scale;
    let (sxx, sxy, sxz) = (h[(0, 0)], h[(0, 1)], h[(0, 2)]);
    let (syx, syy, syz) = (h[(1, 0)], h[(1, 1)], h[(1, 2)]);
    let (szx, szy, szz) = (h[(2, 0)], h[(2, 1)], h[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let q = eig.eigenvectors.column(eig.eigenvalues.imax());
    let rotation = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner();
    let translation = qb - rotation * qa;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}
