//! Point-cloud primitives, spatial indexing, normal estimation, farthest-point
//! sampling, rigid transforms and point-to-plane ICP.

mod fps;
mod icp;
pub mod io;
mod kdtree;
mod normals;

pub use fps::{farthest_point_indices, farthest_point_sampling};
pub use icp::{icp_point_to_plane, point_to_plane_objective, IcpConfig, IcpResult};
pub use kdtree::KdTree;
pub use normals::{estimate_normals, estimate_normals_with_curvature};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Rotation + translation acting as `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
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
            translation: Vec3::zeros(),
        }
    }

    /// Validates orthonormality and handedness of `rotation` to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract("rotation matrix is not in SO(3)".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Exponential map of a rotation vector.
    pub fn from_rotation_vector(omega: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: *Rotation3::new(omega).matrix(),
            translation,
        }
    }

    pub fn translation_only(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation_only(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Angle of the rotation component in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Geodesic angle between the rotation components of two transforms.
    pub fn rotation_distance(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    /// Projects the rotation back onto SO(3) via SVD.
    pub fn orthonormalized(&self) -> RigidTransform {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        RigidTransform {
            rotation: r,
            translation: self.translation,
        }
    }
}

pub(crate) fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    // acos loses precision near zero; use the skew part there.
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = skew.norm() / 2.0;
    s.atan2(c)
}

/// Applies `transform` to every point, preserving order.
pub fn apply_transform(transform: &RigidTransform, points: &[Vec3]) -> Vec<Vec3> {
    points.iter().map(|p| transform.apply(p)).collect()
}

/// Ordered points with optional unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::Contract(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::Contract(format!("normal {i} is not unit length")));
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Largest pairwise extent, approximated by the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn transformed(&self, transform: &RigidTransform) -> PointCloud {
        PointCloud {
            points: apply_transform(transform, &self.points),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| transform.rotate(n)).collect()),
        }
    }

    pub fn translated(&self, offset: &Vec3) -> PointCloud {
        self.transformed(&RigidTransform::translation_only(*offset))
    }

    /// Sub-cloud at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }
}
