//! Point and cloud data model plus rigid transforms.
//!
//! Coordinates are millimetres throughout. Angles are radians inside the
//! library; degrees appear only at the CLI and report boundaries.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    Camera,
    TurbineAxis,
}

impl Frame {
    pub fn as_str(self) -> &'static str {
        match self {
            Frame::Camera => "camera",
            Frame::TurbineAxis => "turbine-axis",
        }
    }
}

/// An ordered collection of finite 3D points tagged with its frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    frame: Frame,
}

impl PointCloud {
    /// Builds a cloud, rejecting NaN or infinite coordinates.
    pub fn new(points: Vec<Point3>, frame: Frame) -> Result<Self> {
        if let Some(index) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { points, frame })
    }

    pub fn camera(points: Vec<Point3>) -> Result<Self> {
        Self::new(points, Frame::Camera)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Subset of this cloud at the given indices, same frame.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame: self.frame,
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        centroid(&self.points)
    }

    pub(crate) fn ensure_non_empty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    /// Same points, relabeled frame. Used by readers that know the frame from context.
    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }
}

pub(crate) fn centroid(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE)
            || !translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidRotation { ortho, det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation_only(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` through the origin, then translation.
    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(axis, angle).matrix(),
            translation,
        }
    }

    /// Rotation built internally from an already-orthonormal matrix; skips validation.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
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

    /// Rotation angle of the rotational part, radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Moves a camera-frame cloud into the turbine-axis frame by subtracting the
/// frame origin offset (translation only).
pub fn transform_to_turbine_frame(cloud: &PointCloud, offset: &Vector3<f64>) -> Result<PointCloud> {
    cloud.ensure_non_empty()?;
    if cloud.frame != Frame::Camera {
        return Err(Error::WrongFrame {
            expected: Frame::Camera.as_str(),
            found: cloud.frame.as_str(),
        });
    }
    if !offset.iter().all(|v| v.is_finite()) {
        return Err(Error::param("offset", "must be finite"));
    }
    let points = cloud.points.iter().map(|p| p - offset).collect();
    Ok(PointCloud {
        points,
        frame: Frame::TurbineAxis,
    })
}

/// Inverse of [`transform_to_turbine_frame`].
pub fn transform_to_camera_frame(cloud: &PointCloud, offset: &Vector3<f64>) -> Result<PointCloud> {
    cloud.ensure_non_empty()?;
    if cloud.frame != Frame::TurbineAxis {
        return Err(Error::WrongFrame {
            expected: Frame::TurbineAxis.as_str(),
            found: cloud.frame.as_str(),
        });
    }
    let points = cloud.points.iter().map(|p| p + offset).collect();
    Ok(PointCloud {
        points,
        frame: Frame::Camera,
    })
}

/// Applies `p -> R p + t` to every point. The rotation is re-validated so
/// that transforms assembled by callers from raw parts cannot slip through.
pub fn apply_transform(cloud: &PointCloud, xf: &RigidTransform) -> Result<PointCloud> {
    let xf = RigidTransform::new(xf.rotation, xf.translation)?;
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| xf.apply(p)).collect(),
        frame: cloud.frame,
    })
}

/// Any unit vector orthogonal to `n`, chosen deterministically.
pub(crate) fn any_orthogonal(n: &Vector3<f64>) -> Vector3<f64> {
    let a = n.abs();
    let helper = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    n.cross(&helper).normalize()
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
pub(crate) fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to).clamp(-1.0, 1.0);
    if s < 1e-15 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        let perp = Unit::new_normalize(any_orthogonal(from));
        return *Rotation3::from_axis_angle(&perp, std::f64::consts::PI).matrix();
    }
    let angle = s.atan2(c);
    *Rotation3::from_axis_angle(&Unit::new_unchecked(axis / s), angle).matrix()
}
