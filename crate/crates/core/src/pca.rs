//! Principal axes of a cloud and projections onto principal planes.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

/// Relative eigenvalue gap under which two principal axes are considered
/// interchangeable.
pub const DEGENERACY_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Point3,
    /// `u1, u2, u3`, ordered by descending eigenvalue.
    pub axes: [Vector3<f64>; 3],
    /// Eigenvalues of the mean-centred scatter matrix `Σ (x - x̄)(x - x̄)ᵀ`.
    pub eigenvalues: [f64; 3],
}

impl PcaBasis {
    pub fn axis(&self, i: usize) -> &Vector3<f64> {
        &self.axes[i]
    }

    /// True when any two adjacent eigenvalues coincide to within
    /// [`DEGENERACY_RATIO`] of the larger one, i.e. the axis order is not
    /// meaningful.
    pub fn near_degenerate(&self) -> bool {
        let l = &self.eigenvalues;
        (0..2).any(|i| l[i] <= 0.0 || (l[i] - l[i + 1]) <= DEGENERACY_RATIO * l[i])
    }

    /// Matrix whose rows are the principal axes.
    pub fn rows(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[
            self.axes[0].transpose(),
            self.axes[1].transpose(),
            self.axes[2].transpose(),
        ])
    }
}

/// Flip `v` so its largest-magnitude component is positive.
pub(crate) fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut best = 0;
    for i in 1..3 {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        -v
    } else {
        v
    }
}

pub(crate) fn scatter(points: &[Point3], mean: &Point3) -> Matrix3<f64> {
    points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    })
}

/// Eigen-decomposition of a symmetric 3×3 matrix, descending, sign-canonical.
pub(crate) fn sorted_eigen(h: Matrix3<f64>) -> ([Vector3<f64>; 3], [f64; 3]) {
    let eig = SymmetricEigen::new(h);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes = idx.map(|i| canonical_sign(eig.eigenvectors.column(i).into_owned().normalize()));
    let values = idx.map(|i| eig.eigenvalues[i].max(0.0));
    (axes, values)
}

pub fn pca_basis(cloud: &PointCloud) -> Result<PcaBasis> {
    if cloud.len() < 2 {
        return Err(Error::TooFewPoints {
            op: "pca_basis",
            required: 2,
            actual: cloud.len(),
        });
    }
    let mean = cloud.centroid().expect("non-empty");
    let h = scatter(cloud.points(), &mean);
    if h.trace() <= 0.0 {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    let (axes, eigenvalues) = sorted_eigen(h);
    Ok(PcaBasis {
        mean,
        axes,
        eigenvalues,
    })
}

/// A principal plane, named by the two axes that span it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneView {
    #[serde(rename = "23")]
    U2U3,
    #[serde(rename = "13")]
    U1U3,
    #[serde(rename = "12")]
    U1U2,
}

impl PlaneView {
    pub fn axis_pair(self) -> (usize, usize) {
        match self {
            PlaneView::U2U3 => (1, 2),
            PlaneView::U1U3 => (0, 2),
            PlaneView::U1U2 => (0, 1),
        }
    }

    /// The principal axis the view looks along.
    pub fn view_axis(self) -> usize {
        match self {
            PlaneView::U2U3 => 0,
            PlaneView::U1U3 => 1,
            PlaneView::U1U2 => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "23" => Some(PlaneView::U2U3),
            "13" => Some(PlaneView::U1U3),
            "12" => Some(PlaneView::U1U2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    pub view: PlaneView,
}

impl Projection2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Mean-centred coordinates of each point along the two axes of `view`.
pub fn project(cloud: &PointCloud, basis: &PcaBasis, view: PlaneView) -> Projection2D {
    let (a, b) = view.axis_pair();
    let (ua, ub) = (basis.axes[a], basis.axes[b]);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let d = p - basis.mean;
            [ua.dot(&d), ub.dot(&d)]
        })
        .collect();
    Projection2D { points, view }
}

/// Replaces the view axis of `basis` with `axis` (normalised), completing an
/// orthonormal frame from the remaining principal directions.
pub fn override_view_axis(basis: &PcaBasis, view: PlaneView, axis: Vector3<f64>) -> Result<PcaBasis> {
    let n = axis.norm();
    if !(n > 1e-12) {
        return Err(Error::param("axis_override", "must be non-zero"));
    }
    let axis = axis / n;
    let (a, b) = view.axis_pair();
    // Gram-Schmidt the old in-plane axes against the new view axis.
    let mut first = basis.axes[a] - axis * axis.dot(&basis.axes[a]);
    if first.norm() < 1e-6 {
        first = basis.axes[b] - axis * axis.dot(&basis.axes[b]);
    }
    let first = first.normalize();
    let second = axis.cross(&first).normalize();
    let mut axes = basis.axes;
    axes[view.view_axis()] = axis;
    axes[a] = first;
    axes[b] = second;
    Ok(PcaBasis {
        mean: basis.mean,
        axes,
        eigenvalues: basis.eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_give_rank_one() {
        let pts = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let b = pca_basis(&PointCloud::camera(pts).unwrap()).unwrap();
        assert!((b.axes[0] - Vector3::x()).norm() < 1e-12);
        assert!(b.eigenvalues[1].abs() < 1e-12 && b.eigenvalues[2].abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0); 5];
        assert!(matches!(
            pca_basis(&PointCloud::camera(pts).unwrap()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn projection_basics() {
        let pts = vec![
            Point3::new(-3.0, 0.0, 0.0),
            Point3::new(3.0, 0.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 0.2),
            Point3::new(0.0, 0.0, -0.2),
        ];
        let c = PointCloud::camera(pts).unwrap();
        let b = pca_basis(&c).unwrap();
        let mean_only = PointCloud::camera(vec![b.mean]).unwrap();
        assert_eq!(project(&mean_only, &b, PlaneView::U1U2).points[0], [0.0, 0.0]);
        let along_u2 = PointCloud::camera(vec![b.mean + b.axes[1]]).unwrap();
        let p = project(&along_u2, &b, PlaneView::U2U3).points[0];
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    #[test]
    fn symmetric_cloud_reports_degeneracy() {
        let pts = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, 0.1),
        ];
        let b = pca_basis(&PointCloud::camera(pts).unwrap()).unwrap();
        assert!(b.near_degenerate());
    }

    #[test]
    fn override_keeps_frame_orthonormal() {
        let pts = (0..50)
            .map(|i| {
                let t = i as f64 * 0.3;
                Point3::new(5.0 * t.cos(), 2.0 * t.sin(), 0.1 * t)
            })
            .collect();
        let b = pca_basis(&PointCloud::camera(pts).unwrap()).unwrap();
        let o = override_view_axis(&b, PlaneView::U1U2, Vector3::new(0.1, 0.2, 1.0)).unwrap();
        let m = o.rows();
        assert!((m * m.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        assert!((o.axes[2] - Vector3::new(0.1, 0.2, 1.0).normalize()).norm() < 1e-12);
    }
}
