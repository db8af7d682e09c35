//! Least-squares primitives shared by the segmentation and thread stages.

use nalgebra::{DMatrix, DVector, Matrix5, Vector3, Vector5};

use crate::cloud::{any_orthogonal, centroid, Point3};
use crate::pca::{scatter, sorted_eigen};

/// Total-least-squares plane: centroid and unit normal (smallest principal
/// axis, sign-canonical). `None` for fewer than 3 points.
pub fn fit_plane_lsq(points: &[Point3]) -> Option<(Point3, Vector3<f64>)> {
    if points.len() < 3 {
        return None;
    }
    let c = centroid(points)?;
    let (axes, values) = sorted_eigen(scatter(points, &c));
    if values[1] <= 0.0 {
        return None;
    }
    Some((c, axes[2]))
}

/// Circle through three 2D points, `None` when they are (nearly) collinear.
pub fn circle_from_three(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<([f64; 2], f64)> {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let scale = (bx * bx + by * by).max(cx * cx + cy * cy);
    if d.abs() <= 1e-12 * scale.max(1e-300) {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let r = (ux * ux + uy * uy).sqrt();
    Some(([a[0] + ux, a[1] + uy], r))
}

/// Perpendicular distance from `p` to the line through `origin` along unit `dir`.
pub fn point_line_distance(p: &Point3, origin: &Point3, dir: &Vector3<f64>) -> f64 {
    (p - origin).cross(dir).norm()
}

/// A fitted infinite cylinder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    /// Axis point closest to the centroid of the fitted points.
    pub point: Point3,
    pub direction: Vector3<f64>,
    pub radius: f64,
    pub rms: f64,
}

impl Cylinder {
    pub fn residual(&self, p: &Point3) -> f64 {
        point_line_distance(p, &self.point, &self.direction) - self.radius
    }
}

fn cylinder_residuals(
    points: &[Point3],
    base: &Point3,
    e: &[Vector3<f64>; 3],
    x: &Vector5<f64>,
    out: &mut DVector<f64>,
) {
    let dir = (e[2] + e[0] * x[2] + e[1] * x[3]).normalize();
    let origin = base + e[0] * x[0] + e[1] * x[1];
    for (i, p) in points.iter().enumerate() {
        out[i] = point_line_distance(p, &origin, &dir) - x[4];
    }
}

/// Levenberg-Marquardt cylinder fit from an initial axis guess.
///
/// The direction is parametrised as a tilt of the initial direction, which
/// keeps the problem well posed for the near-axial corrections this is used
/// for. Returns `None` if fewer than 6 points or the fit diverges.
pub fn fit_cylinder_lsq(
    points: &[Point3],
    init_point: &Point3,
    init_dir: &Vector3<f64>,
    init_radius: f64,
    max_iter: usize,
) -> Option<Cylinder> {
    if points.len() < 6 {
        return None;
    }
    let e2 = init_dir.normalize();
    let e0 = any_orthogonal(&e2);
    let e1 = e2.cross(&e0);
    let e = [e0, e1, e2];
    // Anchor the parametrisation near the data so the offsets stay small.
    let c = centroid(points)?;
    let base = init_point + e2 * e2.dot(&(c - init_point));

    let n = points.len();
    let mut x = Vector5::new(0.0, 0.0, 0.0, 0.0, init_radius);
    let mut r = DVector::zeros(n);
    let mut r_trial = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, 5);
    cylinder_residuals(points, &base, &e, &x, &mut r);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;

    for _ in 0..max_iter {
        for k in 0..5 {
            let h = 1e-7 * x[k].abs().max(1.0);
            let mut xp = x;
            xp[k] += h;
            cylinder_residuals(points, &base, &e, &xp, &mut r_trial);
            for i in 0..n {
                jac[(i, k)] = (r_trial[i] - r[i]) / h;
            }
        }
        let jtj: Matrix5<f64> = (jac.transpose() * &jac).fixed_view::<5, 5>(0, 0).into_owned();
        let jtr: Vector5<f64> = (jac.transpose() * &r).fixed_rows::<5>(0).into_owned();
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let xt = x + step;
            cylinder_residuals(points, &base, &e, &xt, &mut r_trial);
            let ct = r_trial.norm_squared();
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(1e-300);
                x = xt;
                std::mem::swap(&mut r, &mut r_trial);
                cost = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-14 || step.norm() < 1e-13 {
                    return finish(points, &base, &e, &x, cost);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    finish(points, &base, &e, &x, cost)
}

fn finish(points: &[Point3], base: &Point3, e: &[Vector3<f64>; 3], x: &Vector5<f64>, cost: f64) -> Option<Cylinder> {
    let dir = (e[2] + e[0] * x[2] + e[1] * x[3]).normalize();
    let origin = base + e[0] * x[0] + e[1] * x[1];
    if !(x[4].is_finite() && x[4] > 0.0 && cost.is_finite()) {
        return None;
    }
    let c = centroid(points)?;
    let point = origin + dir * dir.dot(&(c - origin));
    Some(Cylinder {
        point,
        direction: dir,
        radius: x[4],
        rms: (cost / points.len() as f64).sqrt(),
    })
}

/// Convex hull (counter-clockwise, no collinear points) by monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Inclusive point-in-polygon test for a counter-clockwise convex polygon.
pub fn in_convex_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    if poly.len() < 3 {
        return false;
    }
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_through_three() {
        let (c, r) = circle_from_three([1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]).unwrap();
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12 && (r - 1.0).abs() < 1e-12);
        assert!(circle_from_three([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]).is_none());
    }

    #[test]
    fn hull_of_square_with_interior() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.5, 0.0]];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!(in_convex_polygon(&h, [0.5, 0.5]));
        assert!(in_convex_polygon(&h, [1.0, 0.5]));
        assert!(!in_convex_polygon(&h, [1.1, 0.5]));
    }

    #[test]
    fn cylinder_fit_recovers_tilted_axis() {
        let dir = Vector3::new(0.05, -0.03, 1.0).normalize();
        let e0 = any_orthogonal(&dir);
        let e1 = dir.cross(&e0);
        let center = Point3::new(2.0, -1.0, 0.5);
        let mut pts = Vec::new();
        for i in 0..400 {
            let t = i as f64 * 0.37;
            let h = (i % 20) as f64 * 0.2;
            pts.push(center + (e0 * t.cos() + e1 * t.sin()) * 4.0 + dir * h);
        }
        let cyl = fit_cylinder_lsq(&pts, &Point3::new(1.5, -0.5, 0.0), &Vector3::z(), 3.5, 100).unwrap();
        assert!((cyl.radius - 4.0).abs() < 1e-9, "{}", cyl.radius);
        assert!(cyl.direction.cross(&dir).norm() < 1e-9);
        assert!(point_line_distance(&center, &cyl.point, &cyl.direction) < 1e-8);
    }

    #[test]
    fn plane_fit_normal() {
        let pts: Vec<Point3> = (0..30)
            .map(|i| Point3::new((i % 6) as f64, (i / 6) as f64, 2.0 + 0.1 * (i % 6) as f64))
            .collect();
        let (_, n) = fit_plane_lsq(&pts).unwrap();
        let truth = Vector3::new(-0.1, 0.0, 1.0).normalize();
        assert!(n.cross(&truth).norm() < 1e-12);
    }
}
