//! Brute-force reference implementations shared by the property and
//! acceptance suites. Each one is written from the definitions, without
//! touching the library's spatial index or optimised formulas.
#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use shaftdock::cluster::NOISE;
use shaftdock::pose::FaceMatchInput;
use shaftdock::{Point3, RigidTransform};

/// DBSCAN by exhaustive distance checks. Closed eps-balls including the
/// point itself; clusters are numbered by their lowest core index and a
/// border point joins the lowest-numbered cluster among its core neighbours.
pub fn brute_dbscan(pts: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = pts.len();
    let near = |i: usize, j: usize| {
        let dx = pts[i][0] - pts[j][0];
        let dy = pts[i][1] - pts[j][1];
        (dx * dx + dy * dy).sqrt() <= eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();

    // connected components of core points, by repeated flooding
    let mut comp = vec![usize::MAX; n];
    let mut order = Vec::new();
    for i in 0..n {
        if !core[i] || comp[i] != usize::MAX {
            continue;
        }
        let id = order.len();
        order.push(i);
        let mut stack = vec![i];
        comp[i] = id;
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && comp[q] == usize::MAX && near(p, q) {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                comp[i] as i32
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| comp[j] as i32)
                    .min()
                    .unwrap_or(NOISE)
            }
        })
        .collect()
}

/// True when two labelings agree up to a bijective renaming of clusters,
/// with noise mapped to noise.
pub fn same_partition(a: &[i32], b: &[i32]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == NOISE) != (y == NOISE) {
            return false;
        }
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Statistical outlier removal by sorting all pairwise distances.
/// Returns `(kept indices, mu, sigma)`.
pub fn brute_sor(pts: &[Point3], k: usize, n_sigma: f64) -> (Vec<usize>, f64, f64) {
    let n = pts.len();
    let knn: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| (pts[i] - pts[j]).norm()).collect();
            d.sort_by(f64::total_cmp);
            d.truncate(k);
            d
        })
        .collect();
    let all: Vec<f64> = knn.iter().flatten().copied().collect();
    let mu = all.iter().sum::<f64>() / all.len() as f64;
    let sigma = (all.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    let kept = (0..n)
        .filter(|&i| {
            let m = knn[i].iter().sum::<f64>() / k as f64;
            m >= mu - n_sigma * sigma && m <= mu + n_sigma * sigma
        })
        .collect();
    (kept, mu, sigma)
}

/// Point-to-line distance by removing the axial component of `p - q`.
pub fn projection_distance(p: &Point3, q: &Point3, dir: &Vector3<f64>) -> f64 {
    let u = dir / dir.norm();
    let v = p - q;
    (v - u * v.dot(&u)).norm()
}

/// Rodrigues rotation matrix written out term by term.
pub fn rodrigues(axis: &Vector3<f64>, theta: f64) -> Matrix3<f64> {
    let k = axis / axis.norm();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

/// Symmetric face index from explicitly transformed points.
pub fn naive_eps_pla(xf: &RigidTransform, input: &FaceMatchInput) -> f64 {
    let moved_a: Vec<Point3> = input.cloud_a.iter().map(|p| xf.apply(p)).collect();
    let moved_ac = xf.apply(&input.p_ac);
    let moved_na = xf.apply_vector(&input.n_a);
    let mut h: Vec<f64> = moved_a.iter().map(|p| input.n_b.dot(&(p - input.p_bc)).abs()).collect();
    h.extend(input.cloud_b.iter().map(|p| moved_na.dot(&(p - moved_ac)).abs()));
    let max = h.iter().copied().fold(0.0, f64::max);
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    (max - mean) / input.h0
}
