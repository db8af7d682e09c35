//! Seed-anchored DBSCAN over a 2D projection.
//!
//! Neighbourhoods are closed balls (`dist <= eps`) and include the point
//! itself. Clusters are discovered in ascending index order and expanded
//! breadth-first, so a border point reachable from several clusters always
//! joins the earliest-created one.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::pca::Projection2D;
use crate::spatial::KdTree;

pub const NOISE: i32 = -1;
const UNVISITED: i32 = -2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::param("dbscan.eps", "must be positive"));
        }
        if self.min_pts < 1 {
            return Err(Error::param("dbscan.min_pts", "must be >= 1"));
        }
        Ok(())
    }
}

/// How the thread cluster is isolated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMode {
    /// Label every point, then keep the seed's cluster.
    #[default]
    Full,
    /// Grow only the cluster that contains the seed.
    SeedExpansion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    /// Per-point cluster id, [`NOISE`] for noise.
    pub labels: Vec<i32>,
    pub n_clusters: usize,
    /// Label of the seed point, when a seed has been attached.
    pub seed_cluster_id: Option<i32>,
}

impl ClusterLabeling {
    pub fn members(&self, label: i32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Records the cluster of `seed`; `None` when the seed is noise.
    pub fn attach_seed(&mut self, seed: usize) {
        let l = self.labels[seed];
        self.seed_cluster_id = (l != NOISE).then_some(l);
    }
}

/// Index of the projected point farthest from the origin; ties go to the
/// lowest index.
pub fn pick_seed(points: &Projection2D) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.points.iter().enumerate() {
        let n = p[0] * p[0] + p[1] * p[1];
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((i, n));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyCloud)
}

/// Twice the median distance to the 4th nearest neighbour (self excluded).
pub fn default_eps(points: &Projection2D) -> Result<f64> {
    const K: usize = 4;
    if points.len() <= K {
        return Err(Error::TooFewPoints {
            op: "default_eps",
            required: K + 1,
            actual: points.len(),
        });
    }
    let tree = KdTree::new(points.points.clone());
    let mut kd: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            tree.knn(tree.point(i), K, Some(i))
                .last()
                .map_or(0.0, |n| n.dist_sq.sqrt())
        })
        .collect();
    kd.sort_by(f64::total_cmp);
    let median = kd[kd.len() / 2];
    if median > 0.0 {
        Ok(2.0 * median)
    } else {
        Err(Error::Degenerate("projected points are coincident; set eps explicitly".into()))
    }
}

fn neighborhoods(points: &Projection2D, eps: f64) -> Vec<Vec<usize>> {
    let tree = KdTree::new(points.points.clone());
    points
        .points
        .par_iter()
        .map(|p| tree.within(p, eps))
        .collect()
}

pub fn dbscan(points: &Projection2D, params: &DbscanParams) -> Result<ClusterLabeling> {
    params.validate()?;
    let n = points.len();
    let nbrs = neighborhoods(points, params.eps);
    let mut labels = vec![UNVISITED; n];
    let mut next = 0i32;
    let mut queue = VecDeque::new();
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        if nbrs[i].len() < params.min_pts {
            labels[i] = NOISE;
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = c;
        queue.extend(nbrs[i].iter().copied());
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = c;
                continue;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = c;
            if nbrs[q].len() >= params.min_pts {
                queue.extend(nbrs[q].iter().copied());
            }
        }
    }
    Ok(ClusterLabeling {
        labels,
        n_clusters: next as usize,
        seed_cluster_id: None,
    })
}

/// Grows the single cluster containing `seed`. Returns a labeling with that
/// cluster as label 0 and every other point as noise.
pub fn expand_from_seed(points: &Projection2D, params: &DbscanParams, seed: usize) -> Result<ClusterLabeling> {
    params.validate()?;
    let n = points.len();
    if seed >= n {
        return Err(Error::param("seed", format!("index {seed} out of range for {n} points")));
    }
    let tree = KdTree::new(points.points.clone());
    let region = |i: usize| tree.within(&points.points[i], params.eps);
    let mut labels = vec![NOISE; n];
    let seed_nbrs = region(seed);
    // A non-core seed belongs to the cluster of its lowest-index core neighbour.
    let start = if seed_nbrs.len() >= params.min_pts {
        Some(seed)
    } else {
        seed_nbrs
            .iter()
            .copied()
            .find(|&j| region(j).len() >= params.min_pts)
    };
    let Some(start) = start else {
        return Ok(ClusterLabeling {
            labels,
            n_clusters: 0,
            seed_cluster_id: None,
        });
    };
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([start]);
    visited[start] = true;
    while let Some(q) = queue.pop_front() {
        labels[q] = 0;
        let nq = region(q);
        if nq.len() >= params.min_pts {
            for j in nq {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let mut out = ClusterLabeling {
        labels,
        n_clusters: 1,
        seed_cluster_id: None,
    };
    out.attach_seed(seed);
    Ok(out)
}

/// 3D points whose projections share the seed's cluster.
pub fn extract_thread_cluster(cloud: &PointCloud, labeling: &ClusterLabeling, seed: usize) -> Result<PointCloud> {
    if labeling.labels.len() != cloud.len() {
        return Err(Error::param(
            "labeling",
            format!("{} labels for {} points", labeling.labels.len(), cloud.len()),
        ));
    }
    let label = *labeling
        .labels
        .get(seed)
        .ok_or_else(|| Error::param("seed", "out of range"))?;
    if label == NOISE {
        return Err(Error::SeedIsNoise { seed });
    }
    Ok(cloud.select(&labeling.members(label)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;
    use crate::pca::PlaneView;

    fn proj(pts: Vec<[f64; 2]>) -> Projection2D {
        Projection2D {
            points: pts,
            view: PlaneView::U1U2,
        }
    }

    #[test]
    fn seed_is_farthest_point() {
        let p = proj(vec![[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]]);
        assert_eq!(pick_seed(&p).unwrap(), 1);
    }

    #[test]
    fn seed_tie_goes_to_lowest_index() {
        let p = proj(vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        assert_eq!(pick_seed(&p).unwrap(), 0);
        assert!(matches!(pick_seed(&proj(vec![])), Err(Error::EmptyCloud)));
    }

    #[test]
    fn two_separated_blobs() {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                pts.push([i as f64 * 0.1, j as f64 * 0.1]);
                pts.push([i as f64 * 0.1 + 1.5, j as f64 * 0.1]);
            }
        }
        let l = dbscan(&proj(pts), &DbscanParams { eps: 0.15, min_pts: 4 }).unwrap();
        assert_eq!(l.n_clusters, 2);
        assert!(l.labels.iter().all(|&x| x != NOISE));
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut pts: Vec<[f64; 2]> = (0..10).map(|i| [i as f64 * 0.1, 0.0]).collect();
        pts.push([50.0, 50.0]);
        let l = dbscan(&proj(pts), &DbscanParams { eps: 0.25, min_pts: 4 }).unwrap();
        assert_eq!(l.labels[10], NOISE);
        assert_eq!(l.n_clusters, 1);
    }

    #[test]
    fn extract_returns_seed_cluster() {
        let mut pts3 = Vec::new();
        let mut pts2 = Vec::new();
        for i in 0..50 {
            pts2.push([10.0 + i as f64 * 0.01, 0.0]);
            pts3.push(Point3::new(i as f64, 0.0, 0.0));
        }
        for i in 0..30 {
            pts2.push([0.0, i as f64 * 0.01]);
            pts3.push(Point3::new(0.0, i as f64, 1.0));
        }
        let p = proj(pts2);
        let cloud = PointCloud::camera(pts3).unwrap();
        let params = DbscanParams { eps: 0.05, min_pts: 4 };
        let mut l = dbscan(&p, &params).unwrap();
        let seed = pick_seed(&p).unwrap();
        l.attach_seed(seed);
        let t = extract_thread_cluster(&cloud, &l, seed).unwrap();
        assert_eq!(t.len(), 50);

        let e = expand_from_seed(&p, &params, seed).unwrap();
        assert_eq!(e.members(0), l.members(l.labels[seed]));
    }

    #[test]
    fn noise_seed_is_error() {
        let p = proj(vec![[0.0, 0.0], [10.0, 0.0]]);
        let cloud = PointCloud::camera(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let l = dbscan(&p, &DbscanParams { eps: 0.5, min_pts: 4 }).unwrap();
        assert!(matches!(
            extract_thread_cluster(&cloud, &l, 1),
            Err(Error::SeedIsNoise { seed: 1 })
        ));
    }

    #[test]
    fn single_cluster_returns_all() {
        let pts: Vec<[f64; 2]> = (0..40).map(|i| [(i as f64 * 0.3).cos(), (i as f64 * 0.3).sin()]).collect();
        let cloud = PointCloud::camera(pts.iter().map(|p| Point3::new(p[0], p[1], 0.0)).collect()).unwrap();
        let p = proj(pts);
        let l = dbscan(&p, &DbscanParams { eps: 0.5, min_pts: 4 }).unwrap();
        let seed = pick_seed(&p).unwrap();
        assert_eq!(extract_thread_cluster(&cloud, &l, seed).unwrap(), cloud);
    }

    #[test]
    fn eps_heuristic_scales_with_spacing() {
        let pts: Vec<[f64; 2]> = (0..100).map(|i| [i as f64 * 0.5, 0.0]).collect();
        // 4th neighbour of an interior point on a 0.5-spaced line is at 1.0
        assert!((default_eps(&proj(pts)).unwrap() - 2.0).abs() < 1e-12);
    }
}
