//! Statistical outlier removal over k-neighbourhoods.
//!
//! `mu` and `sigma` are the mean and standard deviation of all `m·k`
//! neighbour distances of the input cloud. A point is dropped when its
//! neighbour-distance statistic falls outside `mu ± n_sigma·sigma`. The
//! statistic is the point's mean neighbour distance by default; the literal
//! per-point sum is available through [`SorStatistic::Sum`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SorStatistic {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SorParams {
    pub k: usize,
    pub n_sigma: f64,
    pub statistic: SorStatistic,
}

impl Default for SorParams {
    fn default() -> Self {
        Self {
            k: 20,
            n_sigma: 3.0,
            statistic: SorStatistic::Mean,
        }
    }
}

impl SorParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::param("sor.k", "must be >= 1"));
        }
        if !(self.n_sigma > 0.0 && self.n_sigma.is_finite()) {
            return Err(Error::param("sor.n_sigma", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SorStats {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    pub removed_count: usize,
}

/// Full filter outcome, including the per-point statistic for auditing.
#[derive(Debug, Clone)]
pub struct SorOutcome {
    pub kept: Vec<usize>,
    pub point_statistic: Vec<f64>,
    pub stats: SorStats,
}

/// Mean or sum of each point's `k` nearest-neighbour distances (self excluded),
/// plus every individual distance in point order.
pub(crate) fn neighbor_distances(cloud: &PointCloud, k: usize) -> Vec<Vec<f64>> {
    let pts: Vec<[f64; 3]> = cloud.points().iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = KdTree::new(pts);
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            tree.knn(tree.point(i), k, Some(i))
                .into_iter()
                .map(|n| n.dist_sq.sqrt())
                .collect()
        })
        .collect()
}

pub fn sor_outcome(cloud: &PointCloud, params: &SorParams) -> Result<SorOutcome> {
    params.validate()?;
    if cloud.len() <= params.k {
        return Err(Error::TooFewPoints {
            op: "sor_filter",
            required: params.k + 1,
            actual: cloud.len(),
        });
    }
    let dists = neighbor_distances(cloud, params.k);
    let total = (cloud.len() * params.k) as f64;
    let mu = dists.iter().flatten().sum::<f64>() / total;
    let var = dists.iter().flatten().map(|d| (d - mu) * (d - mu)).sum::<f64>() / total;
    let sigma = var.sqrt();
    let lower = mu - params.n_sigma * sigma;
    let upper = mu + params.n_sigma * sigma;

    let point_statistic: Vec<f64> = dists
        .iter()
        .map(|d| {
            let s: f64 = d.iter().sum();
            match params.statistic {
                SorStatistic::Mean => s / params.k as f64,
                SorStatistic::Sum => s,
            }
        })
        .collect();
    let kept: Vec<usize> = point_statistic
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lower && s <= upper)
        .map(|(i, _)| i)
        .collect();
    let removed_count = cloud.len() - kept.len();
    Ok(SorOutcome {
        kept,
        point_statistic,
        stats: SorStats {
            mu,
            sigma,
            lower,
            upper,
            removed_count,
        },
    })
}

/// Single-pass statistical outlier removal. Statistics come from the input
/// cloud only; surviving points are returned unmodified and in input order.
pub fn sor_filter(cloud: &PointCloud, params: &SorParams) -> Result<(PointCloud, SorStats)> {
    let outcome = sor_outcome(cloud, params)?;
    Ok((cloud.select(&outcome.kept), outcome.stats))
}
