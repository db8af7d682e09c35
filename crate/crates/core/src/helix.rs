//! Thread helix fitting by Hough voting over `(radius, pitch, phase)`.
//!
//! In a frame whose z axis is the bolt axis the thread crest is
//!
//! ```text
//! x = R cos t,  y = R sin t,  z = d (t - φ) / 2π
//! ```
//!
//! Each point fixes `R = √(x² + y²)` and `θ = atan2(y, x)`. For every phase
//! bin `φ` and every admissible turn count `k` the unwrapped angle
//! `t - φ = θ + 2πk - φ` gives one pitch candidate `d = 2πz / (t - φ)`,
//! and the point votes once for the `(R, d, φ)` cell. The winning cell is then
//! refined by linear least squares on the unwrapped angles.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::cloud::{any_orthogonal, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::fit::fit_cylinder_lsq;
use crate::pca::PcaBasis;

/// Right-handed frame with z along the helix axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelixFrame {
    pub origin: Point3,
    /// Rows are the frame's x, y, z axes in world coordinates.
    pub axes: Matrix3<f64>,
}

impl HelixFrame {
    /// Frame with z along `axis` and x chosen deterministically.
    pub fn from_axis(origin: Point3, axis: Vector3<f64>, x_hint: Option<Vector3<f64>>) -> Self {
        let ez = axis.normalize();
        let ex = x_hint
            .map(|h| h - ez * ez.dot(&h))
            .filter(|h| h.norm() > 1e-6)
            .map(|h| h.normalize())
            .unwrap_or_else(|| any_orthogonal(&ez));
        let ey = ez.cross(&ex);
        Self {
            origin,
            axes: Matrix3::from_rows(&[ex.transpose(), ey.transpose(), ez.transpose()]),
        }
    }

    /// Helix frame whose z axis is principal axis `axis_index` of `basis`.
    pub fn from_basis(basis: &PcaBasis, axis_index: usize) -> Self {
        let hint = basis.axes[(axis_index + 1) % 3];
        Self::from_axis(basis.mean, basis.axes[axis_index], Some(hint))
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.axes.row(2).transpose()
    }

    pub fn to_local(&self, p: &Point3) -> Vector3<f64> {
        self.axes * (p - self.origin)
    }

    pub fn to_world(&self, v: &Vector3<f64>) -> Point3 {
        self.origin + self.axes.transpose() * v
    }
}

/// Radius, pitch and phase of a helix, in its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelixParams {
    pub radius: f64,
    pub pitch: f64,
    pub phase: f64,
}

impl HelixParams {
    fn slope(&self) -> f64 {
        self.pitch / TAU
    }

    fn local_at(&self, t: f64) -> Vector3<f64> {
        Vector3::new(self.radius * t.cos(), self.radius * t.sin(), self.slope() * (t - self.phase))
    }

    /// Curve parameter whose angle matches `p` in the turn nearest `p.z`.
    fn assign_t(&self, p: &Vector3<f64>) -> f64 {
        let theta = p.y.atan2(p.x);
        let target = p.z / self.slope() + self.phase;
        theta + TAU * ((target - theta) / TAU).round()
    }

    /// Orthogonal distance from a local point to the curve (Newton on `t`).
    fn distance(&self, p: &Vector3<f64>) -> f64 {
        let a = self.slope();
        let mut t = self.assign_t(p);
        for _ in 0..12 {
            let h = self.local_at(t);
            let dh = Vector3::new(-self.radius * t.sin(), self.radius * t.cos(), a);
            let ddh = Vector3::new(-self.radius * t.cos(), -self.radius * t.sin(), 0.0);
            let r = p - h;
            let g = -r.dot(&dh);
            let hess = dh.norm_squared() - r.dot(&ddh);
            if hess <= 0.0 {
                break;
            }
            let step = g / hess;
            t -= step.clamp(-0.5, 0.5);
            if step.abs() < 1e-14 {
                break;
            }
        }
        (p - self.local_at(t)).norm()
    }
}

/// A fitted thread curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelixModel {
    pub params: HelixParams,
    pub frame: HelixFrame,
}

impl HelixModel {
    pub fn point_at(&self, t: f64) -> Point3 {
        self.frame.to_world(&self.params.local_at(t))
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        self.params.distance(&self.frame.to_local(p))
    }
}

/// Accumulator bounds and resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoughConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Bin width for radius, pitch and phase.
    pub resolution: f64,
    pub min_votes: u32,
    pub refine_iterations: usize,
    /// Re-estimate the axis by a cylinder fit before voting.
    pub refine_axis: bool,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            r_min: 1.0,
            r_max: 50.0,
            d_min: 0.25,
            d_max: 5.0,
            resolution: 0.01,
            min_votes: 10,
            refine_iterations: 5,
            refine_axis: true,
        }
    }
}

impl HoughConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.resolution) || self.resolution > PI {
            return Err(Error::param("hough.resolution", "must be in (0, π]"));
        }
        if !pos(self.r_min) || self.r_max <= self.r_min || !self.r_max.is_finite() {
            return Err(Error::param("hough.r_min/r_max", "need 0 < r_min < r_max"));
        }
        if !pos(self.d_min) || self.d_max <= self.d_min || !self.d_max.is_finite() {
            return Err(Error::param("hough.d_min/d_max", "need 0 < d_min < d_max"));
        }
        let cells = ((self.r_max - self.r_min) / self.resolution).ceil();
        let dcells = ((self.d_max - self.d_min) / self.resolution).ceil();
        if cells >= (1 << 21) as f64 || dcells >= (1 << 21) as f64 {
            return Err(Error::param("hough.resolution", "accumulator too large"));
        }
        Ok(())
    }

    pub fn phase_bins(&self) -> u32 {
        ((TAU / self.resolution).round() as u32).max(1)
    }

    /// Phase bin width; `2π / phase_bins`, so bins tile the circle exactly.
    pub fn phase_resolution(&self) -> f64 {
        TAU / self.phase_bins() as f64
    }
}

/// Cell index `(radius, pitch, phase)`.
pub type Cell = [u32; 3];

fn pack(c: Cell) -> u64 {
    ((c[0] as u64) << 42) | ((c[1] as u64) << 21) | c[2] as u64
}

fn unpack(k: u64) -> Cell {
    const M: u64 = (1 << 21) - 1;
    [(k >> 42) as u32, ((k >> 21) & M) as u32, (k & M) as u32]
}

/// Converts one point into Hough parameters for a given turn count, with no
/// phase: `R = √(x²+y²)`, `θ_total = atan2(y, x) + 2π·turn_hint`,
/// `d = 2πz / θ_total`. Returns `None` for on-axis points or `θ_total = 0`.
pub fn point_to_params(p: &Vector3<f64>, turn_hint: i64) -> Option<(f64, f64, f64)> {
    let r = p.x.hypot(p.y);
    if r <= 1e-9 {
        return None;
    }
    let theta = p.y.atan2(p.x) + TAU * turn_hint as f64;
    if theta == 0.0 {
        return None;
    }
    Some((r, TAU * p.z / theta, theta))
}

/// Sparse vote counts over the `(R, d, φ)` grid.
#[derive(Debug, Clone)]
pub struct HoughAccumulator {
    pub config: HoughConfig,
    votes: FxHashMap<u64, u32>,
    pub total_votes: u64,
    /// Number of `(turn, phase)` hypotheses evaluated, summed over points.
    pub hypotheses: u64,
}

impl HoughAccumulator {
    pub fn new(config: HoughConfig) -> Self {
        Self {
            config,
            votes: FxHashMap::default(),
            total_votes: 0,
            hypotheses: 0,
        }
    }

    fn bin(v: f64, min: f64, res: f64, max: f64) -> Option<u32> {
        let i = ((v - min) / res).round();
        let n = ((max - min) / res).round();
        (i >= 0.0 && i <= n).then_some(i as u32)
    }

    pub fn cell_center(&self, cell: Cell) -> HelixParams {
        let c = &self.config;
        HelixParams {
            radius: c.r_min + cell[0] as f64 * c.resolution,
            pitch: c.d_min + cell[1] as f64 * c.resolution,
            phase: cell[2] as f64 * c.phase_resolution(),
        }
    }

    /// Every cell a local-frame point votes for, one per (turn, phase)
    /// hypothesis that lands inside the pitch bounds.
    pub fn cells_for_point(&self, p: &Vector3<f64>, out: &mut Vec<Cell>) -> u64 {
        out.clear();
        let c = &self.config;
        let r = p.x.hypot(p.y);
        if r <= 1e-9 || p.z == 0.0 {
            return 0;
        }
        let Some(ir) = Self::bin(r, c.r_min, c.resolution, c.r_max) else {
            return 0;
        };
        let theta = p.y.atan2(p.x);
        let half = 0.5 * c.resolution;
        // admissible unwrapped angle u = t - φ, same sign as z
        let (d_lo, d_hi) = ((c.d_min - half).max(1e-12), c.d_max + half);
        let (u_lo, u_hi) = if p.z > 0.0 {
            (TAU * p.z / d_hi, TAU * p.z / d_lo)
        } else {
            (TAU * p.z / d_lo, TAU * p.z / d_hi)
        };
        let dphi = c.phase_resolution();
        let mut hyps = 0;
        for j in 0..c.phase_bins() {
            let phi = j as f64 * dphi;
            let k_lo = ((u_lo - theta + phi) / TAU).ceil() as i64;
            let k_hi = ((u_hi - theta + phi) / TAU).floor() as i64;
            for k in k_lo..=k_hi {
                hyps += 1;
                let u = theta + TAU * k as f64 - phi;
                if u == 0.0 {
                    continue;
                }
                if let Some(id) = Self::bin(TAU * p.z / u, c.d_min, c.resolution, c.d_max) {
                    out.push([ir, id, j]);
                }
            }
        }
        hyps
    }

    pub fn vote(&mut self, p: &Vector3<f64>) {
        let mut cells = Vec::new();
        self.hypotheses += self.cells_for_point(p, &mut cells);
        for cell in cells {
            *self.votes.entry(pack(cell)).or_insert(0) += 1;
            self.total_votes += 1;
        }
    }

    /// Adds another accumulator's votes. Associative and commutative.
    pub fn merge(&mut self, other: HoughAccumulator) {
        for (k, v) in other.votes {
            *self.votes.entry(k).or_insert(0) += v;
        }
        self.total_votes += other.total_votes;
        self.hypotheses += other.hypotheses;
    }

    pub fn votes_at(&self, cell: Cell) -> u32 {
        self.votes.get(&pack(cell)).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, u32)> + '_ {
        self.votes.iter().map(|(&k, &v)| (unpack(k), v))
    }

    pub fn occupied_cells(&self) -> usize {
        self.votes.len()
    }

    /// Cell with the most votes; ties go to the lexicographically smallest cell.
    pub fn argmax(&self) -> Option<(Cell, u32)> {
        self.votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&k, &v)| (unpack(k), v))
    }

    /// Votes every point of `local` in parallel, merging per-thread maps.
    pub fn from_points(config: HoughConfig, local: &[Vector3<f64>]) -> Self {
        local
            .par_chunks(256)
            .map(|chunk| {
                let mut acc = HoughAccumulator::new(config);
                for p in chunk {
                    acc.vote(p);
                }
                acc
            })
            .reduce(
                || HoughAccumulator::new(config),
                |mut a, b| {
                    a.merge(b);
                    a
                },
            )
    }
}

/// Result of [`hough_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct HelixFit {
    pub model: HelixModel,
    /// Centre of the winning accumulator cell, before refinement.
    pub coarse: HelixParams,
    pub cell: Cell,
    pub votes: u32,
    /// Points supporting the final model.
    pub support: usize,
    /// RMS orthogonal distance of the support points to the fitted curve.
    pub residual_rms: f64,
    /// RMS of the same support points against the coarse model.
    pub coarse_residual_rms: f64,
}

/// Re-estimates the axis of a thread cloud by fitting a cylinder, starting
/// from `frame`. Returns `frame` unchanged when the fit fails or swings the
/// axis by more than 30°.
pub fn refine_axis(points: &[Point3], frame: &HelixFrame) -> HelixFrame {
    let init_axis = frame.axis();
    let r0 = points
        .iter()
        .map(|p| {
            let l = frame.to_local(p);
            l.x.hypot(l.y)
        })
        .sum::<f64>()
        / points.len().max(1) as f64;
    let Some(cyl) = fit_cylinder_lsq(points, &frame.origin, &init_axis, r0, 100) else {
        return *frame;
    };
    let mut dir = cyl.direction;
    if dir.dot(&init_axis) < 0.0 {
        dir = -dir;
    }
    if dir.dot(&init_axis) < 30f64.to_radians().cos() {
        return *frame;
    }
    HelixFrame::from_axis(cyl.point, dir, Some(frame.axes.row(0).transpose()))
}

fn rms(params: &HelixParams, pts: &[Vector3<f64>]) -> f64 {
    if pts.is_empty() {
        return f64::INFINITY;
    }
    (pts.iter().map(|p| params.distance(p).powi(2)).sum::<f64>() / pts.len() as f64).sqrt()
}

/// Least-squares `(R, d, φ)` for fixed angle assignments of `pts`.
fn lsq_params(current: &HelixParams, pts: &[Vector3<f64>]) -> Option<HelixParams> {
    if pts.len() < 3 {
        return None;
    }
    let radius = pts.iter().map(|p| p.x.hypot(p.y)).sum::<f64>() / pts.len() as f64;
    // z = a t + b
    let mut ata = Matrix2::zeros();
    let mut atz = Vector2::zeros();
    for p in pts {
        let t = current.assign_t(p);
        let row = Vector2::new(t, 1.0);
        ata += row * row.transpose();
        atz += row * p.z;
    }
    let sol = ata.lu().solve(&atz)?;
    let (a, b) = (sol[0], sol[1]);
    if !(a > 0.0) {
        return None;
    }
    Some(HelixParams {
        radius,
        pitch: TAU * a,
        phase: (-b / a).rem_euclid(TAU),
    })
}

/// Number of pitch bins checked after voting.
const CANDIDATES: usize = 8;

struct Candidate {
    coarse: HelixParams,
    params: HelixParams,
    cell: Cell,
    votes: u32,
    support: usize,
    residual_rms: f64,
    coarse_residual_rms: f64,
}

/// Strongest cell of each pitch bin, best first, at most `k` of them.
/// Ties go to the lexicographically smallest cell.
fn pitch_candidates(acc: &HoughAccumulator, k: usize) -> Vec<(Cell, u32)> {
    let mut per_pitch: FxHashMap<u32, (Cell, u32)> = FxHashMap::default();
    for (cell, v) in acc.iter() {
        let e = per_pitch.entry(cell[1]).or_insert((cell, v));
        if v > e.1 || (v == e.1 && cell < e.0) {
            *e = (cell, v);
        }
    }
    let mut out: Vec<(Cell, u32)> = per_pitch.into_values().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

/// Least-squares refinement seeded by the points that voted for `cell`.
fn refine_cell(acc: &HoughAccumulator, local: &[Vector3<f64>], cell: Cell, votes: u32, config: &HoughConfig) -> Candidate {
    let coarse = acc.cell_center(cell);
    let mut scratch = Vec::new();
    let mut support: Vec<Vector3<f64>> = local
        .iter()
        .filter(|p| {
            acc.cells_for_point(p, &mut scratch);
            scratch.contains(&cell)
        })
        .copied()
        .collect();

    let mut refined = coarse;
    let floor = 3.0 * config.resolution;
    for _ in 0..config.refine_iterations.max(1) {
        let Some(next) = lsq_params(&refined, &support) else {
            break;
        };
        // re-assign: everything within a band of the refined curve
        let band = (4.0 * rms(&next, &support)).max(floor);
        let new_support: Vec<Vector3<f64>> = local
            .iter()
            .filter(|p| next.distance(p) < band)
            .copied()
            .collect();
        refined = next;
        if new_support.len() < 3 || new_support == support {
            break;
        }
        support = new_support;
    }

    let residual_rms = rms(&refined, &support);
    let coarse_residual_rms = rms(&coarse, &support);
    let (params, residual_rms) = if residual_rms <= coarse_residual_rms {
        (refined, residual_rms)
    } else {
        (coarse, coarse_residual_rms)
    };
    Candidate {
        coarse,
        params,
        cell,
        votes,
        support: support.len(),
        residual_rms,
        coarse_residual_rms,
    }
}

/// Fits the thread helix. `frame.z` must approximate the bolt axis.
pub fn hough_fit(thread: &PointCloud, frame: &HelixFrame, config: &HoughConfig) -> Result<HelixFit> {
    config.validate()?;
    const MIN_POINTS: usize = 50;
    if thread.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            op: "hough_fit",
            required: MIN_POINTS,
            actual: thread.len(),
        });
    }
    let frame = if config.refine_axis {
        refine_axis(thread.points(), frame)
    } else {
        *frame
    };
    let local: Vec<Vector3<f64>> = thread.points().iter().map(|p| frame.to_local(p)).collect();
    let acc = HoughAccumulator::from_points(*config, &local);
    let (_, top_votes) = acc.argmax().unwrap_or(([0, 0, 0], 0));
    if top_votes < config.min_votes {
        return Err(Error::HoughNoConsensus {
            votes: top_votes,
            required: config.min_votes,
        });
    }

    // Dense short-pitch aliases can outvote the true cell once noise spreads
    // its votes, so the strongest cell of each pitch bin is refined and the
    // one whose curve holds most points within a fixed band wins.
    let band = 3.0 * config.resolution;
    let mut best: Option<(usize, Candidate)> = None;
    for (cell, votes) in pitch_candidates(&acc, CANDIDATES) {
        if votes < config.min_votes {
            break;
        }
        let cand = refine_cell(&acc, &local, cell, votes, config);
        let score = local.iter().filter(|p| cand.params.distance(p) < band).count();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    let (_, c) = best.expect("the top cell is always a candidate");
    let (coarse, params, cell, votes, support, residual_rms, coarse_residual_rms) =
        (c.coarse, c.params, c.cell, c.votes, c.support, c.residual_rms, c.coarse_residual_rms);
    Ok(HelixFit {
        model: HelixModel { params, frame },
        coarse,
        cell,
        votes,
        support,
        residual_rms,
        coarse_residual_rms,
    })
}
