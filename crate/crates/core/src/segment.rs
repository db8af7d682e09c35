//! RANSAC plane segmentation, hole pre-search and hole axis fitting.
//!
//! Every RANSAC hypothesis `i` draws its sample from its own ChaCha8 stream
//! (`seed`, stream `i`), so hypotheses can be scored in parallel and the
//! winner (most inliers, ties to the lower `i`) does not depend on thread
//! scheduling.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{any_orthogonal, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::fit::{circle_from_three, convex_hull, fit_cylinder_lsq, fit_plane_lsq, in_convex_polygon};
use crate::spatial::KdTree;

/// Half-angle of the cone around the plane normal that hole axes must lie in.
pub const HOLE_CONE_DEG: f64 = 15.0;
/// Minimum consensus for a hole or rim axis.
pub const MIN_AXIS_INLIERS: usize = 30;
/// Minimum number of plane inliers for the hole pre-search.
pub const MIN_PRESEARCH_POINTS: usize = 500;

/// Plane `n·(p - p0) = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub point: Point3,
}

impl PlaneModel {
    pub fn new(normal: Vector3<f64>, point: Point3) -> Result<Self> {
        let n = normal.norm();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(Error::Degenerate("plane normal is zero".into()));
        }
        Ok(Self {
            normal: normal / n,
            point,
        })
    }

    /// `(A, B, C, D)` with `Ax + By + Cz + D = 0`.
    pub fn coefficients(&self) -> [f64; 4] {
        let n = self.normal;
        [n.x, n.y, n.z, -n.dot(&self.point.coords)]
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Same plane with the normal reversed.
    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            point: self.point,
        }
    }

    /// In-plane orthonormal axes `(e1, e2)` with `e1 × e2 = n`.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let e1 = any_orthogonal(&self.normal);
        (e1, self.normal.cross(&e1))
    }

    pub fn to_2d(&self, p: &Point3) -> [f64; 2] {
        let (e1, e2) = self.basis();
        let v = p - self.point;
        [v.dot(&e1), v.dot(&e2)]
    }

    pub fn from_2d(&self, q: [f64; 2]) -> Point3 {
        let (e1, e2) = self.basis();
        self.point + e1 * q[0] + e2 * q[1]
    }

    /// Intersection of the line `origin + s·dir` with the plane.
    pub fn intersect_line(&self, origin: &Point3, dir: &Vector3<f64>) -> Option<Point3> {
        let den = self.normal.dot(dir);
        if den.abs() < 1e-12 {
            return None;
        }
        let s = -self.signed_distance(origin) / den;
        Some(origin + dir * s)
    }
}

/// Iteration counts, inlier threshold (mm) and model count for RANSAC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RansacConfig {
    /// Iterations per extracted model; the last entry repeats.
    pub iterations: Vec<usize>,
    pub threshold: f64,
    pub models: usize,
}

impl RansacConfig {
    pub fn planes_default() -> Self {
        Self {
            iterations: vec![1000, 1500],
            threshold: 0.05,
            models: 2,
        }
    }

    pub fn holes_default() -> Self {
        Self {
            iterations: vec![1000],
            threshold: 0.05,
            models: 6,
        }
    }

    pub fn iterations_for(&self, model: usize) -> usize {
        self.iterations
            .get(model)
            .or(self.iterations.last())
            .copied()
            .unwrap_or(1)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.iterations.is_empty() || self.iterations.contains(&0) {
            return Err(Error::param(format!("{name}.iterations"), "every count must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::param(format!("{name}.threshold"), "must be positive"));
        }
        if self.models < 1 {
            return Err(Error::param(format!("{name}.models"), "must be >= 1"));
        }
        Ok(())
    }
}

/// A plane and the indices of its inliers.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub model: PlaneModel,
    pub inliers: Vec<usize>,
}

fn sample_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(iteration as u64);
    r
}

/// Three distinct indices below `n`.
fn draw3(r: &mut ChaCha8Rng, n: usize) -> [usize; 3] {
    let a = r.random_range(0..n);
    let mut b = r.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (lo, hi) = (a.min(b), a.max(b));
    let mut c = r.random_range(0..n - 2);
    if c >= lo {
        c += 1;
    }
    if c >= hi {
        c += 1;
    }
    [a, b, c]
}

const MAX_RESAMPLES: usize = 32;

/// Best of `iterations` hypotheses: `(iteration, score)` per hypothesis,
/// reduced to the highest score with ties to the lowest iteration.
fn best_hypothesis<H: Send>(iterations: usize, eval: impl Fn(usize) -> Option<(H, usize)> + Sync) -> Option<(H, usize)> {
    (0..iterations)
        .into_par_iter()
        .filter_map(|i| eval(i).map(|(h, c)| (i, h, c)))
        .reduce_with(|a, b| {
            if b.2 > a.2 || (b.2 == a.2 && b.0 < a.0) {
                b
            } else {
                a
            }
        })
        .map(|(_, h, c)| (h, c))
}

fn plane_inliers(points: &[Point3], plane: &PlaneModel, tau: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.distance(p) < tau)
        .map(|(i, _)| i)
        .collect()
}

fn ransac_plane_points(points: &[Point3], iterations: usize, tau: f64, seed: u64) -> Result<PlaneFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints {
            op: "ransac_plane",
            required: 3,
            actual: n,
        });
    }
    let best = best_hypothesis(iterations, |i| {
        let mut r = sample_rng(seed, i);
        for _ in 0..MAX_RESAMPLES {
            let [a, b, c] = draw3(&mut r, n);
            let (pa, pb, pc) = (points[a], points[b], points[c]);
            let cross = (pb - pa).cross(&(pc - pa));
            let scale = (pb - pa).norm_squared().max((pc - pa).norm_squared());
            if cross.norm() <= 1e-9 * scale || scale == 0.0 {
                continue;
            }
            let plane = PlaneModel::new(cross, pa).ok()?;
            let count = points.iter().filter(|p| plane.distance(p) < tau).count();
            return Some((plane, count));
        }
        None
    });
    let Some((plane, count)) = best else {
        return Err(Error::NoConsensus { found: 0, required: 3 });
    };
    if count < 3 {
        return Err(Error::NoConsensus { found: count, required: 3 });
    }
    let first = plane_inliers(points, &plane, tau);
    let sel: Vec<Point3> = first.iter().map(|&i| points[i]).collect();
    let refit = fit_plane_lsq(&sel)
        .and_then(|(c, n)| PlaneModel::new(n, c).ok())
        .unwrap_or(plane);
    let inliers = plane_inliers(points, &refit, tau);
    if inliers.len() < 3 {
        return Err(Error::NoConsensus {
            found: inliers.len(),
            required: 3,
        });
    }
    Ok(PlaneFit { model: refit, inliers })
}

/// Single best plane, using the first iteration count of `cfg`.
pub fn ransac_plane(cloud: &PointCloud, cfg: &RansacConfig, seed: u64) -> Result<PlaneFit> {
    cfg.validate("ransac")?;
    ransac_plane_points(cloud.points(), cfg.iterations_for(0), cfg.threshold, seed)
}

/// Result of [`segment_planes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Planes in extraction order; inlier sets are pairwise disjoint and
    /// index into the input cloud.
    pub planes: Vec<PlaneFit>,
    pub warnings: Vec<String>,
}

fn model_seed(seed: u64, model: usize) -> u64 {
    seed.wrapping_add((model as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Extracts up to `cfg.models` planes, removing each plane's inliers before
/// searching for the next.
pub fn segment_planes(cloud: &PointCloud, cfg: &RansacConfig, seed: u64) -> Result<Segmentation> {
    cfg.validate("ransac")?;
    let all = cloud.points();
    let mut remaining: Vec<usize> = (0..all.len()).collect();
    let mut planes = Vec::new();
    let mut warnings = Vec::new();
    for m in 0..cfg.models {
        let pts: Vec<Point3> = remaining.iter().map(|&i| all[i]).collect();
        match ransac_plane_points(&pts, cfg.iterations_for(m), cfg.threshold, model_seed(seed, m)) {
            Ok(fit) => {
                let inliers: Vec<usize> = fit.inliers.iter().map(|&j| remaining[j]).collect();
                let mut taken = vec![false; pts.len()];
                for &j in &fit.inliers {
                    taken[j] = true;
                }
                remaining = remaining
                    .iter()
                    .zip(&taken)
                    .filter(|(_, &t)| !t)
                    .map(|(&i, _)| i)
                    .collect();
                planes.push(PlaneFit {
                    model: fit.model,
                    inliers,
                });
            }
            Err(e) if !planes.is_empty() => {
                warnings.push(format!(
                    "plane {} of {} not found ({e}); returning {} planes",
                    m + 1,
                    cfg.models,
                    planes.len()
                ));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Segmentation { planes, warnings })
}

/// A hole located on a face by the occupancy pre-search.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleCandidate {
    /// Centre in the plane's 2D frame.
    pub center: [f64; 2],
    /// Empty area in mm².
    pub area: f64,
    /// Convex crop polygon (plane 2D frame, counter-clockwise).
    pub polygon: Vec<[f64; 2]>,
}

struct Grid {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
}

impl Grid {
    fn index(&self, p: [f64; 2]) -> (usize, usize) {
        let ix = ((p[0] - self.origin[0]) / self.cell).floor() as usize;
        let iy = ((p[1] - self.origin[1]) / self.cell).floor() as usize;
        (ix.min(self.nx - 1), iy.min(self.ny - 1))
    }
    fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell,
            self.origin[1] + (iy as f64 + 0.5) * self.cell,
        ]
    }
}

/// Finds point-free disks in a face.
///
/// The plane inliers are projected into the plane frame and rasterised at
/// twice their median nearest-neighbour spacing. Empty 4-connected components
/// of at least 5 cells that do not touch the grid border are candidates. If
/// more than `expected` are found (a central bore, say) the `expected`
/// candidates with the most uniform areas are kept. Candidates are returned in
/// order of azimuth about the inlier centroid.
pub fn presearch_holes(inliers: &PointCloud, plane: &PlaneModel, expected: usize) -> Result<Vec<HoleCandidate>> {
    if inliers.len() < MIN_PRESEARCH_POINTS {
        return Err(Error::TooFewPoints {
            op: "presearch_holes",
            required: MIN_PRESEARCH_POINTS,
            actual: inliers.len(),
        });
    }
    if expected == 0 {
        return Ok(Vec::new());
    }
    let pts: Vec<[f64; 2]> = inliers.points().iter().map(|p| plane.to_2d(p)).collect();
    let tree = KdTree::new(pts.clone());
    let mut nn: Vec<f64> = (0..pts.len())
        .into_par_iter()
        .map(|i| tree.knn(&pts[i], 1, Some(i)).first().map_or(0.0, |n| n.dist_sq.sqrt()))
        .collect();
    nn.sort_by(f64::total_cmp);
    let cell = 2.0 * nn[nn.len() / 2];
    if !(cell > 0.0) {
        return Err(Error::Degenerate("face inliers are coincident".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let grid = Grid {
        origin: [lo[0] - cell, lo[1] - cell],
        cell,
        nx: ((hi[0] - lo[0]) / cell).ceil() as usize + 3,
        ny: ((hi[1] - lo[1]) / cell).ceil() as usize + 3,
    };
    if grid.nx.saturating_mul(grid.ny) > 50_000_000 {
        return Err(Error::Degenerate("face too sparse for the occupancy grid".into()));
    }
    let at = |ix: usize, iy: usize| iy * grid.nx + ix;
    let mut occupied = vec![false; grid.nx * grid.ny];
    let mut cell_points: Vec<Vec<usize>> = vec![Vec::new(); grid.nx * grid.ny];
    for (i, p) in pts.iter().enumerate() {
        let (ix, iy) = grid.index(*p);
        occupied[at(ix, iy)] = true;
        cell_points[at(ix, iy)].push(i);
    }

    // empty components, discovered in row-major order
    let mut comp = vec![usize::MAX; grid.nx * grid.ny];
    let mut components: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut touches_border: Vec<bool> = Vec::new();
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if occupied[at(ix, iy)] || comp[at(ix, iy)] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut cells = Vec::new();
            let mut border = false;
            let mut queue = VecDeque::from([(ix, iy)]);
            comp[at(ix, iy)] = id;
            while let Some((x, y)) = queue.pop_front() {
                cells.push((x, y));
                if x == 0 || y == 0 || x + 1 == grid.nx || y + 1 == grid.ny {
                    border = true;
                }
                let nbrs = [
                    (x.wrapping_sub(1), y),
                    (x + 1, y),
                    (x, y.wrapping_sub(1)),
                    (x, y + 1),
                ];
                for (u, v) in nbrs {
                    if u < grid.nx && v < grid.ny && !occupied[at(u, v)] && comp[at(u, v)] == usize::MAX {
                        comp[at(u, v)] = id;
                        queue.push_back((u, v));
                    }
                }
            }
            components.push(cells);
            touches_border.push(border);
        }
    }
    let mut cands: Vec<usize> = (0..components.len())
        .filter(|&c| !touches_border[c] && components[c].len() >= 5)
        .collect();
    if cands.len() < expected {
        return Err(Error::HoleCount {
            found: cands.len(),
            expected,
        });
    }
    if cands.len() > expected {
        // contiguous window of the area-sorted list with the smallest spread
        cands.sort_by_key(|&c| (components[c].len(), c));
        let best = (0..=cands.len() - expected)
            .min_by(|&a, &b| {
                let ra = components[cands[a + expected - 1]].len() as f64 / components[cands[a]].len() as f64;
                let rb = components[cands[b + expected - 1]].len() as f64 / components[cands[b]].len() as f64;
                ra.total_cmp(&rb)
            })
            .unwrap_or(0);
        cands = cands[best..best + expected].to_vec();
    }

    let centroid = {
        let mut c = [0.0; 2];
        for p in &pts {
            c[0] += p[0];
            c[1] += p[1];
        }
        [c[0] / pts.len() as f64, c[1] / pts.len() as f64]
    };
    let mut out: Vec<HoleCandidate> = cands
        .iter()
        .map(|&c| {
            let cells = &components[c];
            let mut center = [0.0; 2];
            for &(x, y) in cells {
                let q = grid.center(x, y);
                center[0] += q[0];
                center[1] += q[1];
            }
            center[0] /= cells.len() as f64;
            center[1] /= cells.len() as f64;
            // inlier points within two cells of the component
            let mut ring = Vec::new();
            let mut seen = vec![false; grid.nx * grid.ny];
            for &(x, y) in cells {
                for v in y.saturating_sub(2)..=(y + 2).min(grid.ny - 1) {
                    for u in x.saturating_sub(2)..=(x + 2).min(grid.nx - 1) {
                        if !seen[at(u, v)] {
                            seen[at(u, v)] = true;
                            ring.extend(cell_points[at(u, v)].iter().map(|&i| pts[i]));
                        }
                    }
                }
            }
            HoleCandidate {
                center,
                area: cells.len() as f64 * cell * cell,
                polygon: convex_hull(&ring),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let aa = (a.center[1] - centroid[1]).atan2(a.center[0] - centroid[0]);
        let ab = (b.center[1] - centroid[1]).atan2(b.center[0] - centroid[0]);
        aa.total_cmp(&ab)
    });
    Ok(out)
}

/// Indices of scan points whose plane projection falls inside `polygon` and
/// whose distance from the plane is in `(tau, depth]`.
pub fn crop_hole_region(scan: &PointCloud, plane: &PlaneModel, polygon: &[[f64; 2]], tau: f64, depth: f64) -> Vec<usize> {
    scan.points()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let h = plane.distance(p);
            h > tau && h <= depth && in_convex_polygon(polygon, plane.to_2d(p))
        })
        .map(|(i, _)| i)
        .collect()
}

/// Hole (or shaft) axis: a line through `point` along unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleAxis {
    /// Where the axis crosses the source plane.
    pub point: Point3,
    pub direction: Vector3<f64>,
    pub radius: f64,
}

impl HoleAxis {
    pub fn distance_to_axis(&self, p: &Point3) -> f64 {
        (p - self.point).cross(&self.direction).norm()
    }
}

/// A fitted axis with its consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisFit {
    pub axis: HoleAxis,
    /// Indices into the fitted region.
    pub inliers: Vec<usize>,
    pub rms: f64,
    /// The least-squares refinement left the cone and was discarded.
    pub cone_fallback: bool,
}

/// The hole axes found on one face.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleSet {
    pub holes: Vec<HoleAxis>,
    pub source_plane: PlaneModel,
}

/// Fits a bore axis constrained to lie within 15° of the plane normal.
///
/// A RANSAC circle fit in the plane frame (inlier: `| |q - c| - r | < τ`)
/// gives the first estimate, which is refined by a least-squares cylinder
/// fit on its inliers. A refinement outside the cone is discarded in favour
/// of the circle with the axis along the normal. The returned direction
/// points along the plane normal and the point lies on the plane.
pub fn fit_hole_axis(region: &PointCloud, plane: &PlaneModel, cfg: &RansacConfig, seed: u64) -> Result<AxisFit> {
    cfg.validate("holes")?;
    let pts = region.points();
    if pts.len() < MIN_AXIS_INLIERS {
        return Err(Error::TooFewPoints {
            op: "fit_hole_axis",
            required: MIN_AXIS_INLIERS,
            actual: pts.len(),
        });
    }
    let tau = cfg.threshold;
    let flat: Vec<[f64; 2]> = pts.iter().map(|p| plane.to_2d(p)).collect();
    let extent = {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for q in &flat {
            for k in 0..2 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
        (hi[0] - lo[0]).hypot(hi[1] - lo[1])
    };
    let n = flat.len();
    let best = best_hypothesis(cfg.iterations_for(0), |i| {
        let mut r = sample_rng(seed, i);
        for _ in 0..MAX_RESAMPLES {
            let [a, b, c] = draw3(&mut r, n);
            let Some((center, radius)) = circle_from_three(flat[a], flat[b], flat[c]) else {
                continue;
            };
            if radius > extent {
                continue;
            }
            let count = flat
                .iter()
                .filter(|q| ((q[0] - center[0]).hypot(q[1] - center[1]) - radius).abs() < tau)
                .count();
            return Some(((center, radius), count));
        }
        None
    });
    let Some(((center, radius), count)) = best else {
        return Err(Error::NoConsensus {
            found: 0,
            required: MIN_AXIS_INLIERS,
        });
    };
    if count < MIN_AXIS_INLIERS {
        return Err(Error::NoConsensus {
            found: count,
            required: MIN_AXIS_INLIERS,
        });
    }
    let circle_inliers: Vec<Point3> = flat
        .iter()
        .zip(pts)
        .filter(|(q, _)| ((q[0] - center[0]).hypot(q[1] - center[1]) - radius).abs() < tau)
        .map(|(_, p)| *p)
        .collect();

    let circle_axis = HoleAxis {
        point: plane.from_2d(center),
        direction: plane.normal,
        radius,
    };
    let cone = HOLE_CONE_DEG.to_radians().cos();
    let refined = fit_cylinder_lsq(&circle_inliers, &circle_axis.point, &plane.normal, radius, 100).and_then(|cyl| {
        let dir = if cyl.direction.dot(&plane.normal) < 0.0 {
            -cyl.direction
        } else {
            cyl.direction
        };
        if dir.dot(&plane.normal) < cone {
            return None;
        }
        let point = plane.intersect_line(&cyl.point, &dir)?;
        Some(HoleAxis {
            point,
            direction: dir,
            radius: cyl.radius,
        })
    });
    let cone_fallback = refined.is_none();
    let axis = refined.unwrap_or(circle_axis);
    let inliers: Vec<usize> = pts
        .iter()
        .enumerate()
        .filter(|(_, p)| (axis.distance_to_axis(p) - axis.radius).abs() < tau)
        .map(|(i, _)| i)
        .collect();
    if inliers.len() < MIN_AXIS_INLIERS {
        return Err(Error::NoConsensus {
            found: inliers.len(),
            required: MIN_AXIS_INLIERS,
        });
    }
    let rms = (inliers
        .iter()
        .map(|&i| (axis.distance_to_axis(&pts[i]) - axis.radius).powi(2))
        .sum::<f64>()
        / inliers.len() as f64)
        .sqrt();
    Ok(AxisFit {
        axis,
        inliers,
        rms,
        cone_fallback,
    })
}

/// Parameters for locating and fitting the holes of one face.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleSearch {
    pub expected: usize,
    pub ransac: RansacConfig,
    /// Points farther than this from the face plane are ignored (mm).
    pub depth: f64,
}

/// Per-hole outcome of [`find_holes`].
#[derive(Debug, Clone, PartialEq)]
pub struct HoleReport {
    pub candidate: HoleCandidate,
    /// Scan indices of the cropped bore region.
    pub region: Vec<usize>,
    pub fit: AxisFit,
}

/// Pre-search, crop and fit every hole of a face. Holes are fitted in
/// parallel, each with its own seed.
pub fn find_holes(scan: &PointCloud, face: &PlaneFit, search: &HoleSearch, seed: u64) -> Result<(HoleSet, Vec<HoleReport>)> {
    let inliers = scan.select(&face.inliers);
    let cands = presearch_holes(&inliers, &face.model, search.expected)?;
    let reports: Vec<Result<HoleReport>> = cands
        .into_par_iter()
        .enumerate()
        .map(|(k, candidate)| {
            let region = crop_hole_region(scan, &face.model, &candidate.polygon, search.ransac.threshold, search.depth);
            let fit = fit_hole_axis(&scan.select(&region), &face.model, &search.ransac, model_seed(seed, k))
                .map_err(|e| Error::Degenerate(format!("hole {k}: {e}")))?;
            Ok(HoleReport { candidate, region, fit })
        })
        .collect();
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((
        HoleSet {
            holes: reports.iter().map(|r| r.fit.axis).collect(),
            source_plane: face.model,
        },
        reports,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn grid_plane(n: usize) -> Vec<Point3> {
        (0..n)
            .map(|i| Point3::new((i % 20) as f64 * 0.5, (i / 20) as f64 * 0.5, 0.0))
            .collect()
    }

    #[test]
    fn exact_coplanar_points_all_inliers() {
        let c = PointCloud::camera(grid_plane(200)).unwrap();
        let fit = ransac_plane(&c, &RansacConfig::planes_default(), 1).unwrap();
        assert_eq!(fit.inliers.len(), 200);
        assert!(fit.model.normal.cross(&Vector3::z()).norm() < 1e-6);
        let [a, b, cc, d] = fit.model.coefficients();
        let p = fit.model.point;
        assert!((a * p.x + b * p.y + cc * p.z + d).abs() < 1e-9);
        assert!((fit.model.normal.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_points_is_error() {
        let c = PointCloud::camera(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(ransac_plane(&c, &RansacConfig::planes_default(), 1).is_err());
    }

    #[test]
    fn collinear_points_have_no_plane() {
        let c = PointCloud::camera((0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        assert!(matches!(
            ransac_plane(&c, &RansacConfig::planes_default(), 1),
            Err(Error::NoConsensus { .. })
        ));
    }

    #[test]
    fn plane_with_outliers() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut pts = Vec::new();
        for _ in 0..800 {
            pts.push(Point3::new(
                r.random_range(-10.0..10.0),
                r.random_range(-10.0..10.0),
                noise.sample(&mut r),
            ));
        }
        for _ in 0..200 {
            pts.push(Point3::new(
                r.random_range(-10.0..10.0),
                r.random_range(-10.0..10.0),
                r.random_range(-10.0..10.0),
            ));
        }
        let c = PointCloud::camera(pts).unwrap();
        let cfg = RansacConfig {
            iterations: vec![1000],
            threshold: 0.05,
            models: 1,
        };
        let fit = ransac_plane(&c, &cfg, 9).unwrap();
        let recovered = fit.inliers.iter().filter(|&&i| i < 800).count();
        assert!(recovered >= 760, "{recovered}");
        for &i in &fit.inliers {
            assert!(fit.model.distance(&c.points()[i]) < 0.05);
        }
        assert_eq!(ransac_plane(&c, &cfg, 9).unwrap(), fit);
    }

    #[test]
    fn two_parallel_planes() {
        let mut pts = grid_plane(400);
        pts.extend(grid_plane(400).iter().map(|p| Point3::new(p.x, p.y, 10.0)));
        let c = PointCloud::camera(pts).unwrap();
        let seg = segment_planes(&c, &RansacConfig::planes_default(), 4).unwrap();
        assert_eq!(seg.planes.len(), 2);
        let n0 = seg.planes[0].model.normal;
        let n1 = seg.planes[1].model.normal;
        assert!(n0.cross(&n1).norm() < 0.1f64.to_radians().sin());
        let mut all: Vec<usize> = seg.planes.iter().flat_map(|p| p.inliers.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 800);
    }

    #[test]
    fn single_model_matches_ransac_plane() {
        let c = PointCloud::camera(grid_plane(300)).unwrap();
        let cfg = RansacConfig {
            iterations: vec![500],
            threshold: 0.05,
            models: 1,
        };
        let seg = segment_planes(&c, &cfg, 11).unwrap();
        assert_eq!(seg.planes[0], ransac_plane(&c, &cfg, 11).unwrap());
    }

    #[test]
    fn exhausted_cloud_gives_partial_result() {
        let c = PointCloud::camera(grid_plane(100)).unwrap();
        let seg = segment_planes(&c, &RansacConfig::planes_default(), 1).unwrap();
        assert_eq!(seg.planes.len(), 1);
        assert_eq!(seg.warnings.len(), 1);
    }

    #[test]
    fn config_defaults_and_validation() {
        let p = RansacConfig::planes_default();
        assert_eq!((p.iterations.as_slice(), p.threshold, p.models), (&[1000, 1500][..], 0.05, 2));
        assert_eq!(p.iterations_for(5), 1500);
        let h = RansacConfig::holes_default();
        assert_eq!((h.iterations.as_slice(), h.threshold, h.models), (&[1000][..], 0.05, 6));
        let bad = RansacConfig { models: 0, ..p.clone() };
        assert!(bad.validate("planes").is_err());
        let bad = RansacConfig { threshold: 0.0, ..p };
        assert!(bad.validate("planes").is_err());
    }

    #[test]
    fn solid_plane_expecting_no_holes() {
        let pts: Vec<Point3> = (0..900)
            .map(|i| Point3::new((i % 30) as f64 * 0.3, (i / 30) as f64 * 0.3, 0.0))
            .collect();
        let c = PointCloud::camera(pts).unwrap();
        let plane = PlaneModel::new(Vector3::z(), Point3::origin()).unwrap();
        assert!(presearch_holes(&c, &plane, 0).unwrap().is_empty());
        assert!(matches!(
            presearch_holes(&c, &plane, 1),
            Err(Error::HoleCount { found: 0, expected: 1 })
        ));
    }

    fn cylinder_region(center: [f64; 2], r: f64, dir: Vector3<f64>) -> Vec<Point3> {
        let dir = dir.normalize();
        let e0 = any_orthogonal(&dir);
        let e1 = dir.cross(&e0);
        let base = Point3::new(center[0], center[1], 0.0);
        let mut pts = Vec::new();
        for iz in 0..8 {
            for ia in 0..60 {
                let t = ia as f64 * std::f64::consts::TAU / 60.0 + iz as f64 * 0.05;
                pts.push(base + (e0 * t.cos() + e1 * t.sin()) * r - dir * (0.2 + iz as f64 * 0.35));
            }
        }
        pts
    }

    #[test]
    fn exact_cylinder_axis() {
        let plane = PlaneModel::new(Vector3::z(), Point3::origin()).unwrap();
        let pts = cylinder_region([3.0, -2.0], 4.0, Vector3::z());
        let fit = fit_hole_axis(&PointCloud::camera(pts).unwrap(), &plane, &RansacConfig::holes_default(), 5).unwrap();
        assert!(fit.axis.direction.angle(&Vector3::z()).to_degrees() < 0.05);
        assert!((fit.axis.point - Point3::new(3.0, -2.0, 0.0)).norm() < 1e-3);
        assert!((fit.axis.radius - 4.0).abs() < 1e-6);
        assert_eq!(fit.inliers.len(), 480);
    }

    #[test]
    fn direction_stays_in_cone() {
        // a bore tilted 25° from the plane normal cannot leave the cone
        let plane = PlaneModel::new(Vector3::z(), Point3::origin()).unwrap();
        let tilt = 25f64.to_radians();
        let pts = cylinder_region([0.0, 0.0], 4.0, Vector3::new(tilt.sin(), 0.0, tilt.cos()));
        if let Ok(fit) = fit_hole_axis(&PointCloud::camera(pts).unwrap(), &plane, &RansacConfig::holes_default(), 5) {
            assert!(fit.axis.direction.angle(&Vector3::z()).to_degrees() <= HOLE_CONE_DEG + 1e-9);
        }
    }

    #[test]
    fn no_cylinder_is_error() {
        let plane = PlaneModel::new(Vector3::z(), Point3::origin()).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                Point3::new(
                    r.random_range(-5.0..5.0),
                    r.random_range(-5.0..5.0),
                    r.random_range(-3.0..-0.1),
                )
            })
            .collect();
        assert!(fit_hole_axis(&PointCloud::camera(pts).unwrap(), &plane, &RansacConfig::holes_default(), 5).is_err());
    }

    #[test]
    fn draw3_distinct() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let [a, b, c] = draw3(&mut r, 3);
            assert!(a != b && b != c && a != c);
        }
    }
}
