//! Stage orchestration, configuration and run reports.
//!
//! Two flows are provided. The thread flow takes a bolt scan through frame
//! transform, outlier removal, PCA projection, seeded DBSCAN and Hough
//! fitting. The match flow takes the moving (A) and fixed (B) flange scans
//! through plane segmentation, hole search, face matching and hole
//! alignment. Each flow fills its report as it goes, so a failed run still
//! reports every stage that completed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::{transform_to_turbine_frame, Frame, Point3, PointCloud};
use crate::cluster::{default_eps, dbscan, expand_from_seed, extract_thread_cluster, pick_seed, ClusterMode, DbscanParams};
use crate::error::{Error, Result};
use crate::fit::fit_plane_lsq;
use crate::helix::{hough_fit, HelixFrame, HoughConfig};
use crate::pca::{override_view_axis, pca_basis, project, PlaneView};
use crate::pose::{
    assemble_pose, optimize_face_pose, optimize_hole_rotation, FaceMatchConfig, FaceMatchInput, HoleMatchConfig,
    HoleMatchInput, PoseReport,
};
use crate::preprocess::{sor_filter, SorParams};
use crate::segment::{
    find_holes, fit_hole_axis, segment_planes, HoleReport, HoleSearch, PlaneFit, PlaneModel, RansacConfig,
};

/// Version of the JSON run-report layout.
pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    /// Camera-to-turbine offset: turbine point = camera point - offset (mm).
    pub offset: [f64; 3],
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { offset: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    /// Principal plane used for thread segmentation.
    pub view: PlaneView,
    /// Replaces the principal axis the view looks along.
    pub axis_override: Option<[f64; 3]>,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            view: PlaneView::U1U2,
            axis_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanConfig {
    /// Neighbourhood radius (mm); unset means twice the median 4-NN distance.
    pub eps: Option<f64>,
    pub min_pts: usize,
    pub mode: ClusterMode,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: None,
            min_pts: 4,
            mode: ClusterMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoleRegionConfig {
    /// Points farther than this from a face are not part of its holes (mm).
    pub depth: f64,
    /// Angular period of the hole pattern (degrees); unset means 360 / holes.
    pub period_deg: Option<f64>,
}

impl Default for HoleRegionConfig {
    fn default() -> Self {
        Self {
            depth: 20.0,
            period_deg: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub input: Option<PathBuf>,
    pub scan_a: Option<PathBuf>,
    pub scan_b: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

fn planes_default() -> RansacConfig {
    RansacConfig::planes_default()
}

fn holes_default() -> RansacConfig {
    RansacConfig::holes_default()
}

/// Every tunable of both flows. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub sor: SorParams,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub dbscan: DbscanConfig,
    #[serde(default)]
    pub hough: HoughConfig,
    /// Face segmentation; `models` is the number of planes.
    #[serde(default = "planes_default")]
    pub planes: RansacConfig,
    /// Hole and shaft axis fitting; `models` is the holes expected per face.
    #[serde(default = "holes_default")]
    pub holes: RansacConfig,
    #[serde(default)]
    pub hole_region: HoleRegionConfig,
    #[serde(default)]
    pub face: FaceMatchConfig,
    #[serde(default)]
    pub hole_match: HoleMatchConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frame: FrameConfig::default(),
            sor: SorParams::default(),
            pca: PcaConfig::default(),
            dbscan: DbscanConfig::default(),
            hough: HoughConfig::default(),
            planes: planes_default(),
            holes: holes_default(),
            hole_region: HoleRegionConfig::default(),
            face: FaceMatchConfig::default(),
            hole_match: HoleMatchConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Checks every block; run before any stage.
    pub fn validate(&self) -> Result<()> {
        if self.frame.offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("frame.offset", "must be finite"));
        }
        self.sor.validate()?;
        if let Some(a) = self.pca.axis_override {
            if a.iter().any(|v| !v.is_finite()) || Vector3::from(a).norm() < 1e-12 {
                return Err(Error::param("pca.axis_override", "must be a finite non-zero vector"));
            }
        }
        if let Some(eps) = self.dbscan.eps {
            DbscanParams {
                eps,
                min_pts: self.dbscan.min_pts,
            }
            .validate()?;
        } else if self.dbscan.min_pts < 1 {
            return Err(Error::param("dbscan.min_pts", "must be >= 1"));
        }
        self.hough.validate()?;
        self.planes.validate("planes")?;
        self.holes.validate("holes")?;
        if !(self.hole_region.depth > 0.0 && self.hole_region.depth.is_finite()) {
            return Err(Error::param("hole_region.depth", "must be positive"));
        }
        if let Some(p) = self.hole_region.period_deg {
            if !(p > 0.0 && p <= 360.0) {
                return Err(Error::param("hole_region.period_deg", "must be in (0, 360]"));
            }
        }
        self.face.validate()?;
        self.hole_match.validate()?;
        Ok(())
    }

    fn stage_seed(&self, salt: u64) -> u64 {
        self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Timings, warnings and optional intermediate clouds of one run.
#[derive(Debug, Default)]
pub struct RunContext {
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub keep_intermediate: bool,
    /// `(file name, cloud)` pairs, in stage order.
    pub intermediates: Vec<(String, PointCloud)>,
}

impl RunContext {
    pub fn new(keep_intermediate: bool) -> Self {
        Self {
            keep_intermediate,
            ..Default::default()
        }
    }

    fn stage<T>(&mut self, key: &str, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        self.timings_ms
            .insert(key.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out.map_err(|e| e.in_stage(stage))
    }

    fn keep(&mut self, name: &str, cloud: &PointCloud) {
        if self.keep_intermediate {
            self.intermediates.push((name.to_string(), cloud.clone()));
        }
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn parr(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SorReport {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    pub removed: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub mean: [f64; 3],
    pub axes: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
    pub near_degenerate: bool,
    pub view: PlaneView,
    pub axis_overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub eps: f64,
    pub eps_from_heuristic: bool,
    pub min_pts: usize,
    pub mode: ClusterMode,
    pub n_clusters: usize,
    pub seed_index: usize,
    pub thread_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelixReport {
    pub radius: f64,
    pub pitch: f64,
    pub phase: f64,
    pub axis: [f64; 3],
    pub origin: [f64; 3],
    pub residual_rms: f64,
    pub coarse_radius: f64,
    pub coarse_pitch: f64,
    pub coarse_phase: f64,
    pub coarse_residual_rms: f64,
    pub votes: u32,
    pub support: usize,
}

/// Outputs of the thread flow; stages that did not run are `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreadReport {
    pub input_points: usize,
    pub sor: Option<SorReport>,
    pub pca: Option<PcaReport>,
    pub cluster: Option<ClusterReport>,
    pub helix: Option<HelixReport>,
}

/// Names of the intermediate clouds kept by the thread flow.
pub const THREAD_INTERMEDIATES: [&str; 5] = [
    "01_turbine_frame.ply",
    "02_sor_filtered.ply",
    "03_projection.xyz",
    "04_thread_cluster.ply",
    "05_helix_model.ply",
];

fn to_turbine(cloud: &PointCloud, offset: [f64; 3], ctx: &mut RunContext, what: &str) -> Result<PointCloud> {
    match cloud.frame() {
        Frame::Camera => transform_to_turbine_frame(cloud, &Vector3::from(offset)),
        Frame::TurbineAxis => {
            ctx.warn(format!("{what} is already in the turbine frame; offset not applied"));
            Ok(cloud.clone())
        }
    }
}

/// Runs the thread flow on a bolt scan, filling `report` stage by stage.
pub fn run_thread(cloud: &PointCloud, cfg: &PipelineConfig, ctx: &mut RunContext, report: &mut ThreadReport) -> Result<()> {
    report.input_points = cloud.len();
    let turbine = ctx.stage("thread.transform", "transform", |ctx| {
        let t = to_turbine(cloud, cfg.frame.offset, ctx, "bolt scan")?;
        ctx.keep(THREAD_INTERMEDIATES[0], &t);
        Ok(t)
    })?;
    let filtered = ctx.stage("thread.sor", "sor", |ctx| {
        let (f, stats) = sor_filter(&turbine, &cfg.sor)?;
        report.sor = Some(SorReport {
            mu: stats.mu,
            sigma: stats.sigma,
            lower: stats.lower,
            upper: stats.upper,
            removed: stats.removed_count,
            kept: f.len(),
        });
        ctx.keep(THREAD_INTERMEDIATES[1], &f);
        Ok(f)
    })?;
    let basis = ctx.stage("thread.pca", "pca", |ctx| {
        let mut basis = pca_basis(&filtered)?;
        if basis.near_degenerate() {
            ctx.warn("principal variances are nearly equal; consider pca.axis_override".into());
        }
        if let Some(a) = cfg.pca.axis_override {
            basis = override_view_axis(&basis, cfg.pca.view, Vector3::from(a))?;
        }
        report.pca = Some(PcaReport {
            mean: parr(&basis.mean),
            axes: [arr(&basis.axes[0]), arr(&basis.axes[1]), arr(&basis.axes[2])],
            eigenvalues: basis.eigenvalues,
            near_degenerate: basis.near_degenerate(),
            view: cfg.pca.view,
            axis_overridden: cfg.pca.axis_override.is_some(),
        });
        Ok(basis)
    })?;
    let projection = ctx.stage("thread.project", "project", |ctx| {
        let p = project(&filtered, &basis, cfg.pca.view);
        if ctx.keep_intermediate {
            let flat = p.points.iter().map(|q| Point3::new(q[0], q[1], 0.0)).collect();
            let c = PointCloud::new(flat, Frame::TurbineAxis)?;
            ctx.keep(THREAD_INTERMEDIATES[2], &c);
        }
        Ok(p)
    })?;
    let thread = ctx.stage("thread.cluster", "cluster", |ctx| {
        let seed = pick_seed(&projection)?;
        let (eps, heuristic) = match cfg.dbscan.eps {
            Some(e) => (e, false),
            None => (default_eps(&projection)?, true),
        };
        let params = DbscanParams {
            eps,
            min_pts: cfg.dbscan.min_pts,
        };
        let mut labeling = match cfg.dbscan.mode {
            ClusterMode::Full => dbscan(&projection, &params)?,
            ClusterMode::SeedExpansion => expand_from_seed(&projection, &params, seed)?,
        };
        labeling.attach_seed(seed);
        let thread = extract_thread_cluster(&filtered, &labeling, seed)?;
        report.cluster = Some(ClusterReport {
            eps,
            eps_from_heuristic: heuristic,
            min_pts: params.min_pts,
            mode: cfg.dbscan.mode,
            n_clusters: labeling.n_clusters,
            seed_index: seed,
            thread_points: thread.len(),
        });
        ctx.keep(THREAD_INTERMEDIATES[3], &thread);
        Ok(thread)
    })?;
    ctx.stage("thread.hough", "hough", |ctx| {
        let frame = HelixFrame::from_basis(&basis, cfg.pca.view.view_axis());
        let fit = hough_fit(&thread, &frame, &cfg.hough)?;
        let m = &fit.model;
        report.helix = Some(HelixReport {
            radius: m.params.radius,
            pitch: m.params.pitch,
            phase: m.params.phase,
            axis: arr(&m.frame.axis()),
            origin: parr(&m.frame.origin),
            residual_rms: fit.residual_rms,
            coarse_radius: fit.coarse.radius,
            coarse_pitch: fit.coarse.pitch,
            coarse_phase: fit.coarse.phase,
            coarse_residual_rms: fit.coarse_residual_rms,
            votes: fit.votes,
            support: fit.support,
        });
        if ctx.keep_intermediate {
            // the fitted curve over the axial span of the thread cluster
            let (lo, hi) = thread.points().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let z = m.frame.to_local(p).z;
                (lo.min(z), hi.max(z))
            });
            let slope = m.params.pitch / std::f64::consts::TAU;
            let (t0, t1) = (lo / slope + m.params.phase, hi / slope + m.params.phase);
            let n = (((t1 - t0) / std::f64::consts::TAU) * 360.0).ceil().max(2.0) as usize;
            let pts = (0..=n).map(|i| m.point_at(t0 + (t1 - t0) * i as f64 / n as f64)).collect();
            ctx.keep(THREAD_INTERMEDIATES[4], &PointCloud::new(pts, Frame::TurbineAxis)?);
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneReport {
    pub normal: [f64; 3],
    pub point: [f64; 3],
    /// `(A, B, C, D)` with `Ax + By + Cz + D = 0`.
    pub coefficients: [f64; 4],
    pub inliers: usize,
    pub from_a: usize,
    pub from_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceReport {
    pub plane_index: usize,
    /// Unit normal pointing toward the other face.
    pub normal: [f64; 3],
    pub centroid: [f64; 3],
    pub inliers: usize,
    /// Share of the segmented plane's inliers that came from this scan.
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub point: [f64; 3],
    pub direction: [f64; 3],
    pub radius: f64,
    pub inliers: usize,
    pub rms: f64,
    pub region_points: usize,
    pub cone_fallback: bool,
}

impl AxisReport {
    fn from_hole(r: &HoleReport) -> Self {
        Self {
            point: parr(&r.fit.axis.point),
            direction: arr(&r.fit.axis.direction),
            radius: r.fit.axis.radius,
            inliers: r.fit.inliers.len(),
            rms: r.fit.rms,
            region_points: r.region.len(),
            cone_fallback: r.fit.cone_fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShaftAxisReport {
    pub point: [f64; 3],
    pub direction: [f64; 3],
    pub radius: Option<f64>,
    pub inliers: usize,
    /// No shaft surface was found; the face normal through its centroid is used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceMatchReport {
    pub eps_pla: f64,
    pub h_max: f64,
    pub h_mean: f64,
    pub initial_eps_pla: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleMatchReport {
    pub theta_deg: f64,
    pub period_deg: f64,
    pub eps_cyc: f64,
    pub d_max: f64,
    pub d_mean: f64,
    pub objective: f64,
    pub shift: usize,
}

/// Outputs of the match flow; stages that did not run are `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub scan_a_points: usize,
    pub scan_b_points: usize,
    pub planes: Option<Vec<PlaneReport>>,
    pub face_a: Option<FaceReport>,
    pub face_b: Option<FaceReport>,
    pub holes_a: Option<Vec<AxisReport>>,
    pub holes_b: Option<Vec<AxisReport>>,
    pub shaft_axis: Option<ShaftAxisReport>,
    pub face_match: Option<FaceMatchReport>,
    pub hole_match: Option<HoleMatchReport>,
    pub pose: Option<PoseReport>,
}

/// A face picked out of the joint segmentation, in its own scan's indices.
#[derive(Debug, Clone)]
pub struct Face {
    pub plane_index: usize,
    pub fit: PlaneFit,
    pub centroid: Point3,
    pub purity: f64,
}

/// Segments the union of both scans into planes and assigns each scan the
/// plane holding most of its points. When both scans pick the same plane
/// (coincident faces) that plane's inliers are split by scan.
pub fn split_faces(a: &PointCloud, b: &PointCloud, planes: &[PlaneFit]) -> Result<(Face, Face)> {
    let na = a.len();
    let counts: Vec<(usize, usize)> = planes
        .iter()
        .map(|p| {
            let fa = p.inliers.iter().filter(|&&i| i < na).count();
            (fa, p.inliers.len() - fa)
        })
        .collect();
    let pick = |side: fn(&(usize, usize)) -> usize| {
        counts
            .iter()
            .enumerate()
            .max_by(|x, y| side(x.1).cmp(&side(y.1)).then(y.0.cmp(&x.0)))
            .map(|(i, _)| i)
    };
    let ia = pick(|c| c.0).ok_or_else(|| Error::Degenerate("no planes segmented".into()))?;
    let ib = pick(|c| c.1).ok_or_else(|| Error::Degenerate("no planes segmented".into()))?;
    let make = |idx: usize, of_a: bool| -> Result<Face> {
        let plane = &planes[idx];
        let own: Vec<usize> = if of_a {
            plane.inliers.iter().copied().filter(|&i| i < na).collect()
        } else {
            plane.inliers.iter().filter(|&&i| i >= na).map(|&i| i - na).collect()
        };
        let scan = if of_a { a } else { b };
        let pts: Vec<Point3> = own.iter().map(|&i| scan.points()[i]).collect();
        let (c, n) = fit_plane_lsq(&pts).ok_or_else(|| {
            Error::Degenerate(format!("face of scan {} has too few points", if of_a { "A" } else { "B" }))
        })?;
        let purity = if ia == ib {
            1.0
        } else {
            own.len() as f64 / plane.inliers.len() as f64
        };
        Ok(Face {
            plane_index: idx,
            fit: PlaneFit {
                model: PlaneModel::new(n, c)?,
                inliers: own,
            },
            centroid: c,
            purity,
        })
    };
    let fa = make(ia, true)?;
    let fb = make(ib, false)?;
    if counts[ia].0 == 0 || counts[ib].1 == 0 {
        return Err(Error::Degenerate("a scan has no points on any segmented plane".into()));
    }
    Ok((fa, fb))
}

/// Side of `plane` on which most of `scan`'s near off-plane points lie:
/// `+1`, `-1`, or `0` for a tie.
fn material_side(scan: &PointCloud, plane: &PlaneModel, tau: f64, depth: f64) -> i32 {
    let (mut pos, mut neg) = (0usize, 0usize);
    for p in scan.points() {
        let h = plane.signed_distance(p);
        if h.abs() > tau && h.abs() <= depth {
            if h > 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    (pos as i64 - neg as i64).signum() as i32
}

/// Orients both face normals toward the other face. When the centroids do
/// not separate the faces, B's normal points away from its material and A's
/// is its opposite.
pub fn orient_normals(a: &Face, b: &Face, scan_b: &PointCloud, tau: f64, depth: f64) -> (Vector3<f64>, Vector3<f64>) {
    let d = a.centroid - b.centroid;
    let scale = 1e-9 * d.norm().max(1.0);
    let nb0 = b.fit.model.normal;
    let sb = nb0.dot(&d);
    let n_b = if sb.abs() > scale {
        nb0 * sb.signum()
    } else {
        match material_side(scan_b, &b.fit.model, tau, depth) {
            1 => -nb0,
            _ => nb0,
        }
    };
    let na0 = a.fit.model.normal;
    let sa = na0.dot(&-d);
    let n_a = if sa.abs() > scale { na0 * sa.signum() } else { -n_b };
    (n_a, n_b)
}

/// Runs the match flow on the moving scan `a` and fixed scan `b`.
pub fn run_match(a: &PointCloud, b: &PointCloud, cfg: &PipelineConfig, ctx: &mut RunContext, report: &mut MatchReport) -> Result<()> {
    report.scan_a_points = a.len();
    report.scan_b_points = b.len();
    let (a, b) = ctx.stage("match.transform", "transform", |ctx| {
        Ok((
            to_turbine(a, cfg.frame.offset, ctx, "scan A")?,
            to_turbine(b, cfg.frame.offset, ctx, "scan B")?,
        ))
    })?;
    let tau = cfg.planes.threshold;
    let depth = cfg.hole_region.depth;

    let (face_a, face_b) = ctx.stage("match.segment", "segment", |ctx| {
        let mut pts = a.points().to_vec();
        pts.extend_from_slice(b.points());
        let merged = PointCloud::new(pts, Frame::TurbineAxis)?;
        let seg = segment_planes(&merged, &cfg.planes, cfg.stage_seed(1))?;
        for w in &seg.warnings {
            ctx.warn(w.clone());
        }
        report.planes = Some(
            seg.planes
                .iter()
                .map(|p| {
                    let from_a = p.inliers.iter().filter(|&&i| i < a.len()).count();
                    PlaneReport {
                        normal: arr(&p.model.normal),
                        point: parr(&p.model.point),
                        coefficients: p.model.coefficients(),
                        inliers: p.inliers.len(),
                        from_a,
                        from_b: p.inliers.len() - from_a,
                    }
                })
                .collect(),
        );
        split_faces(&a, &b, &seg.planes)
    })?;
    let (n_a, n_b) = orient_normals(&face_a, &face_b, &b, tau, depth);
    for (face, n, slot) in [(&face_a, n_a, &mut report.face_a), (&face_b, n_b, &mut report.face_b)] {
        *slot = Some(FaceReport {
            plane_index: face.plane_index,
            normal: arr(&n),
            centroid: parr(&face.centroid),
            inliers: face.fit.inliers.len(),
            purity: face.purity,
        });
    }

    let search = HoleSearch {
        expected: cfg.holes.models,
        ransac: cfg.holes.clone(),
        depth,
    };
    let holes_a = ctx.stage("match.holes_a", "holes-a", |_| {
        let (set, reports) = find_holes(&a, &face_a.fit, &search, cfg.stage_seed(2))?;
        report.holes_a = Some(reports.iter().map(AxisReport::from_hole).collect());
        Ok((set, reports))
    })?;
    let holes_b = ctx.stage("match.holes_b", "holes-b", |_| {
        let (set, reports) = find_holes(&b, &face_b.fit, &search, cfg.stage_seed(3))?;
        report.holes_b = Some(reports.iter().map(AxisReport::from_hole).collect());
        Ok(set)
    })?;

    // shaft axis from the outer surface of A, away from face and holes
    let shaft = ctx.stage("match.shaft_axis", "shaft-axis", |ctx| {
        let mut excluded = vec![false; a.len()];
        for &i in &face_a.fit.inliers {
            excluded[i] = true;
        }
        for r in &holes_a.1 {
            for &i in &r.region {
                excluded[i] = true;
            }
        }
        let plane = &face_a.fit.model;
        let region: Vec<usize> = (0..a.len())
            .filter(|&i| {
                let h = plane.distance(&a.points()[i]);
                !excluded[i] && h > tau && h <= depth
            })
            .collect();
        let fit = fit_hole_axis(&a.select(&region), plane, &cfg.holes, cfg.stage_seed(4));
        let out = match fit {
            Ok(f) => ShaftAxisReport {
                point: parr(&f.axis.point),
                direction: arr(&f.axis.direction),
                radius: Some(f.axis.radius),
                inliers: f.inliers.len(),
                fallback: false,
            },
            Err(e) => {
                ctx.warn(format!(
                    "shaft surface not found ({e}); using the face normal through the face centroid"
                ));
                ShaftAxisReport {
                    point: parr(&face_a.centroid),
                    direction: arr(&plane.normal),
                    radius: None,
                    inliers: 0,
                    fallback: true,
                }
            }
        };
        report.shaft_axis = Some(out.clone());
        Ok(out)
    })?;

    let face = ctx.stage("match.face_match", "face-match", |ctx| {
        let input = FaceMatchInput::new(&a.select(&face_a.fit.inliers), &b.select(&face_b.fit.inliers), n_a, n_b, cfg.face.h0)?;
        let r = optimize_face_pose(&input, &cfg.face)?;
        for w in &r.warnings {
            ctx.warn(w.clone());
        }
        report.face_match = Some(FaceMatchReport {
            eps_pla: r.eps_pla,
            h_max: r.h_max,
            h_mean: r.h_mean,
            initial_eps_pla: r.initial_eps_pla,
            evaluations: r.evaluations,
        });
        Ok(r)
    })?;

    let period = cfg
        .hole_region
        .period_deg
        .unwrap_or(360.0 / cfg.holes.models as f64);
    let (hole, axis, center) = ctx.stage("match.hole_match", "hole-match", |_| {
        let mut axis = face.xf.apply_vector(&Vector3::from(shaft.direction));
        if axis.dot(&n_b) < 0.0 {
            axis = -axis;
        }
        let center = face.xf.apply(&Point3::from(shaft.point));
        let input = HoleMatchInput {
            studs: holes_a.0.holes.iter().map(|h| face.xf.apply(&h.point)).collect(),
            holes: holes_b.holes.clone(),
            axis,
            center,
            d0: cfg.hole_match.d0,
            period_deg: period,
        };
        let r = optimize_hole_rotation(&input, &cfg.hole_match)?;
        report.hole_match = Some(HoleMatchReport {
            theta_deg: r.theta_deg,
            period_deg: period,
            eps_cyc: r.eps_cyc,
            d_max: r.d_max,
            d_mean: r.d_mean,
            objective: r.objective,
            shift: r.shift,
        });
        Ok((r, axis, center))
    })?;

    let mut pose = assemble_pose(&face, &hole, axis, center);
    pose.warnings = ctx.warnings.clone();
    report.pose = Some(pose.report());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

/// Top-level JSON report of one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub version: String,
    pub command: String,
    /// `"ok"` or `"failed"`.
    pub status: String,
    pub failure: Option<Failure>,
    /// Stage wall times; omitted when timings are disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
    pub thread: Option<ThreadReport>,
    #[serde(rename = "match")]
    pub matching: Option<MatchReport>,
    pub warnings: Vec<String>,
    pub config: PipelineConfig,
}

impl RunReport {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            status: "ok".to_string(),
            failure: None,
            timings_ms: None,
            thread: None,
            matching: None,
            warnings: Vec::new(),
            config: cfg.clone(),
        }
    }

    /// Records the outcome of a run and moves the context's bookkeeping in.
    pub fn finish(&mut self, ctx: &RunContext, outcome: &Result<()>, timings: bool) {
        self.warnings = ctx.warnings.clone();
        if timings {
            self.timings_ms = Some(ctx.timings_ms.clone());
        }
        if let Err(e) = outcome {
            self.status = "failed".to_string();
            let (stage, message) = match e {
                Error::Stage { stage, source } => (stage.to_string(), source.to_string()),
                other => ("input".to_string(), other.to_string()),
            };
            self.failure = Some(Failure { stage, message });
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serialisable");
        s.push('\n');
        s
    }
}

/// JSON schema of [`RunReport`].
pub const RUN_REPORT_SCHEMA: &str = include_str!("../schema/run_report.schema.json");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_carries_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.dbscan.min_pts, 4);
        assert_eq!(c.hough.resolution, 0.01);
        assert_eq!(c.planes.iterations, vec![1000, 1500]);
        assert_eq!(c.planes.threshold, 0.05);
        assert_eq!(c.planes.models, 2);
        assert_eq!(c.holes.iterations, vec![1000]);
        assert_eq!(c.holes.threshold, 0.05);
        assert_eq!(c.holes.models, 6);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = PipelineConfig::default();
        let text = c.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[sor]\nkk = 3"), Err(Error::Config(_))));
        let partial = PipelineConfig::from_toml("seed = 9\n[planes]\niterations = [10]\nthreshold = 0.1\nmodels = 1\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.holes, RansacConfig::holes_default());
    }

    #[test]
    fn zero_planes_rejected() {
        let err = PipelineConfig::from_toml("[planes]\niterations = [1000]\nthreshold = 0.05\nmodels = 0\n").unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Config);
        assert!(err.to_string().contains("planes.models"), "{err}");
    }

    #[test]
    fn failure_marker_names_stage() {
        let cfg = PipelineConfig::default();
        let mut report = RunReport::new("thread", &cfg);
        let mut ctx = RunContext::new(false);
        let tiny = PointCloud::camera(vec![Point3::origin(); 5]).unwrap();
        let mut tr = ThreadReport::default();
        let out = run_thread(&tiny, &cfg, &mut ctx, &mut tr);
        report.thread = Some(tr);
        report.finish(&ctx, &out, false);
        assert_eq!(report.status, "failed");
        assert_eq!(report.failure.as_ref().unwrap().stage, "sor");
        assert!(report.timings_ms.is_none());
        assert!(!report.to_json().contains("timings_ms"));
    }
}
