//! Labeled synthetic scenes with exact ground truth.
//!
//! Two scene kinds are produced: a bolt (thread crest helix plus the thread
//! root cylinder) and a docking pair of flanged faces with hole patterns.
//!
//! Flange geometry is built in the *docked* frame: face B lies in `z = 0`
//! with its normal `+z` pointing at A, and A touches B from above with its
//! hole pattern turned by `-θ*`. The measured A is the docked A moved by the
//! inverse of the true correction, a tilt about an in-plane axis plus a gap
//! along `+z`. All randomness comes from ChaCha8 streams keyed by the seed,
//! so a spec always regenerates bit-identically.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud, RigidTransform};
use crate::error::{Error, Result};
use crate::helix::HelixParams;

/// Ground-truth tag of a generated point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Thread,
    ThreadRoot,
    FaceA,
    FaceB,
    HoleWallA(u32),
    HoleWallB(u32),
    RimA,
    Outlier,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Thread => f.write_str("thread"),
            Label::ThreadRoot => f.write_str("thread-root"),
            Label::FaceA => f.write_str("face-a"),
            Label::FaceB => f.write_str("face-b"),
            Label::HoleWallA(k) => write!(f, "hole-wall-a-{k}"),
            Label::HoleWallB(k) => write!(f, "hole-wall-b-{k}"),
            Label::RimA => f.write_str("rim-a"),
            Label::Outlier => f.write_str("outlier"),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "thread" => Label::Thread,
            "thread-root" => Label::ThreadRoot,
            "face-a" => Label::FaceA,
            "face-b" => Label::FaceB,
            "rim-a" => Label::RimA,
            "outlier" => Label::Outlier,
            _ => {
                if let Some(k) = s.strip_prefix("hole-wall-a-") {
                    Label::HoleWallA(k.parse().map_err(|_| format!("bad label `{s}`"))?)
                } else if let Some(k) = s.strip_prefix("hole-wall-b-") {
                    Label::HoleWallB(k.parse().map_err(|_| format!("bad label `{s}`"))?)
                } else {
                    return Err(format!("unknown label `{s}`"));
                }
            }
        })
    }
}

/// A cloud with one ground-truth label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
}

impl LabeledCloud {
    pub fn indices_of(&self, pred: impl Fn(Label) -> bool) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| pred(l))
            .map(|(i, _)| i)
            .collect()
    }

    fn from_parts(points: Vec<Point3>, labels: Vec<Label>) -> Self {
        debug_assert_eq!(points.len(), labels.len());
        Self {
            cloud: PointCloud::camera(points).expect("generator emits finite points"),
            labels,
        }
    }

    /// Concatenation of `self` and `other`, labels preserved.
    /// Moves every point by `v`.
    pub fn shifted(&self, v: &Vector3<f64>) -> LabeledCloud {
        let pts = self.cloud.points().iter().map(|p| p + v).collect();
        LabeledCloud::from_parts(pts, self.labels.clone())
    }

    pub fn concat(&self, other: &LabeledCloud) -> LabeledCloud {
        let mut pts = self.cloud.points().to_vec();
        pts.extend_from_slice(other.cloud.points());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledCloud::from_parts(pts, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HelixSpec {
    pub radius: f64,
    pub pitch: f64,
    /// Phase in radians.
    pub phase: f64,
    pub turns: f64,
    pub points_per_turn: usize,
    /// Radius of the thread root cylinder; `0` disables it.
    pub root_radius: f64,
    pub root_points: usize,
    /// Bolt axis direction in the turbine frame.
    pub axis: [f64; 3],
    /// Bolt centre in the turbine frame (mm).
    pub center: [f64; 3],
}

impl Default for HelixSpec {
    fn default() -> Self {
        Self {
            radius: 8.0,
            pitch: 1.25,
            phase: 0.0,
            turns: 6.0,
            points_per_turn: 300,
            root_radius: 7.2,
            root_points: 1200,
            axis: [0.1, -0.05, 1.0],
            center: [12.0, -7.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlangeSpec {
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub hole_count: u32,
    pub hole_radius: f64,
    pub bolt_circle_radius: f64,
    pub hole_depth: f64,
    /// Axial length of the sampled band of A's outer shaft surface.
    pub rim_height: f64,
    /// Target number of face points per scan (holes excluded).
    pub points_per_face: usize,
}

impl Default for FlangeSpec {
    fn default() -> Self {
        Self {
            outer_radius: 40.0,
            inner_radius: 12.0,
            hole_count: 6,
            hole_radius: 4.0,
            bolt_circle_radius: 28.0,
            hole_depth: 3.0,
            rim_height: 6.0,
            points_per_face: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruePoseSpec {
    pub tilt_deg: f64,
    /// Azimuth of the tilt axis in B's plane, degrees.
    pub tilt_azimuth_deg: f64,
    pub gap: f64,
    pub theta_deg: f64,
}

impl Default for TruePoseSpec {
    fn default() -> Self {
        Self {
            tilt_deg: 0.5,
            tilt_azimuth_deg: 30.0,
            gap: 2.0,
            theta_deg: 3.7,
        }
    }
}

/// Declarative description of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Outlier box size relative to the cloud's bounding box.
    pub outlier_bbox_scale: f64,
    /// Also emit the bolt scene.
    pub bolt: bool,
    /// Camera-to-turbine offset of every scan: camera point = turbine point + offset.
    pub camera_offset: [f64; 3],
    pub helix: HelixSpec,
    pub flange: FlangeSpec,
    pub pose: TruePoseSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            noise_sigma: 0.02,
            outlier_fraction: 0.0,
            outlier_bbox_scale: 1.2,
            bolt: false,
            camera_offset: [0.0, 0.0, 350.0],
            helix: HelixSpec::default(),
            flange: FlangeSpec::default(),
            pose: TruePoseSpec::default(),
        }
    }
}

fn scene_err(constraint: &'static str, detail: impl Into<String>) -> Error {
    Error::Scene {
        constraint,
        detail: detail.into(),
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &'static str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(scene_err(name, format!("must be positive, got {v}")))
            }
        };
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(scene_err("noise_sigma >= 0", self.noise_sigma.to_string()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(scene_err("0 <= outlier_fraction < 1", self.outlier_fraction.to_string()));
        }
        positive(self.outlier_bbox_scale, "outlier_bbox_scale")?;
        let h = &self.helix;
        positive(h.radius, "helix.radius")?;
        positive(h.pitch, "helix.pitch")?;
        positive(h.turns, "helix.turns")?;
        if h.points_per_turn == 0 {
            return Err(scene_err("helix.points_per_turn", "must be >= 1"));
        }
        if h.root_radius < 0.0 || h.root_radius >= h.radius {
            return Err(scene_err("0 <= helix.root_radius < helix.radius", h.root_radius.to_string()));
        }
        if Vector3::from(h.axis).norm() < 1e-9 {
            return Err(scene_err("helix.axis", "must be non-zero"));
        }
        let f = &self.flange;
        positive(f.outer_radius, "flange.outer_radius")?;
        positive(f.hole_radius, "flange.hole_radius")?;
        positive(f.hole_depth, "flange.hole_depth")?;
        positive(f.rim_height, "flange.rim_height")?;
        if f.inner_radius < 0.0 || f.inner_radius >= f.outer_radius {
            return Err(scene_err("0 <= inner_radius < outer_radius", f.inner_radius.to_string()));
        }
        if f.hole_count > 0 {
            if f.bolt_circle_radius - f.hole_radius <= f.inner_radius
                || f.bolt_circle_radius + f.hole_radius >= f.outer_radius
            {
                return Err(scene_err(
                    "holes inside the face annulus",
                    format!(
                        "bolt circle {} ± hole radius {} leaves [{}, {}]",
                        f.bolt_circle_radius, f.hole_radius, f.inner_radius, f.outer_radius
                    ),
                ));
            }
            if f.hole_count > 1 {
                let chord = 2.0 * f.bolt_circle_radius * (std::f64::consts::PI / f.hole_count as f64).sin();
                if chord <= 2.0 * f.hole_radius {
                    return Err(scene_err(
                        "hole spacing",
                        format!(
                            "adjacent holes overlap: centre spacing {chord:.3} mm <= hole diameter {:.3} mm",
                            2.0 * f.hole_radius
                        ),
                    ));
                }
            }
        }
        if f.points_per_face < 100 {
            return Err(scene_err("flange.points_per_face", "must be >= 100"));
        }
        let p = &self.pose;
        if !(p.gap >= 0.0 && p.gap.is_finite()) {
            return Err(scene_err("pose.gap >= 0", p.gap.to_string()));
        }
        if !p.tilt_deg.is_finite() || p.tilt_deg.abs() >= 45.0 {
            return Err(scene_err("|pose.tilt_deg| < 45", p.tilt_deg.to_string()));
        }
        if !p.theta_deg.is_finite() {
            return Err(scene_err("pose.theta_deg", "must be finite"));
        }
        Ok(())
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn add_noise(points: &mut [Point3], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    for p in points {
        p.x += n.sample(rng);
        p.y += n.sample(rng);
        p.z += n.sample(rng);
    }
}

/// Exact helix samples in the helix's own frame, uniform in the curve
/// parameter starting at the phase: `t_i = φ + 2π i / points_per_turn`.
pub fn gen_helix(helix: &HelixSpec, noise_sigma: f64, seed: u64) -> LabeledCloud {
    let n = (helix.turns * helix.points_per_turn as f64).round() as usize;
    let params = HelixParams {
        radius: helix.radius,
        pitch: helix.pitch,
        phase: helix.phase,
    };
    let mut pts: Vec<Point3> = (0..n)
        .map(|i| {
            let t = params.phase + TAU * i as f64 / helix.points_per_turn as f64;
            Point3::new(
                params.radius * t.cos(),
                params.radius * t.sin(),
                params.pitch * (t - params.phase) / TAU,
            )
        })
        .collect();
    add_noise(&mut pts, noise_sigma, &mut rng(seed, 1));
    LabeledCloud::from_parts(pts, vec![Label::Thread; n])
}

/// Ground truth for a bolt scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltTruth {
    pub radius: f64,
    pub pitch: f64,
    pub axis: [f64; 3],
    pub center: [f64; 3],
    pub camera_offset: [f64; 3],
}

/// Bolt scene in the camera frame: thread crest helix plus root cylinder,
/// placed at `helix.center` along `helix.axis` and shifted by the camera
/// offset.
pub fn gen_bolt(spec: &SceneSpec) -> Result<(LabeledCloud, BoltTruth)> {
    spec.validate()?;
    let h = &spec.helix;
    let thread = gen_helix(h, 0.0, spec.seed);
    let length = h.turns * h.pitch;
    let mut pts = thread.cloud.into_points();
    let mut labels = thread.labels;
    let mut r = rng(spec.seed, 2);
    for _ in 0..h.root_points.min(if h.root_radius > 0.0 { usize::MAX } else { 0 }) {
        let t: f64 = r.random_range(0.0..TAU);
        let z: f64 = r.random_range(0.0..length);
        pts.push(Point3::new(h.root_radius * t.cos(), h.root_radius * t.sin(), z));
        labels.push(Label::ThreadRoot);
    }
    // centre the bolt on its own origin, then place it
    let axis = Unit::new_normalize(Vector3::from(h.axis));
    let rot = crate::cloud::rotation_between(&Vector3::z(), &axis);
    let place = Vector3::from(h.center) + Vector3::from(spec.camera_offset);
    for p in &mut pts {
        let local = Vector3::new(p.x, p.y, p.z - 0.5 * length);
        *p = Point3::from(rot * local + place);
    }
    add_noise(&mut pts, spec.noise_sigma, &mut rng(spec.seed, 3));
    let mut cloud = LabeledCloud::from_parts(pts, labels);
    if spec.outlier_fraction > 0.0 {
        cloud = inject_outliers(&cloud, spec.outlier_fraction, spec.outlier_bbox_scale, spec.seed ^ 0xB017);
    }
    Ok((
        cloud,
        BoltTruth {
            radius: h.radius,
            pitch: h.pitch,
            axis: axis.into_inner().into(),
            center: h.center,
            camera_offset: spec.camera_offset,
        },
    ))
}

/// Exact docking correction for a generated flange pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlangeTruth {
    /// Maps measured A onto its docked placement against B.
    pub correction: RigidTransform,
    pub theta: f64,
    /// B's face plane (`z = 0`) normal, pointing at A.
    pub b_normal: Vector3<f64>,
    pub b_center: Point3,
    /// Hole centres on B's face.
    pub b_holes: Vec<Point3>,
    /// Hole centres on A's face in A's measured placement.
    pub a_holes: Vec<Point3>,
    /// A's face centre and normal (pointing at B) as measured.
    pub a_center: Point3,
    pub a_normal: Vector3<f64>,
}

impl FlangeTruth {
    /// The exact docking solution: face correction, then `θ*` about B's
    /// normal through B's centre. Indices are zero.
    pub fn pose(&self) -> crate::pose::PoseSolution {
        crate::pose::PoseSolution {
            xf: self.correction,
            theta_deg: self.theta.to_degrees(),
            axis: self.b_normal,
            center: self.b_center,
            eps_pla: 0.0,
            eps_cyc: 0.0,
            per_hole_dev_mm: vec![0.0; self.b_holes.len()],
            warnings: Vec::new(),
        }
    }
}

/// Jittered grid over the face annulus with hole disks removed, on `z = 0`.
fn sample_face(f: &FlangeSpec, hole_azimuth: &[f64], r: &mut ChaCha8Rng) -> Vec<Point3> {
    let area = std::f64::consts::PI
        * (f.outer_radius.powi(2) - f.inner_radius.powi(2) - hole_azimuth.len() as f64 * f.hole_radius.powi(2));
    let s = (area / f.points_per_face as f64).sqrt();
    let n = (f.outer_radius / s).ceil() as i64;
    let centers: Vec<(f64, f64)> = hole_azimuth
        .iter()
        .map(|a| (f.bolt_circle_radius * a.cos(), f.bolt_circle_radius * a.sin()))
        .collect();
    let mut pts = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let x = (i as f64 + r.random_range(-0.3..0.3)) * s;
            let y = (j as f64 + r.random_range(-0.3..0.3)) * s;
            let rr = x.hypot(y);
            if rr > f.outer_radius || rr < f.inner_radius {
                continue;
            }
            if centers
                .iter()
                .any(|(cx, cy)| (x - cx).hypot(y - cy) < f.hole_radius)
            {
                continue;
            }
            pts.push(Point3::new(x, y, 0.0));
        }
    }
    pts
}

/// Cylinder band samples: radius `radius` around the z-parallel axis through
/// `(cx, cy)`, `z` from `z0` to `z1`, at roughly spacing `s`.
fn sample_band(cx: f64, cy: f64, radius: f64, z0: f64, z1: f64, s: f64, r: &mut ChaCha8Rng) -> Vec<Point3> {
    let na = ((TAU * radius / s).ceil() as usize).max(8);
    let nz = (((z1 - z0).abs() / s).ceil() as usize).max(1);
    let mut pts = Vec::with_capacity(na * nz);
    for iz in 0..nz {
        for ia in 0..na {
            let t = (ia as f64 + r.random_range(-0.3..0.3)) * TAU / na as f64;
            let z = z0 + (z1 - z0) * (iz as f64 + 0.5 + r.random_range(-0.3..0.3)) / nz as f64;
            pts.push(Point3::new(cx + radius * t.cos(), cy + radius * t.sin(), z));
        }
    }
    pts
}

fn face_spacing(f: &FlangeSpec) -> f64 {
    let area = std::f64::consts::PI
        * (f.outer_radius.powi(2) - f.inner_radius.powi(2) - f.hole_count as f64 * f.hole_radius.powi(2));
    (area / f.points_per_face as f64).sqrt()
}

/// Flange scans A (moving shaft end) and B (fixed), plus the exact pose.
pub fn gen_flange_pair(spec: &SceneSpec) -> Result<(LabeledCloud, LabeledCloud, FlangeTruth)> {
    spec.validate()?;
    let f = &spec.flange;
    let p = &spec.pose;
    let s = face_spacing(f);
    let theta = p.theta_deg.to_radians();
    let az_b: Vec<f64> = (0..f.hole_count).map(|l| TAU * l as f64 / f.hole_count as f64).collect();
    let az_a: Vec<f64> = az_b.iter().map(|a| a - theta).collect();

    // B: face at z = 0, holes bored downward.
    let mut rb = rng(spec.seed, 10);
    let mut b_pts = sample_face(f, &az_b, &mut rb);
    let mut b_labels = vec![Label::FaceB; b_pts.len()];
    for (k, a) in az_b.iter().enumerate() {
        let (cx, cy) = (f.bolt_circle_radius * a.cos(), f.bolt_circle_radius * a.sin());
        let wall = sample_band(cx, cy, f.hole_radius, 0.0, -f.hole_depth, s, &mut rb);
        b_labels.extend(std::iter::repeat_n(Label::HoleWallB(k as u32), wall.len()));
        b_pts.extend(wall);
    }

    // A, docked: face at z = 0 facing down, holes bored upward, rim band above.
    let mut ra = rng(spec.seed, 11);
    let mut a_pts = sample_face(f, &az_a, &mut ra);
    let mut a_labels = vec![Label::FaceA; a_pts.len()];
    for (k, a) in az_a.iter().enumerate() {
        let (cx, cy) = (f.bolt_circle_radius * a.cos(), f.bolt_circle_radius * a.sin());
        let wall = sample_band(cx, cy, f.hole_radius, 0.0, f.hole_depth, s, &mut ra);
        a_labels.extend(std::iter::repeat_n(Label::HoleWallA(k as u32), wall.len()));
        a_pts.extend(wall);
    }
    let rim = sample_band(0.0, 0.0, f.outer_radius, 1.0, 1.0 + f.rim_height, s, &mut ra);
    a_labels.extend(std::iter::repeat_n(Label::RimA, rim.len()));
    a_pts.extend(rim);

    // measured A = tilt about an in-plane axis, then lift by the gap
    let psi = p.tilt_azimuth_deg.to_radians();
    let tilt_axis = Unit::new_normalize(Vector3::new(psi.cos(), psi.sin(), 0.0));
    let measured = RigidTransform::from_axis_angle(&tilt_axis, p.tilt_deg.to_radians(), Vector3::z() * p.gap);
    for q in &mut a_pts {
        *q = measured.apply(q);
    }

    add_noise(&mut a_pts, spec.noise_sigma, &mut rng(spec.seed, 12));
    add_noise(&mut b_pts, spec.noise_sigma, &mut rng(spec.seed, 13));
    let mut a = LabeledCloud::from_parts(a_pts, a_labels);
    let mut b = LabeledCloud::from_parts(b_pts, b_labels);
    if spec.outlier_fraction > 0.0 {
        a = inject_outliers(&a, spec.outlier_fraction, spec.outlier_bbox_scale, spec.seed ^ 0xA);
        b = inject_outliers(&b, spec.outlier_fraction, spec.outlier_bbox_scale, spec.seed ^ 0xB);
    }
    let a = a.shifted(&Vector3::from(spec.camera_offset));
    let b = b.shifted(&Vector3::from(spec.camera_offset));

    let hole_center = |az: f64| Point3::new(f.bolt_circle_radius * az.cos(), f.bolt_circle_radius * az.sin(), 0.0);
    let truth = FlangeTruth {
        correction: measured.inverse(),
        theta,
        b_normal: Vector3::z(),
        b_center: Point3::origin(),
        b_holes: az_b.iter().map(|&a| hole_center(a)).collect(),
        a_holes: az_a.iter().map(|&a| measured.apply(&hole_center(a))).collect(),
        a_center: measured.apply(&Point3::origin()),
        a_normal: measured.apply_vector(&-Vector3::z()),
    };
    Ok((a, b, truth))
}

/// Appends uniform outliers inside the bounding box scaled by `bbox_scale`
/// about its centre. `fraction` is the share of outliers in the *output*:
/// `n_out = round(fraction · n / (1 - fraction))`.
pub fn inject_outliers(cloud: &LabeledCloud, fraction: f64, bbox_scale: f64, seed: u64) -> LabeledCloud {
    let n = cloud.cloud.len();
    if fraction <= 0.0 || n == 0 {
        return cloud.clone();
    }
    let fraction = fraction.min(0.999);
    let n_out = (fraction * n as f64 / (1.0 - fraction)).round() as usize;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in cloud.cloud.points() {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    let center = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0 * bbox_scale;
    let mut r = rng(seed, 20);
    let mut pts = cloud.cloud.points().to_vec();
    let mut labels = cloud.labels.clone();
    for _ in 0..n_out {
        let u = Vector3::new(
            r.random_range(-1.0..=1.0),
            r.random_range(-1.0..=1.0),
            r.random_range(-1.0..=1.0),
        );
        pts.push(Point3::from(center + half.component_mul(&u)));
        labels.push(Label::Outlier);
    }
    LabeledCloud {
        cloud: PointCloud::new(pts, cloud.cloud.frame()).expect("finite"),
        labels,
    }
}

/// Labels sidecar: one `# <name>` header per cloud, then one label per line.
pub fn format_labels(clouds: &[(&str, &LabeledCloud)]) -> String {
    let mut out = String::new();
    for (name, c) in clouds {
        let _ = writeln!(out, "# {name} {}", c.labels.len());
        for l in &c.labels {
            let _ = writeln!(out, "{l}");
        }
    }
    out
}

/// Parses a labels sidecar back into `(name, labels)` sections.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<(String, Vec<Label>)>> {
    let mut out: Vec<(String, Vec<Label>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            let name = h.split_whitespace().next().unwrap_or("").to_string();
            out.push((name, Vec::new()));
            continue;
        }
        let label = line.parse::<Label>().map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        match out.last_mut() {
            Some((_, v)) => v.push(label),
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "label before any `# <cloud>` header".into(),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_helix() {
        let h = HelixSpec {
            radius: 5.0,
            pitch: 1.0,
            phase: 0.0,
            turns: 1.0,
            points_per_turn: 4,
            ..Default::default()
        };
        let c = gen_helix(&h, 0.0, 1);
        let expect = [[5.0, 0.0, 0.0], [0.0, 5.0, 0.25], [-5.0, 0.0, 0.5], [0.0, -5.0, 0.75]];
        for (p, e) in c.cloud.points().iter().zip(expect) {
            assert!((p - Point3::from(e)).norm() < 1e-12, "{p} vs {e:?}");
        }
    }

    #[test]
    fn noiseless_helix_satisfies_curve() {
        let h = HelixSpec {
            radius: 3.3,
            pitch: 0.8,
            phase: 1.1,
            turns: 4.5,
            points_per_turn: 37,
            ..Default::default()
        };
        for p in gen_helix(&h, 0.0, 9).cloud.points() {
            assert!((p.x.hypot(p.y) - 3.3).abs() < 1e-12);
            let t = p.z * TAU / 0.8 + 1.1;
            assert!((p.x - 3.3 * t.cos()).abs() < 1e-12 && (p.y - 3.3 * t.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn outlier_fraction_is_of_output() {
        let h = HelixSpec {
            turns: 20.0,
            points_per_turn: 50,
            ..Default::default()
        };
        let c = gen_helix(&h, 0.0, 3);
        assert_eq!(c.cloud.len(), 1000);
        let o = inject_outliers(&c, 0.2, 1.0, 5);
        assert_eq!(o.cloud.len(), 1250);
        assert_eq!(o.indices_of(|l| l == Label::Outlier).len(), 250);
        assert_eq!(&o.labels[..1000], &c.labels[..]);
        assert_eq!(inject_outliers(&c, 0.0, 1.0, 5), c);
    }

    #[test]
    fn tight_bolt_circle_rejected() {
        let mut spec = SceneSpec::default();
        spec.flange.hole_count = 36;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("hole spacing"), "{err}");
    }

    #[test]
    fn zero_pose_is_identity() {
        let mut spec = SceneSpec::default();
        spec.pose = TruePoseSpec {
            tilt_deg: 0.0,
            tilt_azimuth_deg: 0.0,
            gap: 0.0,
            theta_deg: 0.0,
        };
        spec.noise_sigma = 0.0;
        spec.camera_offset = [0.0; 3];
        spec.flange.points_per_face = 2000;
        let (a, b, truth) = gen_flange_pair(&spec).unwrap();
        assert_eq!(truth.correction, RigidTransform::identity());
        assert_eq!(truth.a_holes, truth.b_holes);
        // face points coincide in distribution: both on z = 0
        for i in a.indices_of(|l| l == Label::FaceA) {
            assert_eq!(a.cloud.points()[i].z, 0.0);
        }
        assert!(b.indices_of(|l| l == Label::FaceB).len() > 1500);
    }

    #[test]
    fn thirty_six_holes_at_ten_degrees() {
        let mut spec = SceneSpec::default();
        spec.flange = FlangeSpec {
            outer_radius: 70.0,
            inner_radius: 30.0,
            hole_count: 36,
            hole_radius: 2.0,
            bolt_circle_radius: 55.0,
            points_per_face: 5000,
            ..Default::default()
        };
        spec.pose.theta_deg = 0.0;
        spec.pose.tilt_deg = 0.0;
        spec.pose.gap = 0.0;
        let (_, _, truth) = gen_flange_pair(&spec).unwrap();
        for (l, h) in truth.b_holes.iter().enumerate() {
            let az = h.y.atan2(h.x).rem_euclid(TAU).to_degrees();
            let expect = (10.0 * l as f64) % 360.0;
            assert!((az - expect).abs() < 1e-9 || (az - expect).abs() > 360.0 - 1e-9, "{az} {expect}");
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let mut spec = SceneSpec::default();
        spec.flange.points_per_face = 3000;
        spec.outlier_fraction = 0.05;
        let x = gen_flange_pair(&spec).unwrap();
        let y = gen_flange_pair(&spec).unwrap();
        assert_eq!(x.0, y.0);
        assert_eq!(x.1, y.1);
        spec.seed += 1;
        let z = gen_flange_pair(&spec).unwrap();
        assert_ne!(x.0.cloud, z.0.cloud);
    }

    #[test]
    fn labels_round_trip() {
        let h = HelixSpec {
            turns: 1.0,
            points_per_turn: 10,
            ..Default::default()
        };
        let c = inject_outliers(&gen_helix(&h, 0.0, 1), 0.3, 1.0, 2);
        let text = format_labels(&[("bolt", &c)]);
        let back = parse_labels(&text, Path::new("x")).unwrap();
        assert_eq!(back, vec![("bolt".to_string(), c.labels.clone())]);
        for l in [Label::HoleWallA(3), Label::HoleWallB(35), Label::RimA] {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
    }
}
