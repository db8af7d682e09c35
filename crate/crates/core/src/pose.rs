//! Docking pose: face-to-face match, then shaft rotation for hole alignment.
//!
//! The face stage finds the rigid transform `(R, t)` of the moving scan A
//! that best mates its face with the fixed face B, scored by the spread of
//! the directional point-to-plane distances:
//!
//! ```text
//! h_i = n_B · (R p_Ai + t - p_Bc)
//! h_j = (R n_A) · (p_Bj - R p_Ac - t)
//! eps_pla = (h_max - h_mean) / h0        over |h|
//! ```
//!
//! The hole stage turns the (face-corrected) stud reference points about the
//! shaft axis `(n, p_O)` by `θ` and measures each against its hole axis:
//!
//! ```text
//! d_k(θ) = |n_l × (R_n(θ)(p_k - p_O) + p_O - p_l)| / |n_l|
//! eps_cyc = (d_max - d_mean) / d0
//! ```

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{rotation_between, Point3, PointCloud, RigidTransform};
use crate::error::{Error, Result};
use crate::optim::{golden_section, nelder_mead, NelderMeadOptions};
use crate::segment::HoleAxis;

/// Which directional distances enter the face index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FacePopulation {
    /// Distances of A's points to B's plane only.
    AOnly,
    /// Distances of B's points to the moved A plane only.
    BOnly,
    #[default]
    Symmetric,
}

/// Moving (A) and fixed (B) face inliers with their normals and centroids.
/// Each normal points toward the other face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMatchInput {
    pub cloud_a: Vec<Point3>,
    pub cloud_b: Vec<Point3>,
    pub n_a: Vector3<f64>,
    pub n_b: Vector3<f64>,
    pub p_ac: Point3,
    pub p_bc: Point3,
    pub h0: f64,
}

fn unit(v: &Vector3<f64>, name: &str) -> Result<Vector3<f64>> {
    let n = v.norm();
    if !(n > 1e-12 && n.is_finite()) {
        return Err(Error::param(name, "direction vector is zero"));
    }
    Ok(v / n)
}

impl FaceMatchInput {
    /// Builds the input with centroids taken from the clouds.
    pub fn new(cloud_a: &PointCloud, cloud_b: &PointCloud, n_a: Vector3<f64>, n_b: Vector3<f64>, h0: f64) -> Result<Self> {
        let p_ac = cloud_a.centroid().ok_or(Error::EmptyCloud)?;
        let p_bc = cloud_b.centroid().ok_or(Error::EmptyCloud)?;
        if !(h0 > 0.0 && h0.is_finite()) {
            return Err(Error::param("h0", "must be positive"));
        }
        Ok(Self {
            cloud_a: cloud_a.points().to_vec(),
            cloud_b: cloud_b.points().to_vec(),
            n_a: unit(&n_a, "n_a")?,
            n_b: unit(&n_b, "n_b")?,
            p_ac,
            p_bc,
            h0,
        })
    }
}

/// Directional distances `(h_i over A, h_j over B)`, signed.
pub fn directional_distances(xf: &RigidTransform, input: &FaceMatchInput) -> (Vec<f64>, Vec<f64>) {
    let r = xf.rotation();
    let t = xf.translation();
    let n_b = input.n_b;
    // n_B · (R p + t - p_Bc) = (Rᵀ n_B) · p + n_B · (t - p_Bc)
    let ga = r.transpose() * n_b;
    let oa = n_b.dot(&(t - input.p_bc.coords));
    let h_i = input.cloud_a.iter().map(|p| ga.dot(&p.coords) + oa).collect();
    let m = r * input.n_a;
    let ob = -m.dot(&(r * input.p_ac.coords + t));
    let h_j = input.cloud_b.iter().map(|p| m.dot(&p.coords) + ob).collect();
    (h_i, h_j)
}

/// Face index at one pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceIndex {
    pub eps_pla: f64,
    pub h_max: f64,
    pub h_mean: f64,
}

/// `(h_max - h_mean) / h0` over the absolute distances of `population`.
pub fn eps_pla(xf: &RigidTransform, input: &FaceMatchInput, population: FacePopulation) -> Result<FaceIndex> {
    if !(input.h0 > 0.0) {
        return Err(Error::param("h0", "must be positive"));
    }
    let (hi, hj) = directional_distances(xf, input);
    let values: Vec<f64> = match population {
        FacePopulation::AOnly => hi,
        FacePopulation::BOnly => hj,
        FacePopulation::Symmetric => hi.into_iter().chain(hj).collect(),
    };
    if values.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (mut max, mut sum) = (0.0f64, 0.0);
    for v in &values {
        let a = v.abs();
        max = max.max(a);
        sum += a;
    }
    let mean = sum / values.len() as f64;
    Ok(FaceIndex {
        eps_pla: (max - mean) / input.h0,
        h_max: max,
        h_mean: mean,
    })
}

/// Face-stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceMatchConfig {
    /// Normaliser of the face index (mm).
    pub h0: f64,
    /// Nominal gap between the mated faces (mm); 0 is flush contact.
    pub gap: f64,
    pub population: FacePopulation,
    pub max_evaluations: usize,
}

impl Default for FaceMatchConfig {
    fn default() -> Self {
        Self {
            h0: 1.0,
            gap: 0.0,
            population: FacePopulation::Symmetric,
            max_evaluations: 500,
        }
    }
}

impl FaceMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return Err(Error::param("face.h0", "must be positive"));
        }
        if !self.gap.is_finite() {
            return Err(Error::param("face.gap", "must be finite"));
        }
        if self.max_evaluations < 4 {
            return Err(Error::param("face.max_evaluations", "must be >= 4"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceMatchResult {
    pub xf: RigidTransform,
    pub eps_pla: f64,
    pub h_max: f64,
    pub h_mean: f64,
    /// Index at the closed-form initialisation.
    pub initial_eps_pla: f64,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}

/// Closed-form start: the smallest rotation taking `n_A` to `-n_B`, then the
/// translation putting A's centroid at `p_Bc + gap·n_B`.
pub fn initial_face_pose(input: &FaceMatchInput, gap: f64) -> RigidTransform {
    let r = rotation_between(&input.n_a, &-input.n_b);
    let t = input.p_bc.coords + input.n_b * gap - r * input.p_ac.coords;
    RigidTransform::from_parts_unchecked(r, t)
}

/// Pose `[gap offset, tilt a, tilt b]` applied after `init`: tilts about B's
/// in-plane axes through the mating point, then a shift along `n_B`.
fn out_of_plane(init: &RigidTransform, input: &FaceMatchInput, gap: f64, x: &[f64; 3]) -> RigidTransform {
    let n = input.n_b;
    let e1 = crate::cloud::any_orthogonal(&n);
    let e2 = n.cross(&e1);
    let rot = Rotation3::new(e1 * x[1] + e2 * x[2]).into_inner();
    let pivot = input.p_bc.coords + n * gap;
    let tilt = RigidTransform::from_parts_unchecked(rot, pivot - rot * pivot + n * x[0]);
    tilt.compose(init)
}

/// Minimises the face index over the three coordinates that move A's face
/// off B's plane (gap and two tilts), holding the in-plane ones at the
/// closed-form start. Never returns a pose worse than the start.
pub fn optimize_face_pose(input: &FaceMatchInput, cfg: &FaceMatchConfig) -> Result<FaceMatchResult> {
    cfg.validate()?;
    if input.cloud_a.is_empty() || input.cloud_b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut input = input.clone();
    input.h0 = cfg.h0;
    let init = initial_face_pose(&input, cfg.gap);
    let start = eps_pla(&init, &input, cfg.population)?;
    let f = |x: &[f64; 3]| {
        let xf = out_of_plane(&init, &input, cfg.gap, x);
        eps_pla(&xf, &input, cfg.population).map_or(f64::INFINITY, |e| e.eps_pla)
    };
    let m = nelder_mead(
        f,
        [0.0; 3],
        [0.01, 1e-4, 1e-4],
        &NelderMeadOptions {
            max_evaluations: cfg.max_evaluations,
            f_tol: 1e-12,
            x_tol: 1e-9,
        },
    );
    let mut warnings = Vec::new();
    if !m.converged {
        warnings.push(format!(
            "face match stopped after {} evaluations without converging; best pose returned",
            m.evaluations
        ));
    }
    let (xf, idx) = if m.f <= start.eps_pla {
        let xf = out_of_plane(&init, &input, cfg.gap, &m.x);
        let idx = eps_pla(&xf, &input, cfg.population)?;
        (xf, idx)
    } else {
        (init, start)
    };
    Ok(FaceMatchResult {
        xf,
        eps_pla: idx.eps_pla,
        h_max: idx.h_max,
        h_mean: idx.h_mean,
        initial_eps_pla: start.eps_pla,
        evaluations: m.evaluations,
        warnings,
    })
}

/// Rodrigues rotation of `p` by `theta` (radians) about the axis through
/// `center` along `axis`.
pub fn rotate_about_axis(p: &Point3, axis: &Vector3<f64>, center: &Point3, theta: f64) -> Result<Point3> {
    let n = Unit::new_normalize(unit(axis, "axis")?);
    Ok(center + Rotation3::from_axis_angle(&n, theta) * (p - center))
}

/// What the hole search minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoleObjective {
    /// Largest stud-to-hole deviation, `d_max / d0`.
    #[default]
    MaxDeviation,
    /// The spread index `(d_max - d_mean) / d0` itself.
    EpsCyc,
}

/// Stud reference points and hole axes for the rotation search.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleMatchInput {
    /// Stud side (moving shaft), already carried by the face pose.
    pub studs: Vec<Point3>,
    pub holes: Vec<HoleAxis>,
    /// Shaft axis direction; `θ` turns right-handed about it.
    pub axis: Vector3<f64>,
    pub center: Point3,
    pub d0: f64,
    /// Pattern period in degrees (360 / N).
    pub period_deg: f64,
}

impl HoleMatchInput {
    pub fn validate(&self) -> Result<()> {
        if self.studs.is_empty() || self.holes.is_empty() {
            return Err(Error::param("holes", "empty stud/hole pairing"));
        }
        if self.studs.len() != self.holes.len() {
            return Err(Error::param(
                "holes",
                format!("{} studs but {} holes", self.studs.len(), self.holes.len()),
            ));
        }
        unit(&self.axis, "axis")?;
        for h in &self.holes {
            unit(&h.direction, "hole direction")?;
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::param("d0", "must be positive"));
        }
        if !(self.period_deg > 0.0 && self.period_deg <= 360.0) {
            return Err(Error::param("period", "must be in (0, 360] degrees"));
        }
        Ok(())
    }

    fn frame(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = self.axis.normalize();
        let e1 = crate::cloud::any_orthogonal(&n);
        (n, e1, n.cross(&e1))
    }

    fn azimuth(&self, p: &Point3) -> f64 {
        let (_, e1, e2) = self.frame();
        let v = p - self.center;
        v.dot(&e2).atan2(v.dot(&e1)).rem_euclid(TAU)
    }

    /// Stud and hole indices sorted by azimuth about the shaft axis.
    pub fn angular_order(&self) -> (Vec<usize>, Vec<usize>) {
        let order = |az: Vec<f64>| {
            let mut idx: Vec<usize> = (0..az.len()).collect();
            idx.sort_by(|&a, &b| az[a].total_cmp(&az[b]).then(a.cmp(&b)));
            idx
        };
        let stud_az = self.studs.iter().map(|p| self.azimuth(p)).collect();
        let hole_az = self.holes.iter().map(|h| self.azimuth(&h.point)).collect();
        (order(stud_az), order(hole_az))
    }
}

/// Perpendicular distance from `p` to the line through `q` along `dir`.
pub fn point_axis_distance(p: &Point3, q: &Point3, dir: &Vector3<f64>) -> f64 {
    dir.cross(&(p - q)).norm() / dir.norm()
}

/// Deviations `d_k(θ)` for the stud/hole pairing that pairs the `i`-th stud
/// (by azimuth) with the `(i + shift)`-th hole. `theta` in radians. Returned
/// in the input stud order.
pub fn hole_deviation_shifted(theta: f64, input: &HoleMatchInput, shift: usize) -> Result<Vec<f64>> {
    input.validate()?;
    let (studs, holes) = input.angular_order();
    let n = studs.len();
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(input.axis), theta);
    let mut out = vec![0.0; n];
    for i in 0..n {
        let p = input.center + rot * (input.studs[studs[i]] - input.center);
        let h = &input.holes[holes[(i + shift) % n]];
        out[studs[i]] = point_axis_distance(&p, &h.point, &h.direction);
    }
    Ok(out)
}

fn objective(d: &[f64], d0: f64, which: HoleObjective) -> f64 {
    let max = d.iter().copied().fold(0.0, f64::max);
    match which {
        HoleObjective::MaxDeviation => max / d0,
        HoleObjective::EpsCyc => (max - d.iter().sum::<f64>() / d.len() as f64) / d0,
    }
}

/// Best cyclic pairing at `theta` under `which`; ties go to the smaller shift.
fn best_shift(theta: f64, input: &HoleMatchInput, which: HoleObjective) -> Result<(usize, Vec<f64>, f64)> {
    let n = input.studs.len();
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for s in 0..n {
        let d = hole_deviation_shifted(theta, input, s)?;
        let v = objective(&d, input.d0, which);
        if best.as_ref().is_none_or(|b| v < b.2) {
            best = Some((s, d, v));
        }
    }
    best.ok_or_else(|| Error::param("holes", "empty stud/hole pairing"))
}

/// Deviations `d_k(θ)` (θ in radians) under the pairing that minimises the
/// default objective at that angle.
pub fn hole_deviation(theta: f64, input: &HoleMatchInput) -> Result<Vec<f64>> {
    best_shift(theta, input, HoleObjective::MaxDeviation).map(|(_, d, _)| d)
}

/// `(eps_cyc, d_max, d_mean)` of a deviation list.
pub fn eps_cyc(d: &[f64], d0: f64) -> (f64, f64, f64) {
    let max = d.iter().copied().fold(0.0, f64::max);
    let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
    ((max - mean) / d0, max, mean)
}

/// Hole-stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoleMatchConfig {
    /// Normaliser of the hole index (mm).
    pub d0: f64,
    pub objective: HoleObjective,
    /// Coarse grid step (degrees).
    pub grid_step_deg: f64,
    /// Final bracket width of the golden-section refinement (degrees).
    pub tolerance_deg: f64,
}

impl Default for HoleMatchConfig {
    fn default() -> Self {
        Self {
            d0: 0.5,
            objective: HoleObjective::MaxDeviation,
            grid_step_deg: 0.01,
            tolerance_deg: 1e-4,
        }
    }
}

impl HoleMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::param("hole.d0", "must be positive"));
        }
        if !(self.grid_step_deg > 0.0 && self.grid_step_deg.is_finite()) {
            return Err(Error::param("hole.grid_step_deg", "must be positive"));
        }
        if !(self.tolerance_deg > 0.0 && self.tolerance_deg.is_finite()) {
            return Err(Error::param("hole.tolerance_deg", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoleMatchResult {
    /// Shaft rotation in degrees, in `[0, period)`.
    pub theta_deg: f64,
    pub eps_cyc: f64,
    pub d_max: f64,
    pub d_mean: f64,
    /// `d_k(θ)` in input stud order (mm).
    pub deviations: Vec<f64>,
    /// Value of the minimised objective at `θ`.
    pub objective: f64,
    /// Hole rank paired with the first stud.
    pub shift: usize,
}

/// Coarse grid over `[0, period)`, then golden-section refinement in the
/// bracket around the best sample. The result is never worse than any grid
/// sample under the minimised objective.
pub fn optimize_hole_rotation(input: &HoleMatchInput, cfg: &HoleMatchConfig) -> Result<HoleMatchResult> {
    cfg.validate()?;
    input.validate()?;
    let input = HoleMatchInput {
        d0: cfg.d0,
        ..input.clone()
    };
    let which = cfg.objective;
    let steps = ((input.period_deg / cfg.grid_step_deg).round() as usize).max(1);
    let step = input.period_deg / steps as f64;
    let eval = |deg: f64| best_shift(deg.to_radians(), &input, which).map_or(f64::INFINITY, |b| b.2);
    let (i_best, f_grid) = (0..steps)
        .into_par_iter()
        .map(|i| (i, eval(i as f64 * step)))
        .reduce_with(|a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
        .ok_or_else(|| Error::param("period", "empty grid"))?;
    let center = i_best as f64 * step;
    let g = golden_section(eval, center - step, center + step, cfg.tolerance_deg);
    let theta_deg = if g.f <= f_grid { g.x } else { center };
    let theta_deg = theta_deg.rem_euclid(input.period_deg);
    // rem_euclid can round up to the period itself
    let theta_deg = if theta_deg >= input.period_deg { 0.0 } else { theta_deg };
    let (mut theta_deg, mut best) = (theta_deg, best_shift(theta_deg.to_radians(), &input, which)?);
    // wrapping moves to another pairing, which only matches for exact patterns
    if best.2 > f_grid {
        theta_deg = center;
        best = best_shift(center.to_radians(), &input, which)?;
    }
    let (shift, deviations, value) = best;
    let (eps, d_max, d_mean) = eps_cyc(&deviations, input.d0);
    Ok(HoleMatchResult {
        theta_deg,
        eps_cyc: eps,
        d_max,
        d_mean,
        deviations,
        objective: value,
        shift,
    })
}

/// The complete docking solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSolution {
    /// Face correction applied to the moving scan.
    pub xf: RigidTransform,
    /// Shaft rotation about `axis` through `center`, degrees.
    pub theta_deg: f64,
    pub axis: Vector3<f64>,
    pub center: Point3,
    pub eps_pla: f64,
    pub eps_cyc: f64,
    pub per_hole_dev_mm: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PoseSolution {
    /// Face correction followed by the shaft rotation.
    pub fn full_transform(&self) -> RigidTransform {
        let n = Unit::new_normalize(self.axis);
        let turn = RigidTransform::from_axis_angle(&n, self.theta_deg.to_radians(), Vector3::zeros());
        let c = self.center.coords;
        let about = RigidTransform::translation_only(c)
            .compose(&turn)
            .compose(&RigidTransform::translation_only(-c));
        about.compose(&self.xf)
    }

    pub fn report(&self) -> PoseReport {
        let r = self.xf.rotation();
        let mut rm = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rm[3 * i + j] = r[(i, j)];
            }
        }
        PoseReport {
            r: rm,
            t: (*self.xf.translation()).into(),
            theta_deg: self.theta_deg,
            axis: self.axis.into(),
            center: self.center.coords.into(),
            eps_pla: self.eps_pla,
            eps_cyc: self.eps_cyc,
            per_hole_dev_mm: self.per_hole_dev_mm.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn from_report(r: &PoseReport) -> Result<Self> {
        let m = Matrix3::from_row_slice(&r.r);
        Ok(Self {
            xf: RigidTransform::new(m, Vector3::from(r.t))?,
            theta_deg: r.theta_deg,
            axis: Vector3::from(r.axis),
            center: Point3::from(r.center),
            eps_pla: r.eps_pla,
            eps_cyc: r.eps_cyc,
            per_hole_dev_mm: r.per_hole_dev_mm.clone(),
            warnings: r.warnings.clone(),
        })
    }
}

/// JSON form of [`PoseSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseReport {
    /// Rotation, row-major.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    /// Translation (mm).
    pub t: [f64; 3],
    pub theta_deg: f64,
    pub axis: [f64; 3],
    pub center: [f64; 3],
    pub eps_pla: f64,
    pub eps_cyc: f64,
    pub per_hole_dev_mm: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Packages the two stage results. `axis` and `center` are the shaft axis
/// the hole stage turned about.
pub fn assemble_pose(face: &FaceMatchResult, hole: &HoleMatchResult, axis: Vector3<f64>, center: Point3) -> PoseSolution {
    PoseSolution {
        xf: face.xf,
        theta_deg: hole.theta_deg,
        axis,
        center,
        eps_pla: face.eps_pla,
        eps_cyc: hole.eps_cyc,
        per_hole_dev_mm: hole.deviations.clone(),
        warnings: face.warnings.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(z: f64, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|i| {
                let r = 10.0 * ((i % 10) as f64 + 1.0) / 10.0;
                let a = (i / 10) as f64 * 0.37;
                Point3::new(r * a.cos(), r * a.sin(), z)
            })
            .collect()
    }

    fn face_input(a: Vec<Point3>, b: Vec<Point3>) -> FaceMatchInput {
        FaceMatchInput::new(
            &PointCloud::camera(a).unwrap(),
            &PointCloud::camera(b).unwrap(),
            -Vector3::z(),
            Vector3::z(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn coincident_planes_zero_distances() {
        let input = face_input(disc(0.0, 200), disc(0.0, 200));
        let (hi, hj) = directional_distances(&RigidTransform::identity(), &input);
        assert!(hi.iter().chain(&hj).all(|h| h.abs() < 1e-12));
    }

    #[test]
    fn translation_shifts_mean() {
        let input = face_input(disc(0.0, 200), disc(0.0, 200));
        let xf = RigidTransform::translation_only(Vector3::z());
        let (hi, _) = directional_distances(&xf, &input);
        let mean = hi.iter().sum::<f64>() / hi.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn in_plane_rotation_keeps_distances() {
        let input = face_input(disc(0.0, 200), disc(0.0, 200));
        let xf = RigidTransform::from_axis_angle(&Vector3::z_axis(), 0.7, Vector3::zeros());
        let (hi, _) = directional_distances(&xf, &input);
        assert!(hi.iter().all(|h| h.abs() < 1e-9));
    }

    #[test]
    fn eps_arithmetic() {
        // h population {0, 0, 0, 4}
        let a = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 4.0),
        ];
        let mut input = face_input(a, disc(0.0, 50));
        input.p_bc = Point3::origin();
        let e = eps_pla(&RigidTransform::identity(), &input, FacePopulation::AOnly).unwrap();
        assert!((e.eps_pla - 3.0).abs() < 1e-12);
        input.h0 = 0.0;
        assert!(eps_pla(&RigidTransform::identity(), &input, FacePopulation::AOnly).is_err());
    }

    #[test]
    fn parallel_discs_stay_put() {
        let input = face_input(disc(2.0, 400), disc(0.0, 400));
        let r = optimize_face_pose(&input, &FaceMatchConfig::default()).unwrap();
        assert!(r.eps_pla < 1e-6, "{}", r.eps_pla);
        assert!(r.xf.rotation_angle() < 1e-6);
        assert!(r.eps_pla <= r.initial_eps_pla);
    }

    #[test]
    fn rotation_about_axis_cases() {
        let p = Point3::new(1.0, 0.0, 0.5);
        let o = Point3::origin();
        let z = Vector3::z();
        assert_eq!(rotate_about_axis(&p, &z, &o, 0.0).unwrap(), p);
        assert!((rotate_about_axis(&p, &z, &o, TAU).unwrap() - p).norm() < 1e-9);
        let q = rotate_about_axis(&p, &z, &o, TAU / 4.0).unwrap();
        assert!((q - Point3::new(0.0, 1.0, 0.5)).norm() < 1e-12);
        assert!(rotate_about_axis(&p, &Vector3::zeros(), &o, 1.0).is_err());
    }

    fn pattern(n: usize, radius: f64, offset_deg: f64) -> Vec<Point3> {
        (0..n)
            .map(|k| {
                let a = (k as f64 * 360.0 / n as f64 + offset_deg).to_radians();
                Point3::new(radius * a.cos(), radius * a.sin(), 0.0)
            })
            .collect()
    }

    fn hole_input(offset_deg: f64) -> HoleMatchInput {
        HoleMatchInput {
            studs: pattern(6, 28.0, -offset_deg),
            holes: pattern(6, 28.0, 0.0)
                .into_iter()
                .map(|p| HoleAxis {
                    point: p,
                    direction: Vector3::z(),
                    radius: 4.0,
                })
                .collect(),
            axis: Vector3::z(),
            center: Point3::origin(),
            d0: 0.5,
            period_deg: 60.0,
        }
    }

    #[test]
    fn stud_on_axis_and_offset() {
        let mut input = hole_input(0.0);
        let d = hole_deviation(0.0, &input).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        input.studs[0] += Vector3::new(0.0, 1.0, 0.0);
        let d = hole_deviation_shifted(0.0, &input, 0).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_exact_offset() {
        for target in [0.0, 3.7, 9.99, 45.0] {
            let r = optimize_hole_rotation(&hole_input(target), &HoleMatchConfig::default()).unwrap();
            let diff = (r.theta_deg - target).rem_euclid(60.0);
            let diff = diff.min(60.0 - diff);
            assert!(diff < 1e-3, "target {target}: {}", r.theta_deg);
            assert!(r.d_max < 1e-3);
        }
    }

    #[test]
    fn mismatched_counts_rejected() {
        let mut input = hole_input(0.0);
        input.studs.pop();
        assert!(optimize_hole_rotation(&input, &HoleMatchConfig::default()).is_err());
        input.studs.clear();
        input.holes.clear();
        assert!(optimize_hole_rotation(&input, &HoleMatchConfig::default()).is_err());
    }

    #[test]
    fn identity_pose_record() {
        let face = FaceMatchResult {
            xf: RigidTransform::identity(),
            eps_pla: 0.0,
            h_max: 0.0,
            h_mean: 0.0,
            initial_eps_pla: 0.0,
            evaluations: 0,
            warnings: vec![],
        };
        let hole = HoleMatchResult {
            theta_deg: 0.0,
            eps_cyc: 0.0,
            d_max: 0.0,
            d_mean: 0.0,
            deviations: vec![0.0; 6],
            objective: 0.0,
            shift: 0,
        };
        let p = assemble_pose(&face, &hole, Vector3::z(), Point3::origin());
        assert_eq!(p.full_transform(), RigidTransform::identity());
        let rep = p.report();
        assert_eq!(rep.r, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(rep.per_hole_dev_mm, vec![0.0; 6]);
    }
}
