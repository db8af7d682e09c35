use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shaftdock::cloud::transform_to_turbine_frame;
use shaftdock::error::ErrorKind;
use shaftdock::pipeline::*;
use shaftdock::pose::{eps_pla, optimize_face_pose, FaceMatchConfig, FaceMatchInput, FacePopulation};
use shaftdock::segment::segment_planes;
use shaftdock::synth::{gen_bolt, gen_flange_pair, SceneSpec};
use shaftdock::{Error, PointCloud, RigidTransform};

fn cfg_for(spec: &SceneSpec) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.frame.offset = spec.camera_offset;
    cfg
}

fn validate(json: &str) {
    let schema: serde_json::Value = serde_json::from_str(RUN_REPORT_SCHEMA).unwrap();
    let instance: serde_json::Value = serde_json::from_str(json).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(&instance).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn full_report_matches_schema() {
    let spec = SceneSpec { bolt: true, ..Default::default() };
    let cfg = cfg_for(&spec);
    let (bolt, bolt_truth) = gen_bolt(&spec).unwrap();
    let (a, b, truth) = gen_flange_pair(&spec).unwrap();
    let mut ctx = RunContext::new(true);
    let mut report = RunReport::new("full", &cfg);
    let mut tr = ThreadReport::default();
    let mut mr = MatchReport::default();
    let out = run_thread(&bolt.cloud, &cfg, &mut ctx, &mut tr).and_then(|_| run_match(&a.cloud, &b.cloud, &cfg, &mut ctx, &mut mr));
    out.as_ref().unwrap();
    report.thread = Some(tr.clone());
    report.matching = Some(mr.clone());
    report.finish(&ctx, &out, true);
    let json = report.to_json();
    validate(&json);
    assert!(json.contains("\"timings_ms\""));

    let helix = tr.helix.unwrap();
    assert!((helix.radius - bolt_truth.radius).abs() < 0.01, "{}", helix.radius);
    assert!((helix.pitch - bolt_truth.pitch).abs() < 0.01, "{}", helix.pitch);
    let axis = Vector3::from(helix.axis);
    assert!(axis.dot(&Vector3::from(bolt_truth.axis)).abs() > 0.5f64.to_radians().cos());

    let pose = mr.pose.unwrap();
    assert!((pose.theta_deg - truth.theta.to_degrees()).abs() < 0.07);
    let names: Vec<&str> = ctx.intermediates.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, THREAD_INTERMEDIATES);

    // reports read back unchanged
    let back: RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn failed_report_names_stage_and_matches_schema() {
    let spec = SceneSpec::default();
    let mut cfg = cfg_for(&spec);
    cfg.holes.models = 8;
    let (a, b, _) = gen_flange_pair(&spec).unwrap();
    let mut ctx = RunContext::new(false);
    let mut mr = MatchReport::default();
    let out = run_match(&a.cloud, &b.cloud, &cfg, &mut ctx, &mut mr);
    let err = out.as_ref().unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Processing);
    let mut report = RunReport::new("match", &cfg);
    report.matching = Some(mr.clone());
    report.finish(&ctx, &out, false);
    assert_eq!(report.failure.as_ref().unwrap().stage, "holes-a");
    assert!(mr.face_a.is_some() && mr.pose.is_none());
    validate(&report.to_json());
}

#[test]
fn identical_scans_give_identity() {
    let spec = SceneSpec::default();
    let cfg = cfg_for(&spec);
    let (_, b, _) = gen_flange_pair(&spec).unwrap();
    let mut ctx = RunContext::new(false);
    let mut mr = MatchReport::default();
    run_match(&b.cloud, &b.cloud, &cfg, &mut ctx, &mut mr).unwrap();
    let pose = mr.pose.unwrap();
    let period = mr.hole_match.unwrap().period_deg;
    let theta = pose.theta_deg.min(period - pose.theta_deg);
    assert!(theta < 0.01, "theta {}", pose.theta_deg);
    let sol = shaftdock::pose::PoseSolution::from_report(&pose).unwrap();
    let xf = sol.full_transform();
    assert!(xf.rotation_angle().to_degrees() < 0.01 || (xf.rotation_angle().to_degrees() - period).abs() < 0.01);
    // the face pose alone is the identity
    assert!(sol.xf.rotation_angle().to_degrees() < 1e-3);
    assert!(sol.xf.translation().norm() < 1e-3);
}

#[test]
fn face_optimum_is_locally_minimal() {
    let spec = SceneSpec::default();
    let (a, b, _) = gen_flange_pair(&spec).unwrap();
    let off = Vector3::from(spec.camera_offset);
    let a = transform_to_turbine_frame(&a.cloud, &off).unwrap();
    let b = transform_to_turbine_frame(&b.cloud, &off).unwrap();
    let merged = PointCloud::camera(a.points().iter().chain(b.points()).copied().collect()).unwrap();
    let cfg = PipelineConfig::default();
    let seg = segment_planes(&merged, &cfg.planes, 5).unwrap();
    let (fa, fb) = split_faces(&a, &b, &seg.planes).unwrap();
    let (na, nb) = orient_normals(&fa, &fb, &b, 0.05, 20.0);
    let input = FaceMatchInput::new(&a.select(&fa.fit.inliers), &b.select(&fb.fit.inliers), na, nb, 1.0).unwrap();
    let res = optimize_face_pose(&input, &FaceMatchConfig::default()).unwrap();
    let pivot = input.p_bc;
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let mut below = 0;
    for _ in 0..100 {
        let axis = nb.cross(&Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let tilt = RigidTransform::from_axis_angle(&Unit::new_normalize(axis), r.random_range(-2e-4..2e-4), Vector3::zeros());
        let shift = nb * r.random_range(-0.01..0.01);
        let about = RigidTransform::translation_only(pivot.coords + shift)
            .compose(&tilt)
            .compose(&RigidTransform::translation_only(-pivot.coords));
        let e = eps_pla(&about.compose(&res.xf), &input, FacePopulation::Symmetric).unwrap();
        if e.eps_pla < res.eps_pla - 1e-6 {
            below += 1;
        }
    }
    assert_eq!(below, 0, "perturbations improved the face index");
}

#[test]
fn config_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    let mut cfg = PipelineConfig::default();
    cfg.seed = 42;
    cfg.hole_region.period_deg = Some(60.0);
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);

    std::fs::write(&path, "[hough]\nresolution = -1.0\n").unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap_err().kind(), ErrorKind::Config);
    std::fs::write(&path, "[face]\nh0 = 1.0\nwhat = 2\n").unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
    let missing = PipelineConfig::load(&dir.path().join("nope.toml")).unwrap_err();
    assert_eq!(missing.kind(), ErrorKind::Io);
}

#[test]
fn turbine_frame_input_is_not_shifted_twice() {
    let spec = SceneSpec { bolt: true, ..Default::default() };
    let cfg = cfg_for(&spec);
    let (bolt, _) = gen_bolt(&spec).unwrap();
    let turbine = transform_to_turbine_frame(&bolt.cloud, &Vector3::from(spec.camera_offset)).unwrap();
    let mut ctx = RunContext::new(false);
    let mut tr = ThreadReport::default();
    run_thread(&turbine, &cfg, &mut ctx, &mut tr).unwrap();
    assert!(ctx.warnings.iter().any(|w| w.contains("already in the turbine frame")));
    assert!((tr.helix.unwrap().radius - spec.helix.radius).abs() < 0.01);
}
