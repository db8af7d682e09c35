use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use shaftdock::cluster::ClusterMode;
use shaftdock::error::{Error, ErrorKind, Result};
use shaftdock::io::{read_cloud_auto, write_cloud_auto};
use shaftdock::pca::PlaneView;
use shaftdock::pipeline::{run_match, run_thread, MatchReport, PipelineConfig, RunContext, RunReport, ThreadReport};
use shaftdock::pose::PoseReport;
use shaftdock::synth::{format_labels, gen_bolt, gen_flange_pair, BoltTruth, SceneSpec};
use shaftdock::PointCloud;

#[derive(Parser, Debug)]
#[command(name = "shaftdock", version, about = "Shaft-hole docking measurement from point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic flange pair (and optionally a bolt) with ground truth.
    Synth(SynthArgs),
    /// Extract the thread helix from a bolt scan.
    Thread {
        /// Bolt scan (.ply or .xyz); defaults to `paths.input` of the config.
        input: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compute the docking pose of scan A against scan B.
    Match {
        /// Moving flange scan; defaults to `paths.scan_a`.
        scan_a: Option<PathBuf>,
        /// Fixed flange scan; defaults to `paths.scan_b`.
        scan_b: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the thread and match flows in one go.
    Full {
        /// Bolt scan; defaults to `paths.input`.
        #[arg(long)]
        bolt: Option<PathBuf>,
        scan_a: Option<PathBuf>,
        scan_b: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene description (TOML); defaults apply otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write bolt.ply.
    #[arg(long)]
    bolt: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected three comma-separated numbers".to_string())
}

fn parse_view(s: &str) -> std::result::Result<PlaneView, String> {
    PlaneView::parse(s).ok_or_else(|| "expected 23, 13 or 12".to_string())
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Pipeline configuration (TOML). Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and intermediate clouds.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the intermediate clouds of the thread flow.
    #[arg(long)]
    keep_intermediate: bool,
    /// Leave stage timings out of the report.
    #[arg(long)]
    no_timings: bool,
    /// Camera-to-turbine offset `x,y,z` (mm).
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    offset: Option<[f64; 3]>,
    #[arg(long)]
    sor_k: Option<usize>,
    #[arg(long)]
    sor_nsigma: Option<f64>,
    /// Projection plane: 23, 13 or 12.
    #[arg(long, value_parser = parse_view)]
    pca_view: Option<PlaneView>,
    /// Bolt axis `x,y,z` replacing the PCA view axis.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    axis_override: Option<[f64; 3]>,
    #[arg(long)]
    dbscan_eps: Option<f64>,
    #[arg(long)]
    dbscan_minpts: Option<usize>,
    /// Grow only the seed's cluster instead of labelling every point.
    #[arg(long)]
    seed_expansion: bool,
    #[arg(long)]
    hough_res: Option<f64>,
    #[arg(long)]
    hough_rmin: Option<f64>,
    #[arg(long)]
    hough_rmax: Option<f64>,
    #[arg(long)]
    hough_dmin: Option<f64>,
    #[arg(long)]
    hough_dmax: Option<f64>,
    /// Plane RANSAC iterations per model, comma separated.
    #[arg(long, value_parser = parse_list)]
    ransac_k: Option<Vec<usize>>,
    /// RANSAC inlier threshold (mm) for planes and holes.
    #[arg(long)]
    ransac_tau: Option<f64>,
    /// Number of planes to segment.
    #[arg(long)]
    planes: Option<usize>,
    /// Holes per flange face.
    #[arg(long)]
    expected_holes: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed, c.seed);
        set!(self.offset, c.frame.offset);
        set!(self.sor_k, c.sor.k);
        set!(self.sor_nsigma, c.sor.n_sigma);
        set!(self.pca_view, c.pca.view);
        if self.axis_override.is_some() {
            c.pca.axis_override = self.axis_override;
        }
        if self.dbscan_eps.is_some() {
            c.dbscan.eps = self.dbscan_eps;
        }
        set!(self.dbscan_minpts, c.dbscan.min_pts);
        if self.seed_expansion {
            c.dbscan.mode = ClusterMode::SeedExpansion;
        }
        set!(self.hough_res, c.hough.resolution);
        set!(self.hough_rmin, c.hough.r_min);
        set!(self.hough_rmax, c.hough.r_max);
        set!(self.hough_dmin, c.hough.d_min);
        set!(self.hough_dmax, c.hough.d_max);
        set!(self.ransac_k, c.planes.iterations);
        if let Some(t) = self.ransac_tau {
            c.planes.threshold = t;
            c.holes.threshold = t;
        }
        set!(self.planes, c.planes.models);
        set!(self.expected_holes, c.holes.models);
        if let Some(o) = &self.out {
            c.paths.output_dir = Some(o.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn require(path: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given on the command line or in the config")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

enum Inputs {
    Thread(PointCloud),
    Match(PointCloud, PointCloud),
    Full(PointCloud, PointCloud, PointCloud),
}

fn run_pipeline(name: &str, run: &RunArgs, cfg: PipelineConfig, inputs: Inputs) -> Result<Result<()>> {
    let mut ctx = RunContext::new(run.keep_intermediate);
    let mut report = RunReport::new(name, &cfg);
    let outcome = match &inputs {
        Inputs::Thread(bolt) => {
            let mut tr = ThreadReport::default();
            let r = run_thread(bolt, &cfg, &mut ctx, &mut tr);
            report.thread = Some(tr);
            r
        }
        Inputs::Match(a, b) => {
            let mut mr = MatchReport::default();
            let r = run_match(a, b, &cfg, &mut ctx, &mut mr);
            report.matching = Some(mr);
            r
        }
        Inputs::Full(bolt, a, b) => {
            let mut tr = ThreadReport::default();
            let mut r = run_thread(bolt, &cfg, &mut ctx, &mut tr);
            report.thread = Some(tr);
            if r.is_ok() {
                let mut mr = MatchReport::default();
                r = run_match(a, b, &cfg, &mut ctx, &mut mr);
                report.matching = Some(mr);
            }
            r
        }
    };
    report.finish(&ctx, &outcome, !run.no_timings);
    let json = report.to_json();
    print!("{json}");

    let out_dir = cfg
        .paths
        .output_dir
        .clone()
        .or_else(|| run.keep_intermediate.then(|| PathBuf::from(".")));
    if let Some(dir) = out_dir {
        create_dir(&dir)?;
        write_file(&dir.join("report.json"), &json)?;
        for (file, cloud) in &ctx.intermediates {
            write_cloud_auto(cloud, &dir.join(file))?;
        }
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct Truth {
    /// Docking pose that maps measured A onto its assembled placement.
    pose: PoseReport,
    bolt: Option<BoltTruth>,
    scene: SceneSpec,
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SceneSpec::from_toml(&text)?
        }
        None => SceneSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.bolt |= args.bolt;
    spec.validate()?;

    let (a, b, truth) = gen_flange_pair(&spec)?;
    let bolt = if spec.bolt { Some(gen_bolt(&spec)?) } else { None };
    let out = &args.out;
    create_dir(out)?;
    write_cloud_auto(&a.cloud, &out.join("scan_a.ply"))?;
    write_cloud_auto(&b.cloud, &out.join("scan_b.ply"))?;
    let mut labelled = vec![("scan_a", &a), ("scan_b", &b)];
    if let Some((cloud, _)) = &bolt {
        write_cloud_auto(&cloud.cloud, &out.join("bolt.ply"))?;
        labelled.push(("bolt", cloud));
    }
    write_file(&out.join("labels.txt"), &format_labels(&labelled))?;
    let t = Truth {
        pose: truth.pose().report(),
        bolt: bolt.as_ref().map(|(_, t)| t.clone()),
        scene: spec.clone(),
    };
    let mut json = serde_json::to_string_pretty(&t).expect("truth is serialisable");
    json.push('\n');
    write_file(&out.join("truth.json"), &json)
}

fn execute(cli: Cli) -> Result<Result<()>> {
    match cli.command {
        Command::Synth(args) => synth(args).map(Ok),
        Command::Thread { input, run } => {
            let cfg = run.config()?;
            let input = require(input, &cfg.paths.input, "bolt scan")?;
            let bolt = read_cloud_auto(&input)?;
            run_pipeline("thread", &run, cfg, Inputs::Thread(bolt))
        }
        Command::Match { scan_a, scan_b, run } => {
            let cfg = run.config()?;
            let a = read_cloud_auto(&require(scan_a, &cfg.paths.scan_a, "scan A")?)?;
            let b = read_cloud_auto(&require(scan_b, &cfg.paths.scan_b, "scan B")?)?;
            run_pipeline("match", &run, cfg, Inputs::Match(a, b))
        }
        Command::Full { bolt, scan_a, scan_b, run } => {
            let cfg = run.config()?;
            let bolt = read_cloud_auto(&require(bolt, &cfg.paths.input, "bolt scan")?)?;
            let a = read_cloud_auto(&require(scan_a, &cfg.paths.scan_a, "scan A")?)?;
            let b = read_cloud_auto(&require(scan_b, &cfg.paths.scan_b, "scan B")?)?;
            run_pipeline("full", &run, cfg, Inputs::Full(bolt, a, b))
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(match e.kind() {
        ErrorKind::Processing => 1,
        ErrorKind::Io => 2,
        ErrorKind::Config => 3,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) | Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
