use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use posefuse::fusion::{fuse, matrix_fisher, FusedPose};
use posefuse::harness::io::{
    read_json, read_poses_csv, write_frames_csv, write_json, write_poses_csv, DetectionRecord, EstimateEntry,
    EstimateRecord, FusedRecord,
};
use posefuse::harness::{
    ablate_single_object, build_report, detect_frame, estimate_parts, run_pipeline, FrameInput, FrameRecord,
    PipelineConfig,
};
use posefuse::pnp::PartPoseEstimate;
use posefuse::sampler::PoseSampler;
use posefuse::{CameraIntrinsics, Scene};

const EXIT_CONFIG: u8 = 2;
const EXIT_EMPTY: u8 = 3;

#[derive(Parser)]
#[command(name = "posefuse", version, about = "Multi-part ship pose estimation with Bayesian fusion on SO(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scene JSON (part boxes in the ship frame); the built-in ship if omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Intrinsics JSON; 640×480 with a 60° horizontal field of view if omitted.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Pipeline config, TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file, or directory for `run`; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample camera poses around the ship and write them as CSV.
    SamplePoses {
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate detector output for each pose of a pose CSV.
    Simulate {
        #[arg(long)]
        poses: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recover per-part poses from detections JSON with EPnP and RANSAC.
    Estimate {
        #[arg(long)]
        detections: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Gate and fuse per-part estimates.
    Fuse {
        #[arg(long)]
        estimates: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// End to end: sample (or replay) poses, simulate, estimate, fuse and report.
    Run {
        /// Replay these poses instead of sampling.
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Single-part error table from a frames JSON written by `run`.
    Ablate {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Attitude error angle (degrees) not exceeded with probability p.
    Uq {
        #[arg(long, required_unless_present = "grid")]
        d: Option<f64>,
        #[arg(long, required_unless_present = "grid")]
        p: Option<f64>,
        /// Print the table over d ∈ {0.9, 0.99, 0.999} and p ∈ {0.5, 0.9, 0.95, 0.99}.
        #[arg(long)]
        grid: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the summary report from a frames JSON.
    Report {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Empty(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type CliResult = Result<(), Failure>;

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

struct Setup {
    scene: Scene,
    intr: CameraIntrinsics,
    cfg: PipelineConfig,
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<Setup, Failure> {
    let scene = match &common.scene {
        Some(p) => Scene::load(p).with_context(|| format!("scene {}", p.display())).map_err(config_err)?,
        None => Scene::default_ship(),
    };
    let intr = match &common.intrinsics {
        Some(p) => CameraIntrinsics::load(p)
            .with_context(|| format!("intrinsics {}", p.display()))
            .map_err(config_err)?,
        None => CameraIntrinsics::default(),
    };
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(config_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(Setup {
        scene,
        intr,
        cfg,
        out: common.out.clone(),
    })
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn sink(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> anyhow::Result<()> {
    let mut w = sink(out)?;
    write_json(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn sample(ctx: &Setup, n: Option<usize>) -> Result<Vec<FrameInput>, Failure> {
    let n = n.unwrap_or(ctx.cfg.n_frames);
    let sampler = PoseSampler::new(&ctx.cfg.sampler).map_err(config_err)?;
    let poses = sampler.sample_poses(ctx.cfg.sampler.seed, n).map_err(config_err)?;
    Ok(poses
        .into_iter()
        .enumerate()
        .map(|(frame_id, pose)| FrameInput {
            frame_id,
            timestamp: None,
            pose,
        })
        .collect())
}

fn read_poses(path: &Path) -> anyhow::Result<Vec<FrameInput>> {
    read_poses_csv(open(path)?).with_context(|| format!("reading poses {}", path.display()))
}

fn sample_poses(common: &Common, n: Option<usize>) -> CliResult {
    let ctx = load(common)?;
    let frames = sample(&ctx, n)?;
    let mut w = sink(&ctx.out)?;
    write_poses_csv(&mut w, &frames).context("writing poses")?;
    w.flush().context("writing poses")?;
    Ok(())
}

fn simulate(common: &Common, poses: &Path) -> CliResult {
    let ctx = load(common)?;
    let records: Vec<DetectionRecord> = read_poses(poses)?
        .iter()
        .map(|f| DetectionRecord {
            frame_id: f.frame_id,
            detections: detect_frame(&ctx.scene, &ctx.intr, f, &ctx.cfg).detections,
        })
        .collect();
    emit_json(&ctx.out, &records)?;
    Ok(())
}

fn estimate(common: &Common, detections: &Path) -> CliResult {
    let ctx = load(common)?;
    let input: Vec<DetectionRecord> =
        read_json(open(detections)?).with_context(|| format!("reading detections {}", detections.display()))?;
    let mut records = Vec::with_capacity(input.len());
    for rec in &input {
        rec.detections
            .validate()
            .with_context(|| format!("frame {}", rec.frame_id))?;
        let parts = estimate_parts(&ctx.scene, &ctx.intr, rec.frame_id, &rec.detections, &ctx.cfg.ransac)
            .into_iter()
            .filter_map(|a| match a.result {
                Ok(e) => Some(EstimateEntry::from(&e)),
                Err(e) => {
                    log::info!("frame {} class {}: {e}", rec.frame_id, a.class_index);
                    None
                }
            })
            .collect();
        records.push(EstimateRecord {
            frame_id: rec.frame_id,
            parts,
        });
    }
    emit_json(&ctx.out, &records)?;
    if records.iter().all(|r| r.parts.is_empty()) {
        return Err(Failure::Empty("no part pose was recovered in any frame".into()));
    }
    Ok(())
}

fn fuse_cmd(common: &Common, estimates: &Path) -> CliResult {
    let ctx = load(common)?;
    let input: Vec<EstimateRecord> =
        read_json(open(estimates)?).with_context(|| format!("reading estimates {}", estimates.display()))?;
    let mut out = Vec::with_capacity(input.len());
    for rec in &input {
        let parts = rec
            .parts
            .iter()
            .map(EstimateEntry::to_estimate)
            .collect::<Result<Vec<PartPoseEstimate>, _>>()
            .with_context(|| format!("frame {}", rec.frame_id))?;
        let fused: Option<FusedPose> = fuse(&parts, &ctx.cfg.fusion).ok();
        out.push(FusedRecord::new(rec.frame_id, fused.as_ref()));
    }
    emit_json(&ctx.out, &out)?;
    if out.iter().all(|r| matches!(r, FusedRecord::Gap { .. })) {
        return Err(Failure::Empty("every frame is a gap".into()));
    }
    Ok(())
}

fn run(common: &Common, poses: Option<&Path>, n: Option<usize>) -> CliResult {
    let ctx = load(common)?;
    let frames = match poses {
        Some(p) => read_poses(p)?,
        None => sample(&ctx, n)?,
    };
    let records = run_pipeline(&ctx.scene, &ctx.intr, &frames, &ctx.cfg);
    let report = build_report(&records, &ctx.scene, ctx.cfg.sampler.l_max, ctx.cfg.fusion.scalar_d);
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("posefuse-out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    emit_json(&Some(dir.join("report.json")), &report)?;
    emit_json(&Some(dir.join("frames.json")), &records)?;
    let mut w = sink(&Some(dir.join("frames.csv")))?;
    write_frames_csv(&mut w, &records).context("writing frames.csv")?;
    w.flush().context("writing frames.csv")?;
    log::info!(
        "{} frames, {} fused, {} gaps; wrote {}",
        report.n_frames,
        report.n_fused,
        report.n_gaps,
        dir.display()
    );
    if report.n_fused == 0 {
        return Err(Failure::Empty(format!("0 usable frames out of {}", report.n_frames)));
    }
    Ok(())
}

fn read_frames(path: &Path) -> anyhow::Result<Vec<FrameRecord>> {
    read_json(open(path)?).with_context(|| format!("reading frames {}", path.display()))
}

fn ablate(common: &Common, frames: &Path) -> CliResult {
    let ctx = load(common)?;
    let rows = ablate_single_object(&read_frames(frames)?, &ctx.scene);
    emit_json(&ctx.out, &rows)?;
    if rows.iter().all(|r| r.absent) {
        return Err(Failure::Empty("no part survived the gate in any frame".into()));
    }
    Ok(())
}

fn report(common: &Common, frames: &Path) -> CliResult {
    let ctx = load(common)?;
    let records = read_frames(frames)?;
    let report = build_report(&records, &ctx.scene, ctx.cfg.sampler.l_max, ctx.cfg.fusion.scalar_d);
    emit_json(&ctx.out, &report)?;
    if report.n_fused == 0 {
        return Err(Failure::Empty(format!("0 usable frames out of {}", report.n_frames)));
    }
    Ok(())
}

const GRID_D: [f64; 3] = [0.9, 0.99, 0.999];
const GRID_P: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

fn quantile_deg(d: f64, p: f64) -> Result<f64, Failure> {
    let uq = matrix_fisher::AngleUq::from_d(d).map_err(config_err)?;
    Ok(uq.quantile(p).map_err(config_err)?.to_degrees())
}

fn uq(common: &Common, d: Option<f64>, p: Option<f64>, grid: bool) -> CliResult {
    let mut w = sink(&common.out)?;
    if let (Some(d), Some(p)) = (d, p) {
        writeln!(w, "{:.4}", quantile_deg(d, p)?).context("writing")?;
    }
    if grid {
        write!(w, "d\\p").context("writing")?;
        for p in GRID_P {
            write!(w, "\t{p}").context("writing")?;
        }
        writeln!(w).context("writing")?;
        for d in GRID_D {
            write!(w, "{d}").context("writing")?;
            for p in GRID_P {
                write!(w, "\t{:.4}", quantile_deg(d, p)?).context("writing")?;
            }
            writeln!(w).context("writing")?;
        }
    }
    w.flush().context("writing")?;
    Ok(())
}

/// The error and its causes, skipping causes whose text the outer message
/// already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SamplePoses { n, common } => sample_poses(common, *n),
        Command::Simulate { poses, common } => simulate(common, poses),
        Command::Estimate { detections, common } => estimate(common, detections),
        Command::Fuse { estimates, common } => fuse_cmd(common, estimates),
        Command::Run { poses, n, common } => run(common, poses.as_deref(), *n),
        Command::Ablate { frames, common } => ablate(common, frames),
        Command::Uq { d, p, grid, common } => uq(common, *d, *p, *grid),
        Command::Report { frames, common } => report(common, frames),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("posefuse: configuration error: {}", describe(&e));
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Empty(msg)) => {
            eprintln!("posefuse: no usable output: {msg}");
            ExitCode::from(EXIT_EMPTY)
        }
        Err(Failure::Other(e)) => {
            eprintln!("posefuse: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
