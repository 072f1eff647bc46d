//! Command-line front end: odometry runs, synthetic scene generation,
//! pairwise registration and evaluation metrics.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{UnitQuaternion, Vector3};

use gpslam::config::SystemConfig;
use gpslam::pipeline::{run_pipeline, FramePacket};
use gpslam::registration::register_scan;
use gpslam::toolkit::eval::{closest_point_rmse, voxel_downsample};
use gpslam::toolkit::synth::SceneSpec;
use gpslam::toolkit::{
    load_cloud, load_trajectory, mean_map_entropy, save_cloud, save_trajectory, trajectory_error,
};
use gpslam::{Error, GPMap, PointCloud, PoseSE3, Result};

#[derive(Parser)]
#[command(name = "gpslam", about = "Lidar odometry on regionalized GP surface maps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the odometry pipeline over a scan directory or a single scan.
    Run(RunArgs),
    /// Generate scans and a ground-truth trajectory from a scene spec.
    Synth(SynthArgs),
    /// Register one cloud against another, optionally from a perturbed start.
    Register(RegisterArgs),
    /// Evaluation metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Scan directory (sorted .xyz/.pcd files) or a single scan file.
    #[arg(long)]
    input: PathBuf,
    /// Key-value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the final map samples here (`x y z variance direction` lines).
    #[arg(long)]
    output_map: Option<PathBuf>,
    /// Write the trajectory here (`timestamp tx ty tz qx qy qz qw` lines).
    #[arg(long)]
    output_traj: Option<PathBuf>,
    /// Override the configured refinement switch.
    #[arg(long, value_parser = parse_on_off)]
    refine: Option<bool>,
    /// Write per-frame timing lines here:
    /// `seq t_preprocess_ms t_match_ms t_align_ms t_update_ms`.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Only export map samples with variance at or below this value.
    #[arg(long)]
    map_variance_thr: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec file (structured text).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory; receives scan_NNNN.xyz files and groundtruth.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Cloud to align.
    #[arg(long)]
    source: PathBuf,
    /// Cloud to align against.
    #[arg(long)]
    target: PathBuf,
    /// Initial perturbation "tx ty tz yaw_deg" applied to the source.
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Mean map entropy of a point cloud.
    Mme {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        radius: f64,
    },
    /// Trajectory error against ground truth.
    Traj {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Timestamp association tolerance, seconds.
        #[arg(long, default_value_t = 0.05)]
        time_tol: f64,
    },
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Register(args) => cmd_register(args),
        Command::Eval(cmd) => cmd_eval(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::load(p),
        None => Ok(SystemConfig::default()),
    }
}

/// Scan files of a directory in name order, or the single given file.
fn scan_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("xyz") | Some("pcd")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .xyz or .pcd scans under {}",
            input.display()
        )));
    }
    Ok(files)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(refine) = args.refine {
        cfg.pipeline.refine_enabled = refine;
    }

    let mut frames = Vec::new();
    for (seq, path) in scan_files(&args.input)?.iter().enumerate() {
        let loaded = load_cloud(path)?;
        for w in &loaded.warnings {
            eprintln!("{}: {w}", path.display());
        }
        frames.push(FramePacket {
            seq,
            timestamp: seq as f64 * 0.1,
            scan: loaded.points,
        });
    }
    if frames.is_empty() {
        return Err(Error::Config("no frames to process".into()));
    }

    let res = run_pipeline(&frames, cfg.grid, cfg.kernel, &cfg.matching, &cfg.pipeline);

    let flagged = res.core.stats.iter().filter(|s| s.flagged).count();
    println!(
        "processed {} frames ({} flagged), map: {} cells / {} samples",
        frames.len(),
        flagged,
        res.core.map.cell_count(),
        res.core.map.sample_count()
    );
    if let Some(r) = &res.refined {
        println!(
            "refinement: {} corrections, {} failed batches",
            r.corrections.len(),
            r.failed_batches
        );
    }

    if let Some(path) = &args.output_traj {
        save_trajectory(path, res.trajectory())?;
        println!("trajectory -> {}", path.display());
    }
    if let Some(path) = &args.output_map {
        let mut w = BufWriter::new(fs::File::create(path)?);
        res.core.map.export_samples(&mut w, args.map_variance_thr)?;
        println!("map -> {}", path.display());
    }
    if let Some(path) = &args.stats {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "# columns: seq t_preprocess_ms t_match_ms t_align_ms t_update_ms")?;
        for st in &res.core.stats {
            writeln!(w, "{}", st.line())?;
        }
        println!("stats -> {}", path.display());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SceneSpec::load(&args.scene)?;
    if spec.path.is_empty() {
        return Err(Error::Config("scene has no path poses".into()));
    }
    fs::create_dir_all(&args.out)?;
    let mut gt = Vec::with_capacity(spec.path.len());
    for (i, pp) in spec.path.iter().enumerate() {
        let scan = spec.synth_scan(i)?;
        let path = args.out.join(format!("scan_{i:04}.xyz"));
        save_cloud(&scan, &path)?;
        gt.push((pp.t, pp.pose()));
    }
    let gt_path = args.out.join("groundtruth.txt");
    save_trajectory(&gt_path, &gt)?;
    println!(
        "wrote {} scans and {} to {}",
        spec.path.len(),
        gt_path.file_name().unwrap().to_string_lossy(),
        args.out.display()
    );
    Ok(())
}

fn parse_perturb(text: &str) -> Result<PoseSE3> {
    let parts: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("perturbation '{text}': {e}")))?;
    if parts.len() != 4 {
        return Err(Error::Config(
            "perturbation needs exactly 'tx ty tz yaw_deg'".into(),
        ));
    }
    Ok(PoseSE3::new(
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), parts[3].to_radians()),
        Vector3::new(parts[0], parts[1], parts[2]),
    ))
}

fn cmd_register(args: RegisterArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let source = load_cloud(&args.source)?.points;
    let target = load_cloud(&args.target)?.points;
    let perturb = match &args.perturb {
        Some(p) => parse_perturb(p)?,
        None => PoseSE3::identity(),
    };

    let map = GPMap::from_cloud(&target, cfg.grid, cfg.kernel);
    // Thin the clouds for the RMSE report only; registration sees them all.
    let rmse_src = voxel_downsample(&source, 0.2);
    let rmse_tgt = voxel_downsample(&target, 0.2);
    let rmse_of = |pose: &PoseSE3| {
        let moved: PointCloud = rmse_src.iter().map(|p| pose.transform(p)).collect();
        closest_point_rmse(&moved, &rmse_tgt)
    };

    // One outer iteration at a time so the RMSE trace is visible.
    let mut step_cfg = cfg.matching;
    step_cfg.max_outer_iters = 1;
    let mut pose = perturb;
    println!("iter 0: rmse {:.6}", rmse_of(&pose));
    for it in 1..=cfg.matching.max_outer_iters {
        let reg = register_scan(&source, &map, pose, &step_cfg)?;
        let delta = reg.pose.compose(&pose.inverse());
        pose = reg.pose;
        println!("iter {it}: rmse {:.6}", rmse_of(&pose));
        if delta.translation_norm() < cfg.matching.pose_epsilon_trans
            && delta.rotation_angle() < cfg.matching.pose_epsilon_rot
        {
            break;
        }
    }

    let t = pose.translation;
    let q = pose.rotation;
    println!("pose: t = [{:.6} {:.6} {:.6}]", t.x, t.y, t.z);
    println!(
        "pose: q = [{:.6} {:.6} {:.6} {:.6}] (x y z w), yaw {:.4} deg",
        q.i,
        q.j,
        q.k,
        q.w,
        pose.yaw().to_degrees()
    );
    Ok(())
}

fn cmd_eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Mme { cloud, radius } => {
            let points = load_cloud(&cloud)?.points;
            let mme = mean_map_entropy(&points, radius)?;
            println!("mme {mme:.6}");
        }
        EvalCommand::Traj { est, gt, time_tol } => {
            let est = load_trajectory(&est)?;
            let gt = load_trajectory(&gt)?;
            let rep = trajectory_error(&est, &gt, time_tol)?;
            println!("associated {}", rep.associated);
            println!("avg_translation_error {:.6}", rep.avg_translation_error);
            println!("avg_xy_error {:.6}", rep.avg_xy_error);
            println!("final_elevation_error {:.6}", rep.final_elevation_error);
        }
    }
    Ok(())
}
