//! Command implementations behind the `blurtrack` binary.
//!
//! Subcommands: `synth` (generate a blur dataset), `track` (run the tracker
//! over a dataset), `eval` (RMSE ATE / frame drops between two TUM files)
//! and `selfcheck` (numerical invariants). Exit codes: 0 success, 1
//! check/tracking failure, 2 usage error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::blursim::{
    generate_sequence, synth_trajectory, PlanarScene, SequenceTiming, TrajectoryKind,
};
use crate::camera::PinholeCamera;
use crate::config::RunConfig;
use crate::eval::{compute_ate, frame_drop_rate_from_report, AlignMode, Trajectory};
use crate::selfcheck::run_selfcheck;
use crate::tracker::sequence::{track_sequence, write_report, write_trajectory};
use crate::tracker::TrackStatus;

#[derive(Parser)]
#[command(
    name = "blurtrack",
    about = "Motion-blur-aware direct image alignment toolchain",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blur dataset on a textured plane.
    Synth(SynthArgs),
    /// Track a dataset and write the estimated trajectory plus a report.
    Track(TrackArgs),
    /// Compare an estimated trajectory against ground truth.
    Eval(EvalArgs),
    /// Run the numerical self-check suite.
    Selfcheck(SelfcheckArgs),
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected `x,y,z`, got {s:?}"));
    }
    let mut v = [0.0f64; 3];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p
            .trim()
            .parse()
            .map_err(|_| format!("bad component {p:?}"))?;
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Trajectory family.
    #[arg(long, default_value = "sinusoidal_shake")]
    kind: String,
    /// Seed for the noise texture.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 27.0)]
    fps: f64,
    #[arg(long, default_value_t = 0.02)]
    exposure: f64,
    /// Virtual frames averaged per blurred image.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Constant-velocity translation (m/s), `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0.3,0,0")]
    velocity: Vector3<f64>,
    /// Constant angular velocity (rad/s), `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    angular_velocity: Vector3<f64>,
    /// Shake translation amplitudes (m), `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0.08,0.32,0")]
    trans_amplitude: Vector3<f64>,
    /// Shake translation phases (rad), `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,1.5707963267948966,0")]
    trans_phase: Vector3<f64>,
    /// Shake rotation-vector amplitudes (rad), `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    rot_amplitude: Vector3<f64>,
    /// Shake rotation phases (rad), `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    rot_phase: Vector3<f64>,
    /// Shake frequency (Hz).
    #[arg(long, default_value_t = 2.0)]
    frequency: f64,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    #[arg(long, default_value_t = 500.0)]
    focal: f64,
    /// Plane distance from the nominal camera (m).
    #[arg(long, default_value_t = 2.0)]
    scene_depth: f64,
    /// Texture resolution (texels per side).
    #[arg(long, default_value_t = 2048)]
    texture_size: usize,
    /// Texel edge length (m).
    #[arg(long, default_value_t = 0.004)]
    texel: f64,
    /// Texture smoothing sigma (texels).
    #[arg(long, default_value_t = 3.0)]
    texture_sigma: f64,
}

fn run_synth(args: &SynthArgs) -> Result<(), String> {
    let kind = match args.kind.as_str() {
        "constant_velocity" => TrajectoryKind::ConstantVelocity {
            velocity: args.velocity,
            angular_velocity: args.angular_velocity,
        },
        "sinusoidal_shake" => TrajectoryKind::SinusoidalShake {
            trans_amplitude: args.trans_amplitude,
            trans_phase: args.trans_phase,
            rot_amplitude: args.rot_amplitude,
            rot_phase: args.rot_phase,
            frequency: args.frequency,
        },
        other => {
            return Err(format!(
                "unknown kind {other:?}; expected constant_velocity or sinusoidal_shake"
            ))
        }
    };
    let timing = SequenceTiming {
        frame_rate: args.fps,
        exposure: args.exposure,
        n_frames: args.frames,
    };
    let texture = PlanarScene::noise_texture(
        args.texture_size,
        args.texture_size,
        args.texture_sigma,
        args.seed,
    );
    let scene =
        PlanarScene::new(texture, args.scene_depth, args.texel).map_err(|e| e.to_string())?;
    let cx = (args.width as f64 - 1.0) / 2.0;
    let cy = (args.height as f64 - 1.0) / 2.0;
    let cam = PinholeCamera::new(args.focal, args.focal, cx, cy, args.width, args.height);
    let frames = synth_trajectory(&kind, &timing).map_err(|e| e.to_string())?;
    let summary = generate_sequence(&scene, &cam, &frames, args.samples, &args.out)
        .map_err(|e| e.to_string())?;
    println!(
        "wrote {} frames to {}\nstreak_px min {:.3} mean {:.3} max {:.3}",
        summary.n_frames,
        args.out.display(),
        summary.min_streak(),
        summary.mean_streak(),
        summary.max_streak()
    );
    Ok(())
}

#[derive(Args)]
struct TrackArgs {
    /// Dataset directory (overrides the config file's dataset_dir).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory (overrides the config file's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sharp | blur-naive | mba.
    #[arg(long)]
    mode: Option<String>,
    /// Run the blur-aware tracker with the exposure forced to zero.
    #[arg(long)]
    force_zero_exposure: bool,
    /// Directory of externally provided depth maps (default: dataset depth).
    #[arg(long)]
    depth_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth_noise_sigma: Option<f64>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    n_virtual: Option<usize>,
    #[arg(long)]
    pyramid_levels: Option<usize>,
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    lm_lambda_init: Option<f64>,
    #[arg(long)]
    lm_lambda_factor: Option<f64>,
    #[arg(long)]
    convergence_eps: Option<f64>,
    #[arg(long)]
    min_valid_residual_fraction: Option<f64>,
    #[arg(long)]
    outlier_threshold: Option<f64>,
    #[arg(long)]
    keypoint_count: Option<usize>,
    #[arg(long)]
    keyframe_translation_frac: Option<f64>,
    #[arg(long)]
    keyframe_min_valid_fraction: Option<f64>,
}

fn run_track(args: &TrackArgs) -> Result<(), String> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.merge_file(path).map_err(|e| e.to_string())?;
    }
    // Flags take precedence over the file; route them through the same
    // validated setter.
    let mut overrides: Vec<(&str, String)> = Vec::new();
    if let Some(v) = &args.mode {
        overrides.push(("mode", v.clone()));
    }
    if args.force_zero_exposure {
        overrides.push(("force_zero_exposure", "true".into()));
    }
    if let Some(v) = &args.depth_dir {
        overrides.push(("depth_dir", v.display().to_string()));
    }
    if let Some(v) = args.seed {
        overrides.push(("seed", v.to_string()));
    }
    macro_rules! num_override {
        ($field:expr, $key:literal) => {
            if let Some(v) = $field {
                overrides.push(($key, v.to_string()));
            }
        };
    }
    num_override!(args.depth_noise_sigma, "depth_noise_sigma");
    num_override!(args.patch_size, "patch_size");
    num_override!(args.n_virtual, "n_virtual");
    num_override!(args.pyramid_levels, "pyramid_levels");
    num_override!(args.huber_delta, "huber_delta");
    num_override!(args.max_iterations, "max_iterations");
    num_override!(args.lm_lambda_init, "lm_lambda_init");
    num_override!(args.lm_lambda_factor, "lm_lambda_factor");
    num_override!(args.convergence_eps, "convergence_eps");
    num_override!(
        args.min_valid_residual_fraction,
        "min_valid_residual_fraction"
    );
    num_override!(args.outlier_threshold, "outlier_threshold");
    num_override!(args.keypoint_count, "keypoint_count");
    num_override!(args.keyframe_translation_frac, "keyframe_translation_frac");
    num_override!(
        args.keyframe_min_valid_fraction,
        "keyframe_min_valid_fraction"
    );
    if let Some(v) = &args.dataset {
        overrides.push(("dataset_dir", v.display().to_string()));
    }
    if let Some(v) = &args.out {
        overrides.push(("output_dir", v.display().to_string()));
    }
    for (k, v) in overrides {
        cfg.set(k, &v).map_err(|e| e.to_string())?;
    }

    let dataset_dir = cfg
        .dataset_dir
        .clone()
        .ok_or("no dataset directory (use --dataset or dataset_dir in the config)")?;
    let output_dir = cfg
        .output_dir
        .clone()
        .ok_or("no output directory (use --out or output_dir in the config)")?;
    std::fs::create_dir_all(&output_dir).map_err(|e| e.to_string())?;

    // Echo the effective configuration so the run can be reproduced from it.
    std::fs::write(output_dir.join("config_used.txt"), cfg.render()).map_err(|e| e.to_string())?;

    let result = track_sequence(
        &dataset_dir,
        cfg.mode,
        cfg.force_zero_exposure,
        &cfg.depth_source(),
        &cfg.sequence,
    )
    .map_err(|e| e.to_string())?;
    write_trajectory(&result, &output_dir.join("trajectory.txt")).map_err(|e| e.to_string())?;
    write_report(&result, &output_dir.join("report.txt")).map_err(|e| e.to_string())?;

    let total = result.per_frame.len();
    let dropped = result.dropped_count();
    let converged = result
        .per_frame
        .iter()
        .filter(|r| r.result.status == TrackStatus::Converged)
        .count();
    println!(
        "tracked {total} frames (mode {}): {converged} converged, {dropped} dropped ({:.1}% FD)",
        cfg.mode.name(),
        100.0 * dropped as f64 / total.max(1) as f64
    );
    if dropped == total {
        return Err("tracking failed on every frame".into());
    }
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory (TUM format).
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth trajectory (TUM format).
    #[arg(long)]
    gt: PathBuf,
    /// rigid | similarity.
    #[arg(long, default_value = "rigid")]
    align: String,
    /// Association window (seconds).
    #[arg(long, default_value_t = 0.01)]
    max_dt: f64,
    /// Optional per-frame tracking report; adds the frame-drop percentage.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Optional per-pose error CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn run_eval(args: &EvalArgs) -> Result<(), String> {
    let mode = AlignMode::parse(&args.align).ok_or_else(|| {
        format!(
            "unknown alignment {:?}; expected rigid|similarity",
            args.align
        )
    })?;
    let est = Trajectory::load_tum(&args.est).map_err(|e| e.to_string())?;
    let gt = Trajectory::load_tum(&args.gt).map_err(|e| e.to_string())?;
    let report = compute_ate(&est, &gt, args.max_dt, mode).map_err(|e| e.to_string())?;
    print!("{}", report.summary());
    if let Some(path) = &args.report {
        let fd = frame_drop_rate_from_report(path).map_err(|e| e.to_string())?;
        println!("frame_drop_pct {:.6}", fd);
    }
    if let Some(path) = &args.csv {
        report.write_csv(path).map_err(|e| e.to_string())?;
    }
    Ok(())
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: corrupt one Jacobian block to prove the harness
    /// catches it.
    #[arg(long)]
    inject_sign_error: bool,
}

fn run_selfcheck_cmd(args: &SelfcheckArgs) -> Result<(), String> {
    let report = run_selfcheck(args.seed, args.inject_sign_error);
    print!("{}", report.render());
    if report.all_passed() {
        Ok(())
    } else {
        Err("selfcheck failed".into())
    }
}

/// Parse `std::env::args` and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Clap handles --help/--version (exit 0) and usage errors (exit 2).
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Track(args) => run_track(args),
        Command::Eval(args) => run_eval(args),
        Command::Selfcheck(args) => run_selfcheck_cmd(args),
    };
    match result {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
