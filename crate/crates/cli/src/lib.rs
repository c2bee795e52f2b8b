//! Command-line harness for the chair robot simulator: gait playback,
//! policy training and evaluation, trajectory plotting, and serial-protocol
//! dumps.
//!
//! Exit codes: 0 on success, 1 on runtime errors (physics, I/O), 2 on
//! usage and input-parse errors. Output files are written atomically
//! (temp file + rename), so a failing command leaves no partial artifact.

pub mod plot;
pub mod trajectory;
pub mod wire;

use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use chair_core::env::{EnvError, EnvInstance, ResetReason, Task, TaskConfig};
use chair_core::gait::{
    compile_script, load_gait, play, GaitError, GaitScript, COMMAND_PERIOD,
};
use chair_core::geom::{quat_to_rpy, u_prj};
use chair_core::model::{load_model, ModelError, RobotModel};
use chair_core::physics::{PhysicsConfig, PhysicsError, ResetPose, Simulator};
use chair_core::ppo::{
    eval_episode_with, load_checkpoint, task_mismatch_warning, train, ActMode, EpisodeReport,
    PolicyNet, PpoError, TrainConfig,
};

use plot::{Panel, Series, PALETTE};
use trajectory::{format_csv, parse_csv, TrajectoryRow};

/// Environment variable naming an alternate robot description file.
pub const MODEL_ENV_VAR: &str = "CHAIR_MODEL";

/// Extra training epochs appended by `--noise`.
pub const NOISE_STAGE_EPOCHS: usize = 30;

/// Stand-up success threshold on the seat's projected up vector.
pub const STANDUP_SUCCESS_U: f64 = 0.85;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unreadable/unparsable input — exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure during simulation, training, or output writing — exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GaitError> for CliError {
    fn from(e: GaitError) -> Self {
        match e {
            GaitError::Sink { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PhysicsError> for CliError {
    fn from(e: PhysicsError) -> Self {
        match e {
            PhysicsError::BadConfig(_) | PhysicsError::Config { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::BadConfig(_) | EnvError::Config { .. } => CliError::Usage(e.to_string()),
            EnvError::Physics { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PpoError> for CliError {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::BadConfig(_)
            | PpoError::Checkpoint { .. }
            | PpoError::VersionMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

// ── Argument grammar ──────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "chair",
    version,
    about = "Simulator and gait toolkit for the three-legged chair robot"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Play a keyframe gait script through the simulator and log the trajectory.
    Gait {
        /// Gait script file.
        #[arg(long)]
        script: PathBuf,
        /// Initial pose: standing, right_side, left_side, or back.
        #[arg(long, default_value = "standing")]
        pose: String,
        /// Playback duration in seconds (10 Hz commands).
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        /// Trajectory CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy and write the checkpoint plus learning-curve CSV.
    Train {
        /// Task: walk or standup.
        #[arg(long)]
        task: String,
        /// Parallel environments.
        #[arg(long)]
        envs: Option<usize>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append a randomization stage after the plain epochs.
        #[arg(long)]
        noise: bool,
        /// Output directory for checkpoint and curve.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run deterministic evaluation episodes and log the trajectories.
    Eval {
        /// Task: walk or standup.
        #[arg(long)]
        task: String,
        /// Policy checkpoint file.
        #[arg(long)]
        policy: PathBuf,
        /// Episode count (stand-up cycles the three initial poses).
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        /// Environment seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectory CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a trajectory CSV as a three-panel SVG figure.
    Plot {
        /// Trajectory CSV input path.
        #[arg(long = "in")]
        input: PathBuf,
        /// SVG output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 10 Hz serial command stream for a gait or a policy rollout.
    #[command(group(ArgGroup::new("source").required(true).args(["script", "policy"])))]
    SerialDump {
        /// Gait script file (one cycle for looping gaits).
        #[arg(long)]
        script: Option<PathBuf>,
        /// Policy checkpoint file (closed-loop rollout).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Output path for the command stream.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Gait { script, pose, seconds, out } => cmd_gait(&script, &pose, seconds, &out),
        Cmd::Train { task, envs, epochs, seed, noise, out } => {
            cmd_train(&task, envs, epochs, seed, noise, &out)
        }
        Cmd::Eval { task, policy, episodes, seed, out } => {
            cmd_eval(&task, &policy, episodes, seed, &out)
        }
        Cmd::Plot { input, out } => cmd_plot(&input, &out),
        Cmd::SerialDump { script, policy, out } => cmd_serial_dump(script, policy, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ── Shared helpers ────────────────────────────────────────────────────────

/// Bundled robot description, unless `CHAIR_MODEL` names a file to load.
fn resolve_model() -> Result<RobotModel, CliError> {
    match std::env::var(MODEL_ENV_VAR) {
        Ok(path) => Ok(load_model(&path)?),
        Err(_) => Ok(RobotModel::builtin()),
    }
}

fn parse_task(name: &str) -> Result<Task, CliError> {
    name.parse().map_err(CliError::Usage)
}

fn parse_pose(name: &str) -> Result<ResetPose, CliError> {
    ResetPose::ALL
        .iter()
        .copied()
        .find(|p| p.name() == name)
        .ok_or_else(|| {
            let names: Vec<&str> = ResetPose::ALL.iter().map(|p| p.name()).collect();
            CliError::Usage(format!("unknown pose `{name}`; expected one of {}", names.join(", ")))
        })
}

fn task_config(task: Task) -> TaskConfig {
    match task {
        Task::Walk => TaskConfig::walk(),
        Task::Standup => TaskConfig::standup(),
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, content).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

fn load_script(path: &Path) -> Result<GaitScript, CliError> {
    Ok(load_gait(&path.to_string_lossy())?)
}

// ── gait ──────────────────────────────────────────────────────────────────

fn cmd_gait(script: &Path, pose: &str, seconds: f64, out: &Path) -> Result<(), CliError> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(CliError::Usage(format!("--seconds must be positive, got {seconds}")));
    }
    let model = resolve_model()?;
    let gait = load_script(script)?;
    let trace = compile_script(&gait)?;
    let pose = parse_pose(pose)?;

    let mut sim = Simulator::new(model.clone(), PhysicsConfig::default())?;
    sim.reset_to(pose)?;

    let count = (seconds / COMMAND_PERIOD).round() as usize;
    let mut rows: Vec<TrajectoryRow> = Vec::with_capacity(count);
    play(&trace, gait.looping, count, |k, posture| {
        let (joints, _) = model.servo_to_joint(posture);
        let st = sim.step(&joints).map_err(|e| e.to_string())?;
        let rpy = quat_to_rpy(st.q);
        rows.push(TrajectoryRow {
            t: k as f64 * COMMAND_PERIOD,
            position: st.p,
            rpy_deg: rpy,
            theta_deg: *posture,
            reward: None,
            reset: "none",
        });
        Ok(())
    })?;

    let state = sim.state();
    let u = u_prj(state.q).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(out, &format_csv(&rows))?;
    println!(
        "rows {}  trace {} commands  final x {:.4} y {:.4} z {:.4}  u_prj {:.3}",
        rows.len(),
        trace.len(),
        state.p.x,
        state.p.y,
        state.p.z,
        u
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ── train ─────────────────────────────────────────────────────────────────

fn cmd_train(
    task: &str,
    envs: Option<usize>,
    epochs: Option<usize>,
    seed: u64,
    noise: bool,
    out: &Path,
) -> Result<(), CliError> {
    let task = parse_task(task)?;
    let mut cfg = TrainConfig::for_task(task);
    if let Some(n) = envs {
        cfg.n_envs = n;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.seed = seed;
    if noise {
        cfg.noise_epochs = NOISE_STAGE_EPOCHS;
    }
    cfg.validate()?;

    let model = resolve_model()?;
    let physics = PhysicsConfig::default();
    let task_cfg = task_config(task);
    let output = train(&model, &physics, &task_cfg, &cfg, out, |s| {
        let stage = if s.noise_stage { " noise" } else { "" };
        println!(
            "epoch {:>4}{stage}  return {:>10.2}  length {:>6.1}  episodes {:>5}  kl {:.4}  clip {:.3}",
            s.epoch, s.mean_return, s.mean_length, s.episodes, s.stats.approx_kl,
            s.stats.clip_fraction
        );
    })?;
    println!("wrote {}", output.checkpoint_path.display());
    println!("wrote {}", output.curve_path.display());
    Ok(())
}

// ── eval ──────────────────────────────────────────────────────────────────

fn eval_pose(task: Task, episode: usize) -> ResetPose {
    match task {
        Task::Walk => ResetPose::Standing,
        Task::Standup => {
            [ResetPose::RightSide, ResetPose::LeftSide, ResetPose::Back][episode % 3]
        }
    }
}

fn episode_success(task: Task, report: &EpisodeReport) -> bool {
    match task {
        Task::Walk => report.reason == ResetReason::MaxEpisode,
        Task::Standup => report.max_u > STANDUP_SUCCESS_U,
    }
}

fn cmd_eval(
    task: &str,
    policy: &Path,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let task = parse_task(task)?;
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let ckpt = load_checkpoint(policy).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(warning) = task_mismatch_warning(&ckpt, task) {
        eprintln!("warning: {warning}");
    }
    let net: PolicyNet = ckpt.restore_net().map_err(|e| CliError::Usage(e.to_string()))?;

    let model = resolve_model()?;
    let mut env =
        EnvInstance::new(0, model.clone(), PhysicsConfig::default(), task_config(task), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut reports: Vec<EpisodeReport> = Vec::new();
    for episode in 0..episodes {
        let pose = eval_pose(task, episode);
        let report = eval_episode_with(
            &mut env,
            &net,
            pose,
            ActMode::Deterministic,
            &mut rng,
            |step, action, state, reward, reason| {
                let servo = model.joint_to_servo(action);
                rows.push(TrajectoryRow {
                    t: f64::from(step - 1) * COMMAND_PERIOD,
                    position: state.p,
                    rpy_deg: quat_to_rpy(state.q),
                    theta_deg: servo,
                    reward: Some(reward.total),
                    reset: reason.name(),
                });
            },
        )?;
        reports.push(report);
    }

    let n = reports.len() as f64;
    let successes = reports.iter().filter(|r| episode_success(task, r)).count();
    let mean_dx = reports.iter().map(|r| r.displacement.x).sum::<f64>() / n;
    let mean_dy = reports.iter().map(|r| r.displacement.y).sum::<f64>() / n;
    let mean_final_u = reports.iter().map(|r| r.final_u).sum::<f64>() / n;
    let mean_return = reports.iter().map(|r| r.ret).sum::<f64>() / n;
    println!(
        "episodes {episodes}  success {successes}/{episodes}  mean return {mean_return:.2}  \
         mean displacement x {mean_dx:.4} y {mean_dy:.4}  mean final u_prj {mean_final_u:.3}"
    );
    match task {
        Task::Walk => {
            let mean_yaw = reports.iter().map(|r| r.mean_yaw_deg).sum::<f64>() / n;
            println!("mean yaw {mean_yaw:.1} deg");
        }
        Task::Standup => {
            let pose_line: Vec<String> = [ResetPose::RightSide, ResetPose::LeftSide, ResetPose::Back]
                .iter()
                .map(|p| {
                    let total = reports.iter().filter(|r| r.pose == *p).count();
                    let won = reports
                        .iter()
                        .filter(|r| r.pose == *p && episode_success(task, r))
                        .count();
                    format!("{} {won}/{total}", p.name())
                })
                .collect();
            println!("per-pose success: {}", pose_line.join("  "));
        }
    }
    write_atomic(out, &format_csv(&rows))?;
    println!("wrote {}", out.display());
    Ok(())
}

// ── plot ──────────────────────────────────────────────────────────────────

fn cmd_plot(input: &Path, out: &Path) -> Result<(), CliError> {
    let src = std::fs::read_to_string(input)
        .map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let data = parse_csv(&src, &input.to_string_lossy())?;

    let series = |idx: usize, name: &str, color: &'static str| Series {
        name: name.to_string(),
        color,
        values: data.columns[idx].clone(),
    };
    let panels = vec![
        Panel {
            title: "seat position".into(),
            y_label: "[m]".into(),
            series: vec![series(0, "x", PALETTE[0]), series(1, "y", PALETTE[1])],
        },
        Panel {
            title: "seat attitude".into(),
            y_label: "[deg]".into(),
            series: vec![
                series(3, "roll", PALETTE[0]),
                series(4, "pitch", PALETTE[1]),
                series(5, "yaw", PALETTE[2]),
            ],
        },
        Panel {
            title: "commanded servo angles".into(),
            y_label: "[deg]".into(),
            series: (0..6)
                .map(|j| series(6 + j, &format!("theta{j}"), PALETTE[j]))
                .collect(),
        },
    ];
    write_atomic(out, &plot::render_svg(&data.t, &panels))?;
    println!("wrote {}", out.display());
    Ok(())
}

// ── serial-dump ───────────────────────────────────────────────────────────

fn cmd_serial_dump(
    script: Option<PathBuf>,
    policy: Option<PathBuf>,
    out: &Path,
) -> Result<(), CliError> {
    let mut lines: Vec<String> = Vec::new();
    if let Some(script) = script {
        let gait = load_script(&script)?;
        let trace = compile_script(&gait)?;
        for (k, posture) in trace.iter().enumerate() {
            lines.push(wire::cmd_line(k as f64 * COMMAND_PERIOD, posture));
        }
    } else if let Some(policy) = policy {
        let ckpt = load_checkpoint(&policy).map_err(|e| CliError::Usage(e.to_string()))?;
        let net: PolicyNet =
            ckpt.restore_net().map_err(|e| CliError::Usage(e.to_string()))?;
        let task = ckpt.task;
        let model = resolve_model()?;
        let mut env =
            EnvInstance::new(0, model.clone(), PhysicsConfig::default(), task_config(task), 0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pose = match task {
            Task::Walk => ResetPose::Standing,
            Task::Standup => ResetPose::RightSide,
        };
        eval_episode_with(
            &mut env,
            &net,
            pose,
            ActMode::Deterministic,
            &mut rng,
            |step, action, _, _, _| {
                let servo = model.joint_to_servo(action);
                lines.push(wire::cmd_line(f64::from(step - 1) * COMMAND_PERIOD, &servo));
            },
        )?;
    }
    let mut content = lines.join("\n");
    content.push('\n');
    write_atomic(out, &content)?;
    println!("lines {}", lines.len());
    println!("wrote {}", out.display());
    Ok(())
}
