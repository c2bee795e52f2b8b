//! Reinforcement-learning task environments for the chair robot: a walking
//! task and a stand-up task.
//!
//! Each [`EnvInstance`] owns a simulator plus episode bookkeeping. The
//! observation is a four-slot history of (attitude quaternion, commanded
//! joint angles); rewards and terminations follow the per-task tables in
//! [`TaskConfig`]; terminated episodes re-initialize themselves. [`VecEnv`]
//! steps a fleet of independent instances with per-instance RNG streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::gait::COMMAND_PERIOD;
use crate::geom::{quat_dist_from_identity, u_prj, Quat, Vec3};
use crate::model::{JointAngles, RobotModel};
use crate::physics::{
    config_pairs, ContactSet, PhysicsConfig, PhysicsError, ResetPose, RobotState, Simulator,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("bad task config: {0}")]
    BadConfig(String),
    #[error("{path}:{line}: {msg}")]
    Config { path: String, line: usize, msg: String },
    #[error("env {env}: {source}")]
    Physics {
        env: usize,
        #[source]
        source: PhysicsError,
    },
}

// ── Tasks and configuration ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Walk,
    Standup,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Walk => "walk",
            Task::Standup => "standup",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "walk" => Ok(Task::Walk),
            "standup" => Ok(Task::Standup),
            other => Err(format!("unknown task `{other}` (expected walk or standup)")),
        }
    }
}

/// Randomization ranges: physical parameters are scaled once per
/// [`EnvInstance::randomize`] call by uniform factors in `1 ± range`; the
/// sigmas add per-step Gaussian noise to the observed quaternion and the
/// incoming action. A zero range or sigma disables that draw entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub mass_range: f64,
    pub friction_range: f64,
    pub stiffness_range: f64,
    pub quat_sigma: f64,
    pub action_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mass_range: 0.10,
            friction_range: 0.20,
            stiffness_range: 0.20,
            quat_sigma: 0.01,
            action_sigma: 0.02,
        }
    }
}

impl NoiseConfig {
    pub const ZERO: NoiseConfig = NoiseConfig {
        mass_range: 0.0,
        friction_range: 0.0,
        stiffness_range: 0.0,
        quat_sigma: 0.0,
        action_sigma: 0.0,
    };
}

/// Task selection plus every reward weight, scale, and reset threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub task: Task,
    /// Walking target point, m.
    pub target: Vec3,
    /// Live steps per episode; the step after this one terminates it.
    pub max_steps: u32,
    // Walking reward.
    pub progress_weight: f64,
    pub height_weight: f64,
    pub up_weight: f64,
    pub heading_weight: f64,
    pub alive_weight: f64,
    pub action_penalty_weight: f64,
    pub joint_vel_penalty_weight: f64,
    /// Seat height at which the height term saturates, m.
    pub height_scale: f64,
    /// u_prj at which the upness term saturates.
    pub up_scale: f64,
    /// Heading cosine at which the heading term saturates.
    pub heading_scale: f64,
    /// Joint-rate normalizer: the velocity penalty divides by
    /// `joint_vel_max − joint_vel_tolerance`, rad/s.
    pub joint_vel_max: f64,
    pub joint_vel_tolerance: f64,
    // Walking reset.
    pub tilt_limit: f64,
    pub min_seat_height: f64,
    // Stand-up reward.
    pub upright_weight: f64,
    pub standing_weight: f64,
    pub spreading_weight: f64,
    /// u_prj gate below which the standing-proximity term is zero.
    pub standing_gate: f64,
    /// u_prj gate below which the leg-spreading term is zero.
    pub spreading_gate: f64,
    /// Joint-space standing target, rad.
    pub stand_pose: [f64; 6],
    /// Spread target for joints (0, 1, 3, 5), rad.
    pub expand_pose: [f64; 4],
    // Stand-up reset.
    pub flip_limit: f64,
    pub fold_gate: f64,
    pub fold_limit: f64,
    pub noise: NoiseConfig,
}

impl TaskConfig {
    pub fn walk() -> Self {
        TaskConfig {
            task: Task::Walk,
            target: Vec3::new(10.0, 0.0, 0.0),
            max_steps: 350,
            progress_weight: 30.0,
            height_weight: 20.0,
            up_weight: 5.0,
            heading_weight: 2.0,
            alive_weight: 1.0,
            action_penalty_weight: 2.0,
            joint_vel_penalty_weight: 2.0,
            height_scale: 0.08,
            up_scale: 0.93,
            heading_scale: 0.8,
            joint_vel_max: 10.472,
            joint_vel_tolerance: 1.0,
            tilt_limit: 0.7,
            min_seat_height: 0.005,
            upright_weight: 250.0,
            standing_weight: 100.0,
            spreading_weight: 50.0,
            standing_gate: 0.85,
            spreading_gate: 0.2,
            stand_pose: [-0.1745, 0.0, -0.1745, 0.0, 0.1745, 0.0],
            expand_pose: [-1.0, -1.0, 1.0, -1.0],
            flip_limit: -0.7,
            fold_gate: 0.6,
            fold_limit: 1.0,
            noise: NoiseConfig::default(),
        }
    }

    pub fn standup() -> Self {
        TaskConfig { task: Task::Standup, ..TaskConfig::walk() }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::BadConfig(msg));
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        let finite = [
            ("target", self.target.x),
            ("target", self.target.y),
            ("target", self.target.z),
            ("progress_weight", self.progress_weight),
            ("height_weight", self.height_weight),
            ("up_weight", self.up_weight),
            ("heading_weight", self.heading_weight),
            ("alive_weight", self.alive_weight),
            ("action_penalty_weight", self.action_penalty_weight),
            ("joint_vel_penalty_weight", self.joint_vel_penalty_weight),
            ("upright_weight", self.upright_weight),
            ("standing_weight", self.standing_weight),
            ("spreading_weight", self.spreading_weight),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        for (name, v) in
            self.stand_pose.iter().map(|&v| ("stand_pose", v)).chain(self.expand_pose.iter().map(|&v| ("expand_pose", v)))
        {
            if !v.is_finite() {
                return bad(format!("{name} entries must be finite, got {v}"));
            }
        }
        if !(self.height_scale > 0.0) {
            return bad(format!("height_scale must be positive, got {}", self.height_scale));
        }
        if !(self.up_scale > 0.0) {
            return bad(format!("up_scale must be positive, got {}", self.up_scale));
        }
        if !(self.heading_scale > 0.0) {
            return bad(format!("heading_scale must be positive, got {}", self.heading_scale));
        }
        if !(self.joint_vel_tolerance >= 0.0) {
            return bad(format!("joint_vel_tolerance must be non-negative, got {}", self.joint_vel_tolerance));
        }
        if !(self.joint_vel_max > self.joint_vel_tolerance) {
            return bad(format!(
                "joint_vel_max ({}) must exceed joint_vel_tolerance ({})",
                self.joint_vel_max, self.joint_vel_tolerance
            ));
        }
        if !(self.tilt_limit > 0.0) {
            return bad(format!("tilt_limit must be positive, got {}", self.tilt_limit));
        }
        if !self.min_seat_height.is_finite() {
            return bad(format!("min_seat_height must be finite, got {}", self.min_seat_height));
        }
        for (name, v) in [
            ("standing_gate", self.standing_gate),
            ("spreading_gate", self.spreading_gate),
            ("flip_limit", self.flip_limit),
            ("fold_gate", self.fold_gate),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [-1, 1], got {v}"));
            }
        }
        if !(self.fold_limit > 0.0) {
            return bad(format!("fold_limit must be positive, got {}", self.fold_limit));
        }
        for (name, v) in [
            ("mass_noise", self.noise.mass_range),
            ("friction_noise", self.noise.friction_range),
            ("stiffness_noise", self.noise.stiffness_range),
            ("quat_noise_sigma", self.noise.quat_sigma),
            ("action_noise_sigma", self.noise.action_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Read a task config file (`key = value`, `#` comments). Keys not present
/// keep the defaults of the task named by the `task` key (walk when absent);
/// unknown keys are errors.
pub fn load_task_config(path: &str) -> Result<TaskConfig, EnvError> {
    let src = std::fs::read_to_string(path).map_err(|e| EnvError::Config {
        path: path.to_string(),
        line: 0,
        msg: format!("cannot read file: {e}"),
    })?;
    parse_task_config(&src, path)
}

pub fn parse_task_config(src: &str, path: &str) -> Result<TaskConfig, EnvError> {
    let pairs = config_pairs(src, path).map_err(|e| match e {
        PhysicsError::Config { path, line, msg } => EnvError::Config { path, line, msg },
        other => EnvError::BadConfig(other.to_string()),
    })?;

    let mut cfg = match pairs.iter().find(|(k, _, _)| k == "task") {
        Some((_, v, line)) => match v.parse::<Task>() {
            Ok(Task::Walk) => TaskConfig::walk(),
            Ok(Task::Standup) => TaskConfig::standup(),
            Err(msg) => {
                return Err(EnvError::Config { path: path.to_string(), line: *line, msg })
            }
        },
        None => TaskConfig::walk(),
    };

    for (key, value, line) in &pairs {
        let err = |msg: String| EnvError::Config { path: path.to_string(), line: *line, msg };
        let parse_f = || {
            value.parse::<f64>().map_err(|_| err(format!("`{key}` needs a number, got `{value}`")))
        };
        let parse_n = |n: usize| -> Result<Vec<f64>, EnvError> {
            let vals: Result<Vec<f64>, _> =
                value.split_whitespace().map(|t| t.parse::<f64>()).collect();
            match vals {
                Ok(v) if v.len() == n => Ok(v),
                _ => Err(err(format!("`{key}` needs {n} numbers, got `{value}`"))),
            }
        };
        match key.as_str() {
            "task" => {}
            "max_steps" => {
                cfg.max_steps = value.parse::<u32>().map_err(|_| {
                    err(format!("`max_steps` needs a non-negative integer, got `{value}`"))
                })?
            }
            "target" => {
                let v = parse_n(3)?;
                cfg.target = Vec3::new(v[0], v[1], v[2]);
            }
            "progress_weight" => cfg.progress_weight = parse_f()?,
            "height_weight" => cfg.height_weight = parse_f()?,
            "up_weight" => cfg.up_weight = parse_f()?,
            "heading_weight" => cfg.heading_weight = parse_f()?,
            "alive_weight" => cfg.alive_weight = parse_f()?,
            "action_penalty_weight" => cfg.action_penalty_weight = parse_f()?,
            "joint_vel_penalty_weight" => cfg.joint_vel_penalty_weight = parse_f()?,
            "height_scale" => cfg.height_scale = parse_f()?,
            "up_scale" => cfg.up_scale = parse_f()?,
            "heading_scale" => cfg.heading_scale = parse_f()?,
            "joint_vel_max" => cfg.joint_vel_max = parse_f()?,
            "joint_vel_tolerance" => cfg.joint_vel_tolerance = parse_f()?,
            "tilt_limit" => cfg.tilt_limit = parse_f()?,
            "min_seat_height" => cfg.min_seat_height = parse_f()?,
            "upright_weight" => cfg.upright_weight = parse_f()?,
            "standing_weight" => cfg.standing_weight = parse_f()?,
            "spreading_weight" => cfg.spreading_weight = parse_f()?,
            "standing_gate" => cfg.standing_gate = parse_f()?,
            "spreading_gate" => cfg.spreading_gate = parse_f()?,
            "stand_pose" => cfg.stand_pose = parse_n(6)?.try_into().unwrap(),
            "expand_pose" => cfg.expand_pose = parse_n(4)?.try_into().unwrap(),
            "flip_limit" => cfg.flip_limit = parse_f()?,
            "fold_gate" => cfg.fold_gate = parse_f()?,
            "fold_limit" => cfg.fold_limit = parse_f()?,
            "mass_noise" => cfg.noise.mass_range = parse_f()?,
            "friction_noise" => cfg.noise.friction_range = parse_f()?,
            "stiffness_noise" => cfg.noise.stiffness_range = parse_f()?,
            "quat_noise_sigma" => cfg.noise.quat_sigma = parse_f()?,
            "action_noise_sigma" => cfg.noise.action_sigma = parse_f()?,
            _ => return Err(err(format!("unknown key `{key}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

// ── Observations ──────────────────────────────────────────────────────────

/// History slots in an observation.
pub const OBS_SLOTS: usize = 4;
/// Reals per slot: quaternion (x, y, z, w) then six joint angles, rad.
pub const SLOT_DIM: usize = 10;
/// Observation length.
pub const OBS_DIM: usize = OBS_SLOTS * SLOT_DIM;

pub type Observation = [f64; OBS_DIM];

/// Lay out up to four (quaternion, commanded angles) pairs oldest → newest.
/// A short history is left-padded by repeating its oldest entry, so at
/// episode start every slot holds the initial pair.
pub fn build_observation(history: &[(Quat, JointAngles)]) -> Observation {
    assert!(!history.is_empty(), "observation history must not be empty");
    let tail = if history.len() > OBS_SLOTS {
        &history[history.len() - OBS_SLOTS..]
    } else {
        history
    };
    let pad = OBS_SLOTS - tail.len();
    let mut obs = [0.0; OBS_DIM];
    for slot in 0..OBS_SLOTS {
        let (q, a) = tail[slot.saturating_sub(pad)];
        let base = slot * SLOT_DIM;
        obs[base] = q.x;
        obs[base + 1] = q.y;
        obs[base + 2] = q.z;
        obs[base + 3] = q.w;
        obs[base + 4..base + 10].copy_from_slice(&a);
    }
    obs
}

// ── Rewards ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerm {
    pub name: &'static str,
    /// Unweighted term value.
    pub value: f64,
    /// Contribution to the total (weight and sign applied).
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub terms: Vec<RewardTerm>,
    pub total: f64,
    /// Set when a failure reset fired this step; the total is then −1.
    pub death: bool,
}

impl RewardBreakdown {
    fn from_terms(terms: Vec<RewardTerm>) -> Self {
        let total = terms.iter().map(|t| t.weighted).sum();
        RewardBreakdown { terms, total, death: false }
    }

    fn mark_death(&mut self) {
        self.death = true;
        self.total = -1.0;
    }

    pub fn term(&self, name: &str) -> Option<&RewardTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

fn expect_u_prj(q: Quat) -> f64 {
    u_prj(q).expect("attitude quaternion is finite and normalized")
}

/// Walking reward: weighted progress toward the target, seat height, seat
/// upness, heading alignment, and a constant alive bonus, minus penalties on
/// the command change and on joint rates.
pub fn walk_reward(
    state: &RobotState,
    p_prev: Vec3,
    a_prev: &JointAngles,
    action: &JointAngles,
    cfg: &TaskConfig,
) -> RewardBreakdown {
    let score = |p: Vec3| -(cfg.target - p).norm() / COMMAND_PERIOD;
    let progress = score(state.p) - score(p_prev);

    let height = (state.p.z / cfg.height_scale).min(1.0);
    let up = (expect_u_prj(state.q) / cfg.up_scale).min(1.0);

    let to_target = cfg.target - state.p;
    let heading = match to_target.normalized() {
        Some(dir) => (state.q.rotate(Vec3::new(1.0, 0.0, 0.0)).dot(dir) / cfg.heading_scale).min(1.0),
        None => 1.0,
    };

    let action_change: f64 = action.iter().zip(a_prev).map(|(a, b)| (a - b) * (a - b)).sum();
    let vel_scale = cfg.joint_vel_max - cfg.joint_vel_tolerance;
    let joint_velocity: f64 =
        state.joint_rates.iter().map(|r| (r / vel_scale) * (r / vel_scale)).sum();

    RewardBreakdown::from_terms(vec![
        RewardTerm { name: "progress", value: progress, weighted: cfg.progress_weight * progress },
        RewardTerm { name: "height", value: height, weighted: cfg.height_weight * height },
        RewardTerm { name: "up", value: up, weighted: cfg.up_weight * up },
        RewardTerm { name: "heading", value: heading, weighted: cfg.heading_weight * heading },
        RewardTerm { name: "alive", value: 1.0, weighted: cfg.alive_weight },
        RewardTerm {
            name: "action_change",
            value: action_change,
            weighted: -cfg.action_penalty_weight * action_change,
        },
        RewardTerm {
            name: "joint_velocity",
            value: joint_velocity,
            weighted: -cfg.joint_vel_penalty_weight * joint_velocity,
        },
    ])
}

fn l4_norm(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v * v * v).sum::<f64>().powf(0.25)
}

fn proximity(distance_l4: f64) -> f64 {
    1.0 / (2.0 * distance_l4.min(1.0).asin().abs() + 0.1)
}

fn spread_joints(a: &JointAngles) -> [f64; 4] {
    [a[0], a[1], a[3], a[5]]
}

/// Stand-up reward: weighted seat upness, gated proximity to the standing
/// joint pose, gated leg spreading, minus the command-change penalty.
pub fn standup_reward(
    state: &RobotState,
    a_prev: &JointAngles,
    action: &JointAngles,
    cfg: &TaskConfig,
) -> RewardBreakdown {
    let u = expect_u_prj(state.q);
    let upright = (2.0 * (u - 1.0)).exp().min(1.0);

    let standing = if u > cfg.standing_gate {
        proximity(l4_norm(action.iter().zip(&cfg.stand_pose).map(|(a, s)| a - s)))
    } else {
        0.0
    };

    let spreading = if u > cfg.spreading_gate {
        let sub = spread_joints(action);
        proximity(l4_norm(sub.iter().zip(&cfg.expand_pose).map(|(a, e)| a - e)))
    } else {
        0.0
    };

    let action_change: f64 = action.iter().zip(a_prev).map(|(a, b)| (a - b) * (a - b)).sum();

    RewardBreakdown::from_terms(vec![
        RewardTerm { name: "upright", value: upright, weighted: cfg.upright_weight * upright },
        RewardTerm { name: "standing", value: standing, weighted: cfg.standing_weight * standing },
        RewardTerm {
            name: "spreading",
            value: spreading,
            weighted: cfg.spreading_weight * spreading,
        },
        RewardTerm {
            name: "action_change",
            value: action_change,
            weighted: -cfg.action_penalty_weight * action_change,
        },
    ])
}

// ── Resets ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResetReason {
    None,
    MaxEpisode,
    Tilt,
    Ground,
    Height,
    Flip,
    Fold,
}

impl ResetReason {
    pub const ALL: [ResetReason; 7] = [
        ResetReason::None,
        ResetReason::MaxEpisode,
        ResetReason::Tilt,
        ResetReason::Ground,
        ResetReason::Height,
        ResetReason::Flip,
        ResetReason::Fold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResetReason::None => "none",
            ResetReason::MaxEpisode => "max_episode",
            ResetReason::Tilt => "tilt",
            ResetReason::Ground => "ground",
            ResetReason::Height => "height",
            ResetReason::Flip => "flip",
            ResetReason::Fold => "fold",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != ResetReason::None
    }

    /// A failure reset — the step's reward total is overwritten with −1.
    pub fn is_death(self) -> bool {
        matches!(
            self,
            ResetReason::Tilt
                | ResetReason::Ground
                | ResetReason::Height
                | ResetReason::Flip
                | ResetReason::Fold
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeStatus {
    /// Steps taken in the current episode, counting the one just executed.
    pub step: u32,
    pub reason: ResetReason,
}

/// Walking terminations, checked in order: episode length, seat tilted past
/// the quaternion-distance limit, any seat corner touching the ground, seat
/// center below the minimum height.
pub fn walk_reset(
    state: &RobotState,
    contacts: &ContactSet,
    step: u32,
    cfg: &TaskConfig,
) -> ResetReason {
    if step > cfg.max_steps {
        ResetReason::MaxEpisode
    } else if quat_dist_from_identity(state.q) > cfg.tilt_limit {
        ResetReason::Tilt
    } else if contacts.any_seat_corner() {
        ResetReason::Ground
    } else if state.p.z < cfg.min_seat_height {
        ResetReason::Height
    } else {
        ResetReason::None
    }
}

/// Stand-up terminations, checked in order: episode length, seat flipped
/// face-down, legs folded inward while the seat is already partly raised.
pub fn standup_reset(state: &RobotState, step: u32, cfg: &TaskConfig) -> ResetReason {
    if step > cfg.max_steps {
        return ResetReason::MaxEpisode;
    }
    let u = expect_u_prj(state.q);
    if u < cfg.flip_limit {
        return ResetReason::Flip;
    }
    if u > cfg.fold_gate {
        let sub = spread_joints(&state.joints);
        let linf = sub
            .iter()
            .zip(&cfg.expand_pose)
            .map(|(a, e)| (a - e).abs())
            .fold(0.0_f64, f64::max);
        if linf > cfg.fold_limit {
            return ResetReason::Fold;
        }
    }
    ResetReason::None
}

// ── Environment instances ─────────────────────────────────────────────────

fn gaussian6(rng: &mut ChaCha8Rng, sigma: f64) -> [f64; 6] {
    let dist = Normal::new(0.0, sigma).expect("sigma is validated non-negative");
    std::array::from_fn(|_| dist.sample(rng))
}

fn noisy_quat(rng: &mut ChaCha8Rng, q: Quat, sigma: f64) -> Quat {
    if sigma <= 0.0 {
        return q;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma is validated non-negative");
    Quat::new(
        q.x + dist.sample(rng),
        q.y + dist.sample(rng),
        q.z + dist.sample(rng),
        q.w + dist.sample(rng),
    )
    .normalized()
}

/// One steppable task environment wrapping a [`Simulator`].
pub struct EnvInstance {
    id: usize,
    sim: Simulator,
    cfg: TaskConfig,
    rng: ChaCha8Rng,
    /// Per-step noise sigmas; `None` until [`randomize`](Self::randomize).
    active_noise: Option<NoiseConfig>,
    step_count: u32,
    history: Vec<(Quat, JointAngles)>,
    p_prev: Vec3,
    a_prev: JointAngles,
}

impl EnvInstance {
    /// Build instance `id` and settle it into its initial pose. All instances
    /// built from one `seed` draw from per-`id` RNG streams.
    pub fn new(
        id: usize,
        model: RobotModel,
        physics: PhysicsConfig,
        cfg: TaskConfig,
        seed: u64,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        let sim = Simulator::new(model, physics)
            .map_err(|source| EnvError::Physics { env: id, source })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let mut env = EnvInstance {
            id,
            sim,
            cfg,
            rng,
            active_noise: None,
            step_count: 0,
            history: Vec::with_capacity(OBS_SLOTS),
            p_prev: Vec3::ZERO,
            a_prev: [0.0; 6],
        };
        env.reset()?;
        Ok(env)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn task(&self) -> Task {
        self.cfg.task
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn state(&self) -> RobotState {
        self.sim.state()
    }

    pub fn contacts(&self) -> &ContactSet {
        self.sim.contacts()
    }

    pub fn episode_step(&self) -> u32 {
        self.step_count
    }

    /// The observation for the episode as currently stands.
    pub fn observation(&self) -> Observation {
        build_observation(&self.history)
    }

    fn initial_pose(&mut self) -> ResetPose {
        match self.cfg.task {
            Task::Walk => ResetPose::Standing,
            Task::Standup => {
                [ResetPose::RightSide, ResetPose::LeftSide, ResetPose::Back]
                    [self.rng.gen_range(0..3)]
            }
        }
    }

    /// Start a fresh episode from the task's initial pose (standing for the
    /// walk; one of the three ground poses, drawn uniformly, for stand-up).
    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        let pose = self.initial_pose();
        self.reset_from(pose)
    }

    /// Start a fresh episode from an explicit pose.
    pub fn reset_from(&mut self, pose: ResetPose) -> Result<Observation, EnvError> {
        let st = self
            .sim
            .reset_to(pose)
            .map_err(|source| EnvError::Physics { env: self.id, source })?;
        self.step_count = 0;
        self.history.clear();
        let slot = (self.observed_quat(st.q), st.joints);
        self.history.push(slot);
        self.p_prev = st.p;
        self.a_prev = st.joints;
        Ok(self.observation())
    }

    fn observed_quat(&mut self, q: Quat) -> Quat {
        match self.active_noise {
            Some(n) if n.quat_sigma > 0.0 => noisy_quat(&mut self.rng, q, n.quat_sigma),
            _ => q,
        }
    }

    /// Clamp and actuate `action`, advance physics one control step, score
    /// the task reward, evaluate the reset table, and — on termination —
    /// re-initialize and hand back the fresh episode's first observation
    /// alongside the terminal reward and status.
    pub fn step(
        &mut self,
        action: &JointAngles,
    ) -> Result<(Observation, RewardBreakdown, EpisodeStatus), EnvError> {
        let mut a = *action;
        if let Some(n) = self.active_noise {
            if n.action_sigma > 0.0 {
                let noise = gaussian6(&mut self.rng, n.action_sigma);
                for (ai, ni) in a.iter_mut().zip(noise) {
                    *ai += ni;
                }
            }
        }
        let servo = self.sim.model().joint_to_servo(&a);
        let (a_cmd, _) = self.sim.model().servo_to_joint(&servo);

        let st = self
            .sim
            .step(&a_cmd)
            .map_err(|source| EnvError::Physics { env: self.id, source })?;
        self.step_count += 1;

        let mut reward = match self.cfg.task {
            Task::Walk => walk_reward(&st, self.p_prev, &self.a_prev, &a_cmd, &self.cfg),
            Task::Standup => standup_reward(&st, &self.a_prev, &a_cmd, &self.cfg),
        };
        let reason = match self.cfg.task {
            Task::Walk => walk_reset(&st, self.sim.contacts(), self.step_count, &self.cfg),
            Task::Standup => standup_reset(&st, self.step_count, &self.cfg),
        };
        if reason.is_death() {
            reward.mark_death();
        }
        let status = EpisodeStatus { step: self.step_count, reason };

        let obs = if reason.is_terminal() {
            self.reset()?
        } else {
            self.p_prev = st.p;
            self.a_prev = a_cmd;
            let slot = (self.observed_quat(st.q), a_cmd);
            if self.history.len() == OBS_SLOTS {
                self.history.remove(0);
            }
            self.history.push(slot);
            self.observation()
        };
        Ok((obs, reward, status))
    }

    /// Draw randomized physical parameters (uniform factors in `1 ± range`
    /// for masses, friction, and contact stiffness) and enable the per-step
    /// sensor/action noise. The dynamic state carries over; zero ranges and
    /// sigmas leave the instance bitwise identical to an unrandomized one.
    pub fn randomize(&mut self, noise: &NoiseConfig) -> Result<(), EnvError> {
        let factor = |rng: &mut ChaCha8Rng, range: f64| -> f64 {
            if range > 0.0 {
                rng.gen_range(1.0 - range..=1.0 + range)
            } else {
                1.0
            }
        };
        if noise.mass_range > 0.0 || noise.friction_range > 0.0 || noise.stiffness_range > 0.0 {
            let mut model = self.sim.model().clone();
            let mut physics = self.sim.config().clone();
            model.seat_mass *= factor(&mut self.rng, noise.mass_range);
            model.foot_mass *= factor(&mut self.rng, noise.mass_range);
            physics.friction *= factor(&mut self.rng, noise.friction_range);
            physics.contact_stiffness *= factor(&mut self.rng, noise.stiffness_range);
            let st = self.sim.state();
            self.sim = Simulator::new(model, physics)
                .map_err(|source| EnvError::Physics { env: self.id, source })?;
            self.sim.set_state(&st);
        }
        self.active_noise = Some(*noise);
        Ok(())
    }
}

// ── Batched environments ──────────────────────────────────────────────────

/// A fleet of independent env instances stepped together. Batch results are
/// element-wise identical to stepping the instances sequentially.
pub struct VecEnv {
    envs: Vec<EnvInstance>,
}

impl VecEnv {
    pub fn new(
        model: &RobotModel,
        physics: &PhysicsConfig,
        cfg: &TaskConfig,
        count: usize,
        seed: u64,
    ) -> Result<Self, EnvError> {
        if count == 0 {
            return Err(EnvError::BadConfig("env count must be at least 1".into()));
        }
        let envs = (0..count)
            .map(|id| EnvInstance::new(id, model.clone(), physics.clone(), cfg.clone(), seed))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VecEnv { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn env(&self, i: usize) -> &EnvInstance {
        &self.envs[i]
    }

    pub fn env_mut(&mut self, i: usize) -> &mut EnvInstance {
        &mut self.envs[i]
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.envs.iter().map(EnvInstance::observation).collect()
    }

    pub fn reset_all(&mut self) -> Result<Vec<Observation>, EnvError> {
        self.envs.iter_mut().map(EnvInstance::reset).collect()
    }

    pub fn step(
        &mut self,
        actions: &[JointAngles],
    ) -> Result<Vec<(Observation, RewardBreakdown, EpisodeStatus)>, EnvError> {
        assert_eq!(actions.len(), self.envs.len(), "one action per env");
        self.envs.iter_mut().zip(actions).map(|(env, a)| env.step(a)).collect()
    }

    pub fn randomize_all(&mut self, noise: &NoiseConfig) -> Result<(), EnvError> {
        for env in &mut self.envs {
            env.randomize(noise)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::{compile_script, walk_script, STANDING_POSTURE};
    use crate::physics::ContactPoint;
    use approx::assert_abs_diff_eq;

    fn walk_env(seed: u64) -> EnvInstance {
        EnvInstance::new(0, RobotModel::builtin(), PhysicsConfig::default(), TaskConfig::walk(), seed)
            .unwrap()
    }

    fn standup_env(id: usize, seed: u64) -> EnvInstance {
        EnvInstance::new(
            id,
            RobotModel::builtin(),
            PhysicsConfig::default(),
            TaskConfig::standup(),
            seed,
        )
        .unwrap()
    }

    fn mk_state(q: Quat, p: Vec3, joints: JointAngles) -> RobotState {
        RobotState { p, q, v: Vec3::ZERO, w: Vec3::ZERO, joints, joint_rates: [0.0; 6] }
    }

    fn tilted_about_x(angle_rad: f64) -> Quat {
        Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), angle_rad)
    }

    // ── Observations ──────────────────────────────────────────────────

    #[test]
    fn observation_pads_by_repeating_the_oldest_slot() {
        let slot = (Quat::IDENTITY, [0.0; 6]);
        let obs = build_observation(&[slot]);
        for s in 0..OBS_SLOTS {
            let base = s * SLOT_DIM;
            assert_eq!(&obs[base..base + 4], &[0.0, 0.0, 0.0, 1.0]);
            assert_eq!(&obs[base + 4..base + 10], &[0.0; 6]);
        }

        let newer = (tilted_about_x(0.2), [0.5; 6]);
        let obs = build_observation(&[slot, newer]);
        assert_eq!(&obs[0..10], &obs[10..20]);
        assert_eq!(&obs[10..20], &obs[20..30]);
        assert_abs_diff_eq!(obs[34], 0.5);
    }

    #[test]
    fn observation_orders_slots_oldest_to_newest() {
        let history: Vec<(Quat, JointAngles)> =
            (0..4).map(|k| (tilted_about_x(0.1 * k as f64), [k as f64; 6])).collect();
        let obs = build_observation(&history);
        for (k, (q, a)) in history.iter().enumerate() {
            let base = k * SLOT_DIM;
            assert_eq!(obs[base], q.x);
            assert_eq!(obs[base + 3], q.w);
            assert_eq!(obs[base + 4], a[0]);
        }
        assert_eq!(obs[30], history[3].0.x);
    }

    // ── Walking reward ────────────────────────────────────────────────

    #[test]
    fn walk_reward_progress_step_along_x() {
        let cfg = TaskConfig::walk();
        let st = mk_state(Quat::IDENTITY, Vec3::new(0.01, 0.0, 0.08), [0.0; 6]);
        let r = walk_reward(&st, Vec3::new(0.0, 0.0, 0.08), &[0.0; 6], &[0.0; 6], &cfg);
        assert_abs_diff_eq!(r.term("progress").unwrap().weighted, 3.0, epsilon = 1e-4);
    }

    #[test]
    fn walk_reward_height_at_half_scale() {
        let cfg = TaskConfig::walk();
        let st = mk_state(Quat::IDENTITY, Vec3::new(0.0, 0.0, 0.04), [0.0; 6]);
        let r = walk_reward(&st, st.p, &[0.0; 6], &[0.0; 6], &cfg);
        assert_abs_diff_eq!(r.term("height").unwrap().value, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.term("height").unwrap().weighted, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn walk_reward_stationary_at_origin() {
        let cfg = TaskConfig::walk();
        let st = mk_state(Quat::IDENTITY, Vec3::ZERO, [0.0; 6]);
        let r = walk_reward(&st, Vec3::ZERO, &[0.0; 6], &[0.0; 6], &cfg);
        // height 0, up and heading saturated, alive 1, no penalties.
        assert_abs_diff_eq!(r.total, 5.0 + 2.0 + 1.0, epsilon = 1e-9);
        assert!(!r.death);
    }

    #[test]
    fn walk_reward_heading_defined_at_target() {
        let cfg = TaskConfig::walk();
        let st = mk_state(Quat::IDENTITY, cfg.target, [0.0; 6]);
        let r = walk_reward(&st, cfg.target, &[0.0; 6], &[0.0; 6], &cfg);
        assert_eq!(r.term("heading").unwrap().value, 1.0);
    }

    // ── Stand-up reward ───────────────────────────────────────────────

    #[test]
    fn standup_reward_upright_values() {
        let cfg = TaskConfig::standup();
        let up = mk_state(Quat::IDENTITY, Vec3::ZERO, [0.0; 6]);
        let r = standup_reward(&up, &[0.0; 6], &[0.0; 6], &cfg);
        assert_abs_diff_eq!(r.term("upright").unwrap().weighted, 250.0, epsilon = 1e-9);

        let half = mk_state(tilted_about_x(0.5_f64.acos()), Vec3::ZERO, [0.0; 6]);
        let r = standup_reward(&half, &[0.0; 6], &[0.0; 6], &cfg);
        assert_abs_diff_eq!(r.term("upright").unwrap().value, (-1.0_f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.term("upright").unwrap().weighted, 91.9699, epsilon = 1e-4);
    }

    #[test]
    fn standup_reward_standing_gate() {
        let cfg = TaskConfig::standup();
        let near_up = mk_state(tilted_about_x(0.9_f64.acos()), Vec3::ZERO, [0.0; 6]);
        let r = standup_reward(&near_up, &cfg.stand_pose.clone(), &cfg.stand_pose.clone(), &cfg);
        assert_abs_diff_eq!(r.term("standing").unwrap().value, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.term("standing").unwrap().weighted, 1000.0, epsilon = 1e-4);

        let below = mk_state(tilted_about_x(0.8_f64.acos()), Vec3::ZERO, [0.0; 6]);
        let r = standup_reward(&below, &cfg.stand_pose.clone(), &cfg.stand_pose.clone(), &cfg);
        assert_eq!(r.term("standing").unwrap().value, 0.0);
    }

    #[test]
    fn standup_reward_spreading_gate() {
        let cfg = TaskConfig::standup();
        let spread = [-1.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        let tilted = mk_state(tilted_about_x(0.3_f64.acos()), Vec3::ZERO, [0.0; 6]);
        let r = standup_reward(&tilted, &spread, &spread, &cfg);
        assert_abs_diff_eq!(r.term("spreading").unwrap().value, 10.0, epsilon = 1e-9);

        let low = mk_state(tilted_about_x(0.1_f64.acos()), Vec3::ZERO, [0.0; 6]);
        let r = standup_reward(&low, &spread, &spread, &cfg);
        assert_eq!(r.term("spreading").unwrap().value, 0.0);
    }

    // ── Reset truth tables ────────────────────────────────────────────

    #[test]
    fn walk_reset_truth_table() {
        let cfg = TaskConfig::walk();
        let clear = ContactSet::default();
        let live = mk_state(Quat::IDENTITY, Vec3::new(0.0, 0.0, 0.08), [0.0; 6]);
        assert_eq!(walk_reset(&live, &clear, 10, &cfg), ResetReason::None);
        assert_eq!(walk_reset(&live, &clear, 351, &cfg), ResetReason::MaxEpisode);
        assert_eq!(walk_reset(&live, &clear, 350, &cfg), ResetReason::None);

        let tilted = mk_state(Quat::new(0.5, 0.5, 0.5, 0.5), Vec3::new(0.0, 0.0, 0.08), [0.0; 6]);
        assert_eq!(walk_reset(&tilted, &clear, 10, &cfg), ResetReason::Tilt);

        let mut grounded = ContactSet::default();
        grounded.seat_corners[2] = ContactPoint { in_contact: true, normal_force: 1.0 };
        assert_eq!(walk_reset(&live, &grounded, 10, &cfg), ResetReason::Ground);

        let low = mk_state(Quat::IDENTITY, Vec3::new(0.0, 0.0, 0.004), [0.0; 6]);
        assert_eq!(walk_reset(&low, &clear, 10, &cfg), ResetReason::Height);
    }

    #[test]
    fn walk_reset_tilt_boundary() {
        let cfg = TaskConfig::walk();
        let clear = ContactSet::default();
        // For a rotation of θ about x the quaternion chord from identity is
        // 2·sin(θ/4); invert it to land exactly at the limit ± 1e-6.
        for (delta, expect) in [(-1e-6, ResetReason::None), (1e-6, ResetReason::Tilt)] {
            let theta = 4.0 * ((0.7_f64 + delta) / 2.0).asin();
            let st = mk_state(tilted_about_x(theta), Vec3::new(0.0, 0.0, 0.08), [0.0; 6]);
            assert_eq!(walk_reset(&st, &clear, 1, &cfg), expect, "delta {delta}");
        }
    }

    #[test]
    fn standup_reset_truth_table() {
        let cfg = TaskConfig::standup();
        let flipped = mk_state(tilted_about_x((-0.8_f64).acos()), Vec3::ZERO, [0.0; 6]);
        assert_eq!(standup_reset(&flipped, 10, &cfg), ResetReason::Flip);

        let raised_q = tilted_about_x(0.7_f64.acos());
        let ok_joints = [-1.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        let raised = mk_state(raised_q, Vec3::ZERO, ok_joints);
        assert_eq!(standup_reset(&raised, 10, &cfg), ResetReason::None);

        let folded = mk_state(raised_q, Vec3::ZERO, [0.5, -1.0, 0.0, 1.0, 0.0, -1.0]);
        assert_eq!(standup_reset(&folded, 10, &cfg), ResetReason::Fold);

        assert_eq!(standup_reset(&raised, 351, &cfg), ResetReason::MaxEpisode);
    }

    #[test]
    fn standup_reset_boundaries() {
        let cfg = TaskConfig::standup();
        for (u, expect) in [(-0.7_f64 + 1e-6, ResetReason::None), (-0.7 - 1e-6, ResetReason::Flip)] {
            let st = mk_state(tilted_about_x(u.acos()), Vec3::ZERO, [-1.0, -1.0, 0.0, 1.0, 0.0, -1.0]);
            assert_eq!(standup_reset(&st, 1, &cfg), expect, "u {u}");
        }
        // fold distance exactly at the limit stays live; just past it folds
        let q = tilted_about_x(0.7_f64.acos());
        for (a0, expect) in [(0.0, ResetReason::None), (1e-6, ResetReason::Fold)] {
            let st = mk_state(q, Vec3::ZERO, [a0, -1.0, 0.0, 1.0, 0.0, -1.0]);
            assert_eq!(standup_reset(&st, 1, &cfg), expect, "a0 {a0}");
        }
    }

    // ── Stepping, termination, auto-reset ─────────────────────────────

    #[test]
    fn zero_action_step_on_standing_walk_env() {
        let mut env = walk_env(1);
        let (obs, reward, status) = env.step(&[0.0; 6]).unwrap();
        assert_eq!(status.reason, ResetReason::None);
        assert!(reward.total > 0.0, "total = {}", reward.total);
        assert_eq!(obs.len(), OBS_DIM);
    }

    #[test]
    fn episode_times_out_and_reinitializes() {
        let mut cfg = TaskConfig::walk();
        cfg.max_steps = 5;
        let mut env =
            EnvInstance::new(0, RobotModel::builtin(), PhysicsConfig::default(), cfg, 1).unwrap();
        let hold = env.state().joints;
        for k in 1..=5 {
            let (_, _, status) = env.step(&hold).unwrap();
            assert_eq!(status.reason, ResetReason::None, "step {k}");
            assert_eq!(status.step, k);
        }
        let (obs, reward, status) = env.step(&hold).unwrap();
        assert_eq!(status.reason, ResetReason::MaxEpisode);
        assert_eq!(status.step, 6);
        assert!(!reward.death, "timeout is not a death");
        assert!(reward.total > -1.0);
        // fresh episode: padded observation, counter rewound
        assert_eq!(env.episode_step(), 0);
        assert_eq!(&obs[0..10], &obs[10..20]);
        assert_eq!(&obs[20..30], &obs[30..40]);
    }

    #[test]
    fn death_overwrites_the_total() {
        let mut env = walk_env(1);
        let mut st = env.state();
        st.q = tilted_about_x(0.8);
        st.p.z = 0.08;
        env.sim.set_state(&st);
        let hold = st.joints;
        let (_, reward, status) = env.step(&hold).unwrap();
        assert_eq!(status.reason, ResetReason::Tilt);
        assert!(reward.death);
        assert_eq!(reward.total, -1.0);
    }

    #[test]
    fn observation_slots_shift_by_ten_each_step() {
        let mut env = walk_env(2);
        let trace = compile_script(&walk_script()).unwrap();
        let mut prev = env.observation();
        for k in 0..8 {
            let (joints, _) = env.sim.model().servo_to_joint(&trace[k % trace.len()]);
            let (obs, _, status) = env.step(&joints).unwrap();
            assert_eq!(status.reason, ResetReason::None);
            assert_eq!(&obs[0..30], &prev[10..40], "step {k}");
            prev = obs;
        }
    }

    #[test]
    fn walk_progress_telescopes_over_an_episode() {
        let mut env = walk_env(3);
        let trace = compile_script(&walk_script()).unwrap();
        let target = env.config().target;
        let score = move |p: Vec3| -(target - p).norm() / COMMAND_PERIOD;
        let start = score(env.state().p);
        let mut total = 0.0;
        for k in 0..30 {
            let (joints, _) = env.sim.model().servo_to_joint(&trace[k % trace.len()]);
            let (_, reward, status) = env.step(&joints).unwrap();
            assert_eq!(status.reason, ResetReason::None);
            total += reward.term("progress").unwrap().value;
        }
        let end = score(env.state().p);
        assert_abs_diff_eq!(total, end - start, epsilon = 1e-6);
    }

    // ── Initial poses ─────────────────────────────────────────────────

    #[test]
    fn standup_reset_from_right_side_is_sideways() {
        let mut env = standup_env(0, 5);
        let obs = env.reset_from(ResetPose::RightSide).unwrap();
        let q = Quat::new(obs[30], obs[31], obs[32], obs[33]);
        assert!(u_prj(q).unwrap().abs() < 0.15);
    }

    #[test]
    fn standup_initial_poses_cover_all_three() {
        // Classify by where the seat normal ends up: lying on a side puts it
        // along ±y, tipping over the backrest puts it along -x.
        let mut seen = [false; 3];
        for id in 0..12 {
            let env = standup_env(id, 9);
            let n = env.state().q.rotate(Vec3::new(0.0, 0.0, 1.0));
            if n.y < -0.7 {
                seen[0] = true;
            } else if n.y > 0.7 {
                seen[1] = true;
            } else if n.x < -0.7 {
                seen[2] = true;
            }
        }
        assert_eq!(seen, [true; 3], "poses drawn: {seen:?}");
    }

    // ── Randomization ─────────────────────────────────────────────────

    #[test]
    fn zero_width_randomize_is_bitwise_identical() {
        let mut plain = walk_env(7);
        let mut zeroed = walk_env(7);
        zeroed.randomize(&NoiseConfig::ZERO).unwrap();
        let trace = compile_script(&walk_script()).unwrap();
        for k in 0..20 {
            let (joints, _) = plain.sim.model().servo_to_joint(&trace[k % trace.len()]);
            let (oa, ra, _) = plain.step(&joints).unwrap();
            let (ob, rb, _) = zeroed.step(&joints).unwrap();
            assert!(oa == ob, "observations diverged at step {k}");
            assert_eq!(ra.total.to_bits(), rb.total.to_bits(), "rewards diverged at step {k}");
        }
    }

    #[test]
    fn randomize_perturbs_physical_parameters() {
        let mut env = walk_env(11);
        let friction0 = env.sim.config().friction;
        let stiffness0 = env.sim.config().contact_stiffness;
        let seat0 = env.sim.model().seat_mass;
        env.randomize(&NoiseConfig::default()).unwrap();
        assert_ne!(env.sim.config().friction, friction0);
        assert_ne!(env.sim.config().contact_stiffness, stiffness0);
        assert_ne!(env.sim.model().seat_mass, seat0);
        env.step(&[0.0; 6]).unwrap();
    }

    #[test]
    fn randomize_draws_are_seed_reproducible() {
        let mut a = walk_env(13);
        let mut b = walk_env(13);
        a.randomize(&NoiseConfig::default()).unwrap();
        b.randomize(&NoiseConfig::default()).unwrap();
        assert_eq!(a.sim.config().friction.to_bits(), b.sim.config().friction.to_bits());
        assert_eq!(a.sim.model().seat_mass.to_bits(), b.sim.model().seat_mass.to_bits());
        let (oa, _, _) = a.step(&[0.0; 6]).unwrap();
        let (ob, _, _) = b.step(&[0.0; 6]).unwrap();
        assert!(oa == ob);
    }

    #[test]
    fn sensor_noise_perturbs_the_observed_quaternion() {
        let mut env = walk_env(17);
        env.randomize(&NoiseConfig { quat_sigma: 0.01, ..NoiseConfig::ZERO }).unwrap();
        let (obs, _, _) = env.step(&[0.0; 6]).unwrap();
        let observed = Quat::new(obs[30], obs[31], obs[32], obs[33]);
        let truth = env.state().q;
        let diff = ((observed.x - truth.x).powi(2)
            + (observed.y - truth.y).powi(2)
            + (observed.z - truth.z).powi(2)
            + (observed.w - truth.w).powi(2))
        .sqrt();
        assert!(diff > 0.0, "no noise injected");
        assert!(diff < 0.2, "noise implausibly large: {diff}");
        assert_abs_diff_eq!(observed.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn action_noise_spread_matches_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sigma = 0.02;
        let mut sum_sq = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            for v in gaussian6(&mut rng, sigma) {
                sum_sq += v * v;
            }
        }
        let std = (sum_sq / (draws as f64 * 6.0)).sqrt();
        assert!((std - sigma).abs() < 0.1 * sigma, "std = {std}");
    }

    // ── Batch facade ──────────────────────────────────────────────────

    #[test]
    fn batch_stepping_equals_sequential() {
        let model = RobotModel::builtin();
        let phys = PhysicsConfig::default();
        let cfg = TaskConfig::walk();
        let mut vec_env = VecEnv::new(&model, &phys, &cfg, 3, 29).unwrap();
        let mut solo: Vec<EnvInstance> = (0..3)
            .map(|id| EnvInstance::new(id, model.clone(), phys.clone(), cfg.clone(), 29).unwrap())
            .collect();
        let actions = [[0.0; 6], [0.1; 6], [-0.1; 6]];
        for _ in 0..5 {
            let batch = vec_env.step(&actions).unwrap();
            for (i, (obs, reward, status)) in batch.iter().enumerate() {
                let (o, r, s) = solo[i].step(&actions[i]).unwrap();
                assert!(*obs == o);
                assert_eq!(reward.total.to_bits(), r.total.to_bits());
                assert_eq!(*status, s);
            }
        }
    }

    // ── Config files ──────────────────────────────────────────────────

    #[test]
    fn bundled_walk_config_matches_defaults() {
        let src = include_str!("../../../configs/walk.cfg");
        let cfg = parse_task_config(src, "configs/walk.cfg").unwrap();
        assert_eq!(cfg, TaskConfig::walk());
    }

    #[test]
    fn bundled_standup_config_matches_defaults() {
        let src = include_str!("../../../configs/standup.cfg");
        let cfg = parse_task_config(src, "configs/standup.cfg").unwrap();
        assert_eq!(cfg, TaskConfig::standup());
    }

    #[test]
    fn config_task_key_selects_the_default_set() {
        let cfg = parse_task_config("task = standup", "t.cfg").unwrap();
        assert_eq!(cfg, TaskConfig::standup());
        let cfg = parse_task_config("", "t.cfg").unwrap();
        assert_eq!(cfg, TaskConfig::walk());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let err = parse_task_config("wheel_count = 4", "t.cfg").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "got: {err}");
        assert!(err.to_string().contains("t.cfg:1"), "got: {err}");

        let err = parse_task_config("task = fly", "t.cfg").unwrap_err();
        assert!(err.to_string().contains("unknown task"), "got: {err}");

        let err = parse_task_config("stand_pose = 1 2 3", "t.cfg").unwrap_err();
        assert!(err.to_string().contains("needs 6 numbers"), "got: {err}");

        let err = parse_task_config("tilt_limit = tall", "t.cfg").unwrap_err();
        assert!(err.to_string().contains("needs a number"), "got: {err}");
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let mut cfg = TaskConfig::walk();
        cfg.max_steps = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = TaskConfig::walk();
        cfg.joint_vel_max = 0.5;
        assert!(cfg.validate().is_err());

        let mut cfg = TaskConfig::standup();
        cfg.standing_gate = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = TaskConfig::walk();
        cfg.noise.quat_sigma = -0.1;
        assert!(cfg.validate().is_err());
    }

    // ── Properties ────────────────────────────────────────────────────

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_quat() -> impl Strategy<Value = Quat> {
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
                .prop_filter_map("degenerate quaternion", |(x, y, z, w)| {
                    let q = Quat::new(x, y, z, w);
                    (q.norm() > 1e-3).then(|| q.normalized())
                })
        }

        fn arb_joints() -> impl Strategy<Value = JointAngles> {
            proptest::array::uniform6(-1.2..1.2f64)
        }

        fn arb_state() -> impl Strategy<Value = RobotState> {
            (arb_quat(), proptest::array::uniform3(-1.0..1.0f64), arb_joints(), proptest::array::uniform6(-12.0..12.0f64))
                .prop_map(|(q, p, joints, joint_rates)| RobotState {
                    p: Vec3::new(p[0], p[1], p[2]),
                    q,
                    v: Vec3::ZERO,
                    w: Vec3::ZERO,
                    joints,
                    joint_rates,
                })
        }

        proptest! {
            #[test]
            fn walk_total_is_the_sum_of_weighted_terms(
                st in arb_state(), p_prev in proptest::array::uniform3(-1.0..1.0f64),
                a_prev in arb_joints(), action in arb_joints()
            ) {
                let cfg = TaskConfig::walk();
                let r = walk_reward(&st, Vec3::new(p_prev[0], p_prev[1], p_prev[2]), &a_prev, &action, &cfg);
                let sum: f64 = r.terms.iter().map(|t| t.weighted).sum();
                prop_assert_eq!(r.total.to_bits(), sum.to_bits());
            }

            #[test]
            fn standup_total_is_the_sum_of_weighted_terms(
                st in arb_state(), a_prev in arb_joints(), action in arb_joints()
            ) {
                let cfg = TaskConfig::standup();
                let r = standup_reward(&st, &a_prev, &action, &cfg);
                let sum: f64 = r.terms.iter().map(|t| t.weighted).sum();
                prop_assert_eq!(r.total.to_bits(), sum.to_bits());
            }

            #[test]
            fn reset_predicates_are_idempotent(st in arb_state(), step in 0u32..400) {
                let walk_cfg = TaskConfig::walk();
                let stand_cfg = TaskConfig::standup();
                let contacts = ContactSet::default();
                prop_assert_eq!(
                    walk_reset(&st, &contacts, step, &walk_cfg),
                    walk_reset(&st, &contacts, step, &walk_cfg)
                );
                prop_assert_eq!(
                    standup_reset(&st, step, &stand_cfg),
                    standup_reset(&st, step, &stand_cfg)
                );
            }

            #[test]
            fn observation_append_shifts_one_slot(
                quats in proptest::collection::vec(arb_quat(), 2..6),
                base in -1.0..1.0f64
            ) {
                let history: Vec<(Quat, JointAngles)> =
                    quats.iter().enumerate().map(|(k, &q)| (q, [base + k as f64; 6])).collect();
                let shorter = build_observation(&history[..history.len() - 1]);
                let longer = build_observation(&history);
                prop_assert_eq!(&longer[0..30], &shorter[10..40]);
            }
        }
    }

    #[test]
    fn standing_reset_tracks_the_standing_posture() {
        // STANDING_POSTURE is the walk's first command; the env's standing
        // reset tracks it through the physics layer.
        let env = walk_env(31);
        let (expect, _) = env.sim.model().servo_to_joint(&STANDING_POSTURE);
        for (a, b) in env.state().joints.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }
}
