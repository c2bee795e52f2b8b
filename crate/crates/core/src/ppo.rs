//! Proximal Policy Optimization over the vectorized chair environments:
//! a hand-rolled actor-critic network, generalized advantage estimation,
//! clipped-surrogate updates with Adam, text checkpoints, and deterministic
//! seeded training.
//!
//! The network keeps every weight in one flat `Vec<f64>` (see [`PolicyNet`]),
//! which makes the optimizer, gradient checks against finite differences,
//! and checkpoint round-trips straightforward. Actions are tanh-squashed to
//! the joint range; observations are normalized by running statistics that
//! travel with the checkpoint.

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::env::{
    EnvError, EnvInstance, Observation, ResetReason, RewardBreakdown, Task, TaskConfig, VecEnv,
    OBS_DIM,
};
use crate::geom::{quat_to_rpy, u_prj, Vec3};
use crate::model::{JointAngles, RobotModel};
use crate::physics::{PhysicsConfig, ResetPose, RobotState};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("bad train config: {0}")]
    BadConfig(String),
    #[error("non-finite observation at index {index}: {value}")]
    BadObservation { index: usize, value: f64 },
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Checkpoint { path: String, line: usize, msg: String },
    #[error("checkpoint format is `{found}` but this build reads `{expected}`")]
    VersionMismatch { found: String, expected: String },
}

/// Actions are the six joint angles.
pub const ACT_DIM: usize = 6;

// ── Training configuration ────────────────────────────────────────────────

/// Every trainer hyperparameter. Defaults are conventional PPO settings for
/// continuous control; `epochs` follows the task (see [`TrainConfig::for_task`]).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Parallel environment instances per rollout.
    pub n_envs: usize,
    /// Steps collected per environment per epoch.
    pub horizon: usize,
    /// Collect→update cycles in the plain stage.
    pub epochs: usize,
    /// Additional cycles with environment randomization enabled (0 = none).
    pub noise_epochs: usize,
    /// Optimization passes over each rollout.
    pub update_epochs: usize,
    /// Minibatches per optimization pass.
    pub minibatches: usize,
    /// Discount γ.
    pub gamma: f64,
    /// Advantage-estimation decay λ.
    pub lam: f64,
    /// Surrogate clip radius ε.
    pub clip: f64,
    /// Adam learning rate.
    pub lr: f64,
    /// Entropy-bonus coefficient.
    pub entropy_coef: f64,
    /// Starting log-std of the action distribution.
    pub log_std_init: f64,
    /// Value-loss coefficient.
    pub value_coef: f64,
    /// Global gradient-norm clip.
    pub max_grad_norm: f64,
    /// Master seed for environments, initialization, sampling, shuffling.
    pub seed: u64,
    /// Hidden width of both MLPs.
    pub hidden: usize,
    /// Epochs between periodic checkpoint writes.
    pub save_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_envs: 1024,
            horizon: 32,
            epochs: 100,
            noise_epochs: 0,
            update_epochs: 4,
            minibatches: 8,
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            lr: 3e-4,
            entropy_coef: 0.001,
            log_std_init: -1.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            seed: 0,
            hidden: 64,
            save_interval: 25,
        }
    }
}

impl TrainConfig {
    /// Defaults with the per-task epoch count (walking 100, stand-up 250).
    pub fn for_task(task: Task) -> Self {
        let epochs = match task {
            Task::Walk => 100,
            Task::Standup => 250,
        };
        TrainConfig { epochs, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |msg: String| Err(PpoError::BadConfig(msg));
        if self.n_envs == 0 {
            return bad("n_envs must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.update_epochs == 0 {
            return bad("update_epochs must be at least 1".into());
        }
        if self.minibatches == 0 || self.minibatches > self.n_envs * self.horizon {
            return bad(format!(
                "minibatches must be in 1..={}, got {}",
                self.n_envs * self.horizon,
                self.minibatches
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return bad(format!("lam must be in [0, 1], got {}", self.lam));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip must be in (0, 1), got {}", self.clip));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return bad(format!("entropy_coef must be non-negative, got {}", self.entropy_coef));
        }
        if !(self.value_coef >= 0.0 && self.value_coef.is_finite()) {
            return bad(format!("value_coef must be non-negative, got {}", self.value_coef));
        }
        if !(self.max_grad_norm > 0.0) {
            return bad(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1".into());
        }
        if self.save_interval == 0 {
            return bad("save_interval must be at least 1".into());
        }
        Ok(())
    }
}

// ── Observation normalization ─────────────────────────────────────────────

/// Running per-component mean/variance (Welford), applied as
/// `clamp((x − mean) / √(var + 1e-8), ±10)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNorm {
    fn new() -> Self {
        RunningNorm { count: 1e-4, mean: vec![0.0; OBS_DIM], m2: vec![1e-4; OBS_DIM] }
    }

    pub fn update(&mut self, x: &[f64; OBS_DIM]) {
        self.count += 1.0;
        for j in 0..OBS_DIM {
            let delta = x[j] - self.mean[j];
            self.mean[j] += delta / self.count;
            self.m2[j] += delta * (x[j] - self.mean[j]);
        }
    }

    pub fn apply(&self, x: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        for j in 0..OBS_DIM {
            let var = self.m2[j] / self.count;
            out[j] = ((x[j] - self.mean[j]) / (var + 1e-8).sqrt()).clamp(-10.0, 10.0);
        }
        out
    }

    pub fn count(&self) -> f64 {
        self.count
    }
}

// ── Network ───────────────────────────────────────────────────────────────

/// Slice indices of each parameter block inside the flat vector, in storage
/// order: actor layers 1–3, log-std, critic layers 1–3.
#[derive(Debug, Clone, Copy)]
struct Layout {
    h: usize,
}

const N_BLOCKS: usize = 13;
const B_AW1: usize = 0;
const B_AB1: usize = 1;
const B_AW2: usize = 2;
const B_AB2: usize = 3;
const B_AW3: usize = 4;
const B_AB3: usize = 5;
const B_LSTD: usize = 6;
const B_CW1: usize = 7;
const B_CB1: usize = 8;
const B_CW2: usize = 9;
const B_CB2: usize = 10;
const B_CW3: usize = 11;
const B_CB3: usize = 12;

impl Layout {
    fn sizes(self) -> [usize; N_BLOCKS] {
        let h = self.h;
        [
            h * OBS_DIM,
            h,
            h * h,
            h,
            ACT_DIM * h,
            ACT_DIM,
            ACT_DIM,
            h * OBS_DIM,
            h,
            h * h,
            h,
            h,
            1,
        ]
    }

    fn ranges(self) -> [Range<usize>; N_BLOCKS] {
        let mut start = 0;
        self.sizes().map(|len| {
            let r = start..start + len;
            start += len;
            r
        })
    }

    fn total(self) -> usize {
        self.sizes().iter().sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

/// `ln(1 − tanh²(u))` in an overflow-safe form.
fn ln_sech2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Actor-critic with tanh hidden layers: actor `40 → h → h → 6` plus a
/// state-independent log-std vector, critic `40 → h → h → 1`. All parameters
/// live in one flat vector in [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    hidden: usize,
    params: Vec<f64>,
    norm: RunningNorm,
    /// Per-joint action bounds, rad.
    low: [f64; ACT_DIM],
    high: [f64; ACT_DIM],
}

/// Log-std clamp bounds.
pub const LOG_STD_RANGE: (f64, f64) = (-5.0, 2.0);
const LOG_STD_INIT: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// One policy query: the squashed action, its pre-squash coordinates (kept
/// for exact likelihood ratios during updates), log-probability, and value.
#[derive(Debug, Clone, Copy)]
pub struct ActionSample {
    pub action: JointAngles,
    pub pre_squash: [f64; ACT_DIM],
    pub log_prob: f64,
    pub value: f64,
}

impl PolicyNet {
    /// Fresh network with the given hidden width and per-joint bounds.
    /// Hidden layers get uniform Xavier weights; the actor output layer is
    /// zero-initialized so the starting policy commands the range midpoint.
    pub fn new(
        hidden: usize,
        low: [f64; ACT_DIM],
        high: [f64; ACT_DIM],
        rng: &mut ChaCha8Rng,
    ) -> PolicyNet {
        let layout = Layout { h: hidden };
        let mut params = vec![0.0; layout.total()];
        let r = layout.ranges();
        let mut xavier = |range: Range<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-limit..limit);
            }
        };
        xavier(r[B_AW1].clone(), OBS_DIM, hidden);
        xavier(r[B_AW2].clone(), hidden, hidden);
        xavier(r[B_CW1].clone(), OBS_DIM, hidden);
        xavier(r[B_CW2].clone(), hidden, hidden);
        xavier(r[B_CW3].clone(), hidden, 1);
        for p in &mut params[r[B_LSTD].clone()] {
            *p = LOG_STD_INIT;
        }
        PolicyNet { hidden, params, norm: RunningNorm::new(), low, high }
    }

    /// Fresh network whose action bounds come from the model's joint ranges.
    pub fn for_model(hidden: usize, model: &RobotModel, rng: &mut ChaCha8Rng) -> PolicyNet {
        let mut low = [0.0; ACT_DIM];
        let mut high = [0.0; ACT_DIM];
        for j in 0..ACT_DIM {
            let (lo, hi) = model.joint_range_deg[j];
            low[j] = lo.to_radians();
            high[j] = hi.to_radians();
        }
        PolicyNet::new(hidden, low, high, rng)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn norm(&self) -> &RunningNorm {
        &self.norm
    }

    pub fn norm_mut(&mut self) -> &mut RunningNorm {
        &mut self.norm
    }

    pub fn bounds(&self) -> ([f64; ACT_DIM], [f64; ACT_DIM]) {
        (self.low, self.high)
    }

    fn layout(&self) -> Layout {
        Layout { h: self.hidden }
    }

    fn center(&self, j: usize) -> f64 {
        0.5 * (self.low[j] + self.high[j])
    }

    fn half_span(&self, j: usize) -> f64 {
        0.5 * (self.high[j] - self.low[j])
    }

    /// Forward through one head. `a1`/`a2` receive the post-tanh hidden
    /// activations; the return value is the linear output layer.
    fn head_forward(
        &self,
        blocks: [usize; 6],
        x: &[f64],
        a1: &mut Vec<f64>,
        a2: &mut Vec<f64>,
    ) -> Vec<f64> {
        let h = self.hidden;
        let r = self.layout().ranges();
        let (w1, b1) = (&self.params[r[blocks[0]].clone()], &self.params[r[blocks[1]].clone()]);
        let (w2, b2) = (&self.params[r[blocks[2]].clone()], &self.params[r[blocks[3]].clone()]);
        let (w3, b3) = (&self.params[r[blocks[4]].clone()], &self.params[r[blocks[5]].clone()]);
        a1.clear();
        a1.extend((0..h).map(|i| (dot(&w1[i * OBS_DIM..(i + 1) * OBS_DIM], x) + b1[i]).tanh()));
        a2.clear();
        a2.extend((0..h).map(|i| (dot(&w2[i * h..(i + 1) * h], a1) + b2[i]).tanh()));
        (0..b3.len()).map(|i| dot(&w3[i * h..(i + 1) * h], a2) + b3[i]).collect()
    }

    /// Backpropagate `dout` (gradient at the linear output) through one head,
    /// accumulating parameter gradients into `grad`.
    #[allow(clippy::too_many_arguments)]
    fn head_backward(
        &self,
        blocks: [usize; 6],
        x: &[f64],
        a1: &[f64],
        a2: &[f64],
        dout: &[f64],
        grad: &mut [f64],
        d1: &mut Vec<f64>,
        d2: &mut Vec<f64>,
    ) {
        let h = self.hidden;
        let r = self.layout().ranges();
        d2.clear();
        d2.resize(h, 0.0);
        {
            let w3 = &self.params[r[blocks[4]].clone()];
            for (i, &g) in dout.iter().enumerate() {
                axpy(g, &a2[..], &mut grad[r[blocks[4]].clone()][i * h..(i + 1) * h]);
                grad[r[blocks[5]].clone()][i] += g;
                axpy(g, &w3[i * h..(i + 1) * h], d2);
            }
        }
        for (di, ai) in d2.iter_mut().zip(a2) {
            *di *= 1.0 - ai * ai;
        }
        d1.clear();
        d1.resize(h, 0.0);
        {
            let w2 = &self.params[r[blocks[2]].clone()];
            for (i, &g) in d2.iter().enumerate() {
                axpy(g, &a1[..], &mut grad[r[blocks[2]].clone()][i * h..(i + 1) * h]);
                grad[r[blocks[3]].clone()][i] += g;
                axpy(g, &w2[i * h..(i + 1) * h], d1);
            }
        }
        for (di, ai) in d1.iter_mut().zip(a1) {
            *di *= 1.0 - ai * ai;
        }
        for (i, &g) in d1.iter().enumerate() {
            axpy(g, x, &mut grad[r[blocks[0]].clone()][i * OBS_DIM..(i + 1) * OBS_DIM]);
            grad[r[blocks[1]].clone()][i] += g;
        }
    }

    fn actor_blocks() -> [usize; 6] {
        [B_AW1, B_AB1, B_AW2, B_AB2, B_AW3, B_AB3]
    }

    fn critic_blocks() -> [usize; 6] {
        [B_CW1, B_CB1, B_CW2, B_CB2, B_CW3, B_CB3]
    }

    fn log_std(&self) -> &[f64] {
        &self.params[self.layout().ranges()[B_LSTD].clone()]
    }

    /// Mean action in pre-squash coordinates for a normalized observation.
    fn mean_raw(&self, x: &[f64], a1: &mut Vec<f64>, a2: &mut Vec<f64>) -> [f64; ACT_DIM] {
        let out = self.head_forward(Self::actor_blocks(), x, a1, a2);
        let mut mu = [0.0; ACT_DIM];
        mu.copy_from_slice(&out);
        mu
    }

    fn value_raw(&self, x: &[f64], a1: &mut Vec<f64>, a2: &mut Vec<f64>) -> f64 {
        self.head_forward(Self::critic_blocks(), x, a1, a2)[0]
    }

    /// Value estimate for a raw observation.
    pub fn value(&self, obs: &Observation) -> f64 {
        let x = self.norm.apply(obs);
        self.value_raw(&x, &mut Vec::new(), &mut Vec::new())
    }

    /// Squash pre-squash coordinates to the joint range and return the
    /// log-density of `u` under `N(mu, diag σ²)` pushed through the squash.
    fn squash(&self, mu: &[f64; ACT_DIM], u: &[f64; ACT_DIM]) -> (JointAngles, f64) {
        let lstd = self.log_std();
        let mut action = [0.0; ACT_DIM];
        let mut log_prob = 0.0;
        for j in 0..ACT_DIM {
            let sigma = lstd[j].exp();
            let z = (u[j] - mu[j]) / sigma;
            log_prob += -0.5 * z * z - lstd[j] - 0.5 * ln_2pi();
            log_prob -= self.half_span(j).ln() + ln_sech2(u[j]);
            action[j] = self.center(j) + self.half_span(j) * u[j].tanh();
        }
        (action, log_prob)
    }
}

/// Query the policy on one observation: deterministic mode returns the
/// squashed mean action, stochastic mode samples the squashed Gaussian.
pub fn policy_act(
    net: &PolicyNet,
    obs: &Observation,
    mode: ActMode,
    rng: &mut ChaCha8Rng,
) -> Result<ActionSample, PpoError> {
    if let Some(index) = obs.iter().position(|v| !v.is_finite()) {
        return Err(PpoError::BadObservation { index, value: obs[index] });
    }
    let x = net.norm.apply(obs);
    let (mut a1, mut a2) = (Vec::new(), Vec::new());
    let mu = net.mean_raw(&x, &mut a1, &mut a2);
    let u = match mode {
        ActMode::Deterministic => mu,
        ActMode::Stochastic => {
            let lstd = net.log_std();
            std::array::from_fn(|j| {
                let eps: f64 = rng.sample(StandardNormal);
                mu[j] + lstd[j].exp() * eps
            })
        }
    };
    let (action, log_prob) = net.squash(&mu, &u);
    let value = net.value_raw(&x, &mut a1, &mut a2);
    Ok(ActionSample { action, pre_squash: u, log_prob, value })
}

// ── Rollout storage and advantage estimation ──────────────────────────────

/// Rectangular `n_envs × horizon` rollout in time-major order
/// (`index = t * n_envs + i`). Observations are stored normalized, exactly
/// as the policy consumed them.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    pub obs: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<JointAngles>,
    pub pre_squash: Vec<[f64; ACT_DIM]>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub reasons: Vec<ResetReason>,
    /// Value estimate of each env's observation after the last step.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, horizon: usize) -> RolloutBuffer {
        let cap = n_envs * horizon;
        RolloutBuffer {
            n_envs,
            horizon,
            obs: Vec::with_capacity(cap),
            actions: Vec::with_capacity(cap),
            pre_squash: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            reasons: Vec::with_capacity(cap),
            bootstrap: vec![0.0; n_envs],
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generalized advantage estimation with done-masking:
/// `δ_t = r_t + γ·V_{t+1}·(1−done_t) − V_t`, advantages accumulate
/// `A_t = δ_t + γλ·(1−done_t)·A_{t+1}`; returns are `A + V`. Advantages come
/// back raw — [`ppo_update`] normalizes them per update.
pub fn compute_gae(buf: &RolloutBuffer, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, t_max) = (buf.n_envs, buf.horizon);
    assert_eq!(buf.values.len(), n * t_max, "buffer must be complete");
    assert!(buf.rewards.iter().all(|r| r.is_finite()), "rewards must be finite");
    let mut adv = vec![0.0; n * t_max];
    for i in 0..n {
        let mut acc = 0.0;
        for t in (0..t_max).rev() {
            let idx = t * n + i;
            let mask = if buf.dones[idx] { 0.0 } else { 1.0 };
            let next_v = if t + 1 == t_max { buf.bootstrap[i] } else { buf.values[(t + 1) * n + i] };
            let delta = buf.rewards[idx] + gamma * next_v * mask - buf.values[idx];
            acc = delta + gamma * lam * mask * acc;
            adv[idx] = acc;
        }
    }
    let returns = adv.iter().zip(&buf.values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

// ── Loss and gradients ────────────────────────────────────────────────────

/// Per-minibatch loss statistics. `total` is what the optimizer descends:
/// `policy_loss + value_coef·value_loss − entropy_coef·entropy`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub total: f64,
}

fn batch_stats(
    net: &PolicyNet,
    buf: &RolloutBuffer,
    adv: &[f64],
    returns: &[f64],
    idx: &[usize],
    cfg: &TrainConfig,
    mut grad: Option<&mut [f64]>,
) -> LossStats {
    assert!(!idx.is_empty(), "minibatch must not be empty");
    let m = idx.len() as f64;
    let lstd = net.log_std().to_vec();
    let entropy: f64 =
        lstd.iter().map(|l| l + 0.5 * (1.0 + ln_2pi())).sum::<f64>();
    let mut stats = LossStats { entropy, ..LossStats::default() };
    let (mut a1, mut a2) = (Vec::new(), Vec::new());
    let (mut d1, mut d2) = (Vec::new(), Vec::new());
    let lstd_range = net.layout().ranges()[B_LSTD].clone();
    for &k in idx {
        let x = &buf.obs[k];
        let mu = net.mean_raw(x, &mut a1, &mut a2);
        let mut log_prob = 0.0;
        let mut zs = [0.0; ACT_DIM];
        for j in 0..ACT_DIM {
            let sigma = lstd[j].exp();
            let z = (buf.pre_squash[k][j] - mu[j]) / sigma;
            zs[j] = z;
            log_prob += -0.5 * z * z - lstd[j] - 0.5 * ln_2pi();
            log_prob -= net.half_span(j).ln() + ln_sech2(buf.pre_squash[k][j]);
        }
        let ratio = (log_prob - buf.log_probs[k]).exp();
        let unclipped = ratio * adv[k];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv[k];
        stats.policy_loss += -unclipped.min(clipped) / m;
        stats.approx_kl += (buf.log_probs[k] - log_prob) / m;
        if (ratio - 1.0).abs() > cfg.clip {
            stats.clip_fraction += 1.0 / m;
        }
        if let Some(g) = grad.as_deref_mut() {
            // The surrogate only backpropagates while the unclipped branch is
            // active; a saturated clamp has zero gradient.
            let g_logp = if unclipped <= clipped { -ratio * adv[k] / m } else { 0.0 };
            if g_logp != 0.0 {
                let mut dmu = [0.0; ACT_DIM];
                for j in 0..ACT_DIM {
                    let sigma = lstd[j].exp();
                    dmu[j] = g_logp * zs[j] / sigma;
                    g[lstd_range.clone()][j] += g_logp * (zs[j] * zs[j] - 1.0);
                }
                net.head_backward(
                    PolicyNet::actor_blocks(),
                    x,
                    &a1,
                    &a2,
                    &dmu,
                    g,
                    &mut d1,
                    &mut d2,
                );
            }
        }
        let v = net.value_raw(x, &mut a1, &mut a2);
        let err = v - returns[k];
        stats.value_loss += err * err / m;
        if let Some(g) = grad.as_deref_mut() {
            let dv = [2.0 * cfg.value_coef * err / m];
            net.head_backward(
                PolicyNet::critic_blocks(),
                x,
                &a1,
                &a2,
                &dv,
                g,
                &mut d1,
                &mut d2,
            );
        }
    }
    if let Some(g) = grad {
        for j in 0..ACT_DIM {
            g[lstd_range.clone()][j] -= cfg.entropy_coef;
        }
    }
    stats.total =
        stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    stats
}

/// Loss statistics of one minibatch (`idx` indexes into the buffer).
pub fn ppo_loss(
    net: &PolicyNet,
    buf: &RolloutBuffer,
    adv: &[f64],
    returns: &[f64],
    idx: &[usize],
    cfg: &TrainConfig,
) -> LossStats {
    batch_stats(net, buf, adv, returns, idx, cfg, None)
}

/// Loss statistics plus the analytic gradient of `total` with respect to
/// every parameter.
pub fn ppo_grad(
    net: &PolicyNet,
    buf: &RolloutBuffer,
    adv: &[f64],
    returns: &[f64],
    idx: &[usize],
    cfg: &TrainConfig,
) -> (LossStats, Vec<f64>) {
    let mut grad = vec![0.0; net.params.len()];
    let stats = batch_stats(net, buf, adv, returns, idx, cfg, Some(&mut grad));
    (stats, grad)
}

// ── Optimizer ─────────────────────────────────────────────────────────────

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Adam {
        Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            if lr != 0.0 {
                params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
            }
        }
    }
}

// ── Update ────────────────────────────────────────────────────────────────

/// Mean statistics over every minibatch of one update, plus the mean
/// pre-clip gradient norm.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

/// One full PPO update over a collected rollout: computes advantages,
/// normalizes them to mean 0 / std 1, then runs `update_epochs` shuffled
/// passes of `minibatches` clipped-surrogate steps with global gradient-norm
/// clipping. The log-std block is clamped back into [`LOG_STD_RANGE`] after
/// every step.
pub fn ppo_update(
    net: &mut PolicyNet,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, PpoError> {
    let (mut adv, returns) = compute_gae(buf, cfg.gamma, cfg.lam);
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / adv.len() as f64;
    let std = var.sqrt();
    for a in &mut adv {
        *a = (*a - mean) / (std + 1e-8);
    }

    let mut order: Vec<usize> = (0..buf.len()).collect();
    let chunk = buf.len().div_ceil(cfg.minibatches).max(1);
    let mut sum = UpdateStats::default();
    let mut batches = 0.0;
    let lstd_range = net.layout().ranges()[B_LSTD].clone();
    for pass in 0..cfg.update_epochs {
        order.shuffle(rng);
        for (b, idx) in order.chunks(chunk).enumerate() {
            let (stats, mut grad) = ppo_grad(net, buf, &adv, &returns, idx, cfg);
            if !stats.total.is_finite() {
                return Err(PpoError::NonFinite(format!(
                    "pass {pass}, minibatch {b}: policy {}, value {}, entropy {}",
                    stats.policy_loss, stats.value_loss, stats.entropy
                )));
            }
            let norm = dot(&grad, &grad).sqrt();
            if norm > cfg.max_grad_norm {
                let scale = cfg.max_grad_norm / norm;
                for g in &mut grad {
                    *g *= scale;
                }
            }
            opt.step(&mut net.params, &grad, cfg.lr);
            for l in &mut net.params[lstd_range.clone()] {
                *l = l.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
            }
            sum.policy_loss += stats.policy_loss;
            sum.value_loss += stats.value_loss;
            sum.entropy += stats.entropy;
            sum.clip_fraction += stats.clip_fraction;
            sum.approx_kl += stats.approx_kl;
            sum.grad_norm += norm;
            batches += 1.0;
        }
    }
    Ok(UpdateStats {
        policy_loss: sum.policy_loss / batches,
        value_loss: sum.value_loss / batches,
        entropy: sum.entropy / batches,
        clip_fraction: sum.clip_fraction / batches,
        approx_kl: sum.approx_kl / batches,
        grad_norm: sum.grad_norm / batches,
    })
}

// ── Checkpoints ───────────────────────────────────────────────────────────

pub const CHECKPOINT_MAGIC: &str = "CHAIRPOLICY";
pub const CHECKPOINT_VERSION: &str = "v1";

/// Everything needed to restore inference and continue reproducible
/// sampling: config snapshot, flat parameters, observation statistics,
/// action bounds, and the trainer RNG state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub task: Task,
    pub epoch: usize,
    pub config: TrainConfig,
    pub params: Vec<f64>,
    pub action_low: [f64; ACT_DIM],
    pub action_high: [f64; ACT_DIM],
    pub obs_mean: Vec<f64>,
    pub obs_m2: Vec<f64>,
    pub obs_count: f64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
}

impl PolicyCheckpoint {
    pub fn capture(
        task: Task,
        epoch: usize,
        cfg: &TrainConfig,
        net: &PolicyNet,
        rng: &ChaCha8Rng,
    ) -> PolicyCheckpoint {
        PolicyCheckpoint {
            task,
            epoch,
            config: cfg.clone(),
            params: net.params.clone(),
            action_low: net.low,
            action_high: net.high,
            obs_mean: net.norm.mean.clone(),
            obs_m2: net.norm.m2.clone(),
            obs_count: net.norm.count,
            rng_seed: rng.get_seed(),
            rng_stream: rng.get_stream(),
            rng_word_pos: rng.get_word_pos(),
        }
    }

    /// Rebuild the network this checkpoint captured.
    pub fn restore_net(&self) -> Result<PolicyNet, PpoError> {
        let layout = Layout { h: self.config.hidden };
        if self.params.len() != layout.total() {
            return Err(PpoError::BadConfig(format!(
                "checkpoint has {} parameters but hidden {} needs {}",
                self.params.len(),
                self.config.hidden,
                layout.total()
            )));
        }
        Ok(PolicyNet {
            hidden: self.config.hidden,
            params: self.params.clone(),
            norm: RunningNorm {
                count: self.obs_count,
                mean: self.obs_mean.clone(),
                m2: self.obs_m2.clone(),
            },
            low: self.action_low,
            high: self.action_high,
        })
    }

    /// Rebuild the trainer RNG exactly where it left off.
    pub fn restore_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }
}

/// Warning text when a checkpoint trained for one task is used for another.
pub fn task_mismatch_warning(ckpt: &PolicyCheckpoint, requested: Task) -> Option<String> {
    if ckpt.task == requested {
        None
    } else {
        Some(format!(
            "checkpoint was trained for task `{}` but is being used for `{}`",
            ckpt.task.name(),
            requested.name()
        ))
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn float_lines(out: &mut String, values: &[f64]) {
    for row in values.chunks(8) {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Render a checkpoint to its text form: magic line, header fields, fixed
/// config block, RNG state, then named float sections.
pub fn format_checkpoint(ckpt: &PolicyCheckpoint) -> String {
    let mut out = String::new();
    out.push_str(&format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n"));
    out.push_str(&format!("task {}\n", ckpt.task.name()));
    out.push_str(&format!("epoch {}\n", ckpt.epoch));
    let c = &ckpt.config;
    out.push_str(&format!("config n_envs {}\n", c.n_envs));
    out.push_str(&format!("config horizon {}\n", c.horizon));
    out.push_str(&format!("config epochs {}\n", c.epochs));
    out.push_str(&format!("config noise_epochs {}\n", c.noise_epochs));
    out.push_str(&format!("config update_epochs {}\n", c.update_epochs));
    out.push_str(&format!("config minibatches {}\n", c.minibatches));
    out.push_str(&format!("config gamma {}\n", fmt_f64(c.gamma)));
    out.push_str(&format!("config lam {}\n", fmt_f64(c.lam)));
    out.push_str(&format!("config clip {}\n", fmt_f64(c.clip)));
    out.push_str(&format!("config lr {}\n", fmt_f64(c.lr)));
    out.push_str(&format!("config entropy_coef {}\n", fmt_f64(c.entropy_coef)));
    out.push_str(&format!("config value_coef {}\n", fmt_f64(c.value_coef)));
    out.push_str(&format!("config max_grad_norm {}\n", fmt_f64(c.max_grad_norm)));
    out.push_str(&format!("config seed {}\n", c.seed));
    out.push_str(&format!("config hidden {}\n", c.hidden));
    out.push_str(&format!("config save_interval {}\n", c.save_interval));
    let seed_words: Vec<String> = ckpt.rng_seed.iter().map(|b| b.to_string()).collect();
    out.push_str(&format!("rng_seed {}\n", seed_words.join(" ")));
    out.push_str(&format!("rng_stream {}\n", ckpt.rng_stream));
    out.push_str(&format!("rng_word_pos {}\n", ckpt.rng_word_pos));
    let mut section = |name: &str, values: &[f64]| {
        out.push_str(&format!("section {name} {}\n", values.len()));
        float_lines(&mut out, values);
    };
    section("action_low", &ckpt.action_low);
    section("action_high", &ckpt.action_high);
    section("obs_mean", &ckpt.obs_mean);
    section("obs_m2", &ckpt.obs_m2);
    section("obs_count", &[ckpt.obs_count]);
    section("params", &ckpt.params);
    out
}

struct CheckpointReader<'a> {
    path: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> CheckpointReader<'a> {
    fn err<T>(&self, line: usize, msg: String) -> Result<T, PpoError> {
        Err(PpoError::Checkpoint { path: self.path.to_string(), line, msg })
    }

    fn next_line(&mut self) -> Result<(usize, &'a str), PpoError> {
        match self.lines.next() {
            Some((i, l)) => Ok((i + 1, l)),
            None => Err(PpoError::Checkpoint {
                path: self.path.to_string(),
                line: 0,
                msg: "file ends early".into(),
            }),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), PpoError> {
        let (n, line) = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok((n, parts.collect())),
            Some(k) => self.err(n, format!("expected `{key}`, got `{k}`")),
            None => self.err(n, format!("expected `{key}`, got an empty line")),
        }
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, field: &str, s: &str) -> Result<T, PpoError> {
        s.parse().or_else(|_| self.err(line, format!("bad {field} value `{s}`")))
    }

    fn one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, PpoError> {
        let (n, vals) = self.keyed(key)?;
        if vals.len() != 1 {
            return self.err(n, format!("`{key}` takes one value, got {}", vals.len()));
        }
        self.parse(n, key, vals[0])
    }

    fn section(&mut self, name: &str) -> Result<Vec<f64>, PpoError> {
        let (n, vals) = self.keyed("section")?;
        if vals.len() != 2 || vals[0] != name {
            return self.err(n, format!("expected `section {name} <len>`"));
        }
        let len: usize = self.parse(n, "section length", vals[1])?;
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let (n, line) = self.next_line()?;
            for tok in line.split_whitespace() {
                if out.len() == len {
                    return self.err(n, format!("section {name} has extra values"));
                }
                let v: f64 = self.parse(n, "float", tok)?;
                if !v.is_finite() {
                    return self.err(n, format!("non-finite value in section {name}"));
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}

/// Parse checkpoint text. The format version is checked first; a mismatch
/// reports both versions.
pub fn parse_checkpoint(src: &str, path: &str) -> Result<PolicyCheckpoint, PpoError> {
    let mut r = CheckpointReader { path, lines: src.lines().enumerate() };
    let (n, magic) = r.next_line()?;
    match magic.strip_prefix(CHECKPOINT_MAGIC) {
        Some(v) if v.trim() == CHECKPOINT_VERSION => {}
        Some(v) => {
            return Err(PpoError::VersionMismatch {
                found: v.trim().to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            })
        }
        None => return r.err(n, format!("expected `{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}`")),
    }
    let task: Task = {
        let (n, vals) = r.keyed("task")?;
        if vals.len() != 1 {
            return r.err(n, "`task` takes one value".into());
        }
        vals[0].parse().or_else(|e: String| r.err(n, e))?
    };
    let epoch: usize = r.one("epoch")?;
    let mut cfg = TrainConfig::default();
    {
        macro_rules! read {
            ($field:ident) => {{
                let (n, vals) = r.keyed("config")?;
                if vals.len() != 2 || vals[0] != stringify!($field) {
                    return r.err(
                        n,
                        format!("expected `config {} <value>`", stringify!($field)),
                    );
                }
                cfg.$field = r.parse(n, stringify!($field), vals[1])?;
            }};
        }
        read!(n_envs);
        read!(horizon);
        read!(epochs);
        read!(noise_epochs);
        read!(update_epochs);
        read!(minibatches);
        read!(gamma);
        read!(lam);
        read!(clip);
        read!(lr);
        read!(entropy_coef);
        read!(value_coef);
        read!(max_grad_norm);
        read!(seed);
        read!(hidden);
        read!(save_interval);
    }
    let mut rng_seed = [0u8; 32];
    {
        let (n, vals) = r.keyed("rng_seed")?;
        if vals.len() != 32 {
            return r.err(n, format!("rng_seed needs 32 bytes, got {}", vals.len()));
        }
        for (slot, tok) in rng_seed.iter_mut().zip(vals) {
            *slot = r.parse(n, "seed byte", tok)?;
        }
    }
    let rng_stream: u64 = r.one("rng_stream")?;
    let rng_word_pos: u128 = r.one("rng_word_pos")?;
    let fixed = |r: &mut CheckpointReader, name: &str, len: usize| -> Result<Vec<f64>, PpoError> {
        let v = r.section(name)?;
        if v.len() != len {
            return Err(PpoError::Checkpoint {
                path: path.to_string(),
                line: 0,
                msg: format!("section {name} must hold {len} values, got {}", v.len()),
            });
        }
        Ok(v)
    };
    let action_low = fixed(&mut r, "action_low", ACT_DIM)?;
    let action_high = fixed(&mut r, "action_high", ACT_DIM)?;
    let obs_mean = fixed(&mut r, "obs_mean", OBS_DIM)?;
    let obs_m2 = fixed(&mut r, "obs_m2", OBS_DIM)?;
    let obs_count = fixed(&mut r, "obs_count", 1)?[0];
    let params = r.section("params")?;
    let expect = Layout { h: cfg.hidden }.total();
    if params.len() != expect {
        return Err(PpoError::Checkpoint {
            path: path.to_string(),
            line: 0,
            msg: format!("params section holds {} values but hidden {} needs {expect}", params.len(), cfg.hidden),
        });
    }
    Ok(PolicyCheckpoint {
        task,
        epoch,
        config: cfg,
        params,
        action_low: action_low.try_into().expect("length checked"),
        action_high: action_high.try_into().expect("length checked"),
        obs_mean,
        obs_m2,
        obs_count,
        rng_seed,
        rng_stream,
        rng_word_pos,
    })
}

fn write_atomic(path: &Path, content: &str) -> Result<(), PpoError> {
    let io = |source: std::io::Error| PpoError::Io { path: path.display().to_string(), source };
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

/// Write a checkpoint (write-to-temp, atomic rename). Non-finite parameters
/// are refused.
pub fn save_checkpoint(ckpt: &PolicyCheckpoint, path: &Path) -> Result<(), PpoError> {
    if let Some(bad) = ckpt.params.iter().find(|p| !p.is_finite()) {
        return Err(PpoError::BadConfig(format!("refusing to save non-finite parameter {bad}")));
    }
    write_atomic(path, &format_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyCheckpoint, PpoError> {
    let src = std::fs::read_to_string(path)
        .map_err(|source| PpoError::Io { path: path.display().to_string(), source })?;
    parse_checkpoint(&src, &path.display().to_string())
}

// ── Training ──────────────────────────────────────────────────────────────

/// One epoch's summary row. Episode statistics cover episodes that finished
/// during the epoch's rollout; if none finished, the running partial
/// episodes are reported instead.
#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Whether environment randomization was active.
    pub noise_stage: bool,
    pub mean_return: f64,
    pub mean_length: f64,
    pub episodes: usize,
    /// Episode terminations this epoch, indexed like [`ResetReason::ALL`].
    pub reset_counts: [usize; ResetReason::ALL.len()],
    pub stats: UpdateStats,
}

/// Learning-curve CSV: one row per epoch, with one termination-count column
/// per reset reason.
pub fn curve_csv(rows: &[EpochSummary]) -> String {
    let mut out = String::from("epoch,mean_return,mean_episode_length");
    for reason in ResetReason::ALL {
        out.push(',');
        out.push_str(reason.name());
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{}",
            row.epoch,
            fmt_f64(row.mean_return),
            fmt_f64(row.mean_length)
        ));
        for count in row.reset_counts {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}

/// Artifacts of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PolicyCheckpoint,
    pub curve: Vec<EpochSummary>,
    pub checkpoint_path: PathBuf,
    pub curve_path: PathBuf,
}

/// Run the full collect → advantage → update loop and write artifacts into
/// `out_dir` (`<task>.ckpt`, `<task>_curve.csv`). After `cfg.epochs` plain
/// epochs, `cfg.noise_epochs` more run with the task's randomization enabled,
/// re-drawing physical parameters each epoch. A non-finite loss aborts the
/// run after writing the last finished epoch's checkpoint. `on_epoch` sees
/// every summary as it is produced.
pub fn train(
    model: &RobotModel,
    physics: &PhysicsConfig,
    task_cfg: &TaskConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutput, PpoError> {
    cfg.validate()?;
    let task = task_cfg.task;
    let ckpt_path = out_dir.join(format!("{}.ckpt", task.name()));
    let curve_path = out_dir.join(format!("{}_curve.csv", task.name()));

    let mut venv = VecEnv::new(model, physics, task_cfg, cfg.n_envs, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut net = PolicyNet::for_model(cfg.hidden, model, &mut rng);
    let mut opt = Adam::new(net.params.len());

    let mut raw_obs: Vec<Observation> = venv.observations();
    for obs in &raw_obs {
        net.norm.update(obs);
    }
    let mut run_ret = vec![0.0f64; cfg.n_envs];
    let mut run_len = vec![0u32; cfg.n_envs];
    let mut curve: Vec<EpochSummary> = Vec::new();
    let mut last_good = PolicyCheckpoint::capture(task, 0, cfg, &net, &rng);

    let total_epochs = cfg.epochs + cfg.noise_epochs;
    for epoch in 0..total_epochs {
        let noise_stage = epoch >= cfg.epochs;
        if noise_stage {
            venv.randomize_all(&task_cfg.noise)?;
        }

        let mut buf = RolloutBuffer::new(cfg.n_envs, cfg.horizon);
        let mut completed_ret: Vec<f64> = Vec::new();
        let mut completed_len: Vec<f64> = Vec::new();
        let mut reset_counts = [0usize; ResetReason::ALL.len()];
        for _ in 0..cfg.horizon {
            let mut actions = Vec::with_capacity(cfg.n_envs);
            for obs in &raw_obs {
                let sample = policy_act(&net, obs, ActMode::Stochastic, &mut rng)?;
                buf.obs.push(net.norm.apply(obs));
                buf.actions.push(sample.action);
                buf.pre_squash.push(sample.pre_squash);
                buf.log_probs.push(sample.log_prob);
                buf.values.push(sample.value);
                actions.push(sample.action);
            }
            let outcomes = venv.step(&actions)?;
            for (i, (obs, reward, status)) in outcomes.into_iter().enumerate() {
                run_ret[i] += reward.total;
                run_len[i] += 1;
                let done = status.reason.is_terminal();
                buf.rewards.push(reward.total);
                buf.dones.push(done);
                buf.reasons.push(status.reason);
                if done {
                    completed_ret.push(run_ret[i]);
                    completed_len.push(f64::from(run_len[i]));
                    let slot = ResetReason::ALL
                        .iter()
                        .position(|r| *r == status.reason)
                        .expect("every reason is listed");
                    reset_counts[slot] += 1;
                    run_ret[i] = 0.0;
                    run_len[i] = 0;
                }
                net.norm.update(&obs);
                raw_obs[i] = obs;
            }
        }
        for (i, obs) in raw_obs.iter().enumerate() {
            buf.bootstrap[i] = net.value(obs);
        }

        let stats = match ppo_update(&mut net, &mut opt, &buf, cfg, &mut rng) {
            Ok(stats) => stats,
            Err(err) => {
                save_checkpoint(&last_good, &ckpt_path)?;
                return Err(err);
            }
        };

        let (mean_return, mean_length) = if completed_ret.is_empty() {
            let n = cfg.n_envs as f64;
            (
                run_ret.iter().sum::<f64>() / n,
                run_len.iter().map(|l| f64::from(*l)).sum::<f64>() / n,
            )
        } else {
            let n = completed_ret.len() as f64;
            (completed_ret.iter().sum::<f64>() / n, completed_len.iter().sum::<f64>() / n)
        };
        let summary = EpochSummary {
            epoch,
            noise_stage,
            mean_return,
            mean_length,
            episodes: completed_ret.len(),
            reset_counts,
            stats,
        };
        on_epoch(&summary);
        curve.push(summary);
        last_good = PolicyCheckpoint::capture(task, epoch + 1, cfg, &net, &rng);
        if (epoch + 1) % cfg.save_interval == 0 {
            save_checkpoint(&last_good, &ckpt_path)?;
        }
    }

    save_checkpoint(&last_good, &ckpt_path)?;
    write_atomic(&curve_path, &curve_csv(&curve))?;
    Ok(TrainOutput { checkpoint: last_good, curve, checkpoint_path: ckpt_path, curve_path })
}

// ── Evaluation ────────────────────────────────────────────────────────────

/// One evaluation episode's record. `displacement` and attitude figures are
/// taken from the last state before the episode's terminal step.
#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub pose: ResetPose,
    pub steps: u32,
    pub ret: f64,
    pub displacement: Vec3,
    pub final_u: f64,
    pub max_u: f64,
    pub mean_yaw_deg: f64,
    pub reason: ResetReason,
}

/// Roll one episode from `pose` under the policy, until the environment
/// terminates it. `on_step` sees every executed step: its index (1-based),
/// the commanded action, the robot state after the step, the reward, and the
/// reset reason. The terminal step's state is the last pre-terminal one —
/// the environment auto-resets, so the true terminal state is unavailable.
pub fn eval_episode_with(
    env: &mut EnvInstance,
    net: &PolicyNet,
    pose: ResetPose,
    mode: ActMode,
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(u32, &JointAngles, &RobotState, &RewardBreakdown, ResetReason),
) -> Result<EpisodeReport, PpoError> {
    let mut obs = env.reset_from(pose)?;
    let start = env.state().p;
    let mut last = env.state();
    let mut max_u = u_prj(last.q).unwrap_or(-1.0);
    let mut yaw_sum = 0.0;
    let mut ret = 0.0;
    loop {
        let sample = policy_act(net, &obs, mode, rng)?;
        let (next_obs, reward, status) = env.step(&sample.action)?;
        ret += reward.total;
        if status.reason.is_terminal() {
            on_step(status.step, &sample.action, &last, &reward, status.reason);
            let final_u = u_prj(last.q).unwrap_or(-1.0);
            return Ok(EpisodeReport {
                pose,
                steps: status.step,
                ret,
                displacement: last.p - start,
                final_u,
                max_u,
                mean_yaw_deg: yaw_sum / f64::from(status.step),
                reason: status.reason,
            });
        }
        last = env.state();
        on_step(status.step, &sample.action, &last, &reward, status.reason);
        let u = u_prj(last.q).unwrap_or(-1.0);
        max_u = max_u.max(u);
        yaw_sum += quat_to_rpy(last.q).2;
        obs = next_obs;
    }
}

/// [`eval_episode_with`] without step logging.
pub fn eval_episode(
    env: &mut EnvInstance,
    net: &PolicyNet,
    pose: ResetPose,
    mode: ActMode,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeReport, PpoError> {
    eval_episode_with(env, net, pose, mode, rng, |_, _, _, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quat;
    use approx::assert_abs_diff_eq;

    const HALF: f64 = 0.8726646259971648;

    fn bounds() -> ([f64; ACT_DIM], [f64; ACT_DIM]) {
        ([-HALF; ACT_DIM], [HALF; ACT_DIM])
    }

    fn small_net(seed: u64) -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (low, high) = bounds();
        PolicyNet::new(8, low, high, &mut rng)
    }

    fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
        std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
    }

    /// A filled buffer with arbitrary but finite contents, log-probs taken
    /// from the net itself so ratios start at exactly 1.
    fn random_buffer(net: &PolicyNet, n: usize, t: usize, seed: u64) -> RolloutBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = RolloutBuffer::new(n, t);
        for _ in 0..n * t {
            let obs = random_obs(&mut rng);
            let sample = policy_act(net, &obs, ActMode::Stochastic, &mut rng).unwrap();
            buf.obs.push(net.norm().apply(&obs));
            buf.actions.push(sample.action);
            buf.pre_squash.push(sample.pre_squash);
            buf.log_probs.push(sample.log_prob);
            buf.values.push(sample.value);
            buf.rewards.push(rng.gen_range(-1.0..1.0));
            buf.dones.push(rng.gen_bool(0.2));
            buf.reasons.push(ResetReason::None);
        }
        for b in &mut buf.bootstrap {
            *b = rng.gen_range(-1.0..1.0);
        }
        buf
    }

    // ── Policy output ─────────────────────────────────────────────────

    #[test]
    fn zero_actor_head_commands_range_midpoint() {
        let net = small_net(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let obs = random_obs(&mut rng);
            let sample = policy_act(&net, &obs, ActMode::Deterministic, &mut rng).unwrap();
            for j in 0..ACT_DIM {
                assert_eq!(sample.action[j], 0.0, "joint {j}");
            }
        }
    }

    #[test]
    fn tiny_sigma_tracks_the_mean_action() {
        let mut net = small_net(3);
        let lstd_range = net.layout().ranges()[B_LSTD].clone();
        for l in &mut net.params_mut()[lstd_range] {
            *l = -5.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let obs = random_obs(&mut rng);
            let det = policy_act(&net, &obs, ActMode::Deterministic, &mut rng).unwrap();
            let sto = policy_act(&net, &obs, ActMode::Stochastic, &mut rng).unwrap();
            for j in 0..ACT_DIM {
                assert!(
                    (det.action[j] - sto.action[j]).abs() < 3e-2,
                    "joint {j}: {} vs {}",
                    det.action[j],
                    sto.action[j]
                );
            }
        }
    }

    #[test]
    fn log_prob_matches_independent_density() {
        let mut net = small_net(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in net.params_mut() {
            *p += 0.01;
        }
        for _ in 0..50 {
            let obs = random_obs(&mut rng);
            let sample = policy_act(&net, &obs, ActMode::Stochastic, &mut rng).unwrap();
            let x = net.norm().apply(&obs);
            let mu = net.mean_raw(&x, &mut Vec::new(), &mut Vec::new());
            let lstd = net.log_std().to_vec();
            let mut oracle = 0.0;
            for j in 0..ACT_DIM {
                let u = (sample.action[j] / HALF).atanh();
                let sigma = lstd[j].exp();
                let gauss = (-0.5 * ((u - mu[j]) / sigma).powi(2)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                let jac = HALF * (1.0 - u.tanh().powi(2));
                oracle += (gauss / jac).ln();
            }
            assert_abs_diff_eq!(sample.log_prob, oracle, epsilon = 1e-6);
        }
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        let mut net = small_net(7);
        let lstd_range = net.layout().ranges()[B_LSTD].clone();
        for l in &mut net.params_mut()[lstd_range] {
            *l = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs = random_obs(&mut rng);
        let x = net.norm().apply(&obs);
        let mu = net.mean_raw(&x, &mut Vec::new(), &mut Vec::new());
        let j = 2;
        let mut acc = 0.0;
        let samples = 400_000;
        for _ in 0..samples {
            let a = rng.gen_range(-HALF..HALF);
            let u = (a / HALF).atanh();
            let gauss = (-0.5 * (u - mu[j]).powi(2)).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let jac = HALF * (1.0 - u.tanh().powi(2));
            acc += gauss / jac;
        }
        let integral = acc / samples as f64 * (2.0 * HALF);
        assert!((integral - 1.0).abs() < 1e-2, "integral = {integral}");
    }

    #[test]
    fn non_finite_observation_is_rejected() {
        let net = small_net(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut obs = random_obs(&mut rng);
        obs[17] = f64::NAN;
        let err = policy_act(&net, &obs, ActMode::Deterministic, &mut rng).unwrap_err();
        assert!(matches!(err, PpoError::BadObservation { index: 17, .. }));
    }

    // ── Normalization ─────────────────────────────────────────────────

    #[test]
    fn running_norm_matches_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<Observation> = (0..200).map(|_| random_obs(&mut rng)).collect();
        let mut norm = RunningNorm::new();
        for x in &data {
            norm.update(x);
        }
        for j in [0, 7, 39] {
            let n = data.len() as f64;
            let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            assert_abs_diff_eq!(norm.mean[j], mean, epsilon = 1e-3);
            assert_abs_diff_eq!(norm.m2[j] / norm.count, var, epsilon = 1e-3);
        }
    }

    // ── Advantage estimation ──────────────────────────────────────────

    fn flat_buffer(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64) -> RolloutBuffer {
        let t = rewards.len();
        let mut buf = RolloutBuffer::new(1, t);
        for k in 0..t {
            buf.obs.push([0.0; OBS_DIM]);
            buf.actions.push([0.0; ACT_DIM]);
            buf.pre_squash.push([0.0; ACT_DIM]);
            buf.log_probs.push(0.0);
            buf.values.push(values[k]);
            buf.rewards.push(rewards[k]);
            buf.dones.push(dones[k]);
            buf.reasons.push(ResetReason::None);
        }
        buf.bootstrap[0] = bootstrap;
        buf
    }

    #[test]
    fn gae_with_zero_gamma_is_one_step() {
        let buf = flat_buffer(&[1.0, -2.0, 0.5], &[0.3, 0.1, -0.4], &[false; 3], 0.9);
        let (adv, _) = compute_gae(&buf, 0.0, 0.7);
        for t in 0..3 {
            assert_abs_diff_eq!(adv[t], buf.rewards[t] - buf.values[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn gae_of_zero_rewards_and_values_is_zero() {
        let buf = flat_buffer(&[0.0; 4], &[0.0; 4], &[false; 4], 0.0);
        let (adv, ret) = compute_gae(&buf, 0.99, 0.95);
        assert!(adv.iter().all(|a| *a == 0.0));
        assert!(ret.iter().all(|r| *r == 0.0));
    }

    /// Direct nested-sum oracle: `A_t = Σ_k (γλ)^k δ_{t+k}` truncated at the
    /// first done flag.
    fn gae_oracle(buf: &RolloutBuffer, gamma: f64, lam: f64) -> Vec<f64> {
        let (n, t_max) = (buf.n_envs, buf.horizon);
        let mut adv = vec![0.0; n * t_max];
        for i in 0..n {
            for t in 0..t_max {
                let mut acc = 0.0;
                let mut weight = 1.0;
                for k in t..t_max {
                    let idx = k * n + i;
                    let mask = if buf.dones[idx] { 0.0 } else { 1.0 };
                    let next_v =
                        if k + 1 == t_max { buf.bootstrap[i] } else { buf.values[(k + 1) * n + i] };
                    let delta = buf.rewards[idx] + gamma * next_v * mask - buf.values[idx];
                    acc += weight * delta;
                    if buf.dones[idx] {
                        break;
                    }
                    weight *= gamma * lam;
                }
                adv[t * n + i] = acc;
            }
        }
        adv
    }

    #[test]
    fn gae_matches_brute_force_oracle() {
        let net = small_net(12);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = rng.gen_range(1..=3);
            let t = rng.gen_range(1..=5);
            let buf = random_buffer(&net, n, t, 200 + seed);
            let (adv, ret) = compute_gae(&buf, 0.99, 0.95);
            let oracle = gae_oracle(&buf, 0.99, 0.95);
            for k in 0..n * t {
                assert_abs_diff_eq!(adv[k], oracle[k], epsilon = 1e-9);
                assert_abs_diff_eq!(ret[k], oracle[k] + buf.values[k], epsilon = 1e-9);
            }
        }
    }

    // ── Updates and gradients ─────────────────────────────────────────

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
        let mut net = small_net(13);
        let before = net.params().to_vec();
        let buf = random_buffer(&net, 2, 4, 14);
        let cfg = TrainConfig { lr: 0.0, hidden: 8, minibatches: 2, ..TrainConfig::default() };
        let mut opt = Adam::new(net.params().len());
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        ppo_update(&mut net, &mut opt, &buf, &cfg, &mut rng).unwrap();
        assert!(net.params().iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    /// Central finite difference of the minibatch loss at parameter `i`.
    fn fd_grad(
        net: &PolicyNet,
        buf: &RolloutBuffer,
        adv: &[f64],
        ret: &[f64],
        idx: &[usize],
        cfg: &TrainConfig,
        i: usize,
        h: f64,
    ) -> f64 {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let lp = ppo_loss(&plus, buf, adv, ret, idx, cfg).total;
        let lm = ppo_loss(&minus, buf, adv, ret, idx, cfg).total;
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = small_net(16);
        let buf = random_buffer(&net, 2, 4, 17);
        let cfg = TrainConfig { hidden: 8, ..TrainConfig::default() };
        let (adv, ret) = compute_gae(&buf, cfg.gamma, cfg.lam);
        let idx: Vec<usize> = (0..buf.len()).collect();
        let (_, grad) = ppo_grad(&net, &buf, &adv, &ret, &idx, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut checked = 0;
        while checked < 120 {
            let i = rng.gen_range(0..grad.len());
            let fd = fd_grad(&net, &buf, &adv, &ret, &idx, &cfg, i, 1e-5);
            let tol = 1e-4 * fd.abs().max(1.0);
            assert!(
                (grad[i] - fd).abs() <= tol,
                "param {i}: analytic {} vs finite-diff {fd}",
                grad[i]
            );
            checked += 1;
        }
    }

    #[test]
    fn unit_ratio_surrogate_matches_policy_gradient_oracle() {
        let net = small_net(19);
        let buf = random_buffer(&net, 1, 1, 20);
        let cfg = TrainConfig {
            hidden: 8,
            value_coef: 0.0,
            entropy_coef: 0.0,
            ..TrainConfig::default()
        };
        let adv = vec![1.0];
        let ret = vec![0.0];
        let (stats, grad) = ppo_grad(&net, &buf, &adv, &ret, &[0], &cfg);
        assert_abs_diff_eq!(stats.policy_loss, -1.0, epsilon = 1e-9);
        // Oracle: gradient of −log π(u | obs) · advantage by central
        // differences, valid near ratio 1 where the clip is inactive.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..60 {
            let i = rng.gen_range(0..grad.len());
            let h = 1e-6;
            let logp = |net: &PolicyNet| {
                let x = &buf.obs[0];
                let mu = net.mean_raw(x, &mut Vec::new(), &mut Vec::new());
                net.squash(&mu, &buf.pre_squash[0]).1
            };
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = -(logp(&plus) - logp(&minus)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "param {i}: analytic {} vs oracle {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn forced_ratio_activates_the_clip() {
        let net = small_net(22);
        let mut buf = random_buffer(&net, 1, 1, 23);
        // Understate the stored log-prob so the current ratio is exactly 1.5.
        buf.log_probs[0] -= 1.5f64.ln();
        let cfg = TrainConfig {
            hidden: 8,
            value_coef: 0.0,
            entropy_coef: 0.0,
            ..TrainConfig::default()
        };
        let (stats, grad) = ppo_grad(&net, &buf, &[1.0], &[0.0], &[0], &cfg);
        assert_abs_diff_eq!(stats.clip_fraction, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.policy_loss, -1.2, epsilon = 1e-9);
        assert!(grad.iter().all(|g| *g == 0.0), "saturated clip must not backpropagate");
    }

    #[test]
    fn non_finite_reward_aborts_the_update() {
        let mut net = small_net(24);
        let mut buf = random_buffer(&net, 2, 2, 25);
        buf.rewards[1] = 1e308;
        buf.rewards[2] = 1e308;
        let cfg = TrainConfig { hidden: 8, minibatches: 1, ..TrainConfig::default() };
        let mut opt = Adam::new(net.params().len());
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let err = ppo_update(&mut net, &mut opt, &buf, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, PpoError::NonFinite(_)), "got {err:?}");
    }

    // ── Checkpoints ───────────────────────────────────────────────────

    fn sample_checkpoint() -> PolicyCheckpoint {
        let mut net = small_net(27);
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for _ in 0..50 {
            net.norm_mut().update(&random_obs(&mut rng));
        }
        rng.set_word_pos(12345);
        let cfg = TrainConfig { hidden: 8, seed: 28, ..TrainConfig::default() };
        PolicyCheckpoint::capture(Task::Walk, 42, &cfg, &net, &rng)
    }

    #[test]
    fn checkpoint_text_round_trips_bitwise() {
        let ckpt = sample_checkpoint();
        let text = format_checkpoint(&ckpt);
        let back = parse_checkpoint(&text, "mem").unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(format_checkpoint(&back), text);
    }

    #[test]
    fn checkpoint_file_round_trip_and_rng_state() {
        let ckpt = sample_checkpoint();
        let dir = std::env::temp_dir().join(format!("chair-ckpt-{}", std::process::id()));
        let path = dir.join("walk.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(back, ckpt);
        let mut a = ckpt.restore_rng();
        let mut b = ckpt.restore_rng();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        let net = back.restore_net().unwrap();
        assert_eq!(net.params(), &ckpt.params[..]);
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let text = format_checkpoint(&sample_checkpoint()).replacen("v1", "v2", 1);
        let err = parse_checkpoint(&text, "mem").unwrap_err();
        match err {
            PpoError::VersionMismatch { found, expected } => {
                assert_eq!(found, "v2");
                assert_eq!(expected, "v1");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let text = format_checkpoint(&sample_checkpoint());
        let cut = &text[..text.len() / 2];
        let err = parse_checkpoint(cut, "mem").unwrap_err();
        assert!(matches!(err, PpoError::Checkpoint { .. }), "got {err:?}");
    }

    #[test]
    fn task_mismatch_is_reported() {
        let ckpt = sample_checkpoint();
        assert!(task_mismatch_warning(&ckpt, Task::Walk).is_none());
        let warning = task_mismatch_warning(&ckpt, Task::Standup).unwrap();
        assert!(warning.contains("walk") && warning.contains("standup"), "{warning}");
    }

    // ── Training loop ─────────────────────────────────────────────────

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let model = RobotModel::builtin();
        let physics = PhysicsConfig::default();
        let task_cfg = TaskConfig::walk();
        let cfg = TrainConfig {
            n_envs: 2,
            horizon: 4,
            epochs: 2,
            minibatches: 2,
            update_epochs: 2,
            hidden: 8,
            seed: 30,
            ..TrainConfig::default()
        };
        let run = |tag: &str| {
            let dir = std::env::temp_dir().join(format!(
                "chair-train-{}-{tag}",
                std::process::id()
            ));
            let out = train(&model, &physics, &task_cfg, &cfg, &dir, |_| {}).unwrap();
            let ckpt_text = std::fs::read_to_string(&out.checkpoint_path).unwrap();
            let curve_text = std::fs::read_to_string(&out.curve_path).unwrap();
            std::fs::remove_dir_all(&dir).unwrap();
            (ckpt_text, curve_text)
        };
        let (ckpt_a, curve_a) = run("a");
        let (ckpt_b, curve_b) = run("b");
        assert_eq!(ckpt_a, ckpt_b);
        assert_eq!(curve_a, curve_b);
        assert!(curve_a.starts_with("epoch,mean_return,mean_episode_length,none,max_episode,tilt,ground,height,flip,fold\n"));
        assert_eq!(curve_a.lines().count(), 3);
    }

    #[test]
    fn noise_stage_runs_and_is_flagged() {
        let model = RobotModel::builtin();
        let physics = PhysicsConfig::default();
        let task_cfg = TaskConfig::walk();
        let cfg = TrainConfig {
            n_envs: 2,
            horizon: 3,
            epochs: 1,
            noise_epochs: 1,
            minibatches: 2,
            update_epochs: 1,
            hidden: 8,
            seed: 31,
            ..TrainConfig::default()
        };
        let dir = std::env::temp_dir().join(format!("chair-noise-{}", std::process::id()));
        let mut stages = Vec::new();
        let out = train(&model, &physics, &task_cfg, &cfg, &dir, |s| stages.push(s.noise_stage))
            .unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(stages, vec![false, true]);
        assert_eq!(out.checkpoint.epoch, 2);
    }

    #[test]
    fn eval_episode_reports_walk_metrics() {
        let model = RobotModel::builtin();
        let mut env = EnvInstance::new(
            0,
            model.clone(),
            PhysicsConfig::default(),
            TaskConfig::walk(),
            7,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let net = PolicyNet::for_model(8, &model, &mut rng);
        let report =
            eval_episode(&mut env, &net, ResetPose::Standing, ActMode::Deterministic, &mut rng)
                .unwrap();
        assert_eq!(report.pose, ResetPose::Standing);
        assert!(report.steps >= 1);
        assert!(report.reason.is_terminal());
        assert!(report.max_u > 0.95, "starts standing, so peak uprightness stays high");
        assert!(report.final_u <= report.max_u + 1e-12);
        assert!(report.ret.is_finite());
        assert!(report.displacement.norm().is_finite());
    }

    #[test]
    fn bad_train_configs_are_rejected() {
        let cases = [
            TrainConfig { n_envs: 0, ..TrainConfig::default() },
            TrainConfig { gamma: 0.0, ..TrainConfig::default() },
            TrainConfig { lam: 1.5, ..TrainConfig::default() },
            TrainConfig { clip: 0.0, ..TrainConfig::default() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
            TrainConfig { minibatches: 0, ..TrainConfig::default() },
            TrainConfig { max_grad_norm: 0.0, ..TrainConfig::default() },
            TrainConfig { hidden: 0, ..TrainConfig::default() },
            TrainConfig { save_interval: 0, ..TrainConfig::default() },
        ];
        for cfg in cases {
            assert!(matches!(cfg.validate(), Err(PpoError::BadConfig(_))), "{cfg:?}");
        }
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::for_task(Task::Standup).epochs, 250);
    }

    #[test]
    fn observation_history_feeds_the_policy_during_eval() {
        // Exercising policy_act on live env observations keeps the obs layout
        // and the net input contract in lockstep.
        let model = RobotModel::builtin();
        let mut env =
            EnvInstance::new(0, model.clone(), PhysicsConfig::default(), TaskConfig::walk(), 3)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let net = PolicyNet::for_model(8, &model, &mut rng);
        let obs = env.reset().unwrap();
        let q = Quat::new(obs[0], obs[1], obs[2], obs[3]);
        assert_abs_diff_eq!(
            (q.x * q.x + q.y * q.y + q.z * q.z + q.w * q.w).sqrt(),
            1.0,
            epsilon = 1e-9
        );
        let sample = policy_act(&net, &obs, ActMode::Stochastic, &mut rng).unwrap();
        for j in 0..ACT_DIM {
            assert!(sample.action[j].abs() <= HALF + 1e-12);
        }
    }
}
