//! Rigid-body simulator for the chair robot on flat ground.
//!
//! The robot is one composite body: the seat box (backrest mass folded in)
//! plus three point-mass feet rigidly attached at the forward-kinematics
//! positions for the current joint angles. Joints are kinematic — servo
//! targets are tracked with a pure rate limit, no torque dynamics — and the
//! inertial effect of swinging the legs enters through momentum bookkeeping:
//! the translational state is the system mass center (internal motion cannot
//! move it), and the rotational state is the angular momentum about it, from
//! which the body rate is recovered as `ω = I⁻¹(L − L_rel)` with `L_rel` the
//! relative angular momentum of the moving feet. Swinging the legs therefore
//! shifts the seat and counter-rotates the body exactly, and with no external
//! force both momenta are conserved to the bit.
//!
//! Ground contact is a penalty model at nine candidate points (3 feet, 4
//! bottom seat corners, 2 backrest tops): normal force
//! `N = max(0, kₙ·δ + cₙ·δ̇)` on penetration `δ`, tangential friction
//! `μ·N·tanh(|v_t|/v_eps)` opposing slip. Integration is semi-implicit at a
//! fixed 1 ms substep with a trapezoidal position update, which reproduces
//! `½gt²` free fall exactly and keeps mechanical energy non-increasing in
//! contact-free coast.

use crate::gait::STANDING_POSTURE;
use crate::geom::{Quat, Vec3};
use crate::model::{JointAngles, RobotModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("invalid physics config: {0}")]
    BadConfig(String),
    #[error("non-finite state detected at substep {substep}")]
    NonFinite { substep: usize },
    #[error("robot failed to settle within {0} s of simulated time")]
    SettleTimeout(f64),
    #[error("{path}:{line}: {msg}")]
    Config { path: String, line: usize, msg: String },
}

// ── Configuration ─────────────────────────────────────────────────────────

/// Simulator constants. `control_dt` is the 10 Hz command period and is
/// validated as exactly 0.1 s; everything else is tunable.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsConfig {
    /// Gravitational acceleration, m/s² (downward).
    pub gravity: f64,
    /// Seconds per control step; fixed at 0.1.
    pub control_dt: f64,
    /// Integration substeps per control step.
    pub substeps: usize,
    /// Contact normal stiffness kₙ, N/m.
    pub contact_stiffness: f64,
    /// Contact normal damping cₙ, N·s/m.
    pub contact_damping: f64,
    /// Coulomb friction coefficient μ.
    pub friction: f64,
    /// Slip-speed scale of the tanh friction regularization, m/s.
    pub friction_vel_eps: f64,
    /// Servo slew-rate limit ω_max, rad/s.
    pub servo_rate_limit: f64,
    /// Servo dead-band, rad: targets closer than this are not chased.
    pub servo_backlash: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            gravity: 9.81,
            control_dt: 0.1,
            substeps: 100,
            contact_stiffness: 30000.0,
            contact_damping: 25.0,
            friction: 0.6,
            friction_vel_eps: 0.05,
            servo_rate_limit: 10.472,
            servo_backlash: 0.0,
        }
    }
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |msg: String| Err(PhysicsError::BadConfig(msg));
        if (self.control_dt - 0.1).abs() > 1e-12 {
            return bad(format!("control_dt must be 0.1 s, got {}", self.control_dt));
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if !(self.gravity >= 0.0) {
            return bad(format!("gravity must be non-negative, got {}", self.gravity));
        }
        if !(self.contact_stiffness > 0.0) {
            return bad(format!("contact_stiffness must be positive, got {}", self.contact_stiffness));
        }
        if !(self.contact_damping >= 0.0) {
            return bad(format!("contact_damping must be non-negative, got {}", self.contact_damping));
        }
        if !(self.friction >= 0.0) {
            return bad(format!("friction must be non-negative, got {}", self.friction));
        }
        if !(self.friction_vel_eps > 0.0) {
            return bad(format!("friction_vel_eps must be positive, got {}", self.friction_vel_eps));
        }
        if !(self.servo_rate_limit > 0.0) {
            return bad(format!("servo_rate_limit must be positive, got {}", self.servo_rate_limit));
        }
        if !(self.servo_backlash >= 0.0) {
            return bad(format!("servo_backlash must be non-negative, got {}", self.servo_backlash));
        }
        Ok(())
    }

    /// Substep duration, s.
    pub fn substep_dt(&self) -> f64 {
        self.control_dt / self.substeps as f64
    }
}

/// Read a physics config file (`key = value`, `#` comments). Keys not present
/// keep their defaults; unknown keys are errors.
pub fn load_physics_config(path: &str) -> Result<PhysicsConfig, PhysicsError> {
    let src = std::fs::read_to_string(path).map_err(|e| PhysicsError::Config {
        path: path.to_string(),
        line: 0,
        msg: format!("cannot read file: {e}"),
    })?;
    parse_physics_config(&src, path)
}

pub fn parse_physics_config(src: &str, path: &str) -> Result<PhysicsConfig, PhysicsError> {
    let mut cfg = PhysicsConfig::default();
    for (key, value, line) in config_pairs(src, path)? {
        let err = |msg: String| PhysicsError::Config { path: path.to_string(), line, msg };
        let parse_f = || value.parse::<f64>().map_err(|_| err(format!("`{key}` needs a number, got `{value}`")));
        match key.as_str() {
            "gravity" => cfg.gravity = parse_f()?,
            "control_dt" => cfg.control_dt = parse_f()?,
            "substeps" => {
                cfg.substeps = value
                    .parse::<usize>()
                    .map_err(|_| err(format!("`substeps` needs a non-negative integer, got `{value}`")))?
            }
            "contact_stiffness" => cfg.contact_stiffness = parse_f()?,
            "contact_damping" => cfg.contact_damping = parse_f()?,
            "friction" => cfg.friction = parse_f()?,
            "friction_vel_eps" => cfg.friction_vel_eps = parse_f()?,
            "servo_rate_limit" => cfg.servo_rate_limit = parse_f()?,
            "servo_backlash" => cfg.servo_backlash = parse_f()?,
            _ => return Err(err(format!("unknown key `{key}`"))),
        }
    }
    cfg.validate().map_err(|e| PhysicsError::Config {
        path: path.to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

/// Shared `key = value` line scanner for the config files.
pub(crate) fn config_pairs(
    src: &str,
    path: &str,
) -> Result<Vec<(String, String, usize)>, PhysicsError> {
    let mut out = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string(), i + 1)),
            None => {
                return Err(PhysicsError::Config {
                    path: path.to_string(),
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                })
            }
        }
    }
    Ok(out)
}

// ── State and contacts ────────────────────────────────────────────────────

/// Snapshot of the simulated robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    /// Seat-center position, world frame, m.
    pub p: Vec3,
    /// Body orientation (body → world).
    pub q: Quat,
    /// Velocity of the system mass center, world frame, m/s.
    pub v: Vec3,
    /// Body angular velocity, world frame, rad/s.
    pub w: Vec3,
    /// Joint angles φ, rad.
    pub joints: JointAngles,
    /// Mean joint rates over the last control step, rad/s.
    pub joint_rates: [f64; 6],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ContactPoint {
    pub in_contact: bool,
    /// Normal force at the final substep of the control step, N.
    pub normal_force: f64,
}

/// Contact status of the nine candidate points at the end of a control step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSet {
    pub feet: [ContactPoint; 3],
    pub seat_corners: [ContactPoint; 4],
    pub backrest: Vec<ContactPoint>,
}

impl ContactSet {
    pub fn any_seat_corner(&self) -> bool {
        self.seat_corners.iter().any(|c| c.in_contact)
    }

    pub fn foot_contact_count(&self) -> usize {
        self.feet.iter().filter(|c| c.in_contact).count()
    }
}

/// Named drop-in poses for episode resets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResetPose {
    /// Upright on three feet, servos at the standing posture.
    Standing,
    /// Lying with the right (−y) seat edge on the ground.
    RightSide,
    /// Lying with the left (+y) seat edge on the ground.
    LeftSide,
    /// Tipped backward onto the backrest.
    Back,
}

impl ResetPose {
    pub const ALL: [ResetPose; 4] =
        [ResetPose::Standing, ResetPose::RightSide, ResetPose::LeftSide, ResetPose::Back];

    pub fn name(self) -> &'static str {
        match self {
            ResetPose::Standing => "standing",
            ResetPose::RightSide => "right_side",
            ResetPose::LeftSide => "left_side",
            ResetPose::Back => "back",
        }
    }
}

impl std::str::FromStr for ResetPose {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standing" => Ok(ResetPose::Standing),
            "right_side" => Ok(ResetPose::RightSide),
            "left_side" => Ok(ResetPose::LeftSide),
            "back" => Ok(ResetPose::Back),
            other => Err(format!(
                "unknown pose `{other}` (expected standing, right_side, left_side, or back)"
            )),
        }
    }
}

// ── Simulator ─────────────────────────────────────────────────────────────

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )
}

fn mat_transpose_vec(m: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
        m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
        m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
    )
}

/// Inverse of a symmetric positive-definite 3×3 matrix (adjugate form).
fn sym_inverse(m: &Mat3) -> Mat3 {
    let (a, b, c) = (m[0][0], m[0][1], m[0][2]);
    let (d, e) = (m[1][1], m[1][2]);
    let f = m[2][2];
    let ca = d * f - e * e;
    let cb = c * e - b * f;
    let cc = b * e - c * d;
    let det = a * ca + b * cb + c * cc;
    let inv = 1.0 / det;
    let (ca, cb, cc) = (ca * inv, cb * inv, cc * inv);
    let cd = (a * f - c * c) * inv;
    let ce = (b * c - a * e) * inv;
    let cf = (a * d - b * b) * inv;
    [[ca, cb, cc], [cb, cd, ce], [cc, ce, cf]]
}

/// `|d|²·E − d dᵀ`, the point-mass inertia kernel.
fn point_inertia(d: Vec3) -> Mat3 {
    let n2 = d.norm_squared();
    [
        [n2 - d.x * d.x, -d.x * d.y, -d.x * d.z],
        [-d.y * d.x, n2 - d.y * d.y, -d.y * d.z],
        [-d.z * d.x, -d.z * d.y, n2 - d.z * d.z],
    ]
}

pub struct Simulator {
    model: RobotModel,
    cfg: PhysicsConfig,

    // Integrated state.
    x_com: Vec3,
    v_com: Vec3,
    q: Quat,
    /// Angular momentum about the mass center, world frame.
    l: Vec3,
    joints: JointAngles,
    target: JointAngles,
    joint_rates: [f64; 6],

    // Geometry caches, rebuilt when the joints move.
    feet_b: [Vec3; 3],
    com_b: Vec3,
    inertia_b: Mat3,
    inertia_b_inv: Mat3,

    total_mass: f64,
    contacts: ContactSet,
    max_penetration: f64,
}

impl Simulator {
    pub fn new(model: RobotModel, cfg: PhysicsConfig) -> Result<Self, PhysicsError> {
        cfg.validate()?;
        let n_backrest = model.backrest_points.len();
        let mut sim = Simulator {
            total_mass: model.seat_mass + 3.0 * model.foot_mass,
            feet_b: [Vec3::ZERO; 3],
            com_b: Vec3::ZERO,
            inertia_b: [[0.0; 3]; 3],
            inertia_b_inv: [[0.0; 3]; 3],
            x_com: Vec3::ZERO,
            v_com: Vec3::ZERO,
            q: Quat::IDENTITY,
            l: Vec3::ZERO,
            joints: [0.0; 6],
            target: [0.0; 6],
            joint_rates: [0.0; 6],
            max_penetration: 0.0,
            contacts: ContactSet {
                backrest: vec![ContactPoint::default(); n_backrest],
                ..ContactSet::default()
            },
            model,
            cfg,
        };
        sim.rebuild_geometry();
        Ok(sim)
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn config(&self) -> &PhysicsConfig {
        &self.cfg
    }

    /// Contact status at the end of the last control step.
    pub fn contacts(&self) -> &ContactSet {
        &self.contacts
    }

    /// Deepest ground penetration seen during the last control step, m.
    pub fn last_step_max_penetration(&self) -> f64 {
        self.max_penetration
    }

    /// Kinetic plus gravitational potential energy, J (ground = 0 reference,
    /// measured at the mass center).
    pub fn mechanical_energy(&self) -> f64 {
        self.kinetic_energy() + self.total_mass * self.cfg.gravity * self.x_com.z
    }

    fn kinetic_energy(&self) -> f64 {
        let r = self.q.to_matrix();
        let w = self.body_rate(&r.m, Vec3::ZERO);
        0.5 * self.total_mass * self.v_com.norm_squared() + 0.5 * w.dot(self.world_l_spin(Vec3::ZERO))
    }

    /// Angular momentum available to rigid rotation (total minus relative).
    fn world_l_spin(&self, l_rel: Vec3) -> Vec3 {
        self.l - l_rel
    }

    /// `ω = R I_b⁻¹ Rᵀ (L − L_rel)`.
    fn body_rate(&self, r: &Mat3, l_rel: Vec3) -> Vec3 {
        let lb = mat_transpose_vec(r, self.world_l_spin(l_rel));
        mat_vec(r, mat_vec(&self.inertia_b_inv, lb))
    }

    pub fn state(&self) -> RobotState {
        let r = self.q.to_matrix();
        RobotState {
            p: self.x_com - r.mul_vec(self.com_b),
            q: self.q,
            v: self.v_com,
            w: self.body_rate(&r.m, Vec3::ZERO),
            joints: self.joints,
            joint_rates: self.joint_rates,
        }
    }

    /// Adopt an explicit state verbatim (no settling).
    pub fn set_state(&mut self, state: &RobotState) {
        self.joints = state.joints;
        self.target = state.joints;
        self.joint_rates = state.joint_rates;
        self.rebuild_geometry();
        self.q = state.q;
        let r = self.q.to_matrix();
        self.x_com = state.p + r.mul_vec(self.com_b);
        self.v_com = state.v;
        // L = I_w ω with no relative term (joints are at rest on adoption).
        let wb = mat_transpose_vec(&r.m, state.w);
        self.l = r.mul_vec(mat_vec(&self.inertia_b, wb));
    }

    /// Place the robot in a named pose 5 mm above the ground, then integrate
    /// with held servos until kinetic energy falls below 1e-6 J (at least
    /// 0.5 s, at most 2 s — timeout otherwise).
    pub fn reset_to(&mut self, pose: ResetPose) -> Result<RobotState, PhysicsError> {
        let (joints, _) = self.model.servo_to_joint(&STANDING_POSTURE);
        self.joints = joints;
        self.target = joints;
        self.joint_rates = [0.0; 6];
        self.rebuild_geometry();

        self.q = match pose {
            ResetPose::Standing => Quat::IDENTITY,
            ResetPose::RightSide => Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 90f64.to_radians()),
            ResetPose::LeftSide => Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), -90f64.to_radians()),
            ResetPose::Back => Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), -90f64.to_radians()),
        };
        let r = self.q.to_matrix();
        let mut lowest = f64::INFINITY;
        for b in self.candidate_points() {
            lowest = lowest.min(r.mul_vec(b - self.com_b).z);
        }
        self.x_com = Vec3::new(0.0, 0.0, 0.005 - lowest);
        self.v_com = Vec3::ZERO;
        self.l = Vec3::ZERO;

        let dt = self.cfg.substep_dt();
        let min_steps = (0.5 / dt).ceil() as usize;
        let max_steps = (2.0 / dt).ceil() as usize;
        for i in 0..max_steps {
            self.substep(dt, i)?;
            if i + 1 >= min_steps && self.kinetic_energy() < 1e-6 {
                self.joint_rates = [0.0; 6];
                self.update_contact_report();
                return Ok(self.state());
            }
        }
        Err(PhysicsError::SettleTimeout(2.0))
    }

    /// Advance one 10 Hz control step toward `command` (joint radians,
    /// clamped to the model's range).
    pub fn step(&mut self, command: &JointAngles) -> Result<RobotState, PhysicsError> {
        self.target = self.model.clamp_joints(command);
        let start_joints = self.joints;
        let dt = self.cfg.substep_dt();
        self.max_penetration = 0.0;
        for i in 0..self.cfg.substeps {
            self.substep(dt, i)?;
        }
        for j in 0..6 {
            self.joint_rates[j] = (self.joints[j] - start_joints[j]) / self.cfg.control_dt;
        }
        self.update_contact_report();
        Ok(self.state())
    }

    /// All candidate contact points in the body frame at the current joints.
    fn candidate_points(&self) -> impl Iterator<Item = Vec3> + '_ {
        let h = self.model.seat_half_extents;
        let corners = [
            Vec3::new(h.x, h.y, -h.z),
            Vec3::new(h.x, -h.y, -h.z),
            Vec3::new(-h.x, h.y, -h.z),
            Vec3::new(-h.x, -h.y, -h.z),
        ];
        self.feet_b
            .into_iter()
            .chain(corners)
            .chain(self.model.backrest_points.iter().copied())
    }

    /// Rebuild feet positions, mass-center offset, and inertia for the
    /// current joints.
    fn rebuild_geometry(&mut self) {
        self.feet_b = self.model.fk_all(&self.joints);
        let mf = self.model.foot_mass;
        let mut c = Vec3::ZERO;
        for b in self.feet_b {
            c = c + b * mf;
        }
        self.com_b = c * (1.0 / self.total_mass);

        let h = self.model.seat_half_extents;
        let ms = self.model.seat_mass;
        let ix = ms / 3.0 * (h.y * h.y + h.z * h.z);
        let iy = ms / 3.0 * (h.x * h.x + h.z * h.z);
        let iz = ms / 3.0 * (h.x * h.x + h.y * h.y);
        let mut inertia: Mat3 = [[ix, 0.0, 0.0], [0.0, iy, 0.0], [0.0, 0.0, iz]];
        let seat_shift = point_inertia(self.com_b);
        for r in 0..3 {
            for ccol in 0..3 {
                inertia[r][ccol] += ms * seat_shift[r][ccol];
            }
        }
        for b in self.feet_b {
            let k = point_inertia(b - self.com_b);
            for r in 0..3 {
                for ccol in 0..3 {
                    inertia[r][ccol] += mf * k[r][ccol];
                }
            }
        }
        self.inertia_b = inertia;
        self.inertia_b_inv = sym_inverse(&inertia);
    }

    fn substep(&mut self, dt: f64, index: usize) -> Result<(), PhysicsError> {
        // 1. Servo slew toward the target, rate-limited, with dead-band.
        let mut moved = false;
        let max_delta = self.cfg.servo_rate_limit * dt;
        let mut new_joints = self.joints;
        for j in 0..6 {
            let delta = self.target[j] - self.joints[j];
            if delta.abs() <= self.cfg.servo_backlash || delta == 0.0 {
                continue;
            }
            new_joints[j] = self.joints[j] + delta.clamp(-max_delta, max_delta);
            moved = true;
        }

        // 2. Kinematics of the composite: feet velocities, mass-center
        //    offset rate, relative angular momentum.
        let mut foot_vel_b = [Vec3::ZERO; 3];
        let mut com_rate_b = Vec3::ZERO;
        let mut l_rel_b = Vec3::ZERO;
        let r = self.q.to_matrix();
        if moved {
            let old_feet = self.feet_b;
            let old_com = self.com_b;
            self.joints = new_joints;
            self.rebuild_geometry();
            let mf = self.model.foot_mass;
            for i in 0..3 {
                foot_vel_b[i] = (self.feet_b[i] - old_feet[i]) * (1.0 / dt);
                com_rate_b = com_rate_b + foot_vel_b[i] * (mf / self.total_mass);
            }
            // The momentum reference point (the mass center) moved inside the
            // body; re-reference L.
            let shift_w = r.mul_vec(self.com_b - old_com);
            self.l = self.l - shift_w.cross(self.v_com * self.total_mass);
            for i in 0..3 {
                l_rel_b = l_rel_b + (self.feet_b[i] - self.com_b).cross(foot_vel_b[i]) * mf;
            }
        }
        let l_rel_w = if moved { r.mul_vec(l_rel_b) } else { Vec3::ZERO };

        // 3. Forces at the contact points, using start-of-substep velocities.
        let w = self.body_rate(&r.m, l_rel_w);
        let mut force = Vec3::ZERO;
        let mut torque = Vec3::ZERO;
        let km = self.cfg.contact_stiffness;
        let cm = self.cfg.contact_damping;
        let h = self.model.seat_half_extents;
        let corners = [
            Vec3::new(h.x, h.y, -h.z),
            Vec3::new(h.x, -h.y, -h.z),
            Vec3::new(-h.x, h.y, -h.z),
            Vec3::new(-h.x, -h.y, -h.z),
        ];
        let n_back = self.model.backrest_points.len();
        for idx in 0..3 + 4 + n_back {
            let (b, u_b) = if idx < 3 {
                (self.feet_b[idx], foot_vel_b[idx])
            } else if idx < 7 {
                (corners[idx - 3], Vec3::ZERO)
            } else {
                (self.model.backrest_points[idx - 7], Vec3::ZERO)
            };
            let r_w = r.mul_vec(b - self.com_b);
            let z = self.x_com.z + r_w.z;
            if z >= 0.0 {
                continue;
            }
            let depth = -z;
            self.max_penetration = self.max_penetration.max(depth);
            let v_pt = self.v_com + w.cross(r_w) + r.mul_vec(u_b - com_rate_b);
            let normal = (km * depth + cm * -v_pt.z).max(0.0);
            let mut f = Vec3::new(0.0, 0.0, normal);
            let slip = (v_pt.x * v_pt.x + v_pt.y * v_pt.y).sqrt();
            if slip > 1e-12 {
                let scale = -self.cfg.friction * normal * (slip / self.cfg.friction_vel_eps).tanh() / slip;
                f.x = v_pt.x * scale;
                f.y = v_pt.y * scale;
            }
            force = force + f;
            torque = torque + r_w.cross(f);
        }

        // 4. Semi-implicit momentum update, trapezoidal position update.
        let accel = force * (1.0 / self.total_mass) + Vec3::new(0.0, 0.0, -self.cfg.gravity);
        let v_new = self.v_com + accel * dt;
        self.x_com = self.x_com + (self.v_com + v_new) * (0.5 * dt);
        self.v_com = v_new;
        self.l = self.l + torque * dt;

        // 5. Orientation update with the post-force body rate.
        let w_new = self.body_rate(&r.m, l_rel_w);
        let dq = Quat::new(w_new.x, w_new.y, w_new.z, 0.0).mul(self.q);
        self.q = Quat::new(
            self.q.x + 0.5 * dq.x * dt,
            self.q.y + 0.5 * dq.y * dt,
            self.q.z + 0.5 * dq.z * dt,
            self.q.w + 0.5 * dq.w * dt,
        )
        .normalized();

        if !(self.x_com.is_finite() && self.v_com.is_finite() && self.q.is_finite() && self.l.is_finite()) {
            return Err(PhysicsError::NonFinite { substep: index });
        }
        Ok(())
    }

    fn update_contact_report(&mut self) {
        let r = self.q.to_matrix();
        let km = self.cfg.contact_stiffness;
        let h = self.model.seat_half_extents;
        let corners = [
            Vec3::new(h.x, h.y, -h.z),
            Vec3::new(h.x, -h.y, -h.z),
            Vec3::new(-h.x, h.y, -h.z),
            Vec3::new(-h.x, -h.y, -h.z),
        ];
        let probe = |b: Vec3| -> ContactPoint {
            let z = self.x_com.z + r.mul_vec(b - self.com_b).z;
            if z < 0.0 {
                ContactPoint { in_contact: true, normal_force: km * -z }
            } else {
                ContactPoint::default()
            }
        };
        for i in 0..3 {
            self.contacts.feet[i] = probe(self.feet_b[i]);
        }
        for i in 0..4 {
            self.contacts.seat_corners[i] = probe(corners[i]);
        }
        for (i, b) in self.model.backrest_points.iter().enumerate() {
            self.contacts.backrest[i] = probe(*b);
        }
    }
}
