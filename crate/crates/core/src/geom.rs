//! Minimal 3-D vector, quaternion, and rotation-matrix math.
//!
//! Only the operations the rest of the crate needs are provided; this is not
//! a general linear-algebra layer. Conventions used throughout:
//!
//! * Quaternions are stored `(x, y, z, w)` with the identity at `(0, 0, 0, 1)`
//!   and follow the Hamilton product.
//! * World frame: `x` forward, `y` left, `z` up.
//! * Euler angles are intrinsic Z-Y-X (yaw, pitch, roll) in degrees.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    /// An input contained NaN or an infinity.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

// ── Vec3 ──────────────────────────────────────────────────────────────────

/// 3-D vector of `f64` components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction. Returns `None` for the zero vector
    /// (or anything too close to it to normalize reliably).
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

// ── Quat ──────────────────────────────────────────────────────────────────

/// Unit quaternion stored as `(x, y, z, w)`; identity is `(0, 0, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { x: 0.0, y: 0.0, z: 0.0, w: 1.0 };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Quat { x, y, z, w }
    }

    /// Rotation of `angle_rad` about the (unit) `axis`.
    pub fn from_axis_angle(axis: Vec3, angle_rad: f64) -> Self {
        let (s, c) = (angle_rad * 0.5).sin_cos();
        Quat::new(axis.x * s, axis.y * s, axis.z * s, c)
    }

    /// Hamilton product `self * o` (apply `o` first, then `self`).
    pub fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
        )
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn normalized(self) -> Quat {
        let inv = 1.0 / self.norm();
        Quat::new(self.x * inv, self.y * inv, self.z * inv, self.w * inv)
    }

    /// Rotate a vector by this quaternion (assumed unit length).
    ///
    /// Uses `v' = v + w·t + q⃗ × t` with `t = 2 q⃗ × v`, which is the usual
    /// expansion of `q v q⁻¹` for unit quaternions.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let qv = Vec3::new(self.x, self.y, self.z);
        let t = qv.cross(v) * 2.0;
        v + t * self.w + qv.cross(t)
    }

    /// Equivalent rotation matrix.
    pub fn to_matrix(self) -> RotMatrix {
        let (x, y, z, w) = (self.x, self.y, self.z, self.w);
        RotMatrix {
            m: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
                [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
                [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
            ],
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.w.is_finite()
    }
}

// ── RotMatrix ─────────────────────────────────────────────────────────────

/// 3×3 rotation matrix, row-major: `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix {
    pub m: [[f64; 3]; 3],
}

impl RotMatrix {
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }
}

/// Rodrigues rotation of `v` by `angle_rad` about the unit vector `axis`.
pub fn axis_angle_rotate(axis: Vec3, angle_rad: f64, v: Vec3) -> Vec3 {
    let (s, c) = angle_rad.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

// ── Attitude operations ───────────────────────────────────────────────────

/// Rotate `v` by the unit quaternion `q`.
///
/// `q` must be normalized to within 1e-9; the rotation then preserves the
/// length of `v` to the same tolerance.
pub fn quat_rotate(q: Quat, v: Vec3) -> Result<Vec3, GeomError> {
    if !q.is_finite() {
        return Err(GeomError::NonFinite("quaternion"));
    }
    if !v.is_finite() {
        return Err(GeomError::NonFinite("vector"));
    }
    Ok(q.rotate(v))
}

/// Signed z-component of the body z-axis expressed in the world frame:
/// `(R_q · e_z)_z`. Equals +1 upright, 0 on the side, −1 upside-down.
pub fn u_prj(q: Quat) -> Result<f64, GeomError> {
    if !q.is_finite() {
        return Err(GeomError::NonFinite("quaternion"));
    }
    // Third row, third column of the rotation matrix.
    Ok(1.0 - 2.0 * (q.x * q.x + q.y * q.y))
}

/// Euclidean 4-norm of `q − (0, 0, 0, 1)`.
///
/// Deliberately *not* sign-canonicalized: `-q` encodes the same rotation but
/// measures differently, matching how the tilt cutoff is applied.
pub fn quat_dist_from_identity(q: Quat) -> f64 {
    let dw = q.w - 1.0;
    (q.x * q.x + q.y * q.y + q.z * q.z + dw * dw).sqrt()
}

/// Decompose a unit quaternion into intrinsic Z-Y-X Euler angles
/// `(roll, pitch, yaw)` in degrees.
///
/// Within 1e-6° of pitch = ±90° the decomposition is degenerate (only
/// yaw − roll is observable); the canonical result there fixes roll = 0 and
/// folds the remainder into yaw.
pub fn quat_to_rpy(q: Quat) -> (f64, f64, f64) {
    let r = q.to_matrix().m;
    let sp = (-r[2][0]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let pitch_deg = pitch.to_degrees();
    if 90.0 - pitch_deg.abs() <= 1e-6 {
        // Gimbal lock: canonical roll = 0.
        let yaw = f64::atan2(-r[0][1], r[1][1]);
        return (0.0, pitch_deg, yaw.to_degrees());
    }
    let roll = f64::atan2(r[2][1], r[2][2]);
    let yaw = f64::atan2(r[1][0], r[0][0]);
    (roll.to_degrees(), pitch_deg, yaw.to_degrees())
}

/// Compose a unit quaternion from intrinsic Z-Y-X Euler angles in degrees.
pub fn rpy_to_quat(roll_deg: f64, pitch_deg: f64, yaw_deg: f64) -> Quat {
    let qz = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), yaw_deg.to_radians());
    let qy = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), pitch_deg.to_radians());
    let qx = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), roll_deg.to_radians());
    qz.mul(qy).mul(qx)
}
