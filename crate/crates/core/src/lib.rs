//! Simulator, gait compiler, and reinforcement-learning trainer for a
//! desk-scale three-legged chair robot.
//!
//! The crate is organized bottom-up:
//!
//! * [`geom`] — the small amount of vector/quaternion math everything else uses
//! * [`model`] — robot description loading (XML subset), servo↔joint mapping,
//!   and leg forward kinematics
//! * [`gait`] — keyframe scripts, linear interpolation, and command traces
//! * [`physics`] — the rigid-body simulator with penalty ground contact
//! * [`env`] — the two RL tasks (walk, stand-up): observations, rewards, resets
//! * [`ppo`] — a self-contained PPO implementation with text checkpoints

pub mod env;
pub mod gait;
pub mod geom;
pub mod model;
pub mod physics;
pub mod ppo;
