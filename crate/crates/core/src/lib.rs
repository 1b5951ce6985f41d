//! Robust visual-inertial SLAM backend.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: SE(3)/SO(3) helpers and rigid point-set alignment.
//! - [`sim`]: deterministic synthetic worlds with static, dynamic and
//!   temporarily static landmarks.
//! - [`ba`]: sliding-window bundle adjustment with per-feature weights.
//! - [`backend`]: keyframe grouping, loop hypotheses and selective pose-graph
//!   optimization.
//! - [`eval`]: trajectory error and weight statistics.
//! - [`io`]: dataset, trajectory and log file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ba;
pub mod backend;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod sim;
pub mod state;

pub use error::{EvalError, GeometryError, IoError, ScenarioError, SolverError};
pub use geometry::{Pose, Twist};
pub use state::{ImuNoise, ImuPreintegration, KeyframeState};
