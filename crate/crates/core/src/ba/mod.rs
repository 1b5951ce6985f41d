//! Sliding-window visual-inertial bundle adjustment.

pub mod marginalize;
pub mod odometry;
pub mod residuals;
pub mod solver;
pub mod weights;
pub mod window;

pub use marginalize::{marginalize, marginalize_oldest, schur_marginal, MarginalizationReport};
pub use odometry::{run_odometry, OdometryResult, WeightLogEntry};
pub use solver::{solve_window, track_residuals, window_objective, SolveReport};
pub use window::{FeatureTrack, SlidingWindow, SolverMode, SolverParams};
