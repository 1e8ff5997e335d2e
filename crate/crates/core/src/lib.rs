//! Quasi-static simulation of a bilaterally cable-driven sidewinding robot.
//!
//! The crate is organised bottom-up:
//!
//! - [`gait`]: two-wave sidewinding template and displayed wavelength.
//! - [`cable`]: cable-length geometry, the compliance policy and the
//!   admissible joint-angle intervals it induces.
//! - [`kinematics`]: the 12-module chain, resting orientation and contacts.
//! - [`environment`]: friction board and peg rows.
//! - [`lsq`]: non-negative and inequality-constrained least squares.
//! - [`solver`]: one quasi-static step with stick/slip and peg contact.
//! - [`metrics`]: displacement, cost of transport, traverse checks.
//! - [`harness`]: trials, calibration and parameter sweeps.
//! - [`io`]: configuration, result tables, trajectories and SVG charts.

pub mod cable;
pub mod environment;
pub mod gait;
pub mod harness;
pub mod io;
pub mod kinematics;
pub mod lsq;
pub mod metrics;
pub mod solver;

/// Standard gravity used by the work and cost-of-transport estimators.
pub const GRAVITY: f64 = 9.81;

pub use cable::{AngleInterval, CableCommand, CableGeometry, CompliancePolicy};
pub use environment::{Environment, Peg};
pub use gait::{CommandFrame, GaitParams};
pub use harness::{TrialSpec, TrialOutcome};
pub use kinematics::{BodyState, Pose2, RobotConfig};
pub use metrics::{FailureMode, TrialResult};
pub use solver::{SolverParams, StepSolution};
