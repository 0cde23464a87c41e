//! Optimal harvesting and seeding of interacting stochastic populations.
//!
//! The continuous problem is approximated by a controlled Markov chain on a
//! truncated lattice ([`kernel`]), solved by value iteration ([`solver`]),
//! audited against the structure the exact value function must have
//! ([`verify`]) and cross-checked by Monte Carlo ([`simulate`]).

pub mod cli;
pub mod error;
pub mod kernel;
pub mod model;
pub mod scenario;
pub mod simulate;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::{build_grid, ControlAction, Grid, TransitionKernel};
pub use model::{make_preset, validate, Model, PresetId, PresetParams};
pub use scenario::Scenario;
pub use simulate::{estimate_value, simulate_path, EstimateOptions, Path, PayoffEstimate, Strategy};
pub use solver::{extract_thresholds_1d, solve, SolveOptions, SolveReport, Thresholds1D};
pub use verify::{audit, audit_inequalities, hjb_residuals, AuditOptions, AuditReport};
