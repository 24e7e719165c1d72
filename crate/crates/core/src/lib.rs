//! Planning budget-constrained monitoring tours that maximize a quadratic,
//! correlation-aware utility, and estimating a spatiotemporal field from the
//! values collected along those tours.
//!
//! The crate is organised bottom-up:
//!
//! - [`instance`]: node networks, robots and the instance file format.
//! - [`model`]: the mixed-integer formulation and tour evaluation.
//! - [`simplex`]: bounded-variable simplex for the LP relaxations.
//! - [`bnb`]: anytime branch-and-bound with incumbent/bound tracking.
//! - [`oracle`]: exhaustive tour enumeration for small instances.
//! - [`estimation`]: weight learning, wave-propagated estimates, scoring.
//! - [`field`]: synthetic Gaussian-mixture fields and series I/O.
//! - [`bench`]: expected-value suites shared by tests and the CLI.

pub mod bench;
pub mod bnb;
pub mod estimation;
pub mod field;
pub mod instance;
pub mod model;
pub mod oracle;
pub mod simplex;

pub use bnb::{solve_instance, SolveParams, Solution, SolveStatus, TourSet};
pub use instance::{NodeNetwork, ProblemInstance, RobotSpec, SolverOptions};
pub use model::{build_model, evaluate_tours, linearize_objective, MipModel};
