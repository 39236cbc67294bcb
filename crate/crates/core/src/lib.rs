//! Coordinated, mobility-aware EV charging.
//!
//! The crate computes charging schedules that minimise total feeder overload
//! (sum over feeders of the peak excess over hosting capacity) while keeping
//! every vehicle's state of charge inside its trip-driven envelope. The
//! coordinated problem is decomposed with a sharing-form ADMM whose per-EV
//! step is a batched projected dual ascent and whose per-feeder step is an
//! exact sort-based solve. Every iterate carries a primal/dual certificate.
//!
//! Module map:
//!
//! - [`model`]: domain types, cumulative bounds, feasibility oracle and the
//!   greedy feasibility projection, objectives and load aggregation.
//! - [`ev_solver`]: the batched per-EV solver (ADMM step and price response).
//! - [`feeder`]: exact per-feeder consensus and dual-evaluation solvers.
//! - [`admm`]: the outer loop, residuals and optimality certificates.
//! - [`scenario`]: synthetic generation, CSV ingestion, the unmanaged
//!   baseline and reporting metrics.
//! - [`oracles`]: brute-force and certified reference solvers.
//! - [`report`]: run reports and schedule files.
//! - [`selftest`]: self-contained invariant checks used by the CLI.

pub mod admm;
pub mod error;
pub mod ev_solver;
pub mod feeder;
pub mod mat;
pub mod model;
pub mod oracles;
pub mod report;
pub mod scenario;
pub mod selftest;

pub use admm::{AdmmOptions, AdmmState, Certificate, ResidualReport, RunOutcome, Termination};
pub use error::{Error, Result};
pub use ev_solver::{DualIterate, EvInstance, Optimizer, SolveOptions, SubproblemResult, Variant};
pub use feeder::{D2Value, FeederSolution};
pub use mat::Mat;
pub use model::{CumulativeBounds, EvProfile, FeederSeries, Infeasible, LocationMap, Scenario, FEAS_TOL};
pub use scenario::{GenConfig, MetricsReport};
