//! Gain-scheduled leader-follower tracking for physically interconnected,
//! parameter-varying multi-agent systems.
//!
//! The pipeline is:
//!
//! 1. [`graph`]: coupling and communication digraphs, pinning, and the
//!    consensus constants `theta`, `sigma`, `lambda_hat`.
//! 2. [`plant`]: the LPV agent model, coupling shapes, uncertainty
//!    realizations and the scenario file format.
//! 3. [`lmi`]: per-node block LMIs (full and reduced) and their
//!    linearization into a joint conic feasibility problem.
//! 4. [`solver`]: a small dense interior-point / alternating-projection
//!    solver for that problem.
//! 5. [`schedule`]: design grid, coverage sets, corner points, solution
//!    interpolation and the rate condition.
//! 6. [`sim`]: fixed-step RK4 closed-loop simulation, tracking cost and
//!    guaranteed cost bounds.
//!
//! Data-parallel loops (per-block Hessian assembly, design point solves,
//! uncertainty sweeps) run on rayon when the `parallel` feature is on and
//! fall back to plain iterators otherwise. Results are identical either way.

pub mod error;
pub mod graph;
pub mod lmi;
pub mod par;
pub mod plant;
pub mod schedule;
mod serde_mat;
pub mod sim;
pub mod solver;
pub mod synthesis;

pub use error::{Error, Result};
pub use graph::{ConsensusConstants, NetworkTopology, ValidationReport};
pub use lmi::{LmiContext, LmiSolution, MultiplierSet};
pub use plant::{CouplingShape, DeltaSpec, LpvPlant, RhoProfile, Scenario, UncertaintyRealization};
pub use schedule::{DesignGrid, GainSchedule, RateReport, ScheduleMode};
pub use sim::{CostReport, Trajectory};
pub use solver::{ConicProblem, FeasibilityResult, SolveStatus, SolverOptions};
