//! Distributed primal-dual optimization for L2-regularized empirical risk
//! minimization.
//!
//! Each machine owns a block of examples together with the matching dual
//! coordinates. In every round it approximately maximizes a data-local
//! quadratic model of the dual objective with an arbitrary local solver, and
//! the only thing exchanged between machines is one `d`-dimensional update of
//! the shared vector `v = X alpha / (lambda n)`.
//!
//! Module map:
//!
//! * [`data`]: LIBSVM ingestion, normalization and partitioning.
//! * [`losses`]: loss functions, their conjugates and constants.
//! * [`problem`]: primal/dual objectives and the duality gap.
//! * [`subproblem`]: the per-machine local objective and spectral quantities.
//! * [`solvers`]: pluggable local solvers (CD, GD, CG, L-BFGS, BB, FISTA).
//! * [`engine`]: the outer loop with in-process and TCP transports.
//! * [`rates`]: iteration-complexity bounds.
//! * [`verify`]: brute-force oracles and the property suite.

pub mod data;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod problem;
pub mod rates;
pub mod solvers;
pub mod subproblem;
pub mod verify;

pub use data::{Dataset, Partition, PartitionStrategy};
pub use engine::{RunConfig, RunReport, RoundMetrics, SigmaPrime, Termination};
pub use error::{Error, Result};
pub use losses::Loss;
pub use problem::{DualState, Problem};
pub use solvers::{SolverConfig, SolverKind};
pub use subproblem::SubproblemView;
