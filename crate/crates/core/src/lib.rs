//! Tabular constrained-MDP laboratory for primal-dual policy optimization
//! driven by simulated human feedback.
//!
//! The crate is organised around the pieces a run needs:
//!
//! * [`cmdp`], [`policy`] and [`eval`]: the environment, policy
//!   parameterizations and exact (linear-solve) evaluation.
//! * [`sampling`]: seeded finite-horizon rollouts and discounted returns.
//! * [`feedback`]: link functions and simulated evaluator panels.
//! * [`npgpd`] and [`zpgpd`]: the natural-gradient and zeroth-order
//!   primal-dual learners.
//! * [`oracles`]: value iteration, the constrained optimum via a scalar dual
//!   search, and the Slater slack.
//! * [`envgen`]: the random Dirichlet environment protocol.
//! * [`log`] and [`harness`]: iterate logs, CSV/JSON artifacts, sweeps.
//!
//! Inner Monte Carlo loops run on rayon when the `parallel` feature is
//! enabled (the default). Every random draw comes from a stream derived from
//! a fixed key, so sequential and parallel execution produce identical
//! results.

pub mod cmdp;
pub mod envgen;
pub mod error;
pub mod eval;
pub mod exec;
pub mod feedback;
pub mod format;
pub mod harness;
pub mod log;
pub mod npgpd;
pub mod oracles;
pub mod policy;
pub mod rng;
pub mod sampling;
pub mod table;
pub mod zpgpd;

pub use cmdp::{Cmdp, Signal};
pub use error::{Error, Result};
pub use exec::Execution;
pub use policy::{PolicyKind, PolicyParams, PolicyTable};
pub use rng::RngStream;
pub use table::Table;
