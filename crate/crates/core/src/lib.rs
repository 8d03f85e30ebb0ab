//! Finite-horizon linear-quadratic optimal control with a fixed terminal state.
//!
//! The crate solves the problem two ways:
//!
//! * [`centralized`] — full-information solver: an iterated linear matrix ODE
//!   converges to the Riccati solution, a reachability Gramian pins the
//!   Lagrange multiplier that enforces `x(T) = x_T`, and backward/forward
//!   sweeps produce the optimal state and control.
//! * [`distributed`] — each agent holds only a local share of the system data
//!   and reconstructs the same solution through consensus-tracking rounds over
//!   an undirected communication graph.
//!
//! The same iteration machinery extends to infinite-horizon optimal consensus
//! of heterogeneous multi-agent systems in [`consensus`], including the UGV
//! fleet scenario and a classical-protocol baseline for cost comparison.
//!
//! Scenario files (JSON) and CSV emission live in [`scenario`] and [`cli`];
//! the `lqterm` binary fronts the four subcommands `centralized`,
//! `distributed`, `consensus` and `validate`.

pub mod centralized;
pub mod cli;
pub mod consensus;
pub mod distributed;
pub mod model;
pub mod numerics;
pub mod scenario;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged: non-finite values at node {node} (t = {time})")]
    IntegrationDiverged { node: usize, time: f64 },

    #[error("lyapunov equation not solvable: eigenvalue pair sum {pair_sum:.3e} within tolerance {tol:.3e} of zero")]
    NonSolvableLyapunov { pair_sum: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("coupling gamma rejected: spectral radius {rho:.6} >= 1")]
    GammaInvalid { rho: f64 },

    #[error("terminal state unreachable: least-squares residual {residual:.3e}")]
    Unreachable { residual: f64 },

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("iteration did not converge: {0}")]
    Convergence(String),

    #[error("stabilizability check failed: {0}")]
    Stabilizability(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
