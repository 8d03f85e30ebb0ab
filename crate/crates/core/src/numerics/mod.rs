//! Dense small-matrix kernels: time grids, trajectory containers, RK4
//! integrators, quadrature and the linear-algebra helpers every solver
//! module builds on.
//!
//! All operations are pure functions of their inputs and hold no shared
//! mutable state.

mod grid;
mod linalg;
mod ode;

pub use grid::{MatrixTrajectory, TimeGrid, VectorTrajectory};
pub use linalg::{
    matrix_exponential, min_symmetric_eigenvalue, psd_order_holds, pseudo_inverse, solve_lyapunov,
    solve_lyapunov_deflated, spectral_abscissa, spectral_norm, symmetric_inv_sqrt, symmetric_sqrt,
    symmetrize, LYAPUNOV_PAIR_TOL,
};
pub use ode::{integrate_matrix_ode, integrate_vector_ode, quadrature_weights, Direction};

/// Default relative rank tolerance for pseudo-inverses. The reachability
/// Gramian can be rank-deficient when the target is only reachable on a
/// subspace, so singular values below `rank_tol * sigma_max` are truncated.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
