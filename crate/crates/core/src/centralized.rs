//! Full-information solver: the Riccati solution is approached through an
//! iterated linear matrix ODE, a reachability Gramian pins the Lagrange
//! multiplier enforcing `x(T) = x_T`, and backward/forward sweeps produce the
//! optimal state and control.

use nalgebra::{DMatrix, DVector};

use crate::model::REACHABILITY_TOL;
use crate::model::{check_reachability, IterationSchedule, LQTerminalProblem, ReachabilityCheck};
use crate::numerics::{
    integrate_matrix_ode, integrate_vector_ode, quadrature_weights, symmetrize, Direction,
    MatrixTrajectory, TimeGrid, VectorTrajectory, DEFAULT_RANK_TOL,
};
use crate::{Error, Result};

/// Default number of grid intervals; keeps RK4 endpoint error well below the
/// reported tolerances for horizons up to about ten time units.
pub const DEFAULT_GRID_STEPS: usize = 2000;

/// Converged trajectories from the outer Riccati iteration.
#[derive(Debug, Clone)]
pub struct RiccatiIterates {
    pub p: MatrixTrajectory,
    pub z: MatrixTrajectory,
    pub phi: MatrixTrajectory,
    pub psi: MatrixTrajectory,
    pub iterations_used: usize,
    pub final_delta: f64,
    /// Every outer iterate of `P`, in order; consecutive pairs are ordered in
    /// the positive-semidefinite sense.
    pub p_history: Vec<MatrixTrajectory>,
}

/// Iterates the linear matrix ODE
/// `Pdot = -Z' P - P Z - V`, `Z = A - B R^-1 B' P_prev`,
/// `V = Q + P_prev B R^-1 B' P_prev`, backward from `P(T) = 0` starting at
/// `P_0 = 0`, until the max-node Frobenius delta between consecutive iterates
/// drops under `tol_outer`.
pub fn riccati_iteration(
    problem: &LQTerminalProblem,
    grid: TimeGrid,
    schedule: &IterationSchedule,
) -> Result<RiccatiIterates> {
    let n = problem.state_dim();
    let s = problem.control_weight();
    let mut p_prev = MatrixTrajectory::zeros(grid, n, n);
    let mut p_history = Vec::new();
    let mut final_delta = f64::INFINITY;
    let mut iterations_used = schedule.max_n;
    let mut converged = false;

    for iter in 1..=schedule.max_n {
        let z = closed_loop_matrix(problem, &s, &p_prev);
        let v = state_cost_matrix(problem, &s, &p_prev);
        let p = integrate_lyapunov_ode(&z, &v, grid)?;
        final_delta = p.max_node_delta(&p_prev);
        p_history.push(p.clone());
        p_prev = p;
        if final_delta < schedule.tol_outer {
            iterations_used = iter;
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "riccati iteration: delta {final_delta:.3e} above tolerance {:.3e} after {} iterations",
            schedule.tol_outer, schedule.max_n
        )));
    }

    let z = closed_loop_matrix(problem, &s, &p_prev);
    let phi = integrate_matrix_ode(
        |t, m| z.eval(t) * m,
        DMatrix::identity(n, n),
        grid,
        Direction::Forward,
    )?;
    let psi = integrate_matrix_ode(
        |t, m| -z.eval(t).transpose() * m,
        DMatrix::identity(n, n),
        grid,
        Direction::Forward,
    )?;
    Ok(RiccatiIterates {
        p: p_prev,
        z,
        phi,
        psi,
        iterations_used,
        final_delta,
        p_history,
    })
}

/// `Z(t) = A - S P(t)` sampled on the grid of `p`.
pub fn closed_loop_matrix(
    problem: &LQTerminalProblem,
    s: &DMatrix<f64>,
    p: &MatrixTrajectory,
) -> MatrixTrajectory {
    MatrixTrajectory::from_fn(*p.grid(), |t| &problem.a - s * p.eval(t))
}

fn state_cost_matrix(
    problem: &LQTerminalProblem,
    s: &DMatrix<f64>,
    p: &MatrixTrajectory,
) -> MatrixTrajectory {
    MatrixTrajectory::from_fn(*p.grid(), |t| {
        let pt = p.eval(t);
        &problem.q + &pt * s * &pt
    })
}

/// Backward solve of `Pdot = -Z' P - P Z - V` from `P(T) = 0`, symmetrized
/// node by node.
pub fn integrate_lyapunov_ode(
    z: &MatrixTrajectory,
    v: &MatrixTrajectory,
    grid: TimeGrid,
) -> Result<MatrixTrajectory> {
    let (n, _) = z.shape();
    let traj = integrate_matrix_ode(
        |t, p| {
            let zt = z.eval(t);
            -zt.transpose() * p - p * zt - v.eval(t)
        },
        DMatrix::zeros(n, n),
        grid,
        Direction::Backward,
    )?;
    let samples = traj.samples().iter().map(symmetrize).collect();
    MatrixTrajectory::from_samples(grid, samples)
}

/// Reachability Gramian `G = int_0^T Phi(T,s) S Phi(T,s)' ds`, assembled with
/// per-node LU inversion of `Phi(s)` and composite-Simpson weights, then
/// symmetrized. `Phi(T,s) = Phi(T) Phi(s)^-1` and `Psi(s,T) = Phi(T,s)'`.
pub fn control_gramian(
    phi: &MatrixTrajectory,
    s: &DMatrix<f64>,
    grid: TimeGrid,
) -> Result<DMatrix<f64>> {
    let n = phi.shape().0;
    let phi_t = phi.node(grid.num_steps()).clone();
    let weights = quadrature_weights(grid.num_steps(), grid.step());
    let mut gram = DMatrix::zeros(n, n);
    for (i, w) in weights.iter().enumerate() {
        let phi_inv =
            phi.node(i).clone().lu().try_inverse().ok_or_else(|| {
                Error::Degenerate(format!("singular transition matrix at node {i}"))
            })?;
        let phi_ts = &phi_t * phi_inv;
        gram += (&phi_ts * s * phi_ts.transpose()) * *w;
    }
    Ok(symmetrize(&gram))
}

/// Gramian for the problem's own control weight `B R^-1 B'`.
pub fn compute_gramian(
    phi: &MatrixTrajectory,
    problem: &LQTerminalProblem,
    grid: TimeGrid,
) -> Result<DMatrix<f64>> {
    control_gramian(phi, &problem.control_weight(), grid)
}

/// Lagrange multiplier `lambda = G^+ (Phi(T,0) x0 - xT)`; refuses to project
/// when the target is out of range.
pub fn solve_lambda(
    gramian: &DMatrix<f64>,
    phi: &MatrixTrajectory,
    problem: &LQTerminalProblem,
    rank_tol: f64,
) -> Result<DVector<f64>> {
    let phi_t0 = phi.node(phi.grid().num_steps());
    let ReachabilityCheck {
        reachable,
        residual,
    } = check_reachability(problem, gramian, phi_t0, rank_tol, REACHABILITY_TOL);
    if !reachable {
        return Err(Error::Unreachable { residual });
    }
    let rhs = phi_t0 * &problem.x0 - &problem.x_target;
    Ok(crate::numerics::pseudo_inverse(gramian, rank_tol) * rhs)
}

/// Backward sweep of `betadot = -Z(t)' beta` from `beta(T) = lambda`.
pub fn integrate_beta(z: &MatrixTrajectory, lambda: &DVector<f64>) -> Result<VectorTrajectory> {
    integrate_vector_ode(
        |t, beta: &DVector<f64>| -z.eval(t).transpose() * beta,
        lambda.clone(),
        *z.grid(),
        Direction::Backward,
    )
}

/// Forward sweep of `xdot = Z(t) x - S beta(t)` from `x(0) = x0`.
pub fn integrate_optimal_state(
    z: &MatrixTrajectory,
    beta: &VectorTrajectory,
    problem: &LQTerminalProblem,
) -> Result<VectorTrajectory> {
    let s = problem.control_weight();
    integrate_vector_ode(
        |t, x: &DVector<f64>| z.eval(t) * x - &s * beta.eval(t),
        problem.x0.clone(),
        *z.grid(),
        Direction::Forward,
    )
}

/// `u(t) = -R^-1 B' [P(t) x(t) + beta(t)]`, evaluated node-wise.
pub fn optimal_control(
    p: &MatrixTrajectory,
    beta: &VectorTrajectory,
    x_star: &VectorTrajectory,
    problem: &LQTerminalProblem,
) -> VectorTrajectory {
    let gain = problem.r_inv() * problem.b.transpose();
    VectorTrajectory::from_fn(*p.grid(), |t| {
        -(&gain * (p.eval(t) * x_star.eval(t) + beta.eval(t)))
    })
}

/// Quadrature of `x' Q x + u' R u` over the grid.
pub fn evaluate_cost(
    x: &VectorTrajectory,
    u: &VectorTrajectory,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> f64 {
    let grid = x.grid();
    let weights = quadrature_weights(grid.num_steps(), grid.step());
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let xi = x.node(i);
            let ui = u.node(i);
            w * ((q * xi).dot(xi) + (r * ui).dot(ui))
        })
        .sum()
}

/// Complete output of the full-information solve.
#[derive(Debug, Clone)]
pub struct CentralizedSolution {
    pub p: MatrixTrajectory,
    pub z: MatrixTrajectory,
    pub phi: MatrixTrajectory,
    pub psi: MatrixTrajectory,
    pub gramian: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub beta: VectorTrajectory,
    pub x_star: VectorTrajectory,
    pub u_star: VectorTrajectory,
    pub cost: f64,
    pub terminal_error: f64,
    pub iterations_used: usize,
    pub p_history: Vec<MatrixTrajectory>,
}

/// Runs the whole pipeline: Riccati iteration, Gramian, multiplier, adjoint
/// offset, state and control.
pub fn solve(
    problem: &LQTerminalProblem,
    grid: TimeGrid,
    schedule: &IterationSchedule,
) -> Result<CentralizedSolution> {
    let iterates = riccati_iteration(problem, grid, schedule)?;
    let gramian = compute_gramian(&iterates.phi, problem, grid)?;
    let lambda = solve_lambda(&gramian, &iterates.phi, problem, DEFAULT_RANK_TOL)?;
    let beta = integrate_beta(&iterates.z, &lambda)?;
    let x_star = integrate_optimal_state(&iterates.z, &beta, problem)?;
    let u_star = optimal_control(&iterates.p, &beta, &x_star, problem);
    let cost = evaluate_cost(&x_star, &u_star, &problem.q, &problem.r);
    let terminal_error = (x_star.node(grid.num_steps()) - &problem.x_target).norm();
    Ok(CentralizedSolution {
        p: iterates.p,
        z: iterates.z,
        phi: iterates.phi,
        psi: iterates.psi,
        gramian,
        lambda,
        beta,
        x_star,
        u_star,
        cost,
        terminal_error,
        iterations_used: iterates.iterations_used,
        p_history: iterates.p_history,
    })
}

/// Max-node residual of the adjoint structure: with
/// `p(t) = P(t) x(t) + beta(t)` the optimality system demands
/// `pdot = -A' p - Q x` (checked by central differences on interior nodes)
/// and `u = -R^-1 B' p`.
pub fn check_stationarity(solution: &CentralizedSolution, problem: &LQTerminalProblem) -> f64 {
    let grid = solution.p.grid();
    let h = grid.step();
    let adjoint: Vec<DVector<f64>> = (0..grid.num_nodes())
        .map(|i| solution.p.node(i) * solution.x_star.node(i) + solution.beta.node(i))
        .collect();
    let mut residual: f64 = 0.0;
    for i in 1..grid.num_steps() {
        let pdot = (&adjoint[i + 1] - &adjoint[i - 1]) / (2.0 * h);
        let expected = -problem.a.transpose() * &adjoint[i] - &problem.q * solution.x_star.node(i);
        residual = residual.max((pdot - expected).norm());
    }
    let gain = problem.r_inv() * problem.b.transpose();
    for i in 0..grid.num_nodes() {
        let gap = (solution.u_star.node(i) + &gain * &adjoint[i]).norm();
        residual = residual.max(gap);
    }
    residual
}
