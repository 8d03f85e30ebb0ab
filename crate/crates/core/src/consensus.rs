//! Infinite-horizon optimal consensus of heterogeneous multi-agent systems.
//!
//! The pairwise-disagreement cost is folded into a block matrix `Qtilde`
//! whose kernel contains the agreement direction, the stacked system's
//! algebraic Riccati equation is solved by a Kleinman-Newton iteration with a
//! regularized-ODE bootstrap, and the distributed route reconstructs the same
//! solution per agent with the consensus-tracking engine, algebraic Lyapunov
//! solves replacing the finite-horizon backward sweeps.

use nalgebra::{Complex, DMatrix, DVector};

use crate::distributed::tracking::{pairwise_deviation, run_tracking, TrackingOutcome};
use crate::model::{validate_gamma, IterationSchedule, Topology};
use crate::numerics::{
    integrate_matrix_ode, integrate_vector_ode, min_symmetric_eigenvalue, quadrature_weights,
    solve_lyapunov_deflated, spectral_abscissa, spectral_norm, symmetrize, Direction, TimeGrid,
    VectorTrajectory,
};
use crate::{Error, Result};

/// Regularization added to the disagreement cost when bootstrapping a
/// stabilizing gain; the cost kernel (the agreement direction) makes the
/// plain equation only semidefinite.
pub const ARE_REGULARIZATION: f64 = 1e-6;

/// Gain-delta tolerance of the Newton iteration.
pub const NEWTON_GAIN_TOL: f64 = 1e-10;

/// Relative deflation threshold handed to the Lyapunov solver. Wide enough
/// that a marginal mode is zeroed cleanly before its pair sum enters the
/// window where a near-singular solve amplifies roundoff; genuinely slow
/// stable modes in these problems sit orders of magnitude above it.
pub const ARE_DEFLATE_TOL: f64 = 1e-7;

/// Horizon of the finite value-step fallback used when an iterate's
/// coefficient matrix is not yet stable enough for the algebraic solve.
pub const VALUE_STEP_HORIZON: f64 = 20.0;

/// One agent of the heterogeneous fleet.
#[derive(Debug, Clone)]
pub struct ConsensusAgent {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: DVector<f64>,
}

/// Fleet, communication graph and pairwise disagreement weights `Q_ij`
/// (zero matrices off the edge support).
#[derive(Debug, Clone)]
pub struct MultiAgentSystem {
    pub agents: Vec<ConsensusAgent>,
    pub topology: Topology,
    pub weights: Vec<Vec<DMatrix<f64>>>,
}

impl MultiAgentSystem {
    pub fn new(
        agents: Vec<ConsensusAgent>,
        topology: Topology,
        weights: Vec<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let count = agents.len();
        if count == 0 {
            return Err(Error::Dimension("fleet needs at least one agent".into()));
        }
        if topology.num_agents() != count {
            return Err(Error::Dimension(
                "topology size does not match the fleet".into(),
            ));
        }
        let n = agents[0].a.nrows();
        let m = agents[0].b.ncols();
        for (i, agent) in agents.iter().enumerate() {
            if agent.a.shape() != (n, n) || agent.b.shape() != (n, m) {
                return Err(Error::Dimension(format!(
                    "agent {i} dynamics have mixed dimensions"
                )));
            }
            if agent.r.shape() != (m, m) || min_symmetric_eigenvalue(&agent.r) <= 0.0 {
                return Err(Error::Parameter(format!(
                    "agent {i} needs a positive-definite R"
                )));
            }
            if agent.x0.len() != n {
                return Err(Error::Dimension(format!(
                    "agent {i} initial state has wrong length"
                )));
            }
            if !is_stabilizable(&agent.a, &agent.b) {
                return Err(Error::Stabilizability(format!(
                    "agent {i}: unstable modes outside the controllable subspace"
                )));
            }
        }
        if weights.len() != count || weights.iter().any(|row| row.len() != count) {
            return Err(Error::Dimension("weights must form an N x N grid".into()));
        }
        for (i, row) in weights.iter().enumerate() {
            for (j, q) in row.iter().enumerate() {
                if q.shape() != (n, n) {
                    return Err(Error::Dimension(format!("Q_{i}{j} must be n x n")));
                }
                if min_symmetric_eigenvalue(q) < -1e-10 {
                    return Err(Error::Parameter(format!("Q_{i}{j} must be PSD")));
                }
            }
        }
        Ok(Self {
            agents,
            topology,
            weights,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agent_state_dim(&self) -> usize {
        self.agents[0].a.nrows()
    }

    pub fn agent_input_dim(&self) -> usize {
        self.agents[0].b.ncols()
    }

    pub fn stacked_state_dim(&self) -> usize {
        self.agent_count() * self.agent_state_dim()
    }

    /// `A = diag{A_i}`.
    pub fn stacked_a(&self) -> DMatrix<f64> {
        block_diag(self.agents.iter().map(|a| &a.a))
    }

    /// `B = diag{B_i}`.
    pub fn stacked_b(&self) -> DMatrix<f64> {
        block_diag_rect(self.agents.iter().map(|a| &a.b))
    }

    /// `R = diag{R_i}`.
    pub fn stacked_r(&self) -> DMatrix<f64> {
        block_diag(self.agents.iter().map(|a| &a.r))
    }

    pub fn stacked_x0(&self) -> DVector<f64> {
        let n = self.agent_state_dim();
        let mut x = DVector::zeros(self.stacked_state_dim());
        for (i, agent) in self.agents.iter().enumerate() {
            x.rows_mut(i * n, n).copy_from(&agent.x0);
        }
        x
    }
}

fn block_diag<'a>(blocks: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let blocks: Vec<_> = blocks.collect();
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((offset, offset), b.shape()).copy_from(b);
        offset += b.nrows();
    }
    out
}

fn block_diag_rect<'a>(blocks: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let blocks: Vec<_> = blocks.collect();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut ro, mut co) = (0, 0);
    for b in blocks {
        out.view_mut((ro, co), b.shape()).copy_from(b);
        ro += b.nrows();
        co += b.ncols();
    }
    out
}

/// PBH test on the modes with nonnegative real part: `[A - lambda I, B]`
/// must keep full row rank.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let eigs = a.complex_eigenvalues();
    for lambda in eigs.iter() {
        if lambda.re < -1e-9 {
            continue;
        }
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for r in 0..n {
            for c in 0..n {
                pencil[(r, c)] = Complex::new(a[(r, c)], 0.0);
            }
            pencil[(r, r)] -= lambda;
            for c in 0..b.ncols() {
                pencil[(r, n + c)] = Complex::new(b[(r, c)], 0.0);
            }
        }
        let svals = pencil.svd(false, false).singular_values;
        let max = svals.max();
        let rank = svals.iter().filter(|s| **s > 1e-8 * (1.0 + max)).count();
        if rank < n {
            return false;
        }
    }
    true
}

/// Block disagreement-cost matrix: `Qtilde_ii = sum_j c_ij (Q_ij + Q_ji)`,
/// `Qtilde_ij = -c_ij (Q_ij + Q_ji)`; block-row sums vanish by construction
/// (asserted) and the adjacency must carry every nonzero weight.
pub fn build_qtilde(system: &MultiAgentSystem) -> Result<DMatrix<f64>> {
    let count = system.agent_count();
    let n = system.agent_state_dim();
    for i in 0..count {
        for j in 0..count {
            if i == j {
                continue;
            }
            let adjacent = system.topology.neighbors(i).contains(&j);
            if !adjacent && system.weights[i][j].norm() > 0.0 {
                return Err(Error::Parameter(format!(
                    "weight Q_{i}{j} is nonzero but ({i}, {j}) is not an edge"
                )));
            }
        }
    }
    let mut qtilde = DMatrix::zeros(count * n, count * n);
    for i in 0..count {
        let mut diag = DMatrix::zeros(n, n);
        for &j in system.topology.neighbors(i) {
            let pair = &system.weights[i][j] + &system.weights[j][i];
            diag += &pair;
            qtilde.view_mut((i * n, j * n), (n, n)).copy_from(&(-&pair));
        }
        qtilde.view_mut((i * n, i * n), (n, n)).copy_from(&diag);
    }
    // Construction-level identity: every block row sums to zero.
    for i in 0..count {
        let mut row_sum = DMatrix::<f64>::zeros(n, n);
        for j in 0..count {
            row_sum += qtilde.view((i * n, j * n), (n, n));
        }
        debug_assert!(row_sum.norm() < 1e-12 * (1.0 + qtilde.norm()));
    }
    Ok(symmetrize(&qtilde))
}

/// Solution report of the stacked algebraic Riccati equation. The
/// disagreement cost is blind to the agreement direction, so the closed loop
/// is expected to keep a marginal mode there; the spectrum information is
/// reported instead of asserting positive definiteness of `P`.
#[derive(Debug, Clone)]
pub struct AreSolution {
    pub p: DMatrix<f64>,
    pub residual: f64,
    pub newton_iterations: usize,
    pub bootstrap_horizon: f64,
    pub closed_loop_abscissa: f64,
}

/// Relative rank tolerance for the observability-kernel computation.
const OBS_RANK_TOL: f64 = 1e-9;

/// Orthogonal projector onto the orthogonal complement of the unobservable
/// subspace of `(A, Q)`, i.e. the kernel of `[Q; QA; ...; QA^(n-1)]`.
///
/// The value function carries no mass on unobservable modes that do not
/// strictly diverge (for the consensus cost these are the agreement
/// directions, which stay marginal), so pinning every iterate with
/// `P <- Pi P Pi` fixes the component the singular Lyapunov equations leave
/// undetermined and keeps them exactly consistent.
fn observable_projector(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    // The kernel is scale-invariant, so normalize the power iteration and
    // each stacked block to keep the singular spectrum in range.
    let a_hat = a / a.norm().max(1.0);
    let mut stack = DMatrix::zeros(n * n, n);
    let mut block = q.clone();
    let bnorm = block.norm();
    if bnorm > 0.0 {
        block /= bnorm;
    }
    for i in 0..n {
        stack.rows_mut(i * n, n).copy_from(&block);
        if i + 1 < n {
            block *= &a_hat;
            let bnorm = block.norm();
            if bnorm > 1e-300 {
                block /= bnorm;
            }
        }
    }
    let svd = stack.svd(false, true);
    let v_t = svd.v_t.expect("svd with v_t requested");
    let sigma_max = svd.singular_values.max();
    let mut projector = DMatrix::zeros(n, n);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > OBS_RANK_TOL * (1.0 + sigma_max) {
            let row = v_t.row(i);
            projector += row.transpose() * row;
        }
    }
    projector
}

/// Kleinman-Newton with a regularized-ODE bootstrap: a long-horizon backward
/// sweep of the Riccati flow with cost `Q + delta I` produces a stabilizing
/// starting gain, after which each Newton step solves
/// `(A - B K)' P + P (A - B K) + Q + K' R K = 0` and updates `K = R^-1 B' P`
/// until the gain delta falls under [`NEWTON_GAIN_TOL`].
pub fn kleinman_newton(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<AreSolution> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Parameter("control weight R is singular".into()))?;
    let s = symmetrize(&(b * &r_inv * b.transpose()));
    let projector = observable_projector(a, q);
    let pin = |m: &DMatrix<f64>| symmetrize(&(&projector * symmetrize(m) * &projector));

    // A Newton step is usable once the candidate gain makes the Lyapunov
    // equation solvable and consistent.
    let newton_ready = |k: &DMatrix<f64>| -> bool {
        let a_cl = a - b * k;
        let cost = symmetrize(&(q + k.transpose() * r * k));
        match solve_lyapunov_deflated(&a_cl, &cost, ARE_DEFLATE_TOL) {
            Ok((p, _)) => {
                let residual = (a_cl.transpose() * &p + &p * &a_cl + &cost).norm();
                residual <= 1e-6 * (1.0 + cost.norm() + a_cl.norm() * p.norm())
            }
            Err(_) => false,
        }
    };

    // Bootstrap: integrate the regularized Riccati flow until Newton can take
    // over. A Hurwitz drift needs no bootstrap at all.
    let mut k = DMatrix::zeros(b.ncols(), n);
    let mut bootstrap_horizon = 0.0;
    if spectral_abscissa(a) >= -1e-9 && !newton_ready(&k) {
        let q_reg = q + DMatrix::identity(n, n) * ARE_REGULARIZATION;
        let mut flow_state = DMatrix::<f64>::zeros(n, n);
        let chunk_t = 10.0;
        let mut ready = false;
        for _ in 0..20 {
            let scale = 1.0 + spectral_norm(a) + spectral_norm(&(&s * &flow_state));
            let steps = ((chunk_t * scale / 0.25).ceil() as usize).clamp(200, 100_000);
            let grid = TimeGrid::new(chunk_t, steps)?;
            let flow = integrate_matrix_ode(
                |_, p| {
                    let sym = symmetrize(p);
                    a.transpose() * &sym + &sym * a + &q_reg - &sym * &s * &sym
                },
                flow_state.clone(),
                grid,
                Direction::Forward,
            )?;
            flow_state = symmetrize(flow.node(steps));
            bootstrap_horizon += chunk_t;
            let k_try = &r_inv * b.transpose() * pin(&flow_state);
            if newton_ready(&k_try) {
                k = k_try;
                ready = true;
                break;
            }
        }
        if !ready {
            return Err(Error::Stabilizability(
                "bootstrap never produced a stabilizing gain".into(),
            ));
        }
    }

    let mut p = DMatrix::zeros(n, n);
    let mut newton_iterations = 0;
    let mut gain_delta = f64::INFINITY;
    for iter in 1..=200 {
        let a_cl = a - b * &k;
        let cost = symmetrize(&(q + k.transpose() * r * &k));
        let (p_raw, _) = solve_lyapunov_deflated(&a_cl, &cost, ARE_DEFLATE_TOL)?;
        let p_next = pin(&p_raw);
        let k_next = &r_inv * b.transpose() * &p_next;
        let delta = (&k_next - &k).norm();
        newton_iterations = iter;
        // Roundoff floors the achievable delta; stop on the first
        // non-improving round and keep the better iterate.
        if delta > gain_delta && gain_delta < 1e-6 {
            break;
        }
        k = k_next;
        p = p_next;
        gain_delta = delta;
        if gain_delta < NEWTON_GAIN_TOL {
            break;
        }
    }
    if gain_delta > 1e-6 {
        return Err(Error::Convergence(format!(
            "newton iteration stalled with gain delta {gain_delta:.3e}"
        )));
    }
    let residual = (a.transpose() * &p + &p * a + q - &p * &s * &p).norm();
    Ok(AreSolution {
        closed_loop_abscissa: spectral_abscissa(&(a - &s * &p)),
        p,
        residual,
        newton_iterations,
        bootstrap_horizon,
    })
}

/// Centralized route: stacked matrices, disagreement cost, Kleinman-Newton.
pub fn solve_are_centralized(system: &MultiAgentSystem) -> Result<AreSolution> {
    let qtilde = build_qtilde(system)?;
    kleinman_newton(
        &system.stacked_a(),
        &system.stacked_b(),
        &system.stacked_r(),
        &qtilde,
    )
}

/// Block-embedded local share of the stacked data for one agent.
#[derive(Debug, Clone)]
pub struct LiftedAgent {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// `Btilde_i Rtilde_i Btilde_i'`, the agent's share of `B R^-1 B'`.
    pub s: DMatrix<f64>,
}

/// `Atilde_i = diag{0,..,N A_i,..,0}`, `Btilde_i = diag{0,..,N B_i,..,0}`,
/// `Rtilde_i = diag{0,..,(1/N) R_i^-1,..,0}`, `Qtilde_i = L_i Qtilde` and
/// `xbar_i(0) = [0 .. N x_i0' .. 0]'`; the agent means reconstruct the
/// stacked data exactly.
pub fn lift_agent_matrices(
    system: &MultiAgentSystem,
    qtilde: &DMatrix<f64>,
    index: usize,
) -> Result<LiftedAgent> {
    let count = system.agent_count();
    if index >= count {
        return Err(Error::Parameter(format!(
            "agent index {index} out of range"
        )));
    }
    let n = system.agent_state_dim();
    let m = system.agent_input_dim();
    let total_n = count * n;
    let total_m = count * m;
    let scale = count as f64;
    let agent = &system.agents[index];

    let mut a = DMatrix::zeros(total_n, total_n);
    a.view_mut((index * n, index * n), (n, n))
        .copy_from(&(&agent.a * scale));
    let mut b = DMatrix::zeros(total_n, total_m);
    b.view_mut((index * n, index * m), (n, m))
        .copy_from(&(&agent.b * scale));
    let r_inv = agent
        .r
        .clone()
        .try_inverse()
        .expect("validated positive definite");
    let mut r = DMatrix::zeros(total_m, total_m);
    r.view_mut((index * m, index * m), (m, m))
        .copy_from(&(&r_inv / scale));
    let mut q = DMatrix::zeros(total_n, total_n);
    q.rows_mut(index * n, n)
        .copy_from(&(qtilde.rows(index * n, n) * scale));
    let mut x0 = DVector::zeros(total_n);
    x0.rows_mut(index * n, n).copy_from(&(&agent.x0 * scale));
    let s = {
        let mut s = DMatrix::zeros(total_n, total_n);
        let local = &agent.b * &r_inv * agent.b.transpose();
        s.view_mut((index * n, index * n), (n, n))
            .copy_from(&(local * scale));
        symmetrize(&s)
    };
    Ok(LiftedAgent { a, b, r, q, x0, s })
}

/// One round of per-agent Riccati data for the distributed route.
#[derive(Debug, Clone)]
pub struct DistributedAre {
    pub p: Vec<DMatrix<f64>>,
    pub z_bar: Vec<DMatrix<f64>>,
    pub outer_iterations: usize,
    pub outer_delta: f64,
    pub pairwise_p: f64,
    /// Outer rounds where some agent fell back to the finite value step
    /// because its coefficient matrix was not yet stable.
    pub value_step_rounds: Vec<usize>,
}

fn algebraic_p_update(z: &DMatrix<f64>, v_sym: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    // The value carries no mass on unobservable non-diverging modes of the
    // (Z, V) pair; pinning the iterate there keeps the marginal equations
    // consistent round after round.
    let projector = observable_projector(z, v_sym);
    let pin = |m: &DMatrix<f64>| symmetrize(&(&projector * symmetrize(m) * &projector));
    // The algebraic solution is the value of the current gain only when the
    // fed-back system has no strictly unstable modes; otherwise it exists
    // but is not the object the iteration needs.
    if spectral_abscissa(z) < 1e-8 {
        let (p_raw, _) = solve_lyapunov_deflated(z, v_sym, ARE_DEFLATE_TOL)?;
        let p = pin(&p_raw);
        let residual = (z.transpose() * &p + &p * z + v_sym).norm();
        let scale = 1.0 + v_sym.norm() + z.norm() * p.norm();
        if residual <= 1e-6 * scale {
            return Ok((p, false));
        }
    }
    // Coefficient not yet stable (or the equation inconsistent on its
    // marginal modes): take a finite-horizon value step instead. It always
    // exists and feeds a stabilizing gain into the next outer round.
    let speed = 1.0 + spectral_norm(z);
    let steps = ((VALUE_STEP_HORIZON * speed / 0.2).ceil() as usize).clamp(400, 200_000);
    let grid = TimeGrid::new(VALUE_STEP_HORIZON, steps)?;
    let flow = integrate_matrix_ode(
        |_, p: &DMatrix<f64>| z.transpose() * p + p * z + v_sym,
        DMatrix::zeros(z.nrows(), z.ncols()),
        grid,
        Direction::Forward,
    )?;
    Ok((pin(flow.node(steps)), true))
}

/// Distributed route to the stacked Riccati solution: nested outer/inner
/// loops mirror the finite-horizon pipeline, except the per-agent solve is
/// algebraic.
pub fn distributed_are_iteration(
    system: &MultiAgentSystem,
    schedule: &IterationSchedule,
) -> Result<DistributedAre> {
    let check = validate_gamma(&system.topology)?;
    if !check.valid {
        return Err(Error::GammaInvalid {
            rho: check.spectral_radius,
        });
    }
    let qtilde = build_qtilde(system)?;
    let count = system.agent_count();
    let lifts: Vec<LiftedAgent> = (0..count)
        .map(|i| lift_agent_matrices(system, &qtilde, i))
        .collect::<Result<_>>()?;
    let total_n = system.stacked_state_dim();

    let mut p_prev = vec![DMatrix::<f64>::zeros(total_n, total_n); count];
    let mut outer_delta = f64::INFINITY;
    let mut outer_iterations = schedule.max_n;
    let mut value_step_rounds = Vec::new();
    let mut z_bar = vec![DMatrix::<f64>::zeros(total_n, total_n); count];

    for outer in 1..=schedule.max_n {
        let targets: Vec<(DMatrix<f64>, DMatrix<f64>)> = lifts
            .iter()
            .zip(&p_prev)
            .map(|(lift, p)| {
                let z = &lift.a - &lift.s * p;
                let v = &lift.q + p * &lift.s * p;
                (z, v)
            })
            .collect();
        let TrackingOutcome { values, .. } = run_tracking(
            &targets,
            &system.topology,
            &schedule.alpha,
            schedule.tol_inner,
            schedule.max_k,
            schedule,
            &format!("ZVbar_n{outer}"),
            None,
        );
        let mut fell_back = false;
        let mut p_next = Vec::with_capacity(count);
        z_bar.clear();
        for (z_i, v_i) in values {
            let (p_i, used_value_step) = algebraic_p_update(&z_i, &symmetrize(&v_i))?;
            fell_back |= used_value_step;
            p_next.push(p_i);
            z_bar.push(z_i);
        }
        if fell_back {
            value_step_rounds.push(outer);
        }
        outer_delta = p_next
            .iter()
            .zip(&p_prev)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        p_prev = p_next;
        if outer_delta < schedule.tol_outer && !fell_back {
            outer_iterations = outer;
            break;
        }
    }
    if value_step_rounds.len() >= schedule.max_n {
        return Err(Error::Convergence(
            "distributed riccati solve never reached a stable algebraic round".into(),
        ));
    }
    let pairwise_p = pairwise_deviation(&p_prev);
    Ok(DistributedAre {
        p: p_prev,
        z_bar,
        outer_iterations,
        outer_delta,
        pairwise_p,
        value_step_rounds,
    })
}

/// Node-wise tracking toward each agent's flow target
/// `exp(Zbar_i t) xbar_i(0)`; the limit is the optimal stacked trajectory.
pub fn distributed_state_iteration(
    z_bar: &[DMatrix<f64>],
    system: &MultiAgentSystem,
    schedule: &IterationSchedule,
    grid: TimeGrid,
) -> Result<Vec<VectorTrajectory>> {
    let qtilde = build_qtilde(system)?;
    let mut targets = Vec::with_capacity(z_bar.len());
    for (i, z_i) in z_bar.iter().enumerate() {
        let lift = lift_agent_matrices(system, &qtilde, i)?;
        let target = integrate_vector_ode(
            |_, x: &DVector<f64>| z_i * x,
            lift.x0.clone(),
            grid,
            Direction::Forward,
        )?;
        targets.push(target);
    }
    let out = run_tracking(
        &targets,
        &system.topology,
        &schedule.alpha,
        schedule.tol_inner,
        schedule.max_w,
        schedule,
        "x_consensus",
        None,
    );
    Ok(out.values)
}

/// `u_i(t) = -[0 .. R_i^-1 B_i' .. 0] P_i x_i(t)`: the agent applies its own
/// block row of the stacked gain to its reconstructed trajectory.
pub fn distributed_consensus_controller(
    p: &DMatrix<f64>,
    x: &VectorTrajectory,
    system: &MultiAgentSystem,
    index: usize,
) -> Result<VectorTrajectory> {
    let n = system.agent_state_dim();
    let agent = &system.agents[index];
    let r_inv = agent
        .r
        .clone()
        .try_inverse()
        .expect("validated positive definite");
    let local_gain = &r_inv * agent.b.transpose();
    let row_block = p.rows(index * n, n).into_owned();
    let gain = local_gain * row_block;
    Ok(VectorTrajectory::from_fn(*x.grid(), |t| {
        -(&gain * x.eval(t))
    }))
}

/// Integral cost estimate: Simpson quadrature over the simulated horizon
/// plus an exponential tail fitted to the integrand's decay over the last
/// tenth of the horizon.
#[derive(Debug, Clone, Copy)]
pub struct CostEstimate {
    pub grid_part: f64,
    pub tail: f64,
    pub total: f64,
    pub tail_unbounded: bool,
}

pub fn evaluate_consensus_cost(
    x: &VectorTrajectory,
    u: &VectorTrajectory,
    qtilde: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> CostEstimate {
    let grid = x.grid();
    let weights = quadrature_weights(grid.num_steps(), grid.step());
    let integrand: Vec<f64> = (0..grid.num_nodes())
        .map(|i| {
            let xi = x.node(i);
            let ui = u.node(i);
            (qtilde * xi).dot(xi) + (r * ui).dot(ui)
        })
        .collect();
    let grid_part: f64 = weights.iter().zip(&integrand).map(|(w, g)| w * g).sum();

    // Exponential tail from a log-linear fit on the last 10% of the horizon.
    let start = grid.num_nodes() - (grid.num_nodes() / 10).max(2);
    let points: Vec<(f64, f64)> = (start..grid.num_nodes())
        .filter(|&i| integrand[i] > 0.0)
        .map(|i| (grid.node(i), integrand[i].ln()))
        .collect();
    let g_end = *integrand.last().unwrap();
    let negligible = g_end <= 1e-10 * (1.0 + grid_part.abs());
    let (tail, tail_unbounded) = if points.len() < 2 {
        (0.0, false)
    } else {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        if slope < -1e-12 {
            (g_end / (-slope), false)
        } else {
            (0.0, !negligible)
        }
    };
    CostEstimate {
        grid_part,
        tail,
        total: grid_part + tail,
        tail_unbounded,
    }
}

/// Max pairwise deviation of the per-agent state blocks at each node, and
/// whether the final value sits under `tol`.
pub fn check_consensus(x: &VectorTrajectory, agent_dim: usize, tol: f64) -> (bool, Vec<f64>) {
    let count = x.dim() / agent_dim;
    let series: Vec<f64> = (0..x.grid().num_nodes())
        .map(|node| {
            let full = x.node(node);
            let mut worst: f64 = 0.0;
            for i in 0..count {
                for j in (i + 1)..count {
                    let diff =
                        full.rows(i * agent_dim, agent_dim) - full.rows(j * agent_dim, agent_dim);
                    worst = worst.max(diff.norm());
                }
            }
            worst
        })
        .collect();
    let last = *series.last().unwrap();
    (last <= tol, series)
}

/// Closed-loop simulation of the stacked fleet under the classical
/// neighbor-difference protocol `u_i = K sum_j (x_j - x_i)`.
#[derive(Debug)]
pub struct BaselineOutcome {
    pub x: VectorTrajectory,
    pub u: VectorTrajectory,
    pub cost: CostEstimate,
    pub diverged: bool,
}

pub fn classical_protocol_baseline(
    system: &MultiAgentSystem,
    k_gain: &DMatrix<f64>,
    grid: TimeGrid,
) -> Result<BaselineOutcome> {
    let n = system.agent_state_dim();
    let m = system.agent_input_dim();
    if k_gain.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "baseline gain must be {m} x {n}, got {} x {}",
            k_gain.nrows(),
            k_gain.ncols()
        )));
    }
    let a = system.stacked_a();
    let b = system.stacked_b();
    // u = -(L (x) K) x.
    let feedback = system.topology.laplacian().kronecker(k_gain);
    let a_cl = &a - &b * &feedback;
    let sim = integrate_vector_ode(
        |_, x: &DVector<f64>| &a_cl * x,
        system.stacked_x0(),
        grid,
        Direction::Forward,
    );
    match sim {
        Ok(x) => {
            let u = VectorTrajectory::from_fn(grid, |t| -(&feedback * x.eval(t)));
            let qtilde = build_qtilde(system)?;
            let cost = evaluate_consensus_cost(&x, &u, &qtilde, &system.stacked_r());
            let diverged = cost.tail_unbounded;
            Ok(BaselineOutcome {
                x,
                u,
                cost,
                diverged,
            })
        }
        Err(Error::IntegrationDiverged { .. }) => {
            let x = VectorTrajectory::zeros(grid, system.stacked_state_dim());
            let u = VectorTrajectory::zeros(grid, system.agent_count() * m);
            Ok(BaselineOutcome {
                x,
                u,
                cost: CostEstimate {
                    grid_part: f64::INFINITY,
                    tail: 0.0,
                    total: f64::INFINITY,
                    tail_unbounded: true,
                },
                diverged: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// UGV parameters: friction `C`, mass `D`, planar initial position and
/// velocity.
#[derive(Debug, Clone, Copy)]
pub struct UgvParams {
    pub c: f64,
    pub d: f64,
    pub q0: [f64; 2],
    pub v0: [f64; 2],
}

/// Double-integrator-with-friction fleet on a ring: per vehicle
/// `A = [[0, I], [0, -(C/D) I]]`, `B = [0; (1/D) I]`, `R = I`, and identity
/// disagreement weights on the ring edges.
pub fn build_ugv_scenario(params: &[UgvParams], gamma: f64) -> Result<MultiAgentSystem> {
    if params.is_empty() {
        return Err(Error::Parameter("need at least one vehicle".into()));
    }
    for (i, p) in params.iter().enumerate() {
        if !(p.c > 0.0) || !(p.d > 0.0) {
            return Err(Error::Parameter(format!(
                "vehicle {i}: friction and mass must be positive (C = {}, D = {})",
                p.c, p.d
            )));
        }
    }
    let count = params.len();
    let agents: Vec<ConsensusAgent> = params
        .iter()
        .map(|p| {
            let mut a = DMatrix::zeros(4, 4);
            a[(0, 2)] = 1.0;
            a[(1, 3)] = 1.0;
            a[(2, 2)] = -p.c / p.d;
            a[(3, 3)] = -p.c / p.d;
            let mut b = DMatrix::zeros(4, 2);
            b[(2, 0)] = 1.0 / p.d;
            b[(3, 1)] = 1.0 / p.d;
            ConsensusAgent {
                a,
                b,
                r: DMatrix::identity(2, 2),
                x0: DVector::from_row_slice(&[p.q0[0], p.q0[1], p.v0[0], p.v0[1]]),
            }
        })
        .collect();
    let topology = Topology::ring(count, gamma)?;
    let mut weights = vec![vec![DMatrix::<f64>::zeros(4, 4); count]; count];
    for &(i, j) in topology.edges() {
        weights[i][j] = DMatrix::identity(4, 4);
        weights[j][i] = DMatrix::identity(4, 4);
    }
    MultiAgentSystem::new(agents, topology, weights)
}

/// Full solve used by the command-line front end: both ARE routes, both
/// controllers, the closed-loop trajectories and the cost book-keeping.
#[derive(Debug)]
pub struct ConsensusSolution {
    pub p: DMatrix<f64>,
    pub p_agents: Vec<DMatrix<f64>>,
    pub are: AreSolution,
    pub distributed: DistributedAre,
    pub x_centralized: VectorTrajectory,
    pub u_centralized: VectorTrajectory,
    pub x_distributed: VectorTrajectory,
    pub u_distributed: VectorTrajectory,
    pub cost_centralized: CostEstimate,
    pub cost_distributed: CostEstimate,
    pub value_identity: f64,
    pub consensus_residual: Vec<f64>,
    pub controller_gap: f64,
}

pub fn solve_consensus(
    system: &MultiAgentSystem,
    schedule: &IterationSchedule,
    grid: TimeGrid,
) -> Result<ConsensusSolution> {
    let qtilde = build_qtilde(system)?;
    let are = solve_are_centralized(system)?;
    let a = system.stacked_a();
    let b = system.stacked_b();
    let r = system.stacked_r();
    let r_inv = r.clone().try_inverse().expect("positive definite");
    let s = symmetrize(&(&b * &r_inv * b.transpose()));

    // Centralized closed loop.
    let a_cl = &a - &s * &are.p;
    let x_centralized = integrate_vector_ode(
        |_, x: &DVector<f64>| &a_cl * x,
        system.stacked_x0(),
        grid,
        Direction::Forward,
    )?;
    let gain = &r_inv * b.transpose() * &are.p;
    let u_centralized = VectorTrajectory::from_fn(grid, |t| -(&gain * x_centralized.eval(t)));
    let cost_centralized = evaluate_consensus_cost(&x_centralized, &u_centralized, &qtilde, &r);

    // Distributed route.
    let distributed = distributed_are_iteration(system, schedule)?;
    let xs = distributed_state_iteration(&distributed.z_bar, system, schedule, grid)?;
    let m = system.agent_input_dim();
    let mut u_samples = vec![DVector::zeros(system.agent_count() * m); grid.num_nodes()];
    for i in 0..system.agent_count() {
        let u_i = distributed_consensus_controller(&distributed.p[i], &xs[i], system, i)?;
        for (node, sample) in u_samples.iter_mut().enumerate() {
            sample.rows_mut(i * m, m).copy_from(u_i.node(node));
        }
    }
    let u_distributed = VectorTrajectory::from_samples(grid, u_samples)?;
    // The fleet runs open loop on the stacked input assembled from the
    // agents' own controllers.
    let x_distributed = integrate_vector_ode(
        |t, x: &DVector<f64>| &a * x + &b * u_distributed.eval(t),
        system.stacked_x0(),
        grid,
        Direction::Forward,
    )?;
    let cost_distributed = evaluate_consensus_cost(&x_distributed, &u_distributed, &qtilde, &r);

    let x0 = system.stacked_x0();
    let value = (&are.p * &x0).dot(&x0);
    let value_identity = if value.abs() > 0.0 {
        (cost_distributed.total - value).abs() / value.abs()
    } else {
        cost_distributed.total.abs()
    };
    let (_, consensus_residual) =
        check_consensus(&x_distributed, system.agent_state_dim(), f64::INFINITY);
    let controller_gap = u_distributed.max_node_delta(&u_centralized);

    Ok(ConsensusSolution {
        p: are.p.clone(),
        p_agents: distributed.p.clone(),
        are,
        distributed,
        x_centralized,
        u_centralized,
        x_distributed,
        u_distributed,
        cost_centralized,
        cost_distributed,
        value_identity,
        consensus_residual,
        controller_gap,
    })
}

/// Simulation of the centralized optimal closed loop only; used by the
/// homogeneous-case batch comparisons.
pub fn simulate_optimal(
    system: &MultiAgentSystem,
    grid: TimeGrid,
) -> Result<(
    AreSolution,
    VectorTrajectory,
    VectorTrajectory,
    CostEstimate,
)> {
    let qtilde = build_qtilde(system)?;
    let are = solve_are_centralized(system)?;
    let a = system.stacked_a();
    let b = system.stacked_b();
    let r = system.stacked_r();
    let r_inv = r.clone().try_inverse().expect("positive definite");
    let s = symmetrize(&(&b * &r_inv * b.transpose()));
    let a_cl = &a - &s * &are.p;
    let x = integrate_vector_ode(
        |_, x: &DVector<f64>| &a_cl * x,
        system.stacked_x0(),
        grid,
        Direction::Forward,
    )?;
    let gain = &r_inv * b.transpose() * &are.p;
    let u = VectorTrajectory::from_fn(grid, |t| -(&gain * x.eval(t)));
    let cost = evaluate_consensus_cost(&x, &u, &qtilde, &r);
    Ok((are, x, u, cost))
}
