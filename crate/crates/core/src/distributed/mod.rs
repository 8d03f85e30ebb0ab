//! Partial-information solver: every agent reconstructs the full-information
//! solution from its local data share through consensus-tracking rounds over
//! the communication graph.
//!
//! The pipeline follows the same stages as the centralized path. Nested
//! outer/inner loops converge per-agent `Z_i`, `V_i` and the Riccati
//! trajectory `P_i`; single tracking loops converge the control-weight factor
//! `W_i`, the terminal multiplier `lambda_i` and the optimal state `x_i`; the
//! adjoint offset `beta_i` and the controller `u_i` follow directly.

pub mod tracking;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::centralized::{control_gramian, integrate_lyapunov_ode};
use crate::model::{validate_gamma, AgentView, IterationSchedule, Topology};
use crate::numerics::{
    integrate_matrix_ode, integrate_vector_ode, pseudo_inverse, symmetric_inv_sqrt, Direction,
    MatrixTrajectory, TimeGrid, VectorTrajectory, DEFAULT_RANK_TOL,
};
use crate::{Error, Result};
use tracking::{
    fitted_geometric_factor, pairwise_deviation, run_tracking, RoundRecord, TrackingOutcome,
};

/// Everything one agent ends up holding after the full pipeline.
#[derive(Debug, Clone)]
pub struct AgentIterate {
    pub index: usize,
    pub z: MatrixTrajectory,
    pub v: MatrixTrajectory,
    pub p: MatrixTrajectory,
    pub phi: MatrixTrajectory,
    pub psi: MatrixTrajectory,
    pub w: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub beta: VectorTrajectory,
    pub x: VectorTrajectory,
    pub u: VectorTrajectory,
}

/// Opt-in per-round history plus fitted geometric decay factors.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceDiagnostics {
    pub records: Vec<RoundRecord>,
    pub geometric_factors: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct DistributedOptions {
    pub collect_diagnostics: bool,
}

/// Output of the whole distributed pipeline.
#[derive(Debug)]
pub struct DistributedSolution {
    pub agents: Vec<AgentIterate>,
    pub outer_iterations: usize,
    pub outer_delta: f64,
    /// Final max pairwise cross-agent deviation per quantity.
    pub pairwise: BTreeMap<String, f64>,
    pub diagnostics: Option<ConvergenceDiagnostics>,
    /// Set when the consensus multiplier leaves a large terminal residual on
    /// the network-mean trajectory.
    pub reachability_warning: bool,
}

/// Per-agent output of the nested Riccati loops.
#[derive(Debug, Clone)]
pub struct AgentRiccati {
    pub z: MatrixTrajectory,
    pub v: MatrixTrajectory,
    pub p: MatrixTrajectory,
    pub phi: MatrixTrajectory,
    pub psi: MatrixTrajectory,
}

pub struct ZvpOutcome {
    pub agents: Vec<AgentRiccati>,
    pub outer_iterations: usize,
    pub outer_delta: f64,
    pub pairwise_z: f64,
    pub pairwise_v: f64,
    pub pairwise_p: f64,
}

fn check_views(views: &[AgentView], topology: &Topology) -> Result<(usize, usize)> {
    if views.is_empty() {
        return Err(Error::Dimension("no agent views supplied".into()));
    }
    if views.len() != topology.num_agents() {
        return Err(Error::Dimension(format!(
            "{} views for a {}-agent topology",
            views.len(),
            topology.num_agents()
        )));
    }
    let n = views[0].a.nrows();
    let m = views[0].b.ncols();
    for v in views {
        if v.a.shape() != (n, n)
            || v.b.shape() != (n, m)
            || v.q.shape() != (n, n)
            || v.m.nrows() != n
            || v.x0.len() != n
            || v.x_target.len() != n
        {
            return Err(Error::Dimension(format!(
                "agent {} view has mismatched dimensions",
                v.index
            )));
        }
    }
    Ok((n, m))
}

fn require_valid_gamma(topology: &Topology) -> Result<()> {
    let check = validate_gamma(topology)?;
    if !check.valid {
        return Err(Error::GammaInvalid {
            rho: check.spectral_radius,
        });
    }
    Ok(())
}

/// Nested loops for the Riccati trajectory: the inner rounds track
/// `Z_i <- A_i - M_i M_i' P_i^(n-1)` and
/// `V_i <- Q_i + P_i^(n-1) M_i M_i' P_i^(n-1)` jointly until both step deltas
/// fall under the inner tolerance; each agent then solves its linear backward
/// ODE for `P_i^n` with the transition pair `Phi_i`, `Psi_i`, and the outer
/// loop stops when `max_i |P_i^n - P_i^(n-1)|` does.
pub fn run_zv_p_loops(
    views: &[AgentView],
    topology: &Topology,
    schedule: &IterationSchedule,
    grid: TimeGrid,
    mut diagnostics: Option<&mut Vec<RoundRecord>>,
) -> Result<ZvpOutcome> {
    let (n, _) = check_views(views, topology)?;
    require_valid_gamma(topology)?;

    let weights: Vec<DMatrix<f64>> = views.iter().map(|v| v.control_weight()).collect();
    let mut p_prev: Vec<MatrixTrajectory> = views
        .iter()
        .map(|_| MatrixTrajectory::zeros(grid, n, n))
        .collect();
    let mut outer_delta = f64::INFINITY;
    let mut outer_iterations = schedule.max_n;
    let mut last: Option<(Vec<MatrixTrajectory>, Vec<MatrixTrajectory>, f64, f64)> = None;

    for outer in 1..=schedule.max_n {
        let targets: Vec<(MatrixTrajectory, MatrixTrajectory)> = views
            .iter()
            .zip(&weights)
            .zip(&p_prev)
            .map(|((view, s_i), p)| {
                let z = MatrixTrajectory::from_fn(grid, |t| &view.a - s_i * p.eval(t));
                let v = MatrixTrajectory::from_fn(grid, |t| {
                    let pt = p.eval(t);
                    &view.q + &pt * s_i * &pt
                });
                (z, v)
            })
            .collect();
        let label = format!("ZV_n{outer}");
        let TrackingOutcome { values, .. } = run_tracking(
            &targets,
            topology,
            &schedule.alpha,
            schedule.tol_inner,
            schedule.max_k,
            schedule,
            &label,
            diagnostics.as_deref_mut(),
        );
        let (z_list, v_list): (Vec<_>, Vec<_>) = values.into_iter().unzip();
        let mut p_next = Vec::with_capacity(views.len());
        for (z_i, v_i) in z_list.iter().zip(&v_list) {
            p_next.push(integrate_lyapunov_ode(z_i, v_i, grid)?);
        }
        outer_delta = p_next
            .iter()
            .zip(&p_prev)
            .map(|(a, b)| a.max_node_delta(b))
            .fold(0.0, f64::max);
        let pw_z = pairwise_deviation(&z_list);
        let pw_v = pairwise_deviation(&v_list);
        p_prev = p_next;
        last = Some((z_list, v_list, pw_z, pw_v));
        if outer_delta < schedule.tol_inner {
            outer_iterations = outer;
            break;
        }
    }

    last.ok_or_else(|| Error::Convergence("no outer iterations ran".into()))?;
    // One more tracking pass with targets built from the converged P so the
    // returned Z_i and V_i correspond to the final iterate, matching what the
    // full-information path reports.
    let (z_list, v_list, pairwise_z, pairwise_v) = {
        let targets: Vec<(MatrixTrajectory, MatrixTrajectory)> = views
            .iter()
            .zip(&weights)
            .zip(&p_prev)
            .map(|((view, s_i), p)| {
                let z = MatrixTrajectory::from_fn(grid, |t| &view.a - s_i * p.eval(t));
                let v = MatrixTrajectory::from_fn(grid, |t| {
                    let pt = p.eval(t);
                    &view.q + &pt * s_i * &pt
                });
                (z, v)
            })
            .collect();
        let TrackingOutcome { values, .. } = run_tracking(
            &targets,
            topology,
            &schedule.alpha,
            schedule.tol_inner,
            schedule.max_k,
            schedule,
            "ZV_final",
            diagnostics.as_deref_mut(),
        );
        let (z_list, v_list): (Vec<_>, Vec<_>) = values.into_iter().unzip();
        let pw_z = pairwise_deviation(&z_list);
        let pw_v = pairwise_deviation(&v_list);
        (z_list, v_list, pw_z, pw_v)
    };
    let mut agents = Vec::with_capacity(views.len());
    for (i, (z_i, v_i)) in z_list.into_iter().zip(v_list).enumerate() {
        let phi = integrate_matrix_ode(
            |t, m| z_i.eval(t) * m,
            DMatrix::identity(n, n),
            grid,
            Direction::Forward,
        )?;
        let psi = integrate_matrix_ode(
            |t, m| -z_i.eval(t).transpose() * m,
            DMatrix::identity(n, n),
            grid,
            Direction::Forward,
        )?;
        agents.push(AgentRiccati {
            z: z_i,
            v: v_i,
            p: p_prev[i].clone(),
            phi,
            psi,
        });
    }
    let pairwise_p = {
        let mut worst: f64 = 0.0;
        for i in 0..agents.len() {
            for j in (i + 1)..agents.len() {
                worst = worst.max(agents[i].p.max_node_delta(&agents[j].p));
            }
        }
        worst
    };
    Ok(ZvpOutcome {
        agents,
        outer_iterations,
        outer_delta,
        pairwise_z,
        pairwise_v,
        pairwise_p,
    })
}

/// Tracking loop for the constant factor `W_i <- R^{-1/2} B_i'`; `R` is
/// globally known.
pub fn run_w_loop(
    views: &[AgentView],
    r: &DMatrix<f64>,
    topology: &Topology,
    schedule: &IterationSchedule,
    diagnostics: Option<&mut Vec<RoundRecord>>,
) -> Result<Vec<DMatrix<f64>>> {
    check_views(views, topology)?;
    require_valid_gamma(topology)?;
    let r_inv_sqrt = symmetric_inv_sqrt(r)?;
    let targets: Vec<DMatrix<f64>> = views
        .iter()
        .map(|v| &r_inv_sqrt * v.b.transpose())
        .collect();
    let out = run_tracking(
        &targets,
        topology,
        &schedule.alpha,
        schedule.tol_inner,
        schedule.max_varpi,
        schedule,
        "W",
        diagnostics,
    );
    Ok(out.values)
}

/// Tracking loop for the terminal multiplier. Each agent forms its local
/// Gramian `rho_i = int_0^T Phi_i(T,s) W_i' W_i Phi_i(T,s)' ds` and target
/// `rho_i^+ [Phi_i(T,0) x_i0 - x_iT]`, then tracks to the common value.
/// Locally rank-deficient Gramians go through the pseudo-inverse.
pub fn run_lambda_loop(
    agents: &[AgentRiccati],
    w: &[DMatrix<f64>],
    views: &[AgentView],
    topology: &Topology,
    schedule: &IterationSchedule,
    grid: TimeGrid,
    diagnostics: Option<&mut Vec<RoundRecord>>,
) -> Result<Vec<DVector<f64>>> {
    require_valid_gamma(topology)?;
    let mut targets = Vec::with_capacity(views.len());
    for ((agent, w_i), view) in agents.iter().zip(w).zip(views) {
        let s_i = w_i.transpose() * w_i;
        let gramian = control_gramian(&agent.phi, &s_i, grid)?;
        let phi_t0 = agent.phi.node(grid.num_steps());
        let rhs = phi_t0 * &view.x0 - &view.x_target;
        targets.push(pseudo_inverse(&gramian, DEFAULT_RANK_TOL) * rhs);
    }
    let out = run_tracking(
        &targets,
        topology,
        &schedule.alpha,
        schedule.tol_inner,
        schedule.max_q,
        schedule,
        "lambda",
        diagnostics,
    );
    Ok(out.values)
}

/// Per-agent backward sweep `beta_i' = -Z_i(t)' beta_i`, `beta_i(T) = lambda_i`.
pub fn integrate_beta_agent(
    z: &MatrixTrajectory,
    lambda: &DVector<f64>,
) -> Result<VectorTrajectory> {
    crate::centralized::integrate_beta(z, lambda)
}

/// Tracking loop for the optimal state. Each agent's target is the
/// variation-of-constants trajectory of its own converged data, evaluated by
/// a forward sweep of `x' = Z_i(t) x - W_i' W_i beta_i(t)` from `x_i0`.
pub fn run_x_loop(
    agents: &[AgentRiccati],
    w: &[DMatrix<f64>],
    betas: &[VectorTrajectory],
    views: &[AgentView],
    topology: &Topology,
    schedule: &IterationSchedule,
    grid: TimeGrid,
    diagnostics: Option<&mut Vec<RoundRecord>>,
) -> Result<Vec<VectorTrajectory>> {
    require_valid_gamma(topology)?;
    let mut targets = Vec::with_capacity(views.len());
    for (((agent, w_i), beta_i), view) in agents.iter().zip(w).zip(betas).zip(views) {
        let s_i = w_i.transpose() * w_i;
        let target = integrate_vector_ode(
            |t, x: &DVector<f64>| agent.z.eval(t) * x - &s_i * beta_i.eval(t),
            view.x0.clone(),
            grid,
            Direction::Forward,
        )?;
        targets.push(target);
    }
    let out = run_tracking(
        &targets,
        topology,
        &schedule.alpha,
        schedule.tol_inner,
        schedule.max_w,
        schedule,
        "x",
        diagnostics,
    );
    Ok(out.values)
}

/// `u_i(t) = -R^{-1/2} W_i [P_i(t) x_i(t) + beta_i(t)]`.
pub fn agent_controller(
    w: &DMatrix<f64>,
    p: &MatrixTrajectory,
    x: &VectorTrajectory,
    beta: &VectorTrajectory,
    r: &DMatrix<f64>,
) -> Result<VectorTrajectory> {
    let gain = symmetric_inv_sqrt(r)? * w;
    Ok(VectorTrajectory::from_fn(*p.grid(), |t| {
        -(&gain * (p.eval(t) * x.eval(t) + beta.eval(t)))
    }))
}

/// Runs the whole partial-information pipeline over the graph.
pub fn solve_distributed(
    views: &[AgentView],
    r: &DMatrix<f64>,
    topology: &Topology,
    schedule: &IterationSchedule,
    grid: TimeGrid,
    options: &DistributedOptions,
) -> Result<DistributedSolution> {
    check_views(views, topology)?;
    require_valid_gamma(topology)?;
    schedule.validate()?;

    let mut records: Vec<RoundRecord> = Vec::new();
    let mut sink = options.collect_diagnostics.then_some(&mut records);

    let zvp = run_zv_p_loops(views, topology, schedule, grid, sink.as_deref_mut())?;
    let w = run_w_loop(views, r, topology, schedule, sink.as_deref_mut())?;
    let lambdas = run_lambda_loop(
        &zvp.agents,
        &w,
        views,
        topology,
        schedule,
        grid,
        sink.as_deref_mut(),
    )?;
    let mut betas = Vec::with_capacity(views.len());
    for (agent, lambda) in zvp.agents.iter().zip(&lambdas) {
        betas.push(integrate_beta_agent(&agent.z, lambda)?);
    }
    let xs = run_x_loop(
        &zvp.agents,
        &w,
        &betas,
        views,
        topology,
        schedule,
        grid,
        sink.as_deref_mut(),
    )?;
    let mut us = Vec::with_capacity(views.len());
    for i in 0..views.len() {
        us.push(agent_controller(
            &w[i],
            &zvp.agents[i].p,
            &xs[i],
            &betas[i],
            r,
        )?);
    }

    let mut pairwise = BTreeMap::new();
    pairwise.insert("Z".into(), zvp.pairwise_z);
    pairwise.insert("V".into(), zvp.pairwise_v);
    pairwise.insert("P".into(), zvp.pairwise_p);
    pairwise.insert("W".into(), pairwise_deviation(&w));
    pairwise.insert("lambda".into(), pairwise_deviation(&lambdas));
    pairwise.insert("x".into(), pairwise_deviation(&xs));
    pairwise.insert("u".into(), pairwise_deviation(&us));

    // Terminal residual of the network mean against the mean target.
    let count = views.len() as f64;
    let mut mean_xt = xs[0].node(grid.num_steps()).clone() / count;
    let mut mean_target = views[0].x_target.clone() / count;
    for i in 1..views.len() {
        mean_xt += xs[i].node(grid.num_steps()) / count;
        mean_target += &views[i].x_target / count;
    }
    let reachability_warning = (mean_xt - mean_target).norm() > 0.1;

    let diagnostics = options.collect_diagnostics.then(|| {
        let mut quantities: Vec<String> = records.iter().map(|r| r.quantity.clone()).collect();
        quantities.sort();
        quantities.dedup();
        let geometric_factors = quantities
            .into_iter()
            .filter_map(|q| fitted_geometric_factor(&records, &q).map(|f| (q, f)))
            .collect();
        ConvergenceDiagnostics {
            records,
            geometric_factors,
        }
    });

    let agents = (0..views.len())
        .map(|i| AgentIterate {
            index: views[i].index,
            z: zvp.agents[i].z.clone(),
            v: zvp.agents[i].v.clone(),
            p: zvp.agents[i].p.clone(),
            phi: zvp.agents[i].phi.clone(),
            psi: zvp.agents[i].psi.clone(),
            w: w[i].clone(),
            lambda: lambdas[i].clone(),
            beta: betas[i].clone(),
            x: xs[i].clone(),
            u: us[i].clone(),
        })
        .collect();

    Ok(DistributedSolution {
        agents,
        outer_iterations: zvp.outer_iterations,
        outer_delta: zvp.outer_delta,
        pairwise,
        diagnostics,
        reachability_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centralized;
    use crate::model::LQTerminalProblem;
    use crate::numerics::symmetric_sqrt;

    fn identical_views(problem: &LQTerminalProblem, count: usize) -> Vec<AgentView> {
        let m = symmetric_sqrt(&problem.control_weight()).unwrap();
        (0..count)
            .map(|i| AgentView {
                index: i,
                a: problem.a.clone(),
                b: problem.b.clone(),
                q: problem.q.clone(),
                m: m.clone(),
                x0: problem.x0.clone(),
                x_target: problem.x_target.clone(),
            })
            .collect()
    }

    fn example1_problem() -> LQTerminalProblem {
        LQTerminalProblem::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            DVector::from_row_slice(&[4.0, 4.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    fn example1_views() -> Vec<AgentView> {
        let problem = example1_problem();
        let m_share = symmetric_sqrt(&problem.control_weight()).unwrap();
        let a_diag = [[1.5, 0.5], [0.5, 1.2], [1.3, 1.8], [0.7, 0.5]];
        let b_cols = [[1.5, 0.5], [0.5, 1.2], [0.3, 1.8], [1.7, 0.5]];
        let q_diag = [[1.2, 1.0], [1.0, 0.8], [1.0, 1.2], [0.8, 1.0]];
        let x0s = [[3.5, 4.0], [4.5, 3.5], [2.5, 4.5], [5.5, 4.0]];
        (0..4)
            .map(|i| AgentView {
                index: i,
                a: DMatrix::from_diagonal(&DVector::from_row_slice(&a_diag[i])),
                b: DMatrix::from_row_slice(2, 1, &b_cols[i]),
                q: DMatrix::from_diagonal(&DVector::from_row_slice(&q_diag[i])),
                m: m_share.clone(),
                x0: DVector::from_row_slice(&x0s[i]),
                x_target: DVector::zeros(2),
            })
            .collect()
    }

    #[test]
    fn gamma_rejection_blocks_the_run() {
        let views = example1_views();
        let topo = Topology::ring(4, 1.0).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        match solve_distributed(
            &views,
            &DMatrix::identity(1, 1),
            &topo,
            &schedule,
            grid,
            &DistributedOptions::default(),
        ) {
            Err(Error::GammaInvalid { rho }) => assert!((rho - 3.0).abs() < 1e-12),
            other => panic!("expected gamma rejection, got {other:?}"),
        }
    }

    #[test]
    fn single_agent_reduces_to_centralized() {
        let problem = example1_problem();
        let views = identical_views(&problem, 1);
        let topo = Topology::new(1, &[], 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let dist = solve_distributed(
            &views,
            &problem.r,
            &topo,
            &schedule,
            grid,
            &DistributedOptions::default(),
        )
        .unwrap();
        let cent = centralized::solve(&problem, grid, &schedule).unwrap();
        let agent = &dist.agents[0];
        assert!(agent.p.max_node_delta(&cent.p) <= 1e-10);
        assert!(agent.x.max_node_delta(&cent.x_star) <= 1e-10);
        assert!(agent.u.max_node_delta(&cent.u_star) <= 1e-10);
        assert!((agent.lambda.clone() - &cent.lambda).norm() <= 1e-10);
    }

    #[test]
    fn identical_views_stay_bitwise_symmetric() {
        let problem = example1_problem();
        let views = identical_views(&problem, 4);
        let topo = Topology::ring(4, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let dist = solve_distributed(
            &views,
            &problem.r,
            &topo,
            &schedule,
            grid,
            &DistributedOptions::default(),
        )
        .unwrap();
        for agent in &dist.agents[1..] {
            assert_eq!(agent.z.samples(), dist.agents[0].z.samples());
            assert_eq!(agent.p.samples(), dist.agents[0].p.samples());
            assert_eq!(agent.lambda, dist.agents[0].lambda);
            assert_eq!(agent.x.samples(), dist.agents[0].x.samples());
            assert_eq!(agent.u.samples(), dist.agents[0].u.samples());
        }
    }

    #[test]
    fn identical_views_match_the_centralized_oracle() {
        let problem = example1_problem();
        let views = identical_views(&problem, 4);
        let topo = Topology::ring(4, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 400).unwrap();
        let dist = solve_distributed(
            &views,
            &problem.r,
            &topo,
            &schedule,
            grid,
            &DistributedOptions::default(),
        )
        .unwrap();
        let cent = centralized::solve(&problem, grid, &schedule).unwrap();
        for agent in &dist.agents {
            assert!(agent.z.max_node_delta(&cent.z) <= 1e-6);
            assert!((agent.lambda.clone() - &cent.lambda).norm() <= 1e-6);
            assert!(agent.beta.max_node_delta(&cent.beta) <= 1e-5);
            assert!(agent.x.max_node_delta(&cent.x_star) <= 1e-4);
            assert!(agent.u.max_node_delta(&cent.u_star) <= 1e-4);
        }
    }

    #[test]
    fn w_loop_mean_of_local_b_columns() {
        // Example-1 B shares average to [1, 1] with R = 1.
        let views = example1_views();
        let topo = Topology::ring(4, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let r = DMatrix::from_element(1, 1, 1.0);
        let w = run_w_loop(&views, &r, &topo, &schedule, None).unwrap();
        let expected = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        for w_i in &w {
            assert!((w_i - &expected).norm() < 1e-9, "{w_i}");
        }
    }

    #[test]
    fn w_loop_two_agents_hand_mean() {
        let base = AgentView {
            index: 0,
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, 2.0),
            q: DMatrix::zeros(1, 1),
            m: DMatrix::identity(1, 1),
            x0: DVector::zeros(1),
            x_target: DVector::zeros(1),
        };
        let mut other = base.clone();
        other.index = 1;
        other.b = DMatrix::from_element(1, 1, 0.0);
        let topo = Topology::new(2, &[(0, 1)], 2.0).unwrap();
        let schedule = IterationSchedule::default();
        let w = run_w_loop(
            &[base, other],
            &DMatrix::identity(1, 1),
            &topo,
            &schedule,
            None,
        )
        .unwrap();
        for w_i in &w {
            assert!((w_i[(0, 0)] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_zero_when_targets_ride_the_drift() {
        // Identical dynamics views, each with x_iT = Phi(T,0) x_i0.
        let problem = example1_problem();
        let mut views = identical_views(&problem, 3);
        let topo = Topology::ring(3, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 300).unwrap();
        let zvp = run_zv_p_loops(&views, &topo, &schedule, grid, None).unwrap();
        let phi_t0 = zvp.agents[0].phi.node(grid.num_steps()).clone();
        for (i, view) in views.iter_mut().enumerate() {
            view.x0 = DVector::from_fn(2, |r, _| (i + r) as f64 * 0.5 + 0.5);
            view.x_target = &phi_t0 * &view.x0;
        }
        let w = run_w_loop(&views, &problem.r, &topo, &schedule, None).unwrap();
        let lambdas =
            run_lambda_loop(&zvp.agents, &w, &views, &topo, &schedule, grid, None).unwrap();
        for l in &lambdas {
            assert!(l.norm() < 1e-6, "lambda = {l}");
        }
    }

    #[test]
    fn x_loop_constant_when_no_dynamics_and_no_forcing() {
        // A_i = 0, Q_i = 0 so Z = 0 and Phi = I; beta = 0 leaves x_i at the
        // mean of the initial states.
        let views: Vec<AgentView> = (0..3)
            .map(|i| AgentView {
                index: i,
                a: DMatrix::zeros(2, 2),
                b: DMatrix::identity(2, 2),
                q: DMatrix::zeros(2, 2),
                m: DMatrix::identity(2, 2),
                x0: DVector::from_row_slice(&[i as f64, 1.0]),
                x_target: DVector::zeros(2),
            })
            .collect();
        let topo = Topology::ring(3, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let zvp = run_zv_p_loops(&views, &topo, &schedule, grid, None).unwrap();
        let w = vec![DMatrix::identity(2, 2); 3];
        let betas = vec![VectorTrajectory::zeros(grid, 2); 3];
        let xs = run_x_loop(
            &zvp.agents,
            &w,
            &betas,
            &views,
            &topo,
            &schedule,
            grid,
            None,
        )
        .unwrap();
        let mean_x0 = DVector::from_row_slice(&[1.0, 1.0]);
        for x in &xs {
            for s in x.samples() {
                assert!((s - &mean_x0).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn minimum_energy_views_recover_the_straight_line() {
        // A_i = 0, B_i = I, Q_i = 0, M_i = I with varying endpoints.
        let x0s = [[1.0, 0.0], [3.0, 2.0], [2.0, 4.0]];
        let xts = [[0.0, 1.0], [-2.0, 1.0], [2.0, 1.0]];
        let views: Vec<AgentView> = (0..3)
            .map(|i| AgentView {
                index: i,
                a: DMatrix::zeros(2, 2),
                b: DMatrix::identity(2, 2),
                q: DMatrix::zeros(2, 2),
                m: DMatrix::identity(2, 2),
                x0: DVector::from_row_slice(&x0s[i]),
                x_target: DVector::from_row_slice(&xts[i]),
            })
            .collect();
        let topo = Topology::ring(3, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let dist = solve_distributed(
            &views,
            &DMatrix::identity(2, 2),
            &topo,
            &schedule,
            grid,
            &DistributedOptions::default(),
        )
        .unwrap();
        let x0 = DVector::from_row_slice(&[2.0, 2.0]);
        let xt = DVector::from_row_slice(&[0.0, 1.0]);
        let expected_u = (&xt - &x0) / 2.0;
        for agent in &dist.agents {
            for (i, x) in agent.x.samples().iter().enumerate() {
                let t = grid.node(i);
                let expected = &x0 + (&xt - &x0) * (t / 2.0);
                assert!((x - expected).norm() < 1e-6, "node {i}");
            }
            for u in agent.u.samples() {
                assert!((u - &expected_u).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn controller_zero_without_gain_or_offset() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let p = MatrixTrajectory::zeros(grid, 2, 2);
        let x = VectorTrajectory::constant(grid, DVector::from_row_slice(&[3.0, -1.0]));
        let beta = VectorTrajectory::zeros(grid, 2);
        let w = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let u = agent_controller(&w, &p, &x, &beta, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(u.max_node_norm(), 0.0);
    }

    #[test]
    fn recorded_deviation_series_ends_below_tolerance() {
        let views = example1_views();
        let topo = Topology::ring(4, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let dist = solve_distributed(
            &views,
            &DMatrix::from_element(1, 1, 1.0),
            &topo,
            &schedule,
            grid,
            &DistributedOptions {
                collect_diagnostics: true,
            },
        )
        .unwrap();
        let diag = dist.diagnostics.unwrap();
        let mut quantities: Vec<&str> = diag.records.iter().map(|r| r.quantity.as_str()).collect();
        quantities.sort_unstable();
        quantities.dedup();
        for quantity in quantities {
            let last = diag
                .records
                .iter()
                .filter(|r| r.quantity == quantity)
                .last()
                .unwrap();
            assert!(
                last.delta_consensus < schedule.tol_inner,
                "{quantity}: final consensus deviation {}",
                last.delta_consensus
            );
            assert!(
                last.delta_mean < schedule.tol_inner,
                "{quantity}: final mean deviation {}",
                last.delta_mean
            );
        }
    }

    #[test]
    fn diagnostics_zero_consensus_error_for_identical_views() {
        let problem = example1_problem();
        let views = identical_views(&problem, 4);
        let topo = Topology::ring(4, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 60).unwrap();
        let dist = solve_distributed(
            &views,
            &problem.r,
            &topo,
            &schedule,
            grid,
            &DistributedOptions {
                collect_diagnostics: true,
            },
        )
        .unwrap();
        let diag = dist.diagnostics.unwrap();
        assert!(!diag.records.is_empty());
        for rec in &diag.records {
            assert_eq!(
                rec.delta_consensus, 0.0,
                "round {} {}",
                rec.round, rec.quantity
            );
        }
    }

    #[test]
    fn determinism_two_runs_bitwise_equal() {
        let views = example1_views();
        let topo = Topology::ring(4, 2.5).unwrap();
        let schedule = IterationSchedule::default();
        let grid = TimeGrid::new(1.0, 80).unwrap();
        let r = DMatrix::from_element(1, 1, 1.0);
        let a = solve_distributed(
            &views,
            &r,
            &topo,
            &schedule,
            grid,
            &DistributedOptions::default(),
        )
        .unwrap();
        let b = solve_distributed(
            &views,
            &r,
            &topo,
            &schedule,
            grid,
            &DistributedOptions::default(),
        )
        .unwrap();
        for (x, y) in a.agents.iter().zip(&b.agents) {
            assert_eq!(x.p.samples(), y.p.samples());
            assert_eq!(x.x.samples(), y.x.samples());
            assert_eq!(x.u.samples(), y.u.samples());
        }
    }
}
