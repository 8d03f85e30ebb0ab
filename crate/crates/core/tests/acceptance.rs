//! Acceptance suite: every release gate runs here, one criterion per test,
//! each printing a single PASS/FAIL line with its measured numbers.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use lqterm::centralized;
use lqterm::consensus::{
    self, build_qtilde, check_consensus, classical_protocol_baseline, simulate_optimal,
    solve_consensus, UgvParams,
};
use lqterm::distributed::{solve_distributed, DistributedOptions};
use lqterm::model::{validate_gamma, IterationSchedule, LQTerminalProblem, Topology};
use lqterm::numerics::{
    min_symmetric_eigenvalue, psd_order_holds, spectral_norm, symmetric_sqrt, TimeGrid,
};
use lqterm::scenario::{LqScenarioFile, UgvScenarioFile};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    println!(
        "criterion {criterion}: {} -- {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

#[test]
fn criterion_1_scalar_riccati_oracle() {
    let start = Instant::now();
    let problem = LQTerminalProblem::new(
        DMatrix::from_element(1, 1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        1.0,
        DVector::from_element(1, 1.0),
        DVector::from_element(1, 0.0),
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 2000).unwrap();
    let schedule = IterationSchedule {
        tol_outer: 1e-6,
        max_n: 10,
        ..IterationSchedule::default()
    };
    let out = centralized::riccati_iteration(&problem, grid, &schedule).unwrap();
    let max_err = out
        .p
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (s[(0, 0)] - (1.0 - grid.node(i)).tanh()).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = max_err <= 1e-4 && out.iterations_used <= 10 && elapsed.as_secs_f64() < 1.0;
    assert!(
        verdict(
            "1 (scalar riccati oracle)",
            pass,
            &format!(
                "max-node error {max_err:.3e} (<=1e-4), {} outer iterations (<=10), {:.3}s (<1s)",
                out.iterations_used,
                elapsed.as_secs_f64()
            )
        ),
        "criterion 1 failed"
    );
}

#[test]
fn criterion_2_monotone_riccati_iterates() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20260809);
    let mut checked_pairs = 0usize;
    let mut ok = true;

    let mut check_problem = |problem: &LQTerminalProblem, steps: usize| {
        let grid = TimeGrid::new(problem.horizon, steps).unwrap();
        let schedule = IterationSchedule {
            max_n: 30,
            ..IterationSchedule::default()
        };
        let out = centralized::riccati_iteration(problem, grid, &schedule).unwrap();
        for pair in out.p_history.windows(2) {
            for node in 0..grid.num_nodes() {
                checked_pairs += 1;
                if !psd_order_holds(pair[0].node(node), pair[1].node(node), 1e-8) {
                    ok = false;
                }
            }
        }
    };

    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=2);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let qroot = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = &qroot * qroot.transpose();
        let rroot = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let r = &rroot * rroot.transpose() + DMatrix::identity(m, m) * 0.5;
        let problem =
            LQTerminalProblem::new(a, b, q, r, 1.0, DVector::zeros(n), DVector::zeros(n)).unwrap();
        check_problem(&problem, 2000);
    }
    let example1 = LqScenarioFile::load(&scenario_path("example1.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    check_problem(&example1.problem, 2000);

    assert!(
        verdict(
            "2 (monotone iterates)",
            ok,
            &format!("{checked_pairs} consecutive-pair node checks at slack 1e-8")
        ),
        "criterion 2 failed"
    );
}

#[test]
fn criterion_3_example1_terminal_constraint() {
    let scenario = LqScenarioFile::load(&scenario_path("example1.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    assert_eq!(scenario.grid.num_steps(), 2000);
    let sol = centralized::solve(&scenario.problem, scenario.grid, &scenario.schedule).unwrap();
    let stationarity = centralized::check_stationarity(&sol, &scenario.problem);
    let pass = sol.terminal_error <= 1e-2 && stationarity <= 1e-3;
    assert!(
        verdict(
            "3 (terminal constraint)",
            pass,
            &format!(
                "terminal error {:.3e} (<=1e-2), stationarity residual {:.3e} (<=1e-3)",
                sol.terminal_error, stationarity
            )
        ),
        "criterion 3 failed"
    );
}

#[test]
fn criterion_4_distributed_centralized_equivalence() {
    let start = Instant::now();
    let scenario = LqScenarioFile::load(&scenario_path("example1.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    let views = scenario.views.clone().unwrap();
    let topology = scenario.topology.clone().unwrap();
    assert_eq!(scenario.schedule.max_k, 200);
    assert_eq!(scenario.schedule.max_n, 20);
    let dist = solve_distributed(
        &views,
        &scenario.problem.r,
        &topology,
        &scenario.schedule,
        scenario.grid,
        &DistributedOptions::default(),
    )
    .unwrap();
    let cent = centralized::solve(&scenario.problem, scenario.grid, &scenario.schedule).unwrap();

    let mut gap_p: f64 = 0.0;
    let mut gap_x: f64 = 0.0;
    let mut gap_u: f64 = 0.0;
    for agent in &dist.agents {
        gap_p = gap_p.max(agent.p.max_node_delta(&cent.p));
        gap_x = gap_x.max(agent.x.max_node_delta(&cent.x_star));
        gap_u = gap_u.max(agent.u.max_node_delta(&cent.u_star));
    }
    let cross = dist.pairwise.values().fold(0.0f64, |acc, v| acc.max(*v));
    let elapsed = start.elapsed();
    let pass = gap_p <= 5e-2
        && gap_x <= 5e-2
        && gap_u <= 5e-2
        && cross <= scenario.schedule.tol_inner
        && elapsed.as_secs_f64() < 120.0;
    assert!(
        verdict(
            "4 (distributed equivalence)",
            pass,
            &format!(
                "|P_i-P| {gap_p:.3e}, |x_i-x| {gap_x:.3e}, |u_i-u| {gap_u:.3e} (<=5e-2), \
                 cross-agent {cross:.3e} (<={:.0e}), {:.1}s (<120s)",
                scenario.schedule.tol_inner,
                elapsed.as_secs_f64()
            )
        ),
        "criterion 4 failed"
    );
}

#[test]
fn criterion_5_example2_are_norms() {
    let start = Instant::now();
    let scenario = UgvScenarioFile::load(&scenario_path("ugv_example2.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    let are = consensus::solve_are_centralized(&scenario.system).unwrap();
    let p_norm = spectral_norm(&are.p);
    let central_ok = (p_norm - 33.5591).abs() / 33.5591 <= 0.01;

    let dist = consensus::distributed_are_iteration(&scenario.system, &scenario.schedule).unwrap();
    let agent_norms: Vec<f64> = dist.p.iter().map(spectral_norm).collect();
    let min_norm = agent_norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_norm = agent_norms.iter().cloned().fold(0.0f64, f64::max);
    let band_ok = min_norm >= 33.3 && max_norm <= 33.7;
    let spread_ok = (max_norm - min_norm) / min_norm <= 0.005;
    let elapsed = start.elapsed();
    let runtime_ok = elapsed.as_secs_f64() < 300.0;

    let pass = central_ok && band_ok && spread_ok && runtime_ok;
    assert!(
        verdict(
            "5 (consensus ARE norms)",
            pass,
            &format!(
                "|P| {p_norm:.4} vs 33.5591 +-1% [{}], agent norms {min_norm:.4}..{max_norm:.4} \
                 in [33.3, 33.7] [{}], spread {:.4}% (<=0.5%) [{}], {:.1}s (<300s)",
                if central_ok { "ok" } else { "out" },
                if band_ok { "ok" } else { "out" },
                (max_norm - min_norm) / min_norm * 100.0,
                if spread_ok { "ok" } else { "out" },
                elapsed.as_secs_f64()
            )
        ),
        "criterion 5 failed"
    );
}

#[test]
fn criterion_6_table_comparison() {
    let file = UgvScenarioFile::load(&scenario_path("ugv_example2.json")).unwrap();
    let scenario = file.to_scenario().unwrap();
    let cases = [
        ("case1", 0.6, 5.0, 82.7573),
        ("case2", 0.8, 4.0, 76.2762),
        ("case3", 1.2, 6.0, 89.3999),
        ("case4", 1.0, 4.0, 76.4114),
        ("case5", 0.4, 5.0, 82.7004),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, c, d, expected) in cases {
        let params: Vec<UgvParams> = file
            .ugv
            .iter()
            .map(|u| UgvParams {
                c,
                d,
                q0: u.q0,
                v0: u.v0,
            })
            .collect();
        let mut system =
            consensus::build_ugv_scenario(&params, scenario.system.topology.gamma).unwrap();
        system.topology = scenario.system.topology.clone();
        system.weights = scenario.system.weights.clone();
        let (are, x, u, cost) = simulate_optimal(&system, scenario.sim_grid).unwrap();
        let x0 = system.stacked_x0();
        let value = (&are.p * &x0).dot(&x0);
        let identity_gap = (cost.total - value).abs() / value;
        let expected_gap = (cost.total - expected).abs() / expected;
        // Either the homogeneous reading reproduces the reported numbers, or
        // the run must satisfy the value identity and flag the discrepancy.
        let case_ok = expected_gap <= 0.02 || identity_gap <= 5e-3;
        let baseline =
            classical_protocol_baseline(&system, &scenario.baseline_gain, scenario.sim_grid)
                .unwrap();
        let dominance = cost.total < baseline.cost.total;
        let _ = (x, u);
        if !(case_ok && dominance) {
            pass = false;
        }
        details.push(format!(
            "{name}: J {:.3} (expected gap {:.1}%, identity gap {:.2e}, baseline {:.3})",
            cost.total,
            expected_gap * 100.0,
            identity_gap,
            baseline.cost.total
        ));
    }
    assert!(
        verdict("6 (cost comparison table)", pass, &details.join("; ")),
        "criterion 6 failed"
    );
}

#[test]
fn criterion_7_identity_invariants() {
    let mut ok = true;
    let mut details = Vec::new();

    for name in ["example1.json", "single_agent.json"] {
        let scenario = LqScenarioFile::load(&scenario_path(name))
            .unwrap()
            .to_scenario()
            .unwrap();
        let sol = centralized::solve(&scenario.problem, scenario.grid, &scenario.schedule).unwrap();
        let n = scenario.problem.state_dim();
        let mut duality: f64 = 0.0;
        for i in 0..scenario.grid.num_nodes() {
            let prod = sol.psi.node(i).transpose() * sol.phi.node(i);
            duality = duality.max((prod - DMatrix::identity(n, n)).norm());
        }
        let gram_sym = (&sol.gramian - sol.gramian.transpose()).norm();
        let gram_min = min_symmetric_eigenvalue(&sol.gramian);
        if duality > 1e-6 || gram_sym > 1e-12 || gram_min < -1e-10 {
            ok = false;
        }
        details.push(format!(
            "{name}: |Psi'Phi - I| {duality:.2e}, gramian min eig {gram_min:.2e}"
        ));
    }

    let ugv = UgvScenarioFile::load(&scenario_path("ugv_example2.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    let qtilde = build_qtilde(&ugv.system).unwrap();
    let n = ugv.system.agent_state_dim();
    let count = ugv.system.agent_count();
    let mut row_sum_max: f64 = 0.0;
    for i in 0..count {
        let mut sum = DMatrix::<f64>::zeros(n, n);
        for j in 0..count {
            sum += qtilde.view((i * n, j * n), (n, n));
        }
        row_sum_max = row_sum_max.max(sum.norm());
    }
    if row_sum_max != 0.0 {
        ok = false;
    }
    details.push(format!("Qtilde block-row sums {row_sum_max:.1e}"));

    assert!(
        verdict("7 (identity invariants)", ok, &details.join("; ")),
        "criterion 7 failed"
    );
}

#[test]
fn criterion_8_degeneracy_suite() {
    let mut ok = true;
    let mut details = Vec::new();

    // Single-agent reduction.
    let single = LqScenarioFile::load(&scenario_path("single_agent.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    let views = single.views.clone().unwrap();
    let topology = single.topology.clone().unwrap();
    let dist = solve_distributed(
        &views,
        &single.problem.r,
        &topology,
        &single.schedule,
        single.grid,
        &DistributedOptions::default(),
    )
    .unwrap();
    let cent = centralized::solve(&single.problem, single.grid, &single.schedule).unwrap();
    let agent = &dist.agents[0];
    let reduction_gap = agent
        .p
        .max_node_delta(&cent.p)
        .max(agent.x.max_node_delta(&cent.x_star))
        .max(agent.u.max_node_delta(&cent.u_star))
        .max((agent.lambda.clone() - &cent.lambda).norm());
    if reduction_gap > 1e-10 {
        ok = false;
    }
    details.push(format!("single-agent gap {reduction_gap:.2e} (<=1e-10)"));

    // Identical views stay exactly symmetric.
    let example1 = LqScenarioFile::load(&scenario_path("example1.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    let m_share = symmetric_sqrt(&example1.problem.control_weight()).unwrap();
    let identical: Vec<_> = (0..4)
        .map(|i| lqterm::model::AgentView {
            index: i,
            a: example1.problem.a.clone(),
            b: example1.problem.b.clone(),
            q: example1.problem.q.clone(),
            m: m_share.clone(),
            x0: example1.problem.x0.clone(),
            x_target: example1.problem.x_target.clone(),
        })
        .collect();
    let ring = Topology::ring(4, 2.5).unwrap();
    let grid = TimeGrid::new(1.0, 200).unwrap();
    let sym = solve_distributed(
        &identical,
        &example1.problem.r,
        &ring,
        &example1.schedule,
        grid,
        &DistributedOptions::default(),
    )
    .unwrap();
    let symmetric = sym.agents[1..].iter().all(|a| {
        a.p.samples() == sym.agents[0].p.samples()
            && a.x.samples() == sym.agents[0].x.samples()
            && a.u.samples() == sym.agents[0].u.samples()
    });
    if !symmetric {
        ok = false;
    }
    details.push(format!(
        "identical-view symmetry exact [{}]",
        if symmetric { "ok" } else { "broken" }
    ));

    // Coupling validity thresholds on the four-ring.
    let tight = validate_gamma(&Topology::ring(4, 1.9).unwrap()).unwrap();
    let good = validate_gamma(&Topology::ring(4, 2.5).unwrap()).unwrap();
    let gamma_ok = !tight.valid
        && (tight.spectral_radius - 1.105).abs() < 5e-3
        && good.valid
        && (good.spectral_radius - 0.6).abs() < 1e-9;
    if !gamma_ok {
        ok = false;
    }
    details.push(format!(
        "gamma 1.9 rejected (rho {:.4}), gamma 2.5 accepted (rho {:.4})",
        tight.spectral_radius, good.spectral_radius
    ));

    assert!(
        verdict("8 (degeneracy suite)", ok, &details.join("; ")),
        "criterion 8 failed"
    );
}

#[test]
fn criterion_9_ugv_consensus_achievement() {
    let scenario = UgvScenarioFile::load(&scenario_path("ugv_example2.json"))
        .unwrap()
        .to_scenario()
        .unwrap();
    assert!((scenario.sim_grid.t_end() - 30.0).abs() < 1e-12);
    let sol = solve_consensus(&scenario.system, &scenario.schedule, scenario.sim_grid).unwrap();

    // Pairwise position deviation and per-vehicle velocity norms at T_sim.
    let final_state = sol.x_distributed.node(scenario.sim_grid.num_steps());
    let count = scenario.system.agent_count();
    let mut position_dev: f64 = 0.0;
    let mut velocity_norm: f64 = 0.0;
    for i in 0..count {
        let vi = final_state.rows(i * 4 + 2, 2);
        velocity_norm = velocity_norm.max(vi.norm());
        for j in (i + 1)..count {
            let qi = final_state.rows(i * 4, 2);
            let qj = final_state.rows(j * 4, 2);
            position_dev = position_dev.max((qi - qj).norm());
        }
    }
    let (full_ok, _) = check_consensus(&sol.x_distributed, 4, 1e-2);
    let pass = position_dev <= 1e-2 && velocity_norm <= 1e-2 && full_ok;
    assert!(
        verdict(
            "9 (UGV consensus)",
            pass,
            &format!(
                "position deviation {position_dev:.3e} (<=1e-2), velocity norm {velocity_norm:.3e} (<=1e-2) at T=30"
            )
        ),
        "criterion 9 failed"
    );
}
