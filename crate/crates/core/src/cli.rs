//! Command implementations behind the `lqterm` binary: scenario ingestion,
//! solver orchestration and CSV/JSON emission.
//!
//! Exit codes: 0 success, 1 validation failure, 2 scenario/schema error,
//! 3 solver failure, 4 topology or coupling rejection.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::centralized;
use crate::consensus::{
    self, check_consensus, classical_protocol_baseline, evaluate_consensus_cost, simulate_optimal,
    solve_consensus, UgvParams,
};
use crate::distributed::{solve_distributed, DistributedOptions};
use crate::model::{validate_decomposition, validate_gamma, ScenarioSummary, DECOMPOSITION_TOL};
use crate::numerics::{spectral_norm, TimeGrid, VectorTrajectory};
use crate::scenario::{LqScenario, LqScenarioFile, UgvScenarioFile};
use crate::{Error, Result};

/// Parsed command-line request.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub scenario: PathBuf,
    pub out_dir: PathBuf,
    pub grid_steps: Option<usize>,
    pub with_reference: bool,
    pub diagnostics: bool,
    pub batch_cases: Option<PathBuf>,
    pub max_n: Option<usize>,
    pub max_k: Option<usize>,
    pub max_varpi: Option<usize>,
    pub max_q: Option<usize>,
    pub max_w: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Centralized,
    Distributed,
    Consensus,
    Validate,
}

impl RunConfig {
    pub fn new(command: CommandKind, scenario: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            command,
            scenario,
            out_dir,
            grid_steps: None,
            with_reference: false,
            diagnostics: false,
            batch_cases: None,
            max_n: None,
            max_k: None,
            max_varpi: None,
            max_q: None,
            max_w: None,
        }
    }
}

/// Stable mapping from error kinds to process exit codes.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Scenario(_) | Error::Json(_) => 2,
        Error::Topology(_) | Error::GammaInvalid { .. } => 4,
        _ => 3,
    }
}

/// Runs one command, returning the exit code.
pub fn run(config: &RunConfig) -> i32 {
    let outcome = match config.command {
        CommandKind::Centralized => cmd_centralized(config),
        CommandKind::Distributed => cmd_distributed(config),
        CommandKind::Consensus => cmd_consensus(config),
        CommandKind::Validate => cmd_validate(config),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn load_lq(config: &RunConfig) -> Result<LqScenario> {
    let file = LqScenarioFile::load(&config.scenario)?;
    let mut scenario = file.to_scenario()?;
    if let Some(steps) = config.grid_steps {
        scenario.grid = TimeGrid::new(scenario.problem.horizon, steps)
            .map_err(|e| Error::Scenario(format!("--grid-steps: {e}")))?;
    }
    if let Some(v) = config.max_n {
        scenario.schedule.max_n = v;
    }
    if let Some(v) = config.max_k {
        scenario.schedule.max_k = v;
    }
    if let Some(v) = config.max_varpi {
        scenario.schedule.max_varpi = v;
    }
    if let Some(v) = config.max_q {
        scenario.schedule.max_q = v;
    }
    if let Some(v) = config.max_w {
        scenario.schedule.max_w = v;
    }
    scenario
        .schedule
        .validate()
        .map_err(|e| Error::Scenario(e.to_string()))?;
    Ok(scenario)
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn fmt_full(x: f64) -> String {
    format!("{:.16e}", x)
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_full(*v)).collect();
        writeln!(file, "{}", cells.join(","))?;
    }
    Ok(())
}

fn vector_headers(prefix: &str, dim: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=dim).map(|i| format!("{prefix}{i}")))
        .collect()
}

fn write_vector_trajectory(path: &Path, prefix: &str, traj: &VectorTrajectory) -> Result<()> {
    let grid = *traj.grid();
    write_csv(
        path,
        &vector_headers(prefix, traj.dim()),
        (0..grid.num_nodes()).map(move |i| {
            std::iter::once(grid.node(i))
                .chain(traj.node(i).iter().copied())
                .collect()
        }),
    )
}

fn write_summary(dir: &Path, summary: &ScenarioSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

fn cmd_centralized(config: &RunConfig) -> Result<i32> {
    let scenario = load_lq(config)?;
    ensure_out_dir(&config.out_dir)?;
    let sol = centralized::solve(&scenario.problem, scenario.grid, &scenario.schedule)?;

    let grid = scenario.grid;
    write_csv(
        &config.out_dir.join("P_norm.csv"),
        &["t".to_string(), "P_norm".to_string()],
        (0..grid.num_nodes()).map(|i| vec![grid.node(i), spectral_norm(sol.p.node(i))]),
    )?;
    write_vector_trajectory(&config.out_dir.join("state.csv"), "x", &sol.x_star)?;
    write_vector_trajectory(&config.out_dir.join("control.csv"), "u", &sol.u_star)?;

    let mut summary = ScenarioSummary::default();
    summary.cost = Some(sol.cost);
    summary.terminal_error = Some(sol.terminal_error);
    summary
        .iteration_counts
        .insert("riccati_outer".into(), sol.iterations_used);
    summary
        .solution_norms
        .insert("lambda".into(), sol.lambda.norm());
    summary
        .solution_norms
        .insert("P_at_0".into(), spectral_norm(sol.p.node(0)));
    summary
        .solution_norms
        .insert("gramian".into(), spectral_norm(&sol.gramian));
    for (i, v) in sol.lambda.iter().enumerate() {
        summary
            .solution_norms
            .insert(format!("lambda_{}", i + 1), *v);
    }
    write_summary(&config.out_dir, &summary)?;

    println!(
        "centralized solve: {} outer iterations",
        sol.iterations_used
    );
    println!("  cost J = {:.6}", sol.cost);
    println!("  terminal error = {:.3e}", sol.terminal_error);
    println!("  lambda = {:?}", sol.lambda.as_slice());
    Ok(0)
}

fn cmd_distributed(config: &RunConfig) -> Result<i32> {
    let scenario = load_lq(config)?;
    let views = scenario
        .views
        .clone()
        .ok_or_else(|| Error::Scenario("distributed run needs an agents block".into()))?;
    let topology = scenario
        .topology
        .clone()
        .ok_or_else(|| Error::Scenario("distributed run needs a topology block".into()))?;
    let check = validate_gamma(&topology)?;
    if !check.valid {
        eprintln!(
            "coupling rejected: spectral radius {:.6} >= 1 at gamma {}",
            check.spectral_radius, topology.gamma
        );
        return Ok(4);
    }
    ensure_out_dir(&config.out_dir)?;

    let options = DistributedOptions {
        collect_diagnostics: config.diagnostics,
    };
    let sol = solve_distributed(
        &views,
        &scenario.problem.r,
        &topology,
        &scenario.schedule,
        scenario.grid,
        &options,
    )?;

    let grid = scenario.grid;
    for agent in &sol.agents {
        let i = agent.index;
        write_vector_trajectory(
            &config.out_dir.join(format!("state_agent_{i}.csv")),
            "x",
            &agent.x,
        )?;
        write_vector_trajectory(
            &config.out_dir.join(format!("control_agent_{i}.csv")),
            "u",
            &agent.u,
        )?;
        write_csv(
            &config.out_dir.join(format!("P_norm_agent_{i}.csv")),
            &["t".to_string(), "P_norm".to_string()],
            (0..grid.num_nodes()).map(|n| vec![grid.node(n), spectral_norm(agent.p.node(n))]),
        )?;
    }
    write_csv(
        &config.out_dir.join("lambda.csv"),
        &std::iter::once("agent".to_string())
            .chain((1..=sol.agents[0].lambda.len()).map(|i| format!("lambda{i}")))
            .collect::<Vec<_>>(),
        sol.agents.iter().map(|a| {
            std::iter::once(a.index as f64)
                .chain(a.lambda.iter().copied())
                .collect()
        }),
    )?;
    if let Some(diag) = &sol.diagnostics {
        let mut file = std::io::BufWriter::new(std::fs::File::create(
            config.out_dir.join("diagnostics.csv"),
        )?);
        writeln!(file, "round,quantity,delta_consensus,delta_mean")?;
        for rec in &diag.records {
            writeln!(
                file,
                "{},{},{},{}",
                rec.round,
                rec.quantity,
                fmt_full(rec.delta_consensus),
                fmt_full(rec.delta_mean)
            )?;
        }
    }

    let mut summary = ScenarioSummary::default();
    summary
        .iteration_counts
        .insert("riccati_outer".into(), sol.outer_iterations);
    for (name, value) in &sol.pairwise {
        summary
            .consensus_residuals
            .insert(format!("pairwise_{name}"), *value);
    }
    if sol.reachability_warning {
        summary.flags.push("reachability_warning".into());
    }
    if config.with_reference {
        let reference = centralized::solve(&scenario.problem, grid, &scenario.schedule)?;
        let mut ref_p: f64 = 0.0;
        let mut ref_x: f64 = 0.0;
        let mut ref_u: f64 = 0.0;
        for agent in &sol.agents {
            ref_p = ref_p.max(agent.p.max_node_delta(&reference.p));
            ref_x = ref_x.max(agent.x.max_node_delta(&reference.x_star));
            ref_u = ref_u.max(agent.u.max_node_delta(&reference.u_star));
        }
        summary
            .consensus_residuals
            .insert("reference_P".into(), ref_p);
        summary
            .consensus_residuals
            .insert("reference_x".into(), ref_x);
        summary
            .consensus_residuals
            .insert("reference_u".into(), ref_u);
        summary.cost = Some(reference.cost);
    }
    write_summary(&config.out_dir, &summary)?;

    println!(
        "distributed solve: {} agents, {} outer iterations",
        sol.agents.len(),
        sol.outer_iterations
    );
    for (name, value) in &sol.pairwise {
        println!("  max pairwise deviation {name}: {value:.3e}");
    }
    if config.with_reference {
        for key in ["reference_P", "reference_x", "reference_u"] {
            if let Some(v) = summary.consensus_residuals.get(key) {
                println!("  {key}: {v:.3e}");
            }
        }
    }
    Ok(0)
}

/// One homogeneous comparison case for the batch mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchCase {
    pub name: String,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_j: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchCasesFile {
    pub cases: Vec<BatchCase>,
}

struct ReportRow {
    case: String,
    j_proposed: f64,
    j_baseline: f64,
    consensus_residual: f64,
}

fn write_report(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(dir.join("consensus_report.csv"))?);
    writeln!(file, "case,J_proposed,J_baseline,consensus_residual")?;
    for row in rows {
        writeln!(
            file,
            "{},{},{},{}",
            row.case,
            fmt_full(row.j_proposed),
            fmt_full(row.j_baseline),
            fmt_full(row.consensus_residual)
        )?;
    }
    Ok(())
}

fn cmd_consensus(config: &RunConfig) -> Result<i32> {
    let file = UgvScenarioFile::load(&config.scenario)?;
    let scenario = file.to_scenario()?;
    let check = validate_gamma(&scenario.system.topology)?;
    if !check.valid {
        eprintln!(
            "coupling rejected: spectral radius {:.6} >= 1 at gamma {}",
            check.spectral_radius, scenario.system.topology.gamma
        );
        return Ok(4);
    }
    ensure_out_dir(&config.out_dir)?;
    let mut summary = ScenarioSummary::default();
    let mut rows = Vec::new();

    if let Some(batch_path) = &config.batch_cases {
        let text = std::fs::read_to_string(batch_path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", batch_path.display())))?;
        let batch: BatchCasesFile = serde_json::from_str(&text)
            .map_err(|e| Error::Scenario(format!("batch cases: {e}")))?;
        for case in &batch.cases {
            let params: Vec<UgvParams> = file
                .ugv
                .iter()
                .map(|u| UgvParams {
                    c: case.c,
                    d: case.d,
                    q0: u.q0,
                    v0: u.v0,
                })
                .collect();
            let mut system =
                consensus::build_ugv_scenario(&params, scenario.system.topology.gamma)?;
            system.topology = scenario.system.topology.clone();
            system.weights = scenario.system.weights.clone();
            let (are, x, u, cost) = simulate_optimal(&system, scenario.sim_grid)?;
            let qtilde = consensus::build_qtilde(&system)?;
            let _ = evaluate_consensus_cost(&x, &u, &qtilde, &system.stacked_r());
            let baseline =
                classical_protocol_baseline(&system, &scenario.baseline_gain, scenario.sim_grid)?;
            let (_, residual_series) = check_consensus(&x, system.agent_state_dim(), f64::INFINITY);
            let x0 = system.stacked_x0();
            let value = (&are.p * &x0).dot(&x0);
            let identity_gap = (cost.total - value).abs() / value.abs().max(1e-300);
            summary
                .consensus_residuals
                .insert(format!("{}_value_identity", case.name), identity_gap);
            summary
                .solution_norms
                .insert(format!("{}_P_norm", case.name), spectral_norm(&are.p));
            if let Some(expected) = case.expected_j {
                let rel = (cost.total - expected).abs() / expected.abs().max(1e-300);
                summary
                    .solution_norms
                    .insert(format!("{}_J_expected_rel", case.name), rel);
                if rel > 0.02 {
                    summary.flags.push(format!(
                        "{}: J {:.4} deviates {:.2}% from expected {:.4}",
                        case.name,
                        cost.total,
                        rel * 100.0,
                        expected
                    ));
                }
            }
            rows.push(ReportRow {
                case: case.name.clone(),
                j_proposed: cost.total,
                j_baseline: baseline.cost.total,
                consensus_residual: *residual_series.last().unwrap(),
            });
        }
    } else {
        let sol = solve_consensus(&scenario.system, &scenario.schedule, scenario.sim_grid)?;
        let baseline = classical_protocol_baseline(
            &scenario.system,
            &scenario.baseline_gain,
            scenario.sim_grid,
        )?;
        write_vector_trajectory(
            &config.out_dir.join("state_centralized.csv"),
            "x",
            &sol.x_centralized,
        )?;
        write_vector_trajectory(
            &config.out_dir.join("state_distributed.csv"),
            "x",
            &sol.x_distributed,
        )?;
        write_vector_trajectory(
            &config.out_dir.join("control_centralized.csv"),
            "u",
            &sol.u_centralized,
        )?;
        write_vector_trajectory(
            &config.out_dir.join("control_distributed.csv"),
            "u",
            &sol.u_distributed,
        )?;
        write_csv(
            &config.out_dir.join("consensus_residual.csv"),
            &["t".to_string(), "residual".to_string()],
            sol.consensus_residual
                .iter()
                .enumerate()
                .map(|(i, r)| vec![scenario.sim_grid.node(i), *r]),
        )?;
        summary
            .solution_norms
            .insert("P_norm".into(), spectral_norm(&sol.p));
        for (i, p) in sol.p_agents.iter().enumerate() {
            summary
                .solution_norms
                .insert(format!("P_norm_agent_{}", i + 1), spectral_norm(p));
        }
        summary
            .solution_norms
            .insert("are_residual".into(), sol.are.residual);
        summary
            .solution_norms
            .insert("closed_loop_abscissa".into(), sol.are.closed_loop_abscissa);
        summary
            .solution_norms
            .insert("controller_gap".into(), sol.controller_gap);
        summary
            .consensus_residuals
            .insert("value_identity".into(), sol.value_identity);
        summary.consensus_residuals.insert(
            "final_state_deviation".into(),
            *sol.consensus_residual.last().unwrap(),
        );
        summary
            .iteration_counts
            .insert("are_outer".into(), sol.distributed.outer_iterations);
        summary.cost = Some(sol.cost_distributed.total);
        if sol.cost_distributed.tail_unbounded || baseline.cost.tail_unbounded {
            summary.flags.push("tail_unbounded".into());
        }
        rows.push(ReportRow {
            case: "scenario".into(),
            j_proposed: sol.cost_distributed.total,
            j_baseline: baseline.cost.total,
            consensus_residual: *sol.consensus_residual.last().unwrap(),
        });
    }

    write_report(&config.out_dir, &rows)?;
    write_summary(&config.out_dir, &summary)?;
    for row in &rows {
        println!(
            "{}: J_proposed = {:.4}, J_baseline = {:.4}, consensus residual = {:.3e}",
            row.case, row.j_proposed, row.j_baseline, row.consensus_residual
        );
    }
    for flag in &summary.flags {
        println!("  flag: {flag}");
    }
    Ok(0)
}

fn cmd_validate(config: &RunConfig) -> Result<i32> {
    let scenario = load_lq(config)?;
    let mut all_pass = true;
    let mut table: Vec<(String, String, bool)> = Vec::new();

    match (&scenario.views, &scenario.topology) {
        (Some(views), _) => {
            let report = validate_decomposition(&views[..], &scenario.problem, DECOMPOSITION_TOL)?;
            for check in &report.checks {
                table.push((
                    check.name.clone(),
                    format!("residual {:.3e} (tol {:.1e})", check.residual, check.tol),
                    check.pass,
                ));
                all_pass &= check.pass;
            }
        }
        (None, _) => {
            table.push(("agents".into(), "no agent views supplied".into(), true));
        }
    }
    if let Some(topology) = &scenario.topology {
        let check = validate_gamma(topology)?;
        table.push((
            "coupling gamma".into(),
            format!("spectral radius {:.6}", check.spectral_radius),
            check.valid,
        ));
        all_pass &= check.valid;
    }

    let width = table.iter().map(|(n, _, _)| n.len()).max().unwrap_or(0);
    for (name, detail, pass) in &table {
        println!(
            "{:>width$}  {}  {}",
            name,
            if *pass { "PASS" } else { "FAIL" },
            detail
        );
    }
    Ok(if all_pass { 0 } else { 1 })
}
