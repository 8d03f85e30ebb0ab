//! Scenario files: JSON schemas, loaders and the mapping onto domain types.
//!
//! Matrices are row-major nested arrays of decimals. Two document kinds
//! exist: the finite-horizon LQ scenario (`system`/`agents`/`topology`/
//! `schedule`/`grid`) and the consensus fleet scenario
//! (`ugv`/`topology`/`weights`/`baseline`/`schedule`/`sim`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{build_ugv_scenario, MultiAgentSystem, UgvParams};
use crate::model::{AgentView, AlphaRule, IterationSchedule, LQTerminalProblem, Topology};
use crate::numerics::TimeGrid;
use crate::{Error, Result};

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Scenario(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Scenario(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemBlock {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(rename = "xT")]
    pub x_target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBlock {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    #[serde(rename = "xT")]
    pub x_target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyBlock {
    #[serde(rename = "N")]
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleBlock {
    pub alpha: String,
    pub gamma: f64,
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub max_n: usize,
    pub max_k: usize,
    pub max_varpi: usize,
    pub max_q: usize,
    pub max_w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polish_rounds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBlock {
    pub num_steps: usize,
}

/// Finite-horizon LQ scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqScenarioFile {
    pub system: SystemBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<AgentBlock>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleBlock>,
    pub grid: GridBlock,
}

/// Parsed LQ scenario.
#[derive(Debug, Clone)]
pub struct LqScenario {
    pub problem: LQTerminalProblem,
    pub views: Option<Vec<AgentView>>,
    pub topology: Option<Topology>,
    pub schedule: IterationSchedule,
    pub grid: TimeGrid,
}

impl ScheduleBlock {
    pub fn to_schedule(&self) -> Result<IterationSchedule> {
        let defaults = IterationSchedule::default();
        let schedule = IterationSchedule {
            alpha: AlphaRule::parse(&self.alpha)?,
            gamma: self.gamma,
            tol_inner: self.tol_inner,
            tol_outer: self.tol_outer,
            max_n: self.max_n,
            max_k: self.max_k,
            max_varpi: self.max_varpi,
            max_q: self.max_q,
            max_w: self.max_w,
            polish_rounds: self.polish_rounds.unwrap_or(defaults.polish_rounds),
            polish_tol: defaults.polish_tol,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn from_schedule(schedule: &IterationSchedule) -> Self {
        Self {
            alpha: schedule.alpha.to_string(),
            gamma: schedule.gamma,
            tol_inner: schedule.tol_inner,
            tol_outer: schedule.tol_outer,
            max_n: schedule.max_n,
            max_k: schedule.max_k,
            max_varpi: schedule.max_varpi,
            max_q: schedule.max_q,
            max_w: schedule.max_w,
            polish_rounds: Some(schedule.polish_rounds),
        }
    }
}

impl LqScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_scenario(&self) -> Result<LqScenario> {
        let problem = LQTerminalProblem::new(
            to_matrix(&self.system.a, "system.A")?,
            to_matrix(&self.system.b, "system.B")?,
            to_matrix(&self.system.q, "system.Q")?,
            to_matrix(&self.system.r, "system.R")?,
            self.system.horizon,
            DVector::from_row_slice(&self.system.x0),
            DVector::from_row_slice(&self.system.x_target),
        )
        .map_err(|e| Error::Scenario(format!("system block: {e}")))?;

        let views = match &self.agents {
            None => None,
            Some(blocks) => Some(
                blocks
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        Ok(AgentView {
                            index: i,
                            a: to_matrix(&b.a, "agent.A")?,
                            b: to_matrix(&b.b, "agent.B")?,
                            q: to_matrix(&b.q, "agent.Q")?,
                            m: to_matrix(&b.m, "agent.M")?,
                            x0: DVector::from_row_slice(&b.x0),
                            x_target: DVector::from_row_slice(&b.x_target),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };

        let topology = match &self.topology {
            None => None,
            Some(t) => {
                let edges: Vec<(usize, usize)> = t.edges.iter().map(|e| (e[0], e[1])).collect();
                Some(
                    Topology::new(t.n, &edges, t.gamma)
                        .map_err(|e| Error::Scenario(format!("topology block: {e}")))?,
                )
            }
        };
        if let (Some(v), Some(t)) = (&views, &topology) {
            if v.len() != t.num_agents() {
                return Err(Error::Scenario(format!(
                    "{} agents but topology has {} nodes",
                    v.len(),
                    t.num_agents()
                )));
            }
        }

        let schedule = match &self.schedule {
            None => IterationSchedule::default(),
            Some(s) => {
                if let Some(t) = &self.topology {
                    if (s.gamma - t.gamma).abs() > 1e-12 {
                        return Err(Error::Scenario(format!(
                            "schedule gamma {} disagrees with topology gamma {}",
                            s.gamma, t.gamma
                        )));
                    }
                }
                s.to_schedule()?
            }
        };

        let grid = TimeGrid::new(self.system.horizon, self.grid.num_steps)
            .map_err(|e| Error::Scenario(format!("grid block: {e}")))?;
        Ok(LqScenario {
            problem,
            views,
            topology,
            schedule,
            grid,
        })
    }

    pub fn from_scenario(scenario: &LqScenario) -> Self {
        Self {
            system: SystemBlock {
                a: from_matrix(&scenario.problem.a),
                b: from_matrix(&scenario.problem.b),
                q: from_matrix(&scenario.problem.q),
                r: from_matrix(&scenario.problem.r),
                horizon: scenario.problem.horizon,
                x0: scenario.problem.x0.iter().copied().collect(),
                x_target: scenario.problem.x_target.iter().copied().collect(),
            },
            agents: scenario.views.as_ref().map(|views| {
                views
                    .iter()
                    .map(|v| AgentBlock {
                        a: from_matrix(&v.a),
                        b: from_matrix(&v.b),
                        q: from_matrix(&v.q),
                        m: from_matrix(&v.m),
                        x0: v.x0.iter().copied().collect(),
                        x_target: v.x_target.iter().copied().collect(),
                    })
                    .collect()
            }),
            topology: scenario.topology.as_ref().map(|t| TopologyBlock {
                n: t.num_agents(),
                edges: t.edges().iter().map(|&(i, j)| [i, j]).collect(),
                gamma: t.gamma,
            }),
            schedule: Some(ScheduleBlock::from_schedule(&scenario.schedule)),
            grid: GridBlock {
                num_steps: scenario.grid.num_steps(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UgvBlock {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub q0: [f64; 2],
    pub v0: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitWeight {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<ExplicitWeight>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineBlock {
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimBlock {
    pub t_sim: f64,
    pub num_steps: usize,
}

/// Consensus fleet scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgvScenarioFile {
    pub ugv: Vec<UgvBlock>,
    pub topology: TopologyBlock,
    pub weights: WeightsBlock,
    pub baseline: BaselineBlock,
    pub schedule: ScheduleBlock,
    pub sim: SimBlock,
}

/// Parsed consensus scenario.
#[derive(Debug, Clone)]
pub struct UgvScenario {
    pub system: MultiAgentSystem,
    pub baseline_gain: DMatrix<f64>,
    pub schedule: IterationSchedule,
    pub sim_grid: TimeGrid,
}

impl UgvScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_scenario(&self) -> Result<UgvScenario> {
        let params: Vec<UgvParams> = self
            .ugv
            .iter()
            .map(|u| UgvParams {
                c: u.c,
                d: u.d,
                q0: u.q0,
                v0: u.v0,
            })
            .collect();
        let mut system = build_ugv_scenario(&params, self.topology.gamma)
            .map_err(|e| Error::Scenario(format!("ugv block: {e}")))?;

        // Replace the builder's default ring with the scenario topology and
        // install the requested weights.
        let edges: Vec<(usize, usize)> = self.topology.edges.iter().map(|e| (e[0], e[1])).collect();
        let topology = Topology::new(self.topology.n, &edges, self.topology.gamma)
            .map_err(|e| Error::Scenario(format!("topology block: {e}")))?;
        if topology.num_agents() != system.agent_count() {
            return Err(Error::Scenario(
                "topology size does not match the fleet".into(),
            ));
        }
        let n = system.agent_state_dim();
        let count = system.agent_count();
        if let Some(explicit) = &self.weights.explicit {
            let mut weights = vec![vec![DMatrix::<f64>::zeros(n, n); count]; count];
            for w in explicit {
                if w.i >= count || w.j >= count {
                    return Err(Error::Scenario(format!(
                        "weight indices ({}, {}) out of range",
                        w.i, w.j
                    )));
                }
                weights[w.i][w.j] = to_matrix(&w.q, "weights.explicit.Q")?;
            }
            system.weights = weights;
        } else if self.weights.ring == Some(true) {
            let mut weights = vec![vec![DMatrix::<f64>::zeros(n, n); count]; count];
            for &(i, j) in topology.edges() {
                weights[i][j] = DMatrix::identity(n, n);
                weights[j][i] = DMatrix::identity(n, n);
            }
            system.weights = weights;
        } else {
            return Err(Error::Scenario(
                "weights block needs either ring: true or an explicit list".into(),
            ));
        }
        system.topology = topology;

        if (self.schedule.gamma - self.topology.gamma).abs() > 1e-12 {
            return Err(Error::Scenario(format!(
                "schedule gamma {} disagrees with topology gamma {}",
                self.schedule.gamma, self.topology.gamma
            )));
        }
        let schedule = self.schedule.to_schedule()?;
        let baseline_gain = to_matrix(&self.baseline.k, "baseline.K")?;
        if baseline_gain.shape() != (system.agent_input_dim(), n) {
            return Err(Error::Scenario(format!(
                "baseline.K must be {} x {n}",
                system.agent_input_dim()
            )));
        }
        let sim_grid = TimeGrid::new(self.sim.t_sim, self.sim.num_steps)
            .map_err(|e| Error::Scenario(format!("sim block: {e}")))?;
        Ok(UgvScenario {
            system,
            baseline_gain,
            schedule,
            sim_grid,
        })
    }
}
