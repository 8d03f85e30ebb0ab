//! Problem definitions, agent-local views, graph topology, iteration
//! schedules and validation of the structural decomposition assumptions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::numerics::{min_symmetric_eigenvalue, pseudo_inverse, symmetrize};
use crate::{Error, Result};

/// Global finite-horizon LQ problem with fixed endpoints `x(0) = x0` and
/// `x(T) = x_target`.
#[derive(Debug, Clone)]
pub struct LQTerminalProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub x_target: DVector<f64>,
}

impl LQTerminalProblem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        horizon: f64,
        x0: DVector<f64>,
        x_target: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n {
            return Err(Error::Dimension("A must be square".into()));
        }
        if b.nrows() != n {
            return Err(Error::Dimension("B must have as many rows as A".into()));
        }
        if q.shape() != (n, n) {
            return Err(Error::Dimension("Q must be n x n".into()));
        }
        if r.shape() != (m, m) {
            return Err(Error::Dimension("R must be m x m".into()));
        }
        if x0.len() != n || x_target.len() != n {
            return Err(Error::Dimension("x0 and xT must be n-vectors".into()));
        }
        if (&q - q.transpose()).norm() > 1e-10 * (1.0 + q.norm()) {
            return Err(Error::Parameter("Q must be symmetric".into()));
        }
        if min_symmetric_eigenvalue(&q) < -1e-10 {
            return Err(Error::Parameter("Q must be positive semi-definite".into()));
        }
        if (&r - r.transpose()).norm() > 1e-10 * (1.0 + r.norm()) {
            return Err(Error::Parameter("R must be symmetric".into()));
        }
        if min_symmetric_eigenvalue(&r) <= 0.0 {
            return Err(Error::Parameter("R must be positive definite".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Parameter("horizon T must be positive".into()));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            horizon,
            x0,
            x_target,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn r_inv(&self) -> DMatrix<f64> {
        self.r
            .clone()
            .try_inverse()
            .expect("R is positive definite")
    }

    /// `B R^{-1} B'`.
    pub fn control_weight(&self) -> DMatrix<f64> {
        let s = &self.b * self.r_inv() * self.b.transpose();
        symmetrize(&s)
    }
}

/// One agent's local share of the problem data.
#[derive(Debug, Clone)]
pub struct AgentView {
    pub index: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub x_target: DVector<f64>,
}

impl AgentView {
    /// `M_i M_i'`, the agent's share of `B R^{-1} B'`.
    pub fn control_weight(&self) -> DMatrix<f64> {
        &self.m * self.m.transpose()
    }
}

/// Undirected connected communication graph with coupling constant `gamma`.
#[derive(Debug, Clone)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    laplacian: DMatrix<f64>,
    pub gamma: f64,
}

impl Topology {
    pub fn new(n: usize, edges: &[(usize, usize)], gamma: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("graph needs at least one node".into()));
        }
        if !(gamma > 0.0) {
            return Err(Error::Topology(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Topology(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::Topology(format!("self-loop at node {i}")));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                continue; // ignore duplicate edges
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        // Connectivity by breadth-first search.
        if n > 1 {
            let mut visited = vec![false; n];
            let mut queue = std::collections::VecDeque::from([0usize]);
            visited[0] = true;
            let mut count = 1;
            while let Some(u) = queue.pop_front() {
                for &v in &adjacency[u] {
                    if !visited[v] {
                        visited[v] = true;
                        count += 1;
                        queue.push_back(v);
                    }
                }
            }
            if count != n {
                return Err(Error::Topology(format!(
                    "graph is disconnected: reached {count} of {n} nodes"
                )));
            }
        }
        let mut laplacian = DMatrix::zeros(n, n);
        for (i, list) in adjacency.iter().enumerate() {
            laplacian[(i, i)] = list.len() as f64;
            for &j in list {
                laplacian[(i, j)] = -1.0;
            }
        }
        Ok(Self {
            n,
            edges: seen.into_iter().collect(),
            adjacency,
            laplacian,
            gamma,
        })
    }

    pub fn ring(n: usize, gamma: f64) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::new(n, &edges, gamma)
    }

    pub fn num_agents(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }
}

/// Outcome of the coupling-constant check.
#[derive(Debug, Clone, Copy)]
pub struct GammaCheck {
    pub valid: bool,
    pub spectral_radius: f64,
}

/// Spectral radius of `I - L/gamma - (1/N) 1 1'`; the consensus-tracking
/// rounds contract exactly when it is below one. The convergence bound is a
/// geometric `c rho^k`, so the check is the Schur condition `rho < 1` rather
/// than a Hurwitz condition on the same matrix.
pub fn validate_gamma(topology: &Topology) -> Result<GammaCheck> {
    let n = topology.num_agents();
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let iteration = DMatrix::<f64>::identity(n, n) - topology.laplacian() / topology.gamma - ones;
    // Symmetric, so the spectral radius is the largest absolute eigenvalue.
    let eigs = symmetrize(&iteration).symmetric_eigen().eigenvalues;
    let rho = eigs.iter().map(|l| l.abs()).fold(0.0, f64::max);
    Ok(GammaCheck {
        valid: rho < 1.0,
        spectral_radius: rho,
    })
}

/// Step-size rule for the consensus-tracking iterations. Every member
/// satisfies `sum alpha_k = inf` and `sum alpha_k^2 < inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaRule {
    /// `alpha_k = 1/k`.
    Harmonic,
    /// `alpha_k = min(1, c/k)`.
    ScaledHarmonic(f64),
}

impl AlphaRule {
    pub fn parse(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed == "1/k" {
            return Ok(Self::Harmonic);
        }
        if let Some(c) = trimmed.strip_suffix("/k") {
            let c: f64 = c
                .parse()
                .map_err(|_| Error::Scenario(format!("unrecognized alpha rule '{s}'")))?;
            if !(c > 0.0) {
                return Err(Error::Scenario("alpha rule scale must be positive".into()));
            }
            return Ok(Self::ScaledHarmonic(c));
        }
        Err(Error::Scenario(format!(
            "unrecognized alpha rule '{s}' (expected 'c/k')"
        )))
    }

    /// Step size for round `k >= 1`.
    pub fn alpha(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        match self {
            Self::Harmonic => 1.0 / k,
            Self::ScaledHarmonic(c) => (c / k).min(1.0),
        }
    }
}

impl std::fmt::Display for AlphaRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Harmonic => write!(f, "1/k"),
            Self::ScaledHarmonic(c) => write!(f, "{c}/k"),
        }
    }
}

/// Step sizes, tolerances and iteration caps for every loop of the two
/// algorithms. `tol_inner` is the consensus-round threshold, `tol_outer` the
/// outer Riccati-iteration threshold.
#[derive(Debug, Clone)]
pub struct IterationSchedule {
    pub alpha: AlphaRule,
    pub gamma: f64,
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub max_n: usize,
    pub max_k: usize,
    pub max_varpi: usize,
    pub max_q: usize,
    pub max_w: usize,
    /// Extra pure-averaging rounds appended after each tracking loop. The
    /// diminishing-step updates keep re-injecting each agent's local bias at
    /// size O(alpha_k), so truncating at the round cap leaves an O(alpha)
    /// cross-agent spread; averaging rounds (the alpha -> 0 limit of the same
    /// update) contract that spread geometrically while leaving the network
    /// mean untouched. Zero disables the tail.
    pub polish_rounds: usize,
    /// Pairwise-deviation target for the averaging tail.
    pub polish_tol: f64,
}

impl Default for IterationSchedule {
    fn default() -> Self {
        Self {
            alpha: AlphaRule::Harmonic,
            gamma: 2.5,
            tol_inner: 1e-3,
            tol_outer: 1e-3,
            max_n: 20,
            max_k: 200,
            max_varpi: 200,
            max_q: 200,
            max_w: 200,
            polish_rounds: 500,
            polish_tol: 1e-12,
        }
    }
}

impl IterationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Scenario("schedule gamma must be positive".into()));
        }
        if !(self.tol_inner > 0.0) || !(self.tol_outer > 0.0) {
            return Err(Error::Scenario(
                "schedule tolerances must be positive".into(),
            ));
        }
        for (name, v) in [
            ("max_n", self.max_n),
            ("max_k", self.max_k),
            ("max_varpi", self.max_varpi),
            ("max_q", self.max_q),
            ("max_w", self.max_w),
        ] {
            if v < 1 {
                return Err(Error::Scenario(format!(
                    "schedule {name} must be at least 1"
                )));
            }
        }
        Ok(())
    }
}

/// One structural-assumption check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Per-assumption report from [`validate_decomposition`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Default absolute tolerance for the decomposition checks; the bundled
/// scenarios carry exact rational data.
pub const DECOMPOSITION_TOL: f64 = 1e-9;

/// Checks that the agent views average back to the global data:
/// `A = mean A_i`, `B = mean B_i`, `Q = mean Q_i`, `x0 = mean x_i0`,
/// `xT = mean x_iT` and `B R^{-1} B' = mean M_i M_i'`.
pub fn validate_decomposition(
    views: &[AgentView],
    problem: &LQTerminalProblem,
    tol: f64,
) -> Result<ValidationReport> {
    if views.is_empty() {
        return Err(Error::Dimension("no agent views supplied".into()));
    }
    let n = problem.state_dim();
    let m = problem.input_dim();
    for view in views {
        if view.a.shape() != (n, n)
            || view.b.shape() != (n, m)
            || view.q.shape() != (n, n)
            || view.m.nrows() != n
            || view.x0.len() != n
            || view.x_target.len() != n
        {
            return Err(Error::Dimension(format!(
                "agent {} view dimensions do not match the global problem",
                view.index
            )));
        }
    }
    let count = views.len() as f64;
    let mean_mat = |f: &dyn Fn(&AgentView) -> DMatrix<f64>| -> DMatrix<f64> {
        let mut acc = f(&views[0]);
        for v in &views[1..] {
            acc += f(v);
        }
        acc / count
    };
    let mean_vec = |f: &dyn Fn(&AgentView) -> DVector<f64>| -> DVector<f64> {
        let mut acc = f(&views[0]);
        for v in &views[1..] {
            acc += f(v);
        }
        acc / count
    };

    let checks = vec![
        (
            "drift mean: (1/N) sum A_i = A",
            (mean_mat(&|v| v.a.clone()) - &problem.a).norm(),
        ),
        (
            "input mean: (1/N) sum B_i = B",
            (mean_mat(&|v| v.b.clone()) - &problem.b).norm(),
        ),
        (
            "state-cost mean: (1/N) sum Q_i = Q",
            (mean_mat(&|v| v.q.clone()) - &problem.q).norm(),
        ),
        (
            "initial-state mean: (1/N) sum x_i0 = x0",
            (mean_vec(&|v| v.x0.clone()) - &problem.x0).norm(),
        ),
        (
            "terminal-state mean: (1/N) sum x_iT = xT",
            (mean_vec(&|v| v.x_target.clone()) - &problem.x_target).norm(),
        ),
        (
            "control-weight mean: (1/N) sum M_i M_i' = B R^-1 B'",
            (mean_mat(&|v| v.control_weight()) - problem.control_weight()).norm(),
        ),
    ];
    Ok(ValidationReport {
        checks: checks
            .into_iter()
            .map(|(name, residual)| AssumptionCheck {
                name: name.into(),
                residual,
                tol,
                pass: residual <= tol,
            })
            .collect(),
    })
}

/// Outcome of the range test for the terminal constraint.
#[derive(Debug, Clone, Copy)]
pub struct ReachabilityCheck {
    pub reachable: bool,
    pub residual: f64,
}

/// True iff `Phi(T,0) x0 - xT` lies in the range of the Gramian, checked via
/// the residual of the minimum-norm least-squares solve.
pub fn check_reachability(
    problem: &LQTerminalProblem,
    gramian: &DMatrix<f64>,
    phi_t0: &DMatrix<f64>,
    rank_tol: f64,
    residual_tol: f64,
) -> ReachabilityCheck {
    let rhs = phi_t0 * &problem.x0 - &problem.x_target;
    let lambda = pseudo_inverse(gramian, rank_tol) * &rhs;
    let residual = (gramian * lambda - &rhs).norm();
    ReachabilityCheck {
        reachable: residual <= residual_tol * (1.0 + rhs.norm()),
        residual,
    }
}

/// Default relative tolerance on the reachability residual; dominated by
/// integration error in the transition matrix rather than exact rank logic.
pub const REACHABILITY_TOL: f64 = 1e-6;

/// Headline numbers reported after a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub solution_norms: std::collections::BTreeMap<String, f64>,
    pub cost: Option<f64>,
    pub terminal_error: Option<f64>,
    pub iteration_counts: std::collections::BTreeMap<String, usize>,
    pub consensus_residuals: std::collections::BTreeMap<String, f64>,
    pub flags: Vec<String>,
}
