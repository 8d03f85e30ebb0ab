//! Generic consensus-tracking engine shared by every distributed loop.
//!
//! One round applies, for each agent `i` with fixed local target `g_i`,
//!
//! `X_i <- X_i + alpha_k (g_i - X_i) + (1/gamma) sum_{j in N_i} (X_j - X_i)`
//!
//! with Jacobi semantics: every update reads the previous round's snapshot,
//! so the result is independent of agent ordering. After the tracking phase
//! an optional averaging tail (the same update with `alpha = 0`) contracts
//! the remaining cross-agent spread geometrically without moving the network
//! mean, which the coupling term conserves exactly on undirected graphs.

use nalgebra::{DMatrix, DVector};

use crate::model::{AlphaRule, IterationSchedule, Topology};
use crate::numerics::{MatrixTrajectory, VectorTrajectory};

/// Linear-space operations the engine needs from a per-agent state.
pub trait ConsensusState: Clone {
    fn zero_like(&self) -> Self;
    fn scale(&mut self, c: f64);
    fn add_scaled(&mut self, other: &Self, c: f64);
    /// Distance used by the stopping rules: Frobenius norm, maximised over
    /// grid nodes for trajectory-valued states.
    fn delta(&self, other: &Self) -> f64;
}

impl ConsensusState for DMatrix<f64> {
    fn zero_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn scale(&mut self, c: f64) {
        *self *= c;
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        self.zip_apply(other, |a, b| *a += c * b);
    }
    fn delta(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
}

impl ConsensusState for DVector<f64> {
    fn zero_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn scale(&mut self, c: f64) {
        *self *= c;
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        self.zip_apply(other, |a, b| *a += c * b);
    }
    fn delta(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
}

impl ConsensusState for MatrixTrajectory {
    fn zero_like(&self) -> Self {
        let (r, c) = self.shape();
        MatrixTrajectory::zeros(*self.grid(), r, c)
    }
    fn scale(&mut self, c: f64) {
        for s in self.samples_mut() {
            *s *= c;
        }
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        for (a, b) in self.samples_mut().iter_mut().zip(other.samples()) {
            a.zip_apply(b, |x, y| *x += c * y);
        }
    }
    fn delta(&self, other: &Self) -> f64 {
        self.max_node_delta(other)
    }
}

impl ConsensusState for VectorTrajectory {
    fn zero_like(&self) -> Self {
        VectorTrajectory::zeros(*self.grid(), self.dim())
    }
    fn scale(&mut self, c: f64) {
        for s in self.samples_mut() {
            *s *= c;
        }
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        for (a, b) in self.samples_mut().iter_mut().zip(other.samples()) {
            a.zip_apply(b, |x, y| *x += c * y);
        }
    }
    fn delta(&self, other: &Self) -> f64 {
        self.max_node_delta(other)
    }
}

/// Paired state so two quantities can share one round loop with a joint
/// stopping rule (the inner Riccati loop tracks Z and V together).
impl<A: ConsensusState, B: ConsensusState> ConsensusState for (A, B) {
    fn zero_like(&self) -> Self {
        (self.0.zero_like(), self.1.zero_like())
    }
    fn scale(&mut self, c: f64) {
        self.0.scale(c);
        self.1.scale(c);
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        self.0.add_scaled(&other.0, c);
        self.1.add_scaled(&other.1, c);
    }
    fn delta(&self, other: &Self) -> f64 {
        self.0.delta(&other.0).max(self.1.delta(&other.1))
    }
}

/// One synchronous round; all reads come from `current`.
pub fn tracking_round<S: ConsensusState>(
    current: &[S],
    targets: &[S],
    alpha: f64,
    topology: &Topology,
) -> Vec<S> {
    let gamma = topology.gamma;
    (0..current.len())
        .map(|i| {
            let degree = topology.neighbors(i).len() as f64;
            let mut next = current[i].clone();
            next.scale(1.0 - alpha - degree / gamma);
            if alpha != 0.0 {
                next.add_scaled(&targets[i], alpha);
            }
            for &j in topology.neighbors(i) {
                next.add_scaled(&current[j], 1.0 / gamma);
            }
            next
        })
        .collect()
}

/// Max over agent pairs of the state distance.
pub fn pairwise_deviation<S: ConsensusState>(values: &[S]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            worst = worst.max(values[i].delta(&values[j]));
        }
    }
    worst
}

fn mean<S: ConsensusState>(values: &[S]) -> S {
    let mut acc = values[0].zero_like();
    let w = 1.0 / values.len() as f64;
    for v in values {
        acc.add_scaled(v, w);
    }
    acc
}

/// Per-round diagnostic record: consensus part (max pairwise deviation) and
/// mean part (network mean against the single-agent reference recursion run
/// on the mean target, which reconstructs the global data under the
/// decomposition assumptions).
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub quantity: String,
    pub round: usize,
    pub delta_consensus: f64,
    pub delta_mean: f64,
}

/// Result of a tracking run.
pub struct TrackingOutcome<S> {
    pub values: Vec<S>,
    pub tracking_rounds: usize,
    pub polish_rounds: usize,
    pub final_step_delta: f64,
    pub final_pairwise: f64,
}

/// Runs tracking rounds from the all-zero state until the largest per-agent
/// step delta falls under `step_tol` or `max_rounds` is hit, then the
/// averaging tail per the schedule's polish settings.
pub fn run_tracking<S: ConsensusState>(
    targets: &[S],
    topology: &Topology,
    alpha: &AlphaRule,
    step_tol: f64,
    max_rounds: usize,
    schedule: &IterationSchedule,
    quantity: &str,
    mut diagnostics: Option<&mut Vec<RoundRecord>>,
) -> TrackingOutcome<S> {
    let mut values: Vec<S> = targets.iter().map(|t| t.zero_like()).collect();
    let mut reference = targets[0].zero_like();
    let mean_target = mean(targets);
    let mut final_step_delta = f64::INFINITY;
    let mut tracking_rounds = 0;

    for k in 1..=max_rounds {
        let a = alpha.alpha(k);
        let next = tracking_round(&values, targets, a, topology);
        final_step_delta = values
            .iter()
            .zip(&next)
            .map(|(old, new)| old.delta(new))
            .fold(0.0, f64::max);
        values = next;
        tracking_rounds = k;
        if let Some(records) = diagnostics.as_deref_mut() {
            // Reference recursion with the network-mean target.
            let mut step = mean_target.clone();
            step.add_scaled(&reference, -1.0);
            reference.add_scaled(&step, a);
            records.push(RoundRecord {
                quantity: quantity.to_string(),
                round: k,
                delta_consensus: pairwise_deviation(&values),
                delta_mean: mean(&values).delta(&reference),
            });
        }
        if final_step_delta < step_tol {
            break;
        }
    }

    let mut polish_rounds = 0;
    if values.len() > 1 {
        for _ in 0..schedule.polish_rounds {
            if pairwise_deviation(&values) < schedule.polish_tol {
                break;
            }
            values = tracking_round(&values, targets, 0.0, topology);
            polish_rounds += 1;
            if let Some(records) = diagnostics.as_deref_mut() {
                // Averaging rounds leave the mean (and the reference) fixed.
                records.push(RoundRecord {
                    quantity: quantity.to_string(),
                    round: tracking_rounds + polish_rounds,
                    delta_consensus: pairwise_deviation(&values),
                    delta_mean: mean(&values).delta(&reference),
                });
            }
        }
    }

    let final_pairwise = pairwise_deviation(&values);
    TrackingOutcome {
        values,
        tracking_rounds,
        polish_rounds,
        final_step_delta,
        final_pairwise,
    }
}

/// Least-squares fit of `log delta_k ~ log c + k log rho` over the rounds
/// with a positive consensus deviation; `None` when fewer than two usable
/// rounds exist.
pub fn fitted_geometric_factor(records: &[RoundRecord], quantity: &str) -> Option<f64> {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.quantity == quantity && r.delta_consensus > 0.0)
        .map(|r| (r.round as f64, r.delta_consensus.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    Some(slope.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agent_line(gamma: f64) -> Topology {
        Topology::new(2, &[(0, 1)], gamma).unwrap()
    }

    #[test]
    fn fixed_point_when_everything_agrees() {
        let topo = two_agent_line(2.0);
        let g = DMatrix::from_element(1, 1, 3.0);
        let values = vec![g.clone(), g.clone()];
        let targets = vec![g.clone(), g.clone()];
        let next = tracking_round(&values, &targets, 0.5, &topo);
        for v in &next {
            assert!((v[(0, 0)] - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_agent_hand_recursion() {
        // gamma = 2, alpha_1 = 1, alpha_2 = 1/2, targets (2, 4) from zero:
        // round 1 gives (2, 4), round 2 the target mean (3, 3).
        let topo = two_agent_line(2.0);
        let targets = vec![DVector::from_element(1, 2.0), DVector::from_element(1, 4.0)];
        let zero = vec![targets[0].zero_like(), targets[1].zero_like()];
        let r1 = tracking_round(&zero, &targets, 1.0, &topo);
        assert_eq!(r1[0][0], 2.0);
        assert_eq!(r1[1][0], 4.0);
        let r2 = tracking_round(&r1, &targets, 0.5, &topo);
        assert_eq!(r2[0][0], 3.0);
        assert_eq!(r2[1][0], 3.0);
        assert_eq!(pairwise_deviation(&r2), 0.0);
    }

    #[test]
    fn huge_gamma_reduces_to_local_relaxation() {
        let topo = two_agent_line(1e12);
        let targets = vec![DVector::from_element(1, 2.0), DVector::from_element(1, 4.0)];
        let state = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)];
        let next = tracking_round(&state, &targets, 0.25, &topo);
        // X_i <- (1 - alpha) X_i + alpha g_i up to the vanishing coupling.
        assert!((next[0][0] - (0.75 + 0.25 * 2.0)).abs() < 1e-9);
        assert!((next[1][0] - (0.75 + 0.25 * 4.0)).abs() < 1e-9);
    }

    #[test]
    fn tracking_settles_on_the_target_mean() {
        let topo = Topology::ring(4, 2.5).unwrap();
        let targets: Vec<DVector<f64>> = [1.0, 2.0, 3.0, 6.0]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let schedule = IterationSchedule::default();
        let out = run_tracking(
            &targets,
            &topo,
            &AlphaRule::Harmonic,
            1e-6,
            500,
            &schedule,
            "toy",
            None,
        );
        for v in &out.values {
            assert!((v[0] - 3.0).abs() < 1e-9, "got {}", v[0]);
        }
        assert!(out.final_pairwise < schedule.polish_tol * 10.0);
    }

    #[test]
    fn polish_preserves_the_mean_exactly() {
        let topo = Topology::ring(4, 2.5).unwrap();
        let values: Vec<DVector<f64>> = [1.0, 2.0, 3.0, 6.0]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let before: f64 = values.iter().map(|v| v[0]).sum();
        let mut state = values;
        for _ in 0..50 {
            state = tracking_round(&state, &state, 0.0, &topo);
        }
        let after: f64 = state.iter().map(|v| v[0]).sum();
        assert!((before - after).abs() < 1e-12);
        assert!(pairwise_deviation(&state) < 1e-10);
    }

    #[test]
    fn single_agent_locks_on_target_and_stops() {
        let topo = Topology::new(1, &[], 2.0).unwrap();
        let targets = vec![DMatrix::from_element(2, 2, 1.5)];
        let out = run_tracking(
            &targets,
            &topo,
            &AlphaRule::Harmonic,
            1e-12,
            100,
            &IterationSchedule::default(),
            "solo",
            None,
        );
        assert_eq!(out.tracking_rounds, 2);
        assert_eq!(out.values[0], targets[0]);
    }

    #[test]
    fn geometric_factor_fit_recovers_decay() {
        let records: Vec<RoundRecord> = (1..=30)
            .map(|k| RoundRecord {
                quantity: "q".into(),
                round: k,
                delta_consensus: 5.0 * 0.6f64.powi(k as i32),
                delta_mean: 0.0,
            })
            .collect();
        let rho = fitted_geometric_factor(&records, "q").unwrap();
        assert!((rho - 0.6).abs() < 1e-6, "rho = {rho}");
    }
}
