use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Uniform time grid on `[0, T]` with `num_steps` intervals, i.e.
/// `num_steps + 1` nodes spaced `h = T / num_steps` apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    num_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, num_steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Parameter(format!(
                "grid end time must be positive and finite, got {t_end}"
            )));
        }
        if num_steps < 2 {
            return Err(Error::Parameter(format!(
                "grid needs at least 2 steps, got {num_steps}"
            )));
        }
        Ok(Self {
            t_start: 0.0,
            t_end,
            num_steps,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_nodes(&self) -> usize {
        self.num_steps + 1
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t_start) / self.num_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.num_steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.step()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_nodes()).map(move |i| self.node(i))
    }

    /// Index of the node at or just below `t`, clamped so that `idx + 1` is
    /// always a valid node.
    fn bracket(&self, t: f64) -> (usize, f64) {
        let h = self.step();
        let raw = ((t - self.t_start) / h).floor();
        let idx = (raw.max(0.0) as usize).min(self.num_steps - 1);
        let w = ((t - self.node(idx)) / h).clamp(0.0, 1.0);
        (idx, w)
    }
}

/// Square-matrix-valued function of time sampled on a [`TimeGrid`].
/// Evaluation between nodes is linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTrajectory {
    grid: TimeGrid,
    samples: Vec<DMatrix<f64>>,
}

impl MatrixTrajectory {
    pub fn from_samples(grid: TimeGrid, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() != grid.num_nodes() {
            return Err(Error::Dimension(format!(
                "trajectory needs {} samples, got {}",
                grid.num_nodes(),
                samples.len()
            )));
        }
        let shape = samples[0].shape();
        if samples.iter().any(|s| s.shape() != shape) {
            return Err(Error::Dimension(
                "trajectory samples must share one shape".into(),
            ));
        }
        Ok(Self { grid, samples })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> DMatrix<f64>) -> Self {
        let samples = grid.times().map(f).collect();
        Self { grid, samples }
    }

    pub fn constant(grid: TimeGrid, m: DMatrix<f64>) -> Self {
        let samples = vec![m; grid.num_nodes()];
        Self { grid, samples }
    }

    pub fn zeros(grid: TimeGrid, nrows: usize, ncols: usize) -> Self {
        Self::constant(grid, DMatrix::zeros(nrows, ncols))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn node(&self, i: usize) -> &DMatrix<f64> {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.samples
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples[0].shape()
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let (idx, w) = self.grid.bracket(t);
        if w == 0.0 {
            self.samples[idx].clone()
        } else {
            &self.samples[idx] * (1.0 - w) + &self.samples[idx + 1] * w
        }
    }

    /// Max over grid nodes of the Frobenius norm of `self - other`.
    pub fn max_node_delta(&self, other: &Self) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_node_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }
}

/// Vector-valued function of time sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTrajectory {
    grid: TimeGrid,
    samples: Vec<DVector<f64>>,
}

impl VectorTrajectory {
    pub fn from_samples(grid: TimeGrid, samples: Vec<DVector<f64>>) -> Result<Self> {
        if samples.len() != grid.num_nodes() {
            return Err(Error::Dimension(format!(
                "trajectory needs {} samples, got {}",
                grid.num_nodes(),
                samples.len()
            )));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::Dimension(
                "trajectory samples must share one dimension".into(),
            ));
        }
        Ok(Self { grid, samples })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let samples = grid.times().map(f).collect();
        Self { grid, samples }
    }

    pub fn constant(grid: TimeGrid, v: DVector<f64>) -> Self {
        let samples = vec![v; grid.num_nodes()];
        Self { grid, samples }
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self::constant(grid, DVector::zeros(dim))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn node(&self, i: usize) -> &DVector<f64> {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.samples
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let (idx, w) = self.grid.bracket(t);
        if w == 0.0 {
            self.samples[idx].clone()
        } else {
            &self.samples[idx] * (1.0 - w) + &self.samples[idx + 1] * w
        }
    }

    pub fn max_node_delta(&self, other: &Self) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_node_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }
}
