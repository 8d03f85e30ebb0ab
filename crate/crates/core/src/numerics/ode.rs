use nalgebra::{DMatrix, DVector};

use super::{MatrixTrajectory, TimeGrid, VectorTrajectory};
use crate::{Error, Result};

/// Direction of integration. `Forward` fixes the boundary value at `t_start`,
/// `Backward` at `t_end`; samples are returned at every grid node either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

macro_rules! rk4_step {
    ($rhs:expr, $t:expr, $y:expr, $h:expr) => {{
        let k1 = $rhs($t, $y);
        let k2 = $rhs($t + 0.5 * $h, &($y + &k1 * (0.5 * $h)));
        let k3 = $rhs($t + 0.5 * $h, &($y + &k2 * (0.5 * $h)));
        let k4 = $rhs($t + $h, &($y + &k3 * $h));
        $y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * ($h / 6.0)
    }};
}

/// Classical fixed-step RK4 for a matrix ODE on a uniform grid.
pub fn integrate_matrix_ode<F>(
    rhs: F,
    boundary_value: DMatrix<f64>,
    grid: TimeGrid,
    direction: Direction,
) -> Result<MatrixTrajectory>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let n = grid.num_steps();
    let h = grid.step();
    let mut samples = vec![DMatrix::zeros(boundary_value.nrows(), boundary_value.ncols()); n + 1];
    match direction {
        Direction::Forward => {
            samples[0] = boundary_value;
            for i in 0..n {
                let t = grid.node(i);
                samples[i + 1] = rk4_step!(&rhs, t, &samples[i], h);
                check_finite_mat(&samples[i + 1], i + 1, grid.node(i + 1))?;
            }
        }
        Direction::Backward => {
            samples[n] = boundary_value;
            for i in (1..=n).rev() {
                let t = grid.node(i);
                samples[i - 1] = rk4_step!(&rhs, t, &samples[i], -h);
                check_finite_mat(&samples[i - 1], i - 1, grid.node(i - 1))?;
            }
        }
    }
    MatrixTrajectory::from_samples(grid, samples)
}

/// RK4 for a vector ODE; same contract as [`integrate_matrix_ode`].
pub fn integrate_vector_ode<F>(
    rhs: F,
    boundary_value: DVector<f64>,
    grid: TimeGrid,
    direction: Direction,
) -> Result<VectorTrajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let n = grid.num_steps();
    let h = grid.step();
    let mut samples = vec![DVector::zeros(boundary_value.len()); n + 1];
    match direction {
        Direction::Forward => {
            samples[0] = boundary_value;
            for i in 0..n {
                let t = grid.node(i);
                samples[i + 1] = rk4_step!(&rhs, t, &samples[i], h);
                check_finite_vec(&samples[i + 1], i + 1, grid.node(i + 1))?;
            }
        }
        Direction::Backward => {
            samples[n] = boundary_value;
            for i in (1..=n).rev() {
                let t = grid.node(i);
                samples[i - 1] = rk4_step!(&rhs, t, &samples[i], -h);
                check_finite_vec(&samples[i - 1], i - 1, grid.node(i - 1))?;
            }
        }
    }
    VectorTrajectory::from_samples(grid, samples)
}

fn check_finite_mat(m: &DMatrix<f64>, node: usize, time: f64) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationDiverged { node, time })
    }
}

fn check_finite_vec(v: &DVector<f64>, node: usize, time: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationDiverged { node, time })
    }
}

/// Composite-Simpson node weights for a uniform grid with `num_steps`
/// intervals of width `h`. Falls back to a 3/8 block on the trailing three
/// intervals when `num_steps` is odd.
pub fn quadrature_weights(num_steps: usize, h: f64) -> Vec<f64> {
    assert!(num_steps >= 2, "quadrature needs at least 2 intervals");
    let mut w = vec![0.0; num_steps + 1];
    let simpson_end = if num_steps % 2 == 0 {
        num_steps
    } else {
        num_steps - 3
    };
    if simpson_end > 0 {
        w[0] += h / 3.0;
        w[simpson_end] += h / 3.0;
        for i in 1..simpson_end {
            w[i] += if i % 2 == 1 {
                4.0 * h / 3.0
            } else {
                2.0 * h / 3.0
            };
        }
    }
    if simpson_end < num_steps {
        // 3/8 rule on the last three intervals.
        let c = 3.0 * h / 8.0;
        w[simpson_end] += c;
        w[simpson_end + 1] += 3.0 * c;
        w[simpson_end + 2] += 3.0 * c;
        w[simpson_end + 3] += c;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_rhs_keeps_boundary() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let traj = integrate_matrix_ode(
            |_, m| DMatrix::zeros(m.nrows(), m.ncols()),
            DMatrix::identity(3, 3),
            grid,
            Direction::Forward,
        )
        .unwrap();
        for s in traj.samples() {
            assert_eq!(s, &DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn exponential_growth_matches_closed_form() {
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let traj =
            integrate_matrix_ode(|_, m| m.clone(), scalar(1.0), grid, Direction::Forward).unwrap();
        let e = traj.node(1000)[(0, 0)];
        assert!((e - std::f64::consts::E).abs() < 1e-9, "got {e}");
    }

    #[test]
    fn scalar_riccati_backward_matches_tanh() {
        // dP/dt = -1 + P^2 with P(1) = 0 has P(t) = tanh(1 - t).
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let traj = integrate_matrix_ode(
            |_, p| scalar(-1.0 + p[(0, 0)] * p[(0, 0)]),
            scalar(0.0),
            grid,
            Direction::Backward,
        )
        .unwrap();
        let p0 = traj.node(0)[(0, 0)];
        assert!((p0 - 1.0f64.tanh()).abs() < 1e-6, "P(0) = {p0}");
        for (i, s) in traj.samples().iter().enumerate() {
            let t = grid.node(i);
            assert!((s[(0, 0)] - (1.0 - t).tanh()).abs() < 1e-6);
        }
    }

    #[test]
    fn rk4_is_fourth_order_on_the_tanh_test() {
        let err = |steps: usize| {
            let grid = TimeGrid::new(1.0, steps).unwrap();
            let traj = integrate_matrix_ode(
                |_, p| scalar(-1.0 + p[(0, 0)] * p[(0, 0)]),
                scalar(0.0),
                grid,
                Direction::Backward,
            )
            .unwrap();
            traj.samples()
                .iter()
                .enumerate()
                .map(|(i, s)| (s[(0, 0)] - (1.0 - grid.node(i)).tanh()).abs())
                .fold(0.0, f64::max)
        };
        let coarse = err(20);
        let fine = err(40);
        assert!(
            coarse / fine >= 12.0,
            "halving h only reduced the error by {:.1}x",
            coarse / fine
        );
    }

    #[test]
    fn divergence_is_reported_with_node() {
        let grid = TimeGrid::new(10.0, 100).unwrap();
        // dP/dt = P^2 from P(0) = 1 blows up at t = 1.
        let res = integrate_matrix_ode(
            |_, p| scalar(p[(0, 0)] * p[(0, 0)]),
            scalar(1.0),
            grid,
            Direction::Forward,
        );
        match res {
            Err(Error::IntegrationDiverged { node, .. }) => assert!(node > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn vector_ode_backward_matches_matrix_path() {
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let vt = integrate_vector_ode(
            |_, v: &DVector<f64>| -v.clone(),
            DVector::from_element(2, 1.0),
            grid,
            Direction::Backward,
        )
        .unwrap();
        // Backward from v(1) = 1 under vdot = -v gives v(t) = e^(1 - t).
        let v0 = vt.node(0)[0];
        assert!((v0 - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn quadrature_weights_integrate_cubics_exactly() {
        for steps in [2usize, 3, 4, 5, 7, 10, 11] {
            let h = 1.0 / steps as f64;
            let w = quadrature_weights(steps, h);
            let integral: f64 = w
                .iter()
                .enumerate()
                .map(|(i, wi)| {
                    let t = i as f64 * h;
                    wi * (t * t * t - 2.0 * t + 1.0)
                })
                .sum();
            // Exact integral of t^3 - 2t + 1 on [0, 1] is 1/4.
            assert!((integral - 0.25).abs() < 1e-13, "steps={steps}: {integral}");
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
    }
}
