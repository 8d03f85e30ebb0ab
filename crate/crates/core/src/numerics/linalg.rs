use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance below which an eigenvalue pair sum `|l_i + l_j|` makes
/// the Lyapunov operator count as singular.
pub const LYAPUNOV_PAIR_TOL: f64 = 1e-9;

/// `e^{M t}` via nalgebra's Padé scaling-and-squaring.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(
            "matrix exponential of non-finite input".into(),
        ));
    }
    Ok((m * t).exp())
}

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// `rank_tol * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u requested");
    let v_t = svd.v_t.as_ref().expect("svd with v_t requested");
    let sigma_max = svd.singular_values.max();
    let cut = rank_tol * sigma_max;
    let mut inv_s = DMatrix::zeros(v_t.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            inv_s[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * inv_s * u.transpose()
}

/// Solves `Z' P + P Z + V = 0` through the vectorized Kronecker system.
///
/// Fails when some eigenvalue pair of `Z` satisfies `l_i + l_j ~ 0`, which
/// makes the operator singular; use [`solve_lyapunov_deflated`] when such
/// pairs are structural and a minimum-norm solution is wanted.
pub fn solve_lyapunov(z: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    if z.ncols() != n || v.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "lyapunov solve needs square Z and matching V, got Z {}x{} V {}x{}",
            z.nrows(),
            z.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let eigs = z.complex_eigenvalues();
    let scale = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let tol = LYAPUNOV_PAIR_TOL * (1.0 + scale);
    for i in 0..n {
        for j in i..n {
            let pair = eigs[i] + eigs[j];
            if pair.norm() < tol {
                return Err(Error::NonSolvableLyapunov {
                    pair_sum: pair.norm(),
                    tol,
                });
            }
        }
    }
    let zt = z.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(Z'P) = (I (x) Z') vec(P), vec(PZ) = (Z' (x) I) vec(P).
    let op = eye.kronecker(&zt) + zt.kronecker(&eye);
    let rhs = DVector::from_column_slice((-v).as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("kronecker lyapunov system is singular".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&p))
}

/// Bartels-Stewart solve of `Z' P + P Z + V = 0` on the real Schur form,
/// replacing near-singular diagonal-block subsystems (eigenvalue pairs with
/// `|l_i + l_j|` under `deflate_tol * (1 + |Z|)`) by their minimum-norm
/// least-squares solution. Returns the solution and the number of deflated
/// block subsystems; with zero deflations the result solves the equation
/// exactly (up to roundoff).
pub fn solve_lyapunov_deflated(
    z: &DMatrix<f64>,
    v: &DMatrix<f64>,
    deflate_tol: f64,
) -> Result<(DMatrix<f64>, usize)> {
    let n = z.nrows();
    if z.ncols() != n || v.shape() != (n, n) {
        return Err(Error::Dimension(
            "lyapunov solve needs square Z and matching V".into(),
        ));
    }
    let schur = z
        .clone()
        .try_schur(1e-13, 10_000)
        .ok_or_else(|| Error::Degenerate("schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let c = q.transpose() * v * &q;

    // Diagonal block boundaries of the quasi-triangular factor.
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let sub_tol = 1e-12 * (1.0 + t.norm());
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > sub_tol {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }

    let cut = deflate_tol * (1.0 + t.norm());
    let mut y = DMatrix::<f64>::zeros(n, n);
    let mut deflated = 0usize;
    for (bi, &(ri, si)) in blocks.iter().enumerate() {
        for (bj, &(rj, sj)) in blocks.iter().enumerate() {
            let t_ii = t.view((ri, ri), (si, si)).into_owned();
            let t_jj = t.view((rj, rj), (sj, sj)).into_owned();
            // RHS accumulates already-solved blocks of the same row/column.
            let mut rhs = -c.view((ri, rj), (si, sj)).into_owned();
            for &(rk, sk) in blocks.iter().take(bi) {
                let t_ki = t.view((rk, ri), (sk, si)).into_owned();
                let y_kj = y.view((rk, rj), (sk, sj)).into_owned();
                rhs -= t_ki.transpose() * y_kj;
            }
            for &(rk, sk) in blocks.iter().take(bj) {
                let y_ik = y.view((ri, rk), (si, sk)).into_owned();
                let t_kj = t.view((rk, rj), (sk, sj)).into_owned();
                rhs -= y_ik * t_kj;
            }
            // Small Sylvester system T_ii' Y + Y T_jj = rhs.
            let eye_i = DMatrix::<f64>::identity(si, si);
            let eye_j = DMatrix::<f64>::identity(sj, sj);
            let op = eye_j.kronecker(&t_ii.transpose()) + t_jj.transpose().kronecker(&eye_i);
            let b = DVector::from_column_slice(rhs.as_slice());
            let svd = op.clone().svd(true, true);
            if svd.singular_values.min() < cut {
                deflated += 1;
            }
            let sol = {
                let u = svd.u.as_ref().unwrap();
                let v_t = svd.v_t.as_ref().unwrap();
                let mut coef = u.transpose() * &b;
                for (k, &s) in svd.singular_values.iter().enumerate() {
                    coef[k] = if s > cut { coef[k] / s } else { 0.0 };
                }
                v_t.transpose() * coef
            };
            y.view_mut((ri, rj), (si, sj))
                .copy_from(&DMatrix::from_column_slice(si, sj, sol.as_slice()));
        }
    }
    let p = &q * y * q.transpose();
    Ok((p, deflated))
}

/// True iff the minimum eigenvalue of `P1 - P2` is at least `-slack`.
pub fn psd_order_holds(p1: &DMatrix<f64>, p2: &DMatrix<f64>, slack: f64) -> bool {
    let diff = symmetrize(&(p1 - p2));
    min_symmetric_eigenvalue(&diff) >= -slack
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigen().eigenvalues.min()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Largest real part over the eigenvalues.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Symmetric PSD square root via eigendecomposition.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sqrt_with(m, |l| l.max(0.0).sqrt())
}

/// Inverse symmetric square root; requires a positive-definite input.
pub fn symmetric_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let min = min_symmetric_eigenvalue(m);
    if min <= 0.0 {
        return Err(Error::Parameter(format!(
            "inverse square root needs a positive-definite matrix, min eigenvalue {min:.3e}"
        )));
    }
    sqrt_with(m, |l| 1.0 / l.sqrt())
}

fn sqrt_with(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let n = m.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = f(eig.eigenvalues[i]);
    }
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}
