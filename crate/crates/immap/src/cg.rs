//! Conjugate gradient for Hermitian positive-definite systems over complex
//! vectors, used to apply Sigma_t^{-1} in the likelihood gradient.

use num_complex::Complex64;

use crate::data::{hermitian_inner, norm2};
use crate::error::{ImmapError, Result};
use crate::ops::LinearOp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Optional Jacobi preconditioner: inverse diagonal of the system.
    pub jacobi: bool,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            jacobi: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
    /// Relative residual after each iteration (0 = initial).
    pub residual_history: Vec<f64>,
}

/// Solve op(x) = b for Hermitian positive-definite `op`.
///
/// Returns the best iterate with `converged=false` when `max_iter` is
/// exhausted; the caller decides whether that is fatal. `x0` warm-starts the
/// iteration when given.
pub fn cg_solve(
    op: &dyn LinearOp,
    b: &[Complex64],
    settings: &CgSettings,
    x0: Option<&[Complex64]>,
    precond_diag: Option<&[f64]>,
) -> Result<(Vec<Complex64>, CgReport)> {
    if settings.tol <= 0.0 {
        return Err(ImmapError::Domain(format!("cg tol must be > 0: {}", settings.tol)));
    }
    if settings.max_iter == 0 {
        return Err(ImmapError::Domain("cg max_iter must be >= 1".into()));
    }
    if b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(ImmapError::Numerical("cg rhs contains non-finite values".into()));
    }
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((
            vec![Complex64::new(0.0, 0.0); n],
            CgReport {
                iterations: 0,
                final_relative_residual: 0.0,
                converged: true,
                residual_history: vec![0.0],
            },
        ));
    }

    let apply_precond = |r: &[Complex64]| -> Vec<Complex64> {
        match precond_diag {
            Some(d) => r.iter().zip(d).map(|(ri, &di)| ri / di).collect(),
            None => r.to_vec(),
        }
    };

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![Complex64::new(0.0, 0.0); n],
    };
    let mut r: Vec<Complex64> = if x0.is_some() {
        let ax = op.forward(&x);
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
    } else {
        b.to_vec()
    };
    let mut z = apply_precond(&r);
    let mut p = z.clone();
    let mut rz = hermitian_inner(&r, &z)?.re;

    let mut best_x = x.clone();
    let mut best_res = norm2(&r) / b_norm;
    let mut history = vec![best_res];

    if best_res <= settings.tol {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                final_relative_residual: best_res,
                converged: true,
                residual_history: history,
            },
        ));
    }

    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..settings.max_iter {
        let ap = op.forward(&p);
        let pap = hermitian_inner(&p, &ap)?.re;
        if !pap.is_finite() || pap <= 0.0 {
            return Err(ImmapError::Numerical(format!(
                "cg breakdown: p^H A p = {pap} at iteration {iterations}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let res = norm2(&r) / b_norm;
        if !res.is_finite() {
            return Err(ImmapError::Numerical(format!(
                "cg produced non-finite residual at iteration {iterations}"
            )));
        }
        history.push(res);
        if res < best_res {
            best_res = res;
            best_x.copy_from_slice(&x);
        }
        if res <= settings.tol {
            converged = true;
            break;
        }
        z = apply_precond(&r);
        let rz_new = hermitian_inner(&r, &z)?.re;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let (x_out, res_out) = if converged { (x, *history.last().unwrap()) } else { (best_x, best_res) };
    Ok((
        x_out,
        CgReport {
            iterations,
            final_relative_residual: res_out,
            converged,
            residual_history: history,
        },
    ))
}

pub mod dense {
    //! Dense complex Gaussian-elimination solver. Used as an independent
    //! oracle in tests; not part of the reconstruction path.
    use num_complex::Complex64;

    /// Solve the dense system M x = b by Gaussian elimination with partial
    /// pivoting. M is row-major n x n.
    pub fn solve_dense(m: &[Vec<Complex64>], b: &[Complex64]) -> Vec<Complex64> {
        let n = b.len();
        let mut a = m.to_vec();
        let mut rhs = b.to_vec();
        for k in 0..n {
            let (piv, _) = (k..n)
                .map(|i| (i, a[i][k].norm()))
                .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
                .unwrap();
            a.swap(k, piv);
            rhs.swap(k, piv);
            let (pivot_rows, rest) = a.split_at_mut(k + 1);
            let pk = &pivot_rows[k][k..];
            let akk = pk[0];
            let rk = rhs[k];
            for (row, ri) in rest.iter_mut().zip(rhs[k + 1..].iter_mut()) {
                let f = row[k] / akk;
                for (aij, akj) in row[k..].iter_mut().zip(pk) {
                    *aij -= f * akj;
                }
                *ri -= f * rk;
            }
        }
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for k in (0..n).rev() {
            let mut s = rhs[k];
            for j in (k + 1)..n {
                s -= a[k][j] * x[j];
            }
            x[k] = s / a[k][k];
        }
        x
    }
}
