//! Extremal singular values through the Gram matrix.
//!
//! Both routes work on the `k × k` Gram matrix of the short side: the full
//! spectrum comes from cyclic Jacobi rotations, the spectral norm from power
//! iteration. The two are independent and are cross-checked in tests.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, norm, Matrix};
use crate::linalg::rng::RngState;

/// Sweep cap for the Jacobi eigensolver.
pub const MAX_JACOBI_SWEEPS: usize = 100;
/// Iteration cap for power iteration.
pub const MAX_POWER_ITERATIONS: usize = 10_000;
/// Relative change of the Rayleigh quotient at which power iteration stops.
pub const RAYLEIGH_TOLERANCE: f64 = 1e-12;

/// Eigenvalues of a symmetric positive semi-definite matrix, ascending.
///
/// Cyclic Jacobi with the relative skip rule `|a_pq| ≤ ε·sqrt(|a_pp a_qq|)`;
/// converged once a full sweep performs no rotation.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::InvalidDimension(format!(
            "eigenvalues of a non-square {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let mut m = a.as_slice().to_vec();
    const EPS: f64 = 1e-16;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                if apq.abs() <= EPS * (app * aqq).abs().sqrt() {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let kp = m[k * n + p];
                    let kq = m[k * n + q];
                    m[k * n + p] = c * kp - s * kq;
                    m[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let pk = m[p * n + k];
                    let qk = m[q * n + k];
                    m[p * n + k] = c * pk - s * qk;
                    m[q * n + k] = s * pk + c * qk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
            }
        }
        if !rotated {
            let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
            eig.sort_by(f64::total_cmp);
            return Ok(eig);
        }
    }
    let off = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i * n + j].powi(2))
        .sum::<f64>()
        .sqrt();
    Err(Error::Convergence {
        iterations: MAX_JACOBI_SWEEPS,
        residual: off,
    })
}

/// Singular values of a wide matrix (`rows ≤ cols`), ascending.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() > m.cols() {
        return Err(Error::InvalidDimension(format!(
            "expected rows <= cols, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(symmetric_eigenvalues(&m.gram_rows())?
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect())
}

/// `(σ_k, σ_max)` for a `k × m` matrix with `k ≤ m`.
///
/// `σ_k` is the smallest of the `k` singular values, which is the largest `c`
/// such that the image of the unit ball contains the radius-`c` ball.
pub fn extremal_singular_values(m: &Matrix) -> Result<(f64, f64)> {
    let sv = singular_values(m)?;
    Ok((sv[0], sv[sv.len() - 1]))
}

/// Largest singular value by power iteration on the Gram matrix of the short
/// side.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    let gram = if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.transpose().gram_rows()
    };
    let n = gram.rows();
    let mut g = RngState::new(0x5eed_5eed, 0).generator();
    let mut v: Vec<f64> = (0..n).map(|_| g.standard_normal()).collect();
    let v_norm = norm(&v);
    v.iter_mut().for_each(|x| *x /= v_norm);

    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_POWER_ITERATIONS {
        let w = gram.mul_vec(&v);
        let rq = dot(&v, &w);
        let w_norm = norm(&w);
        if w_norm == 0.0 {
            return Ok(0.0);
        }
        residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - rq * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        let converged = (rq - lambda).abs() <= RAYLEIGH_TOLERANCE * rq.abs();
        lambda = rq;
        if converged {
            return Ok(lambda.max(0.0).sqrt());
        }
        v = w.into_iter().map(|x| x / w_norm).collect();
    }
    Err(Error::Convergence {
        iterations: MAX_POWER_ITERATIONS,
        residual,
    })
}
