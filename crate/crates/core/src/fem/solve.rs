//! Jacobi-preconditioned conjugate gradients for SPD systems.

use super::SparseMatrix;
use crate::error::{Error, Result};

pub struct PcgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` for SPD `A` to the requested relative residual
/// (`|Ax - b| / |b| <= tol`). Deterministic; iteration cap is `10 * n`.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    pcg(a, b, None, tol, 10 * a.dimension.max(1)).map(|o| o.solution)
}

/// Preconditioned CG with an optional warm start.
pub fn pcg(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<PcgOutcome> {
    let n = a.dimension;
    assert_eq!(b.len(), n, "rhs length mismatch");
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(PcgOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| {
            if d > 0.0 {
                1.0 / d
            } else {
                1.0 // fall back to the unpreconditioned direction
            }
        })
        .collect();

    let mut x = match x0 {
        Some(x0) => {
            assert_eq!(x0.len(), n);
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut res = norm(&r) / b_norm;
    if res <= tol {
        return Ok(PcgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: res,
        });
    }
    for iter in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap.is_finite() && pap > 0.0) {
            return Err(Error::SolverDiverged {
                iterations: iter,
                achieved: res,
                tol,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / b_norm;
        if res <= tol {
            return Ok(PcgOutcome {
                solution: x,
                iterations: iter,
                relative_residual: res,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged {
        iterations: max_iter,
        achieved: res,
        tol,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
