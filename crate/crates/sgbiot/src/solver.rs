//! Preconditioned MINRES for the symmetric indefinite Galerkin system.
//!
//! Standard two-term-recurrence implementation with a zero initial guess.
//! The monitored quantity is the Lanczos residual norm sqrt(r^T P^-1 r)
//! relative to its initial value; convergence at tolerance `tol` is
//! confirmed by one final true-residual evaluation.

use std::time::Instant;

use crate::precond::BlockPreconditioner;
use crate::system::{SgOperator, SgVector};
use crate::{Error, Result};

/// Outcome of one linear solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// relative preconditioned residual per iteration, starting at 1
    pub residual_history: Vec<f64>,
    /// recomputed from the returned iterate, same relative scaling
    pub true_relative_residual: f64,
    pub wall_seconds: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves K x = b with relative tolerance `tol` on the preconditioned
/// residual, at most `maxit` iterations, zero initial guess.
pub fn minres_solve(
    op: &SgOperator,
    p: &BlockPreconditioner,
    rhs: &SgVector,
    tol: f64,
    maxit: usize,
) -> Result<(SgVector, SolveReport)> {
    if !(tol > 0.0) {
        return Err(Error::Solver(format!("tolerance must be positive, got {tol}")));
    }
    let start = Instant::now();
    let dims = rhs.dims;
    let mut x = SgVector::zeros(dims);

    let mut v = rhs.clone();
    let mut v_prev = SgVector::zeros(dims);
    let mut v_next = SgVector::zeros(dims);
    let mut z_next = SgVector::zeros(dims);
    let mut z = p.solve(&v);
    let gamma0 = dot(&z.data, &v.data);
    if gamma0.is_nan() {
        return Err(Error::Solver("preconditioned residual is NaN".into()));
    }
    let mut gamma = gamma0.max(0.0).sqrt();
    if gamma == 0.0 {
        // zero right-hand side: the zero vector is the solution
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                converged: true,
                residual_history: vec![0.0],
                true_relative_residual: 0.0,
                wall_seconds: start.elapsed().as_secs_f64(),
            },
        ));
    }
    let norm_b = gamma;
    let mut gamma_old = 1.0;
    let mut eta = gamma;
    let (mut s_old, mut s) = (0.0f64, 0.0f64);
    let (mut c_old, mut c) = (1.0f64, 1.0f64);
    let mut w = SgVector::zeros(dims);
    let mut w_old = SgVector::zeros(dims);
    let mut history = vec![1.0f64];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 1..=maxit {
        for zi in &mut z.data {
            *zi /= gamma;
        }
        op.apply(&z, &mut v_next);
        let delta = dot(&z.data, &v_next.data);
        // v_next = A z - (delta/gamma) v - (gamma/gamma_old) v_prev
        let a1 = delta / gamma;
        let a2 = gamma / gamma_old;
        for i in 0..v_next.data.len() {
            v_next.data[i] -= a1 * v.data[i] + a2 * v_prev.data[i];
        }
        p.solve_into(&v_next, &mut z_next);
        let gamma_next_sq = dot(&z_next.data, &v_next.data);
        if gamma_next_sq.is_nan() || delta.is_nan() {
            return Err(Error::Solver("NaN encountered in the Lanczos recurrence".into()));
        }
        let gamma_next = gamma_next_sq.max(0.0).sqrt();

        let alpha0 = c * delta - c_old * s * gamma;
        let alpha1 = (alpha0 * alpha0 + gamma_next * gamma_next).sqrt();
        let alpha2 = s * delta + c_old * c * gamma;
        let alpha3 = s_old * gamma;
        if alpha1 == 0.0 {
            return Err(Error::Solver("MINRES breakdown: zero Givens denominator".into()));
        }
        let c_next = alpha0 / alpha1;
        let s_next = gamma_next / alpha1;
        // z becomes the new search direction: (z - alpha3 w_old - alpha2 w) / alpha1
        for i in 0..z.data.len() {
            z.data[i] = (z.data[i] - alpha3 * w_old.data[i] - alpha2 * w.data[i]) / alpha1;
        }
        let step = c_next * eta;
        for i in 0..x.data.len() {
            x.data[i] += step * z.data[i];
        }
        eta = -s_next * eta;
        iterations += 1;
        let relres = eta.abs() / norm_b;
        history.push(relres);
        if relres <= tol {
            converged = true;
            break;
        }
        if gamma_next == 0.0 {
            // Krylov space exhausted with a residual above tolerance
            return Err(Error::Solver(
                "MINRES breakdown: zero Lanczos beta with nonzero residual".into(),
            ));
        }
        // rotate state; the retired buffers become next iteration's scratch
        std::mem::swap(&mut w_old, &mut w);
        std::mem::swap(&mut w, &mut z);
        std::mem::swap(&mut v_prev, &mut v);
        std::mem::swap(&mut v, &mut v_next);
        std::mem::swap(&mut z, &mut z_next);
        gamma_old = gamma;
        gamma = gamma_next;
        s_old = s;
        s = s_next;
        c_old = c;
        c = c_next;
    }

    // confirm with the true residual
    let kx = op.apply_new(&x);
    let mut r = rhs.clone();
    for i in 0..r.data.len() {
        r.data[i] -= kx.data[i];
    }
    let zr = p.solve(&r);
    let true_rel = dot(&zr.data, &r.data).max(0.0).sqrt() / norm_b;

    Ok((
        x,
        SolveReport {
            iterations,
            converged,
            residual_history: history,
            true_relative_residual: true_rel,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
