//! Block-diagonal parameter-robust preconditioner.
//!
//! The preconditioner is the discrete representation of the weighted norm in
//! which the five-field problem is stable: one sparse SPD matrix per
//! variable block, scaled by parameter-dependent multipliers and applied
//! identically to every chaos mode. Four factorizations are computed once
//! and reused for every application:
//!
//! * `AA = 2 (A11^0 + A22^0) / 3`, the mean-weighted scalar stiffness on Q2,
//! * `Ctilde_0`, the mean-weighted Q1 mass,
//! * `S1 = (alpha^2/lambda_t + s0_t) Cbar_b + D_0` on the pressure space,
//! * `Cbar`, the reciprocal-mean-weighted Q1 mass.

use rayon::join;

use crate::assembly::FemBlocks;
use crate::sparse::{Csr, LdltFactor};
use crate::system::{Field, PhysicalParams, SgVector};
use crate::{Error, Result};

/// Factorized blocks plus the scalar multipliers of the weighted norm.
pub struct BlockPreconditioner {
    a_hat: LdltFactor,
    ctilde0: LdltFactor,
    s1: LdltFactor,
    cbar: LdltFactor,
    // retained for multiplication (energy norm evaluation)
    a_hat_mat: Csr,
    ctilde0_mat: Csr,
    s1_mat: Csr,
    cbar_mat: Csr,
    mu_t: f64,
    lambda_inv: f64,
    s0_t: f64,
    pt_coef: f64,
}

/// Builds the preconditioner from assembled blocks and parameters.
///
/// Fails naming the offending block if any of the four matrices is not
/// positive definite.
pub fn build_preconditioner(fem: &FemBlocks, params: &PhysicalParams) -> Result<BlockPreconditioner> {
    let mu_t = params.mu_tilde();
    let lambda_inv = params.lambda_tilde_inv();
    let s0_t = params.s0_tilde();
    let pf_coef = params.alpha * params.alpha * lambda_inv + s0_t;
    let pt_coef = 1.0 / mu_t + lambda_inv;

    let a_hat_mat = fem
        .a11
        .mode(0)
        .linear_combination(2.0 / 3.0, &fem.a22.mode(0), 2.0 / 3.0)?;
    let s1_mat = scaled_sum(&fem.cbar_b, pf_coef, &fem.d.mode(0), 1.0);
    let ctilde0_mat = fem.ctilde.mode(0);
    let cbar_mat = fem.cbar.clone();

    let factor = |m: &Csr, order: &[usize], block: &'static str| {
        LdltFactor::new(m, Some(order)).map_err(|pivot| Error::Factorization { block, pivot })
    };
    let a_hat = factor(&a_hat_mat, &fem.q2_free_order, "displacement stiffness")?;
    let ctilde0 = factor(&ctilde0_mat, &fem.q1_all_order, "weighted mass")?;
    let s1 = factor(&s1_mat, &fem.q1_free_order, "fluid pressure block")?;
    let cbar = factor(&cbar_mat, &fem.q1_all_order, "total pressure mass")?;
    Ok(BlockPreconditioner {
        a_hat,
        ctilde0,
        s1,
        cbar,
        a_hat_mat,
        ctilde0_mat,
        s1_mat,
        cbar_mat,
        mu_t,
        lambda_inv,
        s0_t,
        pt_coef,
    })
}

/// General sparse sum alpha*a + beta*b for possibly different patterns.
fn scaled_sum(a: &Csr, alpha: f64, b: &Csr, beta: f64) -> Csr {
    let mut tri = Vec::with_capacity(a.nnz() + b.nnz());
    for i in 0..a.nrows {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            tri.push((i, c, alpha * v));
        }
    }
    for i in 0..b.nrows {
        let (cols, vals) = b.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            tri.push((i, c, beta * v));
        }
    }
    Csr::from_triplets(a.nrows, a.ncols, &tri)
}

impl BlockPreconditioner {
    /// z = P^-1 r: independent factorized solves per variable block, each
    /// applied to all chaos modes at once.
    pub fn solve(&self, r: &SgVector) -> SgVector {
        let mut z = SgVector::zeros(r.dims);
        self.solve_into(r, &mut z);
        z
    }

    /// In-place variant of [`BlockPreconditioner::solve`].
    pub fn solve_into(&self, r: &SgVector, z: &mut SgVector) {
        assert_eq!(r.dims, z.dims);
        z.data.copy_from_slice(&r.data);
        let ny = z.dims.n_y;
        let dims = z.dims;
        let data = &mut z.data;
        let (u1, rest) = data.split_at_mut(dims.offset(Field::U2));
        let (u2, rest) = rest.split_at_mut(dims.offset(Field::P1) - dims.offset(Field::U2));
        let (p1, rest) = rest.split_at_mut(dims.offset(Field::P2) - dims.offset(Field::P1));
        let (p2, rest) = rest.split_at_mut(dims.offset(Field::Pf) - dims.offset(Field::P2));
        let (pf, pt) = rest.split_at_mut(dims.offset(Field::Pt) - dims.offset(Field::Pf));

        join(
            || {
                join(
                    || {
                        self.a_hat.solve_block(u1, ny);
                        scale(u1, 1.0 / self.mu_t);
                    },
                    || {
                        self.a_hat.solve_block(u2, ny);
                        scale(u2, 1.0 / self.mu_t);
                    },
                )
            },
            || {
                join(
                    || {
                        self.ctilde0.solve_block(p1, ny);
                        scale(p1, 1.0 / self.lambda_inv);
                        self.ctilde0.solve_block(p2, ny);
                        scale(p2, 1.0 / self.s0_t);
                    },
                    || {
                        self.s1.solve_block(pf, ny);
                        self.cbar.solve_block(pt, ny);
                        scale(pt, 1.0 / self.pt_coef);
                    },
                )
            },
        );
    }

    /// y = P x (multiplication by the norm matrix, not its inverse).
    pub fn multiply(&self, x: &SgVector) -> SgVector {
        let mut y = SgVector::zeros(x.dims);
        let ny = x.dims.n_y;
        let pairs: [(Field, &Csr, f64); 6] = [
            (Field::U1, &self.a_hat_mat, self.mu_t),
            (Field::U2, &self.a_hat_mat, self.mu_t),
            (Field::P1, &self.ctilde0_mat, self.lambda_inv),
            (Field::P2, &self.ctilde0_mat, self.s0_t),
            (Field::Pf, &self.s1_mat, 1.0),
            (Field::Pt, &self.cbar_mat, self.pt_coef),
        ];
        for (f, m, coef) in pairs {
            let src = x.block(f);
            let dst = y.block_mut(f);
            // row-major multi-RHS product
            for i in 0..m.nrows {
                let (cols, vals) = m.row(i);
                let out = &mut dst[i * ny..(i + 1) * ny];
                for (&c, &v) in cols.iter().zip(vals) {
                    let xr = &src[c * ny..c * ny + ny];
                    for (o, s) in out.iter_mut().zip(xr) {
                        *o += coef * v * s;
                    }
                }
            }
        }
        y
    }

    /// The norm induced by the preconditioner: sqrt(x^T P x).
    pub fn energy_norm(&self, x: &SgVector) -> f64 {
        let px = self.multiply(x);
        x.dot(&px).max(0.0).sqrt()
    }
}

fn scale(v: &mut [f64], s: f64) {
    for x in v {
        *x *= s;
    }
}
