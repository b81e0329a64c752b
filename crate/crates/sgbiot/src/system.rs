//! The global saddle-point operator of the stochastic Galerkin system.
//!
//! Unknowns are ordered by physical variable (u1, u2, p1, p2 | p_F, p_T),
//! then chaos mode, then spatial degree of freedom. The operator is the
//! symmetric indefinite matrix [[A, B^T], [B, -C]] built from Kronecker
//! products of parametric coupling matrices with spatial FEM blocks; no
//! Kronecker product is ever materialized. Internally each variable block is
//! kept as a row-major (spatial x chaos) coefficient matrix so the kernels
//! stream contiguous rows.

use std::sync::Arc;

use crate::assembly::FemBlocks;
use crate::sparse::{apply_kron_sum, ModeFamily};
use crate::stochastic::GMatrix;
use crate::{Error, Result};

/// Rescaled material constants and the storage coefficient rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub nu: f64,
    pub alpha: f64,
    pub storage: StorageCoefficient,
}

/// How the rescaled storage coefficient is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StorageCoefficient {
    /// alpha^2 / lambda_tilde (the two-field compatible choice)
    DerivedFromLambda,
    /// explicit value of the rescaled coefficient
    Explicit(f64),
}

impl PhysicalParams {
    pub fn new(nu: f64, alpha: f64, storage: StorageCoefficient) -> Result<PhysicalParams> {
        if !(nu > 0.0 && nu < 0.5) {
            return Err(Error::Params(format!("Poisson ratio must be in (0, 1/2), got {nu}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Params(format!(
                "Biot-Willis constant must be in (0, 1], got {alpha}"
            )));
        }
        let p = PhysicalParams { nu, alpha, storage };
        if !(p.s0_tilde() > 0.0) {
            return Err(Error::Params(format!(
                "storage coefficient must be positive, got {}",
                p.s0_tilde()
            )));
        }
        Ok(p)
    }

    /// 2 mu / E = 1 / (1 + nu), always in (2/3, 1).
    pub fn mu_tilde(&self) -> f64 {
        1.0 / (1.0 + self.nu)
    }

    /// lambda / E = nu / ((1 + nu)(1 - 2 nu)).
    pub fn lambda_tilde(&self) -> f64 {
        self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
    }

    pub fn lambda_tilde_inv(&self) -> f64 {
        (1.0 + self.nu) * (1.0 - 2.0 * self.nu) / self.nu
    }

    /// Rescaled storage coefficient (independent of the Young modulus).
    pub fn s0_tilde(&self) -> f64 {
        match self.storage {
            StorageCoefficient::DerivedFromLambda => {
                self.alpha * self.alpha * self.lambda_tilde_inv()
            }
            StorageCoefficient::Explicit(v) => v,
        }
    }

    /// Parameter compatibility alpha^2 / lambda_tilde <= 3/2 s0_tilde.
    /// A violation is reported as a warning by callers, never an error.
    pub fn compatibility_ok(&self) -> bool {
        self.alpha * self.alpha * self.lambda_tilde_inv() <= 1.5 * self.s0_tilde()
    }
}

/// The six physical variables, in block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    U1,
    U2,
    P1,
    P2,
    Pf,
    Pt,
}

impl Field {
    pub const ALL: [Field; 6] = [Field::U1, Field::U2, Field::P1, Field::P2, Field::Pf, Field::Pt];

    pub fn name(&self) -> &'static str {
        match self {
            Field::U1 => "u1",
            Field::U2 => "u2",
            Field::P1 => "p1",
            Field::P2 => "p2",
            Field::Pf => "p_f",
            Field::Pt => "p_t",
        }
    }

    pub fn parse(s: &str) -> Result<Field> {
        match s {
            "u1" => Ok(Field::U1),
            "u2" => Ok(Field::U2),
            "p1" => Ok(Field::P1),
            "p2" => Ok(Field::P2),
            "p_f" | "pf" => Ok(Field::Pf),
            "p_t" | "pt" => Ok(Field::Pt),
            _ => Err(Error::Config(format!("unknown field tag `{s}`"))),
        }
    }
}

/// Dimension bookkeeping shared by vectors and operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_u: usize,
    pub n_p: usize,
    pub n_0: usize,
    pub n_y: usize,
}

impl Dims {
    pub fn spatial(&self, f: Field) -> usize {
        match f {
            Field::U1 | Field::U2 => self.n_u,
            Field::P1 | Field::P2 | Field::Pt => self.n_p,
            Field::Pf => self.n_0,
        }
    }

    pub fn n_x(&self) -> usize {
        2 * self.n_u + 3 * self.n_p + self.n_0
    }

    pub fn total(&self) -> usize {
        self.n_x() * self.n_y
    }

    /// Offset of a variable block in the flat coefficient vector.
    pub fn offset(&self, f: Field) -> usize {
        let per = |f| self.spatial(f) * self.n_y;
        match f {
            Field::U1 => 0,
            Field::U2 => per(Field::U1),
            Field::P1 => per(Field::U1) + per(Field::U2),
            Field::P2 => per(Field::U1) + per(Field::U2) + per(Field::P1),
            Field::Pf => per(Field::U1) + per(Field::U2) + per(Field::P1) + per(Field::P2),
            Field::Pt => {
                per(Field::U1) + per(Field::U2) + per(Field::P1) + per(Field::P2) + per(Field::Pf)
            }
        }
    }
}

/// Flat coefficient vector of the stochastic Galerkin system.
///
/// Each variable block stores a row-major (spatial x chaos) matrix; the
/// canonical external ordering (variable, then chaos mode, then spatial dof)
/// is available through [`SgVector::to_canonical`].
#[derive(Debug, Clone, PartialEq)]
pub struct SgVector {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl SgVector {
    pub fn zeros(dims: Dims) -> SgVector {
        SgVector {
            dims,
            data: vec![0.0; dims.total()],
        }
    }

    pub fn block(&self, f: Field) -> &[f64] {
        let off = self.dims.offset(f);
        &self.data[off..off + self.dims.spatial(f) * self.dims.n_y]
    }

    pub fn block_mut(&mut self, f: Field) -> &mut [f64] {
        let off = self.dims.offset(f);
        let len = self.dims.spatial(f) * self.dims.n_y;
        &mut self.data[off..off + len]
    }

    /// Coefficients of one chaos mode of one variable (a spatial vector).
    pub fn mode_column(&self, f: Field, j: usize) -> Vec<f64> {
        let ny = self.dims.n_y;
        assert!(j < ny);
        self.block(f).iter().skip(j).step_by(ny).copied().collect()
    }

    pub fn set_mode_column(&mut self, f: Field, j: usize, values: &[f64]) {
        let ny = self.dims.n_y;
        assert_eq!(values.len(), self.dims.spatial(f));
        for (i, &v) in values.iter().enumerate() {
            self.block_mut(f)[i * ny + j] = v;
        }
    }

    pub fn dot(&self, other: &SgVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Canonical saddle-point ordering: variable, chaos mode, spatial dof.
    pub fn to_canonical(&self) -> Vec<f64> {
        let ny = self.dims.n_y;
        let mut out = vec![0.0; self.dims.total()];
        for f in Field::ALL {
            let off = self.dims.offset(f);
            let nsp = self.dims.spatial(f);
            let block = self.block(f);
            for i in 0..nsp {
                for j in 0..ny {
                    out[off + j * nsp + i] = block[i * ny + j];
                }
            }
        }
        out
    }

    pub fn from_canonical(dims: Dims, canonical: &[f64]) -> SgVector {
        assert_eq!(canonical.len(), dims.total());
        let ny = dims.n_y;
        let mut v = SgVector::zeros(dims);
        for f in Field::ALL {
            let off = dims.offset(f);
            let nsp = dims.spatial(f);
            let block = v.block_mut(f);
            for i in 0..nsp {
                for j in 0..ny {
                    block[i * ny + j] = canonical[off + j * nsp + i];
                }
            }
        }
        v
    }

    /// Alternative ordering grouping all variables per chaos mode:
    /// x_j = (u1_j, u2_j, p1_j, p2_j, pF_j, pT_j) stacked for j = 0..n_y.
    pub fn to_mode_major(&self) -> Vec<f64> {
        let ny = self.dims.n_y;
        let nx = self.dims.n_x();
        let mut out = vec![0.0; self.dims.total()];
        for j in 0..ny {
            let mut at = j * nx;
            for f in Field::ALL {
                let nsp = self.dims.spatial(f);
                let block = self.block(f);
                for i in 0..nsp {
                    out[at + i] = block[i * ny + j];
                }
                at += nsp;
            }
        }
        out
    }
}

enum FamTag {
    A11,
    A12,
    A21,
    A22,
    Ctilde,
    D,
    Single(usize),
}

enum GSel {
    /// Young modulus coupling list G_0..G_M1
    Elastic,
    /// conductivity coupling list (identity, then the z-parameter matrices)
    Conductivity,
    /// identity only
    Id,
}

struct OpBlock {
    fam: FamTag,
    g: GSel,
    coef: f64,
    src: Field,
    dst: Field,
}

/// Matrix-free Kronecker-structured saddle-point operator.
pub struct SgOperator {
    pub dims: Dims,
    pub params: PhysicalParams,
    fem: Arc<FemBlocks>,
    g_elastic: Vec<GMatrix>,
    g_conduct: Vec<GMatrix>,
    singles: Vec<ModeFamily>,
    blocks: Vec<OpBlock>,
}

/// Splits the full coupling list G_0..G_M into the elasticity list
/// (G_0..G_M1) and the conductivity list (G_0, then the last M2 matrices).
pub fn split_coupling(g_all: &[GMatrix], m1: usize, m2: usize) -> Result<(Vec<GMatrix>, Vec<GMatrix>)> {
    if g_all.len() != m1 + m2 + 1 {
        return Err(Error::Dimension(format!(
            "expected {} coupling matrices, got {}",
            m1 + m2 + 1,
            g_all.len()
        )));
    }
    let g_e = g_all[..=m1].to_vec();
    let mut g_d = vec![g_all[0].clone()];
    g_d.extend_from_slice(&g_all[m1 + 1..]);
    Ok((g_e, g_d))
}

/// Builds the operator from assembled blocks, coupling matrices and
/// physical parameters. Closes over its inputs; nothing is materialized.
pub fn build_operator(
    fem: Arc<FemBlocks>,
    g_elastic: Vec<GMatrix>,
    g_conduct: Vec<GMatrix>,
    params: PhysicalParams,
) -> Result<SgOperator> {
    if g_elastic.len() != fem.m1 + 1 {
        return Err(Error::Dimension(format!(
            "need {} elasticity coupling matrices, got {}",
            fem.m1 + 1,
            g_elastic.len()
        )));
    }
    if g_conduct.len() != fem.m2 + 1 {
        return Err(Error::Dimension(format!(
            "need {} conductivity coupling matrices, got {}",
            fem.m2 + 1,
            g_conduct.len()
        )));
    }
    let n_y = g_elastic[0].n;
    if g_elastic.iter().chain(&g_conduct).any(|g| g.n != n_y) {
        return Err(Error::Dimension("coupling matrices disagree on the chaos dimension".into()));
    }
    if !g_elastic[0].identity || !g_conduct[0].identity {
        return Err(Error::Dimension("the leading coupling matrix must be the identity".into()));
    }
    let dims = Dims {
        n_u: fem.n_u,
        n_p: fem.n_p,
        n_0: fem.n_0,
        n_y,
    };
    let mu = params.mu_tilde();
    let li = params.lambda_tilde_inv();
    let s0 = params.s0_tilde();
    let al = params.alpha;

    // operator-owned single-mode families (transposed couplings included)
    let singles = vec![
        ModeFamily::from_single(&fem.b1),    // 0
        ModeFamily::from_single(&fem.b2),    // 1
        ModeFamily::from_single(&fem.b1_t),  // 2
        ModeFamily::from_single(&fem.b2_t),  // 3
        ModeFamily::from_single(&fem.c),     // 4
        ModeFamily::from_single(&fem.c_b),   // 5
        ModeFamily::from_single(&fem.c_b_t), // 6
    ];
    use Field::*;
    let blocks = vec![
        OpBlock { fam: FamTag::A11, g: GSel::Elastic, coef: mu, src: U1, dst: U1 },
        OpBlock { fam: FamTag::A12, g: GSel::Elastic, coef: mu, src: U2, dst: U1 },
        OpBlock { fam: FamTag::A21, g: GSel::Elastic, coef: mu, src: U1, dst: U2 },
        OpBlock { fam: FamTag::A22, g: GSel::Elastic, coef: mu, src: U2, dst: U2 },
        OpBlock { fam: FamTag::Single(2), g: GSel::Id, coef: 1.0, src: Pt, dst: U1 },
        OpBlock { fam: FamTag::Single(3), g: GSel::Id, coef: 1.0, src: Pt, dst: U2 },
        OpBlock { fam: FamTag::Ctilde, g: GSel::Elastic, coef: li, src: P1, dst: P1 },
        OpBlock { fam: FamTag::Single(6), g: GSel::Id, coef: al * li, src: Pf, dst: P1 },
        OpBlock { fam: FamTag::Single(4), g: GSel::Id, coef: -li, src: Pt, dst: P1 },
        OpBlock { fam: FamTag::Ctilde, g: GSel::Elastic, coef: s0, src: P2, dst: P2 },
        OpBlock { fam: FamTag::Single(6), g: GSel::Id, coef: s0, src: Pf, dst: P2 },
        OpBlock { fam: FamTag::Single(5), g: GSel::Id, coef: al * li, src: P1, dst: Pf },
        OpBlock { fam: FamTag::Single(5), g: GSel::Id, coef: s0, src: P2, dst: Pf },
        OpBlock { fam: FamTag::D, g: GSel::Conductivity, coef: -1.0, src: Pf, dst: Pf },
        OpBlock { fam: FamTag::Single(0), g: GSel::Id, coef: 1.0, src: U1, dst: Pt },
        OpBlock { fam: FamTag::Single(1), g: GSel::Id, coef: 1.0, src: U2, dst: Pt },
        OpBlock { fam: FamTag::Single(4), g: GSel::Id, coef: -li, src: P1, dst: Pt },
    ];
    Ok(SgOperator {
        dims,
        params,
        fem,
        g_elastic,
        g_conduct,
        singles,
        blocks,
    })
}

impl SgOperator {
    pub fn fem(&self) -> &FemBlocks {
        &self.fem
    }

    fn family(&self, tag: &FamTag) -> &ModeFamily {
        match tag {
            FamTag::A11 => &self.fem.a11,
            FamTag::A12 => &self.fem.a12,
            FamTag::A21 => &self.fem.a21,
            FamTag::A22 => &self.fem.a22,
            FamTag::Ctilde => &self.fem.ctilde,
            FamTag::D => &self.fem.d,
            FamTag::Single(i) => &self.singles[*i],
        }
    }

    /// y = K x, matrix-free.
    pub fn apply(&self, x: &SgVector, y: &mut SgVector) {
        assert_eq!(x.dims, self.dims);
        assert_eq!(y.dims, self.dims);
        y.data.fill(0.0);
        let ny = self.dims.n_y;
        for b in &self.blocks {
            let fam = self.family(&b.fam);
            let gs: Vec<Option<&[(u32, u32, f64)]>> = match b.g {
                GSel::Elastic => self
                    .g_elastic
                    .iter()
                    .map(|g| (!g.identity).then_some(g.entries.as_slice()))
                    .collect(),
                GSel::Conductivity => self
                    .g_conduct
                    .iter()
                    .map(|g| (!g.identity).then_some(g.entries.as_slice()))
                    .collect(),
                GSel::Id => vec![None],
            };
            let src = x.block(b.src);
            let off = self.dims.offset(b.dst);
            let len = self.dims.spatial(b.dst) * ny;
            apply_kron_sum(fam, &gs, b.coef, src, ny, &mut y.data[off..off + len]);
        }
    }

    pub fn apply_new(&self, x: &SgVector) -> SgVector {
        let mut y = SgVector::zeros(self.dims);
        self.apply(x, &mut y);
        y
    }
}

/// Right-hand side: loads enter only through the first chaos mode.
pub fn build_rhs(fem: &FemBlocks, n_y: usize) -> SgVector {
    let dims = Dims {
        n_u: fem.n_u,
        n_p: fem.n_p,
        n_0: fem.n_0,
        n_y,
    };
    let mut rhs = SgVector::zeros(dims);
    rhs.set_mode_column(Field::U1, 0, &fem.f1);
    rhs.set_mode_column(Field::U2, 0, &fem.f2);
    rhs.set_mode_column(Field::Pf, 0, &fem.g);
    rhs
}
