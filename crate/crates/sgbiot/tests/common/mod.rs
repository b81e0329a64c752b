//! Shared oracle machinery for the integration suites: dense linear algebra,
//! quadrature rules, an explicitly assembled dense copy of the global
//! operator, and a small reference instance. Everything here is independent
//! of the solver's own kernels.

#![allow(dead_code)]

use std::sync::Arc;

use sgbiot::assembly::{build_fem_blocks, FemBlocks, ScalarField};
use sgbiot::mesh::{
    build_mesh, classify_dofs, BoundarySpec, DofMaps, EdgeSide, Mesh, RectDomain, Segment,
};
use sgbiot::precond::{build_preconditioner, BlockPreconditioner};
use sgbiot::stochastic::{
    chaos_basis_at, g_matrices, total_degree_set, GMatrix, MultiIndexSet, ParamInterval,
    RandomFieldExpansion,
};
use sgbiot::system::{
    build_operator, build_rhs, split_coupling, Dims, Field, PhysicalParams, SgOperator, SgVector,
    StorageCoefficient,
};

/// Dense solve by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut b = rhs.to_vec();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
            .unwrap();
        m.swap(k, piv);
        b.swap(k, piv);
        let d = m[k][k];
        assert!(d.abs() > 1e-300, "singular dense system");
        for j in k..n {
            m[k][j] /= d;
        }
        b[k] /= d;
        for i in 0..n {
            if i != k && m[i][k] != 0.0 {
                let f = m[i][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    b
}

pub fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p1, dp) = legendre_with_deriv(n, x);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Explicit dense assembly of the saddle-point matrix in canonical ordering
/// (variable, then chaos mode, then spatial dof) via Kronecker products.
pub fn dense_operator(
    fem: &FemBlocks,
    g_elastic: &[GMatrix],
    g_conduct: &[GMatrix],
    params: &PhysicalParams,
    n_y: usize,
) -> Vec<Vec<f64>> {
    let dims = Dims {
        n_u: fem.n_u,
        n_p: fem.n_p,
        n_0: fem.n_0,
        n_y,
    };
    let n = dims.total();
    let mut dense = vec![vec![0.0; n]; n];
    let mu = params.mu_tilde();
    let li = params.lambda_tilde_inv();
    let s0 = params.s0_tilde();
    let al = params.alpha;

    let mut add_kron = |gd: &[Vec<f64>], kd: &[Vec<f64>], coef: f64, src: Field, dst: Field| {
        let ro = dims.offset(dst);
        let co = dims.offset(src);
        let (nr, nc) = (kd.len(), kd[0].len());
        for j in 0..n_y {
            for jj in 0..n_y {
                let g = gd[j][jj];
                if g == 0.0 {
                    continue;
                }
                for i in 0..nr {
                    for ii in 0..nc {
                        dense[ro + j * nr + i][co + jj * nc + ii] += coef * g * kd[i][ii];
                    }
                }
            }
        }
    };

    use Field::*;
    let ge: Vec<Vec<Vec<f64>>> = g_elastic.iter().map(|g| g.to_dense()).collect();
    let gd: Vec<Vec<Vec<f64>>> = g_conduct.iter().map(|g| g.to_dense()).collect();
    for (k, g) in ge.iter().enumerate() {
        add_kron(g, &fem.a11.mode(k).to_dense(), mu, U1, U1);
        add_kron(g, &fem.a12.mode(k).to_dense(), mu, U2, U1);
        add_kron(g, &fem.a21.mode(k).to_dense(), mu, U1, U2);
        add_kron(g, &fem.a22.mode(k).to_dense(), mu, U2, U2);
        add_kron(g, &fem.ctilde.mode(k).to_dense(), li, P1, P1);
        add_kron(g, &fem.ctilde.mode(k).to_dense(), s0, P2, P2);
    }
    for (k, g) in gd.iter().enumerate() {
        add_kron(g, &fem.d.mode(k).to_dense(), -1.0, Pf, Pf);
    }
    let id = GMatrix::identity(n_y).to_dense();
    add_kron(&id, &fem.b1_t.to_dense(), 1.0, Pt, U1);
    add_kron(&id, &fem.b2_t.to_dense(), 1.0, Pt, U2);
    add_kron(&id, &fem.c_b_t.to_dense(), al * li, Pf, P1);
    add_kron(&id, &fem.c.to_dense(), -li, Pt, P1);
    add_kron(&id, &fem.c_b_t.to_dense(), s0, Pf, P2);
    add_kron(&id, &fem.c_b.to_dense(), al * li, P1, Pf);
    add_kron(&id, &fem.c_b.to_dense(), s0, P2, Pf);
    add_kron(&id, &fem.b1.to_dense(), 1.0, U1, Pt);
    add_kron(&id, &fem.b2.to_dense(), 1.0, U2, Pt);
    add_kron(&id, &fem.c.to_dense(), -li, P1, Pt);
    dense
}

/// Top eigenvalues of a dense symmetric matrix by subspace iteration with
/// modified Gram-Schmidt orthonormalization.
pub fn top_eigenvalues(a: &[Vec<f64>], count: usize, iterations: usize) -> Vec<f64> {
    let n = a.len();
    let m = (count + 4).min(n);
    let mut v: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            (0..n)
                .map(|i| ((i * (c + 3) + 7 * c + 1) as f64 * 0.618).sin())
                .collect()
        })
        .collect();
    orthonormalize(&mut v);
    for _ in 0..iterations {
        let mut w: Vec<Vec<f64>> = v.iter().map(|col| dense_matvec(a, col)).collect();
        orthonormalize(&mut w);
        v = w;
    }
    let mut lambda: Vec<f64> = v
        .iter()
        .map(|col| {
            let av = dense_matvec(a, col);
            col.iter().zip(&av).map(|(x, y)| x * y).sum()
        })
        .collect();
    lambda.sort_by(|x, y| y.partial_cmp(x).unwrap());
    lambda.truncate(count);
    lambda
}

fn orthonormalize(v: &mut [Vec<f64>]) {
    for c in 0..v.len() {
        for prev in 0..c {
            let dot: f64 = v[c].iter().zip(&v[prev]).map(|(a, b)| a * b).sum();
            let (head, tail) = v.split_at_mut(c);
            for (x, y) in tail[0].iter_mut().zip(&head[prev]) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v[c].iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v[c] {
            *x /= norm;
        }
    }
}

/// A small fully-wired problem: clamped bottom/left, drained top/right on
/// the unit square, one uniform mode per input field.
pub struct TinySetup {
    pub mesh: Arc<Mesh>,
    pub dofs: Arc<DofMaps>,
    pub fem: Arc<FemBlocks>,
    pub op: SgOperator,
    pub pre: BlockPreconditioner,
    pub rhs: SgVector,
    pub set: MultiIndexSet,
    pub intervals: Vec<ParamInterval>,
    pub params: PhysicalParams,
    pub e0: f64,
    pub kappa0: f64,
}

pub fn tiny_instance(level: u32, degree: usize) -> TinySetup {
    let e0 = 1.0e5;
    let kappa0 = 1.0;
    let mesh = Arc::new(build_mesh(RectDomain::unit_square(), level).unwrap());
    let bc = BoundarySpec::new(
        vec![Segment::full(EdgeSide::Bottom), Segment::full(EdgeSide::Left)],
        vec![Segment::full(EdgeSide::Top), Segment::full(EdgeSide::Right)],
    );
    let dofs = Arc::new(classify_dofs(&mesh, &bc).unwrap());
    let young = RandomFieldExpansion::affine(e0, &[0.1 * e0], 1.0).unwrap();
    let kappa = RandomFieldExpansion::affine(kappa0, &[0.1 * kappa0], 1.0).unwrap();
    let fem = Arc::new(
        build_fem_blocks(
            &mesh,
            &dofs,
            &young,
            &kappa,
            &[ScalarField::Constant(1.0), ScalarField::Constant(1.0)],
            &ScalarField::Constant(0.0),
            None,
        )
        .unwrap(),
    );
    let set = total_degree_set(2, degree);
    let intervals = vec![ParamInterval::new(1.0).unwrap(); 2];
    let gs = g_matrices(&set, &intervals).unwrap();
    let (ge, gd) = split_coupling(&gs, 1, 1).unwrap();
    let params = PhysicalParams::new(0.4, 1.0, StorageCoefficient::DerivedFromLambda).unwrap();
    let pre = build_preconditioner(&fem, &params).unwrap();
    let rhs = build_rhs(&fem, set.len());
    let op = build_operator(fem.clone(), ge, gd, params).unwrap();
    TinySetup {
        mesh,
        dofs,
        fem,
        op,
        pre,
        rhs,
        set,
        intervals,
        params,
        e0,
        kappa0,
    }
}

pub fn dense_of(t: &TinySetup) -> Vec<Vec<f64>> {
    let gs = g_matrices(&t.set, &t.intervals).unwrap();
    let (ge, gd) = split_coupling(&gs, 1, 1).unwrap();
    common_dense(t, &ge, &gd)
}

fn common_dense(t: &TinySetup, ge: &[GMatrix], gd: &[GMatrix]) -> Vec<Vec<f64>> {
    dense_operator(&t.fem, ge, gd, &t.params, t.set.len())
}

/// Q1 shape values and reference derivatives (oracle-local definitions).
pub fn q1_basis(xi: f64, eta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let n = [0.5 * (1.0 - xi), 0.5 * (1.0 + xi)];
    let m = [0.5 * (1.0 - eta), 0.5 * (1.0 + eta)];
    let dn = [-0.5, 0.5];
    let mut v = [0.0; 4];
    let mut dx = [0.0; 4];
    let mut dy = [0.0; 4];
    for b in 0..2 {
        for a in 0..2 {
            v[b * 2 + a] = n[a] * m[b];
            dx[b * 2 + a] = dn[a] * m[b];
            dy[b * 2 + a] = n[a] * dn[b];
        }
    }
    (v, dx, dy)
}

pub fn q2_basis(xi: f64, eta: f64) -> ([f64; 9], [f64; 9], [f64; 9]) {
    let s = [0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)];
    let t = [0.5 * eta * (eta - 1.0), 1.0 - eta * eta, 0.5 * eta * (eta + 1.0)];
    let ds = [xi - 0.5, -2.0 * xi, xi + 0.5];
    let dt = [eta - 0.5, -2.0 * eta, eta + 0.5];
    let mut v = [0.0; 9];
    let mut dx = [0.0; 9];
    let mut dy = [0.0; 9];
    for b in 0..3 {
        for a in 0..3 {
            v[b * 3 + a] = s[a] * t[b];
            dx[b * 3 + a] = ds[a] * t[b];
            dy[b * 3 + a] = s[a] * dt[b];
        }
    }
    (v, dx, dy)
}

/// Direct quadrature of the weighted norm of the expanded fields: tensor
/// Gauss over the parameter box times 4x4 Gauss per element in space.
pub fn norm_by_quadrature(t: &TinySetup, x: &SgVector) -> f64 {
    let dims = x.dims;
    let ny = dims.n_y;
    let mu = t.params.mu_tilde();
    let li = t.params.lambda_tilde_inv();
    let s0 = t.params.s0_tilde();
    let pf_coef = t.params.alpha * t.params.alpha * li + s0;
    let pt_coef = 1.0 / mu + li;

    let rule1d = gauss_legendre(t.set.degree + 2);
    let mut param_nodes = Vec::new();
    for &(t1, w1) in &rule1d {
        for &(t2, w2) in &rule1d {
            param_nodes.push((
                vec![
                    t1 * t.intervals[0].half_width,
                    t2 * t.intervals[1].half_width,
                ],
                0.25 * w1 * w2,
            ));
        }
    }
    let spatial = gauss_legendre(4);
    let scale = 2.0 / t.mesh.h;
    let det = 0.25 * t.mesh.h * t.mesh.h;

    let mut total = 0.0;
    for (y_point, wy) in &param_nodes {
        let psi = chaos_basis_at(&t.set, &t.intervals, y_point).unwrap();
        for ey in 0..t.mesh.ny_elem {
            for ex in 0..t.mesh.nx {
                let un = t.mesh.q2_element_nodes(ex, ey);
                let qn = t.mesh.q1_element_nodes(ex, ey);
                for &(xi, wx) in &spatial {
                    for &(eta, we) in &spatial {
                        let w = wx * we * det * wy;
                        let (_, du_dxi, du_deta) = q2_basis(xi, eta);
                        let (qv, dq_dxi, dq_deta) = q1_basis(xi, eta);
                        let mut dv = [0.0f64; 4];
                        for (l, &node) in un.iter().enumerate() {
                            let free = t.dofs.u_index[node];
                            if free == usize::MAX {
                                continue;
                            }
                            let c1 = &x.block(Field::U1)[free * ny..free * ny + ny];
                            let c2 = &x.block(Field::U2)[free * ny..free * ny + ny];
                            let a1: f64 = c1.iter().zip(&psi).map(|(c, p)| c * p).sum();
                            let a2: f64 = c2.iter().zip(&psi).map(|(c, p)| c * p).sum();
                            dv[0] += a1 * scale * du_dxi[l];
                            dv[1] += a1 * scale * du_deta[l];
                            dv[2] += a2 * scale * du_dxi[l];
                            dv[3] += a2 * scale * du_deta[l];
                        }
                        let mut qt = 0.0;
                        let mut q1c = 0.0;
                        let mut q2c = 0.0;
                        let mut qf = 0.0;
                        let mut dqf = [0.0f64; 2];
                        for (r, &node) in qn.iter().enumerate() {
                            let at = |f: Field, idx: usize| -> f64 {
                                let c = &x.block(f)[idx * ny..idx * ny + ny];
                                c.iter().zip(&psi).map(|(c, p)| c * p).sum()
                            };
                            qt += at(Field::Pt, node) * qv[r];
                            q1c += at(Field::P1, node) * qv[r];
                            q2c += at(Field::P2, node) * qv[r];
                            let free = t.dofs.p0_index[node];
                            if free != usize::MAX {
                                let v = at(Field::Pf, free);
                                qf += v * qv[r];
                                dqf[0] += v * scale * dq_dxi[r];
                                dqf[1] += v * scale * dq_deta[r];
                            }
                        }
                        total += w
                            * (mu * t.e0
                                * (dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2] + dv[3] * dv[3])
                                + pt_coef / t.e0 * qt * qt
                                + pf_coef / t.e0 * qf * qf
                                + t.kappa0 * (dqf[0] * dqf[0] + dqf[1] * dqf[1])
                                + li * t.e0 * q1c * q1c
                                + s0 * t.e0 * q2c * q2c);
                    }
                }
            }
        }
    }
    total
}
