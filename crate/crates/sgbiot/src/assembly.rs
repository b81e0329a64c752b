//! Assembly of the spatial finite element matrices and load vectors for the
//! Q2-Q1-Q1-Q1-Q1 mixed method.
//!
//! All integrals use a 3x3 tensor Gauss rule per element, which is exact for
//! every polynomial integrand appearing here; coefficient fields are sampled
//! at the quadrature points. Essential boundary conditions are imposed by
//! eliminating constrained basis functions (homogeneous values only).

use std::sync::Arc;

use crate::mesh::{DofMaps, EdgeSide, Mesh, Segment, Traction};
use crate::sparse::{nested_dissection, restrict_order, Csr, ModeFamily};
use crate::{Error, Result};

/// An evaluable coefficient field on the spatial domain.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// Mode of a Karhunen-Loeve expansion.
    KlMode(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// Arbitrary user-supplied field.
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl ScalarField {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::KlMode(f) | ScalarField::Custom(f) => f(x, y),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(c) => Some(*c),
            _ => None,
        }
    }

    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> ScalarField {
        ScalarField::Custom(Arc::new(f))
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::KlMode(_) => write!(f, "KlMode(..)"),
            ScalarField::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774596669241483377035853079956, 0.555555555555555555555555555556),
    (0.0, 0.888888888888888888888888888889),
    (0.774596669241483377035853079956, 0.555555555555555555555555555556),
];

#[inline]
fn q1_shape_1d(x: f64) -> [f64; 2] {
    [0.5 * (1.0 - x), 0.5 * (1.0 + x)]
}

#[inline]
fn q1_deriv_1d() -> [f64; 2] {
    [-0.5, 0.5]
}

#[inline]
fn q2_shape_1d(x: f64) -> [f64; 3] {
    [0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)]
}

#[inline]
fn q2_deriv_1d(x: f64) -> [f64; 3] {
    [x - 0.5, -2.0 * x, x + 0.5]
}

/// Shape function values and reference derivatives at the 9 Gauss points.
struct QuadTables {
    /// (xi, eta, weight) per point (weight excludes the Jacobian)
    pts: [(f64, f64, f64); 9],
    q1_val: [[f64; 4]; 9],
    q1_dxi: [[f64; 4]; 9],
    q1_deta: [[f64; 4]; 9],
    q2_val: [[f64; 9]; 9],
    q2_dxi: [[f64; 9]; 9],
    q2_deta: [[f64; 9]; 9],
}

impl QuadTables {
    fn new() -> QuadTables {
        let mut pts = [(0.0, 0.0, 0.0); 9];
        let mut q1_val = [[0.0; 4]; 9];
        let mut q1_dxi = [[0.0; 4]; 9];
        let mut q1_deta = [[0.0; 4]; 9];
        let mut q2_val = [[0.0; 9]; 9];
        let mut q2_dxi = [[0.0; 9]; 9];
        let mut q2_deta = [[0.0; 9]; 9];
        let mut q = 0;
        for &(eta, weta) in &GAUSS3 {
            for &(xi, wxi) in &GAUSS3 {
                pts[q] = (xi, eta, wxi * weta);
                let (n, dn) = (q1_shape_1d(xi), q1_deriv_1d());
                let (m, dm) = (q1_shape_1d(eta), q1_deriv_1d());
                for b in 0..2 {
                    for a in 0..2 {
                        q1_val[q][b * 2 + a] = n[a] * m[b];
                        q1_dxi[q][b * 2 + a] = dn[a] * m[b];
                        q1_deta[q][b * 2 + a] = n[a] * dm[b];
                    }
                }
                let (s, ds) = (q2_shape_1d(xi), q2_deriv_1d(xi));
                let (t, dt) = (q2_shape_1d(eta), q2_deriv_1d(eta));
                for b in 0..3 {
                    for a in 0..3 {
                        q2_val[q][b * 3 + a] = s[a] * t[b];
                        q2_dxi[q][b * 3 + a] = ds[a] * t[b];
                        q2_deta[q][b * 3 + a] = s[a] * dt[b];
                    }
                }
                q += 1;
            }
        }
        QuadTables {
            pts,
            q1_val,
            q1_dxi,
            q1_deta,
            q2_val,
            q2_dxi,
            q2_deta,
        }
    }
}

/// All element quadrature points of the mesh (used for field diagnostics).
pub fn quadrature_points(mesh: &Mesh) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(mesh.n_elements() * 9);
    let h = mesh.h;
    for ey in 0..mesh.ny_elem {
        for ex in 0..mesh.nx {
            let (x0, y0) = mesh.element_origin(ex, ey);
            for &(eta, _) in &GAUSS3 {
                for &(xi, _) in &GAUSS3 {
                    pts.push((x0 + 0.5 * h * (xi + 1.0), y0 + 0.5 * h * (eta + 1.0)));
                }
            }
        }
    }
    pts
}

fn eval_weight(field: &ScalarField, x: f64, y: f64) -> Result<f64> {
    let v = field.eval(x, y);
    if !v.is_finite() {
        return Err(Error::Assembly(format!(
            "coefficient field is not finite at ({x}, {y})"
        )));
    }
    Ok(v)
}

/// The four strain-strain coupling matrices for one coefficient mode.
#[derive(Debug, Clone)]
pub struct ElasticityBlocks {
    pub a11: Csr,
    pub a12: Csr,
    pub a21: Csr,
    pub a22: Csr,
}

/// Assembles the elasticity blocks weighted by `coeff` on the free Q2 space.
///
/// Entries integrate the symmetric-gradient contraction of the component
/// basis fields; the cross blocks are exact transposes of each other.
pub fn assemble_elasticity(
    mesh: &Mesh,
    dofs: &DofMaps,
    coeff: &ScalarField,
) -> Result<ElasticityBlocks> {
    let tables = QuadTables::new();
    let h = mesh.h;
    let scale = 2.0 / h;
    let det = 0.25 * h * h;
    let n_u = dofs.n_u;
    let cap = mesh.n_elements() * 81;
    let mut t11 = Vec::with_capacity(cap);
    let mut t21 = Vec::with_capacity(cap);
    let mut t22 = Vec::with_capacity(cap);
    for ey in 0..mesh.ny_elem {
        for ex in 0..mesh.nx {
            let nodes = mesh.q2_element_nodes(ex, ey);
            let (x0, y0) = mesh.element_origin(ex, ey);
            let mut k11 = [[0.0f64; 9]; 9];
            let mut k21 = [[0.0f64; 9]; 9];
            let mut k22 = [[0.0f64; 9]; 9];
            for q in 0..9 {
                let (xi, eta, w) = tables.pts[q];
                let x = x0 + 0.5 * h * (xi + 1.0);
                let y = y0 + 0.5 * h * (eta + 1.0);
                let e = eval_weight(coeff, x, y)? * w * det;
                let dxi = &tables.q2_dxi[q];
                let deta = &tables.q2_deta[q];
                for i in 0..9 {
                    let (dxi_i, dyi) = (scale * dxi[i], scale * deta[i]);
                    for l in 0..9 {
                        let (dxl, dyl) = (scale * dxi[l], scale * deta[l]);
                        k11[i][l] += e * (dxi_i * dxl + 0.5 * dyi * dyl);
                        k22[i][l] += e * (dyi * dyl + 0.5 * dxi_i * dxl);
                        k21[i][l] += e * 0.5 * dxi_i * dyl;
                    }
                }
            }
            for i in 0..9 {
                let gi = dofs.u_index[nodes[i]];
                if gi == usize::MAX {
                    continue;
                }
                for l in 0..9 {
                    let gl = dofs.u_index[nodes[l]];
                    if gl == usize::MAX {
                        continue;
                    }
                    t11.push((gi, gl, k11[i][l]));
                    t21.push((gi, gl, k21[i][l]));
                    t22.push((gi, gl, k22[i][l]));
                }
            }
        }
    }
    let a11 = Csr::from_triplets(n_u, n_u, &t11);
    let a21 = Csr::from_triplets(n_u, n_u, &t21);
    let a22 = Csr::from_triplets(n_u, n_u, &t22);
    let a12 = a21.transpose();
    Ok(ElasticityBlocks { a11, a12, a21, a22 })
}

/// Assembles the pressure-divergence coupling matrices on all Q1 rows and
/// free Q2 columns (the minus sign of the weak form is included).
pub fn assemble_divergence(mesh: &Mesh, dofs: &DofMaps) -> Result<(Csr, Csr)> {
    let tables = QuadTables::new();
    let h = mesh.h;
    let scale = 2.0 / h;
    let det = 0.25 * h * h;
    let cap = mesh.n_elements() * 36;
    let mut tb1 = Vec::with_capacity(cap);
    let mut tb2 = Vec::with_capacity(cap);
    for ey in 0..mesh.ny_elem {
        for ex in 0..mesh.nx {
            let qn = mesh.q1_element_nodes(ex, ey);
            let un = mesh.q2_element_nodes(ex, ey);
            let mut b1 = [[0.0f64; 9]; 4];
            let mut b2 = [[0.0f64; 9]; 4];
            for q in 0..9 {
                let (_, _, w) = tables.pts[q];
                let wd = w * det;
                for r in 0..4 {
                    let phi = tables.q1_val[q][r];
                    for l in 0..9 {
                        b1[r][l] -= wd * phi * scale * tables.q2_dxi[q][l];
                        b2[r][l] -= wd * phi * scale * tables.q2_deta[q][l];
                    }
                }
            }
            for r in 0..4 {
                for l in 0..9 {
                    let gl = dofs.u_index[un[l]];
                    if gl == usize::MAX {
                        continue;
                    }
                    tb1.push((qn[r], gl, b1[r][l]));
                    tb2.push((qn[r], gl, b2[r][l]));
                }
            }
        }
    }
    Ok((
        Csr::from_triplets(dofs.n_p, dofs.n_u, &tb1),
        Csr::from_triplets(dofs.n_p, dofs.n_u, &tb2),
    ))
}

/// Target space of a Q1 mass assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassSpace {
    /// all Q1 basis functions (n_p x n_p)
    Q1Full,
    /// basis functions free of pressure constraints (n_0 x n_0)
    Q1Restricted,
}

/// Assembles a weighted Q1 mass matrix on the requested space.
pub fn assemble_mass(
    mesh: &Mesh,
    dofs: &DofMaps,
    weight: &ScalarField,
    space: MassSpace,
) -> Result<Csr> {
    let tables = QuadTables::new();
    let h = mesh.h;
    let det = 0.25 * h * h;
    let n = match space {
        MassSpace::Q1Full => dofs.n_p,
        MassSpace::Q1Restricted => dofs.n_0,
    };
    let index = |node: usize| -> usize {
        match space {
            MassSpace::Q1Full => node,
            MassSpace::Q1Restricted => dofs.p0_index[node],
        }
    };
    let mut tri = Vec::with_capacity(mesh.n_elements() * 16);
    for ey in 0..mesh.ny_elem {
        for ex in 0..mesh.nx {
            let nodes = mesh.q1_element_nodes(ex, ey);
            let (x0, y0) = mesh.element_origin(ex, ey);
            let mut ke = [[0.0f64; 4]; 4];
            for q in 0..9 {
                let (xi, eta, w) = tables.pts[q];
                let x = x0 + 0.5 * h * (xi + 1.0);
                let y = y0 + 0.5 * h * (eta + 1.0);
                let c = eval_weight(weight, x, y)? * w * det;
                let val = &tables.q1_val[q];
                for r in 0..4 {
                    for s in 0..4 {
                        ke[r][s] += c * val[r] * val[s];
                    }
                }
            }
            for r in 0..4 {
                let gr = index(nodes[r]);
                if gr == usize::MAX {
                    continue;
                }
                for s in 0..4 {
                    let gs = index(nodes[s]);
                    if gs == usize::MAX {
                        continue;
                    }
                    tri.push((gr, gs, ke[r][s]));
                }
            }
        }
    }
    Ok(Csr::from_triplets(n, n, &tri))
}

/// Assembles a weighted Q1 stiffness matrix on the pressure-free space.
pub fn assemble_stiffness(mesh: &Mesh, dofs: &DofMaps, weight: &ScalarField) -> Result<Csr> {
    let tables = QuadTables::new();
    let h = mesh.h;
    let scale = 2.0 / h;
    let det = 0.25 * h * h;
    let mut tri = Vec::with_capacity(mesh.n_elements() * 16);
    for ey in 0..mesh.ny_elem {
        for ex in 0..mesh.nx {
            let nodes = mesh.q1_element_nodes(ex, ey);
            let (x0, y0) = mesh.element_origin(ex, ey);
            let mut ke = [[0.0f64; 4]; 4];
            for q in 0..9 {
                let (xi, eta, w) = tables.pts[q];
                let x = x0 + 0.5 * h * (xi + 1.0);
                let y = y0 + 0.5 * h * (eta + 1.0);
                let c = eval_weight(weight, x, y)? * w * det;
                let dxi = &tables.q1_dxi[q];
                let deta = &tables.q1_deta[q];
                for r in 0..4 {
                    let (dxr, dyr) = (scale * dxi[r], scale * deta[r]);
                    for s in 0..4 {
                        let (dxs, dys) = (scale * dxi[s], scale * deta[s]);
                        ke[r][s] += c * (dxr * dxs + dyr * dys);
                    }
                }
            }
            for r in 0..4 {
                let gr = dofs.p0_index[nodes[r]];
                if gr == usize::MAX {
                    continue;
                }
                for s in 0..4 {
                    let gs = dofs.p0_index[nodes[s]];
                    if gs == usize::MAX {
                        continue;
                    }
                    tri.push((gr, gs, ke[r][s]));
                }
            }
        }
    }
    Ok(Csr::from_triplets(dofs.n_0, dofs.n_0, &tri))
}

/// Assembled load vectors.
#[derive(Debug, Clone)]
pub struct Loads {
    /// body force components on the free Q2 space (traction included)
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    /// source term on the pressure-free Q1 space
    pub g: Vec<f64>,
}

/// Assembles body force, source and optional boundary traction loads.
pub fn assemble_loads(
    mesh: &Mesh,
    dofs: &DofMaps,
    f: &[ScalarField; 2],
    g: &ScalarField,
    traction: Option<&Traction>,
) -> Result<Loads> {
    let tables = QuadTables::new();
    let h = mesh.h;
    let det = 0.25 * h * h;
    let mut f1 = vec![0.0; dofs.n_u];
    let mut f2 = vec![0.0; dofs.n_u];
    let mut gv = vec![0.0; dofs.n_0];
    for ey in 0..mesh.ny_elem {
        for ex in 0..mesh.nx {
            let un = mesh.q2_element_nodes(ex, ey);
            let qn = mesh.q1_element_nodes(ex, ey);
            let (x0, y0) = mesh.element_origin(ex, ey);
            for q in 0..9 {
                let (xi, eta, w) = tables.pts[q];
                let x = x0 + 0.5 * h * (xi + 1.0);
                let y = y0 + 0.5 * h * (eta + 1.0);
                let wd = w * det;
                let (fv1, fv2) = (eval_weight(&f[0], x, y)?, eval_weight(&f[1], x, y)?);
                if fv1 != 0.0 || fv2 != 0.0 {
                    for l in 0..9 {
                        let gl = dofs.u_index[un[l]];
                        if gl == usize::MAX {
                            continue;
                        }
                        let phi = tables.q2_val[q][l];
                        f1[gl] += wd * fv1 * phi;
                        f2[gl] += wd * fv2 * phi;
                    }
                }
                let gvq = eval_weight(g, x, y)?;
                if gvq != 0.0 {
                    for r in 0..4 {
                        let gr = dofs.p0_index[qn[r]];
                        if gr == usize::MAX {
                            continue;
                        }
                        gv[gr] += wd * gvq * tables.q1_val[q][r];
                    }
                }
            }
        }
    }
    if let Some(tr) = traction {
        for seg in &tr.segments {
            add_traction_segment(mesh, dofs, seg, tr.value, &mut f1, &mut f2)?;
        }
    }
    Ok(Loads { f1, f2, g: gv })
}

/// Adds the line integral of a constant traction over one boundary segment.
///
/// The segment must start and end on element corner nodes so each loaded
/// element edge is integrated whole (3-point Gauss per edge).
fn add_traction_segment(
    mesh: &Mesh,
    dofs: &DofMaps,
    seg: &Segment,
    value: [f64; 2],
    f1: &mut [f64],
    f2: &mut [f64],
) -> Result<()> {
    let d = &mesh.domain;
    let h = mesh.h;
    let tol = mesh.geom_tol();
    let (axis_min, axis_len, n_elem) = match seg.edge {
        EdgeSide::Bottom | EdgeSide::Top => (d.x_min, d.width(), mesh.nx),
        EdgeSide::Left | EdgeSide::Right => (d.y_min, d.height(), mesh.ny_elem),
    };
    let lo = seg.start.max(axis_min);
    let hi = seg.end.min(axis_min + axis_len);
    if hi <= lo + tol {
        return Ok(());
    }
    let lo_idx_f = (lo - axis_min) / h;
    let hi_idx_f = (hi - axis_min) / h;
    let lo_idx = lo_idx_f.round();
    let hi_idx = hi_idx_f.round();
    if (lo_idx_f - lo_idx).abs() > 1e-9 || (hi_idx_f - hi_idx).abs() > 1e-9 {
        return Err(Error::Assembly(format!(
            "traction segment endpoints ({lo}, {hi}) do not lie on element corner nodes"
        )));
    }
    let lo_idx = lo_idx as usize;
    let hi_idx = (hi_idx as usize).min(n_elem);
    for e in lo_idx..hi_idx {
        // the three Q2 nodes of the loaded element edge, in edge order
        let edge_nodes: [usize; 3] = match seg.edge {
            EdgeSide::Bottom => {
                let n = mesh.q2_element_nodes(e, 0);
                [n[0], n[1], n[2]]
            }
            EdgeSide::Top => {
                let n = mesh.q2_element_nodes(e, mesh.ny_elem - 1);
                [n[6], n[7], n[8]]
            }
            EdgeSide::Left => {
                let n = mesh.q2_element_nodes(0, e);
                [n[0], n[3], n[6]]
            }
            EdgeSide::Right => {
                let n = mesh.q2_element_nodes(mesh.nx - 1, e);
                [n[2], n[5], n[8]]
            }
        };
        for &(xi, w) in &GAUSS3 {
            let shape = q2_shape_1d(xi);
            let ds = 0.5 * h * w;
            for a in 0..3 {
                let gl = dofs.u_index[edge_nodes[a]];
                if gl == usize::MAX {
                    continue;
                }
                f1[gl] += ds * value[0] * shape[a];
                f2[gl] += ds * value[1] * shape[a];
            }
        }
    }
    Ok(())
}

/// Every assembled spatial matrix and load vector of the discrete problem.
#[derive(Debug, Clone)]
pub struct FemBlocks {
    pub n_u: usize,
    pub n_p: usize,
    pub n_0: usize,
    /// number of Young modulus / conductivity expansion modes
    pub m1: usize,
    pub m2: usize,
    /// elasticity blocks, one value set per mode 0..=m1
    pub a11: ModeFamily,
    pub a12: ModeFamily,
    pub a21: ModeFamily,
    pub a22: ModeFamily,
    pub b1: Csr,
    pub b2: Csr,
    pub b1_t: Csr,
    pub b2_t: Csr,
    /// plain Q1 mass matrix
    pub c: Csr,
    /// Young-modulus-weighted mass matrices, modes 0..=m1
    pub ctilde: ModeFamily,
    /// rows of `c` restricted to pressure-free nodes (n_0 x n_p)
    pub c_b: Csr,
    pub c_b_t: Csr,
    /// mass weighted by the reciprocal mean Young modulus, full / restricted
    pub cbar: Csr,
    pub cbar_b: Csr,
    /// conductivity-weighted stiffness matrices, modes 0..=m2
    pub d: ModeFamily,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub g: Vec<f64>,
    /// fill-reducing orders for the factorized spaces
    pub q2_free_order: Vec<usize>,
    pub q1_all_order: Vec<usize>,
    pub q1_free_order: Vec<usize>,
}

/// Removes the rows of `c` belonging to pressure-constrained nodes.
fn restrict_rows(c: &Csr, dofs: &DofMaps) -> Csr {
    let mut indptr = Vec::with_capacity(dofs.n_0 + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for &node in &dofs.p0_node {
        let (cols, vals) = c.row(node);
        indices.extend_from_slice(cols);
        values.extend_from_slice(vals);
        indptr.push(indices.len());
    }
    Csr {
        nrows: dofs.n_0,
        ncols: c.ncols,
        indptr,
        indices,
        values,
    }
}

/// Assembles every block of the discrete system for the given field
/// expansions, loads and boundary data.
pub fn build_fem_blocks(
    mesh: &Mesh,
    dofs: &DofMaps,
    young: &crate::stochastic::RandomFieldExpansion,
    conductivity: &crate::stochastic::RandomFieldExpansion,
    f: &[ScalarField; 2],
    g: &ScalarField,
    traction: Option<&Traction>,
) -> Result<FemBlocks> {
    let m1 = young.n_modes();
    let m2 = conductivity.n_modes();
    let e_fields: Vec<&ScalarField> = std::iter::once(&young.mean).chain(&young.modes).collect();
    let k_fields: Vec<&ScalarField> = std::iter::once(&conductivity.mean)
        .chain(&conductivity.modes)
        .collect();

    let mut a11 = Vec::with_capacity(m1 + 1);
    let mut a12 = Vec::with_capacity(m1 + 1);
    let mut a21 = Vec::with_capacity(m1 + 1);
    let mut a22 = Vec::with_capacity(m1 + 1);
    let mut ctilde = Vec::with_capacity(m1 + 1);
    for field in &e_fields {
        let el = assemble_elasticity(mesh, dofs, field)?;
        a11.push(el.a11);
        a12.push(el.a12);
        a21.push(el.a21);
        a22.push(el.a22);
        ctilde.push(assemble_mass(mesh, dofs, field, MassSpace::Q1Full)?);
    }
    let mut d = Vec::with_capacity(m2 + 1);
    for field in &k_fields {
        d.push(assemble_stiffness(mesh, dofs, field)?);
    }

    let (b1, b2) = assemble_divergence(mesh, dofs)?;
    let c = assemble_mass(mesh, dofs, &ScalarField::Constant(1.0), MassSpace::Q1Full)?;

    let mean = young.mean.clone();
    let inv_mean = ScalarField::custom(move |x, y| 1.0 / mean.eval(x, y));
    let cbar = assemble_mass(mesh, dofs, &inv_mean, MassSpace::Q1Full)?;
    let cbar_b = assemble_mass(mesh, dofs, &inv_mean, MassSpace::Q1Restricted)?;

    let loads = assemble_loads(mesh, dofs, f, g, traction)?;
    let c_b = restrict_rows(&c, dofs);

    let q2_nd = nested_dissection(mesh.q2.nx_nodes, mesh.q2.ny_nodes);
    let q1_nd = nested_dissection(mesh.q1.nx_nodes, mesh.q1.ny_nodes);
    let all: Vec<usize> = (0..mesh.q1.n_nodes()).collect();

    Ok(FemBlocks {
        n_u: dofs.n_u,
        n_p: dofs.n_p,
        n_0: dofs.n_0,
        m1,
        m2,
        a11: ModeFamily::from_matrices(&a11)?,
        a12: ModeFamily::from_matrices(&a12)?,
        a21: ModeFamily::from_matrices(&a21)?,
        a22: ModeFamily::from_matrices(&a22)?,
        b1_t: b1.transpose(),
        b2_t: b2.transpose(),
        b1,
        b2,
        c_b_t: c_b.transpose(),
        c_b,
        c,
        ctilde: ModeFamily::from_matrices(&ctilde)?,
        cbar,
        cbar_b,
        d: ModeFamily::from_matrices(&d)?,
        f1: loads.f1,
        f2: loads.f2,
        g: loads.g,
        q2_free_order: restrict_order(&q2_nd, &dofs.u_index),
        q1_all_order: restrict_order(&q1_nd, &all),
        q1_free_order: restrict_order(&q1_nd, &dofs.p0_index),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, classify_dofs, BoundarySpec, RectDomain};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unconstrained(domain: RectDomain, level: u32) -> (Mesh, DofMaps) {
        let mesh = build_mesh(domain, level).unwrap();
        let dofs = classify_dofs(&mesh, &BoundarySpec::unconstrained()).unwrap();
        (mesh, dofs)
    }

    /// Gauss-Legendre rule on [-1,1] (test oracle helper).
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 1..n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    }

    fn q2_basis(xi: f64, eta: f64) -> ([f64; 9], [f64; 9], [f64; 9]) {
        let (s, ds) = (q2_shape_1d(xi), q2_deriv_1d(xi));
        let (t, dt) = (q2_shape_1d(eta), q2_deriv_1d(eta));
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

    fn q1_basis(xi: f64, eta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
        let (n, dn) = (q1_shape_1d(xi), q1_deriv_1d());
        let (m, dm) = (q1_shape_1d(eta), q1_deriv_1d());
        let mut v = [0.0; 4];
        let mut dx = [0.0; 4];
        let mut dy = [0.0; 4];
        for b in 0..2 {
            for a in 0..2 {
                v[b * 2 + a] = n[a] * m[b];
                dx[b * 2 + a] = dn[a] * m[b];
                dy[b * 2 + a] = n[a] * dm[b];
            }
        }
        (v, dx, dy)
    }

    #[test]
    fn zero_coefficient_gives_zero_blocks() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 2);
        let el = assemble_elasticity(&mesh, &dofs, &ScalarField::Constant(0.0)).unwrap();
        assert_eq!(el.a11.max_abs(), 0.0);
        assert_eq!(el.a12.max_abs(), 0.0);
        assert_eq!(el.a21.max_abs(), 0.0);
        assert_eq!(el.a22.max_abs(), 0.0);
        let d = assemble_stiffness(&mesh, &dofs, &ScalarField::Constant(0.0)).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn single_element_elasticity_matches_quadrature_oracle() {
        // one element, no constraints: compare against an independent
        // high-order quadrature of the strain products
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 1);
        let el = assemble_elasticity(&mesh, &dofs, &ScalarField::Constant(1.0)).unwrap();
        let rule = gauss_legendre(6);
        let scale = 2.0 / mesh.h; // reference-to-physical derivative factor
        let det = 0.25 * mesh.h * mesh.h;
        let mut o11 = [[0.0f64; 9]; 9];
        let mut o21 = [[0.0f64; 9]; 9];
        let mut o22 = [[0.0f64; 9]; 9];
        for &(xi, wx) in &rule {
            for &(eta, wy) in &rule {
                let (_, dx, dy) = q2_basis(xi, eta);
                let w = wx * wy * det;
                for i in 0..9 {
                    for l in 0..9 {
                        let (dxi, dyi) = (scale * dx[i], scale * dy[i]);
                        let (dxl, dyl) = (scale * dx[l], scale * dy[l]);
                        o11[i][l] += w * (dxi * dxl + 0.5 * dyi * dyl);
                        o22[i][l] += w * (dyi * dyl + 0.5 * dxi * dxl);
                        o21[i][l] += w * 0.5 * dxi * dyl;
                    }
                }
            }
        }
        let d11 = el.a11.to_dense();
        let d21 = el.a21.to_dense();
        let d22 = el.a22.to_dense();
        for i in 0..9 {
            for l in 0..9 {
                assert!((d11[i][l] - o11[i][l]).abs() <= 1e-12 * o11[i][i].abs().max(1.0));
                assert!((d21[i][l] - o21[i][l]).abs() <= 1e-12 * o11[i][i].abs().max(1.0));
                assert!((d22[i][l] - o22[i][l]).abs() <= 1e-12 * o11[i][i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn rigid_translations_are_in_the_kernel() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 3);
        let el = assemble_elasticity(&mesh, &dofs, &ScalarField::Constant(2.5)).unwrap();
        let ones = vec![1.0; dofs.n_u];
        for m in [&el.a11, &el.a21, &el.a12, &el.a22] {
            let mut y = vec![0.0; dofs.n_u];
            m.spmv_acc(1.0, &ones, &mut y);
            let max = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(max < 1e-12 * m.max_abs(), "kernel violation {max}");
        }
    }

    #[test]
    fn elasticity_blocks_symmetry_is_exact() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 2);
        let field = ScalarField::custom(|x, y| 1.0 + 0.3 * x + 0.2 * y * y);
        let el = assemble_elasticity(&mesh, &dofs, &field).unwrap();
        let a11t = el.a11.transpose();
        assert_eq!(el.a11.to_dense(), a11t.to_dense());
        let a22t = el.a22.transpose();
        assert_eq!(el.a22.to_dense(), a22t.to_dense());
        assert_eq!(el.a12.to_dense(), el.a21.transpose().to_dense());
    }

    #[test]
    fn composite_elasticity_is_positive_semidefinite() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 3);
        let el = assemble_elasticity(&mesh, &dofs, &ScalarField::Constant(1.0)).unwrap();
        let n = dofs.n_u;
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let v1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y1 = vec![0.0; n];
            let mut y2 = vec![0.0; n];
            el.a11.spmv_acc(1.0, &v1, &mut y1);
            el.a12.spmv_acc(1.0, &v2, &mut y1);
            el.a21.spmv_acc(1.0, &v1, &mut y2);
            el.a22.spmv_acc(1.0, &v2, &mut y2);
            let quad: f64 = v1.iter().zip(&y1).map(|(a, b)| a * b).sum::<f64>()
                + v2.iter().zip(&y2).map(|(a, b)| a * b).sum::<f64>();
            assert!(quad >= -1e-10, "negative quadratic form {quad}");
        }
    }

    #[test]
    fn divergence_kernel_and_linear_field() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 1);
        let (b1, b2) = assemble_divergence(&mesh, &dofs).unwrap();
        // constant displacement: zero divergence row sums
        let ones = vec![1.0; dofs.n_u];
        for b in [&b1, &b2] {
            let mut y = vec![0.0; dofs.n_p];
            b.spmv_acc(1.0, &ones, &mut y);
            for v in y {
                assert!(v.abs() < 1e-13);
            }
        }
        // u = (x, 0): B1 u = -(mass row sums)
        let x_coeff: Vec<f64> = dofs
            .u_node
            .iter()
            .map(|&n| mesh.q2.node_xy(n).0)
            .collect();
        let mut y = vec![0.0; dofs.n_p];
        b1.spmv_acc(1.0, &x_coeff, &mut y);
        let c = assemble_mass(&mesh, &dofs, &ScalarField::Constant(1.0), MassSpace::Q1Full).unwrap();
        let cd = c.to_dense();
        for r in 0..dofs.n_p {
            let row_sum: f64 = cd[r].iter().sum();
            assert!((y[r] + row_sum).abs() < 1e-13, "row {r}: {} vs {}", y[r], -row_sum);
        }
    }

    #[test]
    fn divergence_pairing_matches_quadrature_oracle() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 2);
        let (b1, _) = assemble_divergence(&mesh, &dofs).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let q: Vec<f64> = (0..dofs.n_p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..dofs.n_u).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut bv = vec![0.0; dofs.n_p];
        b1.spmv_acc(1.0, &v, &mut bv);
        let lhs: f64 = q.iter().zip(&bv).map(|(a, b)| a * b).sum();
        // oracle: -integral of q_h * d(v_h)/dx by direct evaluation
        let rule = gauss_legendre(4);
        let scale = 2.0 / mesh.h;
        let det = 0.25 * mesh.h * mesh.h;
        let mut rhs = 0.0;
        for ey in 0..mesh.ny_elem {
            for ex in 0..mesh.nx {
                let un = mesh.q2_element_nodes(ex, ey);
                let qn = mesh.q1_element_nodes(ex, ey);
                for &(xi, wx) in &rule {
                    for &(eta, wy) in &rule {
                        let (qv, _, _) = q1_basis(xi, eta);
                        let (_, dvx, _) = q2_basis(xi, eta);
                        let qh: f64 = (0..4).map(|r| q[qn[r]] * qv[r]).sum();
                        let dv: f64 = (0..9).map(|l| v[un[l]] * scale * dvx[l]).sum();
                        rhs -= wx * wy * det * qh * dv;
                    }
                }
            }
        }
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn mass_partition_of_unity() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 3);
        let c = assemble_mass(&mesh, &dofs, &ScalarField::Constant(1.0), MassSpace::Q1Full).unwrap();
        let total: f64 = c.values.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);

        let (mesh2, dofs2) = unconstrained(RectDomain::new(-1.0, 1.0, -1.0, 1.0).unwrap(), 3);
        let c2 = assemble_mass(&mesh2, &dofs2, &ScalarField::Constant(1.0), MassSpace::Q1Full).unwrap();
        let total2: f64 = c2.values.iter().sum();
        assert!((total2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_weight_scales_mass() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 2);
        let c = assemble_mass(&mesh, &dofs, &ScalarField::Constant(1.0), MassSpace::Q1Full).unwrap();
        let cw = assemble_mass(&mesh, &dofs, &ScalarField::Constant(3.75), MassSpace::Q1Full).unwrap();
        for (a, b) in c.values.iter().zip(&cw.values) {
            assert!((3.75 * a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn stiffness_constant_kernel_and_oracle() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 3);
        let d = assemble_stiffness(&mesh, &dofs, &ScalarField::Constant(1.0)).unwrap();
        let dd = d.to_dense();
        for row in &dd {
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-12);
        }
        // single element against the oracle
        let (mesh1, dofs1) = unconstrained(RectDomain::unit_square(), 1);
        let d1 = assemble_stiffness(&mesh1, &dofs1, &ScalarField::Constant(1.0)).unwrap();
        let rule = gauss_legendre(5);
        let scale = 2.0 / mesh1.h;
        let det = 0.25 * mesh1.h * mesh1.h;
        let mut oracle = [[0.0f64; 4]; 4];
        for &(xi, wx) in &rule {
            for &(eta, wy) in &rule {
                let (_, dx, dy) = q1_basis(xi, eta);
                for r in 0..4 {
                    for s in 0..4 {
                        oracle[r][s] += wx
                            * wy
                            * det
                            * (scale * dx[r] * scale * dx[s] + scale * dy[r] * scale * dy[s]);
                    }
                }
            }
        }
        let dd1 = d1.to_dense();
        for r in 0..4 {
            for s in 0..4 {
                assert!((dd1[r][s] - oracle[r][s]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonfinite_weight_is_rejected() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 1);
        let bad = ScalarField::custom(|x, _| if x > 0.3 { f64::NAN } else { 1.0 });
        assert!(matches!(
            assemble_mass(&mesh, &dofs, &bad, MassSpace::Q1Full),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn body_load_partition_of_unity() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 2);
        let loads = assemble_loads(
            &mesh,
            &dofs,
            &[ScalarField::Constant(1.0), ScalarField::Constant(1.0)],
            &ScalarField::Constant(0.0),
            None,
        )
        .unwrap();
        let s1: f64 = loads.f1.iter().sum();
        let s2: f64 = loads.f2.iter().sum();
        assert!((s1 - 1.0).abs() < 1e-13);
        assert!((s2 - 1.0).abs() < 1e-13);
        assert!(loads.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn footing_traction_total_force() {
        use crate::mesh::Segment;
        // strip load of intensity 1.5e4 on x in [-2, 2] of the top edge
        let domain = RectDomain::new(-5.0, 5.0, 0.0, 10.0).unwrap();
        let mesh = build_mesh(domain, 5).unwrap();
        let bc = BoundarySpec::new(
            vec![
                Segment::full(EdgeSide::Bottom),
                Segment::full(EdgeSide::Left),
                Segment::full(EdgeSide::Right),
            ],
            vec![
                Segment::full(EdgeSide::Bottom),
                Segment::full(EdgeSide::Left),
                Segment::full(EdgeSide::Right),
                Segment::full(EdgeSide::Top),
            ],
        );
        let dofs = classify_dofs(&mesh, &bc).unwrap();
        let traction = Traction {
            segments: vec![Segment::span(EdgeSide::Top, -2.0, 2.0)],
            value: [0.0, -1.5e4],
        };
        let loads = assemble_loads(
            &mesh,
            &dofs,
            &[ScalarField::Constant(0.0), ScalarField::Constant(0.0)],
            &ScalarField::Constant(0.0),
            Some(&traction),
        )
        .unwrap();
        let s2: f64 = loads.f2.iter().sum();
        assert!((s2 + 6.0e4).abs() < 1e-9 * 6.0e4, "total load {s2}");
        assert!(loads.f1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn traction_endpoints_must_hit_corner_nodes() {
        let domain = RectDomain::unit_square();
        let mesh = build_mesh(domain, 3).unwrap();
        let dofs = classify_dofs(&mesh, &BoundarySpec::unconstrained()).unwrap();
        let traction = Traction {
            segments: vec![Segment::span(EdgeSide::Top, 0.1, 0.6)],
            value: [0.0, 1.0],
        };
        let err = assemble_loads(
            &mesh,
            &dofs,
            &[ScalarField::Constant(0.0), ScalarField::Constant(0.0)],
            &ScalarField::Constant(0.0),
            Some(&traction),
        );
        assert!(matches!(err, Err(Error::Assembly(_))));
    }

    #[test]
    fn zero_sources_give_zero_vectors() {
        let (mesh, dofs) = unconstrained(RectDomain::unit_square(), 2);
        let loads = assemble_loads(
            &mesh,
            &dofs,
            &[ScalarField::Constant(0.0), ScalarField::Constant(0.0)],
            &ScalarField::Constant(0.0),
            None,
        )
        .unwrap();
        assert!(loads.f1.iter().all(|&v| v == 0.0));
        assert!(loads.f2.iter().all(|&v| v == 0.0));
        assert!(loads.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn restricted_mass_rows_match_full_rows() {
        use crate::mesh::Segment;
        let mesh = build_mesh(RectDomain::unit_square(), 3).unwrap();
        let bc = BoundarySpec::new(
            vec![Segment::full(EdgeSide::Bottom), Segment::full(EdgeSide::Left)],
            vec![Segment::full(EdgeSide::Top), Segment::full(EdgeSide::Right)],
        );
        let dofs = classify_dofs(&mesh, &bc).unwrap();
        let young = crate::stochastic::RandomFieldExpansion::affine(1.0, &[0.1], 1.0).unwrap();
        let kappa = crate::stochastic::RandomFieldExpansion::affine(1.0, &[0.1], 1.0).unwrap();
        let fem = build_fem_blocks(
            &mesh,
            &dofs,
            &young,
            &kappa,
            &[ScalarField::Constant(1.0), ScalarField::Constant(1.0)],
            &ScalarField::Constant(0.0),
            None,
        )
        .unwrap();
        let cd = fem.c.to_dense();
        let cbd = fem.c_b.to_dense();
        for (r, &node) in dofs.p0_node.iter().enumerate() {
            assert_eq!(cbd[r], cd[node], "restricted row {r} differs");
        }
        // weighted mass with the constant mean reduces to a scaled plain mass
        let ct0 = fem.ctilde.mode(0);
        for (a, b) in fem.c.values.iter().zip(&ct0.values) {
            assert!((a * 1.0 - b).abs() < 1e-14);
        }
    }
}
