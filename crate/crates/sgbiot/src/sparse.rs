//! Sparse matrix storage, kernels and a sparse LDL^T factorization.
//!
//! Matrices are stored in compressed sparse row form. Multi-right-hand-side
//! operations act on row-major coefficient blocks (`n_rows x n_rhs`) so the
//! inner loops run over contiguous memory.
//!
//! The factorization is an up-looking LDL^T (elimination tree + sparse
//! triangular solves per row) applied to a symmetrically permuted matrix.
//! For the structured grids used here, a geometric nested-dissection
//! permutation keeps fill low.

use rayon::prelude::*;

use crate::{Error, Result};

/// Sparse matrix in compressed sparse row format.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds a CSR matrix from triplets, summing duplicates.
    ///
    /// Triplets are sorted stably by (row, col); duplicates are added in
    /// insertion order so assembly is reproducible. Structural zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Csr {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last = None;
        for &t in &order {
            let (r, c, v) = triplets[t];
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                last = Some((r, c));
            }
            indptr[r + 1] = indices.len();
        }
        // rows without entries inherit the running offset
        for r in 0..nrows {
            if indptr[r + 1] < indptr[r] {
                indptr[r + 1] = indptr[r];
            }
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Csr {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    /// Exact transpose (entries reordered, values unchanged).
    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let mut indptr = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[p];
                let dst = indptr[c];
                indices[dst] = r;
                values[dst] = self.values[p];
                indptr[c] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    /// `alpha*self + beta*other` for matrices with identical sparsity pattern.
    pub fn linear_combination(&self, alpha: f64, other: &Csr, beta: f64) -> Result<Csr> {
        if self.indptr != other.indptr || self.indices != other.indices {
            return Err(Error::Dimension(
                "linear combination requires identical sparsity patterns".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values,
        })
    }

    pub fn scale(&self, s: f64) -> Csr {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m
    }

    /// y += alpha * A * x for a single right-hand side.
    pub fn spmv_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[i] += alpha * acc;
        }
    }

    /// Dense copy, for small oracles and diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                d[i][c] += v;
            }
        }
        d
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A set of matrices sharing one sparsity pattern (one per expansion mode).
///
/// Weighted finite element matrices for different coefficient modes live on
/// the same mesh connectivity, so only the value arrays differ. Sharing the
/// pattern lets kernels stream one index array for all modes.
#[derive(Debug, Clone)]
pub struct ModeFamily {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    /// One value array per mode, each aligned with `indices`.
    pub values: Vec<Vec<f64>>,
}

impl ModeFamily {
    /// Collects CSR matrices with identical patterns into a family.
    pub fn from_matrices(mats: &[Csr]) -> Result<ModeFamily> {
        let first = mats.first().ok_or_else(|| {
            Error::Dimension("mode family needs at least one matrix".into())
        })?;
        for m in mats.iter().skip(1) {
            if m.indptr != first.indptr || m.indices != first.indices {
                return Err(Error::Dimension(
                    "mode family requires identical sparsity patterns".into(),
                ));
            }
        }
        Ok(ModeFamily {
            nrows: first.nrows,
            ncols: first.ncols,
            indptr: first.indptr.clone(),
            indices: first.indices.clone(),
            values: mats.iter().map(|m| m.values.clone()).collect(),
        })
    }

    pub fn from_single(m: &Csr) -> ModeFamily {
        ModeFamily {
            nrows: m.nrows,
            ncols: m.ncols,
            indptr: m.indptr.clone(),
            indices: m.indices.clone(),
            values: vec![m.values.clone()],
        }
    }

    pub fn mode(&self, k: usize) -> Csr {
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values[k].clone(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.values.len()
    }
}

/// Sparse LDL^T factorization of a symmetric positive definite matrix.
///
/// Factors P A P^T = L D L^T where P is a caller-supplied symmetric
/// permutation. Solves accept row-major multi-RHS blocks.
#[derive(Debug, Clone)]
pub struct LdltFactor {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdltFactor {
    /// Factors a symmetric matrix given in full CSR form.
    ///
    /// `perm` maps new index -> old index; pass `None` for the identity.
    /// Fails with the pivot index if a nonpositive pivot appears.
    pub fn new(a: &Csr, perm: Option<&[usize]>) -> std::result::Result<LdltFactor, usize> {
        let n = a.nrows;
        assert_eq!(a.nrows, a.ncols);
        let perm: Vec<usize> = match perm {
            Some(p) => p.to_vec(),
            None => (0..n).collect(),
        };
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        // Upper triangle of P A P^T in CSC form == lower triangle in CSR of
        // the permuted matrix, column-indexed. Build column counts first.
        let mut counts = vec![0usize; n + 1];
        for old_r in 0..n {
            let new_r = inv[old_r];
            let (cols, _) = a.row(old_r);
            for &old_c in cols {
                let new_c = inv[old_c];
                // keep entry (min,max) as row<=col in the upper CSC, stored per column max
                let col = new_r.max(new_c);
                if new_r <= new_c {
                    counts[col + 1] += 1;
                }
            }
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let nz_upper = counts[n];
        let mut ap = counts.clone();
        let mut ai = vec![0usize; nz_upper];
        let mut ax = vec![0.0; nz_upper];
        for old_r in 0..n {
            let new_r = inv[old_r];
            let (cols, vals) = a.row(old_r);
            for (&old_c, &v) in cols.iter().zip(vals) {
                let new_c = inv[old_c];
                if new_r <= new_c {
                    let col = new_c;
                    let row = new_r;
                    let dst = ap[col];
                    ai[dst] = row;
                    ax[dst] = v;
                    ap[col] += 1;
                }
            }
        }
        let ap = counts;

        // Symbolic pass: elimination tree and column counts of L.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                if i < k {
                    while flag[i] != k {
                        if parent[i] == usize::MAX {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let mut li = vec![0usize; lp[n]];
        let mut lx = vec![0.0; lp[n]];
        let mut d = vec![0.0; n];

        // Numeric pass, up-looking.
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut lfill = vec![0usize; n]; // entries written so far per column
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            y[k] = 0.0;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                if i <= k {
                    y[i] += ax[p];
                    let mut len = 0usize;
                    while flag[i] != k {
                        pattern[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                    while len > 0 {
                        len -= 1;
                        top -= 1;
                        pattern[top] = pattern[len];
                    }
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for t in top..n {
                let i = pattern[t];
                let yi = y[i];
                y[i] = 0.0;
                let p2 = lp[i] + lfill[i];
                for p in lp[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                li[p2] = k;
                lx[p2] = lki;
                lfill[i] += 1;
            }
            if !(d[k] > 0.0) {
                return Err(k);
            }
        }
        Ok(LdltFactor {
            n,
            perm,
            lp,
            li,
            lx,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves A X = B in place for a row-major block of `nrhs` columns.
    pub fn solve_block(&self, b: &mut [f64], nrhs: usize) {
        assert_eq!(b.len(), self.n * nrhs);
        let mut w = vec![0.0; self.n * nrhs];
        // permute rows: w[new] = b[old]
        for (new, &old) in self.perm.iter().enumerate() {
            w[new * nrhs..(new + 1) * nrhs].copy_from_slice(&b[old * nrhs..(old + 1) * nrhs]);
        }
        // forward solve L z = w (L unit lower, stored by columns)
        for j in 0..self.n {
            let (head, tail) = w.split_at_mut((j + 1) * nrhs);
            let zj = &head[j * nrhs..];
            for p in self.lp[j]..self.lp[j + 1] {
                let i = self.li[p];
                let lij = self.lx[p];
                let dst = &mut tail[(i - j - 1) * nrhs..(i - j) * nrhs];
                for (d, s) in dst.iter_mut().zip(zj.iter()) {
                    *d -= lij * s;
                }
            }
        }
        // diagonal
        for j in 0..self.n {
            let dj = self.d[j];
            for v in &mut w[j * nrhs..(j + 1) * nrhs] {
                *v /= dj;
            }
        }
        // backward solve L^T x = z
        for j in (0..self.n).rev() {
            let (head, tail) = w.split_at_mut((j + 1) * nrhs);
            let xj = &mut head[j * nrhs..];
            for p in self.lp[j]..self.lp[j + 1] {
                let i = self.li[p];
                let lij = self.lx[p];
                let src = &tail[(i - j - 1) * nrhs..(i - j) * nrhs];
                for (d, s) in xj.iter_mut().zip(src.iter()) {
                    *d -= lij * s;
                }
            }
        }
        // un-permute
        for (new, &old) in self.perm.iter().enumerate() {
            b[old * nrhs..(old + 1) * nrhs].copy_from_slice(&w[new * nrhs..(new + 1) * nrhs]);
        }
    }

    pub fn solve_vec(&self, b: &mut [f64]) {
        self.solve_block(b, 1);
    }
}

/// Geometric nested-dissection order for a `w x h` lattice.
///
/// Returns the node visit sequence (new -> old); separators are ordered last
/// at each level, which keeps LDL^T fill near-optimal on grid graphs.
pub fn nested_dissection(w: usize, h: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(w * h);
    dissect(0, 0, w, h, w, &mut order);
    debug_assert_eq!(order.len(), w * h);
    order
}

fn dissect(x0: usize, y0: usize, w: usize, h: usize, stride: usize, out: &mut Vec<usize>) {
    if w == 0 || h == 0 {
        return;
    }
    if w.max(h) <= 2 {
        for j in 0..h {
            for i in 0..w {
                out.push((y0 + j) * stride + (x0 + i));
            }
        }
        return;
    }
    if w >= h {
        let mid = w / 2;
        dissect(x0, y0, mid, h, stride, out);
        dissect(x0 + mid + 1, y0, w - mid - 1, h, stride, out);
        for j in 0..h {
            out.push((y0 + j) * stride + (x0 + mid));
        }
    } else {
        let mid = h / 2;
        dissect(x0, y0, w, mid, stride, out);
        dissect(x0, y0 + mid + 1, w, h - mid - 1, stride, out);
        for i in 0..w {
            out.push((y0 + mid) * stride + (x0 + i));
        }
    }
}

/// Restricts a full-lattice visit sequence to a subset of retained nodes.
///
/// `compressed[node]` gives the retained index of `node`, or `usize::MAX`.
/// The result maps new index -> retained index and preserves the sequence.
pub fn restrict_order(seq: &[usize], compressed: &[usize]) -> Vec<usize> {
    seq.iter()
        .filter_map(|&node| {
            let c = compressed[node];
            (c != usize::MAX).then_some(c)
        })
        .collect()
}

/// y += coef * sum_k K_k * X * G_k on row-major blocks.
///
/// `gs[k]` lists the nonzero entries (row, col, value) of the symmetric
/// parametric coupling matrix G_k; `None` entries mean the identity. The
/// per-row accumulator keeps the whole product in cache and avoids forming
/// K_k * X.
pub fn apply_kron_sum(
    family: &ModeFamily,
    gs: &[Option<&[(u32, u32, f64)]>],
    coef: f64,
    x: &[f64],
    ny: usize,
    y: &mut [f64],
) {
    assert_eq!(gs.len(), family.n_modes());
    assert_eq!(x.len(), family.ncols * ny);
    assert_eq!(y.len(), family.nrows * ny);
    let indptr = &family.indptr;
    let indices = &family.indices;
    let run = |(i, yrow): (usize, &mut [f64])| {
        let mut acc = vec![0.0; ny];
        let (a, b) = (indptr[i], indptr[i + 1]);
        let cols = &indices[a..b];
        for (k, g) in gs.iter().enumerate() {
            let vals = &family.values[k][a..b];
            match g {
                None => {
                    // identity coupling: accumulate K_k x directly
                    for (&c, &v) in cols.iter().zip(vals) {
                        let xr = &x[c * ny..c * ny + ny];
                        for (d, s) in yrow.iter_mut().zip(xr) {
                            *d += coef * v * s;
                        }
                    }
                }
                Some(entries) => {
                    acc.fill(0.0);
                    for (&c, &v) in cols.iter().zip(vals) {
                        let xr = &x[c * ny..c * ny + ny];
                        for (d, s) in acc.iter_mut().zip(xr) {
                            *d += v * s;
                        }
                    }
                    for &(r, c, g) in entries.iter() {
                        yrow[r as usize] += coef * g * acc[c as usize];
                    }
                }
            }
        }
    };
    if family.nrows * ny > 1 << 14 {
        y.par_chunks_mut(ny)
            .with_min_len(64)
            .enumerate()
            .for_each(run);
    } else {
        y.chunks_mut(ny).enumerate().for_each(run);
    }
}
