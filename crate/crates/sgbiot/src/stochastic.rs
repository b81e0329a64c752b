//! Parametric approximation: multi-index sets, orthonormal Legendre bases,
//! the sparse coupling matrices of the chaos expansion, and analytic
//! Karhunen-Loeve eigenpairs of the separable exponential covariance kernel.

use std::collections::HashMap;
use std::sync::Arc;

use crate::assembly::ScalarField;
use crate::mesh::{Mesh, RectDomain};
use crate::{Error, Result};

/// Set of multi-indices of bounded total degree, graded lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    pub m: usize,
    pub degree: usize,
    indices: Vec<Vec<u32>>,
    lookup: HashMap<Vec<u32>, usize>,
}

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn index(&self, i: usize) -> &[u32] {
        &self.indices[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.indices.iter().map(|v| v.as_slice())
    }

    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }
}

/// All multi-indices in `m` variables with total degree at most `p`,
/// ordered by degree and then lexicographically; the zero index comes first.
/// `m = 0` yields the single empty index (a deterministic problem).
pub fn total_degree_set(m: usize, p: usize) -> MultiIndexSet {
    let mut indices = Vec::new();
    if m == 0 {
        indices.push(Vec::new());
        let lookup = HashMap::from([(Vec::new(), 0)]);
        return MultiIndexSet {
            m,
            degree: p,
            indices,
            lookup,
        };
    }
    let mut current = vec![0u32; m];
    for d in 0..=p as u32 {
        fill_degree(&mut indices, &mut current, 0, d);
    }
    let lookup = indices
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), i))
        .collect();
    MultiIndexSet {
        m,
        degree: p,
        indices,
        lookup,
    }
}

fn fill_degree(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for v in 0..=remaining {
        current[pos] = v;
        fill_degree(out, current, pos + 1, remaining - v);
        current[pos] = 0;
    }
}

/// Half-width of a symmetric parameter interval `[-a, a]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamInterval {
    pub half_width: f64,
}

impl ParamInterval {
    pub fn new(half_width: f64) -> Result<ParamInterval> {
        if !(half_width > 0.0) {
            return Err(Error::Stochastic(format!(
                "interval half-width must be positive, got {half_width}"
            )));
        }
        Ok(ParamInterval { half_width })
    }
}

/// Sparse symmetric coupling matrix of one parameter against the chaos basis.
#[derive(Debug, Clone)]
pub struct GMatrix {
    pub n: usize,
    /// all nonzero (row, col, value) entries; empty for the identity
    pub entries: Vec<(u32, u32, f64)>,
    pub identity: bool,
}

impl GMatrix {
    pub fn identity(n: usize) -> GMatrix {
        GMatrix {
            n,
            entries: Vec::new(),
            identity: true,
        }
    }

    /// Dense copy for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        if self.identity {
            for i in 0..self.n {
                d[i][i] = 1.0;
            }
        } else {
            for &(r, c, v) in &self.entries {
                d[r as usize][c as usize] += v;
            }
        }
        d
    }
}

/// Recurrence coefficient of the orthonormal Legendre family: the entry
/// coupling degrees n-1 and n under multiplication by the variable.
#[inline]
pub fn legendre_coupling(n: u32) -> f64 {
    let nf = n as f64;
    nf / (4.0 * nf * nf - 1.0).sqrt()
}

/// Values of the orthonormal Legendre polynomials 0..=n_max at `t` in [-1,1]
/// (orthonormal with respect to the uniform probability measure).
pub fn orthonormal_legendre(n_max: usize, t: f64) -> Vec<f64> {
    let mut vals = Vec::with_capacity(n_max + 1);
    vals.push(1.0);
    if n_max == 0 {
        return vals;
    }
    vals.push(3f64.sqrt() * t);
    for k in 1..n_max {
        let next = (t * vals[k] - legendre_coupling(k as u32) * vals[k - 1])
            / legendre_coupling(k as u32 + 1);
        vals.push(next);
    }
    vals
}

/// Evaluates the multivariate basis function for each multi-index at the
/// parameter point `y` (coordinates scaled by the interval half-widths).
pub fn chaos_basis_at(set: &MultiIndexSet, intervals: &[ParamInterval], y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != set.m || intervals.len() != set.m {
        return Err(Error::Dimension(
            "parameter point length must match the index set".into(),
        ));
    }
    for (yi, iv) in y.iter().zip(intervals) {
        if yi.abs() > iv.half_width * (1.0 + 1e-12) {
            return Err(Error::Stochastic(format!(
                "parameter value {yi} outside [-{a}, {a}]",
                a = iv.half_width
            )));
        }
    }
    let per_dim: Vec<Vec<f64>> = y
        .iter()
        .zip(intervals)
        .map(|(yi, iv)| orthonormal_legendre(set.degree, yi / iv.half_width))
        .collect();
    Ok(set
        .iter()
        .map(|alpha| {
            alpha
                .iter()
                .enumerate()
                .map(|(i, &a)| per_dim[i][a as usize])
                .product()
        })
        .collect())
}

/// Builds G_0..G_M for the given index set and parameter intervals.
///
/// G_0 is the identity; G_k couples multi-indices differing by one in
/// coordinate k, with at most two nonzeros per row.
pub fn g_matrices(set: &MultiIndexSet, intervals: &[ParamInterval]) -> Result<Vec<GMatrix>> {
    if intervals.len() != set.m {
        return Err(Error::Dimension(format!(
            "expected {} intervals, got {}",
            set.m,
            intervals.len()
        )));
    }
    let n = set.len();
    let mut out = vec![GMatrix::identity(n)];
    for k in 0..set.m {
        let a = intervals[k].half_width;
        let mut entries = Vec::new();
        for (row, alpha) in set.iter().enumerate() {
            let mut beta = alpha.to_vec();
            beta[k] += 1;
            if let Some(col) = set.position(&beta) {
                let v = a * legendre_coupling(alpha[k] + 1);
                entries.push((row as u32, col as u32, v));
                entries.push((col as u32, row as u32, v));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        out.push(GMatrix {
            n,
            entries,
            identity: false,
        });
    }
    Ok(out)
}

/// One analytic eigenfunction of the 1D exponential kernel on an interval.
#[derive(Debug, Clone, Copy)]
pub struct Kl1dMode {
    pub lambda: f64,
    /// angular frequency of the eigenfunction
    pub omega: f64,
    /// true for the even (cosine) family
    pub even: bool,
    /// interval midpoint; eigenfunctions are centered here
    pub center: f64,
    norm: f64,
    sign: f64,
}

impl Kl1dMode {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let t = self.omega * (x - self.center);
        let v = if self.even { t.cos() } else { t.sin() };
        self.sign * v / self.norm
    }
}

/// Analytic eigenpairs of `exp(-|x - x'| / corr_len)` on an interval of
/// half-length `half_len` centered at `center`, sorted by eigenvalue.
///
/// Roots of the two transcendental families are isolated by the alternating
/// brackets `((m-1) pi / (2 half_len), m pi / (2 half_len))` and resolved by
/// bisection on pole-free forms. Eigenfunctions are L2-normalized; even
/// modes are positive at the interval ends, odd modes have positive slope
/// at the center.
pub fn kl_eigenpairs_1d(
    corr_len: f64,
    half_len: f64,
    center: f64,
    count: usize,
) -> Result<Vec<Kl1dMode>> {
    if !(corr_len > 0.0) || !(half_len > 0.0) {
        return Err(Error::Stochastic(
            "correlation length and interval half-length must be positive".into(),
        ));
    }
    let c = 1.0 / corr_len;
    let ell = half_len;
    let mut modes = Vec::with_capacity(count);
    for m in 1..=count {
        let lo = (m as f64 - 1.0) * std::f64::consts::PI / (2.0 * ell);
        let hi = m as f64 * std::f64::consts::PI / (2.0 * ell);
        let even = m % 2 == 1;
        // pole-free residuals of w tan(wL) = c and w + c tan(wL) = 0
        let f = |w: f64| {
            if even {
                w * (w * ell).sin() - c * (w * ell).cos()
            } else {
                w * (w * ell).cos() + c * (w * ell).sin()
            }
        };
        let eps = (hi - lo) * 1e-12;
        let (mut a, mut b) = (lo + eps, hi - eps);
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            b = a;
        } else if fb != 0.0 && fa.signum() == fb.signum() {
            return Err(Error::Stochastic(format!(
                "failed to bracket eigenfrequency {m} of the exponential kernel"
            )));
        }
        let mut fa = fa;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let fm = f(mid);
            if fm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        let w = 0.5 * (a + b);
        let lambda = 2.0 * c / (w * w + c * c);
        let s2wl = (2.0 * w * ell).sin() / (2.0 * w);
        let (norm_sq, sign) = if even {
            (ell + s2wl, (w * ell).cos().signum())
        } else {
            (ell - s2wl, 1.0)
        };
        modes.push(Kl1dMode {
            lambda,
            omega: w,
            even,
            center,
            norm: norm_sq.sqrt(),
            sign,
        });
    }
    Ok(modes)
}

/// A 2D eigenpair formed as a product of 1D eigenpairs.
#[derive(Debug, Clone, Copy)]
pub struct Kl2dMode {
    pub lambda: f64,
    pub fx: Kl1dMode,
    pub fy: Kl1dMode,
}

impl Kl2dMode {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.fx.eval(x) * self.fy.eval(y)
    }
}

/// The `count` largest 2D eigenpairs of the separable exponential kernel on
/// a rectangle. Equal products are ordered by the x index, then the y index.
pub fn kl_modes_2d(corr_len: f64, domain: &RectDomain, count: usize) -> Result<Vec<Kl2dMode>> {
    let need = count.max(1);
    let mx = kl_eigenpairs_1d(
        corr_len,
        0.5 * domain.width(),
        0.5 * (domain.x_min + domain.x_max),
        need,
    )?;
    let my = kl_eigenpairs_1d(
        corr_len,
        0.5 * domain.height(),
        0.5 * (domain.y_min + domain.y_max),
        need,
    )?;
    let mut products = Vec::with_capacity(need * need);
    for (i, fx) in mx.iter().enumerate() {
        for (j, fy) in my.iter().enumerate() {
            products.push((fx.lambda * fy.lambda, i, j));
        }
    }
    products.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(products
        .into_iter()
        .take(count)
        .map(|(lambda, i, j)| Kl2dMode {
            lambda,
            fx: mx[i],
            fy: my[j],
        })
        .collect())
}

/// Mode fields `sigma * sqrt(lambda_m) * phi_m(x)` of the truncated
/// Karhunen-Loeve expansion, as evaluable scalar fields.
pub fn kl_modes(
    correlation_length: f64,
    sigma: f64,
    domain: &RectDomain,
    m: usize,
) -> Result<Vec<ScalarField>> {
    let modes = kl_modes_2d(correlation_length, domain, m)?;
    Ok(modes
        .into_iter()
        .map(|mode| {
            let amp = sigma * mode.lambda.sqrt();
            ScalarField::KlMode(Arc::new(move |x, y| amp * mode.eval(x, y)))
        })
        .collect())
}

/// Affine expansion of a random field: mean plus parameter-weighted modes.
#[derive(Clone)]
pub struct RandomFieldExpansion {
    pub mean: ScalarField,
    pub modes: Vec<ScalarField>,
    pub intervals: Vec<ParamInterval>,
}

impl RandomFieldExpansion {
    /// Deterministic field (no stochastic modes).
    pub fn constant(mean: f64) -> RandomFieldExpansion {
        RandomFieldExpansion {
            mean: ScalarField::Constant(mean),
            modes: Vec::new(),
            intervals: Vec::new(),
        }
    }

    /// Spatially uniform modes with the given amplitudes.
    pub fn affine(mean: f64, amplitudes: &[f64], half_width: f64) -> Result<RandomFieldExpansion> {
        let interval = ParamInterval::new(half_width)?;
        Ok(RandomFieldExpansion {
            mean: ScalarField::Constant(mean),
            modes: amplitudes.iter().map(|&a| ScalarField::Constant(a)).collect(),
            intervals: vec![interval; amplitudes.len()],
        })
    }

    /// Karhunen-Loeve modes of the exponential kernel with standard
    /// deviation `sigma`; parameters are uniform on `[-half_width, half_width]`.
    pub fn karhunen_loeve(
        mean: f64,
        sigma: f64,
        correlation_length: f64,
        m: usize,
        domain: &RectDomain,
        half_width: f64,
    ) -> Result<RandomFieldExpansion> {
        let interval = ParamInterval::new(half_width)?;
        Ok(RandomFieldExpansion {
            mean: ScalarField::Constant(mean),
            modes: kl_modes(correlation_length, sigma, domain, m)?,
            intervals: vec![interval; m],
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Worst-case lower bound of the field over the mesh quadrature points:
    /// `min_x mean(x) - sum_k a_k * sup_x |mode_k(x)|`.
    pub fn positivity_margin(&self, mesh: &Mesh) -> f64 {
        let pts = crate::assembly::quadrature_points(mesh);
        let mut mean_min = f64::INFINITY;
        for &(x, y) in &pts {
            mean_min = mean_min.min(self.mean.eval(x, y));
        }
        let mut spread = 0.0;
        for (mode, interval) in self.modes.iter().zip(&self.intervals) {
            let mut sup = 0.0f64;
            for &(x, y) in &pts {
                sup = sup.max(mode.eval(x, y).abs());
            }
            spread += interval.half_width * sup;
        }
        mean_min - spread
    }

    /// Enforces the uniform positivity assumption at quadrature resolution.
    pub fn validate_positivity(&self, mesh: &Mesh) -> Result<()> {
        let margin = self.positivity_margin(mesh);
        if !(margin > 0.0) {
            return Err(Error::Stochastic(format!(
                "random field can reach nonpositive values (margin {margin:.3e}); \
                 reduce the mode amplitudes"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(n: usize, k: usize) -> usize {
        let mut r = 1usize;
        for i in 0..k {
            r = r * (n - i) / (i + 1);
        }
        r
    }

    /// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                // classical Legendre values and derivative
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
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            out.push((x, w));
        }
        out
    }

    #[test]
    fn total_degree_cardinalities() {
        assert_eq!(total_degree_set(2, 3).len(), 10);
        assert_eq!(total_degree_set(2, 4).len(), 15);
        assert_eq!(total_degree_set(10, 3).len(), 286);
        for m in 1..=10 {
            for p in 0..=5 {
                assert_eq!(total_degree_set(m, p).len(), binomial(m + p, p));
            }
        }
    }

    #[test]
    fn zero_index_first_and_graded() {
        let set = total_degree_set(3, 2);
        assert_eq!(set.index(0), &[0, 0, 0]);
        let mut last_deg = 0;
        for alpha in set.iter() {
            let d: u32 = alpha.iter().sum();
            assert!(d >= last_deg);
            last_deg = d;
        }
    }

    #[test]
    fn coupling_matrices_match_quadrature() {
        // single parameter, degree 1: entries against a Gauss oracle on the
        // uniform probability measure
        let set = total_degree_set(1, 1);
        for half_width in [1.0, 3f64.sqrt()] {
            let gs = g_matrices(&set, &[ParamInterval::new(half_width).unwrap()]).unwrap();
            let g1 = gs[1].to_dense();
            // oracle: integral of y * psi_i(y) * psi_j(y) over [-a, a] / (2a)
            let rule = gauss_legendre(200);
            let mut oracle = [[0.0f64; 2]; 2];
            for &(t, w) in &rule {
                let y = half_width * t;
                let psi = orthonormal_legendre(1, t);
                for i in 0..2 {
                    for j in 0..2 {
                        oracle[i][j] += 0.5 * w * y * psi[i] * psi[j];
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (g1[i][j] - oracle[i][j]).abs() < 1e-12,
                        "entry ({i},{j}): {} vs {}",
                        g1[i][j],
                        oracle[i][j]
                    );
                }
            }
            let expected = half_width / 3f64.sqrt();
            assert!((g1[0][1] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn coupling_sparsity_pattern() {
        let set = total_degree_set(3, 3);
        let intervals = vec![ParamInterval::new(1.0).unwrap(); 3];
        let gs = g_matrices(&set, &intervals).unwrap();
        assert!(gs[0].identity);
        for g in &gs[1..] {
            let mut per_row = vec![0usize; g.n];
            for &(r, c, v) in &g.entries {
                assert_ne!(r, c, "diagonal must be zero");
                per_row[r as usize] += 1;
                // symmetry partner present
                assert!(g.entries.iter().any(|&(r2, c2, v2)| r2 == c && c2 == r && v2 == v));
                let a = set.index(r as usize);
                let b = set.index(c as usize);
                let diffs: Vec<i64> = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| *x as i64 - *y as i64)
                    .collect();
                assert_eq!(diffs.iter().map(|d| d.abs()).sum::<i64>(), 1);
            }
            assert!(per_row.iter().all(|&c| c <= 2));
        }
    }

    #[test]
    fn kl_trace_identity() {
        // operator trace = interval length; the first 50 eigenvalues carry
        // at least 99% of it
        let modes = kl_eigenpairs_1d(2.0, 1.0, 0.0, 50).unwrap();
        let total: f64 = modes.iter().map(|m| m.lambda).sum();
        assert!(total <= 2.0 + 1e-9);
        assert!(total >= 0.99 * 2.0, "partial trace {total}");
        // monotone decreasing
        for w in modes.windows(2) {
            assert!(w[0].lambda >= w[1].lambda);
        }
    }

    #[test]
    fn kl_eigenfunctions_orthonormal() {
        let modes = kl_eigenpairs_1d(2.0, 1.0, 0.0, 8).unwrap();
        let rule = gauss_legendre(60);
        for (i, mi) in modes.iter().enumerate() {
            for (j, mj) in modes.iter().enumerate() {
                let mut acc = 0.0;
                for &(t, w) in &rule {
                    acc += w * mi.eval(t) * mj.eval(t);
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-8, "({i},{j}) -> {acc}");
            }
        }
    }

    #[test]
    fn kl_2d_products_sorted() {
        let domain = RectDomain::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let modes = kl_modes_2d(2.0, &domain, 6).unwrap();
        let m1d = kl_eigenpairs_1d(2.0, 1.0, 0.0, 6).unwrap();
        let mut products: Vec<f64> = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .map(|(i, j)| m1d[i].lambda * m1d[j].lambda)
            .collect();
        products.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (mode, expect) in modes.iter().zip(&products) {
            assert!((mode.lambda - expect).abs() < 1e-12);
        }
        for w in modes.windows(2) {
            assert!(w[0].lambda >= w[1].lambda);
        }
    }

    #[test]
    fn kl_sign_conventions() {
        let modes = kl_eigenpairs_1d(2.0, 1.0, 0.0, 6).unwrap();
        for m in &modes {
            if m.even {
                assert!(m.eval(-1.0) > 0.0 && m.eval(1.0) > 0.0);
            } else {
                // positive slope at the center
                assert!(m.eval(1e-6) > 0.0);
            }
        }
    }

    #[test]
    fn legendre_orthonormal_on_probability_measure() {
        let rule = gauss_legendre(40);
        for i in 0..=5usize {
            for j in 0..=5usize {
                let mut acc = 0.0;
                for &(t, w) in &rule {
                    let v = orthonormal_legendre(5, t);
                    acc += 0.5 * w * v[i] * v[j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        assert!(kl_eigenpairs_1d(0.0, 1.0, 0.0, 3).is_err());
        assert!(kl_eigenpairs_1d(2.0, -1.0, 0.0, 3).is_err());
        assert!(ParamInterval::new(0.0).is_err());
        let set = total_degree_set(2, 1);
        let one = vec![ParamInterval::new(1.0).unwrap()];
        assert!(g_matrices(&set, &one).is_err());
        assert!(chaos_basis_at(&set, &[one[0]; 2], &[0.5]).is_err());
    }

    #[test]
    fn positivity_margin_flags_oversized_modes() {
        let mesh = crate::mesh::build_mesh(RectDomain::unit_square(), 3).unwrap();
        let ok = RandomFieldExpansion::affine(1.0, &[0.3, 0.3], 1.0).unwrap();
        assert!(ok.positivity_margin(&mesh) > 0.0);
        ok.validate_positivity(&mesh).unwrap();
        let bad = RandomFieldExpansion::affine(1.0, &[0.6, 0.6], 1.0).unwrap();
        assert!(bad.validate_positivity(&mesh).is_err());
    }
}
