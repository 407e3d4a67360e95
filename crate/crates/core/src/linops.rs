//! Deterministic linear-algebra primitives: thresholding, norms, restricted
//! Gram systems and the restricted least-squares solver.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SparseVector;

/// Sorted, duplicate-free subset of `0..d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct IndexSet {
    indices: Vec<usize>,
}

/// Deserialized sets must already be strictly increasing.
impl TryFrom<Vec<usize>> for IndexSet {
    type Error = Error;

    fn try_from(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format("index set must be strictly increasing"));
        }
        Ok(IndexSet { indices })
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(s: IndexSet) -> Self {
        s.indices
    }
}

impl IndexSet {
    /// Sorts and deduplicates; fails if any index is `>= d`.
    pub fn new(mut indices: Vec<usize>, d: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= d {
                return Err(Error::invalid(format!("index {last} out of range for d={d}")));
            }
        }
        Ok(IndexSet { indices })
    }

    pub fn empty() -> Self {
        IndexSet::default()
    }

    pub fn full(d: usize) -> Self {
        IndexSet {
            indices: (0..d).collect(),
        }
    }

    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        IndexSet { indices }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self, d: usize) -> IndexSet {
        let mut out = Vec::with_capacity(d.saturating_sub(self.len()));
        let mut it = self.indices.iter().peekable();
        for i in 0..d {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        IndexSet { indices: out }
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut v: Vec<usize> = self.indices.iter().chain(&other.indices).copied().collect();
        v.sort_unstable();
        v.dedup();
        IndexSet { indices: v }
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }
}

/// Inner product with four independent accumulators.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `a - b` elementwise.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Keep the `k` largest entries by magnitude, ties going to the smaller
/// index. Exactly `min(k, nnz(v))` entries survive.
pub fn hard_threshold(v: &[f64], k: usize) -> SparseVector {
    let mut nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    if nz.len() > k {
        nz.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
        nz.truncate(k);
    }
    let mut out = vec![0.0; v.len()];
    for i in nz {
        out[i] = v[i];
    }
    SparseVector::from_dense(out, k).expect("at most k survivors")
}

/// Largest row l1 norm, the operator norm induced by the sup-norm.
pub fn inf_op_norm(m: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(m.nrows(), m.ncols(), "inf_op_norm expects a square matrix");
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// A row block of a column-major design, optionally multiplied by a scalar.
///
/// Algorithms that split samples into disjoint batches work on views instead
/// of copies, which matters once `n * d` runs into the tens of millions.
#[derive(Debug, Clone, Copy)]
pub struct Design<'a> {
    data: &'a [f64],
    stride: usize,
    row0: usize,
    rows: usize,
    cols: usize,
    scale: f64,
}

impl<'a> Design<'a> {
    pub fn new(x: &'a DMatrix<f64>) -> Self {
        Design {
            data: x.as_slice(),
            stride: x.nrows(),
            row0: 0,
            rows: x.nrows(),
            cols: x.ncols(),
            scale: 1.0,
        }
    }

    /// Rows `start..start + len` of this view.
    pub fn rows(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.rows, "row block out of range");
        Design {
            row0: self.row0 + start,
            rows: len,
            ..*self
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Design {
            scale: self.scale * factor,
            ..*self
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Unscaled column `j` restricted to the view's rows.
    pub fn raw_col(&self, j: usize) -> &'a [f64] {
        let off = j * self.stride + self.row0;
        &self.data[off..off + self.rows]
    }

    /// `X v` for dense `v`, skipping zero coefficients.
    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "vector length must equal column count");
        let mut out = vec![0.0; self.rows];
        for (j, &c) in v.iter().enumerate() {
            if c != 0.0 {
                axpy(c * self.scale, self.raw_col(j), &mut out);
            }
        }
        out
    }

    /// `X_{:S} w` for coefficients on `s`.
    pub fn mul_subset(&self, s: &IndexSet, w: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), w.len());
        let mut out = vec![0.0; self.rows];
        for (&j, &c) in s.as_slice().iter().zip(w) {
            if c != 0.0 {
                axpy(c * self.scale, self.raw_col(j), &mut out);
            }
        }
        out
    }

    /// `X^T r`.
    pub fn tmul(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows, "vector length must equal row count");
        (0..self.cols)
            .map(|j| self.scale * dot(self.raw_col(j), r))
            .collect()
    }

    /// `X_{:S}^T r`.
    pub fn tmul_subset(&self, s: &IndexSet, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.rows);
        s.as_slice()
            .iter()
            .map(|&j| self.scale * dot(self.raw_col(j), r))
            .collect()
    }

    /// `[X^T X]_{S x S}`, filled symmetrically.
    pub fn gram(&self, s: &IndexSet) -> Result<DMatrix<f64>> {
        if s.is_empty() {
            return Err(Error::invalid("restricted Gram needs a nonempty index set"));
        }
        check_indices(s, self.cols)?;
        let idx = s.as_slice();
        let m = idx.len();
        let s2 = self.scale * self.scale;
        let mut g = DMatrix::zeros(m, m);
        for a in 0..m {
            let ca = self.raw_col(idx[a]);
            for b in a..m {
                let v = s2 * dot(ca, self.raw_col(idx[b]));
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        Ok(g)
    }

    /// Full `X^T X`.
    pub fn full_gram(&self) -> DMatrix<f64> {
        self.gram(&IndexSet::full(self.cols))
            .unwrap_or_else(|_| DMatrix::zeros(0, 0))
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_indices(s: &IndexSet, d: usize) -> Result<()> {
    match s.as_slice().last() {
        Some(&last) if last >= d => Err(Error::invalid(format!(
            "index {last} out of range for d={d}"
        ))),
        _ => Ok(()),
    }
}

/// `X v` for a dense coefficient vector.
pub fn dense_mul(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    Design::new(x).mul(v)
}

/// `X theta` for a sparse coefficient vector.
pub fn mul_sparse(x: &DMatrix<f64>, theta: &SparseVector) -> Vec<f64> {
    Design::new(x).mul(theta.values())
}

/// `X^T r`.
pub fn xt_mul(x: &DMatrix<f64>, r: &[f64]) -> Vec<f64> {
    Design::new(x).tmul(r)
}

/// `[X^T X]_{S x S}`.
pub fn restricted_gram(x: &DMatrix<f64>, s: &IndexSet) -> Result<DMatrix<f64>> {
    Design::new(x).gram(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Dense Cholesky up to 64 unknowns, gradient descent above.
    #[default]
    Auto,
    Dense,
    GradientDescent,
}

/// Largest system solved by a dense factorization under [`SolveMethod::Auto`].
pub const DENSE_SOLVE_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// `None` picks `ceil(10 log2(kappa * max(|b|, 1) / tol))` capped at 1e5.
    pub max_iter: Option<usize>,
    /// RIP constant estimate used for the step `1/(1 + eps_hat)`.
    pub eps_hat: Option<f64>,
    pub method: SolveMethod,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            max_iter: None,
            eps_hat: None,
            method: SolveMethod::Auto,
        }
    }
}

const KAPPA_HAT: f64 = 3.0;
const MAX_ITER_CAP: usize = 100_000;

impl SolveOptions {
    fn step(&self) -> f64 {
        match self.eps_hat {
            Some(e) if e.is_finite() && e >= 0.0 => 1.0 / (1.0 + e),
            _ => 2.0 / 3.0,
        }
    }

    fn iteration_cap(&self, rhs_norm: f64) -> usize {
        self.max_iter.unwrap_or_else(|| {
            let ratio = KAPPA_HAT * rhs_norm.max(1.0) / self.tol;
            let it = (10.0 * ratio.log2()).ceil();
            if it.is_finite() && it > 0.0 {
                (it as usize).min(MAX_ITER_CAP)
            } else {
                MAX_ITER_CAP
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coef: Vec<f64>,
    /// Achieved `|G w - b|_inf`.
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Solve `G w = b` for symmetric positive definite `G` under `opts`.
pub fn solve_spd(g: &DMatrix<f64>, b: &[f64], opts: &SolveOptions) -> Result<Solution> {
    let m = b.len();
    assert_eq!(g.shape(), (m, m));
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let bnorm = norm_inf(b);
    let target = opts.tol * (1.0 + bnorm);
    let method = match opts.method {
        SolveMethod::Auto if m <= DENSE_SOLVE_LIMIT => SolveMethod::Dense,
        SolveMethod::Auto => SolveMethod::GradientDescent,
        other => other,
    };
    let residual_of = |w: &[f64]| -> f64 {
        let gw = g * DVector::from_column_slice(w);
        gw.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
    };
    match method {
        SolveMethod::Dense => {
            let chol = Cholesky::new(g.clone()).ok_or(Error::SolverFailure {
                iterations: 0,
                residual: f64::INFINITY,
            })?;
            let bv = DVector::from_column_slice(b);
            let mut w = chol.solve(&bv);
            // one refinement step tightens roundoff on moderately conditioned blocks
            let r = &bv - g * &w;
            w += chol.solve(&r);
            let coef: Vec<f64> = w.iter().copied().collect();
            let residual = residual_of(&coef);
            if residual <= target {
                Ok(Solution {
                    coef,
                    residual,
                    iterations: 1,
                    method,
                })
            } else {
                Err(Error::SolverFailure {
                    iterations: 1,
                    residual,
                })
            }
        }
        _ => {
            let step = opts.step();
            let cap = opts.iteration_cap(norm2(b));
            let bv = DVector::from_column_slice(b);
            let mut w = DVector::zeros(m);
            let mut r = bv.clone();
            let mut residual = bnorm;
            let mut it = 0;
            while residual > target {
                if it >= cap || !residual.is_finite() {
                    return Err(Error::SolverFailure {
                        iterations: it,
                        residual,
                    });
                }
                w.axpy(step, &r, 1.0);
                r = &bv - g * &w;
                residual = r.amax();
                it += 1;
            }
            Ok(Solution {
                coef: w.iter().copied().collect(),
                residual,
                iterations: it,
                method: SolveMethod::GradientDescent,
            })
        }
    }
}

/// `[X^T X]_{S x S}^{-1} X_{:S}^T rhs`, the least-squares fit of `rhs` on the
/// columns in `s`.
pub fn restricted_ols(
    x: &DMatrix<f64>,
    s: &IndexSet,
    rhs: &[f64],
    opts: &SolveOptions,
) -> Result<Solution> {
    restricted_ols_view(&Design::new(x), s, rhs, opts)
}

pub fn restricted_ols_view(
    x: &Design<'_>,
    s: &IndexSet,
    rhs: &[f64],
    opts: &SolveOptions,
) -> Result<Solution> {
    if rhs.len() != x.nrows() {
        return Err(Error::invalid(format!(
            "rhs length {} does not match n={}",
            rhs.len(),
            x.nrows()
        )));
    }
    let g = x.gram(s)?;
    let b = x.tmul_subset(s, rhs);
    solve_spd(&g, &b, opts)
}

/// `[X^T X]_{S x S}^{-1} v` for `v` already in coefficient space.
pub fn apply_restricted_inverse(
    x: &DMatrix<f64>,
    s: &IndexSet,
    v: &[f64],
    opts: &SolveOptions,
) -> Result<Solution> {
    if v.len() != s.len() {
        return Err(Error::invalid(format!(
            "vector length {} does not match |S|={}",
            v.len(),
            s.len()
        )));
    }
    let g = restricted_gram(x, s)?;
    solve_spd(&g, v, opts)
}
