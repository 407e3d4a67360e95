//! Adversarial constructions: masking vectors with large sup-norm but unit
//! correlation with every column, the indistinguishable instance pairs built
//! from them, and the pair showing that noise-only error metrics cannot be
//! met adaptively.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, norm_inf, Design, IndexSet};
use crate::model::{ModelKind, MeasurementMatrix, NoiseVector, RecoveryInstance, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingVector {
    pub v: SparseVector,
    pub support: IndexSet,
    /// `|v|_inf` of the returned (possibly normalized) vector.
    pub linf_v: f64,
    /// `|X^T X v|_inf` before normalization.
    pub linf_gram_v: f64,
    /// `|X_{:S}^T X v|_inf` before normalization (1 by construction).
    pub on_support_gram: f64,
    /// `|X_{:S^c}^T X v|_inf` before normalization.
    pub off_support_gram: f64,
    /// Largest row l1 norm of `[X^T X]_{S x S}^{-1}`.
    pub inverse_inf_norm: f64,
    /// Sign pattern `u` on `S`.
    pub signs: Vec<f64>,
    pub normalized: bool,
}

/// Row of `m` with the largest l1 norm (first one on ties) and its sign
/// pattern, with `sign(0) = +1`. For any matrix this `u` attains
/// `max_{u in {-1,1}^S} |m u|_inf`.
pub fn sign_argmax(m: &DMatrix<f64>) -> (usize, Vec<f64>) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, row) in m.row_iter().enumerate() {
        let l1: f64 = row.iter().map(|x| x.abs()).sum();
        if l1 > best.1 {
            best = (i, l1);
        }
    }
    let signs = m
        .row(best.0)
        .iter()
        .map(|&x| if x < 0.0 { -1.0 } else { 1.0 })
        .collect();
    (best.0, signs)
}

/// Solve `[X^T X]_{S x S} v_S = u` for the maximizing sign vector `u`, extend
/// by zero, and optionally rescale so that `|X^T X v|_inf = 1`.
pub fn build_masking_vector(x: &DMatrix<f64>, s: &IndexSet, normalize: bool) -> Result<MaskingVector> {
    let (n, d) = x.shape();
    if s.is_empty() {
        return Err(Error::invalid("masking support must be nonempty"));
    }
    if s.len() > n.min(d) {
        return Err(Error::invalid(format!(
            "masking support of size {} exceeds min(n, d) = {}",
            s.len(),
            n.min(d)
        )));
    }
    let design = Design::new(x);
    let m = design.gram(s)?;
    let chol = Cholesky::new(m).ok_or_else(|| {
        Error::ConstructionFailure("restricted Gram matrix is singular or indefinite".into())
    })?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::ConstructionFailure("restricted Gram inverse is not finite".into()));
    }
    let (row, signs) = sign_argmax(&inv);
    let inverse_inf_norm: f64 = inv.row(row).iter().map(|x| x.abs()).sum();
    let vs = chol.solve(&nalgebra::DVector::from_column_slice(&signs));

    let mut full = vec![0.0; d];
    for (&i, &val) in s.as_slice().iter().zip(vs.iter()) {
        full[i] = val;
    }
    let xv = design.mul(&full);
    let gram_v = design.tmul(&xv);
    let mut on_support_gram: f64 = 0.0;
    let mut off_support_gram: f64 = 0.0;
    for (i, g) in gram_v.iter().enumerate() {
        if s.contains(i) {
            on_support_gram = on_support_gram.max(g.abs());
        } else {
            off_support_gram = off_support_gram.max(g.abs());
        }
    }
    let linf_gram_v = on_support_gram.max(off_support_gram);
    if normalize {
        if !(linf_gram_v > 0.0) {
            return Err(Error::ConstructionFailure("X^T X v vanished".into()));
        }
        for val in &mut full {
            *val /= linf_gram_v;
        }
    }
    let linf_v = norm_inf(&full);
    let v = SparseVector::from_dense(full, s.len())?;
    Ok(MaskingVector {
        support: IndexSet::from_sorted(v.support().to_vec()),
        v,
        linf_v,
        linf_gram_v,
        on_support_gram,
        off_support_gram,
        inverse_inf_norm,
        signs,
        normalized: normalize,
    })
}

/// The column `anchor` together with the `size - 1` columns whose inner
/// products with it are largest in magnitude.
///
/// Picking a support this way makes the restricted Gram matrix far from the
/// identity, which is what an adversary that sees `X` would do.
pub fn select_correlated_support(x: &DMatrix<f64>, size: usize, anchor: usize) -> Result<IndexSet> {
    let d = x.ncols();
    if anchor >= d || size == 0 || size > d {
        return Err(Error::invalid(format!("need anchor < d and 1 <= size <= d (d={d})")));
    }
    let design = Design::new(x);
    let a = design.raw_col(anchor);
    let mut others: Vec<(usize, f64)> = (0..d)
        .filter(|&j| j != anchor)
        .map(|j| (j, linops::dot(a, design.raw_col(j)).abs()))
        .collect();
    others.sort_by(|p, q| q.1.total_cmp(&p.1).then(p.0.cmp(&q.0)));
    let mut idx: Vec<usize> = others.iter().take(size - 1).map(|p| p.0).collect();
    idx.push(anchor);
    IndexSet::new(idx, d)
}

/// The first `size` indices of `0..d` outside `exclude`.
pub fn first_outside(d: usize, exclude: &IndexSet, size: usize) -> Result<IndexSet> {
    let idx: Vec<usize> = (0..d).filter(|i| !exclude.contains(*i)).take(size).collect();
    if idx.len() < size {
        return Err(Error::invalid(format!("only {} indices available outside the excluded set", idx.len())));
    }
    Ok(IndexSet::from_sorted(idx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishablePair {
    pub theta1: SparseVector,
    pub theta2: SparseVector,
    pub xi1: NoiseVector,
    pub xi2: NoiseVector,
    pub shared_y: Vec<f64>,
}

impl IndistinguishablePair {
    /// `max |X theta_a + xi_a - X theta_b - xi_b|`.
    pub fn observation_gap(&self, x: &DMatrix<f64>) -> f64 {
        let y1 = observe(x, &self.theta1, &self.xi1);
        let y2 = observe(x, &self.theta2, &self.xi2);
        norm_inf(&linops::sub(&y1, &y2))
    }

    pub fn separation(&self) -> f64 {
        norm_inf(&linops::sub(self.theta1.values(), self.theta2.values()))
    }

    /// Both members as instances that carry the identical observation vector.
    pub fn instances(&self, x: &MeasurementMatrix) -> (RecoveryInstance, RecoveryInstance) {
        let make = |theta: &SparseVector, xi: &NoiseVector| RecoveryInstance {
            x: x.clone(),
            y: self.shared_y.clone(),
            truth: theta.clone(),
            noise: xi.clone(),
            model: ModelKind::Adaptive,
        };
        (make(&self.theta1, &self.xi1), make(&self.theta2, &self.xi2))
    }
}

fn observe(x: &DMatrix<f64>, theta: &SparseVector, xi: &NoiseVector) -> Vec<f64> {
    let mut y = linops::mul_sparse(x, theta);
    for (a, b) in y.iter_mut().zip(xi.values()) {
        *a += b;
    }
    y
}

fn verify_shared(x: &DMatrix<f64>, pair: &IndistinguishablePair) -> Result<()> {
    let gap = pair.observation_gap(x);
    let tol = 1e-9 * (1.0 + norm_inf(&pair.shared_y));
    if gap > tol {
        return Err(Error::ConstructionFailure(format!(
            "pair observations differ by {gap:.3e} (tolerance {tol:.3e})"
        )));
    }
    Ok(())
}

/// `theta1 = base` on `t`, `theta2 = theta1 + v`, `xi1 = X v`, `xi2 = 0`, with
/// `v` the normalized masking vector on `s`.
pub fn build_indistinguishable_pair(
    x: &DMatrix<f64>,
    s: &IndexSet,
    t: &IndexSet,
    base_magnitude: f64,
) -> Result<(IndistinguishablePair, MaskingVector)> {
    let d = x.ncols();
    if s.as_slice().iter().any(|&i| t.contains(i)) {
        return Err(Error::invalid("masking support and base support must be disjoint"));
    }
    if t.as_slice().last().is_some_and(|&i| i >= d) {
        return Err(Error::invalid("base support index out of range"));
    }
    if !base_magnitude.is_finite() {
        return Err(Error::invalid("base magnitude must be finite"));
    }
    let mask = build_masking_vector(x, s, true)?;
    let budget = s.len() + t.len();
    let mut base = vec![0.0; d];
    for &i in t.as_slice() {
        base[i] = base_magnitude;
    }
    let theta1 = SparseVector::from_dense(base.clone(), budget)?;
    let mut shifted = base;
    for &i in mask.v.support() {
        shifted[i] += mask.v.values()[i];
    }
    let theta2 = SparseVector::from_dense(shifted, budget)?;
    let xi1 = NoiseVector::adversarial(linops::mul_sparse(x, &mask.v));
    let xi2 = NoiseVector::zero(x.nrows());
    let shared_y = linops::mul_sparse(x, &theta2);
    let pair = IndistinguishablePair {
        theta1,
        theta2,
        xi1,
        xi2,
        shared_y,
    };
    verify_shared(x, &pair)?;
    Ok((pair, mask))
}

/// `(0, x_i)` against `(e_i, 0)`: identical observations, sup-norm
/// separation exactly 1.
pub fn build_metric_impossibility_pair(x: &DMatrix<f64>, i: usize) -> Result<IndistinguishablePair> {
    let d = x.ncols();
    if i >= d {
        return Err(Error::invalid(format!("column {i} out of range for d={d}")));
    }
    let col = Design::new(x).raw_col(i).to_vec();
    let pair = IndistinguishablePair {
        theta1: SparseVector::zeros(d, 1),
        theta2: SparseVector::from_entries(d, &[(i, 1.0)], 1)?,
        xi1: NoiseVector::adversarial(col.clone()),
        xi2: NoiseVector::zero(x.nrows()),
        shared_y: col,
    };
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_ensemble, Dims, Ensemble};
    use proptest::prelude::*;

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        sample_ensemble(Dims::new(n, d, 1).unwrap(), Ensemble::GaussianScaled, seed)
            .unwrap()
            .into_matrix()
    }

    fn brute_force_sign_max(m: &DMatrix<f64>) -> f64 {
        let k = m.ncols();
        let mut best: f64 = 0.0;
        for mask in 0u32..(1 << k) {
            let u = nalgebra::DVector::from_fn(k, |j, _| if mask >> j & 1 == 1 { -1.0 } else { 1.0 });
            best = best.max((m * u).amax());
        }
        best
    }

    #[test]
    fn orthonormal_support_gives_sign_vector() {
        let x = DMatrix::identity(5, 5);
        let s = IndexSet::new(vec![1, 3], 5).unwrap();
        let mv = build_masking_vector(&x, &s, true).unwrap();
        assert_eq!(mv.v.values(), &[0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(mv.linf_v, 1.0);
        assert_eq!(mv.on_support_gram, 1.0);
        assert_eq!(mv.off_support_gram, 0.0);
    }

    #[test]
    fn two_by_two_gram() {
        // columns with unit norm and inner product 1/2
        let h = 3f64.sqrt() / 2.0;
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, h]);
        let s = IndexSet::full(2);
        let mv = build_masking_vector(&x, &s, false).unwrap();
        // M^{-1} = (4/3) [[1, -1/2], [-1/2, 1]], row 0 wins the tie
        assert_eq!(mv.signs, vec![1.0, -1.0]);
        assert!((mv.inverse_inf_norm - 2.0).abs() < 1e-12);
        assert!((mv.v.values()[0] - 2.0).abs() < 1e-12);
        assert!((mv.v.values()[1] + 2.0).abs() < 1e-12);
        assert!((mv.linf_v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_gram_is_a_construction_failure() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = IndexSet::new(vec![0, 1], 3).unwrap();
        assert!(matches!(
            build_masking_vector(&x, &s, true),
            Err(Error::ConstructionFailure(_))
        ));
    }

    #[test]
    fn identity_pair_has_no_separation_gain() {
        let x = DMatrix::identity(4, 4);
        let s = IndexSet::new(vec![0, 1], 4).unwrap();
        let t = IndexSet::new(vec![2, 3], 4).unwrap();
        let (pair, _) = build_indistinguishable_pair(&x, &s, &t, 5.0).unwrap();
        assert_eq!(pair.separation(), 1.0);
        assert_eq!(norm_inf(&linops::xt_mul(&x, pair.xi1.values())), 1.0);
        assert!(build_indistinguishable_pair(&x, &s, &s, 5.0).is_err());
    }

    #[test]
    fn gaussian_pair_is_consistent() {
        let x = gaussian(100, 400, 1);
        let s = select_correlated_support(&x, 10, 0).unwrap();
        let t = first_outside(400, &s, 10).unwrap();
        let (pair, mask) = build_indistinguishable_pair(&x, &s, &t, 10.0).unwrap();
        assert!(pair.observation_gap(&x) <= 1e-9 * (1.0 + norm_inf(&pair.shared_y)));
        assert!((norm_inf(&linops::xt_mul(&x, pair.xi1.values())) - 1.0).abs() < 1e-9);
        assert!((pair.separation() - mask.linf_v).abs() < 1e-12);
        assert_eq!(pair.xi2.values().iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn metric_pair_examples() {
        let x = gaussian(30, 8, 2);
        let pair = build_metric_impossibility_pair(&x, 5).unwrap();
        assert_eq!(pair.separation(), 1.0);
        let col: Vec<f64> = x.column(5).iter().copied().collect();
        assert_eq!(pair.shared_y, col);
        assert_eq!(pair.observation_gap(&x), 0.0);
        assert!(build_metric_impossibility_pair(&x, 8).is_err());
    }

    #[test]
    fn correlated_support_contains_anchor() {
        let x = gaussian(20, 50, 3);
        let s = select_correlated_support(&x, 5, 7).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.contains(7));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sign_choice_is_exact_argmax(entries in prop::collection::vec(-3.0f64..3.0, 1..=64)) {
            let k = (entries.len() as f64).sqrt().floor() as usize;
            let m = DMatrix::from_row_slice(k, k, &entries[..k * k]);
            let (row, u) = sign_argmax(&m);
            let achieved = (&m * nalgebra::DVector::from_column_slice(&u)).amax();
            let l1: f64 = m.row(row).iter().map(|x| x.abs()).sum();
            prop_assert_eq!(achieved, brute_force_sign_max(&m));
            prop_assert!((achieved - l1).abs() <= 1e-12 * (1.0 + l1));
        }

        #[test]
        fn normalized_masking_vector_has_unit_gram(seed in 0u64..1000, size in 1usize..8) {
            let x = gaussian(40, 60, seed);
            let s = IndexSet::new((0..size).map(|i| (i * 11 + seed as usize) % 60).collect(), 60).unwrap();
            let mv = build_masking_vector(&x, &s, true).unwrap();
            let g = linops::xt_mul(&x, &linops::dense_mul(&x, mv.v.values()));
            prop_assert!((norm_inf(&g) - 1.0).abs() < 1e-9);
            prop_assert_eq!(mv.v.support(), s.as_slice());
        }
    }
}
