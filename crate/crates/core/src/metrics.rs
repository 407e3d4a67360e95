//! Candidate noise-scale metrics for sup-norm recovery and the ratios that
//! relate them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, norm2, norm_inf, Design, IndexSet, SolveOptions};

/// Confidence parameter used when scaling the chain constants.
pub const CHAIN_DELTA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `|X^T xi|_inf`
    pub m_gram: f64,
    /// `|X_{:S}^T xi|_inf`
    pub m_gram_support: f64,
    /// `|[X^T X]_{S x S}^{-1} X_{:S}^T xi|_inf`; absent when the system
    /// could not be solved.
    pub m_ols: Option<f64>,
    /// `|xi|_2 / sqrt(n)`
    pub m_l2: f64,
    /// `|xi|_inf`
    pub m_linf: f64,
    /// `m_ols / m_gram_support`
    pub ratio_ols_support: Option<f64>,
    /// `m_gram_support / (|xi|_2 sqrt(ln(|S| / delta) / n))`
    pub ratio_support_l2log: Option<f64>,
    /// `m_gram_support / m_l2`
    pub ratio_support_l2: Option<f64>,
    pub diagnostics: Vec<String>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b > 0.0).then(|| a / b)
}

impl MetricReport {
    /// The two links that hold for every `xi`:
    /// `|xi|_2 sqrt(L / n) <= |xi|_inf sqrt(L)` and
    /// `|xi|_2 / sqrt(n) >= |xi|_inf / sqrt(n)`, with `L = ln(|S| / delta)`.
    pub fn check_deterministic_links(&self, n: usize, support_size: usize) -> Result<()> {
        let sqrt_n = (n as f64).sqrt();
        let sqrt_l = ((support_size.max(1) as f64) / CHAIN_DELTA).ln().sqrt();
        let l2 = self.m_l2 * sqrt_n;
        let lhs_c = l2 * sqrt_l / sqrt_n;
        let rhs_c = self.m_linf * sqrt_l;
        if lhs_c > rhs_c * (1.0 + 1e-12) {
            return Err(Error::ConstructionFailure(format!(
                "|xi|_2 sqrt(L/n) = {lhs_c} exceeds |xi|_inf sqrt(L) = {rhs_c}"
            )));
        }
        let rhs_e = self.m_linf / sqrt_n;
        if self.m_l2 < rhs_e * (1.0 - 1e-12) {
            return Err(Error::ConstructionFailure(format!(
                "|xi|_2 / sqrt(n) = {} is below |xi|_inf / sqrt(n) = {rhs_e}",
                self.m_l2
            )));
        }
        Ok(())
    }

    /// The metric chain must respect `m_gram >= m_gram_support` and
    /// nonnegativity.
    pub fn validate(&self) -> Result<()> {
        let all = [self.m_gram, self.m_gram_support, self.m_l2, self.m_linf];
        if all.iter().any(|v| !(*v >= 0.0)) || self.m_ols.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::format("metrics must be nonnegative"));
        }
        if self.m_gram < self.m_gram_support {
            return Err(Error::format("m_gram must dominate m_gram_support"));
        }
        Ok(())
    }
}

/// All candidate metrics for noise `xi` against design `x` and support `s`.
pub fn compute_metrics(x: &DMatrix<f64>, xi: &[f64], s: &IndexSet) -> Result<MetricReport> {
    let (n, d) = x.shape();
    if xi.len() != n {
        return Err(Error::invalid(format!("noise length {} does not match n={n}", xi.len())));
    }
    if s.as_slice().last().is_some_and(|&j| j >= d) {
        return Err(Error::invalid("support index out of range"));
    }
    let design = Design::new(x);
    let corr = design.tmul(xi);
    let m_gram = norm_inf(&corr);
    let m_gram_support = s.as_slice().iter().map(|&j| corr[j].abs()).fold(0.0, f64::max);
    let m_l2 = norm2(xi) / (n as f64).sqrt();
    let m_linf = norm_inf(xi);
    let mut diagnostics = Vec::new();
    let m_ols = if s.is_empty() {
        diagnostics.push("empty support; m_ols undefined".to_string());
        None
    } else {
        match linops::restricted_ols(x, s, xi, &SolveOptions::default()) {
            Ok(sol) => Some(norm_inf(&sol.coef)),
            Err(e) => {
                diagnostics.push(format!("m_ols unavailable: {e}"));
                None
            }
        }
    };
    let log_scale = norm2(xi) * ((s.len().max(1) as f64 / CHAIN_DELTA).ln() / n as f64).sqrt();
    Ok(MetricReport {
        m_gram,
        m_gram_support,
        ratio_ols_support: m_ols.and_then(|m| ratio(m, m_gram_support)),
        m_ols,
        m_l2,
        m_linf,
        ratio_support_l2log: ratio(m_gram_support, log_scale),
        ratio_support_l2: ratio(m_gram_support, m_l2),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_ensemble, Dims, Ensemble, NoiseVector};
    use proptest::prelude::*;

    #[test]
    fn zero_noise_gives_zero_metrics() {
        let x = DMatrix::identity(4, 4);
        let m = compute_metrics(&x, &[0.0; 4], &IndexSet::new(vec![1], 4).unwrap()).unwrap();
        assert_eq!((m.m_gram, m.m_gram_support, m.m_l2, m.m_linf), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.m_ols, Some(0.0));
        assert_eq!(m.ratio_ols_support, None);
    }

    #[test]
    fn identity_unit_noise() {
        let x = DMatrix::identity(4, 4);
        let m = compute_metrics(&x, &[1.0, 0.0, 0.0, 0.0], &IndexSet::new(vec![0], 4).unwrap()).unwrap();
        assert_eq!(m.m_gram, 1.0);
        assert_eq!(m.m_gram_support, 1.0);
        assert_eq!(m.m_ols, Some(1.0));
        assert_eq!(m.m_linf, 1.0);
        assert_eq!(m.m_l2, 0.5);
    }

    #[test]
    fn singular_support_drops_ols() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let m = compute_metrics(&x, &[1.0, 1.0], &IndexSet::full(2)).unwrap();
        assert!(m.m_ols.is_none());
        assert!(!m.diagnostics.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn deterministic_links_always_hold(
            seed in 0u64..10_000,
            xi in prop::collection::vec(-5.0f64..5.0, 1..40),
            k in 1usize..6,
        ) {
            let n = xi.len();
            let x = sample_ensemble(Dims::new(n, 10, 1).unwrap(), Ensemble::GaussianScaled, seed).unwrap().into_matrix();
            let s = IndexSet::new((0..k).collect(), 10).unwrap();
            let m = compute_metrics(&x, &xi, &s).unwrap();
            prop_assert!(m.validate().is_ok());
            prop_assert!(m.check_deterministic_links(n, k).is_ok());
        }

        #[test]
        fn gram_dominates_support(seed in 0u64..10_000, k in 1usize..10) {
            let x = sample_ensemble(Dims::new(50, 30, 1).unwrap(), Ensemble::GaussianScaled, seed).unwrap().into_matrix();
            let xi = NoiseVector::gaussian(50, 1.0, seed + 1).unwrap();
            let m = compute_metrics(&x, xi.values(), &IndexSet::new((0..k).collect(), 30).unwrap()).unwrap();
            prop_assert!(m.m_gram >= m.m_gram_support);
        }
    }
}
