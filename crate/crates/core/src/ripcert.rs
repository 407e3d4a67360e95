//! Certifiers for restricted isometry (l2 and l-infinity flavours) and
//! pairwise incoherence, plus the coherence floors that limit them.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{Design, IndexSet};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    L2Rip,
    LinfRip,
    PairwiseIncoherence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    /// Every sampled subset passed; that is evidence, not a proof.
    LowerBoundOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub indices: IndexSet,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipCertificate {
    pub kind: PropertyKind,
    /// Threshold the property was tested against (epsilon, or alpha for PI).
    pub epsilon_or_alpha: f64,
    pub s: usize,
    pub verdict: Verdict,
    /// The worst subset found and its value; for exact certificates this is
    /// the global maximum.
    pub witness: Option<Witness>,
    pub exact: bool,
}

impl RipCertificate {
    /// Worst value found, if any subset was examined.
    pub fn value(&self) -> Option<f64> {
        self.witness.as_ref().map(|w| w.value)
    }

    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }

    /// Reject certificates whose fields contradict each other.
    pub fn validate(&self) -> Result<()> {
        if self.verdict == Verdict::Fails {
            match &self.witness {
                Some(w) if w.value > self.epsilon_or_alpha => {}
                _ => return Err(Error::format("failing certificate needs a witness above threshold")),
            }
        }
        if self.exact && self.verdict == Verdict::LowerBoundOnly {
            return Err(Error::format("exact certificate cannot be a lower bound"));
        }
        if !(self.epsilon_or_alpha >= 0.0) {
            return Err(Error::format("threshold must be a nonnegative number"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cert: RipCertificate = serde_json::from_str(text)?;
        cert.validate()?;
        Ok(cert)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMode {
    Exact,
    Sampled { trials: usize, seed: u64 },
}

/// Cap on subsets enumerated by exact l2 certification.
pub const L2_EXACT_BUDGET: u128 = 1_000_000;

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn check_params(x: &DMatrix<f64>, epsilon: f64, s: usize) -> Result<()> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon {epsilon} must be finite and >= 0")));
    }
    if s == 0 {
        return Err(Error::invalid("subset size s must be at least 1"));
    }
    if x.ncols() == 0 {
        return Err(Error::invalid("matrix has no columns"));
    }
    Ok(())
}

fn verdict_for(value: f64, threshold: f64, exact: bool) -> Verdict {
    if value > threshold {
        Verdict::Fails
    } else if exact {
        Verdict::Holds
    } else {
        Verdict::LowerBoundOnly
    }
}

/// `X^T X` for the full design.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    Design::new(x).full_gram()
}

/// Spectral deviation `max(lambda_max - 1, 1 - lambda_min)` of `[G]_{S x S}`.
fn spectral_deviation(g: &DMatrix<f64>, subset: &[usize]) -> f64 {
    let m = subset.len();
    let block = DMatrix::from_fn(m, m, |a, b| g[(subset[a], subset[b])]);
    let eig = SymmetricEigen::new(block).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - 1.0).max(1.0 - lo)
}

/// Advance `c` to the next `m`-combination of `0..d` in lexicographic order.
fn next_combination(c: &mut [usize], d: usize) -> bool {
    let m = c.len();
    let mut i = m;
    while i > 0 {
        i -= 1;
        if c[i] < d - m + i {
            c[i] += 1;
            for j in i + 1..m {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Certify `(epsilon, s)`-RIP: every principal Gram block of size at most
/// `s` has spectrum in `[1 - epsilon, 1 + epsilon]`.
///
/// Only blocks of size exactly `min(s, d)` are examined; by eigenvalue
/// interlacing smaller blocks can never be worse.
pub fn certify_l2_rip(x: &DMatrix<f64>, epsilon: f64, s: usize, mode: CertMode) -> Result<RipCertificate> {
    check_params(x, epsilon, s)?;
    let d = x.ncols();
    let m = s.min(d);
    let g = gram(x);
    let (exact, best) = match mode {
        CertMode::Exact => {
            let count = binomial(d, m);
            if count > L2_EXACT_BUDGET {
                return Err(Error::BudgetExceeded(format!(
                    "exact l2 certification needs C({d},{m}) = {count} subsets, budget is {L2_EXACT_BUDGET}"
                )));
            }
            let mut c: Vec<usize> = (0..m).collect();
            let mut best = (f64::NEG_INFINITY, c.clone());
            loop {
                let dev = spectral_deviation(&g, &c);
                if dev > best.0 {
                    best = (dev, c.clone());
                }
                if !next_combination(&mut c, d) {
                    break;
                }
            }
            (true, best)
        }
        CertMode::Sampled { trials, seed: master } => {
            if trials == 0 {
                return Err(Error::invalid("sampled certification needs at least one trial"));
            }
            let mut best = (f64::NEG_INFINITY, Vec::new());
            for t in 0..trials {
                let mut rng = seed::rng(seed::derive(master, &[t as u64]));
                let mut sub = index::sample(&mut rng, d, m).into_vec();
                sub.sort_unstable();
                let dev = spectral_deviation(&g, &sub);
                if dev > best.0 {
                    best = (dev, sub);
                }
            }
            (false, best)
        }
    };
    Ok(RipCertificate {
        kind: PropertyKind::L2Rip,
        epsilon_or_alpha: epsilon,
        s,
        verdict: verdict_for(best.0, epsilon, exact),
        witness: Some(Witness {
            indices: IndexSet::from_sorted(best.1),
            value: best.0,
        }),
        exact,
        })
}

/// `sum_{j in subset} |[G - I]_{ij}|`, with the terms added in ascending
/// order. The order depends only on the multiset of terms, so subsets tied in
/// exact arithmetic also tie in floating point, and a subset whose sorted
/// terms dominate another's never gets a smaller sum. That keeps the greedy
/// maximizer exact to the last bit.
fn deviation_row_sum(g: &DMatrix<f64>, i: usize, subset: &[usize]) -> f64 {
    let mut terms: Vec<f64> = subset
        .iter()
        .map(|&j| {
            if j == i {
                (g[(i, i)] - 1.0).abs()
            } else {
                g[(i, j)].abs()
            }
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Exact maximum of `||[G - I]_{S x S}||_{inf->inf}` over `|S| = min(s, d)`.
///
/// The objective for a fixed row `i in S` is a sum of nonnegative terms over
/// the other members of `S`, so the best subset containing `i` takes the
/// `s - 1` largest off-diagonal magnitudes of that row. Returns the value and
/// the maximizing subset.
pub fn linf_rip_value(g: &DMatrix<f64>, s: usize) -> (f64, IndexSet) {
    let d = g.ncols();
    let m = s.min(d);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut others: Vec<usize> = Vec::with_capacity(d);
    for i in 0..d {
        others.clear();
        others.extend((0..d).filter(|&j| j != i));
        let take = m - 1;
        let by_mag = |a: &usize, b: &usize| g[(i, *b)].abs().total_cmp(&g[(i, *a)].abs()).then(a.cmp(b));
        if take > 0 && take < others.len() {
            others.select_nth_unstable_by(take - 1, by_mag);
        }
        others.truncate(take);
        others.push(i);
        others.sort_unstable();
        let value = deviation_row_sum(g, i, &others);
        if value > best.0 {
            best = (value, others.clone());
        }
    }
    (best.0, IndexSet::from_sorted(best.1))
}

/// `||[G - I]_{S x S}||_{inf->inf}` for one subset.
pub fn linf_subset_value(g: &DMatrix<f64>, subset: &IndexSet) -> f64 {
    subset
        .as_slice()
        .iter()
        .map(|&i| deviation_row_sum(g, i, subset.as_slice()))
        .fold(0.0, f64::max)
}

/// Certify `(epsilon, s)`-l-infinity-RIP.
pub fn certify_linf_rip(x: &DMatrix<f64>, epsilon: f64, s: usize, mode: CertMode) -> Result<RipCertificate> {
    check_params(x, epsilon, s)?;
    let g = gram(x);
    certify_linf_rip_gram(&g, epsilon, s, mode)
}

/// As [`certify_linf_rip`] but on a precomputed Gram matrix.
pub fn certify_linf_rip_gram(g: &DMatrix<f64>, epsilon: f64, s: usize, mode: CertMode) -> Result<RipCertificate> {
    if g.nrows() != g.ncols() || g.ncols() == 0 {
        return Err(Error::invalid("Gram matrix must be square and nonempty"));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() || s == 0 {
        return Err(Error::invalid("need finite epsilon >= 0 and s >= 1"));
    }
    let d = g.ncols();
    let m = s.min(d);
    let (exact, value, subset) = match mode {
        CertMode::Exact => {
            let (v, sub) = linf_rip_value(g, s);
            (true, v, sub)
        }
        CertMode::Sampled { trials, seed: master } => {
            if trials == 0 {
                return Err(Error::invalid("sampled certification needs at least one trial"));
            }
            let mut best = (f64::NEG_INFINITY, IndexSet::empty());
            for t in 0..trials {
                let mut rng = seed::rng(seed::derive(master, &[t as u64]));
                let mut sub = index::sample(&mut rng, d, m).into_vec();
                sub.sort_unstable();
                let sub = IndexSet::from_sorted(sub);
                let v = linf_subset_value(g, &sub);
                if v > best.0 {
                    best = (v, sub);
                }
            }
            (false, best.0, best.1)
        }
    };
    Ok(RipCertificate {
        kind: PropertyKind::LinfRip,
        epsilon_or_alpha: epsilon,
        s,
        verdict: verdict_for(value, epsilon, exact),
        witness: Some(Witness { indices: subset, value }),
        exact,
    })
}

/// Certify `alpha`-pairwise incoherence: every entry of `X^T X - I`,
/// diagonal included, is at most `alpha` in magnitude.
pub fn certify_pi(x: &DMatrix<f64>, alpha: f64) -> Result<RipCertificate> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha {alpha} must be finite and >= 0")));
    }
    if x.ncols() == 0 {
        return Err(Error::invalid("matrix has no columns"));
    }
    Ok(certify_pi_gram(&gram(x), alpha))
}

pub fn certify_pi_gram(g: &DMatrix<f64>, alpha: f64) -> RipCertificate {
    let d = g.ncols();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for j in 0..d {
        for i in 0..=j {
            let v = if i == j { (g[(i, i)] - 1.0).abs() } else { g[(i, j)].abs() };
            if v > best.0 {
                best = (v, i, j);
            }
        }
    }
    let mut idx = vec![best.1, best.2];
    idx.dedup();
    RipCertificate {
        kind: PropertyKind::PairwiseIncoherence,
        epsilon_or_alpha: alpha,
        s: 2,
        verdict: verdict_for(best.0, alpha, true),
        witness: Some(Witness {
            indices: IndexSet::from_sorted(idx),
            value: best.0,
        }),
        exact: true,
    }
}

/// Mean squared correlation `(1/d^2) sum_{i,j} <x_i/|x_i|, x_j/|x_j|>^2`,
/// which can never drop below `1/n`.
pub fn welch_floor(x: &DMatrix<f64>) -> Result<f64> {
    let (n, d) = x.shape();
    if d == 0 || n == 0 {
        return Err(Error::invalid("matrix must be nonempty"));
    }
    let mut xh = x.clone();
    for (j, mut col) in xh.column_iter_mut().enumerate() {
        let nrm = col.norm();
        if nrm == 0.0 {
            return Err(Error::invalid(format!("column {j} is zero")));
        }
        col /= nrm;
    }
    // ||Xh^T Xh||_F = ||Xh Xh^T||_F; form whichever Gram is smaller
    let small = if n < d { &xh * xh.transpose() } else { xh.transpose() * &xh };
    Ok(small.norm_squared() / (d as f64 * d as f64))
}

/// Smallest row count any `(epsilon, s)`-l-infinity-RIP matrix can have once
/// `d >= s^3 / epsilon^2`: `s^2 / (144 epsilon^2)`.
pub fn linf_rip_sample_floor(epsilon: f64, s: usize) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::invalid(format!("epsilon {epsilon} must lie in (0, 1/2)")));
    }
    if s < 2 {
        return Err(Error::invalid(format!("s={s} must be at least 2")));
    }
    let s = s as f64;
    Ok(s * s / (144.0 * epsilon * epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_ensemble, Dims, Ensemble};

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        sample_ensemble(Dims::new(n, d, 1).unwrap(), Ensemble::GaussianScaled, seed)
            .unwrap()
            .into_matrix()
    }

    fn perturbed_identity(d: usize, e0: f64) -> DMatrix<f64> {
        let mut x = DMatrix::identity(d, d);
        x[(0, 1)] = e0;
        x
    }

    /// Every subset of size `m`, scored with the library row sum.
    fn brute_force_linf(g: &DMatrix<f64>, m: usize) -> f64 {
        let d = g.ncols();
        let mut c: Vec<usize> = (0..m).collect();
        let mut best = f64::NEG_INFINITY;
        loop {
            let s = IndexSet::from_sorted(c.clone());
            best = best.max(linf_subset_value(g, &s));
            if !next_combination(&mut c, d) {
                return best;
            }
        }
    }

    #[test]
    fn identity_holds_everywhere() {
        let x = DMatrix::identity(6, 6);
        for s in 1..=6 {
            assert!(certify_l2_rip(&x, 0.01, s, CertMode::Exact).unwrap().holds());
            let c = certify_linf_rip(&x, 0.0, s, CertMode::Exact).unwrap();
            assert!(c.holds());
            assert_eq!(c.value(), Some(0.0));
        }
        assert!(certify_pi(&x, 1e-6).unwrap().holds());
    }

    #[test]
    fn perturbed_identity_gram_values() {
        let e0 = 0.3;
        let x = perturbed_identity(5, e0);
        // Gram: [[1, e0], [e0, 1 + e0^2]] on the first two coordinates
        let c = certify_linf_rip(&x, 0.1, 2, CertMode::Exact).unwrap();
        assert_eq!(c.verdict, Verdict::Fails);
        assert!((c.value().unwrap() - (e0 + e0 * e0)).abs() < 1e-15);
        assert_eq!(c.witness.unwrap().indices.as_slice(), &[0, 1]);

        let p = certify_pi(&x, 0.1).unwrap();
        assert!((p.value().unwrap() - e0.max(e0 * e0)).abs() < 1e-15);

        // 2x2 block eigenvalues: 1 + e0^2/2 +- sqrt(e0^4/4 + e0^2)
        let half = e0 * e0 / 2.0;
        let rad = (e0.powi(4) / 4.0 + e0 * e0).sqrt();
        let dev = (half + rad).max(rad - half);
        let l2 = certify_l2_rip(&x, dev - 1e-6, 2, CertMode::Exact).unwrap();
        assert_eq!(l2.verdict, Verdict::Fails);
        assert_eq!(l2.witness.as_ref().unwrap().indices.as_slice(), &[0, 1]);
        assert!((l2.value().unwrap() - dev).abs() < 1e-12);
    }

    #[test]
    fn greedy_matches_brute_force() {
        for seed in 0..40u64 {
            let d = 5 + (seed as usize % 9);
            let x = gaussian(8 + seed as usize % 5, d, seed);
            let g = gram(&x);
            for s in 1..=4 {
                let (greedy, sub) = linf_rip_value(&g, s);
                assert_eq!(greedy, brute_force_linf(&g, s.min(d)), "seed {seed} s {s}");
                assert_eq!(linf_subset_value(&g, &sub), greedy);
            }
        }
    }

    #[test]
    fn exact_l2_budget() {
        let x = gaussian(10, 200, 1);
        assert!(matches!(
            certify_l2_rip(&x, 0.3, 5, CertMode::Exact),
            Err(Error::BudgetExceeded(_))
        ));
        let c = certify_l2_rip(&x, 10.0, 5, CertMode::Sampled { trials: 20, seed: 3 }).unwrap();
        assert_eq!(c.verdict, Verdict::LowerBoundOnly);
        assert!(!c.exact);
        assert_eq!(binomial(200, 5), 2_535_650_040);
    }

    #[test]
    fn sampled_is_deterministic() {
        let x = gaussian(30, 40, 2);
        let mode = CertMode::Sampled { trials: 50, seed: 9 };
        assert_eq!(
            certify_linf_rip(&x, 0.2, 4, mode).unwrap(),
            certify_linf_rip(&x, 0.2, 4, mode).unwrap()
        );
    }

    #[test]
    fn gaussian_l2_rip_exact_small() {
        let x = gaussian(4000, 50, 4);
        let c = certify_l2_rip(&x, 0.3, 3, CertMode::Exact).unwrap();
        assert!(c.holds() && c.exact);
    }

    #[test]
    fn linf_value_grows_roughly_linearly_in_s() {
        let g = gram(&gaussian(200, 50, 5));
        let v: Vec<f64> = (1..=10).map(|s| linf_rip_value(&g, s).0).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        // increments shrink because later columns are less correlated, but
        // the curve stays between linear growth with slope v(10)/10 and 2x that
        let ratio = v[9] / v[4];
        assert!((1.3..=2.5).contains(&ratio), "v(10)/v(5) = {ratio}");
    }

    #[test]
    fn welch_examples() {
        let q = gaussian(7, 7, 1).qr().q();
        assert!((welch_floor(&q).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        let twin = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.5, 0.5]);
        assert!((welch_floor(&twin).unwrap() - 1.0).abs() < 1e-12);
        let x = gaussian(100, 500, 2);
        let w = welch_floor(&x).unwrap();
        assert!(w >= 0.01 && w <= 0.03, "welch {w}");
        let mut z = gaussian(5, 3, 3);
        z.column_mut(1).fill(0.0);
        assert!(welch_floor(&z).is_err());
    }

    #[test]
    fn sample_floor_examples() {
        assert!((linf_rip_sample_floor(0.25, 12).unwrap() - 16.0).abs() < 1e-12);
        assert!(linf_rip_sample_floor(0.5, 12).is_err());
        assert!(linf_rip_sample_floor(0.0, 12).is_err());
        assert!(linf_rip_sample_floor(0.25, 1).is_err());
    }

    #[test]
    fn certificate_json_round_trip() {
        let x = perturbed_identity(4, 0.2);
        let c = certify_linf_rip(&x, 0.1, 3, CertMode::Exact).unwrap();
        let back = RipCertificate::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
        let mut bad = c.clone();
        bad.witness = None;
        assert!(RipCertificate::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn pi_implies_linf_rip(seed in 0u64..10_000, n in 20usize..400, s in 2usize..5) {
                let x = gaussian(n, 10, seed);
                let g = gram(&x);
                let alpha = certify_pi_gram(&g, 0.0).value().unwrap();
                // tightest epsilon for which PI at epsilon / s holds
                let eps = alpha * s as f64 * (1.0 + 1e-12);
                prop_assert!(certify_pi_gram(&g, eps / s as f64).holds());
                prop_assert!(certify_linf_rip_gram(&g, eps * (1.0 + 1e-12), s, CertMode::Exact).unwrap().holds());
            }

            #[test]
            fn linf_rip_implies_l2_rip(seed in 0u64..10_000, n in 50usize..2000, s in 1usize..4) {
                let x = gaussian(n, 9, seed);
                let c = certify_linf_rip(&x, 0.0, s, CertMode::Exact).unwrap();
                let eps = c.value().unwrap() * (1.0 + 1e-12) + 1e-15;
                prop_assert!(certify_linf_rip(&x, eps, s, CertMode::Exact).unwrap().holds());
                prop_assert!(certify_l2_rip(&x, eps, s, CertMode::Exact).unwrap().holds());
            }

            #[test]
            fn welch_bound_holds(seed in 0u64..10_000, n in 1usize..30, d in 1usize..30) {
                let x = gaussian(n, d, seed);
                prop_assert!(welch_floor(&x).unwrap() >= (1.0 / n as f64) * (1.0 - 1e-12));
            }

            #[test]
            fn greedy_equals_enumeration(seed in 0u64..10_000, d in 2usize..=14, s in 1usize..=4) {
                let g = gram(&gaussian(6, d, seed));
                prop_assert_eq!(linf_rip_value(&g, s).0, brute_force_linf(&g, s.min(d)));
            }
        }
    }
}
