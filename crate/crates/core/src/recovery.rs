//! Estimators: iterative hard thresholding, three-phase oblivious recovery,
//! the holdout reduction that removes the lower limit on `r`, and IHT run
//! under an l-infinity-RIP certificate for adaptive noise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, hard_threshold, norm2, norm_inf, restricted_ols_view, Design, IndexSet, SolveOptions};
use crate::model::SparseVector;
use crate::ripcert::{PropertyKind, RipCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhtParams {
    pub k: usize,
    /// Upper bound on the signal norm.
    #[serde(rename = "R")]
    pub big_r: f64,
    /// Target resolution.
    pub r: f64,
}

impl IhtParams {
    pub fn new(k: usize, big_r: f64, r: f64) -> Result<Self> {
        let p = IhtParams { k, big_r, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.k, self.big_r, self.r)
    }

    /// `ceil(log2(R / r))`, or 0 once `r >= R`.
    pub fn iterations(&self) -> usize {
        halvings(self.big_r, self.r)
    }
}

fn validate_common(k: usize, big_r: f64, r: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("sparsity budget k must be at least 1"));
    }
    if !(big_r > 0.0 && big_r.is_finite()) || !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("need finite R > 0 and r > 0, got R={big_r}, r={r}")));
    }
    Ok(())
}

fn halvings(big_r: f64, r: f64) -> usize {
    if r >= big_r {
        0
    } else {
        (big_r / r).log2().ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObliviousParams {
    pub k: usize,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub r: f64,
    /// Support-selection threshold is `r / c`.
    pub c: f64,
}

pub const DEFAULT_C: f64 = 1.0 / 80.0;
pub const DEFAULT_C_PRIME: f64 = 1.0 / 20.0;

impl ObliviousParams {
    pub fn new(k: usize, big_r: f64, r: f64) -> Result<Self> {
        let p = ObliviousParams { k, big_r, r, c: DEFAULT_C };
        p.validate()?;
        Ok(p)
    }

    pub fn with_c(mut self, c: f64) -> Result<Self> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.k, self.big_r, self.r)?;
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("threshold constant c={} must be positive", self.c)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionParams {
    pub k: usize,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub r: f64,
    /// Holdout test rejects when the statistic exceeds `rho / c_prime`.
    pub c_prime: f64,
    /// Constant handed to each oblivious phase.
    pub c: f64,
}

impl ReductionParams {
    pub fn new(k: usize, big_r: f64, r: f64) -> Result<Self> {
        let p = ReductionParams {
            k,
            big_r,
            r,
            c_prime: DEFAULT_C_PRIME,
            c: DEFAULT_C,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.k, self.big_r, self.r)?;
        if !(self.c_prime > 0.0 && self.c_prime.is_finite()) || !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("constants c and c_prime must be positive"));
        }
        Ok(())
    }

    pub fn phases(&self) -> usize {
        halvings(self.big_r, self.r)
    }

    /// `rho^(t) = R / 2^t`.
    pub fn rho(&self, t: usize) -> f64 {
        self.big_r / 2f64.powi(t as i32)
    }
}

/// Deterministic sup-norm guarantee that IHT inherits from an
/// `(epsilon, s)`-l-infinity-RIP certificate with `s >= 2k + 1` and
/// `epsilon < 1/2`.
///
/// Each iteration obeys `e_{t+1} <= 2 eps e_t + 2 sigma` with
/// `sigma = |X^T xi|_inf`, which telescopes to
/// `(2 eps)^T R + 2 sigma (1 - (2 eps)^T) / (1 - 2 eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGuarantee {
    pub epsilon: f64,
    pub iterations: usize,
    #[serde(rename = "R")]
    pub big_r: f64,
}

impl AdaptiveGuarantee {
    pub fn bound(&self, metric_sigma: f64) -> f64 {
        let q = 2.0 * self.epsilon;
        let qt = q.powi(self.iterations as i32);
        let geometric = if q == 0.0 {
            if self.iterations == 0 {
                0.0
            } else {
                1.0
            }
        } else {
            (1.0 - qt) / (1.0 - q)
        };
        qt * self.big_r + 2.0 * metric_sigma * geometric
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub estimate: SparseVector,
    pub linf_error: Option<f64>,
    pub l2_error: Option<f64>,
    /// `|X^T xi|_inf` over the whole design.
    pub metric_sigma: Option<f64>,
    pub iterations: usize,
    pub solver_residual: Option<f64>,
    pub rows_used: usize,
    /// Indices selected by thresholding, where the estimator has such a step.
    pub selected: Option<IndexSet>,
    /// Phase whose estimate was returned by the holdout reduction.
    pub returned_phase: Option<usize>,
    pub guarantee: Option<AdaptiveGuarantee>,
    /// Certified sup-norm bound, filled in by [`RecoveryReport::evaluate`].
    pub certified_bound: Option<f64>,
    pub diagnostics: Vec<String>,
}

impl RecoveryReport {
    fn new(estimate: SparseVector, rows_used: usize) -> Self {
        RecoveryReport {
            estimate,
            linf_error: None,
            l2_error: None,
            metric_sigma: None,
            iterations: 0,
            solver_residual: None,
            rows_used,
            selected: None,
            returned_phase: None,
            guarantee: None,
            certified_bound: None,
            diagnostics: Vec::new(),
        }
    }

    /// Fill in the error fields against a known truth and, if given, the
    /// noise vector that produced the observations from `x`.
    pub fn evaluate(&mut self, truth: &SparseVector, x: &DMatrix<f64>, noise: Option<&[f64]>) {
        let diff = linops::sub(self.estimate.values(), truth.values());
        self.linf_error = Some(norm_inf(&diff));
        self.l2_error = Some(norm2(&diff));
        if let Some(xi) = noise {
            let sigma = norm_inf(&linops::xt_mul(x, xi));
            self.metric_sigma = Some(sigma);
            if let Some(g) = self.guarantee {
                self.certified_bound = Some(g.bound(sigma));
            }
        }
    }

    /// `Some(true)` when a certified bound exists and the error respects it.
    pub fn certified_bound_holds(&self) -> Option<bool> {
        match (self.certified_bound, self.linf_error) {
            (Some(b), Some(e)) => Some(e <= b * (1.0 + 1e-12) + 1e-12),
            _ => None,
        }
    }
}

fn check_shapes(x: &Design<'_>, y: &[f64]) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::invalid(format!(
            "observation length {} does not match n={}",
            y.len(),
            x.nrows()
        )));
    }
    Ok(())
}

/// One IHT pass; when `trace` is given, every half step and iterate is kept.
fn iht_core(x: &Design<'_>, y: &[f64], k: usize, iters: usize, mut trace: Option<&mut IhtTrace>) -> SparseVector {
    let d = x.ncols();
    let mut theta = SparseVector::zeros(d, k);
    if let Some(t) = trace.as_deref_mut() {
        t.iterates.push(theta.clone());
    }
    for _ in 0..iters {
        let fit = x.mul(theta.values());
        let resid = linops::sub(y, &fit);
        let mut half = x.tmul(&resid);
        for &i in theta.support() {
            half[i] += theta.values()[i];
        }
        theta = hard_threshold(&half, k);
        if let Some(t) = trace.as_deref_mut() {
            t.half_steps.push(half);
            t.iterates.push(theta.clone());
        }
    }
    theta
}

/// Iterative hard thresholding from zero, `ceil(log2(R/r))` steps.
pub fn iht(x: &DMatrix<f64>, y: &[f64], params: &IhtParams) -> Result<RecoveryReport> {
    params.validate()?;
    let design = Design::new(x);
    check_shapes(&design, y)?;
    let iters = params.iterations();
    let est = iht_core(&design, y, params.k, iters, None);
    let mut rep = RecoveryReport::new(est, x.nrows());
    rep.iterations = iters;
    Ok(rep)
}

/// Every iterate `theta^(t)` and gradient half step
/// `theta^(t) + X^T(y - X theta^(t))` of an IHT run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IhtTrace {
    pub iterates: Vec<SparseVector>,
    pub half_steps: Vec<Vec<f64>>,
}

pub fn iht_trace(x: &DMatrix<f64>, y: &[f64], params: &IhtParams) -> Result<IhtTrace> {
    params.validate()?;
    let design = Design::new(x);
    check_shapes(&design, y)?;
    let mut trace = IhtTrace::default();
    iht_core(&design, y, params.k, params.iterations(), Some(&mut trace));
    Ok(trace)
}

/// IHT for adversarially chosen `(theta*, xi)`.
///
/// The iteration is plain IHT. When `certificate` is an l-infinity-RIP
/// certificate that holds at `s >= 2k + 1` with `epsilon < 1/2`, the report
/// carries the deterministic guarantee; otherwise a diagnostic says the
/// bound is unverified. Here `R` bounds `|theta*|_inf`.
pub fn adaptive_iht(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &IhtParams,
    certificate: Option<&RipCertificate>,
) -> Result<RecoveryReport> {
    let mut rep = iht(x, y, params)?;
    match certificate {
        Some(c) if c.kind == PropertyKind::LinfRip && c.holds() => {
            let eps = c.value().unwrap_or(c.epsilon_or_alpha).min(c.epsilon_or_alpha);
            if c.s < 2 * params.k + 1 {
                rep.diagnostics.push(format!(
                    "certificate covers s={} but the guarantee needs s >= 2k+1 = {}; bound unverified",
                    c.s,
                    2 * params.k + 1
                ));
            } else if eps >= 0.5 {
                rep.diagnostics.push(format!("certified epsilon {eps} is not below 1/2; bound unverified"));
            } else if c.exact {
                rep.guarantee = Some(AdaptiveGuarantee {
                    epsilon: eps,
                    iterations: rep.iterations,
                    big_r: params.big_r,
                });
            }
        }
        Some(_) => rep
            .diagnostics
            .push("certificate is not a passing l-infinity-RIP certificate; bound unverified".into()),
        None => rep.diagnostics.push("no certificate supplied; bound unverified".into()),
    }
    Ok(rep)
}

/// Three-phase oblivious recovery on an arbitrary row view.
fn oblivious_core(x: &Design<'_>, y: &[f64], p: &ObliviousParams, opts: &SolveOptions) -> Result<RecoveryReport> {
    let n = x.nrows();
    let d = x.ncols();
    let block = n / 3;
    if block == 0 {
        return Err(Error::invalid(format!("need at least 3 rows, got {n}")));
    }
    let mut diagnostics = Vec::new();
    if n % 3 != 0 {
        let msg = format!("row count {n} not divisible by 3; using the first {} rows", 3 * block);
        log::warn!("{msg}");
        diagnostics.push(msg);
    }
    // each block of n/3 rows, scaled by sqrt(3), has unit expected column norm
    let scale = 3f64.sqrt();
    let xs = x.scaled(scale);
    let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
    let (x1, x2, x3) = (xs.rows(0, block), xs.rows(block, block), xs.rows(2 * block, block));
    let (y1, y2, y3) = (&ys[..block], &ys[block..2 * block], &ys[2 * block..3 * block]);

    let warm_r = (p.k as f64).sqrt() * p.r;
    let iters = halvings(p.big_r, warm_r);
    let warm = iht_core(&x1, y1, p.k, iters, None);

    let r2 = linops::sub(y2, &x2.mul(warm.values()));
    let r3 = linops::sub(y3, &x3.mul(warm.values()));
    let stat = x2.tmul(&r2);
    let threshold = p.r / p.c;
    let mut selected: Vec<usize> = (0..d).filter(|&i| stat[i].abs() >= threshold).collect();
    if selected.len() > p.k {
        let msg = format!(
            "{} coordinates passed the support threshold; keeping the {} largest",
            selected.len(),
            p.k
        );
        log::warn!("{msg}");
        diagnostics.push(msg);
        selected.sort_by(|&a, &b| stat[b].abs().total_cmp(&stat[a].abs()).then(a.cmp(&b)));
        selected.truncate(p.k);
        selected.sort_unstable();
    }
    let selected = IndexSet::from_sorted(selected);

    let mut values = warm.into_values();
    let mut solver_residual = None;
    if !selected.is_empty() {
        // with fewer rows than selected columns the correction is singular;
        // the warm start is still a valid k-sparse estimate
        match restricted_ols_view(&x3, &selected, &r3, opts) {
            Ok(sol) => {
                for (&i, w) in selected.as_slice().iter().zip(&sol.coef) {
                    values[i] += w;
                }
                solver_residual = Some(sol.residual);
            }
            Err(e) => {
                let msg = format!("least-squares correction skipped, keeping the warm start: {e}");
                log::warn!("{msg}");
                diagnostics.push(msg);
            }
        }
    }
    let estimate = SparseVector::from_dense(values, 2 * p.k)?;
    let mut rep = RecoveryReport::new(estimate, 3 * block);
    rep.iterations = iters;
    rep.solver_residual = solver_residual;
    rep.selected = Some(selected);
    rep.diagnostics = diagnostics;
    Ok(rep)
}

/// IHT warm start at resolution `sqrt(k) r`, thresholded support
/// identification at `r / c`, then a least-squares correction on that support
/// from a third, independent block of rows. Output has at most `2k` nonzeros.
pub fn oblivious_recover(x: &DMatrix<f64>, y: &[f64], params: &ObliviousParams) -> Result<RecoveryReport> {
    oblivious_recover_with(x, y, params, &SolveOptions::default())
}

pub fn oblivious_recover_with(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &ObliviousParams,
    opts: &SolveOptions,
) -> Result<RecoveryReport> {
    params.validate()?;
    let design = Design::new(x);
    check_shapes(&design, y)?;
    oblivious_core(&design, y, params, opts)
}

/// Holdout reduction: halve `rho` each phase, run oblivious recovery at
/// resolution `rho` on a fresh block, and stop at the first phase whose
/// holdout statistic exceeds `rho / c_prime`, returning the previous estimate.
pub fn osr_reduction(x: &DMatrix<f64>, y: &[f64], params: &ReductionParams) -> Result<RecoveryReport> {
    params.validate()?;
    let design = Design::new(x);
    check_shapes(&design, y)?;
    let n = x.nrows();
    let d = x.ncols();
    let k = params.k;
    let phases = params.phases();
    if phases == 0 {
        let mut rep = RecoveryReport::new(SparseVector::zeros(d, k), 0);
        rep.returned_phase = Some(0);
        return Ok(rep);
    }
    let splits = 2 * phases;
    let block = n / splits;
    if block < 3 {
        return Err(Error::invalid(format!(
            "{n} rows cannot be split into {splits} blocks of at least 3 rows"
        )));
    }
    let mut diagnostics = Vec::new();
    if n % splits != 0 {
        let msg = format!("row count {n} not divisible by {splits}; using the first {} rows", splits * block);
        log::warn!("{msg}");
        diagnostics.push(msg);
    }
    let scale = (splits as f64).sqrt();
    let xs = design.scaled(scale);
    let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
    let opts = SolveOptions::default();

    let mut current = SparseVector::zeros(d, k);
    let mut returned = phases;
    let mut iterations = 0;
    let mut residual: Option<f64> = None;
    for t in 0..phases {
        let rho = params.rho(t + 1);
        let fit_rows = xs.rows(2 * t * block, block);
        let fit_y = &ys[2 * t * block..(2 * t + 1) * block];
        let obl = ObliviousParams {
            k,
            big_r: params.big_r,
            r: rho,
            c: params.c,
        };
        let phase = oblivious_core(&fit_rows, fit_y, &obl, &opts)?;
        iterations += phase.iterations;
        if let Some(res) = phase.solver_residual {
            residual = Some(residual.map_or(res, |r: f64| r.max(res)));
        }
        diagnostics.extend(phase.diagnostics.into_iter().map(|m| format!("phase {}: {m}", t + 1)));
        let next = hard_threshold(phase.estimate.values(), k);

        let hold_rows = xs.rows((2 * t + 1) * block, block);
        let hold_y = &ys[(2 * t + 1) * block..(2 * t + 2) * block];
        let resid = linops::sub(hold_y, &hold_rows.mul(next.values()));
        let statistic = norm_inf(&hold_rows.tmul(&resid));
        if statistic > rho / params.c_prime {
            returned = t;
            break;
        }
        current = next;
    }
    let mut rep = RecoveryReport::new(current, splits * block);
    rep.iterations = iterations;
    rep.solver_residual = residual;
    rep.returned_phase = Some(returned);
    rep.diagnostics = diagnostics;
    Ok(rep)
}
