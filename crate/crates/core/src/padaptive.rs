//! Partially adaptive recovery: an observation oracle that draws a fresh
//! design per query and can mute chosen columns, and the recursive support
//! estimator that uses it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, hard_threshold, norm2, norm_inf, Design, IndexSet, SolveOptions};
use crate::model::{self, Ensemble, MeasurementMatrix, NoiseVector, SparseVector};
use crate::recovery::{IhtParams, RecoveryReport};
use crate::seed;

/// One oracle query as recorded for replay and audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub rows: usize,
    pub mask: IndexSet,
    pub sub_seed: u64,
    /// `|X^T xi|_inf` of the masked block; for analysis only.
    pub realized_noise_metric: f64,
}

/// Serializable query log plus everything needed to regenerate the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub version: String,
    pub d: usize,
    pub ensemble: Ensemble,
    pub noise_sigma: f64,
    pub master_seed: u64,
    pub queries: Vec<QueryRecord>,
}

pub const TRANSCRIPT_VERSION: &str = "linfsr-transcript-v1";

impl Transcript {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Transcript = serde_json::from_str(text)?;
        if t.version != TRANSCRIPT_VERSION {
            return Err(Error::format(format!("unsupported transcript version `{}`", t.version)));
        }
        if !(t.noise_sigma >= 0.0) || t.ensemble == Ensemble::Explicit {
            return Err(Error::format("transcript needs a sampling ensemble and noise sigma >= 0"));
        }
        for (i, q) in t.queries.iter().enumerate() {
            if q.index != i {
                return Err(Error::format("query indices must be consecutive from 0"));
            }
            if q.mask.as_slice().last().is_some_and(|&j| j >= t.d) {
                return Err(Error::format("mask index out of range"));
            }
        }
        Ok(t)
    }

    /// Rebuild an oracle over `truth` that reproduces every recorded query.
    pub fn replay(&self, truth: SparseVector) -> Result<MaskedOracle> {
        MaskedOracle::new(truth, self.noise_sigma, self.master_seed, self.ensemble)
    }
}

/// Fresh `(X, y)` with the masked columns of `X` set to zero.
#[derive(Debug, Clone)]
pub struct Observation {
    pub x: MeasurementMatrix,
    pub y: Vec<f64>,
}

/// Generates observations of a fixed hidden signal.
///
/// Query `q` draws its design and noise from a seed derived from
/// `(master_seed, q)`, and the design is generated in full before the mask
/// is applied, so the random stream does not depend on the mask.
#[derive(Debug, Clone)]
pub struct MaskedOracle {
    truth: SparseVector,
    noise_sigma: f64,
    master_seed: u64,
    ensemble: Ensemble,
    log: Vec<QueryRecord>,
}

impl MaskedOracle {
    pub fn new(truth: SparseVector, noise_sigma: f64, master_seed: u64, ensemble: Ensemble) -> Result<Self> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::invalid("noise sigma must be finite and >= 0"));
        }
        if ensemble == Ensemble::Explicit {
            return Err(Error::invalid("oracle needs a sampling ensemble"));
        }
        Ok(MaskedOracle {
            truth,
            noise_sigma,
            master_seed,
            ensemble,
            log: Vec::new(),
        })
    }

    pub fn d(&self) -> usize {
        self.truth.dim()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn queries(&self) -> usize {
        self.log.len()
    }

    pub fn rows_consumed(&self) -> usize {
        self.log.iter().map(|q| q.rows).sum()
    }

    pub fn query_log(&self) -> &[QueryRecord] {
        &self.log
    }

    /// The hidden signal. Estimators must not call this.
    pub fn analysis_truth(&self) -> &SparseVector {
        &self.truth
    }

    /// Largest realized `|X^T xi|_inf` over all queries so far.
    pub fn analysis_noise_metric(&self) -> f64 {
        self.log.iter().map(|q| q.realized_noise_metric).fold(0.0, f64::max)
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            version: TRANSCRIPT_VERSION.to_string(),
            d: self.d(),
            ensemble: self.ensemble,
            noise_sigma: self.noise_sigma,
            master_seed: self.master_seed,
            queries: self.log.clone(),
        }
    }

    pub fn masked_observe(&mut self, rows: usize, mask: &IndexSet) -> Result<Observation> {
        if rows == 0 {
            return Err(Error::invalid("a query needs at least one row"));
        }
        let d = self.d();
        if mask.as_slice().last().is_some_and(|&j| j >= d) {
            return Err(Error::invalid("mask index out of range"));
        }
        let index = self.log.len();
        let sub_seed = seed::derive(self.master_seed, &[index as u64]);
        let matrix_seed = seed::derive(sub_seed, &[0]);
        let mut data = model::sample_entries(rows, d, self.ensemble, matrix_seed)?;
        for &j in mask.as_slice() {
            data.column_mut(j).fill(0.0);
        }
        let xi = NoiseVector::gaussian(rows, self.noise_sigma, seed::derive(sub_seed, &[1]))?;
        let design = Design::new(&data);
        let mut y = design.mul(self.truth.values());
        for (a, b) in y.iter_mut().zip(xi.values()) {
            *a += b;
        }
        let realized = norm_inf(&design.tmul(xi.values()));
        self.log.push(QueryRecord {
            index,
            rows,
            mask: mask.clone(),
            sub_seed,
            realized_noise_metric: realized,
        });
        Ok(Observation {
            x: MeasurementMatrix::from_parts(data, self.ensemble, Some(matrix_seed), 1.0 / rows as f64),
            y,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub selected: IndexSet,
    pub s_fp: IndexSet,
    pub s_fn: IndexSet,
    /// `|theta*_{S_FN}|_2 / |theta*|_2`, 0 for a zero signal.
    pub fn_energy_ratio: f64,
}

/// Split coordinates by `|x_j^T y| >= threshold` against the true support.
pub fn threshold_stats(x: &DMatrix<f64>, y: &[f64], truth: &SparseVector, threshold: f64) -> Result<ThresholdStats> {
    if y.len() != x.nrows() || truth.dim() != x.ncols() {
        return Err(Error::invalid("shape mismatch between design, observations and truth"));
    }
    let stat = linops::xt_mul(x, y);
    let selected: Vec<usize> = (0..x.ncols()).filter(|&j| stat[j].abs() >= threshold).collect();
    let selected = IndexSet::from_sorted(selected);
    let support = IndexSet::from_sorted(truth.support().to_vec());
    let s_fp = IndexSet::from_sorted(selected.as_slice().iter().copied().filter(|&j| !support.contains(j)).collect());
    let s_fn = IndexSet::from_sorted(support.as_slice().iter().copied().filter(|&j| !selected.contains(j)).collect());
    let total = norm2(truth.values());
    let missed: f64 = s_fn.as_slice().iter().map(|&j| truth.values()[j].powi(2)).sum::<f64>().sqrt();
    Ok(ThresholdStats {
        selected,
        s_fp,
        s_fn,
        fn_energy_ratio: if total > 0.0 { missed / total } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimatorParams {
    pub k: usize,
    pub n_total: usize,
    /// Number of masked thresholding rounds.
    pub rounds: usize,
    /// l2 bound on the signal used by the warm start.
    #[serde(rename = "R")]
    pub big_r: f64,
    /// Warm-start IHT resolution.
    pub r2: f64,
    /// Per-round selection threshold.
    pub r_inf: f64,
}

impl SupportEstimatorParams {
    /// `rounds = ceil(2 ln k)`, `r2 = sigma_hat`, and
    /// `r_inf = (c/2) sigma_hat sqrt(2 ln d)`, where `sigma_hat` is the known
    /// noise scale and `sigma_hat sqrt(2 ln d)` stands in for the unobservable
    /// `|X^T xi|_inf`.
    pub fn with_defaults(k: usize, n_total: usize, d: usize, big_r: f64, sigma_hat: f64, c: f64) -> Result<Self> {
        let rounds = (2.0 * (k.max(1) as f64).ln()).ceil().max(1.0) as usize;
        let p = SupportEstimatorParams {
            k,
            n_total,
            rounds,
            big_r,
            r2: sigma_hat,
            r_inf: 0.5 * c * sigma_hat * (2.0 * (d as f64).ln()).sqrt(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.rounds == 0 {
            return Err(Error::invalid("need k >= 1 and at least one round"));
        }
        if !(self.big_r > 0.0) || !(self.r2 > 0.0) || !(self.r_inf >= 0.0) {
            return Err(Error::invalid("need R > 0, r2 > 0 and r_inf >= 0"));
        }
        let (first, per_round, last) = self.row_budget();
        if first == 0 || per_round == 0 || last == 0 {
            return Err(Error::invalid(format!(
                "n_total={} is too small for {} rounds",
                self.n_total, self.rounds
            )));
        }
        Ok(())
    }

    /// Rows for the warm start, for each round, and for the final fit; the
    /// final fit absorbs the rounding remainder so the total is exact.
    pub fn row_budget(&self) -> (usize, usize, usize) {
        let first = self.n_total / 3;
        let per_round = self.n_total / (3 * self.rounds);
        let last = self.n_total - first - self.rounds * per_round;
        (first, per_round, last)
    }

    /// Largest support estimate tolerated: `ceil(64 k max(ln k, 1))`.
    pub fn support_cap(&self) -> usize {
        let k = self.k as f64;
        (64.0 * k * k.ln().max(1.0)).ceil() as usize
    }
}

/// The estimate plus the nested supports `T_0, ..., T_N` found along the way.
#[derive(Debug, Clone)]
pub struct SupportTrace {
    pub report: RecoveryReport,
    pub supports: Vec<IndexSet>,
}

pub fn adaptive_support_recover(oracle: &mut MaskedOracle, params: &SupportEstimatorParams) -> Result<RecoveryReport> {
    adaptive_support_recover_traced(oracle, params).map(|t| t.report)
}

/// Warm start on a fresh unmasked block, then rounds that mute the current
/// support and add every coordinate whose correlation with the new
/// observations reaches `r_inf`, then least squares on the final support
/// from a block where every other column is muted.
pub fn adaptive_support_recover_traced(
    oracle: &mut MaskedOracle,
    params: &SupportEstimatorParams,
) -> Result<SupportTrace> {
    params.validate()?;
    let d = oracle.d();
    let k = params.k;
    let (first, per_round, last) = params.row_budget();
    let cap = params.support_cap();
    let start_rows = oracle.rows_consumed();

    let warm_obs = oracle.masked_observe(first, &IndexSet::empty())?;
    let iht_params = IhtParams::new(k, params.big_r, params.r2)?;
    let warm = crate::recovery::iht(warm_obs.x.matrix(), &warm_obs.y, &iht_params)?;
    let mut support = IndexSet::from_sorted(warm.estimate.support().to_vec());
    let mut supports = vec![support.clone()];

    for _ in 0..params.rounds {
        let obs = oracle.masked_observe(per_round, &support)?;
        let stat = linops::xt_mul(obs.x.matrix(), &obs.y);
        let found: Vec<usize> = (0..d).filter(|&j| stat[j].abs() >= params.r_inf).collect();
        support = support.union(&IndexSet::from_sorted(found));
        if support.len() > cap {
            return Err(Error::SupportBlowup { size: support.len(), cap });
        }
        supports.push(support.clone());
    }

    let final_obs = oracle.masked_observe(last, &support.complement(d))?;
    let mut values = vec![0.0; d];
    let mut solver_residual = None;
    if !support.is_empty() {
        let sol = linops::restricted_ols(final_obs.x.matrix(), &support, &final_obs.y, &SolveOptions::default())?;
        for (&j, w) in support.as_slice().iter().zip(&sol.coef) {
            values[j] = *w;
        }
        solver_residual = Some(sol.residual);
    }
    let estimate = hard_threshold(&values, k);
    let mut report = RecoveryReport {
        estimate,
        linf_error: None,
        l2_error: None,
        metric_sigma: None,
        iterations: warm.iterations,
        solver_residual,
        rows_used: oracle.rows_consumed() - start_rows,
        selected: Some(support),
        returned_phase: None,
        guarantee: None,
        certified_bound: None,
        diagnostics: Vec::new(),
    };
    if params.n_total % (3 * params.rounds) != 0 {
        report.diagnostics.push(format!(
            "{} rows not divisible into rounds; final fit used {last} rows",
            params.n_total
        ));
    }
    Ok(SupportTrace { report, supports })
}
