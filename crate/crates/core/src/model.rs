//! Domain types shared by every estimator: problem dimensions, measurement
//! ensembles, sparse signals, noise vectors and assembled recovery instances.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, dense_mul};
use crate::seed;

/// Sample count, ambient dimension and sparsity budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub d: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(n: usize, d: usize, k: usize) -> Result<Self> {
        let dims = Dims { n, d, k };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.k == 0 || self.k > self.d {
            return Err(Error::invalid(format!(
                "sparsity budget k={} must satisfy 1 <= k <= d={}",
                self.k, self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// i.i.d. N(0, 1/n) entries.
    GaussianScaled,
    /// i.i.d. +-1/sqrt(n) entries.
    RademacherScaled,
    /// Supplied by the caller; no generating law.
    Explicit,
}

impl std::str::FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian_scaled" => Ok(Ensemble::GaussianScaled),
            "rademacher" | "rademacher_scaled" => Ok(Ensemble::RademacherScaled),
            "explicit" => Ok(Ensemble::Explicit),
            other => Err(Error::invalid(format!("unknown ensemble `{other}`"))),
        }
    }
}

/// A dense n x d design matrix together with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    data: DMatrix<f64>,
    ensemble: Ensemble,
    seed: Option<u64>,
    scale_variance: f64,
}

impl MeasurementMatrix {
    /// Wrap a caller-supplied matrix.
    pub fn explicit(data: DMatrix<f64>) -> Self {
        let len = data.len().max(1) as f64;
        let scale_variance = data.iter().map(|v| v * v).sum::<f64>() / len;
        MeasurementMatrix {
            data,
            ensemble: Ensemble::Explicit,
            seed: None,
            scale_variance,
        }
    }

    pub(crate) fn from_parts(data: DMatrix<f64>, ensemble: Ensemble, seed: Option<u64>, scale_variance: f64) -> Self {
        MeasurementMatrix {
            data,
            ensemble,
            seed,
            scale_variance,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn ensemble(&self) -> Ensemble {
        self.ensemble
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Per-entry variance of the generating law (empirical mean square for
    /// explicit matrices).
    pub fn scale_variance(&self) -> f64 {
        self.scale_variance
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }
}

/// Draw a measurement matrix from one of the sub-Gaussian ensembles.
///
/// Entries are generated column by column from a ChaCha8 stream keyed by
/// `seed`, so the same arguments always reproduce the same bits.
pub fn sample_ensemble(dims: Dims, ensemble: Ensemble, seed: u64) -> Result<MeasurementMatrix> {
    dims.validate()?;
    let data = sample_entries(dims.n, dims.d, ensemble, seed)?;
    Ok(MeasurementMatrix {
        data,
        ensemble,
        seed: Some(seed),
        scale_variance: 1.0 / dims.n as f64,
    })
}

pub(crate) fn sample_entries(
    n: usize,
    d: usize,
    ensemble: Ensemble,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let mut rng = seed::rng(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let data = match ensemble {
        Ensemble::GaussianScaled => DMatrix::from_iterator(
            n,
            d,
            (0..n * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
        ),
        Ensemble::RademacherScaled => DMatrix::from_iterator(
            n,
            d,
            (0..n * d).map(|_| if rng.random::<bool>() { scale } else { -scale }),
        ),
        Ensemble::Explicit => {
            return Err(Error::invalid("explicit ensemble has no sampling law"));
        }
    };
    Ok(data)
}

/// A length-d vector with at most `budget` nonzero coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    values: Vec<f64>,
    support: Vec<usize>,
    budget: usize,
}

impl SparseVector {
    pub fn zeros(d: usize, budget: usize) -> Self {
        SparseVector {
            values: vec![0.0; d],
            support: Vec::new(),
            budget,
        }
    }

    /// Build from dense values; fails if more than `budget` entries are nonzero.
    pub fn from_dense(mut values: Vec<f64>, budget: usize) -> Result<Self> {
        let mut support = Vec::new();
        for (i, v) in values.iter_mut().enumerate() {
            if *v == 0.0 {
                // normalizes -0.0
                *v = 0.0;
            } else {
                support.push(i);
            }
        }
        if support.len() > budget {
            return Err(Error::invalid(format!(
                "vector has {} nonzeros, budget is {budget}",
                support.len()
            )));
        }
        Ok(SparseVector {
            values,
            support,
            budget,
        })
    }

    /// Build from `(index, value)` pairs over ambient dimension `d`.
    pub fn from_entries(d: usize, entries: &[(usize, f64)], budget: usize) -> Result<Self> {
        let mut values = vec![0.0; d];
        for &(i, v) in entries {
            if i >= d {
                return Err(Error::invalid(format!("index {i} out of range for d={d}")));
            }
            values[i] = v;
        }
        Self::from_dense(values, budget)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same values under a different declared budget.
    pub fn with_budget(self, budget: usize) -> Result<Self> {
        Self::from_dense(self.values, budget)
    }

    /// Check the support cache against the values; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let expected: Vec<usize> = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        if expected != self.support {
            return Err(Error::format("support does not match nonzero entries"));
        }
        if self.support.len() > self.budget {
            return Err(Error::format("support exceeds declared budget"));
        }
        Ok(())
    }
}

/// Draw a signal with `k` uniformly placed nonzeros of magnitude `magnitude`
/// and independent random signs.
pub fn random_sparse_signal(d: usize, k: usize, magnitude: f64, seed: u64) -> Result<SparseVector> {
    if k > d {
        return Err(Error::invalid(format!("k={k} exceeds d={d}")));
    }
    let mut rng = seed::rng(seed);
    let mut idx = index::sample(&mut rng, d, k).into_vec();
    idx.sort_unstable();
    let entries: Vec<(usize, f64)> = idx
        .into_iter()
        .map(|i| (i, if rng.random::<bool>() { magnitude } else { -magnitude }))
        .collect();
    SparseVector::from_entries(d, &entries, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseProvenance {
    IsotropicGaussian { sigma: f64 },
    Adversarial,
    Zero,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    values: Vec<f64>,
    provenance: NoiseProvenance,
}

impl NoiseVector {
    pub fn zero(n: usize) -> Self {
        NoiseVector {
            values: vec![0.0; n],
            provenance: NoiseProvenance::Zero,
        }
    }

    pub fn gaussian(n: usize, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("noise sigma {sigma} must be finite and >= 0")));
        }
        let mut rng = seed::rng(seed);
        let values = (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(NoiseVector {
            values,
            provenance: NoiseProvenance::IsotropicGaussian { sigma },
        })
    }

    pub fn adversarial(values: Vec<f64>) -> Self {
        NoiseVector {
            values,
            provenance: NoiseProvenance::Adversarial,
        }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        NoiseVector {
            values,
            provenance: NoiseProvenance::Explicit,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> NoiseProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.provenance == NoiseProvenance::Zero && self.values.iter().any(|v| *v != 0.0) {
            return Err(Error::format("zero-provenance noise has nonzero entries"));
        }
        Ok(())
    }
}

/// Which dependence structure between (signal, noise) and the design an
/// instance was built under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Signal and noise drawn before, and independently of, the design.
    Oblivious,
    /// Signal and noise may be arbitrary functions of the design.
    Adaptive,
    /// Noise independent of the design, signal arbitrary.
    PartiallyAdaptive,
}

/// `(X, y, truth, noise)` with `y = X truth + noise`.
#[derive(Debug, Clone)]
pub struct RecoveryInstance {
    pub x: MeasurementMatrix,
    pub y: Vec<f64>,
    pub truth: SparseVector,
    pub noise: NoiseVector,
    pub model: ModelKind,
}

pub fn build_instance(
    x: MeasurementMatrix,
    truth: SparseVector,
    noise: NoiseVector,
    model: ModelKind,
) -> Result<RecoveryInstance> {
    let (n, d) = x.matrix().shape();
    if truth.dim() != d {
        return Err(Error::invalid(format!(
            "signal length {} does not match d={d}",
            truth.dim()
        )));
    }
    if noise.len() != n {
        return Err(Error::invalid(format!(
            "noise length {} does not match n={n}",
            noise.len()
        )));
    }
    let mut y = linops::mul_sparse(x.matrix(), &truth);
    for (yi, ei) in y.iter_mut().zip(noise.values()) {
        *yi += ei;
    }
    Ok(RecoveryInstance {
        x,
        y,
        truth,
        noise,
        model,
    })
}

impl RecoveryInstance {
    /// `max |y - X truth - noise|`, a roundoff-level quantity for any
    /// consistently built instance.
    pub fn residual_inf(&self) -> f64 {
        let signal = dense_mul(self.x.matrix(), self.truth.values());
        self.y
            .iter()
            .zip(signal)
            .zip(self.noise.values())
            .map(|((y, s), e)| (y - s - e).abs())
            .fold(0.0, f64::max)
    }
}
