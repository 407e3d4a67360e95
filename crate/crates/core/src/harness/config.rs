use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Ensemble;
use crate::recovery::{DEFAULT_C, DEFAULT_C_PRIME};

use super::calibrated;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ObliviousRecovery,
    AdaptiveRecovery,
    ReductionRecovery,
    Separation,
    LinfRipSweep,
    MetricEquivalence,
    PartialAdaptive,
    ThresholdStats,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ObliviousRecovery => "oblivious_recovery",
            ExperimentKind::AdaptiveRecovery => "adaptive_recovery",
            ExperimentKind::ReductionRecovery => "reduction_recovery",
            ExperimentKind::Separation => "separation",
            ExperimentKind::LinfRipSweep => "linf_rip_sweep",
            ExperimentKind::MetricEquivalence => "metric_equivalence",
            ExperimentKind::PartialAdaptive => "partial_adaptive",
            ExperimentKind::ThresholdStats => "threshold_stats",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub n: usize,
    pub d: usize,
    pub k: usize,
}

/// Cartesian product expanded into grid points by [`ExperimentConfig::expand`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Zero,
    /// `xi = scale * X v` for the normalized masking vector `v`.
    Masking { scale: f64 },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Gaussian { sigma: 0.01 }
    }
}

impl NoiseSpec {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { sigma } => sigma,
            _ => 0.0,
        }
    }
}

/// What the signal magnitude is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalScale {
    #[default]
    Absolute,
    /// Multiples of the realized `|X^T xi|_inf`.
    NoiseMetric,
    /// Multiples of `sigma sqrt(ln d)`.
    SigmaLogD,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    #[serde(default = "one")]
    pub magnitude: f64,
    #[serde(default)]
    pub scale: SignalScale,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            magnitude: 1.0,
            scale: SignalScale::Absolute,
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Algorithm knobs. Unset optional fields take per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoParams {
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_c_prime")]
    pub c_prime: f64,
    /// Target accuracy; overrides `r_factor`.
    #[serde(default)]
    pub r: Option<f64>,
    /// Target accuracy as a multiple of a per-kind noise scale.
    #[serde(default)]
    pub r_factor: Option<f64>,
    /// Constant in the checked error bound.
    #[serde(default)]
    pub bound_constant: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub s: Option<usize>,
    /// Signal-to-noise constant `C` of the thresholding experiment, and the
    /// `c` of the default `r_inf` for the adaptive support estimator.
    #[serde(default = "default_snr")]
    pub snr_constant: f64,
    #[serde(default)]
    pub rounds: Option<usize>,
}

fn default_c() -> f64 {
    DEFAULT_C
}
fn default_c_prime() -> f64 {
    DEFAULT_C_PRIME
}
fn default_snr() -> f64 {
    80.0
}

impl Default for AlgoParams {
    fn default() -> Self {
        AlgoParams {
            c: DEFAULT_C,
            c_prime: DEFAULT_C_PRIME,
            r: None,
            r_factor: None,
            bound_constant: None,
            eps: None,
            s: None,
            snr_constant: default_snr(),
            rounds: None,
        }
    }
}

impl AlgoParams {
    pub fn bound_constant_for(&self, kind: ExperimentKind) -> f64 {
        self.bound_constant.unwrap_or(match kind {
            ExperimentKind::ObliviousRecovery => calibrated::OBLIVIOUS_C,
            ExperimentKind::ReductionRecovery => calibrated::REDUCTION_C,
            ExperimentKind::PartialAdaptive => calibrated::PARTIAL_C,
            ExperimentKind::Separation => 2.0,
            _ => 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub grid: Vec<GridPoint>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_ensemble")]
    pub ensemble: Ensemble,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub params: AlgoParams,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    /// Wall time varies run to run, so it is left out of the records unless
    /// asked for.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_ensemble() -> Ensemble {
    Ensemble::GaussianScaled
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be positive"));
        }
        if self.ensemble == Ensemble::Explicit {
            return Err(Error::invalid("experiments need a random ensemble"));
        }
        if self.grid.is_empty() && self.sweep.is_none() {
            return Err(Error::invalid("config has neither grid points nor a sweep"));
        }
        if let Some(s) = &self.sweep {
            if s.n.is_empty() || s.d.is_empty() || s.k.is_empty() {
                return Err(Error::invalid("every sweep axis needs at least one value"));
            }
        }
        let p = self.expanded_grid();
        if p.len().checked_mul(self.trials).is_none_or(|t| t > 10_000_000) {
            return Err(Error::invalid("too many trials"));
        }
        for g in &p {
            if g.n == 0 || g.d == 0 || g.k == 0 || g.k > g.d {
                return Err(Error::invalid(format!("bad grid point {g:?}")));
            }
        }
        match self.noise {
            NoiseSpec::Gaussian { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                return Err(Error::invalid("noise sigma must be finite and nonnegative"))
            }
            NoiseSpec::Masking { scale } if !scale.is_finite() => {
                return Err(Error::invalid("masking scale must be finite"))
            }
            _ => {}
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let p = &self.params;
        if !pos(p.c) || !pos(p.c_prime) || !pos(p.snr_constant) || !self.signal.magnitude.is_finite() {
            return Err(Error::invalid("constants must be finite and positive"));
        }
        for v in [p.r, p.r_factor, p.bound_constant, p.eps].into_iter().flatten() {
            if !pos(v) {
                return Err(Error::invalid("optional constants must be finite and positive"));
            }
        }
        Ok(())
    }

    /// Grid points followed by the sweep product in `n`, `d`, `k` order.
    pub fn expanded_grid(&self) -> Vec<GridPoint> {
        let mut out = self.grid.clone();
        if let Some(s) = &self.sweep {
            for &n in &s.n {
                for &d in &s.d {
                    for &k in &s.k {
                        out.push(GridPoint { n, d, k });
                    }
                }
            }
        }
        out
    }

    /// Same experiment with the sweep folded into the explicit grid.
    pub fn expand(&self) -> ExperimentConfig {
        ExperimentConfig {
            grid: self.expanded_grid(),
            sweep: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"name":"t","kind":"oblivious_recovery","grid":[{"n":10,"d":20,"k":2}],"trials":3,"master_seed":7}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.ensemble, Ensemble::GaussianScaled);
        assert_eq!(c.noise, NoiseSpec::Gaussian { sigma: 0.01 });
        assert_eq!(c.params.c, 1.0 / 80.0);
        assert!(!c.record_timing);
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sweep_expands_in_order() {
        let text = r#"{"name":"s","kind":"linf_rip_sweep","sweep":{"n":[10,20],"d":[5],"k":[1,2]},"trials":1,"master_seed":0}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        let g: Vec<_> = c.expanded_grid().iter().map(|p| (p.n, p.d, p.k)).collect();
        assert_eq!(g, vec![(10, 5, 1), (10, 5, 2), (20, 5, 1), (20, 5, 2)]);
        assert!(c.expand().sweep.is_none());
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"name":"t","kind":"oblivious_recovery","trials":3,"master_seed":7}"#,
            r#"{"name":"t","kind":"nope","grid":[{"n":1,"d":1,"k":1}],"trials":3,"master_seed":7}"#,
            r#"{"name":"t","kind":"oblivious_recovery","grid":[{"n":1,"d":1,"k":2}],"trials":3,"master_seed":7}"#,
            r#"{"name":"t","kind":"oblivious_recovery","grid":[{"n":1,"d":1,"k":1}],"trials":0,"master_seed":7}"#,
            r#"{"name":"t","kind":"oblivious_recovery","grid":[{"n":1,"d":1,"k":1}],"trials":1,"master_seed":7,"extra":1}"#,
            r#"{"name":"t","kind":"oblivious_recovery","grid":[{"n":1,"d":1,"k":1}],"trials":1,"master_seed":7,"noise":{"kind":"gaussian","sigma":-1}}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }
}
