use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRIAL_SCHEMA: &str = "linfsr-trial-v1";

/// A named quantity with the closed interval it must land in.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl Check {
    pub fn new(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Check {
            name: name.to_string(),
            value: Some(value),
            lo,
            hi,
        }
    }

    pub fn passes(&self) -> bool {
        self.value.is_some_and(|v| self.lo <= v && v <= self.hi)
    }
}

/// One CSV row. `passed` is redundant on purpose: it can be recomputed from
/// the check columns and the error column, which is what
/// [`TrialRecord::validate`] does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema: String,
    pub experiment: String,
    pub kind: String,
    pub grid_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub rows_used: Option<usize>,
    pub linf_error: Option<f64>,
    pub l2_error: Option<f64>,
    pub metric_sigma: Option<f64>,
    pub bound: Option<f64>,
    pub support_match: Option<bool>,
    pub check1_name: String,
    pub check1_value: Option<f64>,
    pub check1_lo: f64,
    pub check1_hi: f64,
    pub check2_name: String,
    pub check2_value: Option<f64>,
    pub check2_lo: f64,
    pub check2_hi: f64,
    pub passed: bool,
    pub error: String,
    pub wall_ms: Option<f64>,
}

impl TrialRecord {
    pub fn check1(&self) -> Check {
        Check {
            name: self.check1_name.clone(),
            value: self.check1_value,
            lo: self.check1_lo,
            hi: self.check1_hi,
        }
    }

    /// `None` when the experiment only has one check.
    pub fn check2(&self) -> Option<Check> {
        (!self.check2_name.is_empty()).then(|| Check {
            name: self.check2_name.clone(),
            value: self.check2_value,
            lo: self.check2_lo,
            hi: self.check2_hi,
        })
    }

    pub fn set_checks(&mut self, c1: Check, c2: Option<Check>) {
        self.check1_name = c1.name;
        self.check1_value = c1.value;
        self.check1_lo = c1.lo;
        self.check1_hi = c1.hi;
        if let Some(c2) = c2 {
            self.check2_name = c2.name;
            self.check2_value = c2.value;
            self.check2_lo = c2.lo;
            self.check2_hi = c2.hi;
        }
        self.passed = self.recompute_passed();
    }

    pub fn recompute_passed(&self) -> bool {
        self.error.is_empty() && self.check1().passes() && self.check2().is_none_or(|c| c.passes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != TRIAL_SCHEMA {
            return Err(Error::format(format!("unknown record schema `{}`", self.schema)));
        }
        if self.passed != self.recompute_passed() {
            return Err(Error::format(format!(
                "record {}/{}: pass flag disagrees with its checks",
                self.grid_index, self.trial
            )));
        }
        Ok(())
    }
}

pub fn write_records<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse and validate every row.
pub fn read_records<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let r: TrialRecord = row?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}
