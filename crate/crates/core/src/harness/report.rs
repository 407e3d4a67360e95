use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::record::TrialRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub experiment: String,
    pub kind: String,
    pub grid_index: usize,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub trials: usize,
    pub passed: usize,
    /// Trials that ended in an error instead of a measurement.
    pub errored: usize,
    pub pass_rate: f64,
    pub check1_name: String,
    pub check1_passed: usize,
    pub median_check1: Option<f64>,
    pub check2_name: String,
    pub check2_passed: usize,
    pub median_check2: Option<f64>,
    pub median_linf_error: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Group by experiment and grid point. The output order depends only on the
/// record contents, never on the order rows arrive in.
pub fn summarize(records: &[TrialRecord]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.experiment.clone(), r.kind.clone(), r.grid_index))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((experiment, kind, grid_index), mut rows)| {
            rows.sort_by_key(|r| r.trial);
            let first = rows[0];
            let passed = rows.iter().filter(|r| r.passed).count();
            let values = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Vec<f64> {
                rows.iter().filter_map(|r| f(r)).collect()
            };
            GroupSummary {
                experiment,
                kind,
                grid_index,
                n: first.n,
                d: first.d,
                k: first.k,
                trials: rows.len(),
                passed,
                errored: rows.iter().filter(|r| !r.error.is_empty()).count(),
                pass_rate: passed as f64 / rows.len() as f64,
                check1_name: first.check1_name.clone(),
                check1_passed: rows.iter().filter(|r| r.check1().passes()).count(),
                median_check1: median(&values(&|r| r.check1_value)),
                check2_name: first.check2_name.clone(),
                check2_passed: rows.iter().filter(|r| r.check2().is_some_and(|c| c.passes())).count(),
                median_check2: median(&values(&|r| r.check2_value)),
                median_linf_error: median(&values(&|r| r.linf_error)),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4e}"))
}

pub fn render_table(groups: &[GroupSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>4} {:>7} {:>6} {:>4} {:>7} {:>7} {:>9} {:>12} {:>12} {:>12}",
        "experiment", "grid", "n", "d", "k", "trials", "passed", "rate", "med_check1", "med_check2", "med_linf"
    );
    for g in groups {
        let _ = writeln!(
            s,
            "{:<20} {:>4} {:>7} {:>6} {:>4} {:>7} {:>7} {:>9.4} {:>12} {:>12} {:>12}",
            g.experiment,
            g.grid_index,
            g.n,
            g.d,
            g.k,
            g.trials,
            g.passed,
            g.pass_rate,
            opt(g.median_check1),
            opt(g.median_check2),
            opt(g.median_linf_error)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::{Check, TrialRecord, TRIAL_SCHEMA};

    fn rec(grid: usize, trial: usize, v: f64) -> TrialRecord {
        let mut r = TrialRecord {
            schema: TRIAL_SCHEMA.into(),
            experiment: "x".into(),
            kind: "k".into(),
            grid_index: grid,
            trial,
            seed: 0,
            n: 1,
            d: 1,
            k: 1,
            rows_used: None,
            linf_error: Some(v),
            l2_error: None,
            metric_sigma: None,
            bound: None,
            support_match: None,
            check1_name: String::new(),
            check1_value: None,
            check1_lo: 0.0,
            check1_hi: 0.0,
            check2_name: String::new(),
            check2_value: None,
            check2_lo: 0.0,
            check2_hi: 0.0,
            passed: false,
            error: String::new(),
            wall_ms: None,
        };
        r.set_checks(Check::new("c", v, 0.0, 1.0), None);
        r
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn summary_is_order_independent() {
        let rows = vec![rec(1, 0, 0.5), rec(0, 1, 2.0), rec(0, 0, 0.25), rec(1, 1, 0.75)];
        let mut rev = rows.clone();
        rev.reverse();
        let a = summarize(&rows);
        assert_eq!(a, summarize(&rev));
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].trials, a[0].passed), (2, 1));
        assert_eq!(a[0].median_check1, Some(1.125));
        assert_eq!(a[1].pass_rate, 1.0);
        assert!(render_table(&a).lines().count() == 3);
    }
}
