//! Confusion counts and accuracy / precision / recall / F1.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub counts: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a metric had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

/// Counts predictions against the truth, with `positive` as the positive
/// class.
pub fn confusion(predicted: &[usize], actual: &[usize], positive: usize) -> Result<Confusion> {
    if predicted.len() != actual.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p == positive, a == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn safe_ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(counts: Confusion) -> Result<EvalMetrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Argument("metrics of zero samples".into()));
    }
    let Confusion { tp, fp, tn, fn_ } = counts;
    let (precision, precision_undefined) = safe_ratio(tp, tp + fp);
    let (recall, recall_undefined) = safe_ratio(tp, tp + fn_);
    let (f1, f1_undefined) = safe_ratio(2 * tp, 2 * tp + fp + fn_);
    Ok(EvalMetrics {
        counts,
        accuracy: (tp + tn) as f64 / total as f64,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

/// Percentage rounded to two decimals, e.g. `95.85%`.
pub fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

pub fn write_metrics_report<W: Write>(mut out: W, m: &EvalMetrics) -> std::io::Result<()> {
    let c = m.counts;
    writeln!(out, "tp\t{}", c.tp)?;
    writeln!(out, "fp\t{}", c.fp)?;
    writeln!(out, "tn\t{}", c.tn)?;
    writeln!(out, "fn\t{}", c.fn_)?;
    let flag = |undefined: bool| if undefined { "\tundefined" } else { "" };
    writeln!(out, "accuracy\t{}", percent(m.accuracy))?;
    writeln!(out, "precision\t{}{}", percent(m.precision), flag(m.precision_undefined))?;
    writeln!(out, "recall\t{}{}", percent(m.recall), flag(m.recall_undefined))?;
    writeln!(out, "f1\t{}{}", percent(m.f1), flag(m.f1_undefined))?;
    Ok(())
}
