//! Nonparametric screening of features against the spammer label.
//!
//! Continuous features use the Wilcoxon rank-sum (Mann–Whitney) test between
//! spammers (label 1, group `a`) and non-spammers (label 0, group `b`), or
//! optionally the signed-rank test on trimmed pairs. Categorical features use
//! Pearson's chi-squared test of independence on the value × label table.
//!
//! Exact null distributions are used for small samples (at most
//! [`EXACT_LIMIT`] observations); above that, a tie-corrected normal
//! approximation with continuity correction. Ties get mid-ranks.
//! `p_less` is the p-value for "group a / the differences tend to be
//! smaller", `p_greater` the reverse.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};

/// Largest total sample size handled with an exact distribution.
pub const EXACT_LIMIT: usize = 12;

/// Smallest p-value printed in reports.
pub const REPORT_P_FLOOR: f64 = 2.2e-16;

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    RankSumExact,
    RankSumNormal,
    SignedRankExact,
    SignedRankNormal,
    ChiSquared,
    Degenerate,
}

impl TestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::RankSumExact => "rank-sum-exact",
            TestMethod::RankSumNormal => "rank-sum-normal",
            TestMethod::SignedRankExact => "signed-rank-exact",
            TestMethod::SignedRankNormal => "signed-rank-normal",
            TestMethod::ChiSquared => "chi-squared",
            TestMethod::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    TwoSided,
    Less,
    Greater,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub feature_name: String,
    pub method: TestMethod,
    pub statistic: f64,
    /// Degrees of freedom of a chi-squared test.
    pub df: Option<usize>,
    pub p_two_sided: f64,
    /// One-sided p-values; `None` for chi-squared tests.
    pub p_less: Option<f64>,
    pub p_greater: Option<f64>,
    pub significant_at_05: bool,
    pub note: Option<String>,
}

impl TestResult {
    fn new(method: TestMethod, statistic: f64, p_less: f64, p_greater: f64, p_two: f64) -> Self {
        let clamp = |p: f64| p.clamp(0.0, 1.0);
        let p_two = clamp(p_two);
        TestResult {
            feature_name: String::new(),
            method,
            statistic,
            df: None,
            p_two_sided: p_two,
            p_less: Some(clamp(p_less)),
            p_greater: Some(clamp(p_greater)),
            significant_at_05: p_two < SIGNIFICANCE,
            note: None,
        }
    }

    fn degenerate(note: impl Into<String>) -> Self {
        TestResult {
            note: Some(note.into()),
            ..TestResult::new(TestMethod::Degenerate, 0.0, 1.0, 1.0, 1.0)
        }
    }

    /// p-value for the requested alternative. Chi-squared tests only have the
    /// two-sided value.
    pub fn p(&self, alternative: Alternative) -> Option<f64> {
        match alternative {
            Alternative::TwoSided => Some(self.p_two_sided),
            Alternative::Less => self.p_less,
            Alternative::Greater => self.p_greater,
        }
    }

    fn named(mut self, name: &str) -> Self {
        self.feature_name = name.to_string();
        self
    }
}

/// Mid-ranks (1-based) doubled so that tied ranks stay integral.
fn doubled_midranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; n];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[idx[end]].total_cmp(&values[idx[start]]) == Ordering::Equal {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end; their mean doubled
        let doubled = (start + 1 + end) as u64;
        for &i in &idx[start..end] {
            ranks[i] = doubled;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Normal-approximation p-values for a statistic with mean `mu` and standard
/// deviation `sigma`, with a ±0.5 continuity correction.
fn normal_p_values(stat: f64, mu: f64, sigma: f64) -> (f64, f64, f64) {
    if sigma <= 0.0 {
        return (1.0, 1.0, 1.0);
    }
    let n = standard_normal();
    let p_less = n.cdf((stat - mu + 0.5) / sigma);
    let p_greater = n.sf((stat - mu - 0.5) / sigma);
    let p_two = (2.0 * (p_less.min(p_greater))).min(1.0);
    (p_less, p_greater, p_two)
}

/// Counts of sums over all `choose`-subsets of `items`, indexed by sum.
fn subset_sum_counts(items: &[u64], choose: usize) -> Vec<u128> {
    let total: u64 = items.iter().sum();
    let width = total as usize + 1;
    // ways[k][s]: subsets of size k with sum s
    let mut ways = vec![vec![0u128; width]; choose + 1];
    ways[0][0] = 1;
    for &v in items {
        for k in (1..=choose).rev() {
            for s in (v as usize..width).rev() {
                let add = ways[k - 1][s - v as usize];
                if add != 0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    ways.swap_remove(choose)
}

/// Counts of sums over all subsets of `items` (every sign pattern).
fn all_subset_sum_counts(items: &[u64]) -> Vec<u128> {
    let total: u64 = items.iter().sum();
    let mut ways = vec![0u128; total as usize + 1];
    ways[0] = 1;
    for &v in items {
        for s in (v as usize..ways.len()).rev() {
            ways[s] += ways[s - v as usize];
        }
    }
    ways
}

fn tail_p_values(counts: &[u128], observed: usize) -> (f64, f64, f64) {
    let total: u128 = counts.iter().sum();
    let below: u128 = counts[..=observed].iter().sum();
    let above: u128 = counts[observed..].iter().sum();
    let p_less = below as f64 / total as f64;
    let p_greater = above as f64 / total as f64;
    (p_less, p_greater, (2.0 * p_less.min(p_greater)).min(1.0))
}

/// Wilcoxon rank-sum test. The statistic is the rank sum of `group_a`.
pub fn rank_sum_test(group_a: &[f64], group_b: &[f64]) -> Result<TestResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Argument("rank-sum test needs two non-empty groups".into()));
    }
    if group_a.iter().chain(group_b).any(|v| !v.is_finite()) {
        return Err(Error::Argument("rank-sum test needs finite values".into()));
    }
    let pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let (na, nb) = (group_a.len(), group_b.len());
    let n = na + nb;
    let doubled_sum: u64 = ranks[..na].iter().sum();
    let w = doubled_sum as f64 / 2.0;

    if n <= EXACT_LIMIT {
        let counts = subset_sum_counts(&ranks, na);
        let (pl, pg, p2) = tail_p_values(&counts, doubled_sum as usize);
        return Ok(TestResult::new(TestMethod::RankSumExact, w, pl, pg, p2));
    }
    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let mu = naf * (nf + 1.0) / 2.0;
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term(&ties) / (nf * (nf - 1.0)));
    let (pl, pg, p2) = normal_p_values(w, mu, var.max(0.0).sqrt());
    Ok(TestResult::new(TestMethod::RankSumNormal, w, pl, pg, p2))
}

/// Wilcoxon signed-rank test on paired differences. Zero differences are
/// dropped; the statistic is the rank sum of the positive differences.
pub fn signed_rank_test(paired_diffs: &[f64]) -> Result<TestResult> {
    if paired_diffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("signed-rank test needs finite values".into()));
    }
    let nonzero: Vec<f64> = paired_diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_midranks(&abs);
    let doubled_pos: u64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, &d)| d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let w = doubled_pos as f64 / 2.0;
    let n = nonzero.len();

    if n <= EXACT_LIMIT {
        let counts = all_subset_sum_counts(&ranks);
        let (pl, pg, p2) = tail_p_values(&counts, doubled_pos as usize);
        return Ok(TestResult::new(TestMethod::SignedRankExact, w, pl, pg, p2));
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
    let (pl, pg, p2) = normal_p_values(w, mu, var.max(0.0).sqrt());
    Ok(TestResult::new(TestMethod::SignedRankNormal, w, pl, pg, p2))
}

/// Pearson chi-squared test of independence. Rows or columns with a zero
/// marginal are dropped with a warning.
pub fn chi_squared_test(table: &[Vec<u64>]) -> Result<TestResult> {
    let cols = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::Argument("contingency table rows differ in length".into()));
    }
    let keep_rows: Vec<usize> = (0..table.len())
        .filter(|&i| table[i].iter().sum::<u64>() > 0)
        .collect();
    let keep_cols: Vec<usize> = (0..cols)
        .filter(|&j| table.iter().map(|r| r[j]).sum::<u64>() > 0)
        .collect();
    if keep_rows.len() < table.len() || keep_cols.len() < cols {
        log::warn!(
            "chi-squared: dropped {} empty rows and {} empty columns",
            table.len() - keep_rows.len(),
            cols - keep_cols.len()
        );
    }
    if keep_rows.len() < 2 || keep_cols.len() < 2 {
        return Err(Error::Degenerate(format!(
            "contingency table reduces to {}x{}",
            keep_rows.len(),
            keep_cols.len()
        )));
    }
    let obs: Vec<Vec<f64>> = keep_rows
        .iter()
        .map(|&i| keep_cols.iter().map(|&j| table[i][j] as f64).collect())
        .collect();
    let row_sums: Vec<f64> = obs.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..keep_cols.len())
        .map(|j| obs.iter().map(|r| r[j]).sum())
        .collect();
    let total: f64 = row_sums.iter().sum();
    let mut stat = 0.0;
    for (r, rs) in obs.iter().zip(&row_sums) {
        for (o, cs) in r.iter().zip(&col_sums) {
            let e = rs * cs / total;
            stat += (o - e) * (o - e) / e;
        }
    }
    let df = (keep_rows.len() - 1) * (keep_cols.len() - 1);
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::Argument(format!("chi-squared: {e}")))?;
    let p = dist.sf(stat).clamp(0.0, 1.0);
    Ok(TestResult {
        feature_name: String::new(),
        method: TestMethod::ChiSquared,
        statistic: stat,
        df: Some(df),
        p_two_sided: p,
        p_less: None,
        p_greater: None,
        significant_at_05: p < SIGNIFICANCE,
        note: None,
    })
}

/// How continuous features are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContinuousTest {
    /// Independent groups (default).
    #[default]
    RankSum,
    /// Signed-rank on `spammer[i] − non_spammer[i]` for the first
    /// `min(n_a, n_b)` rows of each group.
    SignedRankTrimmed,
}

/// One result per feature, in feature order.
pub fn screen_features(
    features: &FeatureMatrix,
    labels: &[usize],
    mode: ContinuousTest,
) -> Result<Vec<TestResult>> {
    if labels.len() != features.n_rows() {
        return Err(Error::shape(
            "screen_features",
            format!("{} rows", features.n_rows()),
            format!("{} labels", labels.len()),
        ));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Argument("screening needs binary labels".into()));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::Argument("screening needs both classes present".into()));
    }
    (0..features.n_features())
        .map(|j| {
            let spec = &features.specs[j];
            let col = features.column(j);
            screen_column(&col, labels, spec.kind, mode).map(|r| r.named(&spec.name))
        })
        .collect()
}

fn screen_column(
    col: &[f64],
    labels: &[usize],
    kind: FeatureKind,
    mode: ContinuousTest,
) -> Result<TestResult> {
    if col.iter().all(|&v| v == col[0]) {
        return Ok(TestResult::degenerate("constant feature"));
    }
    match kind {
        FeatureKind::Continuous => {
            let a: Vec<f64> = col.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(&v, _)| v).collect();
            let b: Vec<f64> = col.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(&v, _)| v).collect();
            match mode {
                ContinuousTest::RankSum => rank_sum_test(&a, &b),
                ContinuousTest::SignedRankTrimmed => {
                    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                    match signed_rank_test(&diffs) {
                        Err(Error::Degenerate(msg)) => Ok(TestResult::degenerate(msg)),
                        other => other,
                    }
                }
            }
        }
        FeatureKind::Categorical => {
            let mut levels: Vec<f64> = col.to_vec();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let mut table = vec![vec![0u64; 2]; levels.len()];
            for (&v, &y) in col.iter().zip(labels) {
                let i = levels.partition_point(|&l| l < v);
                table[i][y] += 1;
            }
            match chi_squared_test(&table) {
                Err(Error::Degenerate(msg)) => Ok(TestResult::degenerate(msg)),
                other => other,
            }
        }
    }
}

/// Formats a p-value the way the report tables do: `1`, four decimals, or
/// `2.8e-05` style below 1e-4, floored at [`REPORT_P_FLOOR`].
pub fn format_p(p: f64) -> String {
    let p = p.max(REPORT_P_FLOOR);
    if p >= 1.0 {
        "1".into()
    } else if p >= 1e-4 {
        format!("{p:.4}")
    } else {
        let s = format!("{p:.1e}");
        match s.split_once('e') {
            Some((m, e)) => {
                let exp: i32 = e.parse().expect("exponent");
                format!("{m}e-{:02}", -exp)
            }
            None => s,
        }
    }
}

/// Tab-separated screening report, one row per feature.
pub fn write_screening_report<W: Write>(
    mut out: W,
    features: &FeatureMatrix,
    results: &[TestResult],
) -> std::io::Result<()> {
    writeln!(
        out,
        "feature\tscope\tkind\ttest\tstatistic\tdf\tp_two_sided\tp_less\tp_greater\tsignificant\tnote"
    )?;
    for (spec, r) in features.specs.iter().zip(results) {
        let opt = |p: Option<f64>| p.map_or_else(|| "-".to_string(), format_p);
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.feature_name,
            spec.scope,
            match spec.kind {
                FeatureKind::Continuous => "continuous",
                FeatureKind::Categorical => "categorical",
            },
            r.method.as_str(),
            r.statistic,
            r.df.map_or_else(|| "-".to_string(), |d| d.to_string()),
            format_p(r.p_two_sided),
            opt(r.p_less),
            opt(r.p_greater),
            if r.significant_at_05 { "yes" } else { "no" },
            r.note.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

/// Per-class density histogram of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Densities per bin, indexed by class.
    pub density: [Vec<f64>; 2],
}

pub fn histogram(values: &[f64], labels: &[usize], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    if values.is_empty() || values.len() != labels.len() {
        return Err(Error::Argument("histogram needs matching non-empty values and labels".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = [vec![0usize; bins], vec![0usize; bins]];
    for (&v, &y) in values.iter().zip(labels) {
        if y > 1 {
            return Err(Error::Argument("histogram needs binary labels".into()));
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[y][b] += 1;
    }
    let density = counts.map(|c| {
        let total: usize = c.iter().sum();
        c.iter()
            .map(|&k| if total == 0 { 0.0 } else { k as f64 / (total as f64 * width) })
            .collect()
    });
    Ok(Histogram { edges, density })
}

pub fn write_histogram_csv<W: Write>(mut out: W, h: &Histogram) -> std::io::Result<()> {
    writeln!(out, "bin_start,bin_end,density_non_spammer,density_spammer")?;
    for i in 0..h.density[0].len() {
        writeln!(
            out,
            "{},{},{},{}",
            h.edges[i],
            h.edges[i + 1],
            h.density[0][i],
            h.density[1][i]
        )?;
    }
    Ok(())
}
