//! Behavioral and review-content features for each (user, review) pair.
//!
//! Every row is the author's behavioral features followed by the features of
//! the review itself and of the reviewed product. Columns are grouped into six
//! scopes used for ablation. Feature names and order are pinned by
//! [`MANIFEST_VERSION`]; the only data-driven columns are the per-category
//! ratios, one per category present in the input (sorted by name).
//!
//! Conventions:
//! * entropies are in nats;
//! * a ratio whose denominator is zero is 0;
//! * the helpful ratio is `helpful / (helpful + unhelpful)`;
//! * time bins are calendar years for a user's history and calendar months
//!   for a product's comments.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{entropy_of_counts, Matrix};

/// Version of the feature definitions and their order.
pub const MANIFEST_VERSION: u32 = 1;

/// Days from 0001-01-01 to 1970-01-01.
const EPOCH_DAYS_FROM_CE: i64 = 719_163;

const BUNDLED_POSITIVE: &str = include_str!("../data/positive-words.txt");
const BUNDLED_NEGATIVE: &str = include_str!("../data/negative-words.txt");
const BUNDLED_NAMES: &str = include_str!("../data/english-names.txt");

/// One raw review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub product_id: String,
    pub rating: u8,
    pub helpful_votes: u64,
    pub unhelpful_votes: u64,
    /// Days since 1970-01-01.
    pub timestamp: i64,
    pub category: String,
    pub summary_text: String,
    pub review_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_memo: Option<String>,
}

impl ReviewRecord {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.rating) {
            return Err(Error::Argument(format!(
                "rating {} outside 1..=5",
                self.rating
            )));
        }
        if date_of(self.timestamp).is_none() {
            return Err(Error::Argument(format!(
                "timestamp {} is not a representable date",
                self.timestamp
            )));
        }
        Ok(())
    }

    pub fn date(&self) -> NaiveDate {
        date_of(self.timestamp).expect("validated timestamp")
    }
}

fn date_of(days: i64) -> Option<NaiveDate> {
    let ce = days.checked_add(EPOCH_DAYS_FROM_CE)?;
    NaiveDate::from_num_days_from_ce_opt(i32::try_from(ce).ok()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    History,
    Rating,
    Feedback,
    Time,
    Product,
    Review,
}

impl Scope {
    pub const ALL: [Scope; 6] = [
        Scope::History,
        Scope::Rating,
        Scope::Feedback,
        Scope::Time,
        Scope::Product,
        Scope::Review,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::History => "history",
            Scope::Rating => "rating",
            Scope::Feedback => "feedback",
            Scope::Time => "time",
            Scope::Product => "product",
            Scope::Review => "review",
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub scope: Scope,
    pub kind: FeatureKind,
}

/// Ordered feature values with their names and tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub specs: Vec<FeatureSpec>,
}

impl FeatureVector {
    fn push(&mut self, name: impl Into<String>, scope: Scope, kind: FeatureKind, value: f64) {
        debug_assert!(value.is_finite());
        self.values.push(value);
        self.specs.push(FeatureSpec {
            name: name.into(),
            scope,
            kind,
        });
    }

    fn cont(&mut self, name: impl Into<String>, scope: Scope, value: f64) {
        self.push(name, scope, FeatureKind::Continuous, value);
    }

    fn cat(&mut self, name: impl Into<String>, scope: Scope, value: f64) {
        self.push(name, scope, FeatureKind::Categorical, value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.values[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn extend(&mut self, other: FeatureVector) {
        self.values.extend(other.values);
        self.specs.extend(other.specs);
    }
}

/// `n × d` feature values plus per-column specs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub specs: Vec<FeatureSpec>,
    pub values: Matrix,
    pub manifest_version: u32,
}

impl FeatureMatrix {
    pub fn new(specs: Vec<FeatureSpec>, values: Matrix) -> Result<Self> {
        if specs.len() != values.cols() {
            return Err(Error::shape(
                "FeatureMatrix::new",
                format!("{} feature specs", specs.len()),
                format!("{} columns", values.cols()),
            ));
        }
        Ok(FeatureMatrix {
            specs,
            values,
            manifest_version: MANIFEST_VERSION,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_features(&self) -> usize {
        self.specs.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter_rows().map(|r| r[j]).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = self
            .values
            .iter_rows()
            .map(|r| cols.iter().map(|&j| r[j]).collect())
            .collect();
        let values = if rows.is_empty() {
            Matrix::zeros(0, cols.len())
        } else {
            Matrix::from_rows(&rows).expect("equal-length rows")
        };
        FeatureMatrix {
            specs: cols.iter().map(|&j| self.specs[j].clone()).collect(),
            values,
            manifest_version: self.manifest_version,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let data: Vec<f64> = rows.iter().flat_map(|&i| self.values.row(i).to_vec()).collect();
        FeatureMatrix {
            specs: self.specs.clone(),
            values: Matrix::from_vec(rows.len(), self.n_features(), data).expect("row lengths"),
            manifest_version: self.manifest_version,
        }
    }

    pub fn columns_in_scope(&self, scope: Scope) -> Vec<usize> {
        (0..self.specs.len())
            .filter(|&j| self.specs[j].scope == scope)
            .collect()
    }
}

/// Word lists used by the sentiment rule and the common-name test.
#[derive(Debug, Clone)]
pub struct Lexicon {
    positive: HashSet<String>,
    negative: HashSet<String>,
    names: HashSet<String>,
}

fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::bundled()
    }
}

impl Lexicon {
    pub fn bundled() -> Self {
        Lexicon {
            positive: parse_word_list(BUNDLED_POSITIVE),
            negative: parse_word_list(BUNDLED_NEGATIVE),
            names: parse_word_list(BUNDLED_NAMES),
        }
    }

    /// Replaces the name list with a newline-delimited one.
    pub fn with_names(mut self, text: &str) -> Self {
        self.names = parse_word_list(text);
        self
    }

    /// +1, 0 or −1: the sign of positive minus negative word hits.
    pub fn sentiment_score(&self, text: &str) -> i8 {
        let mut score = 0i64;
        for tok in tokens(text) {
            if self.positive.contains(&tok) {
                score += 1;
            } else if self.negative.contains(&tok) {
                score -= 1;
            }
        }
        score.signum() as i8
    }

    /// Whether the first word of `name` is in the name list.
    pub fn is_common_name(&self, name: &str) -> bool {
        tokens(name).next().is_some_and(|t| self.names.contains(&t))
    }
}

/// Sentiment with the bundled word lists.
pub fn sentiment_score(text: &str) -> i8 {
    thread_local! {
        static BUNDLED: Lexicon = Lexicon::bundled();
    }
    BUNDLED.with(|l| l.sentiment_score(text))
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\'').to_lowercase())
        .filter(|t| !t.is_empty())
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

struct Summary {
    sum: f64,
    mean: f64,
    median: f64,
    min: f64,
    max: f64,
}

fn summarize(values: &[u64]) -> Summary {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let sum: f64 = v.iter().sum();
    let median = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    Summary {
        sum,
        mean: ratio(sum, n as f64),
        median,
        min: v.first().copied().unwrap_or(0.0),
        max: v.last().copied().unwrap_or(0.0),
    }
}

fn month_index(d: NaiveDate) -> i64 {
    i64::from(d.year()) * 12 + i64::from(d.month0())
}

/// Behavioral features of one user, computed over all of their reviews.
///
/// `categories` fixes the category-ratio columns; categories of the user not
/// in the list are ignored.
pub fn extract_user_features(
    reviews: &[ReviewRecord],
    categories: &[String],
    lexicon: &Lexicon,
) -> Result<FeatureVector> {
    let first = reviews
        .first()
        .ok_or_else(|| Error::Argument("no reviews for user".into()))?;
    if let Some(other) = reviews.iter().find(|r| r.user_id != first.user_id) {
        return Err(Error::Argument(format!(
            "reviews of several users ({} and {})",
            first.user_id, other.user_id
        )));
    }
    for r in reviews {
        r.validate()?;
    }
    let n = reviews.len() as f64;
    let mut f = FeatureVector::default();

    // history
    let products: BTreeSet<&str> = reviews.iter().map(|r| r.product_id.as_str()).collect();
    f.cont("reviewed_products", Scope::History, products.len() as f64);
    let name = reviews
        .iter()
        .find_map(|r| r.user_name.as_deref())
        .unwrap_or(&first.user_id);
    f.cont("name_length", Scope::History, name.chars().count() as f64);
    f.cat(
        "uncommon_name",
        Scope::History,
        if lexicon.is_common_name(name) { 0.0 } else { 1.0 },
    );
    let memo = reviews.iter().find_map(|r| r.user_memo.as_deref());
    f.cont(
        "memo_length",
        Scope::History,
        memo.map_or(0.0, |m| word_count(m) as f64),
    );
    f.cat("has_memo", Scope::History, if memo.is_some() { 1.0 } else { 0.0 });
    for cat in categories {
        let c = reviews.iter().filter(|r| &r.category == cat).count() as f64;
        f.cont(format!("category_ratio:{cat}"), Scope::History, c / n);
    }

    // rating
    let mut counts = [0usize; 5];
    for r in reviews {
        counts[usize::from(r.rating) - 1] += 1;
    }
    let min = reviews.iter().map(|r| r.rating).min().expect("non-empty");
    let max = reviews.iter().map(|r| r.rating).max().expect("non-empty");
    f.cat("min_rating", Scope::Rating, f64::from(min));
    f.cat("max_rating", Scope::Rating, f64::from(max));
    for (i, &c) in counts.iter().enumerate() {
        f.cont(format!("score_ratio_{}", i + 1), Scope::Rating, c as f64 / n);
    }
    for (i, &c) in counts.iter().enumerate() {
        f.cont(format!("score_count_{}", i + 1), Scope::Rating, c as f64);
    }
    f.cont("positive_ratio", Scope::Rating, (counts[3] + counts[4]) as f64 / n);
    f.cont("negative_ratio", Scope::Rating, (counts[0] + counts[1]) as f64 / n);
    f.cont("rating_entropy", Scope::Rating, entropy_of_counts(&counts));
    let mean_rating = reviews.iter().map(|r| f64::from(r.rating)).sum::<f64>() / n;
    f.cont("mean_rating", Scope::Rating, mean_rating);

    // feedback
    let helpful: Vec<u64> = reviews.iter().map(|r| r.helpful_votes).collect();
    let unhelpful: Vec<u64> = reviews.iter().map(|r| r.unhelpful_votes).collect();
    let (h, u) = (summarize(&helpful), summarize(&unhelpful));
    f.cont("helpful_sum", Scope::Feedback, h.sum);
    f.cont("unhelpful_sum", Scope::Feedback, u.sum);
    f.cont("helpful_mean", Scope::Feedback, h.mean);
    f.cont("unhelpful_mean", Scope::Feedback, u.mean);
    f.cont("helpful_ratio", Scope::Feedback, ratio(h.sum, h.sum + u.sum));
    f.cont("helpful_median", Scope::Feedback, h.median);
    f.cont("helpful_min", Scope::Feedback, h.min);
    f.cont("helpful_max", Scope::Feedback, h.max);
    f.cont("unhelpful_median", Scope::Feedback, u.median);
    f.cont("unhelpful_min", Scope::Feedback, u.min);
    f.cont("unhelpful_max", Scope::Feedback, u.max);

    // time
    let first_day = reviews.iter().map(|r| r.timestamp).min().expect("non-empty");
    let last_day = reviews.iter().map(|r| r.timestamp).max().expect("non-empty");
    f.cont("day_gap", Scope::Time, (last_day - first_day) as f64);
    let mut per_year: BTreeMap<i32, usize> = BTreeMap::new();
    for r in reviews {
        *per_year.entry(r.date().year()).or_default() += 1;
    }
    let year_counts: Vec<usize> = per_year.values().copied().collect();
    f.cont("review_time_entropy", Scope::Time, entropy_of_counts(&year_counts));
    f.cat(
        "same_date",
        Scope::Time,
        if first_day == last_day { 1.0 } else { 0.0 },
    );
    let first_year = *per_year.keys().next().expect("non-empty");
    let last_year = *per_year.keys().next_back().expect("non-empty");
    let span_years = f64::from(last_year - first_year + 1);
    f.cont("active_ratio", Scope::Time, per_year.len() as f64 / span_years);

    Ok(f)
}

/// Features of one review and of the product it belongs to.
pub fn extract_review_features(
    review: &ReviewRecord,
    product_reviews: &[ReviewRecord],
    lexicon: &Lexicon,
) -> Result<FeatureVector> {
    if !product_reviews.contains(review) {
        return Err(Error::Argument(format!(
            "review by {} not found among the reviews of product {}",
            review.user_id, review.product_id
        )));
    }
    for r in product_reviews {
        r.validate()?;
    }
    let n = product_reviews.len() as f64;
    let mut f = FeatureVector::default();

    // product
    let mean = product_reviews.iter().map(|r| f64::from(r.rating)).sum::<f64>() / n;
    f.cont("product_mean_rating", Scope::Product, mean);
    f.cont("product_review_count", Scope::Product, n);
    let mut counts = [0usize; 5];
    for r in product_reviews {
        counts[usize::from(r.rating) - 1] += 1;
    }
    f.cont("product_score_entropy", Scope::Product, entropy_of_counts(&counts));
    let first_day = product_reviews.iter().map(|r| r.timestamp).min().expect("non-empty");
    let last_day = product_reviews.iter().map(|r| r.timestamp).max().expect("non-empty");
    let gap = (last_day - first_day) as f64;
    f.cont("product_comment_time_gap", Scope::Product, gap);
    let mut per_month: BTreeMap<i64, usize> = BTreeMap::new();
    for r in product_reviews {
        *per_month.entry(month_index(r.date())).or_default() += 1;
    }
    let month_counts: Vec<usize> = per_month.values().copied().collect();
    f.cont(
        "product_comment_time_entropy",
        Scope::Product,
        entropy_of_counts(&month_counts),
    );
    let first_day_count = product_reviews.iter().filter(|r| r.timestamp == first_day).count();
    f.cont("product_first_day_reviews", Scope::Product, first_day_count as f64);

    // the review itself
    f.cat("user_rating", Scope::Review, f64::from(review.rating));
    f.cont("user_helpful", Scope::Review, review.helpful_votes as f64);
    f.cont("user_unhelpful", Scope::Review, review.unhelpful_votes as f64);
    let since_first = (review.timestamp - first_day) as f64;
    f.cont("user_comment_time_gap", Scope::Review, since_first);
    f.cont("user_time_gap_ratio", Scope::Review, ratio(since_first, gap));
    let earlier = product_reviews.iter().filter(|r| r.timestamp < review.timestamp).count();
    let rank = (earlier + 1) as f64;
    f.cont("comment_rank", Scope::Review, rank);
    f.cont("comment_rank_ratio", Scope::Review, rank / n);
    f.cont("summary_length", Scope::Review, word_count(&review.summary_text) as f64);
    f.cont("review_text_length", Scope::Review, word_count(&review.review_text) as f64);
    f.cat(
        "summary_sentiment",
        Scope::Review,
        f64::from(lexicon.sentiment_score(&review.summary_text)),
    );
    f.cat(
        "review_sentiment",
        Scope::Review,
        f64::from(lexicon.sentiment_score(&review.review_text)),
    );
    Ok(f)
}

/// Sorted set of categories present in `records`.
pub fn categories_of(records: &[ReviewRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// One feature row per record, in input order.
pub fn extract_features(records: &[ReviewRecord], lexicon: &Lexicon) -> Result<FeatureMatrix> {
    let categories = categories_of(records);
    let mut by_user: BTreeMap<&str, Vec<ReviewRecord>> = BTreeMap::new();
    let mut by_product: BTreeMap<&str, Vec<ReviewRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        by_user.entry(&r.user_id).or_default().push(r.clone());
        by_product.entry(&r.product_id).or_default().push(r.clone());
    }
    let user_features = by_user
        .iter()
        .map(|(&u, rs)| Ok((u, extract_user_features(rs, &categories, lexicon)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut specs = None;
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let mut fv = user_features[r.user_id.as_str()].clone();
        fv.extend(extract_review_features(r, &by_product[r.product_id.as_str()], lexicon)?);
        if specs.is_none() {
            specs = Some(fv.specs);
        }
        rows.push(fv.values);
    }
    let specs = match specs {
        Some(s) => s,
        None => return Err(Error::Argument("no review records".into())),
    };
    FeatureMatrix::new(specs, Matrix::from_rows(&rows)?)
}
