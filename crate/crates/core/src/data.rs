//! Review ingestion, labeling, normalization, batching and model files.
//!
//! Reviews are read as JSON lines (one [`ReviewRecord`] per line) or from a
//! delimited export with a column map. Labeled feature sets live in a
//! directory holding `features.tsv`, `labels.tsv` and `manifest.json`.
//!
//! Model files are a small binary envelope around a JSON payload:
//!
//! ```text
//! magic "NADFMODL" | format version u32 LE | payload length u64 LE | payload | SHA-256
//! ```
//!
//! The digest covers everything before it. Floats are written with
//! round-trip precision so every tensor reloads bit-exactly.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::AutoencoderParams;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSpec, ReviewRecord, MANIFEST_VERSION};
use crate::forest::{ForestParams, TreeParams};
use crate::layers::DenseLayer;
use crate::model::Model;
use crate::numerics::{Matrix, SeededRng};
use crate::training::TrainConfig;

pub const MODEL_MAGIC: &[u8; 8] = b"NADFMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const HEADER_LEN: usize = 8 + 4 + 8;

/// Default number of reviews kept per user.
pub const DEFAULT_USER_CAP: usize = 20;

/// Users whose average spam score reaches this are labeled spammers.
pub const SPAM_THRESHOLD: f64 = 0.5;

const REVIEW_FIELDS: [&str; 11] = [
    "user_id",
    "product_id",
    "rating",
    "helpful_votes",
    "unhelpful_votes",
    "timestamp",
    "category",
    "summary_text",
    "review_text",
    "user_name",
    "user_memo",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    ZScore,
    MinMax,
    None,
}

/// Per-column statistics fitted on training rows and reused on test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub method: Normalization,
    /// `(mean, std)` for z-score, `(min, max)` for min-max, empty for none.
    pub columns: Vec<(f64, f64)>,
}

impl NormStats {
    pub fn fit(values: &Matrix, method: Normalization) -> Result<Self> {
        if values.rows() == 0 && method != Normalization::None {
            return Err(Error::Argument("cannot fit normalization on zero rows".into()));
        }
        let n = values.rows() as f64;
        let columns = match method {
            Normalization::None => Vec::new(),
            Normalization::ZScore => (0..values.cols())
                .map(|j| {
                    let mean = values.iter_rows().map(|r| r[j]).sum::<f64>() / n;
                    let var = values.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                })
                .collect(),
            Normalization::MinMax => (0..values.cols())
                .map(|j| {
                    values.iter_rows().map(|r| r[j]).fold(
                        (f64::INFINITY, f64::NEG_INFINITY),
                        |(lo, hi), v| (lo.min(v), hi.max(v)),
                    )
                })
                .collect(),
        };
        Ok(NormStats { method, columns })
    }

    pub fn n_columns(&self) -> Option<usize> {
        match self.method {
            Normalization::None => None,
            _ => Some(self.columns.len()),
        }
    }

    /// Applies the fitted transform. Constant columns map to zero.
    pub fn apply(&self, values: &Matrix) -> Result<Matrix> {
        if let Some(c) = self.n_columns() {
            if c != values.cols() {
                return Err(Error::shape(
                    "NormStats::apply",
                    format!("{c} fitted columns"),
                    format!("{} columns", values.cols()),
                ));
            }
        }
        let mut out = values.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (v, &(a, b)) in row.iter_mut().zip(&self.columns) {
                *v = match self.method {
                    Normalization::None => *v,
                    Normalization::ZScore if b > 0.0 => (*v - a) / b,
                    Normalization::MinMax if b > a => (*v - a) / (b - a),
                    _ => 0.0,
                };
            }
        }
        Ok(out)
    }
}

/// Fits statistics on `features` and returns the transformed copy.
pub fn normalize(features: &FeatureMatrix, method: Normalization) -> Result<(FeatureMatrix, NormStats)> {
    let stats = NormStats::fit(&features.values, method)?;
    let mut out = features.clone();
    out.values = stats.apply(&features.values)?;
    Ok((out, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub user_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    features: Vec<FeatureSpec>,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>, user_ids: Vec<String>) -> Result<Self> {
        if labels.len() != features.n_rows() || user_ids.len() != features.n_rows() {
            return Err(Error::shape(
                "LabeledDataset::new",
                format!("{} feature rows", features.n_rows()),
                format!("{} labels and {} user ids", labels.len(), user_ids.len()),
            ));
        }
        if let Some(y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Argument(format!("label {y} is not 0 or 1")));
        }
        Ok(LabeledDataset {
            features,
            labels,
            user_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            user_ids: rows.iter().map(|&i| self.user_ids[i].clone()).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_columns(cols),
            labels: self.labels.clone(),
            user_ids: self.user_ids.clone(),
        }
    }

    /// Writes `features.tsv`, `labels.tsv` and `manifest.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let path = dir.join("features.tsv");
        write_file(&path, |out| {
            write!(out, "user_id")?;
            for s in &self.features.specs {
                write!(out, "\t{}", s.name)?;
            }
            writeln!(out)?;
            for (u, row) in self.user_ids.iter().zip(self.features.values.iter_rows()) {
                write!(out, "{u}")?;
                for v in row {
                    write!(out, "\t{v}")?;
                }
                writeln!(out)?;
            }
            Ok(())
        })?;

        let path = dir.join("labels.tsv");
        write_file(&path, |out| {
            writeln!(out, "user_id\tlabel")?;
            for (u, y) in self.user_ids.iter().zip(&self.labels) {
                writeln!(out, "{u}\t{y}")?;
            }
            Ok(())
        })?;

        let manifest = Manifest {
            version: self.features.manifest_version,
            features: self.features.specs.clone(),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Version {
                what: "feature manifest",
                expected: MANIFEST_VERSION,
                found: manifest.version,
            });
        }
        let names: Vec<&str> = manifest.features.iter().map(|s| s.name.as_str()).collect();

        let path = dir.join("features.tsv");
        let mut user_ids = Vec::new();
        let mut data = Vec::new();
        for_each_line(&path, |line_no, line| {
            let mut cells = line.split('\t');
            let first = cells.next().unwrap_or_default();
            if line_no == 1 {
                let header: Vec<&str> = cells.collect();
                if first != "user_id" || header != names {
                    return Err("header does not match manifest".to_string());
                }
                return Ok(());
            }
            user_ids.push(first.to_string());
            let before = data.len();
            for c in cells {
                data.push(c.parse::<f64>().map_err(|e| format!("bad value {c:?}: {e}"))?);
            }
            if data.len() - before != names.len() {
                return Err(format!("expected {} values, found {}", names.len(), data.len() - before));
            }
            Ok(())
        })?;

        let path = dir.join("labels.tsv");
        let mut labels = Vec::new();
        let mut label_users = Vec::new();
        for_each_line(&path, |line_no, line| {
            if line_no == 1 {
                return Ok(());
            }
            let (u, y) = line.split_once('\t').ok_or("expected user_id<TAB>label")?;
            let y: usize = y.trim().parse().map_err(|e| format!("bad label {y:?}: {e}"))?;
            label_users.push(u.to_string());
            labels.push(y);
            Ok(())
        })?;
        if label_users != user_ids {
            return Err(Error::Argument(format!(
                "{}: user ids do not match features.tsv",
                path.display()
            )));
        }

        let values = Matrix::from_vec(user_ids.len(), names.len(), data)?;
        let features = FeatureMatrix::new(manifest.features, values)?;
        LabeledDataset::new(features, labels, user_ids)
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Calls `f` with every non-empty, non-comment line and its 1-based number.
fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> std::result::Result<(), String>,
) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        f(i + 1, trimmed).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
    }
    Ok(())
}

/// Reads JSON-lines reviews. Unknown keys are logged and ignored.
pub fn load_reviews(path: &Path) -> Result<Vec<ReviewRecord>> {
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if let Some(obj) = value.as_object() {
            for key in obj.keys().filter(|k| !REVIEW_FIELDS.contains(&k.as_str())) {
                log::warn!("{}:{line_no}: ignoring unknown field {key:?}", path.display());
            }
        }
        let record: ReviewRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
        record.validate().map_err(|e| e.to_string())?;
        out.push(record);
        Ok(())
    })?;
    Ok(out)
}

pub fn save_reviews(path: &Path, records: &[ReviewRecord]) -> Result<()> {
    write_file(path, |out| {
        for r in records {
            serde_json::to_writer(&mut *out, r)?;
            writeln!(out)?;
        }
        Ok(())
    })
}

/// Reads reviews from a delimited file with a header row. `columns` maps
/// record field names to header names; unmapped fields use their own name.
/// `user_name` and `user_memo` may be absent.
pub fn load_reviews_delimited(
    path: &Path,
    delimiter: u8,
    columns: &HashMap<String, String>,
) -> Result<Vec<ReviewRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let mut index = HashMap::new();
    for field in REVIEW_FIELDS {
        let header = columns.get(field).map_or(field, String::as_str);
        if let Some(pos) = headers.iter().position(|h| h == header) {
            index.insert(field, pos);
        } else if !matches!(field, "user_name" | "user_memo") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column {header:?} for field {field}"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_error(path, line, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let text = |field: &str| -> Option<String> {
            index.get(field).and_then(|&p| row.get(p)).map(str::to_string)
        };
        let number = |field: &str| -> Result<i64> {
            let raw = text(field).unwrap_or_default();
            raw.trim()
                .parse::<i64>()
                .map_err(|e| parse_err(format!("{field} {raw:?}: {e}")))
        };
        let unsigned = |field: &str| -> Result<u64> {
            u64::try_from(number(field)?).map_err(|_| parse_err(format!("{field} must be non-negative")))
        };
        let rating = number("rating")?;
        let record = ReviewRecord {
            user_id: text("user_id").unwrap_or_default(),
            product_id: text("product_id").unwrap_or_default(),
            rating: u8::try_from(rating).map_err(|_| parse_err(format!("rating {rating} outside 1..=5")))?,
            helpful_votes: unsigned("helpful_votes")?,
            unhelpful_votes: unsigned("unhelpful_votes")?,
            timestamp: number("timestamp")?,
            category: text("category").unwrap_or_default(),
            summary_text: text("summary_text").unwrap_or_default(),
            review_text: text("review_text").unwrap_or_default(),
            user_name: text("user_name").filter(|s| !s.is_empty()),
            user_memo: text("user_memo").filter(|s| !s.is_empty()),
        };
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

fn csv_error(path: &Path, line: usize, e: csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Reads `user_id, average_score` lines separated by a tab or a comma. A
/// first line whose score does not parse is treated as a header.
pub fn load_spam_scores(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    let mut first = true;
    for_each_line(path, |_, line| {
        let is_first = std::mem::replace(&mut first, false);
        let (user, score) = line
            .split_once('\t')
            .or_else(|| line.split_once(','))
            .ok_or("expected user_id and score separated by a tab or comma")?;
        let score: f64 = match score.trim().parse() {
            Ok(s) => s,
            Err(_) if is_first => return Ok(()),
            Err(e) => return Err(format!("bad score {score:?}: {e}")),
        };
        if !(0.0..=1.0).contains(&score) {
            return Err(format!("score {score} outside [0, 1]"));
        }
        scores.insert(user.trim().to_string(), score);
        Ok(())
    })?;
    Ok(scores)
}

/// Records kept after capping, with one label per record.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecords {
    pub records: Vec<ReviewRecord>,
    pub labels: Vec<usize>,
}

pub fn label_of(score: f64) -> usize {
    usize::from(score >= SPAM_THRESHOLD)
}

/// Labels every review by its author's score and keeps at most `cap` reviews
/// per user, sampled uniformly with `seed`. Kept records stay in input order.
pub fn label_and_cap_users(
    records: &[ReviewRecord],
    scores: &BTreeMap<String, f64>,
    cap: usize,
    seed: u64,
) -> Result<LabeledRecords> {
    if cap == 0 {
        return Err(Error::Config("per-user review cap must be at least 1".into()));
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(r.user_id.as_str()).or_default().push(i);
    }
    let missing: Vec<String> = by_user
        .keys()
        .filter(|u| !scores.contains_key(**u))
        .map(|u| u.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }

    let mut rng = SeededRng::new(seed);
    let mut keep = vec![false; records.len()];
    for rows in by_user.values() {
        if rows.len() <= cap {
            rows.iter().for_each(|&i| keep[i] = true);
        } else {
            for j in rand::seq::index::sample(rng.inner(), rows.len(), cap) {
                keep[rows[j]] = true;
            }
        }
    }
    let (records, labels) = records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| (r.clone(), label_of(scores[&r.user_id])))
        .unzip();
    Ok(LabeledRecords { records, labels })
}

/// Row indices of a seeded train/test split, with the training rows cut
/// into consecutive batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub batches: Vec<Vec<usize>>,
    pub test: Vec<usize>,
}

pub fn split_shuffle_batch(n_rows: usize, train_count: usize, batch_size: usize, seed: u64) -> Result<Split> {
    if train_count > n_rows {
        return Err(Error::Config(format!(
            "train count {train_count} exceeds {n_rows} rows"
        )));
    }
    if batch_size == 0 || batch_size > train_count {
        return Err(Error::Config(format!(
            "batch size {batch_size} must be in 1..={train_count}"
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(SeededRng::new(seed).inner());
    let test = order.split_off(train_count);
    let batches = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(Split {
        train: order,
        batches,
        test,
    })
}

/// Everything needed to reuse a trained model on new feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub config: TrainConfig,
    pub manifest_version: u32,
    pub feature_names: Vec<String>,
    pub normalization: NormStats,
    pub model: Model,
}

impl ModelFile {
    pub fn new(config: TrainConfig, feature_names: Vec<String>, normalization: NormStats, model: Model) -> Result<Self> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            config,
            manifest_version: MANIFEST_VERSION,
            feature_names,
            normalization,
            model,
        };
        file.validate()?;
        Ok(file)
    }

    fn validate(&self) -> Result<()> {
        let n = self.model.n_features();
        if self.feature_names.len() != n {
            return Err(Error::shape(
                "ModelFile",
                format!("{} feature names", self.feature_names.len()),
                format!("{n} model inputs"),
            ));
        }
        if self.normalization.n_columns().is_some_and(|c| c != n) {
            return Err(Error::shape(
                "ModelFile",
                format!("{} normalization columns", self.normalization.columns.len()),
                format!("{n} model inputs"),
            ));
        }
        Ok(())
    }

    /// Checks that a feature matrix was built with the same manifest and
    /// columns as the training data.
    pub fn check_features(&self, features: &FeatureMatrix) -> Result<()> {
        if features.manifest_version != self.manifest_version {
            return Err(Error::Version {
                what: "feature manifest",
                expected: self.manifest_version,
                found: features.manifest_version,
            });
        }
        if features.names() != self.feature_names {
            return Err(Error::Argument("feature columns differ from the model's training features".into()));
        }
        Ok(())
    }
}

fn checked_matrix(m: &Matrix) -> Result<Matrix> {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().to_vec())
}

fn checked_layers(layers: &[DenseLayer]) -> Result<Vec<DenseLayer>> {
    layers
        .iter()
        .map(|l| DenseLayer::new(checked_matrix(&l.weights)?, l.bias.clone()))
        .collect()
}

/// Rebuilds a deserialized model through the validating constructors.
fn checked_model(m: &Model) -> Result<Model> {
    let ae = AutoencoderParams::new(
        checked_layers(&m.autoencoder.encoder)?,
        checked_layers(&m.autoencoder.decoder)?,
    )?;
    let trees = m
        .forest
        .trees
        .iter()
        .map(|t| TreeParams::new(checked_matrix(&t.routing)?, checked_matrix(&t.leaf_logits)?))
        .collect::<Result<Vec<_>>>()?;
    Model::new(ae, ForestParams::new(checked_layers(&m.forest.fc_layers)?, trees)?)
}

pub fn encode_model(file: &ModelFile) -> Vec<u8> {
    let payload = serde_json::to_vec(file).expect("model file serializes");
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&file.format_version.to_le_bytes());
    bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&payload);
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(digest.as_slice());
    bytes
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::Integrity(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(Error::Integrity("not a model file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let declared = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    if declared != (body.len() - HEADER_LEN) as u64 {
        return Err(Error::Integrity(format!(
            "payload length {declared} does not match file size"
        )));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            what: "model file",
            expected: MODEL_FORMAT_VERSION,
            found: version,
        });
    }
    let file: ModelFile = serde_json::from_slice(&body[HEADER_LEN..])
        .map_err(|e| Error::Integrity(format!("payload: {e}")))?;
    if file.format_version != version {
        return Err(Error::Integrity("header and payload versions differ".into()));
    }
    let model = checked_model(&file.model)?;
    let file = ModelFile { model, ..file };
    file.validate()?;
    Ok(file)
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    fs::write(path, encode_model(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
