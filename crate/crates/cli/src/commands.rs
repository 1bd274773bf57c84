use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fraudforest::data::{
    label_and_cap_users, load_model, load_reviews, load_reviews_delimited, load_spam_scores, save_model,
    split_shuffle_batch, LabeledDataset, ModelFile, NormStats,
};
use fraudforest::features::{extract_features, Lexicon, Scope};
use fraudforest::metrics::{compute_metrics, confusion, percent, write_metrics_report, EvalMetrics};
use fraudforest::stats::{histogram, screen_features, write_histogram_csv, write_screening_report, ContinuousTest};
use fraudforest::training::{train as fit, write_training_log, TrainConfig};

use crate::{Common, ReviewFormat, Subset};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fraudforest::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Config file (if any) with the command-line seed applied.
fn resolve_config(common: &Common) -> Result<TrainConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn create_out(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
    Ok(&common.out)
}

fn write_text(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

/// Writes `config.toml`: the command and its options as comments, followed
/// by the training settings in a form `--config` accepts.
fn echo_config(dir: &Path, command: &str, options: &[(&str, String)], config: &TrainConfig) -> Result<()> {
    let body = toml::to_string(config).map_err(|e| CliError::Usage(format!("config echo: {e}")))?;
    write_text(&dir.join("config.toml"), |out| {
        writeln!(out, "# fraudforest {command}")?;
        for (k, v) in options {
            writeln!(out, "# {k} = {v}")?;
        }
        write!(out, "{body}")
    })
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

pub fn extract(
    common: &Common,
    reviews: &Path,
    scores: &Path,
    format: ReviewFormat,
    columns: &[String],
    cap: usize,
) -> Result<()> {
    let config = resolve_config(common)?;
    let records = match format {
        ReviewFormat::Jsonl => load_reviews(reviews)?,
        ReviewFormat::Csv | ReviewFormat::Tsv => {
            let mut map = HashMap::new();
            for c in columns {
                let (field, header) = c
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--column expects FIELD=HEADER, got {c:?}")))?;
                map.insert(field.to_string(), header.to_string());
            }
            let delimiter = if format == ReviewFormat::Csv { b',' } else { b'\t' };
            load_reviews_delimited(reviews, delimiter, &map)?
        }
    };
    let scores_map = load_spam_scores(scores)?;
    let labeled = label_and_cap_users(&records, &scores_map, cap, config.seed)?;
    if labeled.records.is_empty() {
        return Err(CliError::Usage(format!("{}: no reviews", reviews.display())));
    }
    let features = extract_features(&labeled.records, &Lexicon::bundled())?;
    let user_ids = labeled.records.iter().map(|r| r.user_id.clone()).collect();
    let dataset = LabeledDataset::new(features, labeled.labels, user_ids)?;

    let out = create_out(common)?;
    dataset.save_dir(out)?;
    echo_config(
        out,
        "extract",
        &[
            ("reviews", shown(reviews)),
            ("scores", shown(scores)),
            ("cap", cap.to_string()),
        ],
        &config,
    )?;
    println!(
        "{} rows, {} features ({} spammer rows) written to {}",
        dataset.len(),
        dataset.features.n_features(),
        dataset.labels.iter().filter(|&&y| y == 1).count(),
        out.display()
    );
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

pub fn analyze(common: &Common, data: &Path, paired: bool, histograms: Option<usize>) -> Result<()> {
    let config = resolve_config(common)?;
    let dataset = LabeledDataset::load_dir(data)?;
    let mode = if paired {
        ContinuousTest::SignedRankTrimmed
    } else {
        ContinuousTest::RankSum
    };
    let results = screen_features(&dataset.features, &dataset.labels, mode)?;
    let out = create_out(common)?;
    write_text(&out.join("screening.tsv"), |w| {
        write_screening_report(w, &dataset.features, &results)
    })?;
    if let Some(bins) = histograms {
        let dir = out.join("histograms");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (j, spec) in dataset.features.specs.iter().enumerate() {
            let h = histogram(&dataset.features.column(j), &dataset.labels, bins)?;
            write_text(&dir.join(format!("{}.csv", file_safe(&spec.name))), |w| {
                write_histogram_csv(w, &h)
            })?;
        }
    }
    echo_config(
        out,
        "analyze",
        &[
            ("data", shown(data)),
            ("paired", paired.to_string()),
            ("histograms", histograms.map_or("none".into(), |b| b.to_string())),
        ],
        &config,
    )?;
    let significant = results.iter().filter(|r| r.significant_at_05).count();
    println!("{} features screened, {significant} significant at 0.05", results.len());
    Ok(())
}

fn train_count_of(n: usize, fraction: f64, count: Option<usize>) -> Result<usize> {
    if let Some(c) = count {
        return Ok(c);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Usage(format!("train fraction must be in (0, 1], got {fraction}")));
    }
    Ok(((n as f64 * fraction).round() as usize).clamp(1, n))
}

/// Trains on `rows` of `dataset` with statistics fitted on those rows only.
fn train_on(dataset: &LabeledDataset, rows: &[usize], config: &TrainConfig) -> Result<(ModelFile, Vec<fraudforest::training::EpochStats>)> {
    let part = dataset.select_rows(rows);
    let stats = NormStats::fit(&part.features.values, config.normalization)?;
    let x = stats.apply(&part.features.values)?;
    let outcome = fit(&x, &part.labels, config)?;
    let file = ModelFile::new(config.clone(), dataset.features.names(), stats, outcome.model)?;
    Ok((file, outcome.trace))
}

fn predict_rows(file: &ModelFile, dataset: &LabeledDataset) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    file.check_features(&dataset.features)?;
    let x = file.normalization.apply(&dataset.features.values)?;
    Ok(file.model.predict_rows(&x)?)
}

fn evaluate_rows(file: &ModelFile, dataset: &LabeledDataset, positive: usize) -> Result<EvalMetrics> {
    let (pred, _) = predict_rows(file, dataset)?;
    Ok(compute_metrics(confusion(&pred, &dataset.labels, positive)?)?)
}

pub fn train(common: &Common, data: &Path, fraction: f64, count: Option<usize>) -> Result<()> {
    let config = resolve_config(common)?;
    let dataset = LabeledDataset::load_dir(data)?;
    let n_train = train_count_of(dataset.len(), fraction, count)?;
    let split = split_shuffle_batch(dataset.len(), n_train, config.batch_size, config.seed)?;
    let (file, trace) = train_on(&dataset, &split.train, &config)?;

    let out = create_out(common)?;
    save_model(&out.join("model.bin"), &file)?;
    write_text(&out.join("training_log.tsv"), |w| write_training_log(w, &trace))?;
    write_text(&out.join("split.tsv"), |w| {
        writeln!(w, "row\tuser_id\tsubset")?;
        let mut rows: Vec<(usize, &str)> = split.train.iter().map(|&i| (i, "train")).collect();
        rows.extend(split.test.iter().map(|&i| (i, "test")));
        rows.sort_unstable();
        for (i, subset) in rows {
            writeln!(w, "{i}\t{}\t{subset}", dataset.user_ids[i])?;
        }
        Ok(())
    })?;
    if let Some(last) = trace.last() {
        println!("final training loss {:.6}, accuracy {}", last.loss, percent(last.accuracy));
    }
    if !split.test.is_empty() {
        let m = evaluate_rows(&file, &dataset.select_rows(&split.test), 1)?;
        write_text(&out.join("metrics.tsv"), |w| write_metrics_report(w, &m))?;
        println!("held-out accuracy {} on {} rows", percent(m.accuracy), split.test.len());
    }
    echo_config(
        out,
        "train",
        &[
            ("data", shown(data)),
            ("train_rows", n_train.to_string()),
        ],
        &config,
    )
}

fn read_split(path: &Path, subset: Subset, n_rows: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let want = match subset {
        Subset::Train => "train",
        Subset::Test => "test",
        Subset::All => return Ok((0..n_rows).collect()),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split('\t').collect();
        let bad = || CliError::Usage(format!("{}:{}: malformed split row", path.display(), i + 1));
        if cells.len() != 3 {
            return Err(bad());
        }
        let row: usize = cells[0].parse().map_err(|_| bad())?;
        if row >= n_rows {
            return Err(CliError::Usage(format!(
                "{}: row {row} outside the {n_rows}-row feature set",
                path.display()
            )));
        }
        if cells[2] == want {
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn evaluate(
    common: &Common,
    model: &Path,
    data: &Path,
    positive: usize,
    split: Option<&Path>,
    subset: Subset,
) -> Result<()> {
    let file = load_model(model)?;
    let dataset = LabeledDataset::load_dir(data)?;
    let rows = match (split, subset) {
        (_, Subset::All) => (0..dataset.len()).collect(),
        (Some(path), s) => read_split(path, s, dataset.len())?,
        (None, _) => return Err(CliError::Usage("--subset train/test needs --split".into())),
    };
    if rows.is_empty() {
        return Err(CliError::Usage("no rows selected for evaluation".into()));
    }
    let m = evaluate_rows(&file, &dataset.select_rows(&rows), positive)?;
    let out = create_out(common)?;
    write_text(&out.join("metrics.tsv"), |w| write_metrics_report(w, &m))?;
    let mut stdout = std::io::stdout().lock();
    write_metrics_report(&mut stdout, &m).map_err(io_err(Path::new("<stdout>")))?;
    echo_config(
        out,
        "evaluate",
        &[
            ("model", shown(model)),
            ("data", shown(data)),
            ("positive_class", positive.to_string()),
            ("subset", format!("{subset:?}").to_lowercase()),
        ],
        &file.config,
    )
}

pub fn predict(common: &Common, model: &Path, data: &Path) -> Result<()> {
    let file = load_model(model)?;
    let dataset = LabeledDataset::load_dir(data)?;
    let (labels, probs) = predict_rows(&file, &dataset)?;
    let out = create_out(common)?;
    write_text(&out.join("predictions.tsv"), |w| {
        writeln!(w, "row\tuser_id\tpredicted\tp_fake")?;
        for (i, (y, p)) in labels.iter().zip(&probs).enumerate() {
            writeln!(w, "{i}\t{}\t{y}\t{}", dataset.user_ids[i], p[1])?;
        }
        Ok(())
    })?;
    echo_config(
        out,
        "predict",
        &[("model", shown(model)), ("data", shown(data))],
        &file.config,
    )?;
    println!("{} predictions written", labels.len());
    Ok(())
}

pub fn ablate(common: &Common, data: &Path, fraction: f64) -> Result<()> {
    let config = resolve_config(common)?;
    let dataset = LabeledDataset::load_dir(data)?;
    let n_train = train_count_of(dataset.len(), fraction, None)?;
    let split = split_shuffle_batch(dataset.len(), n_train, config.batch_size, config.seed)?;
    let eval_rows = if split.test.is_empty() {
        log::warn!("no held-out rows; ablation accuracy is measured on the training rows");
        &split.train
    } else {
        &split.test
    };

    let mut runs: Vec<(String, Vec<usize>, bool)> = Vec::new();
    for scope in Scope::ALL {
        let cols = dataset.features.columns_in_scope(scope);
        if cols.is_empty() {
            log::warn!("scope {scope} has no features; skipped");
            continue;
        }
        runs.push((scope.to_string(), cols, false));
    }
    runs.push(("full".into(), (0..dataset.features.n_features()).collect(), true));

    let mut rows = Vec::new();
    for (name, cols, reference) in runs {
        let subset = dataset.select_columns(&cols);
        let (file, _) = train_on(&subset, &split.train, &config)?;
        let m = evaluate_rows(&file, &subset.select_rows(eval_rows), 1)?;
        log::info!("{name}: accuracy {}", percent(m.accuracy));
        rows.push((name, cols.len(), m.accuracy, reference));
    }

    let out = create_out(common)?;
    write_text(&out.join("ablation.tsv"), |w| {
        writeln!(w, "scope\tfeatures\taccuracy\treference")?;
        for (name, n, acc, reference) in &rows {
            writeln!(w, "{name}\t{n}\t{}\t{}", percent(*acc), if *reference { "yes" } else { "no" })?;
        }
        Ok(())
    })?;
    echo_config(
        out,
        "ablate",
        &[("data", shown(data)), ("train_rows", n_train.to_string())],
        &config,
    )?;
    for (name, _, acc, _) in &rows {
        println!("{name}\t{}", percent(*acc));
    }
    Ok(())
}
