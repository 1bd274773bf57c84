use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fraudforest::data::{save_reviews, LabeledDataset};
use fraudforest::features::{FeatureKind, FeatureMatrix, FeatureSpec, ReviewRecord, Scope};
use fraudforest::numerics::{Matrix, SeededRng};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fraudforest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn review(user: &str, product: &str, rating: u8, day: i64) -> ReviewRecord {
    ReviewRecord {
        user_id: user.into(),
        product_id: product.into(),
        rating,
        helpful_votes: 1,
        unhelpful_votes: 0,
        timestamp: day,
        category: "books".into(),
        summary_text: "great read".into(),
        review_text: "i love this book".into(),
        user_name: Some("anna".into()),
        user_memo: None,
    }
}

fn write_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let reviews = dir.join("reviews.jsonl");
    let scores = dir.join("scores.tsv");
    save_reviews(
        &reviews,
        &[review("u1", "p1", 5, 100), review("u2", "p1", 1, 120), review("u3", "p2", 4, 300)],
    )
    .unwrap();
    fs::write(&scores, "user_id\tscore\nu1\t0.9\nu2\t0.1\nu3\t0.5\n").unwrap();
    (reviews, scores)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn save_dataset(dir: &Path, cols: Vec<(&str, Scope, FeatureKind, Vec<f64>)>, labels: Vec<usize>) {
    let n = labels.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c.3[i]).collect()).collect();
    let specs = cols
        .iter()
        .map(|c| FeatureSpec {
            name: c.0.into(),
            scope: c.1,
            kind: c.2,
        })
        .collect();
    let fm = FeatureMatrix::new(specs, Matrix::from_rows(&rows).unwrap()).unwrap();
    let users = (0..n).map(|i| format!("u{i}")).collect();
    LabeledDataset::new(fm, labels, users).unwrap().save_dir(dir).unwrap();
}

/// Two unit-variance clouds at x = ±2, 500 points each.
fn two_gaussian_dataset(dir: &Path) {
    let mut rng = SeededRng::new(2024);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (mut a, mut b, mut y) = (vec![], vec![], vec![]);
    for i in 0..1000 {
        let label = i % 2;
        a.push(if label == 1 { 2.0 } else { -2.0 } + noise.sample(rng.inner()));
        b.push(noise.sample(rng.inner()));
        y.push(label);
    }
    save_dataset(
        dir,
        vec![
            ("x", Scope::Rating, FeatureKind::Continuous, a),
            ("y", Scope::Time, FeatureKind::Continuous, b),
        ],
        y,
    );
}

fn metric(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no {key} in {report}"))
        .split('\t')
        .next()
        .unwrap()
        .to_string()
}

fn pct(v: &str) -> f64 {
    v.trim_end_matches('%').parse::<f64>().unwrap() / 100.0
}

#[test]
fn extract_writes_rows_manifest_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (reviews, scores) = write_inputs(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        ok(&["extract", "--reviews", s(&reviews), "--scores", s(&scores), "--out", s(out)]);
    }
    let ds = LabeledDataset::load_dir(&out_a).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.labels, vec![1, 0, 1]);
    assert_eq!(ds.features.manifest_version, 1);
    let manifest = fs::read_to_string(out_a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"version\": 1"));
    for f in ["features.tsv", "labels.tsv", "manifest.json"] {
        assert_eq!(fs::read(out_a.join(f)).unwrap(), fs::read(out_b.join(f)).unwrap(), "{f}");
    }
    assert!(out_a.join("config.toml").exists());
}

#[test]
fn extract_reads_delimited_input_with_column_map() {
    let dir = tempfile::tempdir().unwrap();
    let (_, scores) = write_inputs(dir.path());
    let csv = dir.path().join("r.csv");
    fs::write(
        &csv,
        "reviewer,product_id,stars,helpful_votes,unhelpful_votes,timestamp,category,summary_text,review_text\n\
         u1,p1,5,0,0,10,books,good,fine\nu2,p1,2,1,1,20,books,bad,awful\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&[
        "extract", "--reviews", s(&csv), "--scores", s(&scores), "--format", "csv",
        "--column", "user_id=reviewer", "--column", "rating=stars", "--out", s(&out),
    ]);
    assert_eq!(LabeledDataset::load_dir(&out).unwrap().len(), 2);
}

#[test]
fn missing_score_file_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let (reviews, _) = write_inputs(dir.path());
    let missing = dir.path().join("nope.tsv");
    let out = run(&["extract", "--reviews", s(&reviews), "--scores", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.tsv"));
}

#[test]
fn user_without_score_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (reviews, scores) = write_inputs(dir.path());
    fs::write(&scores, "u1\t0.9\n").unwrap();
    let out = run(&["extract", "--reviews", s(&reviews), "--scores", s(&scores), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("u2") && err.contains("u3"), "{err}");
}

#[test]
fn bad_config_key_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    two_gaussian_dataset(&dir.path().join("data"));
    let cfg = write_config(dir.path(), "n_trees = 3\n");
    let out = run(&["train", "--data", s(&dir.path().join("data")), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_flags_label_feature_and_constant_feature() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
    let as_f: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    save_dataset(
        &data,
        vec![
            ("same_as_label", Scope::Rating, FeatureKind::Categorical, as_f),
            ("constant", Scope::Time, FeatureKind::Continuous, vec![2.0; 40]),
            ("noise", Scope::Feedback, FeatureKind::Continuous, (0..40).map(|i| f64::from(i % 7)).collect()),
        ],
        labels,
    );
    let out = dir.path().join("o");
    ok(&["analyze", "--data", s(&data), "--histograms", "5", "--out", s(&out)]);
    let report = fs::read_to_string(out.join("screening.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "same_as_label");
    assert_eq!(rows[0][4], "40");
    assert_eq!(rows[0][9], "yes");
    assert_eq!(rows[1][3], "degenerate");
    assert_eq!(rows[1][6], "1");
    assert!(out.join("histograms/same_as_label.csv").exists());
    assert!(out.join("config.toml").exists());
}

#[test]
fn train_evaluate_predict_on_two_gaussians() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    two_gaussian_dataset(&data);
    let cfg = write_config(dir.path(), "n_epoch = 200\nlearning_rate = 0.1\nseed = 3\n");
    let run_dir = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run_dir)]);
    for f in ["model.bin", "training_log.tsv", "split.tsv", "metrics.tsv", "config.toml"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let echo = fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(echo.contains("learning_rate = 0.1") && echo.contains("normalization = \"zscore\""));

    let model = run_dir.join("model.bin");
    let split = run_dir.join("split.tsv");
    let eval_dir = dir.path().join("eval");
    let report = ok(&[
        "evaluate", "--model", s(&model), "--data", s(&data), "--split", s(&split),
        "--subset", "test", "--out", s(&eval_dir),
    ]);
    let acc = pct(&metric(&report, "accuracy"));
    assert!(acc >= 0.90, "held-out accuracy {acc}");
    assert_eq!(report.lines().take(4).map(|l| metric(l, l.split('\t').next().unwrap()).parse::<u64>().unwrap()).sum::<u64>(), 200);

    // roles swap with the positive class
    let swapped = ok(&[
        "evaluate", "--model", s(&model), "--data", s(&data), "--split", s(&split),
        "--subset", "test", "--positive-class", "0", "--out", s(&eval_dir),
    ]);
    for (a, b) in [("tp", "tn"), ("fp", "fn"), ("tn", "tp"), ("fn", "fp")] {
        assert_eq!(metric(&report, a), metric(&swapped, b));
    }
    assert_eq!(metric(&report, "accuracy"), metric(&swapped, "accuracy"));

    // predictions on the training rows reproduce the final training accuracy
    let pred_dir = dir.path().join("pred");
    ok(&["predict", "--model", s(&model), "--data", s(&data), "--out", s(&pred_dir)]);
    let preds: Vec<usize> = fs::read_to_string(pred_dir.join("predictions.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(preds.len(), 1000);
    let labels = LabeledDataset::load_dir(&data).unwrap().labels;
    let train_rows: Vec<usize> = fs::read_to_string(&split)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.ends_with("\ttrain"))
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .collect();
    let correct = train_rows.iter().filter(|&&i| preds[i] == labels[i]).count();
    let predicted_acc = correct as f64 / train_rows.len() as f64;
    let log = fs::read_to_string(run_dir.join("training_log.tsv")).unwrap();
    let trained_acc: f64 = log.lines().last().unwrap().split('\t').nth(2).unwrap().parse().unwrap();
    assert!((predicted_acc - trained_acc).abs() <= 0.001, "{predicted_acc} vs {trained_acc}");
}

#[test]
fn evaluate_rejects_features_that_differ_from_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    two_gaussian_dataset(&data);
    let cfg = write_config(dir.path(), "n_epoch = 2\n");
    let run_dir = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run_dir)]);
    let other = dir.path().join("other");
    save_dataset(&other, vec![("z", Scope::Rating, FeatureKind::Continuous, vec![0.0, 1.0])], vec![0, 1]);
    let out = run(&["evaluate", "--model", s(&run_dir.join("model.bin")), "--data", s(&other), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["evaluate", "--model", s(&data.join("labels.tsv")), "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    two_gaussian_dataset(&data);
    let cfg = write_config(dir.path(), "n_epoch = 5\nlearning_rate = 1e308\ninit_scale = 1e300\n");
    let out = run(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ablation_ranks_the_informative_scope_first() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut rng = SeededRng::new(8);
    let n = 400;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let signal: Vec<f64> = labels
        .iter()
        .map(|&y| if y == 1 { 1.5 } else { -1.5 } + rng.inner().random_range(-1.0..1.0))
        .collect();
    let mut noise = |_: usize| -> Vec<f64> { (0..n).map(|_| rng.inner().random_range(-1.0..1.0)).collect() };
    save_dataset(
        &data,
        vec![
            ("mean_rating", Scope::Rating, FeatureKind::Continuous, signal),
            ("helpful_sum", Scope::Feedback, FeatureKind::Continuous, noise(0)),
            ("day_gap", Scope::Time, FeatureKind::Continuous, noise(1)),
            ("summary_length", Scope::Review, FeatureKind::Continuous, noise(2)),
        ],
        labels,
    );
    let cfg = write_config(dir.path(), "n_epoch = 60\nlearning_rate = 0.1\n");
    let out = dir.path().join("o");
    ok(&["ablate", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert!(rows.len() <= 7);
    // history and product scopes have no features and are skipped
    assert_eq!(rows.len(), 5);
    let full = rows.iter().find(|r| r[0] == "full").unwrap();
    assert_eq!(full[3], "yes");
    assert!(rows.iter().filter(|r| r[3] == "yes").count() == 1);
    let acc = |scope: &str| pct(rows.iter().find(|r| r[0] == scope).unwrap()[2]);
    for other in ["feedback", "time", "review"] {
        assert!(acc("rating") > acc(other), "rating {} vs {other} {}", acc("rating"), acc(other));
    }
    assert!(out.join("config.toml").exists());
}
