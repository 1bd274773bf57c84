#![allow(dead_code)]

use fraudforest::features::ReviewRecord;
use fraudforest::model::Model;
use fraudforest::numerics::{Matrix, SeededRng};
use fraudforest::training::{gradients, joint_loss, Batch, TrainConfig};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `per_class` points around (−2, 0) labeled 0 and `per_class` around (2, 0)
/// labeled 1, unit variance, interleaved.
pub fn two_gaussians(per_class: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for (y, cx) in [(0usize, -2.0), (1, 2.0)] {
            let r = rng.inner();
            rows.push(vec![cx + noise.sample(r), noise.sample(r)]);
            labels.push(y);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

pub fn desk_config() -> TrainConfig {
    TrainConfig {
        n_tree: 2,
        n_depth: 2,
        fc_layer_count: 1,
        ae_layer_count: 2,
        batch_size: 5,
        init_scale: 1.0,
        seed: 11,
        ..TrainConfig::default()
    }
}

/// Desk model with 8 inputs and a batch of 5 rows in (0, 1).
pub fn desk_problem() -> (Model, Matrix, Vec<usize>) {
    let config = desk_config();
    let model = Model::init(&config, 8).unwrap();
    let mut rng = SeededRng::new(5);
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..8).map(|_| rng.inner().random::<f64>()).collect())
        .collect();
    (model, Matrix::from_rows(&rows).unwrap(), vec![0, 1, 1, 0, 1])
}

/// Worst relative error per parameter block between the analytic gradient
/// and central differences with step `h`, relative to
/// `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(model: &Model, x: &Matrix, y: &[usize], h: f64, floor: f64) -> Vec<(String, f64)> {
    let batch = Batch::all(x, y);
    let analytic = gradients(batch, model).unwrap();
    let analytic_blocks: Vec<Vec<f64>> = analytic.blocks().into_iter().map(|(_, _, b)| b.to_vec()).collect();
    let names: Vec<String> = model.blocks().into_iter().map(|(n, _, _)| n).collect();

    let mut probe = model.clone();
    let mut out = Vec::new();
    for (bi, name) in names.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (j, &a) in analytic_blocks[bi].iter().enumerate() {
            let original = probe.blocks()[bi].2[j];
            probe.blocks_mut()[bi].2[j] = original + h;
            let up = joint_loss(batch, &probe).unwrap();
            probe.blocks_mut()[bi].2[j] = original - h;
            let down = joint_loss(batch, &probe).unwrap();
            probe.blocks_mut()[bi].2[j] = original;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((name, worst));
    }
    out
}

/// A random review with every field drawn from small ranges so users and
/// products repeat.
pub fn random_review<R: Rng>(rng: &mut R) -> ReviewRecord {
    const WORDS: [&str; 8] = ["great", "awful", "book", "love", "bad", "ok", "excellent", "poor"];
    const NAMES: [&str; 4] = ["john", "xq77", "mary smith", ""];
    let text = |rng: &mut R| -> String {
        let n = rng.random_range(0..6);
        (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    };
    let name = NAMES[rng.random_range(0..NAMES.len())];
    ReviewRecord {
        user_id: format!("u{}", rng.random_range(0..4)),
        product_id: format!("p{}", rng.random_range(0..4)),
        rating: rng.random_range(1..=5),
        helpful_votes: rng.random_range(0..5),
        unhelpful_votes: rng.random_range(0..5),
        timestamp: rng.random_range(0..3000),
        category: ["books", "music", "toys"][rng.random_range(0..3)].into(),
        summary_text: text(rng),
        review_text: text(rng),
        user_name: (!name.is_empty()).then(|| name.to_string()),
        user_memo: rng.random_bool(0.5).then(|| text(rng)),
    }
}
