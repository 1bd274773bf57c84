mod common;

use common::{desk_config, desk_problem, gradient_check};
use fraudforest::model::Model;
use fraudforest::numerics::{Matrix, SeededRng};
use fraudforest::training::TrainConfig;
use rand::Rng;

#[test]
fn desk_model_matches_central_differences() {
    let (model, x, y) = desk_problem();
    let report = gradient_check(&model, &x, &y, 1e-5, 1e-6);
    assert_eq!(report.len(), model.blocks().len());
    for (name, rel) in &report {
        assert!(*rel < 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn gradient_check_holds_without_fc_layers_and_deeper_trees() {
    for (fc, depth, trees) in [(0, 3, 1), (2, 1, 3)] {
        let config = TrainConfig {
            fc_layer_count: fc,
            n_depth: depth,
            n_tree: trees,
            ..desk_config()
        };
        let model = Model::init(&config, 6).unwrap();
        let mut rng = SeededRng::new(3);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.inner().random_range(-1.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        for (name, rel) in gradient_check(&model, &x, &[1, 0, 0, 1], 1e-5, 1e-6) {
            assert!(rel < 1e-4, "fc {fc} depth {depth}: {name}: {rel:e}");
        }
    }
}
