//! Joint loss, exact gradients, the accumulating RMSProp update and the
//! epoch/batch training loop.
//!
//! The objective for one sample is the squared reconstruction error plus the
//! mean over trees of `−ln ℙ_T[y|x]`; a batch loss is the mean over samples.
//!
//! Gradients are derived by hand. For a tree, write `v_n` for the expected
//! leaf probability of the true class below node `n` (`v_ℓ = P_ℓy` at a
//! leaf, `v_n = d_n v_left + (1 − d_n) v_right` inside) and `μ_n` for the
//! probability of reaching `n`. Then `∂ℙ_T[y]/∂d_n = μ_n (v_left − v_right)`
//! and `∂ℙ_T[y]/∂logit_ℓc = μ_ℓ P_ℓy (δ_cy − P_ℓc)`.
//!
//! # Cost per epoch
//!
//! With `N` training rows, every sample costs about
//! `Σ_l n_{l−1} n_l` over the `2·ae_layer_count` autoencoder layers, plus
//! `Σ_l n_{l−1} n_l` over the fully connected layers, plus
//! `width(X_T) × n_tree × n_leaves` for the forest, once forward and once
//! backward. An epoch repeats that for all `N` rows (in `⌈N / batch⌉`
//! batches) and once more for the leaf update. [`cost_model`] evaluates
//! these terms.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autoencoder::reconstruction_loss;
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::forest::{decision_probabilities, mix_leaves, predict_label};
use crate::layers::{backward_chain, forward_trace};
use crate::model::{BlockKind, Model};
use crate::numerics::{Matrix, SeededRng};

/// Lower clamp on `ℙ_T[y|x]` inside the log.
pub const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_epoch: usize,
    pub n_tree: usize,
    pub n_depth: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub leaf_learning_rate: f64,
    pub seed: u64,
    pub normalization: Normalization,
    pub fc_layer_count: usize,
    pub ae_layer_count: usize,
    /// Code width `m`; defaults to halving the previous width (minimum 2).
    pub hidden_width: Option<usize>,
    /// Width of each fully connected layer; defaults to the code width.
    pub fc_width: Option<usize>,
    /// Standard deviation of the normal initialization.
    pub init_scale: f64,
    /// Reshuffle the training rows before every epoch instead of only once.
    pub reshuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_epoch: 400,
            n_tree: 5,
            n_depth: 3,
            batch_size: 50,
            learning_rate: 0.01,
            epsilon: 1e-8,
            leaf_learning_rate: 0.01,
            seed: 0,
            normalization: Normalization::ZScore,
            fc_layer_count: 1,
            ae_layer_count: 2,
            hidden_width: None,
            fc_width: None,
            init_scale: 0.1,
            reshuffle_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_tree", self.n_tree),
            ("n_depth", self.n_depth),
            ("batch_size", self.batch_size),
            ("ae_layer_count", self.ae_layer_count),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_depth > 20 {
            return Err(Error::Config(format!("n_depth {} is too deep", self.n_depth)));
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("leaf_learning_rate", self.leaf_learning_rate),
            ("epsilon", self.epsilon),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.hidden_width == Some(0) || self.fc_width == Some(0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Encoder widths `[n, ⌈n/2⌉, ..., m]` for `n` input features.
    pub fn autoencoder_widths(&self, n_features: usize) -> Vec<usize> {
        let mut widths = vec![n_features];
        let mut w = n_features;
        for _ in 0..self.ae_layer_count {
            w = w.div_ceil(2).max(2);
            widths.push(w);
        }
        if let Some(m) = self.hidden_width {
            *widths.last_mut().expect("non-empty") = m;
        }
        widths
    }
}

/// Squared-gradient accumulators, one per parameter, laid out like
/// [`Model::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        OptimizerState {
            accumulators: model.blocks().iter().map(|(_, _, b)| vec![0.0; b.len()]).collect(),
        }
    }
}

/// `G ← G + g⊙g; θ ← θ − η/√(G + ε) ⊙ g`, elementwise.
pub fn rmsprop_step(theta: &mut [f64], grad: &[f64], acc: &mut [f64], lr: f64, eps: f64) {
    debug_assert!(theta.len() == grad.len() && acc.len() == grad.len());
    for ((t, &g), a) in theta.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a += g * g;
        *t -= lr / (*a + eps).sqrt() * g;
    }
}

/// Steps leaf logits with the same accumulating rule. The distribution a
/// leaf exposes is `softmax(logits)`, so it stays normalized whatever the
/// step.
pub fn leaf_update_step(leaf_logits: &mut Matrix, grad: &Matrix, acc: &mut [f64], lr: f64, eps: f64) {
    rmsprop_step(leaf_logits.as_mut_slice(), grad.as_slice(), acc, lr, eps);
}

/// `−ln ℙ[y]`, with the probability clamped below at [`MIN_PROB`].
pub fn tree_loss(probs: &[f64], y: usize) -> f64 {
    -probs[y].max(MIN_PROB).ln()
}

/// A batch view: rows of features with their class labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
    /// Row indices into `features`; `None` means every row.
    pub rows: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn all(features: &'a Matrix, labels: &'a [usize]) -> Self {
        Batch {
            features,
            labels,
            rows: None,
        }
    }

    pub fn subset(features: &'a Matrix, labels: &'a [usize], rows: &'a [usize]) -> Self {
        Batch {
            features,
            labels,
            rows: Some(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.map_or(self.features.rows(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn iter(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        let features = self.features;
        let labels = self.labels;
        let idx: Box<dyn Iterator<Item = usize>> = match self.rows {
            Some(r) => Box::new(r.iter().copied()),
            None => Box::new(0..features.rows()),
        };
        idx.map(move |i| (features.row(i), labels[i]))
    }

    fn check(&self, model: &Model) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if self.labels.len() != self.features.rows() {
            return Err(Error::shape(
                "batch",
                format!("{} feature rows", self.features.rows()),
                format!("{} labels", self.labels.len()),
            ));
        }
        if self.features.cols() != model.n_features() {
            return Err(Error::shape(
                "batch",
                format!("{} feature columns", self.features.cols()),
                format!("model expecting {}", model.n_features()),
            ));
        }
        let classes = model.forest.n_classes();
        if let Some(bad) = self.iter().map(|(_, y)| y).find(|&y| y >= classes) {
            return Err(Error::Argument(format!("label {bad} outside 0..{classes}")));
        }
        if let Some(rows) = self.rows {
            if let Some(&r) = rows.iter().find(|&&r| r >= self.features.rows()) {
                return Err(Error::Argument(format!("row index {r} out of range")));
            }
        }
        Ok(())
    }
}

/// Loss split into its two terms, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub forest: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.forest
    }
}

/// Mean over samples of `L_AE + mean_k L_T`.
pub fn joint_loss(batch: Batch<'_>, model: &Model) -> Result<f64> {
    Ok(loss_parts(batch, model)?.total())
}

pub fn loss_parts(batch: Batch<'_>, model: &Model) -> Result<LossParts> {
    batch.check(model)?;
    let mut rec = 0.0;
    let mut forest = 0.0;
    for (x, y) in batch.iter() {
        let out = crate::model::forward(x, model)?;
        rec += reconstruction_loss(x, &out.reconstruction)?;
        forest += out.per_tree.iter().map(|p| tree_loss(p, y)).sum::<f64>() / out.per_tree.len() as f64;
    }
    let n = batch.len() as f64;
    Ok(LossParts {
        reconstruction: rec / n,
        forest: forest / n,
    })
}

/// Exact gradient of [`joint_loss`] with respect to every parameter, returned
/// as a model-shaped tensor set.
pub fn gradients(batch: Batch<'_>, model: &Model) -> Result<Model> {
    accumulate_gradients(batch, model, true)
}

/// Gradient restricted to the leaf logits; the network blocks are left zero.
pub fn leaf_gradients(batch: Batch<'_>, model: &Model) -> Result<Model> {
    accumulate_gradients(batch, model, false)
}

fn accumulate_gradients(batch: Batch<'_>, model: &Model, network: bool) -> Result<Model> {
    batch.check(model)?;
    let mut grad = model.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    for (x, y) in batch.iter() {
        sample_gradient(x, y, model, &mut grad, scale, network)?;
    }
    for (name, _, block) in grad.blocks() {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { block: name });
        }
    }
    Ok(grad)
}

fn sample_gradient(
    x: &[f64],
    y: usize,
    model: &Model,
    grad: &mut Model,
    scale: f64,
    network: bool,
) -> Result<()> {
    let ae = &model.autoencoder;
    let enc_acts = forward_trace(&ae.encoder, x)?;
    let h = enc_acts.last().expect("input plus layers");
    let fc_acts = forward_trace(&model.forest.fc_layers, h)?;
    let x_t = fc_acts.last().expect("input plus layers");

    let k = model.forest.n_trees() as f64;
    let mut d_xt = vec![0.0; x_t.len()];
    for (tree, tree_grad) in model.forest.trees.iter().zip(grad.forest.trees.iter_mut()) {
        let decisions = decision_probabilities(x_t, tree)?;
        let n_nodes = decisions.len();
        // reach[i] for nodes 0..n_nodes, leaves at n_nodes..
        let mut reach = vec![0.0; 2 * n_nodes + 1];
        reach[0] = 1.0;
        for i in 0..n_nodes {
            reach[2 * i + 1] = reach[i] * decisions[i];
            reach[2 * i + 2] = reach[i] * (1.0 - decisions[i]);
        }
        let dists = tree.leaf_distributions();
        let p_y = mix_leaves(&reach[n_nodes..], tree)[y];
        if p_y < MIN_PROB {
            // clamped region: the loss is locally constant
            continue;
        }
        let g = -1.0 / (k * p_y);

        for (leaf, dist) in dists.iter().enumerate() {
            let coeff = scale * g * reach[n_nodes + leaf] * dist[y];
            let row = tree_grad.leaf_logits.row_mut(leaf);
            for (c, r) in row.iter_mut().enumerate() {
                let delta = if c == y { 1.0 } else { 0.0 };
                *r += coeff * (delta - dist[c]);
            }
        }

        if !network {
            continue;
        }
        let mut value = vec![0.0; 2 * n_nodes + 1];
        for (leaf, dist) in dists.iter().enumerate() {
            value[n_nodes + leaf] = dist[y];
        }
        for i in (0..n_nodes).rev() {
            let (vl, vr) = (value[2 * i + 1], value[2 * i + 2]);
            let d = decisions[i];
            value[i] = d * vl + (1.0 - d) * vr;
            let delta = g * reach[i] * (vl - vr) * d * (1.0 - d);
            if delta == 0.0 {
                continue;
            }
            let w = tree.routing.row(i);
            for (dx, wj) in d_xt.iter_mut().zip(w) {
                *dx += delta * wj;
            }
            for (gw, xj) in tree_grad.routing.row_mut(i).iter_mut().zip(x_t) {
                *gw += scale * delta * xj;
            }
        }
    }
    if !network {
        return Ok(());
    }

    let d_h_forest = backward_chain(
        &model.forest.fc_layers,
        &fc_acts,
        d_xt,
        &mut grad.forest.fc_layers,
        scale,
    );
    let dec_acts = forward_trace(&ae.decoder, h)?;
    let x_c = dec_acts.last().expect("input plus layers");
    let d_xc: Vec<f64> = x_c.iter().zip(x).map(|(c, i)| 2.0 * (c - i)).collect();
    let d_h_rec = backward_chain(&ae.decoder, &dec_acts, d_xc, &mut grad.autoencoder.decoder, scale);
    let d_h: Vec<f64> = d_h_forest.iter().zip(&d_h_rec).map(|(a, b)| a + b).collect();
    backward_chain(&ae.encoder, &enc_acts, d_h, &mut grad.autoencoder.encoder, scale);
    Ok(())
}

/// Applies one accumulating RMSProp step to every block of `kind`.
pub fn apply_update(
    model: &mut Model,
    grad: &Model,
    state: &mut OptimizerState,
    kind: BlockKind,
    lr: f64,
    eps: f64,
) {
    let grads = grad.blocks();
    for (((_, k, theta), (_, _, g)), acc) in model
        .blocks_mut()
        .into_iter()
        .zip(grads)
        .zip(state.accumulators.iter_mut())
    {
        if k == kind {
            rmsprop_step(theta, g, acc, lr, eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochStats>,
    pub state: OptimizerState,
}

pub fn train(features: &Matrix, labels: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(features, labels, config, |_, _| {})
}

/// Training loop: shuffle once, then per epoch step the network weights on
/// every mini-batch and the leaf logits once on the whole training set.
/// `observe` is called after each epoch with the epoch index and model.
pub fn train_with_observer<F>(
    features: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Model),
{
    config.validate()?;
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::shape("train", format!("{n} rows"), format!("{} labels", labels.len())));
    }
    if config.batch_size > n {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {n} training rows",
            config.batch_size
        )));
    }
    let mut model = Model::init(config, features.cols())?;
    let mut state = OptimizerState::new(&model);
    let all = Batch::all(features, labels);
    all.check(&model)?;

    // separate stream from the initializer so shapes do not shift the order
    let mut rng = SeededRng::new(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng.inner());

    let mut trace = Vec::with_capacity(config.n_epoch);
    for epoch in 0..config.n_epoch {
        if config.reshuffle_each_epoch && epoch > 0 {
            order.shuffle(rng.inner());
        }
        for rows in order.chunks(config.batch_size) {
            let grad = gradients(Batch::subset(features, labels, rows), &model)?;
            apply_update(&mut model, &grad, &mut state, BlockKind::Network, config.learning_rate, config.epsilon);
        }
        let leaf_grad = leaf_gradients(all, &model)?;
        apply_update(&mut model, &leaf_grad, &mut state, BlockKind::Leaf, config.leaf_learning_rate, config.epsilon);

        let loss = joint_loss(all, &model)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let accuracy = accuracy(&model, features, labels)?;
        log::debug!("epoch {epoch}: loss {loss:.6}, accuracy {accuracy:.4}");
        trace.push(EpochStats {
            epoch,
            loss,
            accuracy,
        });
        observe(epoch, &model);
    }
    Ok(TrainOutcome {
        model,
        trace,
        state,
    })
}

/// Fraction of rows whose predicted label equals the given one.
pub fn accuracy(model: &Model, features: &Matrix, labels: &[usize]) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::Argument("accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for (row, &y) in features.iter_rows().zip(labels) {
        if predict_label(&model.predict_proba(row)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.rows() as f64)
}

/// Writes one `epoch\tloss\taccuracy` line per epoch.
pub fn write_training_log<W: std::io::Write>(mut out: W, trace: &[EpochStats]) -> std::io::Result<()> {
    writeln!(out, "epoch\tloss\taccuracy")?;
    for s in trace {
        writeln!(out, "{}\t{}\t{}", s.epoch, s.loss, s.accuracy)?;
    }
    Ok(())
}

/// Per-sample multiply-add counts of one forward pass, split by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub autoencoder: usize,
    pub fully_connected: usize,
    pub forest: usize,
}

impl CostModel {
    pub fn per_sample(&self) -> usize {
        self.autoencoder + self.fully_connected + self.forest
    }
}

pub fn cost_model(config: &TrainConfig, n_features: usize) -> CostModel {
    let widths = config.autoencoder_widths(n_features);
    let ae: usize = widths.windows(2).map(|w| w[0] * w[1]).sum::<usize>() * 2;
    let code = *widths.last().expect("non-empty");
    let fc_width = config.fc_width.unwrap_or(code);
    let mut fc = 0;
    let mut width = code;
    for _ in 0..config.fc_layer_count {
        fc += width * fc_width;
        width = fc_width;
    }
    let leaves = 1usize << config.n_depth;
    CostModel {
        autoencoder: ae,
        fully_connected: fc,
        forest: width * config.n_tree * leaves,
    }
}

#[cfg(test)]
mod tests {
    use crate::numerics::softmax;
    use super::*;
    use crate::autoencoder::AutoencoderParams;
    use crate::forest::{ForestParams, TreeParams};
    use crate::layers::DenseLayer;
    use crate::numerics::sigmoid;

    #[test]
    fn tree_loss_examples() {
        assert_eq!(tree_loss(&[0.0, 1.0], 1), 0.0);
        assert!((tree_loss(&[0.5, 0.5], 0) - 2f64.ln()).abs() < 1e-15);
        assert!((tree_loss(&[0.69, 0.31], 0) - 0.3711).abs() < 5e-5);
        assert!((tree_loss(&[1.0, 0.0], 1) - (-MIN_PROB.ln())).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_hand_composition() {
        // components {(0.5, ln 2), (1.5, 0)} average to 1.3466
        let v: f64 = ((0.5 + 2f64.ln()) + (1.5 + 0.0)) / 2.0;
        assert!((v - 1.3466).abs() < 5e-5);
    }

    fn tiny_model(w_enc: f64, routing: f64, leaves: [[f64; 2]; 2]) -> Model {
        Model::new(
            AutoencoderParams::new(
                vec![DenseLayer::new(Matrix::from_rows(&[vec![w_enc]]).unwrap(), vec![0.0]).unwrap()],
                vec![DenseLayer::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0]).unwrap()],
            )
            .unwrap(),
            ForestParams::new(
                vec![],
                vec![TreeParams::new(
                    Matrix::from_rows(&[vec![routing]]).unwrap(),
                    Matrix::from_rows(&[leaves[0].to_vec(), leaves[1].to_vec()]).unwrap(),
                )
                .unwrap()],
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_sample_single_tree_loss_is_the_sum() {
        let m = tiny_model(0.3, 2.0, [[0.5, -0.5], [-1.0, 1.0]]);
        let x = Matrix::from_rows(&[vec![0.8]]).unwrap();
        let out = crate::model::forward(x.row(0), &m).unwrap();
        let expected = reconstruction_loss(x.row(0), &out.reconstruction).unwrap() + tree_loss(&out.per_tree[0], 1);
        assert_eq!(joint_loss(Batch::all(&x, &[1]), &m).unwrap(), expected);
        assert!(joint_loss(Batch::subset(&x, &[1], &[]), &m).is_err());
    }

    #[test]
    fn saturated_leaf_gives_zero_forest_gradient() {
        // both leaves put all mass on class 1: the forest term is stationary
        let m = tiny_model(0.3, 2.0, [[-800.0, 800.0], [-800.0, 800.0]]);
        let x = Matrix::from_rows(&[vec![0.8]]).unwrap();
        let g = gradients(Batch::all(&x, &[1]), &m).unwrap();
        let t = &g.forest.trees[0];
        assert!(t.routing.as_slice().iter().all(|v| v.abs() < 1e-8));
        assert!(t.leaf_logits.as_slice().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn logistic_toy_matches_closed_form() {
        // depth-1 tree whose leaves are pure class 0 / pure class 1: with the
        // fixed tree input x_t the loss for y = 0 is −ln σ(w·x_t)
        let m = tiny_model(0.7, -0.4, [[60.0, -60.0], [-60.0, 60.0]]);
        let x = Matrix::from_rows(&[vec![1.3]]).unwrap();
        let g = gradients(Batch::all(&x, &[0]), &m).unwrap();
        let x_t = sigmoid(0.7 * 1.3);
        let w = -0.4;
        let closed = (sigmoid(w * x_t) - 1.0) * x_t;
        assert!((g.forest.trees[0].routing[(0, 0)] - closed).abs() < 1e-10);
    }

    #[test]
    fn rmsprop_examples() {
        let mut theta = [1.0, -2.0];
        let mut acc = [0.0, 0.0];
        rmsprop_step(&mut theta, &[0.0, 0.0], &mut acc, 0.01, 1e-8);
        assert_eq!((theta, acc), ([1.0, -2.0], [0.0, 0.0]));

        let mut theta = [0.0];
        let mut acc = [0.0];
        rmsprop_step(&mut theta, &[3.0], &mut acc, 0.01, 1e-8);
        assert!((theta[0] + 0.01 * 3.0 / (9.0f64 + 1e-8).sqrt()).abs() < 1e-15);
        assert!((theta[0] + 0.01).abs() < 1e-10);

        let mut theta = [0.0];
        let mut acc = [0.0];
        rmsprop_step(&mut theta, &[1.0], &mut acc, 0.01, 1e-8);
        let before = theta[0];
        rmsprop_step(&mut theta, &[1.0], &mut acc, 0.01, 1e-8);
        assert_eq!(acc[0], 2.0);
        assert!((theta[0] - before + 0.01 / (2.0f64 + 1e-8).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn leaf_update_examples() {
        let mut logits = Matrix::from_rows(&[vec![0.2, -0.1]]).unwrap();
        let before = softmax(logits.row(0)).unwrap();
        let mut acc = vec![0.0; 2];
        leaf_update_step(&mut logits, &Matrix::zeros(1, 2), &mut acc, 0.01, 1e-8);
        assert_eq!(softmax(logits.row(0)).unwrap(), before);

        // hand step: g = [0.5, −0.5], fresh accumulator → Δ = ∓0.01·0.5/√(0.25+ε)
        let g = Matrix::from_rows(&[vec![0.5, -0.5]]).unwrap();
        leaf_update_step(&mut logits, &g, &mut acc, 0.01, 1e-8);
        let step = 0.01 * 0.5 / (0.25f64 + 1e-8).sqrt();
        let expected = softmax(&[0.2 - step, -0.1 + step]).unwrap();
        let got = softmax(logits.row(0)).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_size_larger_than_data_is_a_config_error() {
        let x = Matrix::zeros(3, 2);
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&x, &[0, 1, 0], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut rng = SeededRng::new(5);
        let x = rng.normal_matrix(10, 3, 1.0).unwrap();
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let cfg = TrainConfig {
            n_epoch: 0,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let out = train(&x, &y, &cfg).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.model, Model::init(&cfg, 3).unwrap());
    }

    #[test]
    fn accumulators_never_decrease() {
        let mut rng = SeededRng::new(9);
        let x = rng.normal_matrix(20, 4, 1.0).unwrap();
        let y: Vec<usize> = (0..20).map(|i| usize::from(x[(i, 0)] > 0.0)).collect();
        let cfg = TrainConfig {
            n_epoch: 1,
            batch_size: 5,
            n_tree: 2,
            n_depth: 2,
            ..TrainConfig::default()
        };
        let mut model = Model::init(&cfg, 4).unwrap();
        let mut state = OptimizerState::new(&model);
        let mut prev = state.accumulators.clone();
        for rows in [[0usize, 1, 2, 3, 4], [5, 6, 7, 8, 9], [10, 11, 12, 13, 14]] {
            let g = gradients(Batch::subset(&x, &y, &rows), &model).unwrap();
            apply_update(&mut model, &g, &mut state, BlockKind::Network, 0.01, 1e-8);
            let lg = leaf_gradients(Batch::all(&x, &y), &model).unwrap();
            apply_update(&mut model, &lg, &mut state, BlockKind::Leaf, 0.01, 1e-8);
            for (a, b) in state.accumulators.iter().flatten().zip(prev.iter().flatten()) {
                assert!(a >= b && *a >= 0.0);
            }
            prev = state.accumulators.clone();
        }
    }

    #[test]
    fn cost_model_is_linear_in_tree_count() {
        let five = cost_model(&TrainConfig::default(), 40);
        let ten = cost_model(
            &TrainConfig {
                n_tree: 10,
                ..TrainConfig::default()
            },
            40,
        );
        assert_eq!(ten.forest, 2 * five.forest);
        assert_eq!(ten.autoencoder, five.autoencoder);
        assert_eq!(ten.fully_connected, five.fully_connected);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { n_tree: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { epsilon: -1.0, ..TrainConfig::default() },
            TrainConfig { ae_layer_count: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert_eq!(TrainConfig::default().autoencoder_widths(8), vec![8, 4, 2]);
        assert_eq!(TrainConfig::default().autoencoder_widths(60), vec![60, 30, 15]);
    }
}
