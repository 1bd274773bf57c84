//! The joint network: autoencoder, fully connected tree-input stack and the
//! soft decision forest, plus the forward pass used for prediction.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{decode, encode, AutoencoderParams};
use crate::error::{Error, Result};
use crate::forest::{average_trees, predict_label, tree_input, tree_predict, ForestParams, TreeParams};
use crate::layers::DenseLayer;
use crate::numerics::{Matrix, SeededRng};
use crate::training::TrainConfig;

/// Number of output classes (genuine = 0, fake = 1).
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub autoencoder: AutoencoderParams,
    pub forest: ForestParams,
}

/// Which optimizer a parameter block belongs to: the network weights are
/// stepped every batch, the leaf logits once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Network,
    Leaf,
}

/// Result of [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub reconstruction: Vec<f64>,
    pub per_tree: Vec<Vec<f64>>,
    pub forest: Vec<f64>,
}

impl Model {
    pub fn new(autoencoder: AutoencoderParams, forest: ForestParams) -> Result<Self> {
        if autoencoder.code_width() != forest.input_width() {
            return Err(Error::shape(
                "Model::new",
                format!("code width {}", autoencoder.code_width()),
                format!("forest input width {}", forest.input_width()),
            ));
        }
        Ok(Model {
            autoencoder,
            forest,
        })
    }

    /// Random initialization: every tensor drawn i.i.d. `N(0, init_scale²)`
    /// from a generator seeded with `config.seed`.
    pub fn init(config: &TrainConfig, n_features: usize) -> Result<Self> {
        config.validate()?;
        if n_features == 0 {
            return Err(Error::Config("model needs at least one input feature".into()));
        }
        let mut rng = SeededRng::new(config.seed);
        let widths = config.autoencoder_widths(n_features);
        let code = *widths.last().expect("at least two widths");
        let autoencoder = AutoencoderParams::random(&widths, config.init_scale, &mut rng)?;

        let fc_width = config.fc_width.unwrap_or(code);
        let mut fc_layers = Vec::with_capacity(config.fc_layer_count);
        let mut width = code;
        for _ in 0..config.fc_layer_count {
            fc_layers.push(DenseLayer::random(width, fc_width, config.init_scale, &mut rng)?);
            width = fc_width;
        }
        let trees = (0..config.n_tree)
            .map(|_| TreeParams::random(config.n_depth, width, N_CLASSES, config.init_scale, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Model::new(autoencoder, ForestParams::new(fc_layers, trees)?)
    }

    pub fn n_features(&self) -> usize {
        self.autoencoder.input_width()
    }

    /// Named views of every parameter tensor, in a fixed order.
    pub fn blocks(&self) -> Vec<(String, BlockKind, &[f64])> {
        let mut out = Vec::new();
        fn layer_blocks<'a>(out: &mut Vec<(String, BlockKind, &'a [f64])>, prefix: &str, layers: &'a [DenseLayer]) {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}[{i}].weights"), BlockKind::Network, l.weights.as_slice()));
                out.push((format!("{prefix}[{i}].bias"), BlockKind::Network, l.bias.as_slice()));
            }
        }
        layer_blocks(&mut out, "encoder", &self.autoencoder.encoder);
        layer_blocks(&mut out, "decoder", &self.autoencoder.decoder);
        layer_blocks(&mut out, "fc", &self.forest.fc_layers);
        for (k, t) in self.forest.trees.iter().enumerate() {
            out.push((format!("tree[{k}].routing"), BlockKind::Network, t.routing.as_slice()));
        }
        for (k, t) in self.forest.trees.iter().enumerate() {
            out.push((format!("tree[{k}].leaf_logits"), BlockKind::Leaf, t.leaf_logits.as_slice()));
        }
        out
    }

    /// Mutable counterpart of [`Model::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<(String, BlockKind, &mut [f64])> {
        let mut out = Vec::new();
        fn layer_blocks<'a>(
            out: &mut Vec<(String, BlockKind, &'a mut [f64])>,
            prefix: &str,
            layers: &'a mut [DenseLayer],
        ) {
            for (i, l) in layers.iter_mut().enumerate() {
                out.push((format!("{prefix}[{i}].weights"), BlockKind::Network, l.weights.as_mut_slice()));
                out.push((format!("{prefix}[{i}].bias"), BlockKind::Network, l.bias.as_mut_slice()));
            }
        }
        let Model {
            autoencoder,
            forest,
        } = self;
        layer_blocks(&mut out, "encoder", &mut autoencoder.encoder);
        layer_blocks(&mut out, "decoder", &mut autoencoder.decoder);
        layer_blocks(&mut out, "fc", &mut forest.fc_layers);
        let mut leaves = Vec::new();
        for (k, t) in forest.trees.iter_mut().enumerate() {
            out.push((format!("tree[{k}].routing"), BlockKind::Network, t.routing.as_mut_slice()));
            leaves.push((format!("tree[{k}].leaf_logits"), BlockKind::Leaf, t.leaf_logits.as_mut_slice()));
        }
        out.extend(leaves);
        out
    }

    /// A model of identical shape with every parameter set to zero.
    pub fn zeros_like(&self) -> Model {
        let mut z = self.clone();
        for (_, _, block) in z.blocks_mut() {
            block.fill(0.0);
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, _, b)| b.len()).sum()
    }

    /// Forest class distribution for one feature row.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = encode(x, &self.autoencoder)?;
        let x_t = tree_input(&h, &self.forest.fc_layers)?;
        let per_tree = self
            .forest
            .trees
            .iter()
            .map(|t| tree_predict(&x_t, t))
            .collect::<Result<Vec<_>>>()?;
        average_trees(&per_tree)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(predict_label(&self.predict_proba(x)?))
    }

    /// Predicted labels and forest distributions for every row.
    pub fn predict_rows(&self, rows: &Matrix) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let probs = rows
            .iter_rows()
            .map(|r| self.predict_proba(r))
            .collect::<Result<Vec<_>>>()?;
        let labels = probs.iter().map(|p| predict_label(p)).collect();
        Ok((labels, probs))
    }
}

/// Full forward pass: reconstruction, per-tree and averaged predictions.
pub fn forward(x: &[f64], model: &Model) -> Result<ForwardOutput> {
    let h = encode(x, &model.autoencoder)?;
    let reconstruction = decode(&h, &model.autoencoder)?;
    let x_t = tree_input(&h, &model.forest.fc_layers)?;
    let per_tree = model
        .forest
        .trees
        .iter()
        .map(|t| tree_predict(&x_t, t))
        .collect::<Result<Vec<_>>>()?;
    let forest = average_trees(&per_tree)?;
    Ok(ForwardOutput {
        reconstruction,
        per_tree,
        forest,
    })
}
