//! Soft-routed binary decision trees and their ensemble.
//!
//! A tree of depth `D` is complete: `2^D − 1` decision nodes stored in heap
//! order (children of node `i` are `2i + 1` on the left and `2i + 2` on the
//! right) and `2^D` leaves numbered left to right. Decision node `i` sends a
//! sample left with probability `σ(w_i · x_t)`; there is no bias term.
//!
//! Leaves hold unconstrained logits; the class distribution of a leaf is
//! always `softmax(logits)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{check_chain, forward_chain, DenseLayer};
use crate::numerics::{dot, sigmoid, softmax, Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// One row per decision node, heap order.
    pub routing: Matrix,
    /// One row per leaf, left to right.
    pub leaf_logits: Matrix,
}

impl TreeParams {
    pub fn new(routing: Matrix, leaf_logits: Matrix) -> Result<Self> {
        let leaves = leaf_logits.rows();
        if leaves < 2 || !leaves.is_power_of_two() || routing.rows() != leaves - 1 {
            return Err(Error::Shape {
                op: "TreeParams::new",
                lhs: format!("{} decision nodes", routing.rows()),
                rhs: format!("{leaves} leaves (need 2^D - 1 and 2^D, D >= 1)"),
            });
        }
        if leaf_logits.cols() == 0 {
            return Err(Error::Config("leaves need at least one class".into()));
        }
        Ok(TreeParams {
            routing,
            leaf_logits,
        })
    }

    pub fn random(
        depth: usize,
        input_width: usize,
        classes: usize,
        scale: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if depth == 0 || depth > 20 {
            return Err(Error::Config(format!("tree depth must be in 1..=20, got {depth}")));
        }
        let leaves = 1usize << depth;
        TreeParams::new(
            rng.normal_matrix(leaves - 1, input_width, scale)?,
            rng.normal_matrix(leaves, classes, scale)?,
        )
    }

    pub fn depth(&self) -> usize {
        self.leaf_logits.rows().trailing_zeros() as usize
    }

    pub fn n_decision_nodes(&self) -> usize {
        self.routing.rows()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_logits.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.leaf_logits.cols()
    }

    pub fn input_width(&self) -> usize {
        self.routing.cols()
    }

    /// Class distribution of leaf `leaf`.
    pub fn leaf_distribution(&self, leaf: usize) -> Vec<f64> {
        softmax(self.leaf_logits.row(leaf)).expect("leaves have at least one class")
    }

    pub fn leaf_distributions(&self) -> Vec<Vec<f64>> {
        (0..self.n_leaves()).map(|l| self.leaf_distribution(l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    /// Fully connected sigmoid layers mapping the code `H` to the tree input.
    pub fc_layers: Vec<DenseLayer>,
    pub trees: Vec<TreeParams>,
}

impl ForestParams {
    pub fn new(fc_layers: Vec<DenseLayer>, trees: Vec<TreeParams>) -> Result<Self> {
        let first = trees
            .first()
            .ok_or_else(|| Error::Config("forest needs at least one tree".into()))?;
        for (k, t) in trees.iter().enumerate().skip(1) {
            if t.depth() != first.depth()
                || t.input_width() != first.input_width()
                || t.n_classes() != first.n_classes()
            {
                return Err(Error::Shape {
                    op: "ForestParams::new",
                    lhs: format!(
                        "tree 0: depth {}, width {}, {} classes",
                        first.depth(),
                        first.input_width(),
                        first.n_classes()
                    ),
                    rhs: format!(
                        "tree {k}: depth {}, width {}, {} classes",
                        t.depth(),
                        t.input_width(),
                        t.n_classes()
                    ),
                });
            }
        }
        if let Some((_, out)) = check_chain(&fc_layers, "fully connected")? {
            if out != first.input_width() {
                return Err(Error::shape(
                    "ForestParams::new",
                    format!("fully connected output width {out}"),
                    format!("tree input width {}", first.input_width()),
                ));
            }
        }
        Ok(ForestParams { fc_layers, trees })
    }

    /// Width of the code `H` this forest consumes.
    pub fn input_width(&self) -> usize {
        self.fc_layers
            .first()
            .map_or_else(|| self.trees[0].input_width(), DenseLayer::inputs)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_classes(&self) -> usize {
        self.trees[0].n_classes()
    }

    pub fn depth(&self) -> usize {
        self.trees[0].depth()
    }
}

/// `X_T = g(W_F·h + b_F)` through every configured layer; the identity when
/// there are none.
pub fn tree_input(h: &[f64], fc_layers: &[DenseLayer]) -> Result<Vec<f64>> {
    forward_chain(fc_layers, h)
}

/// Probability of routing left at a node with weights `w_d`.
pub fn decision_probability(x_t: &[f64], w_d: &[f64]) -> Result<f64> {
    if x_t.len() != w_d.len() {
        return Err(Error::shape(
            "decision_probability",
            format!("input of length {}", x_t.len()),
            format!("node weights of length {}", w_d.len()),
        ));
    }
    Ok(sigmoid(dot(w_d, x_t)))
}

/// Left-routing probabilities of every decision node, heap order.
pub fn decision_probabilities(x_t: &[f64], tree: &TreeParams) -> Result<Vec<f64>> {
    tree.routing
        .iter_rows()
        .map(|w| decision_probability(x_t, w))
        .collect()
}

/// Path products `μ_ℓ` for heap-ordered decision probabilities.
///
/// `decisions.len()` must be `2^D − 1`; the result has `2^D` entries.
pub fn reach_from_decisions(decisions: &[f64]) -> Vec<f64> {
    let n_nodes = decisions.len();
    let mut reach = vec![0.0; 2 * n_nodes + 1];
    reach[0] = 1.0;
    for i in 0..n_nodes {
        reach[2 * i + 1] = reach[i] * decisions[i];
        reach[2 * i + 2] = reach[i] * (1.0 - decisions[i]);
    }
    reach.split_off(n_nodes)
}

pub fn leaf_reach_probabilities(x_t: &[f64], tree: &TreeParams) -> Result<Vec<f64>> {
    Ok(reach_from_decisions(&decision_probabilities(x_t, tree)?))
}

/// `ℙ_T[y | x] = Σ_ℓ μ_ℓ · P_ℓy`.
pub fn tree_predict(x_t: &[f64], tree: &TreeParams) -> Result<Vec<f64>> {
    let reach = leaf_reach_probabilities(x_t, tree)?;
    Ok(mix_leaves(&reach, tree))
}

pub(crate) fn mix_leaves(reach: &[f64], tree: &TreeParams) -> Vec<f64> {
    let mut out = vec![0.0; tree.n_classes()];
    for (leaf, &mu) in reach.iter().enumerate() {
        for (o, p) in out.iter_mut().zip(tree.leaf_distribution(leaf)) {
            *o += mu * p;
        }
    }
    out
}

/// Average of the per-tree class distributions.
pub fn forest_predict(x_t: &[f64], forest: &ForestParams) -> Result<Vec<f64>> {
    let per_tree = forest
        .trees
        .iter()
        .map(|t| tree_predict(x_t, t))
        .collect::<Result<Vec<_>>>()?;
    average_trees(&per_tree)
}

pub(crate) fn average_trees(per_tree: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_tree
        .first()
        .ok_or_else(|| Error::Config("forest needs at least one tree".into()))?;
    let k = per_tree.len() as f64;
    let mut out = vec![0.0; first.len()];
    for probs in per_tree {
        for (o, p) in out.iter_mut().zip(probs) {
            *o += p;
        }
    }
    Ok(out.into_iter().map(|v| v / k).collect())
}

/// Arg-max class; ties go to the lowest index.
pub fn predict_label(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
