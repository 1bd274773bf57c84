//! Fully connected sigmoid layers, shared by the autoencoder and the
//! tree-input stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{affine, sigmoid_vec, Matrix, SeededRng};

/// `y = σ(W·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(
                "DenseLayer::new",
                format!("weights ({}, {})", weights.rows(), weights.cols()),
                format!("bias of length {}", bias.len()),
            ));
        }
        Ok(DenseLayer { weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn random(inputs: usize, outputs: usize, scale: f64, rng: &mut SeededRng) -> Result<Self> {
        Ok(DenseLayer {
            weights: rng.normal_matrix(outputs, inputs, scale)?,
            bias: rng.normal_vec(outputs, scale)?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(sigmoid_vec(&affine(x, &self.weights, &self.bias)?))
    }

    /// Backpropagates `grad_out = ∂L/∂y` through the layer given its input
    /// `x` and output `y`, accumulating `scale · ∂L/∂W` and `scale · ∂L/∂b`
    /// into `grad`. Returns `∂L/∂x`.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        grad_out: &[f64],
        grad: &mut DenseLayer,
        scale: f64,
    ) -> Vec<f64> {
        let dz: Vec<f64> = grad_out
            .iter()
            .zip(y)
            .map(|(g, &s)| g * s * (1.0 - s))
            .collect();
        grad.weights.add_outer(&dz, x, scale);
        for (gb, d) in grad.bias.iter_mut().zip(&dz) {
            *gb += scale * d;
        }
        self.weights
            .tr_mul_vec(&dz)
            .expect("layer shapes are validated at construction")
    }
}

/// Checks that consecutive layers chain and returns the (input, output) width
/// of the whole stack, or `None` for an empty stack.
pub(crate) fn check_chain(layers: &[DenseLayer], what: &str) -> Result<Option<(usize, usize)>> {
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].outputs() != pair[1].inputs() {
            return Err(Error::Shape {
                op: "layer chain",
                lhs: format!("{what} layer {i} outputs {}", pair[0].outputs()),
                rhs: format!("layer {} expects {}", i + 1, pair[1].inputs()),
            });
        }
    }
    Ok(layers
        .first()
        .zip(layers.last())
        .map(|(f, l)| (f.inputs(), l.outputs())))
}

/// Runs `x` through every layer and returns all activations, input first.
pub(crate) fn forward_trace(layers: &[DenseLayer], x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    for layer in layers {
        let next = layer.forward(acts.last().expect("non-empty"))?;
        acts.push(next);
    }
    Ok(acts)
}

pub(crate) fn forward_chain(layers: &[DenseLayer], x: &[f64]) -> Result<Vec<f64>> {
    let mut cur = x.to_vec();
    for layer in layers {
        cur = layer.forward(&cur)?;
    }
    Ok(cur)
}

/// Backpropagates through a stack using the activations from
/// [`forward_trace`]. Returns the gradient with respect to the stack input.
pub(crate) fn backward_chain(
    layers: &[DenseLayer],
    acts: &[Vec<f64>],
    grad_out: Vec<f64>,
    grads: &mut [DenseLayer],
    scale: f64,
) -> Vec<f64> {
    let mut g = grad_out;
    for (i, layer) in layers.iter().enumerate().rev() {
        g = layer.backward(&acts[i], &acts[i + 1], &g, &mut grads[i], scale);
    }
    g
}
