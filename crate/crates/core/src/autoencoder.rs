//! Stacked sigmoid autoencoder: `H = f_E(W_E·x + b_E)` layer by layer, and
//! the mirrored decoder producing the reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{check_chain, forward_chain, DenseLayer};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

impl AutoencoderParams {
    /// Validates the layer chain: encoder and decoder each chain, the decoder
    /// starts at the code width and ends at the input width.
    pub fn new(encoder: Vec<DenseLayer>, decoder: Vec<DenseLayer>) -> Result<Self> {
        let enc = check_chain(&encoder, "encoder")?
            .ok_or_else(|| Error::Config("autoencoder needs at least one encoder layer".into()))?;
        let dec = check_chain(&decoder, "decoder")?
            .ok_or_else(|| Error::Config("autoencoder needs at least one decoder layer".into()))?;
        if dec.0 != enc.1 || dec.1 != enc.0 {
            return Err(Error::Shape {
                op: "autoencoder",
                lhs: format!("encoder {} -> {}", enc.0, enc.1),
                rhs: format!("decoder {} -> {}", dec.0, dec.1),
            });
        }
        Ok(AutoencoderParams { encoder, decoder })
    }

    /// Random network with the given encoder widths `[n, w1, ..., m]`; the
    /// decoder mirrors them back to `n`.
    pub fn random(widths: &[usize], scale: f64, rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "autoencoder widths must list at least two positive sizes, got {widths:?}"
            )));
        }
        let encoder = widths
            .windows(2)
            .map(|w| DenseLayer::random(w[0], w[1], scale, rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder = widths
            .windows(2)
            .rev()
            .map(|w| DenseLayer::random(w[1], w[0], scale, rng))
            .collect::<Result<Vec<_>>>()?;
        AutoencoderParams::new(encoder, decoder)
    }

    pub fn input_width(&self) -> usize {
        self.encoder[0].inputs()
    }

    pub fn code_width(&self) -> usize {
        self.encoder.last().expect("validated non-empty").outputs()
    }
}

pub fn encode(x: &[f64], params: &AutoencoderParams) -> Result<Vec<f64>> {
    forward_chain(&params.encoder, x)
}

pub fn decode(h: &[f64], params: &AutoencoderParams) -> Result<Vec<f64>> {
    forward_chain(&params.decoder, h)
}

/// Squared reconstruction error `‖x_in − x_rec‖²`.
pub fn reconstruction_loss(x_in: &[f64], x_rec: &[f64]) -> Result<f64> {
    if x_in.len() != x_rec.len() {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("input of length {}", x_in.len()),
            format!("reconstruction of length {}", x_rec.len()),
        ));
    }
    Ok(x_in.iter().zip(x_rec).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean of [`reconstruction_loss`] over `(input, reconstruction)` pairs.
pub fn batch_reconstruction_loss<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (a, b) in pairs {
        total += reconstruction_loss(a, b)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    Ok(total / n as f64)
}
