use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{block_forward, LayerTrace};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::weights::ModelWeights;

pub const RMS_NORM_EPS: f64 = 1e-5;

/// Scale-only RMS normalization of each row.
pub fn rms_norm<T: Real>(x: ArrayView2<T>, scale: ArrayView1<T>) -> Array2<T> {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(RMS_NORM_EPS);
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|&v| v * v).sum::<T>() / d;
        let inv = T::one() / (ms + eps).sqrt();
        row.zip_mut_with(&scale, |v, &s| *v = *v * inv * s);
    }
    out
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `N x V`
    pub logits: Array2<T>,
    pub traces: Vec<LayerTrace<T>>,
    /// Residual stream snapshots `x^(0) .. x^(L)`.
    pub residuals: Vec<Array2<T>>,
}

impl<T: Real> ForwardOutput<T> {
    /// Greedy next-token prediction at every position (lowest id on ties).
    pub fn argmax_tokens(&self) -> Vec<usize> {
        self.logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Pre-norm residual stack: `x^(l) = x^(l-1) + Block(RMSNorm(x^(l-1)))`,
/// `logits = RMSNorm(x^(L)) U^T`.
pub fn model_forward<T: Real>(tokens: &[usize], weights: &ModelWeights<T>, config: &ModelConfig) -> Result<ForwardOutput<T>> {
    if tokens.is_empty() {
        return Err(Error::Contract("token sequence is empty".into()));
    }
    if let Some((position, &id)) = tokens.iter().enumerate().find(|(_, &t)| t >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            position,
            id,
            vocab: config.vocab_size,
        });
    }
    if weights.layers.len() != config.num_layers {
        return Err(Error::Shape(format!(
            "weights have {} layers, config declares {}",
            weights.layers.len(),
            config.num_layers
        )));
    }

    let mut x = Array2::from_shape_fn((tokens.len(), config.model_dim), |(i, k)| weights.embed[[tokens[i], k]]);
    let mut residuals = vec![x.clone()];
    let mut traces = Vec::with_capacity(config.num_layers);
    for (index, layer) in weights.layers.iter().enumerate() {
        let normed = rms_norm(x.view(), layer.norm_scale.view());
        let (y, block) = block_forward(normed.view(), layer, config)?;
        let x_out = &x + &y;
        traces.push(LayerTrace {
            index,
            x_in: x,
            x_out: x_out.clone(),
            block,
        });
        residuals.push(x_out.clone());
        x = x_out;
    }
    let logits = rms_norm(x.view(), weights.final_norm.view()).dot(&weights.head().t());
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            what: "logits",
            step: 0,
            channel: 0,
        });
    }
    Ok(ForwardOutput {
        logits,
        traces,
        residuals,
    })
}
