//! Decomposition error per strategy and layer, averaged over a batch.

use rayon::prelude::*;

use crate::config::{ActivationStrategy, ModelConfig};
use crate::decomposition::reconstruction_error_with;
use crate::hidden_attention::Materialize;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::weights::ModelWeights;

/// Half-open layer range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerBucket {
    pub start: usize,
    pub end: usize,
}

impl LayerBucket {
    pub fn label(&self) -> String {
        if self.end == self.start + 1 {
            self.start.to_string()
        } else {
            format!("{}-{}", self.start, self.end)
        }
    }
}

/// Three equal thirds for deep stacks (48 layers gives 0-16, 16-32, 32-48),
/// otherwise one bucket per layer.
pub fn layer_buckets(num_layers: usize) -> Vec<LayerBucket> {
    if num_layers >= 48 {
        let a = num_layers / 3;
        let b = 2 * num_layers / 3;
        vec![
            LayerBucket { start: 0, end: a },
            LayerBucket { start: a, end: b },
            LayerBucket { start: b, end: num_layers },
        ]
    } else {
        (0..num_layers).map(|l| LayerBucket { start: l, end: l + 1 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub strategies: Vec<ActivationStrategy>,
    pub buckets: Vec<LayerBucket>,
    /// `errors[s][b]`: mean of the per-layer errors inside bucket `b`.
    pub errors: Vec<Vec<f64>>,
    /// `per_layer[s][l]`: batch mean of the per-token-mean l2 error.
    pub per_layer: Vec<Vec<f64>>,
}

pub fn approx_error_sweep<T: Real>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    batch: &[Vec<usize>],
    strategies: &[ActivationStrategy],
    mode: Materialize,
) -> Result<SweepTable> {
    if batch.is_empty() {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    let buckets = layer_buckets(config.num_layers);
    let mut errors = Vec::with_capacity(strategies.len());
    let mut per_layer = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let runs: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|tokens| reconstruction_error_with(weights, config, tokens, strategy, mode).map(|e| e.per_layer))
            .collect::<Result<_>>()?;
        let layers: Vec<f64> = (0..config.num_layers)
            .map(|l| runs.iter().map(|r| r[l]).sum::<f64>() / runs.len() as f64)
            .collect();
        errors.push(
            buckets
                .iter()
                .map(|b| layers[b.start..b.end].iter().sum::<f64>() / (b.end - b.start) as f64)
                .collect(),
        );
        per_layer.push(layers);
    }
    Ok(SweepTable {
        strategies: strategies.to_vec(),
        buckets,
        errors,
        per_layer,
    })
}
