//! End-to-end attribution: forward pass, decomposition, aggregation.

use ndarray::{Array2, ArrayView2};

use crate::aggregation::{
    aggregate_alti, aggregate_alti_logit, aggregate_lp, build_residual_stream, AttributionMatrix, Method,
    ResidualStream,
};
use crate::config::{ActivationStrategy, ModelConfig};
use crate::decomposition::{layer_contributions, ContributionTensor};
use crate::error::{Error, Result};
use crate::forward::{model_forward, ForwardOutput};
use crate::hidden_attention::{mamba_attention_map, Materialize};
use crate::real::Real;
use crate::weights::ModelWeights;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelection {
    All,
    Layers(Vec<usize>),
}

impl LayerSelection {
    pub fn resolve(&self, num_layers: usize) -> Result<Vec<usize>> {
        match self {
            LayerSelection::All => Ok((0..num_layers).collect()),
            LayerSelection::Layers(ls) => {
                if let Some(&l) = ls.iter().find(|&&l| l >= num_layers) {
                    return Err(Error::Config(format!("layer {l} out of range for {num_layers} layers")));
                }
                Ok(ls.clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttributionRequest {
    pub methods: Vec<Method>,
    pub layers: LayerSelection,
    pub strategy: ActivationStrategy,
    pub materialize: Materialize,
    /// Token whose logit ALTI-Logit explains at each position; the model's
    /// argmax when `None`.
    pub targets: Option<Vec<usize>>,
}

impl AttributionRequest {
    pub fn new(methods: Vec<Method>) -> Self {
        AttributionRequest {
            methods,
            layers: LayerSelection::All,
            strategy: ActivationStrategy::Silu,
            materialize: Materialize::default(),
            targets: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Attributions<T> {
    pub forward: ForwardOutput<T>,
    /// Per-layer methods in (layer, method) order, then cross-layer ones.
    pub matrices: Vec<AttributionMatrix>,
    /// Mean l2 gap between reconstructed and true block output, per computed layer.
    pub reconstruction_gap: Vec<(usize, f64)>,
    pub targets: Vec<usize>,
}

fn mean_gap<T: Real>(t: &ContributionTensor<T>, y: ArrayView2<T>) -> f64 {
    let recon: Array2<T> = t.block_output();
    let n = recon.nrows().max(1);
    recon
        .outer_iter()
        .zip(y.outer_iter())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(&u, &v)| (u.as_f64() - v.as_f64()).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64
}

pub fn attribute<T: Real>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    tokens: &[usize],
    request: &AttributionRequest,
) -> Result<Attributions<T>> {
    let layers = request.layers.resolve(config.num_layers)?;
    let cross = request.methods.iter().any(|m| m.is_cross_layer());
    let forward = model_forward(tokens, weights, &config.forward_config(request.strategy))?;
    let targets = match &request.targets {
        Some(t) => {
            if t.len() != tokens.len() {
                return Err(Error::Shape(format!("{} targets for {} tokens", t.len(), tokens.len())));
            }
            t.clone()
        }
        None => forward.argmax_tokens(),
    };

    let needed: Vec<usize> = if cross { (0..config.num_layers).collect() } else { layers.clone() };
    let mut matrices = Vec::new();
    let mut gaps = Vec::new();
    let mut all = Vec::new();
    for &l in &needed {
        let trace = &forward.traces[l];
        let (m, t) = layer_contributions(trace, &weights.layers[l], request.strategy, request.materialize)?;
        gaps.push((l, mean_gap(&t, trace.block.y.view())));
        if layers.contains(&l) {
            for &method in &request.methods {
                let c = match method {
                    Method::Lp(p) => aggregate_lp(&t, p),
                    Method::Alti => aggregate_alti(&t, t.reconstructed().view())?,
                    Method::MambaAttention => mamba_attention_map(&m),
                    Method::AltiLogit => continue,
                };
                matrices.push(c);
            }
        }
        if cross {
            all.push(t);
        }
    }
    if cross {
        let x_in: Vec<_> = forward.traces.iter().map(|tr| tr.x_in.view()).collect();
        let stream: ResidualStream = build_residual_stream(&all, &x_in)?;
        matrices.push(aggregate_alti_logit(&all, &stream, weights.head().view(), &targets)?);
    }
    Ok(Attributions {
        forward,
        matrices,
        reconstruction_gap: gaps,
        targets,
    })
}
