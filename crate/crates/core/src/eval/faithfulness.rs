//! Scoring attribution matrices against the copying-task gold mask.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::copy_task::{extract_copy_block, gold_mask, CopyInstance, GoldMask};
use super::metrics::{auc, average_precision, recall_at_k};
use crate::aggregation::{AttributionMatrix, LayerTag, Method};
use crate::attribute::{attribute, AttributionRequest};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::weights::ModelWeights;

/// Recorded in every report so readers know how the block was scored.
pub const PROTOCOL: &str = "auc and ap over the flattened copy block; r@k per row with k = gold count";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Auc,
    Ap,
    RAtK,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auc, Metric::Ap, Metric::RAtK];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Ap => "ap",
            Metric::RAtK => "r@k",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auc" => Ok(Metric::Auc),
            "ap" => Ok(Metric::Ap),
            "r@k" | "rak" | "r_at_k" | "recall" => Ok(Metric::RAtK),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockScores {
    pub auc: f64,
    pub ap: f64,
    pub r_at_k: f64,
}

impl BlockScores {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Auc => self.auc,
            Metric::Ap => self.ap,
            Metric::RAtK => self.r_at_k,
        }
    }
}

pub fn score_block(block: ArrayView2<f64>, gold: &GoldMask) -> Result<BlockScores> {
    if block.dim() != gold.g.dim() {
        return Err(Error::Shape(format!("block {:?} vs gold {:?}", block.dim(), gold.g.dim())));
    }
    let s: Vec<f64> = block.iter().copied().collect();
    let g: Vec<bool> = gold.g.iter().copied().collect();
    Ok(BlockScores {
        auc: auc(&s, &g)?,
        ap: average_precision(&s, &g)?,
        r_at_k: recall_at_k(block, gold.g.view())?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    pub sample: usize,
    pub scores: BlockScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulnessReport {
    pub method: Method,
    pub layer: LayerTag,
    pub mean: BlockScores,
    pub samples: Vec<SampleScores>,
}

fn layer_key(tag: LayerTag) -> usize {
    match tag {
        LayerTag::Layer(l) => l,
        LayerTag::Aggregated => usize::MAX,
    }
}

/// Attributes every instance and scores its copy block, one report per
/// (method, layer). Targets default to the model's argmax.
pub fn evaluate_copy<T: Real>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    batch: &[CopyInstance],
    request: &AttributionRequest,
) -> Result<Vec<FaithfulnessReport>> {
    if batch.is_empty() {
        return Err(Error::DegenerateInput("empty copy batch".into()));
    }
    if request.targets.is_some() {
        return Err(Error::Config("per-position targets cannot be shared across a batch".into()));
    }
    let per_sample: Vec<Vec<(Method, LayerTag, BlockScores)>> = batch
        .par_iter()
        .map(|inst| {
            let s = inst.source_len();
            let gold = gold_mask(s);
            let out = attribute(weights, config, &inst.sequence(), request)?;
            out.matrices
                .iter()
                .map(|c: &AttributionMatrix| {
                    let block = extract_copy_block(c, s)?;
                    Ok((c.method, c.layer, score_block(block.view(), &gold)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut groups: BTreeMap<(usize, usize), FaithfulnessReport> = BTreeMap::new();
    for (sample, scores) in per_sample.into_iter().enumerate() {
        for (method, layer, s) in scores {
            let order = request.methods.iter().position(|&m| m == method).unwrap_or(0);
            let entry = groups
                .entry((layer_key(layer), order))
                .or_insert_with(|| FaithfulnessReport {
                    method,
                    layer,
                    mean: BlockScores {
                        auc: 0.0,
                        ap: 0.0,
                        r_at_k: 0.0,
                    },
                    samples: Vec::new(),
                });
            entry.samples.push(SampleScores { sample, scores: s });
        }
    }
    Ok(groups
        .into_values()
        .map(|mut r| {
            let n = r.samples.len() as f64;
            let mean = |m: Metric| r.samples.iter().map(|s| s.scores.get(m)).sum::<f64>() / n;
            r.mean = BlockScores {
                auc: mean(Metric::Auc),
                ap: mean(Metric::Ap),
                r_at_k: mean(Metric::RAtK),
            };
            r
        })
        .collect())
}

/// Layer whose `method` report has the highest mean `metric`; lowest layer on ties.
pub fn select_best_layer(reports: &[FaithfulnessReport], method: Method, metric: Metric) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in reports.iter().filter(|r| r.method == method) {
        let LayerTag::Layer(l) = r.layer else { continue };
        let v = r.mean.get(metric);
        match best {
            Some((bl, bv)) if bv > v || (bv == v && bl < l) => {}
            _ => best = Some((l, v)),
        }
    }
    best.map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::LpNorm;
    use crate::attribute::LayerSelection;
    use crate::config::Variant;
    use crate::eval::copy_task::gen_copy_batch;
    use crate::weights::generate_random_model;
    use ndarray::Array2;

    #[test]
    fn planted_diagonal_is_perfect() {
        let s = 6;
        let block = Array2::from_shape_fn((s, s), |(i, j)| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 });
        let r = score_block(block.view(), &gold_mask(s)).unwrap();
        assert_eq!((r.auc, r.ap, r.r_at_k), (1.0, 1.0, 1.0));
    }

    #[test]
    fn reports_are_deterministic_and_in_range() {
        let config = ModelConfig::new(Variant::Mamba1, 2, 8, 4, 3, 1, 12);
        let w = generate_random_model::<f64>(&config, 3).unwrap();
        let batch = gen_copy_batch(3, 5, 12, 7).unwrap();
        let req = AttributionRequest::new(vec![Method::Lp(LpNorm::L2), Method::Alti, Method::AltiLogit, Method::MambaAttention]);
        let a = evaluate_copy(&w, &config, &batch, &req).unwrap();
        assert_eq!(a, evaluate_copy(&w, &config, &batch, &req).unwrap());
        assert_eq!(a.len(), 2 * 3 + 1);
        for r in &a {
            assert_eq!(r.samples.len(), 3);
            for m in Metric::ALL {
                assert!((0.0..=1.0).contains(&r.mean.get(m)));
            }
        }
        assert_eq!(a.last().unwrap().layer, LayerTag::Aggregated);
        assert!(select_best_layer(&a, Method::Alti, Metric::Auc).is_some());
        assert_eq!(select_best_layer(&a, Method::AltiLogit, Metric::Auc), None);
    }

    #[test]
    fn best_layer_prefers_lowest_on_ties() {
        let mk = |l, auc| FaithfulnessReport {
            method: Method::Alti,
            layer: LayerTag::Layer(l),
            mean: BlockScores { auc, ap: 0.0, r_at_k: 0.0 },
            samples: vec![],
        };
        let reports = vec![mk(2, 0.7), mk(0, 0.9), mk(1, 0.9)];
        assert_eq!(select_best_layer(&reports, Method::Alti, Metric::Auc), Some(0));
    }

    #[test]
    fn single_layer_selection() {
        let config = ModelConfig::new(Variant::Mamba2, 2, 8, 4, 2, 2, 12);
        let w = generate_random_model::<f64>(&config, 3).unwrap();
        let batch = gen_copy_batch(2, 4, 12, 1).unwrap();
        let mut req = AttributionRequest::new(vec![Method::Alti]);
        req.layers = LayerSelection::Layers(vec![1]);
        let r = evaluate_copy(&w, &config, &batch, &req).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].layer, LayerTag::Layer(1));
    }
}
