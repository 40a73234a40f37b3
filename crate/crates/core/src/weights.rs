//! Weight containers and deterministic weight generation.
//!
//! Every tensor has a canonical name (see [`tensor_specs`]). The same naming
//! drives random generation, bundle serialization and bundle validation, so the
//! three can never disagree about which tensors a config requires.
//!
//! Conventions (row-major, `x @ W` for projections):
//! - `in_proj_x`, `in_proj_z`: `D x E`
//! - `conv_weight`: `w x E`; row `w - 1` is the tap on the current token
//! - `out_proj`: `E x D`

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, IxDyn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::{ModelConfig, Variant};
use crate::error::{BundleError, Error, Result};
use crate::real::Real;

/// SSM parameter projections that differ between the two variants.
#[derive(Debug, Clone, PartialEq)]
pub enum SsmWeights<T> {
    /// Step size, `B` and `c` are read from the activated conv output `Phi`.
    Mamba1 {
        /// `E x rank` down-projection of the low-rank step size.
        dt_down: Array2<T>,
        /// `rank x E` up-projection.
        dt_up: Array2<T>,
        dt_bias: Array1<T>,
        /// `E x R`
        b_proj: Array2<T>,
        /// `E x R`
        c_proj: Array2<T>,
        /// `E x R` continuous-time decay rates (log space).
        a_log: Array2<T>,
    },
    /// Step size, `B` and `c` are read from the block input `X`.
    Mamba2 {
        /// `D x H`
        dt_proj: Array2<T>,
        dt_bias: Array1<T>,
        /// `D x R`
        b_proj: Array2<T>,
        /// `D x R`
        c_proj: Array2<T>,
        /// One decay rate per head (log space).
        a_log: Array1<T>,
        gn_gamma: Array1<T>,
        gn_beta: Array1<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    /// Scale of the RMS pre-norm applied to the residual stream.
    pub norm_scale: Array1<T>,
    pub in_proj_x: Array2<T>,
    pub in_proj_z: Array2<T>,
    pub conv_weight: Array2<T>,
    pub conv_bias: Array1<T>,
    pub d_skip: Array1<T>,
    pub out_proj: Array2<T>,
    pub ssm: SsmWeights<T>,
}

impl<T> LayerWeights<T> {
    pub fn variant(&self) -> Variant {
        match self.ssm {
            SsmWeights::Mamba1 { .. } => Variant::Mamba1,
            SsmWeights::Mamba2 { .. } => Variant::Mamba2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    /// `V x D`
    pub embed: Array2<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Array1<T>,
    /// `V x D` output embedding; `None` when tied to `embed`.
    pub lm_head: Option<Array2<T>>,
}

impl<T> ModelWeights<T> {
    /// The output embedding `U`.
    pub fn head(&self) -> &Array2<T> {
        self.lm_head.as_ref().unwrap_or(&self.embed)
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64, f64),
    /// `U(-a, a)` with `a = sqrt(3 / fan_in) * gain`.
    FanIn(usize, f64),
    AroundOne(f64),
    /// `ln(U(lo, hi))`
    LogOfUniform(f64, f64),
    /// Inverse softplus of a log-uniform step size in `[lo, hi]`.
    InvSoftplusStep(f64, f64),
}

/// Name, shape and initializer of one tensor.
#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn spec(name: String, shape: Vec<usize>, init: Init) -> TensorSpec {
    TensorSpec { name, shape, init }
}

/// Every tensor a config requires, in canonical (serialization) order.
pub fn tensor_specs(config: &ModelConfig) -> Vec<TensorSpec> {
    let d = config.model_dim;
    let e = config.inner_dim;
    let r = config.state_dim;
    let w = config.conv_width;
    let v = config.vocab_size;

    let mut out = vec![spec("embed".into(), vec![v, d], Init::Uniform(-1.0, 1.0))];
    for l in 0..config.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.push(spec(p("norm_scale"), vec![d], Init::AroundOne(0.1)));
        out.push(spec(p("in_proj_x"), vec![d, e], Init::FanIn(d, 1.0)));
        out.push(spec(p("in_proj_z"), vec![d, e], Init::FanIn(d, 1.0)));
        out.push(spec(p("conv_weight"), vec![w, e], Init::FanIn(w, 1.0)));
        out.push(spec(p("conv_bias"), vec![e], Init::Uniform(-0.5, 0.5)));
        match config.variant {
            Variant::Mamba1 => {
                let k = config.dt_rank;
                out.push(spec(p("dt_down"), vec![e, k], Init::FanIn(e, 1.0)));
                out.push(spec(p("dt_up"), vec![k, e], Init::FanIn(k, 0.5)));
                out.push(spec(p("dt_bias"), vec![e], Init::InvSoftplusStep(0.01, 0.3)));
                out.push(spec(p("b_proj"), vec![e, r], Init::FanIn(e, 1.0)));
                out.push(spec(p("c_proj"), vec![e, r], Init::FanIn(e, 1.0)));
                out.push(spec(p("a_log"), vec![e, r], Init::LogOfUniform(1.0, 16.0)));
            }
            Variant::Mamba2 => {
                let h = config.num_heads;
                out.push(spec(p("dt_proj"), vec![d, h], Init::FanIn(d, 0.5)));
                out.push(spec(p("dt_bias"), vec![h], Init::InvSoftplusStep(0.01, 0.3)));
                out.push(spec(p("b_proj"), vec![d, r], Init::FanIn(d, 1.0)));
                out.push(spec(p("c_proj"), vec![d, r], Init::FanIn(d, 1.0)));
                out.push(spec(p("a_log"), vec![h], Init::LogOfUniform(1.0, 16.0)));
                out.push(spec(p("gn_gamma"), vec![e], Init::AroundOne(0.2)));
                out.push(spec(p("gn_beta"), vec![e], Init::Uniform(-0.2, 0.2)));
            }
        }
        out.push(spec(p("d_skip"), vec![e], Init::Uniform(0.5, 1.5)));
        out.push(spec(p("out_proj"), vec![e, d], Init::FanIn(e, 1.0)));
    }
    out.push(spec("final_norm".into(), vec![d], Init::AroundOne(0.1)));
    if !config.tied_embeddings {
        out.push(spec("lm_head".into(), vec![v, d], Init::FanIn(d, 1.0)));
    }
    out
}

/// Uniform `[0, 1)` with 53 bits of mantissa.
fn unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn sample(init: Init, rng: &mut ChaCha20Rng) -> f64 {
    let u = unit(rng);
    match init {
        Init::Uniform(lo, hi) => lo + (hi - lo) * u,
        Init::FanIn(fan, gain) => {
            let a = (3.0 / fan as f64).sqrt() * gain;
            a * (2.0 * u - 1.0)
        }
        Init::AroundOne(spread) => 1.0 + spread * (2.0 * u - 1.0),
        Init::LogOfUniform(lo, hi) => (lo + (hi - lo) * u).ln(),
        Init::InvSoftplusStep(lo, hi) => {
            let dt = (lo.ln() + (hi.ln() - lo.ln()) * u).exp();
            // softplus^-1(dt) = ln(e^dt - 1)
            dt.exp_m1().ln()
        }
    }
}

/// Generates weights from ChaCha20 keyed by `seed`.
///
/// Tensor number `k` (in [`tensor_specs`] order) is drawn from stream `k` of
/// the generator, one 64-bit word per element, so the result is a pure
/// function of `(config, seed)`. Values are produced in `f64` and rounded to
/// `T` last.
pub fn generate_random_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelWeights<T>> {
    config.validate()?;
    let mut tensors = BTreeMap::new();
    for (k, ts) in tensor_specs(config).into_iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let len: usize = ts.shape.iter().product();
        let data: Vec<T> = (0..len).map(|_| T::of(sample(ts.init, &mut rng))).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&ts.shape), data).expect("shape product matches");
        tensors.insert(ts.name, arr);
    }
    ModelWeights::from_tensors(config, tensors)
}

impl<T: Real> ModelWeights<T> {
    /// Assembles weights from named tensors, checking that every required
    /// tensor is present with the expected shape and no extras exist.
    pub fn from_tensors(config: &ModelConfig, mut tensors: BTreeMap<String, ArrayD<T>>) -> Result<Self> {
        config.validate()?;
        for ts in tensor_specs(config) {
            match tensors.get(&ts.name) {
                None => return Err(BundleError::MissingTensor(ts.name).into()),
                Some(a) if a.shape() != ts.shape.as_slice() => {
                    return Err(BundleError::ShapeMismatch {
                        name: ts.name,
                        expected: ts.shape,
                        found: a.shape().to_vec(),
                    }
                    .into())
                }
                Some(_) => {}
            }
        }
        let required: Vec<String> = tensor_specs(config).into_iter().map(|t| t.name).collect();
        if let Some(extra) = tensors.keys().find(|k| !required.contains(k)) {
            return Err(BundleError::UnexpectedTensor(extra.clone()).into());
        }

        let mut take = |name: &str| tensors.remove(name).expect("presence checked above");
        let v1 = |a: ArrayD<T>| -> Array1<T> { a.into_dimensionality().expect("rank checked") };
        let v2 = |a: ArrayD<T>| -> Array2<T> { a.into_dimensionality().expect("rank checked") };

        let embed = v2(take("embed"));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let mut t = |s: &str| take(&format!("layers.{l}.{s}"));
            let norm_scale = v1(t("norm_scale"));
            let in_proj_x = v2(t("in_proj_x"));
            let in_proj_z = v2(t("in_proj_z"));
            let conv_weight = v2(t("conv_weight"));
            let conv_bias = v1(t("conv_bias"));
            let ssm = match config.variant {
                Variant::Mamba1 => SsmWeights::Mamba1 {
                    dt_down: v2(t("dt_down")),
                    dt_up: v2(t("dt_up")),
                    dt_bias: v1(t("dt_bias")),
                    b_proj: v2(t("b_proj")),
                    c_proj: v2(t("c_proj")),
                    a_log: v2(t("a_log")),
                },
                Variant::Mamba2 => SsmWeights::Mamba2 {
                    dt_proj: v2(t("dt_proj")),
                    dt_bias: v1(t("dt_bias")),
                    b_proj: v2(t("b_proj")),
                    c_proj: v2(t("c_proj")),
                    a_log: v1(t("a_log")),
                    gn_gamma: v1(t("gn_gamma")),
                    gn_beta: v1(t("gn_beta")),
                },
            };
            let d_skip = v1(t("d_skip"));
            let out_proj = v2(t("out_proj"));
            layers.push(LayerWeights {
                norm_scale,
                in_proj_x,
                in_proj_z,
                conv_weight,
                conv_bias,
                d_skip,
                out_proj,
                ssm,
            });
        }
        let final_norm = v1(take("final_norm"));
        let lm_head = if config.tied_embeddings {
            None
        } else {
            Some(v2(take("lm_head")))
        };
        Ok(ModelWeights {
            embed,
            layers,
            final_norm,
            lm_head,
        })
    }

    /// Named views of every tensor, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![("embed".to_string(), self.embed.view().into_dyn())];
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.push((p("norm_scale"), layer.norm_scale.view().into_dyn()));
            out.push((p("in_proj_x"), layer.in_proj_x.view().into_dyn()));
            out.push((p("in_proj_z"), layer.in_proj_z.view().into_dyn()));
            out.push((p("conv_weight"), layer.conv_weight.view().into_dyn()));
            out.push((p("conv_bias"), layer.conv_bias.view().into_dyn()));
            match &layer.ssm {
                SsmWeights::Mamba1 {
                    dt_down,
                    dt_up,
                    dt_bias,
                    b_proj,
                    c_proj,
                    a_log,
                } => {
                    out.push((p("dt_down"), dt_down.view().into_dyn()));
                    out.push((p("dt_up"), dt_up.view().into_dyn()));
                    out.push((p("dt_bias"), dt_bias.view().into_dyn()));
                    out.push((p("b_proj"), b_proj.view().into_dyn()));
                    out.push((p("c_proj"), c_proj.view().into_dyn()));
                    out.push((p("a_log"), a_log.view().into_dyn()));
                }
                SsmWeights::Mamba2 {
                    dt_proj,
                    dt_bias,
                    b_proj,
                    c_proj,
                    a_log,
                    gn_gamma,
                    gn_beta,
                } => {
                    out.push((p("dt_proj"), dt_proj.view().into_dyn()));
                    out.push((p("dt_bias"), dt_bias.view().into_dyn()));
                    out.push((p("b_proj"), b_proj.view().into_dyn()));
                    out.push((p("c_proj"), c_proj.view().into_dyn()));
                    out.push((p("a_log"), a_log.view().into_dyn()));
                    out.push((p("gn_gamma"), gn_gamma.view().into_dyn()));
                    out.push((p("gn_beta"), gn_beta.view().into_dyn()));
                }
            }
            out.push((p("d_skip"), layer.d_skip.view().into_dyn()));
            out.push((p("out_proj"), layer.out_proj.view().into_dyn()));
        }
        out.push(("final_norm".to_string(), self.final_norm.view().into_dyn()));
        if let Some(h) = &self.lm_head {
            out.push(("lm_head".to_string(), h.view().into_dyn()));
        }
        out
    }

    pub fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.num_layers {
            return Err(Error::Shape(format!(
                "weights have {} layers, config declares {}",
                self.layers.len(),
                config.num_layers
            )));
        }
        let specs = tensor_specs(config);
        let named = self.named_tensors();
        if specs.len() != named.len() {
            return Err(Error::Shape("tensor set does not match config".into()));
        }
        for (ts, (name, view)) in specs.iter().zip(&named) {
            if &ts.name != name || view.shape() != ts.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {:?}, config implies {:?}",
                    view.shape(),
                    ts.shape
                )));
            }
        }
        Ok(())
    }
}
