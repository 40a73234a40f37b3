use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{relu, silu, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mamba1,
    Mamba2,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Mamba1 => "mamba1",
            Variant::Mamba2 => "mamba2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mamba1" | "mamba-1" => Ok(Variant::Mamba1),
            "mamba2" | "mamba-2" => Ok(Variant::Mamba2),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Config(format!("unknown dtype `{other}`"))),
        }
    }
}

/// Nonlinearity applied to the convolution output inside the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => silu(x),
            Activation::Relu => relu(x),
            Activation::Identity => x,
        }
    }
}

/// The additive per-tap surrogate `f` used by the decomposition.
///
/// Stored in a [`ModelConfig`], the strategy also fixes the model's own
/// forward activation: SiLU for `silu`, `taylor1` and `taylor2`, ReLU for
/// `relu`, none for `identity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationStrategy {
    Silu,
    Relu,
    Identity,
    Taylor1,
    Taylor2,
}

impl ActivationStrategy {
    pub const ALL: [ActivationStrategy; 5] = [
        ActivationStrategy::Silu,
        ActivationStrategy::Relu,
        ActivationStrategy::Identity,
        ActivationStrategy::Taylor1,
        ActivationStrategy::Taylor2,
    ];

    /// Surrogate applied to one tap pre-activation. Every kind maps 0 to 0.
    #[inline]
    pub fn f<T: Real>(self, x: T) -> T {
        match self {
            ActivationStrategy::Silu => silu(x),
            ActivationStrategy::Relu => relu(x),
            ActivationStrategy::Identity => x,
            // SiLU(x) = x/2 + x^2/4 - x^4/96 + ...
            ActivationStrategy::Taylor1 => x * T::of(0.5),
            ActivationStrategy::Taylor2 => x * T::of(0.5) + x * x * T::of(0.25),
        }
    }

    pub fn forward_activation(self) -> Activation {
        match self {
            ActivationStrategy::Silu | ActivationStrategy::Taylor1 | ActivationStrategy::Taylor2 => {
                Activation::Silu
            }
            ActivationStrategy::Relu => Activation::Relu,
            ActivationStrategy::Identity => Activation::Identity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationStrategy::Silu => "silu",
            ActivationStrategy::Relu => "relu",
            ActivationStrategy::Identity => "identity",
            ActivationStrategy::Taylor1 => "taylor1",
            ActivationStrategy::Taylor2 => "taylor2",
        }
    }
}

impl fmt::Display for ActivationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ActivationStrategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown activation strategy `{s}`")))
    }
}

/// Architecture hyperparameters of a Mamba-1 or Mamba-2 stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub model_dim: usize,
    pub inner_dim: usize,
    pub state_dim: usize,
    pub conv_width: usize,
    /// Number of SSM heads; Mamba-2 only, ignored (kept at 1) for Mamba-1.
    pub num_heads: usize,
    pub vocab_size: usize,
    /// Rank of the low-rank step-size projection; Mamba-1 only.
    pub dt_rank: usize,
    pub activation_strategy: ActivationStrategy,
    pub dtype: Dtype,
    pub tied_embeddings: bool,
}

impl ModelConfig {
    /// A config with `inner_dim = 2 * model_dim` and `dt_rank = ceil(model_dim / 16)`.
    pub fn new(
        variant: Variant,
        num_layers: usize,
        model_dim: usize,
        state_dim: usize,
        conv_width: usize,
        num_heads: usize,
        vocab_size: usize,
    ) -> Self {
        ModelConfig {
            variant,
            num_layers,
            model_dim,
            inner_dim: 2 * model_dim,
            state_dim,
            conv_width,
            num_heads,
            vocab_size,
            dt_rank: model_dim.div_ceil(16).max(1),
            activation_strategy: ActivationStrategy::Silu,
            dtype: Dtype::F64,
            tied_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("model_dim", self.model_dim),
            ("inner_dim", self.inner_dim),
            ("state_dim", self.state_dim),
            ("conv_width", self.conv_width),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("dt_rank", self.dt_rank),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.variant == Variant::Mamba2 && !self.inner_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "inner_dim {} is not divisible by num_heads {}",
                self.inner_dim, self.num_heads
            )));
        }
        Ok(())
    }

    /// Heads used by the scan: `num_heads` for Mamba-2, one per channel for Mamba-1.
    pub fn scan_heads(&self) -> usize {
        match self.variant {
            Variant::Mamba1 => self.inner_dim,
            Variant::Mamba2 => self.num_heads,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.inner_dim / self.scan_heads()
    }

    pub fn activation(&self) -> Activation {
        self.activation_strategy.forward_activation()
    }

    pub fn with_strategy(&self, strategy: ActivationStrategy) -> Self {
        ModelConfig {
            activation_strategy: strategy,
            ..self.clone()
        }
    }

    /// Config whose forward pass a decomposition under `strategy` explains.
    ///
    /// The identity strategy is exact only on the activation-removed model, so
    /// it swaps the activation out; every other strategy approximates the
    /// model's own activation.
    pub fn forward_config(&self, strategy: ActivationStrategy) -> Self {
        match strategy {
            ActivationStrategy::Identity => self.with_strategy(ActivationStrategy::Identity),
            _ => self.clone(),
        }
    }
}
