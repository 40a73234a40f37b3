//! Forward-only Mamba-1 / Mamba-2 inference with token-level contribution
//! decomposition.
//!
//! The pipeline is: [`forward::model_forward`] produces per-layer traces,
//! [`hidden_attention`] unrolls each scan into an explicit lower-triangular
//! mixing tensor, [`decomposition`] splits every block output into per-source
//! vectors `T_i(x_j)`, and [`aggregation`] reduces those to `N x N` attribution
//! matrices. [`eval`] scores attribution matrices on the synthetic copying task
//! and measures decomposition error.

pub mod aggregation;
pub mod attribute;
pub mod bundle;
pub mod config;
pub mod decomposition;
pub mod error;
pub mod eval;
pub mod forward;
pub mod hidden_attention;
pub mod real;
pub mod weights;

pub use config::{Activation, ActivationStrategy, Dtype, ModelConfig, Variant};
pub use error::{BundleError, Error, Result};
pub use real::Real;
pub use weights::{generate_random_model, LayerWeights, ModelWeights, SsmWeights};
