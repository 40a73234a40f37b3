//! Exact forward pass: the reference every decomposition is checked against.

mod block;
mod conv;
mod model;
mod scan;

pub use block::{block_forward, group_norm, group_stats, GroupStats, GROUP_NORM_EPS};
pub use conv::causal_conv;
pub use model::{model_forward, rms_norm, ForwardOutput, RMS_NORM_EPS};
pub use scan::{mamba1_scan, mamba2_scan, ScanState};

use ndarray::{Array2, Array3};

use crate::config::Variant;

/// Discretized, input-dependent SSM parameters of one layer for a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum SsmParams<T> {
    Mamba1 {
        /// `N x E x R`, `exp(-exp(a_log) * delta)`
        decay: Array3<T>,
        /// `N x E x R`, `delta * B`
        input: Array3<T>,
        /// `N x R`
        readout: Array2<T>,
    },
    Mamba2 {
        /// `N x H`
        decay: Array2<T>,
        /// `N x H x R`
        input: Array3<T>,
        /// `N x H x R`
        readout: Array3<T>,
    },
}

impl<T> SsmParams<T> {
    pub fn variant(&self) -> Variant {
        match self {
            SsmParams::Mamba1 { .. } => Variant::Mamba1,
            SsmParams::Mamba2 { .. } => Variant::Mamba2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SsmParams::Mamba1 { readout, .. } => readout.nrows(),
            SsmParams::Mamba2 { decay, .. } => decay.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediates of one block evaluated on its (pre-normed) input.
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    pub variant: Variant,
    /// Block input after the pre-norm, `N x D`.
    pub x: Array2<T>,
    /// `X W_x`, `N x E`.
    pub x_proj: Array2<T>,
    /// Conv output before the activation, `N x E`.
    pub psi: Array2<T>,
    /// Activated conv output, `N x E`.
    pub phi: Array2<T>,
    /// Step sizes after softplus: `N x E` (Mamba-1) or `N x H` (Mamba-2).
    pub delta: Array2<T>,
    pub ssm: SsmParams<T>,
    /// Scan output including the skip term, `N x E`.
    pub upsilon: Array2<T>,
    /// `SiLU(X W_z)`, `N x E`.
    pub gate: Array2<T>,
    /// `upsilon * gate`, `N x E` (the GroupNorm input for Mamba-2).
    pub gated: Array2<T>,
    /// GroupNorm output, Mamba-2 only.
    pub normed: Option<Array2<T>>,
    /// Block output, `N x D`.
    pub y: Array2<T>,
}

/// A block trace together with the residual stream around it.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    pub index: usize,
    /// Residual stream entering the layer, `x^(l-1)`.
    pub x_in: Array2<T>,
    /// Residual stream leaving the layer, `x^(l) = x^(l-1) + y`.
    pub x_out: Array2<T>,
    pub block: BlockTrace<T>,
}
