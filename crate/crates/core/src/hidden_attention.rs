//! Implicit attention obtained by unrolling a selective scan.
//!
//! For `j <= i` the mixing coefficient of channel `e` is
//!
//! ```text
//! m[i][j][e] = sum_r (prod_{k=j+1..i} a_k[e, r]) * Bbar_j[e, r] * c_i[r]
//! ```
//!
//! with a single per-head decay (and shared `<Bbar_j, c_i>`) for Mamba-2. The
//! skip term `D` is kept out of `m` and added on the diagonal by consumers.

use std::borrow::Cow;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::aggregation::{AttributionMatrix, LayerTag, Method};
use crate::config::Variant;
use crate::error::{Error, Result};
use crate::forward::SsmParams;
use crate::real::Real;

/// Sequence length above which [`Materialize::Auto`] switches to streaming.
pub const DEFAULT_STREAM_THRESHOLD: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Materialize {
    /// Build the full `N x N x E` tensor up front.
    Dense,
    /// Keep only the SSM parameters and compute row `i` on demand.
    Streaming,
    /// Dense up to `threshold` tokens, streaming beyond.
    Auto { threshold: usize },
}

impl Default for Materialize {
    fn default() -> Self {
        Materialize::Auto {
            threshold: DEFAULT_STREAM_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone)]
enum Storage<T> {
    Dense(Array3<T>),
    Streaming(SsmParams<T>),
}

#[derive(Debug, Clone)]
pub struct HiddenAttention<T> {
    pub variant: Variant,
    pub layer: usize,
    len: usize,
    channels: usize,
    storage: Storage<T>,
}

fn check_params<T>(params: &SsmParams<T>, channels: usize) -> Result<()> {
    match params {
        SsmParams::Mamba1 { decay, input, readout } => {
            let (n, e, r) = decay.dim();
            if e != channels || input.dim() != (n, e, r) || readout.dim() != (n, r) {
                return Err(Error::Shape(format!(
                    "mamba1 params: decay {:?}, input {:?}, readout {:?}, channels {channels}",
                    decay.dim(),
                    input.dim(),
                    readout.dim()
                )));
            }
        }
        SsmParams::Mamba2 { decay, input, readout } => {
            let (n, h) = decay.dim();
            let r = input.dim().2;
            if h == 0 || !channels.is_multiple_of(h) || input.dim() != (n, h, r) || readout.dim() != (n, h, r) {
                return Err(Error::Shape(format!(
                    "mamba2 params: decay {:?}, input {:?}, readout {:?}, channels {channels}",
                    decay.dim(),
                    input.dim(),
                    readout.dim()
                )));
            }
        }
    }
    Ok(())
}

/// Row `i` of `m` as an `(i + 1) x E` matrix over sources `j = 0..=i`.
fn compute_row<T: Real>(params: &SsmParams<T>, channels: usize, i: usize) -> Array2<T> {
    let mut row = Array2::zeros((i + 1, channels));
    match params {
        SsmParams::Mamba1 { decay, input, readout } => {
            let r = readout.ncols();
            // cum[e][s] = prod_{k=j+1..i} a_k[e][s], starting from the empty product
            let mut cum = Array2::<T>::ones((channels, r));
            for j in (0..=i).rev() {
                for e in 0..channels {
                    let mut acc = T::zero();
                    for st in 0..r {
                        acc = acc + cum[[e, st]] * input[[j, e, st]] * readout[[i, st]];
                    }
                    row[[j, e]] = acc;
                }
                cum.zip_mut_with(&decay.index_axis(Axis(0), j), |c, &a| *c = *c * a);
            }
        }
        SsmParams::Mamba2 { decay, input, readout } => {
            let heads = decay.ncols();
            let head_dim = channels / heads;
            let mut cum = vec![T::one(); heads];
            for j in (0..=i).rev() {
                for (h, c) in cum.iter_mut().enumerate() {
                    let dot = input
                        .slice(s![j, h, ..])
                        .iter()
                        .zip(readout.slice(s![i, h, ..]).iter())
                        .map(|(&b, &cv)| b * cv)
                        .sum::<T>();
                    let v = *c * dot;
                    row.slice_mut(s![j, h * head_dim..(h + 1) * head_dim]).fill(v);
                    *c = *c * decay[[j, h]];
                }
            }
        }
    }
    row
}

/// Unrolls one layer's scan parameters into its hidden attention tensor.
pub fn build_hidden_attention<T: Real>(
    params: &SsmParams<T>,
    channels: usize,
    layer: usize,
    mode: Materialize,
) -> Result<HiddenAttention<T>> {
    check_params(params, channels)?;
    let n = params.len();
    let dense = match mode {
        Materialize::Dense => true,
        Materialize::Streaming => false,
        Materialize::Auto { threshold } => n <= threshold,
    };
    let storage = if dense {
        let rows: Vec<Array2<T>> = (0..n).into_par_iter().map(|i| compute_row(params, channels, i)).collect();
        let mut m = Array3::zeros((n, n, channels));
        for (i, row) in rows.into_iter().enumerate() {
            m.slice_mut(s![i, 0..=i, ..]).assign(&row);
        }
        Storage::Dense(m)
    } else {
        Storage::Streaming(params.clone())
    };
    Ok(HiddenAttention {
        variant: params.variant(),
        layer,
        len: n,
        channels,
        storage,
    })
}

impl<T: Real> HiddenAttention<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Sources `0..=i` of target `i`, shape `(i + 1) x E`.
    pub fn row(&self, i: usize) -> Cow<'_, Array2<T>> {
        assert!(i < self.len, "row {i} out of range for length {}", self.len);
        match &self.storage {
            Storage::Dense(m) => Cow::Owned(m.slice(s![i, 0..=i, ..]).to_owned()),
            Storage::Streaming(p) => Cow::Owned(compute_row(p, self.channels, i)),
        }
    }

    /// A borrowed view of row `i` when dense; `None` when streaming.
    pub fn dense_row(&self, i: usize) -> Option<ArrayView2<'_, T>> {
        match &self.storage {
            Storage::Dense(m) => Some(m.slice(s![i, 0..=i, ..])),
            Storage::Streaming(_) => None,
        }
    }

    pub fn get(&self, i: usize, j: usize, e: usize) -> T {
        if j > i {
            return T::zero();
        }
        match &self.storage {
            Storage::Dense(m) => m[[i, j, e]],
            Storage::Streaming(p) => compute_row(p, self.channels, i)[[j, e]],
        }
    }

    pub fn to_dense(&self) -> Array3<T> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Streaming(p) => {
                let mut m = Array3::zeros((self.len, self.len, self.channels));
                for i in 0..self.len {
                    m.slice_mut(s![i, 0..=i, ..]).assign(&compute_row(p, self.channels, i));
                }
                m
            }
        }
    }
}

/// `upsilon_i[e] = sum_{j<=i} m[i][j][e] * phi_j[e] + d_skip[e] * phi_i[e]`.
pub fn apply_hidden_attention<T: Real>(m: &HiddenAttention<T>, phi: ArrayView2<T>, d_skip: ArrayView1<T>) -> Result<Array2<T>> {
    if phi.dim() != (m.len(), m.channels()) || d_skip.len() != m.channels() {
        return Err(Error::Shape(format!(
            "phi {:?} and d_skip {} do not match hidden attention {}x{}",
            phi.dim(),
            d_skip.len(),
            m.len(),
            m.channels()
        )));
    }
    let rows: Vec<Vec<T>> = (0..m.len())
        .into_par_iter()
        .map(|i| {
            let row = m.row(i);
            (0..m.channels())
                .map(|e| {
                    let mixed = (0..=i).map(|j| row[[j, e]] * phi[[j, e]]).sum::<T>();
                    mixed + d_skip[e] * phi[[i, e]]
                })
                .collect()
        })
        .collect();
    let flat: Vec<T> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((m.len(), m.channels()), flat).expect("row lengths match"))
}

/// Mamba-Attention baseline: `C[i][j] = mean_e |m[i][j][e]|` for `j <= i`.
pub fn mamba_attention_map<T: Real>(m: &HiddenAttention<T>) -> AttributionMatrix {
    let n = m.len();
    let inv = 1.0 / m.channels() as f64;
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        let row = m.row(i);
        for j in 0..=i {
            c[[i, j]] = row.row(j).iter().map(|v| v.as_f64().abs()).sum::<f64>() * inv;
        }
    }
    AttributionMatrix::new(c, Method::MambaAttention, LayerTag::Layer(m.layer))
}
