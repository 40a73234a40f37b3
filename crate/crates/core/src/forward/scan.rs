//! Sequential selective scans.
//!
//! The recurrent state `H` is stored `R x E`. Input scales passed in here are
//! already discretized (`delta * B`), and decays are `exp(-exp(a_log) * delta)`.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Recurrent state of one layer at the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanState<T> {
    /// `R x E`
    pub h: Array2<T>,
}

impl<T: Real> ScanState<T> {
    pub fn zeros(state_dim: usize, channels: usize) -> Self {
        ScanState {
            h: Array2::zeros((state_dim, channels)),
        }
    }
}

fn finite<T: Real>(v: T, what: &'static str, step: usize, channel: usize) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric { what, step, channel })
    }
}

/// Mamba-1 scan with per-channel, per-state decays.
///
/// - `phi`: `N x E`
/// - `decay`, `input`: `N x E x R`
/// - `readout`: `N x R`
/// - `d_skip`: `E`
pub fn mamba1_scan<T: Real>(
    phi: ArrayView2<T>,
    decay: ArrayView3<T>,
    input: ArrayView3<T>,
    readout: ArrayView2<T>,
    d_skip: ArrayView1<T>,
) -> Result<Array2<T>> {
    let (n, e) = phi.dim();
    let r = readout.ncols();
    if decay.dim() != (n, e, r) || input.dim() != (n, e, r) || readout.nrows() != n || d_skip.len() != e {
        return Err(Error::Shape(format!(
            "mamba1 scan: phi {:?}, decay {:?}, input {:?}, readout {:?}, d_skip {}",
            phi.dim(),
            decay.dim(),
            input.dim(),
            readout.dim(),
            d_skip.len()
        )));
    }
    let mut state = ScanState::zeros(r, e);
    let mut out = Array2::zeros((n, e));
    for i in 0..n {
        for ch in 0..e {
            let x = finite(phi[[i, ch]], "phi", i, ch)?;
            let skip = finite(d_skip[ch], "d_skip", i, ch)?;
            let mut acc = skip * x;
            for s in 0..r {
                let a = finite(decay[[i, ch, s]], "decay", i, ch)?;
                let b = finite(input[[i, ch, s]], "input scale", i, ch)?;
                let c = finite(readout[[i, s]], "readout", i, ch)?;
                let h = a * state.h[[s, ch]] + b * x;
                state.h[[s, ch]] = h;
                acc = acc + c * h;
            }
            out[[i, ch]] = finite(acc, "scan output", i, ch)?;
        }
    }
    Ok(out)
}

/// Mamba-2 scan: one scalar decay per head per step, shared by the head's
/// state rows and channels. Channel `e` belongs to head `e / (E / H)`.
///
/// - `phi`: `N x E`
/// - `decay`: `N x H`
/// - `input`, `readout`: `N x H x R`
/// - `d_skip`: `E`
pub fn mamba2_scan<T: Real>(
    phi: ArrayView2<T>,
    decay: ArrayView2<T>,
    input: ArrayView3<T>,
    readout: ArrayView3<T>,
    d_skip: ArrayView1<T>,
) -> Result<Array2<T>> {
    let (n, e) = phi.dim();
    let heads = decay.ncols();
    let r = input.dim().2;
    if heads == 0
        || e % heads != 0
        || decay.nrows() != n
        || input.dim() != (n, heads, r)
        || readout.dim() != (n, heads, r)
        || d_skip.len() != e
    {
        return Err(Error::Shape(format!(
            "mamba2 scan: phi {:?}, decay {:?}, input {:?}, readout {:?}, d_skip {}",
            phi.dim(),
            decay.dim(),
            input.dim(),
            readout.dim(),
            d_skip.len()
        )));
    }
    let head_dim = e / heads;
    let mut state = ScanState::zeros(r, e);
    let mut out = Array2::zeros((n, e));
    for i in 0..n {
        for ch in 0..e {
            let h_idx = ch / head_dim;
            let a = finite(decay[[i, h_idx]], "decay", i, ch)?;
            let x = finite(phi[[i, ch]], "phi", i, ch)?;
            let mut acc = finite(d_skip[ch], "d_skip", i, ch)? * x;
            for s in 0..r {
                let b = finite(input[[i, h_idx, s]], "input scale", i, ch)?;
                let c = finite(readout[[i, h_idx, s]], "readout", i, ch)?;
                let h = a * state.h[[s, ch]] + b * x;
                state.h[[s, ch]] = h;
                acc = acc + c * h;
            }
            out[[i, ch]] = finite(acc, "scan output", i, ch)?;
        }
    }
    Ok(out)
}
