use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::real::Real;

/// Depthwise causal convolution with implicit left zero-padding of `w - 1`.
///
/// `out[j][e] = sum_k kernel[k][e] * x[j - (w - 1) + k][e] + bias[e]`, so
/// kernel row `w - 1` multiplies the current token.
pub fn causal_conv<T: Real>(x: ArrayView2<T>, kernel: ArrayView2<T>, bias: ArrayView1<T>) -> Result<Array2<T>> {
    let (n, e) = x.dim();
    let (w, ke) = kernel.dim();
    if ke != e || bias.len() != e || w == 0 {
        return Err(Error::Shape(format!(
            "conv input has {e} channels, kernel is {w}x{ke}, bias has {}",
            bias.len()
        )));
    }
    let mut out = Array2::zeros((n, e));
    for j in 0..n {
        for k in 0..w {
            let Some(src) = (j + k + 1).checked_sub(w) else {
                continue;
            };
            for ch in 0..e {
                out[[j, ch]] = out[[j, ch]] + kernel[[k, ch]] * x[[src, ch]];
            }
        }
        for ch in 0..e {
            out[[j, ch]] = out[[j, ch]] + bias[ch];
        }
    }
    Ok(out)
}
