use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};

use super::{causal_conv, mamba1_scan, mamba2_scan, BlockTrace, SsmParams};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::real::{silu, softplus, Real};
use crate::weights::{LayerWeights, SsmWeights};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Per-token, per-group statistics of a GroupNorm input.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats<T> {
    /// `N x G`
    pub mean: Array2<T>,
    /// `sqrt(var + eps)`, `N x G`
    pub std: Array2<T>,
}

/// Mean and `sqrt(population variance + eps)` of each group of each row.
pub fn group_stats<T: Real>(u: ArrayView2<T>, groups: usize) -> GroupStats<T> {
    let (n, e) = u.dim();
    let size = e / groups;
    let eps = T::of(GROUP_NORM_EPS);
    let inv = T::one() / T::of(size as f64);
    let mut mean = Array2::zeros((n, groups));
    let mut std = Array2::zeros((n, groups));
    for i in 0..n {
        for g in 0..groups {
            let chunk = u.slice(ndarray::s![i, g * size..(g + 1) * size]);
            let m = chunk.iter().copied().sum::<T>() * inv;
            let var = chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>() * inv;
            mean[[i, g]] = m;
            std[[i, g]] = (var + eps).sqrt();
        }
    }
    GroupStats { mean, std }
}

pub fn group_norm<T: Real>(u: ArrayView2<T>, groups: usize, gamma: ArrayView1<T>, beta: ArrayView1<T>) -> Array2<T> {
    let size = u.ncols() / groups;
    let stats = group_stats(u, groups);
    Array2::from_shape_fn(u.dim(), |(i, ch)| {
        let g = ch / size;
        (u[[i, ch]] - stats.mean[[i, g]]) / stats.std[[i, g]] * gamma[ch] + beta[ch]
    })
}

/// Evaluates one Mamba block on an already normalized input `x` (`N x D`).
///
/// Mamba-1: `y = (SSM(act(conv(X W_x))) * SiLU(X W_z)) W_o`, with step size,
/// `B` and `c` projected from the activated conv output.
/// Mamba-2: `y = GroupNorm(SSM(...) * SiLU(X W_z)) W_o`, with step size, `B`
/// and `c` projected from `X` and shared by all heads.
pub fn block_forward<T: Real>(
    x: ArrayView2<T>,
    layer: &LayerWeights<T>,
    config: &ModelConfig,
) -> Result<(Array2<T>, BlockTrace<T>)> {
    if layer.variant() != config.variant {
        return Err(Error::VariantMismatch {
            expected: config.variant.name(),
            found: layer.variant().name(),
        });
    }
    let (n, d) = x.dim();
    if d != config.model_dim {
        return Err(Error::Shape(format!("block input has width {d}, model_dim is {}", config.model_dim)));
    }
    let act = config.activation();

    let x_proj = x.dot(&layer.in_proj_x);
    let psi = causal_conv(x_proj.view(), layer.conv_weight.view(), layer.conv_bias.view())?;
    let phi = psi.mapv(|v| act.apply(v));

    let (delta, ssm, upsilon) = match &layer.ssm {
        SsmWeights::Mamba1 {
            dt_down,
            dt_up,
            dt_bias,
            b_proj,
            c_proj,
            a_log,
        } => {
            let delta = (phi.dot(dt_down).dot(dt_up) + dt_bias).mapv(softplus);
            let b = phi.dot(b_proj);
            let c = phi.dot(c_proj);
            let (e, r) = a_log.dim();
            let rate = a_log.mapv(|v| v.exp());
            let decay = Array3::from_shape_fn((n, e, r), |(i, ch, s)| (-rate[[ch, s]] * delta[[i, ch]]).exp());
            let input = Array3::from_shape_fn((n, e, r), |(i, ch, s)| delta[[i, ch]] * b[[i, s]]);
            let upsilon = mamba1_scan(phi.view(), decay.view(), input.view(), c.view(), layer.d_skip.view())?;
            let ssm = SsmParams::Mamba1 {
                decay,
                input,
                readout: c,
            };
            (delta, ssm, upsilon)
        }
        SsmWeights::Mamba2 {
            dt_proj,
            dt_bias,
            b_proj,
            c_proj,
            a_log,
            ..
        } => {
            let delta = (x.dot(dt_proj) + dt_bias).mapv(softplus);
            let b = x.dot(b_proj);
            let c = x.dot(c_proj);
            let h = a_log.len();
            let r = b.ncols();
            let rate = a_log.mapv(|v| v.exp());
            let decay = Array2::from_shape_fn((n, h), |(i, hd)| (-rate[hd] * delta[[i, hd]]).exp());
            let input = Array3::from_shape_fn((n, h, r), |(i, hd, s)| delta[[i, hd]] * b[[i, s]]);
            let readout = Array3::from_shape_fn((n, h, r), |(i, _, s)| c[[i, s]]);
            let upsilon = mamba2_scan(phi.view(), decay.view(), input.view(), readout.view(), layer.d_skip.view())?;
            let ssm = SsmParams::Mamba2 { decay, input, readout };
            (delta, ssm, upsilon)
        }
    };

    let gate = x.dot(&layer.in_proj_z).mapv(silu);
    let gated = &upsilon * &gate;
    let normed = match &layer.ssm {
        SsmWeights::Mamba1 { .. } => None,
        SsmWeights::Mamba2 { gn_gamma, gn_beta, .. } => Some(group_norm(
            gated.view(),
            config.num_heads,
            gn_gamma.view(),
            gn_beta.view(),
        )),
    };
    let y = normed.as_ref().unwrap_or(&gated).dot(&layer.out_proj);

    if let Some((idx, _)) = y.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric {
            what: "block output",
            step: idx.0,
            channel: idx.1,
        });
    }
    debug_assert_eq!(y.len_of(Axis(0)), n);

    let trace = BlockTrace {
        variant: config.variant,
        x: x.to_owned(),
        x_proj,
        psi,
        phi,
        delta,
        ssm,
        upsilon,
        gate,
        gated,
        normed,
        y: y.clone(),
    };
    Ok((y, trace))
}
