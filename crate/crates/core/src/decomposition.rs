//! Splits each block output into per-source vectors `T_i(x_j)`.
//!
//! Conv output `psi_p` is a sum of `w` taps, one per source token; applying the
//! strategy's `f` per tap gives additive surrogates of `phi_p`. The scan then
//! routes every tap through `m[i][p] + [p == i] D`, and the gate (plus the
//! frozen GroupNorm for Mamba-2) and `W_o` are linear once frozen at the
//! forward trace.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use crate::config::{ActivationStrategy, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::forward::{group_stats, model_forward, LayerTrace};
use crate::hidden_attention::{build_hidden_attention, HiddenAttention, Materialize};
use crate::real::Real;
use crate::weights::{LayerWeights, ModelWeights, SsmWeights};

/// Per-layer contributions `t[i][j] = T_i(x_j)`, `N x N x D`, zero for `j > i`.
#[derive(Debug, Clone)]
pub struct ContributionTensor<T> {
    pub t: Array3<T>,
    pub layer: usize,
    pub strategy: ActivationStrategy,
    /// Part of the block output attributed to no token (`beta W_o` for
    /// Mamba-2), `D`.
    pub offset: Option<Array1<T>>,
}

impl<T: Real> ContributionTensor<T> {
    pub fn len(&self) -> usize {
        self.t.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.t.dim().2
    }

    pub fn get(&self, i: usize, j: usize) -> ArrayView1<'_, T> {
        self.t.slice(s![i, j, ..])
    }

    /// `sum_j t[i][j]`, `N x D`, without the offset.
    pub fn reconstructed(&self) -> Array2<T> {
        self.t.sum_axis(Axis(1))
    }

    /// Reconstructed block output including the unattributed offset.
    pub fn block_output(&self) -> Array2<T> {
        let mut y = self.reconstructed();
        if let Some(off) = &self.offset {
            for mut row in y.outer_iter_mut() {
                row.zip_mut_with(off, |a, &b| *a = *a + b);
            }
        }
        y
    }
}

/// `taps[p][k] = f(K[k] * x_proj[p - (w - 1) + k] + [k == w - 1] b)`.
///
/// Out-of-range sources contribute `f(0) = 0`; the bias rides on the
/// current-token tap `k = w - 1`, so it is counted once per position.
pub fn conv_tap_contributions<T: Real>(
    x_proj: ArrayView2<T>,
    kernel: ArrayView2<T>,
    bias: ArrayView1<T>,
    strategy: ActivationStrategy,
) -> Result<Array3<T>> {
    let (n, e) = x_proj.dim();
    let (w, ke) = kernel.dim();
    if ke != e || bias.len() != e || w == 0 {
        return Err(Error::Shape(format!(
            "taps: x_proj has {e} channels, kernel is {w}x{ke}, bias has {}",
            bias.len()
        )));
    }
    let mut taps = Array3::zeros((n, w, e));
    for p in 0..n {
        for k in 0..w {
            let Some(src) = (p + k + 1).checked_sub(w) else {
                continue;
            };
            for ch in 0..e {
                let mut pre = kernel[[k, ch]] * x_proj[[src, ch]];
                if k == w - 1 {
                    pre = pre + bias[ch];
                }
                taps[[p, k, ch]] = strategy.f(pre);
            }
        }
    }
    Ok(taps)
}

/// `upsilon_{i<-j} = sum_{p=j}^{min(i, j+w-1)} (m[i][p] + [p == i] D) * taps[p][w-1-(p-j)]`.
pub fn ssm_contribution<T: Real>(
    m: &HiddenAttention<T>,
    taps: ArrayView3<T>,
    d_skip: ArrayView1<T>,
    source: usize,
    target: usize,
) -> Result<Array1<T>> {
    if source > target {
        return Err(Error::Contract(format!("source {source} is after target {target}")));
    }
    check_taps(m, taps, d_skip)?;
    let w = taps.dim().1;
    let row = m.row(target);
    let mut out = Array1::zeros(m.channels());
    for p in source..=target.min(source + w - 1) {
        let k = w - 1 - (p - source);
        for e in 0..m.channels() {
            let mut coeff = row[[p, e]];
            if p == target {
                coeff = coeff + d_skip[e];
            }
            out[e] = out[e] + coeff * taps[[p, k, e]];
        }
    }
    Ok(out)
}

fn check_taps<T: Real>(m: &HiddenAttention<T>, taps: ArrayView3<T>, d_skip: ArrayView1<T>) -> Result<()> {
    let (n, _, e) = taps.dim();
    if n != m.len() || e != m.channels() || d_skip.len() != e {
        return Err(Error::Shape(format!(
            "taps {:?} and d_skip {} do not match hidden attention {}x{}",
            taps.dim(),
            d_skip.len(),
            m.len(),
            m.channels()
        )));
    }
    Ok(())
}

/// All `upsilon_{i<-j}` for one target, `(i + 1) x E`. Each conv position `p`
/// scatters its taps back to the sources that produced them.
pub fn ssm_contributions_row<T: Real>(
    m: &HiddenAttention<T>,
    taps: ArrayView3<T>,
    d_skip: ArrayView1<T>,
    target: usize,
) -> Array2<T> {
    let (_, w, e) = taps.dim();
    let row = m.row(target);
    let mut out = Array2::zeros((target + 1, e));
    for p in 0..=target {
        for k in 0..w {
            let Some(src) = (p + k + 1).checked_sub(w) else {
                continue;
            };
            for ch in 0..e {
                let mut coeff = row[[p, ch]];
                if p == target {
                    coeff = coeff + d_skip[ch];
                }
                out[[src, ch]] = out[[src, ch]] + coeff * taps[[p, k, ch]];
            }
        }
    }
    out
}

fn check_variant(expected: Variant, trace: &LayerTrace<impl Real>, layer: &LayerWeights<impl Real>) -> Result<()> {
    for found in [trace.block.variant, layer.variant()] {
        if found != expected {
            return Err(Error::VariantMismatch {
                expected: expected.name(),
                found: found.name(),
            });
        }
    }
    Ok(())
}

/// Shared driver: `linear` maps the gated per-source rows of target `i` to the
/// vectors fed into `W_o`.
fn contributions_with<T, F>(
    trace: &LayerTrace<T>,
    m: &HiddenAttention<T>,
    layer: &LayerWeights<T>,
    strategy: ActivationStrategy,
    linear: F,
) -> Result<Array3<T>>
where
    T: Real,
    F: Fn(usize, &mut Array2<T>) + Sync,
{
    let block = &trace.block;
    let taps = conv_tap_contributions(block.x_proj.view(), layer.conv_weight.view(), layer.conv_bias.view(), strategy)?;
    check_taps(m, taps.view(), layer.d_skip.view())?;
    let n = m.len();
    let d = layer.out_proj.ncols();
    let rows: Vec<Array2<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut u = ssm_contributions_row(m, taps.view(), layer.d_skip.view(), i);
            let gate = block.gate.row(i);
            for mut src in u.outer_iter_mut() {
                src.zip_mut_with(&gate, |a, &z| *a = *a * z);
            }
            linear(i, &mut u);
            u.dot(&layer.out_proj)
        })
        .collect();
    let mut t = Array3::zeros((n, n, d));
    for (i, row) in rows.into_iter().enumerate() {
        t.slice_mut(s![i, 0..=i, ..]).assign(&row);
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            what: "contribution tensor",
            step: 0,
            channel: 0,
        });
    }
    Ok(t)
}

/// `t[i][j] = (Z_i * upsilon_{i<-j}) W_o`, gate taken from the trace.
pub fn contributions_mamba1<T: Real>(
    trace: &LayerTrace<T>,
    m: &HiddenAttention<T>,
    layer: &LayerWeights<T>,
    strategy: ActivationStrategy,
) -> Result<ContributionTensor<T>> {
    check_variant(Variant::Mamba1, trace, layer)?;
    let t = contributions_with(trace, m, layer, strategy, |_, _| {})?;
    Ok(ContributionTensor {
        t,
        layer: trace.index,
        strategy,
        offset: None,
    })
}

/// `t[i][j] = gamma_i(Z_i * upsilon_{i<-j}) W_o` with `gamma_i` the GroupNorm
/// frozen at the actual `u_i`: per-group centering, division by the frozen
/// `sqrt(var + eps)`, scaling by `gn_gamma`. `gn_beta W_o` is returned as the
/// offset.
pub fn contributions_mamba2<T: Real>(
    trace: &LayerTrace<T>,
    m: &HiddenAttention<T>,
    layer: &LayerWeights<T>,
    strategy: ActivationStrategy,
) -> Result<ContributionTensor<T>> {
    check_variant(Variant::Mamba2, trace, layer)?;
    let SsmWeights::Mamba2 {
        gn_gamma, gn_beta, a_log, ..
    } = &layer.ssm
    else {
        unreachable!("variant checked above");
    };
    let groups = a_log.len();
    let size = gn_gamma.len() / groups;
    let stats = group_stats(trace.block.gated.view(), groups);
    let t = contributions_with(trace, m, layer, strategy, |i, u| {
        for g in 0..groups {
            let inv = T::one() / stats.std[[i, g]];
            for mut src in u.rows_mut() {
                let mut chunk = src.slice_mut(s![g * size..(g + 1) * size]);
                let mean = chunk.iter().copied().sum::<T>() / T::of(size as f64);
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v = (*v - mean) * inv * gn_gamma[g * size + k];
                }
            }
        }
    })?;
    Ok(ContributionTensor {
        t,
        layer: trace.index,
        strategy,
        offset: Some(gn_beta.dot(&layer.out_proj)),
    })
}

/// Hidden attention and contributions of one traced layer.
pub fn layer_contributions<T: Real>(
    trace: &LayerTrace<T>,
    layer: &LayerWeights<T>,
    strategy: ActivationStrategy,
    mode: Materialize,
) -> Result<(HiddenAttention<T>, ContributionTensor<T>)> {
    let m = build_hidden_attention(&trace.block.ssm, layer.conv_weight.ncols(), trace.index, mode)?;
    let t = match trace.block.variant {
        Variant::Mamba1 => contributions_mamba1(trace, &m, layer, strategy)?,
        Variant::Mamba2 => contributions_mamba2(trace, &m, layer, strategy)?,
    };
    Ok((m, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionError {
    /// Mean over tokens of the l2 gap, one entry per layer.
    pub per_layer: Vec<f64>,
    /// `per_token[l][i]`.
    pub per_token: Vec<Vec<f64>>,
}

/// l2 gap between the true block output and `sum_j t[i][j]` (plus the
/// unattributed offset), per layer and token.
///
/// The forward pass is run under [`ModelConfig::forward_config`], so the
/// identity strategy explains the activation-removed model.
pub fn reconstruction_error<T: Real>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    tokens: &[usize],
    strategy: ActivationStrategy,
) -> Result<ReconstructionError> {
    reconstruction_error_with(weights, config, tokens, strategy, Materialize::default())
}

pub fn reconstruction_error_with<T: Real>(
    weights: &ModelWeights<T>,
    config: &ModelConfig,
    tokens: &[usize],
    strategy: ActivationStrategy,
    mode: Materialize,
) -> Result<ReconstructionError> {
    let fwd_config = config.forward_config(strategy);
    let out = model_forward(tokens, weights, &fwd_config)?;
    let mut per_layer = Vec::with_capacity(out.traces.len());
    let mut per_token = Vec::with_capacity(out.traces.len());
    for (trace, layer) in out.traces.iter().zip(&weights.layers) {
        let (_, t) = layer_contributions(trace, layer, strategy, mode)?;
        let gaps = token_gaps(t.block_output().view(), trace.block.y.view());
        per_layer.push(gaps.iter().sum::<f64>() / gaps.len() as f64);
        per_token.push(gaps);
    }
    Ok(ReconstructionError { per_layer, per_token })
}

fn token_gaps<T: Real>(recon: ArrayView2<T>, y: ArrayView2<T>) -> Vec<f64> {
    recon
        .outer_iter()
        .zip(y.outer_iter())
        .map(|(a, b)| {
            a.iter()
                .zip(b.iter())
                .map(|(&u, &v)| (u.as_f64() - v.as_f64()).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Dtype;
    use crate::hidden_attention::apply_hidden_attention;
    use crate::weights::generate_random_model;
    use ndarray::array;

    fn cfg(variant: Variant, layers: usize, w: usize) -> ModelConfig {
        let mut c = ModelConfig::new(variant, layers, 8, 4, w, 2, 12);
        c.dtype = Dtype::F64;
        c
    }

    fn zero_conv_bias(weights: &mut ModelWeights<f64>) {
        for l in &mut weights.layers {
            l.conv_bias.fill(0.0);
        }
    }

    #[test]
    fn identity_taps_sum_to_psi() {
        let x = array![[1.0, -2.0], [0.5, 3.0], [2.0, 1.0]];
        let k = array![[0.3, -0.1], [0.7, 0.2], [1.1, 0.9]];
        let b = array![0.05, -0.4];
        let taps = conv_tap_contributions(x.view(), k.view(), b.view(), ActivationStrategy::Identity).unwrap();
        let psi = crate::forward::causal_conv(x.view(), k.view(), b.view()).unwrap();
        let diff = (&taps.sum_axis(Axis(1)) - &psi).mapv(f64::abs);
        assert!(diff.iter().all(|&v| v < 1e-15));
    }

    #[test]
    fn zero_input_zero_taps() {
        let taps = conv_tap_contributions(
            Array2::<f64>::zeros((4, 3)).view(),
            Array2::ones((2, 3)).view(),
            Array1::zeros(3).view(),
            ActivationStrategy::Silu,
        )
        .unwrap();
        assert!(taps.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_tap_is_phi() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        let k = array![[0.7, 0.2]];
        let taps = conv_tap_contributions(x.view(), k.view(), Array1::zeros(2).view(), ActivationStrategy::Silu).unwrap();
        for p in 0..2 {
            for e in 0..2 {
                assert_eq!(taps[[p, 0, e]], crate::real::silu(k[[0, e]] * x[[p, e]]));
            }
        }
    }

    #[test]
    fn source_after_target_is_rejected() {
        let config = cfg(Variant::Mamba1, 1, 2);
        let w = generate_random_model::<f64>(&config, 1).unwrap();
        let out = model_forward(&[1, 2, 3], &w, &config).unwrap();
        let (m, _) = layer_contributions(&out.traces[0], &w.layers[0], ActivationStrategy::Silu, Materialize::Dense).unwrap();
        let taps = conv_tap_contributions(
            out.traces[0].block.x_proj.view(),
            w.layers[0].conv_weight.view(),
            w.layers[0].conv_bias.view(),
            ActivationStrategy::Silu,
        )
        .unwrap();
        let err = ssm_contribution(&m, taps.view(), w.layers[0].d_skip.view(), 2, 1).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn pointwise_matches_row_scatter() {
        for variant in [Variant::Mamba1, Variant::Mamba2] {
            let config = cfg(variant, 1, 3);
            let w = generate_random_model::<f64>(&config, 5).unwrap();
            let out = model_forward(&[1, 4, 2, 7, 3], &w, &config).unwrap();
            let tr = &out.traces[0];
            let (m, _) = layer_contributions(tr, &w.layers[0], ActivationStrategy::Silu, Materialize::Dense).unwrap();
            let taps = conv_tap_contributions(
                tr.block.x_proj.view(),
                w.layers[0].conv_weight.view(),
                w.layers[0].conv_bias.view(),
                ActivationStrategy::Silu,
            )
            .unwrap();
            for i in 0..5 {
                let row = ssm_contributions_row(&m, taps.view(), w.layers[0].d_skip.view(), i);
                for j in 0..=i {
                    let v = ssm_contribution(&m, taps.view(), w.layers[0].d_skip.view(), j, i).unwrap();
                    assert!((&v - &row.row(j)).iter().all(|d| d.abs() < 1e-13));
                }
            }
        }
    }

    #[test]
    fn identity_sum_is_scan_output() {
        for variant in [Variant::Mamba1, Variant::Mamba2] {
            let config = cfg(variant, 1, 4).with_strategy(ActivationStrategy::Identity);
            let w = generate_random_model::<f64>(&config, 11).unwrap();
            let out = model_forward(&[0, 3, 5, 1, 9, 2], &w, &config).unwrap();
            let tr = &out.traces[0];
            let (m, _) = layer_contributions(tr, &w.layers[0], ActivationStrategy::Identity, Materialize::Dense).unwrap();
            let taps = conv_tap_contributions(
                tr.block.x_proj.view(),
                w.layers[0].conv_weight.view(),
                w.layers[0].conv_bias.view(),
                ActivationStrategy::Identity,
            )
            .unwrap();
            let scan = apply_hidden_attention(&m, tr.block.phi.view(), w.layers[0].d_skip.view()).unwrap();
            assert!((&scan - &tr.block.upsilon).iter().all(|v| v.abs() < 1e-10));
            for i in 0..6 {
                let sum = ssm_contributions_row(&m, taps.view(), w.layers[0].d_skip.view(), i).sum_axis(Axis(0));
                let diff = (&sum - &tr.block.upsilon.row(i)).mapv(f64::abs);
                assert!(diff.iter().all(|&v| v < 1e-10), "{variant:?} row {i}");
            }
        }
    }

    #[test]
    fn identity_reconstruction_is_exact() {
        for variant in [Variant::Mamba1, Variant::Mamba2] {
            let config = cfg(variant, 2, 4);
            let w = generate_random_model::<f64>(&config, 3).unwrap();
            let err = reconstruction_error(&w, &config, &[1, 5, 2, 8, 0, 11, 4], ActivationStrategy::Identity).unwrap();
            assert_eq!(err.per_layer.len(), 2);
            assert!(err.per_layer.iter().all(|&e| e <= 1e-10), "{variant:?}: {:?}", err.per_layer);
        }
    }

    #[test]
    fn single_tap_silu_is_exact() {
        for variant in [Variant::Mamba1, Variant::Mamba2] {
            let config = cfg(variant, 2, 1);
            let mut w = generate_random_model::<f64>(&config, 8).unwrap();
            zero_conv_bias(&mut w);
            let err = reconstruction_error(&w, &config, &[3, 1, 4, 1, 5], ActivationStrategy::Silu).unwrap();
            assert!(err.per_layer.iter().all(|&e| e <= 1e-10), "{variant:?}: {:?}", err.per_layer);
        }
    }

    #[test]
    fn silu_wide_conv_has_positive_error() {
        for variant in [Variant::Mamba1, Variant::Mamba2] {
            let config = cfg(variant, 2, 4);
            let w = generate_random_model::<f64>(&config, 2).unwrap();
            let err = reconstruction_error(&w, &config, &[3, 1, 4, 1, 5, 9, 2], ActivationStrategy::Silu).unwrap();
            assert!(err.per_layer.iter().all(|&e| e > 0.0 && e.is_finite()), "{:?}", err.per_layer);
        }
    }

    #[test]
    fn zero_gate_gives_zero_contributions() {
        let config = cfg(Variant::Mamba1, 1, 3);
        let mut w = generate_random_model::<f64>(&config, 4).unwrap();
        w.layers[0].in_proj_z.fill(0.0);
        let out = model_forward(&[1, 2, 3], &w, &config).unwrap();
        let (_, t) = layer_contributions(&out.traces[0], &w.layers[0], ActivationStrategy::Silu, Materialize::Dense).unwrap();
        assert!(t.t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_group_scale_gives_zero_contributions() {
        let config = cfg(Variant::Mamba2, 1, 3);
        let mut w = generate_random_model::<f64>(&config, 4).unwrap();
        if let SsmWeights::Mamba2 { gn_gamma, .. } = &mut w.layers[0].ssm {
            gn_gamma.fill(0.0);
        }
        let out = model_forward(&[1, 2, 3], &w, &config).unwrap();
        let (_, t) = layer_contributions(&out.traces[0], &w.layers[0], ActivationStrategy::Silu, Materialize::Dense).unwrap();
        assert!(t.t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_embedding_row_contributes_nothing_at_first_layer() {
        for variant in [Variant::Mamba1, Variant::Mamba2] {
            let config = cfg(variant, 1, 3);
            let mut w = generate_random_model::<f64>(&config, 6).unwrap();
            zero_conv_bias(&mut w);
            w.embed.row_mut(0).fill(0.0);
            let out = model_forward(&[4, 0, 7, 2], &w, &config).unwrap();
            let (_, t) = layer_contributions(&out.traces[0], &w.layers[0], ActivationStrategy::Silu, Materialize::Dense).unwrap();
            for i in 1..4 {
                assert!(t.get(i, 1).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn mamba2_single_channel_groups_match_direct_recomputation() {
        // one channel per group: centering removes everything, leaving only beta
        let config = ModelConfig::new(Variant::Mamba2, 1, 2, 2, 2, 4, 6);
        let w = generate_random_model::<f64>(&config, 9).unwrap();
        let out = model_forward(&[1, 3, 5], &w, &config).unwrap();
        let (_, t) = layer_contributions(&out.traces[0], &w.layers[0], ActivationStrategy::Silu, Materialize::Dense).unwrap();
        assert!(t.t.iter().all(|&v| v.abs() < 1e-15));
        let SsmWeights::Mamba2 { gn_beta, .. } = &w.layers[0].ssm else { unreachable!() };
        let expect = gn_beta.dot(&w.layers[0].out_proj);
        for i in 0..3 {
            let diff = (&out.traces[0].block.y.row(i) - &expect).mapv(f64::abs);
            assert!(diff.iter().all(|&v| v < 1e-12));
        }
    }

    #[test]
    fn dense_and_streaming_agree() {
        let config = cfg(Variant::Mamba2, 1, 2);
        let w = generate_random_model::<f64>(&config, 10).unwrap();
        let out = model_forward(&[1, 3, 5, 2], &w, &config).unwrap();
        let (_, a) = layer_contributions(&out.traces[0], &w.layers[0], ActivationStrategy::Silu, Materialize::Dense).unwrap();
        let (_, b) = layer_contributions(&out.traces[0], &w.layers[0], ActivationStrategy::Silu, Materialize::Streaming).unwrap();
        assert_eq!(a.t, b.t);
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let c1 = cfg(Variant::Mamba1, 1, 2);
        let c2 = cfg(Variant::Mamba2, 1, 2);
        let w1 = generate_random_model::<f64>(&c1, 1).unwrap();
        let w2 = generate_random_model::<f64>(&c2, 1).unwrap();
        let out = model_forward(&[1, 2], &w1, &c1).unwrap();
        let m = build_hidden_attention(&out.traces[0].block.ssm, 16, 0, Materialize::Dense).unwrap();
        let err = contributions_mamba2(&out.traces[0], &m, &w2.layers[0], ActivationStrategy::Silu).unwrap_err();
        assert!(matches!(err, Error::VariantMismatch { .. }));
    }

    #[test]
    fn f32_identity_reconstruction_is_close() {
        let mut config = cfg(Variant::Mamba2, 2, 4);
        config.dtype = Dtype::F32;
        let w = generate_random_model::<f32>(&config, 12).unwrap();
        let tokens = [1, 5, 2, 8, 0, 11, 4];
        let err = reconstruction_error(&w, &config, &tokens, ActivationStrategy::Identity).unwrap();
        let out = model_forward(&tokens, &w, &config.forward_config(ActivationStrategy::Identity)).unwrap();
        for (l, e) in err.per_layer.iter().enumerate() {
            let scale = out.traces[l]
                .block
                .y
                .outer_iter()
                .map(|r| r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / tokens.len() as f64;
            assert!(*e <= 1e-4 * scale.max(1.0), "layer {l}: {e} vs {scale}");
        }
    }
}
