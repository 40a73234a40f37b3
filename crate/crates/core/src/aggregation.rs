//! Reductions of contribution tensors to `N x N` attribution matrices.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::decomposition::ContributionTensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpNorm {
    L1,
    L2,
    Inf,
}

impl LpNorm {
    pub fn norm<T: Real>(self, v: ArrayView1<T>) -> f64 {
        let it = v.iter().map(|x| x.as_f64().abs());
        match self {
            LpNorm::L1 => it.sum(),
            LpNorm::L2 => it.map(|a| a * a).sum::<f64>().sqrt(),
            LpNorm::Inf => it.fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lp(LpNorm),
    Alti,
    AltiLogit,
    MambaAttention,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Lp(LpNorm::L1),
        Method::Lp(LpNorm::L2),
        Method::Lp(LpNorm::Inf),
        Method::Alti,
        Method::AltiLogit,
        Method::MambaAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lp(LpNorm::L1) => "lp:1",
            Method::Lp(LpNorm::L2) => "lp:2",
            Method::Lp(LpNorm::Inf) => "lp:inf",
            Method::Alti => "alti",
            Method::AltiLogit => "alti-logit",
            Method::MambaAttention => "mamba-attention",
        }
    }

    /// Whether the method collapses all layers into one matrix.
    pub fn is_cross_layer(self) -> bool {
        matches!(self, Method::AltiLogit)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "l1" | "lp1" => "lp:1",
            "l2" | "lp2" => "lp:2",
            "linf" | "lp:∞" => "lp:inf",
            "alti_logit" => "alti-logit",
            "mamba_attention" => "mamba-attention",
            other => other,
        };
        Method::ALL
            .into_iter()
            .find(|m| m.name() == alias)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerTag {
    Layer(usize),
    Aggregated,
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerTag::Layer(l) => write!(f, "{l}"),
            LayerTag::Aggregated => f.write_str("aggregated"),
        }
    }
}

/// Scores `c[i][j]` of source `j` for target `i`; zero above the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub scores: Array2<f64>,
    pub method: Method,
    pub layer: LayerTag,
    /// Rows whose raw ALTI scores were all clipped to zero.
    pub degenerate_rows: Vec<usize>,
}

impl AttributionMatrix {
    pub fn new(scores: Array2<f64>, method: Method, layer: LayerTag) -> Self {
        AttributionMatrix {
            scores,
            method,
            layer,
            degenerate_rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `c[i][j] = ||t[i][j]||_p`, unnormalized.
pub fn aggregate_lp<T: Real>(t: &ContributionTensor<T>, p: LpNorm) -> AttributionMatrix {
    let n = t.len();
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            c[[i, j]] = p.norm(t.get(i, j));
        }
    }
    AttributionMatrix::new(c, Method::Lp(p), LayerTag::Layer(t.layer))
}

fn l1_gap<T: Real>(y: ArrayView1<T>, v: impl Iterator<Item = f64>) -> f64 {
    y.iter().zip(v).map(|(&a, b)| (a.as_f64() - b).abs()).sum()
}

/// Raw ALTI scores `max(0, ||y||_1 - ||y - v_j||_1)` over `sources`, then
/// normalized. `None` when every score is clipped.
fn alti_row<'a, T: Real + 'a>(y: ArrayView1<T>, sources: impl Iterator<Item = (usize, Vec<f64>)>, out: &mut [f64]) -> bool {
    let y_norm: f64 = y.iter().map(|v| v.as_f64().abs()).sum();
    let mut total = 0.0;
    for (j, v) in sources {
        let raw = (y_norm - l1_gap(y, v.into_iter())).max(0.0);
        out[j] = raw;
        total += raw;
    }
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
        true
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
        false
    }
}

/// Row-normalized `[||y_i||_1 - ||y_i - t[i][j]||_1]_+`.
///
/// `y` is expected to be `t.reconstructed()`; degenerate rows are zero and
/// listed in `degenerate_rows`.
pub fn aggregate_alti<T: Real>(t: &ContributionTensor<T>, y: ArrayView2<T>) -> Result<AttributionMatrix> {
    let n = t.len();
    if y.dim() != (n, t.dim()) {
        return Err(Error::Shape(format!("alti output {:?}, contributions {n}x{}", y.dim(), t.dim())));
    }
    let rows: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; n];
            let sources = (0..=i).map(|j| (j, t.get(i, j).iter().map(|v| v.as_f64()).collect()));
            let ok = alti_row(y.row(i), sources, &mut out[..=i]);
            (out, ok)
        })
        .collect();
    let mut c = Array2::zeros((n, n));
    let mut degenerate = Vec::new();
    for (i, (row, ok)) in rows.into_iter().enumerate() {
        c.row_mut(i).assign(&ArrayView1::from(&row));
        if !ok {
            degenerate.push(i);
        }
    }
    Ok(AttributionMatrix {
        scores: c,
        method: Method::Alti,
        layer: LayerTag::Layer(t.layer),
        degenerate_rows: degenerate,
    })
}

/// Layer mixing matrices `P^(l)` and their running products
/// `R^(l) = P^(l) ... P^(1)`, with `r[0] = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStream {
    pub p: Vec<Array2<f64>>,
    pub r: Vec<Array2<f64>>,
}

/// ALTI over each layer's update `t[i][j]` plus the residual self-term
/// `[i == j] x_in_i`, scored against `x_in_i + sum_j t[i][j]`. Degenerate rows
/// fall back to the identity row.
pub fn build_residual_stream<T: Real>(contributions: &[ContributionTensor<T>], x_in: &[ArrayView2<T>]) -> Result<ResidualStream> {
    if contributions.len() != x_in.len() {
        return Err(Error::Shape(format!(
            "{} contribution tensors but {} residual inputs",
            contributions.len(),
            x_in.len()
        )));
    }
    let n = contributions.first().map_or_else(|| x_in.first().map_or(0, |x| x.nrows()), |t| t.len());
    let mut r = vec![Array2::eye(n)];
    let mut ps = Vec::with_capacity(contributions.len());
    for (t, x) in contributions.iter().zip(x_in) {
        if t.len() != n || x.dim() != (n, t.dim()) {
            return Err(Error::Shape(format!("layer {}: residual input {:?}, contributions {n}x{}", t.layer, x.dim(), t.dim())));
        }
        let y = t.reconstructed() + x;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut out = vec![0.0; n];
                let sources = (0..=i).map(|j| {
                    let v: Vec<f64> = if j == i {
                        t.get(i, j).iter().zip(x.row(i).iter()).map(|(a, b)| a.as_f64() + b.as_f64()).collect()
                    } else {
                        t.get(i, j).iter().map(|v| v.as_f64()).collect()
                    };
                    (j, v)
                });
                if !alti_row(y.row(i), sources, &mut out[..=i]) {
                    out[i] = 1.0;
                }
                out
            })
            .collect();
        let mut p = Array2::zeros((n, n));
        for (i, row) in rows.into_iter().enumerate() {
            p.row_mut(i).assign(&ArrayView1::from(&row));
        }
        let next = p.dot(r.last().expect("r starts with the identity"));
        ps.push(p);
        r.push(next);
    }
    Ok(ResidualStream { p: ps, r })
}

/// Per-layer logit deltas `delta[i][j] = t[i][j] . U_{w(i)}`.
pub fn logit_deltas<T: Real>(t: &ContributionTensor<T>, head: ArrayView2<T>, targets: &[usize]) -> Result<Array2<f64>> {
    let n = t.len();
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} positions", targets.len())));
    }
    if head.ncols() != t.dim() {
        return Err(Error::Shape(format!("output head width {} but contributions have {}", head.ncols(), t.dim())));
    }
    let mut delta = Array2::zeros((n, n));
    for (i, &w) in targets.iter().enumerate() {
        if w >= head.nrows() {
            return Err(Error::TokenOutOfRange {
                position: i,
                id: w,
                vocab: head.nrows(),
            });
        }
        let u = head.row(w);
        for j in 0..=i {
            delta[[i, j]] = t.get(i, j).iter().zip(u.iter()).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum();
        }
    }
    Ok(delta)
}

/// `C = sum_l delta^(l) R^(l-1)`: signed logit influence of each input token.
pub fn aggregate_alti_logit<T: Real>(
    contributions: &[ContributionTensor<T>],
    residual: &ResidualStream,
    head: ArrayView2<T>,
    targets: &[usize],
) -> Result<AttributionMatrix> {
    if head.nrows() == 0 {
        return Err(Error::Contract("alti-logit needs an output embedding".into()));
    }
    if residual.r.len() < contributions.len() {
        return Err(Error::Shape(format!(
            "residual stream covers {} layers, got {} contribution tensors",
            residual.r.len().saturating_sub(1),
            contributions.len()
        )));
    }
    let n = targets.len();
    let mut c = Array2::zeros((n, n));
    for (l, t) in contributions.iter().enumerate() {
        let delta = logit_deltas(t, head, targets)?;
        if residual.r[l].dim() != (n, n) {
            return Err(Error::Shape(format!("R^({l}) is {:?}, expected {n}x{n}", residual.r[l].dim())));
        }
        c += &delta.dot(&residual.r[l]);
    }
    Ok(AttributionMatrix::new(c, Method::AltiLogit, LayerTag::Aggregated))
}
