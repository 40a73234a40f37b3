pub mod approx_error;
pub mod decompose;
pub mod eval_copy;
pub mod gen_model;

use std::fs;
use std::path::Path;
use std::str::FromStr;

use latim_core::aggregation::Method;
use latim_core::bundle::{load_bundle, read_manifest};
use latim_core::eval::Metric;
use latim_core::hidden_attention::{Materialize, DEFAULT_STREAM_THRESHOLD};
use latim_core::{ActivationStrategy, Dtype, ModelConfig, ModelWeights};

use crate::error::{CliError, CliResult};
use crate::STREAM_THRESHOLD_ENV;

pub enum LoadedModel {
    F32(ModelConfig, ModelWeights<f32>),
    F64(ModelConfig, ModelWeights<f64>),
}

impl LoadedModel {
    pub fn load(path: &Path) -> CliResult<Self> {
        let manifest = read_manifest(path)?;
        Ok(match manifest.config.dtype {
            Dtype::F32 => {
                let (c, w) = load_bundle::<f32>(path)?;
                LoadedModel::F32(c, w)
            }
            Dtype::F64 => {
                let (c, w) = load_bundle::<f64>(path)?;
                LoadedModel::F64(c, w)
            }
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            LoadedModel::F32(c, _) | LoadedModel::F64(c, _) => c,
        }
    }
}

/// Calls a generic `fn(&ModelWeights<T>, &ModelConfig, ...)` with the bundle's dtype.
macro_rules! dispatch {
    ($model:expr, $f:ident ( $($arg:expr),* )) => {
        match $model {
            $crate::commands::LoadedModel::F32(c, w) => $f::<f32>(w, c, $($arg),*),
            $crate::commands::LoadedModel::F64(c, w) => $f::<f64>(w, c, $($arg),*),
        }
    };
}
pub(crate) use dispatch;

pub fn parse_list<T: FromStr<Err = latim_core::Error>>(items: &[String]) -> CliResult<Vec<T>> {
    let out = items
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<Vec<T>>>()?;
    if out.is_empty() {
        return Err(CliError::Usage("empty list".into()));
    }
    Ok(out)
}

pub fn parse_strategy(s: &str) -> CliResult<ActivationStrategy> {
    s.parse().map_err(|e: latim_core::Error| CliError::Usage(e.to_string()))
}

pub fn parse_ids(text: &str) -> CliResult<Vec<usize>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Data(format!("bad token id `{s}`"))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerArg {
    All,
    Aggregated,
    Index(usize),
    BestBy(Metric),
}

impl LayerArg {
    pub fn parse(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(LayerArg::All);
        }
        if s == "aggregated" {
            return Ok(LayerArg::Aggregated);
        }
        if let Some(m) = s.strip_prefix("best-by:") {
            return m.parse().map(LayerArg::BestBy).map_err(|e: latim_core::Error| CliError::Usage(e.to_string()));
        }
        s.parse()
            .map(LayerArg::Index)
            .map_err(|_| CliError::Usage(format!("layer must be an index, all, aggregated or best-by:<metric>, got `{s}`")))
    }

    /// Rejects combinations that cannot produce output.
    pub fn check(self, methods: &[Method]) -> CliResult<()> {
        let cross = methods.iter().any(|m| m.is_cross_layer());
        let per_layer = methods.iter().any(|m| !m.is_cross_layer());
        match self {
            LayerArg::Index(_) | LayerArg::BestBy(_) if cross => Err(CliError::Usage(
                "alti-logit aggregates all layers; use --layer all or --layer aggregated".into(),
            )),
            LayerArg::Aggregated if per_layer => Err(CliError::Usage(
                "--layer aggregated only applies to alti-logit".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub fn stream_threshold() -> CliResult<usize> {
    match std::env::var(STREAM_THRESHOLD_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{STREAM_THRESHOLD_ENV} must be an integer, got `{raw}`"))),
        Err(_) => Ok(DEFAULT_STREAM_THRESHOLD),
    }
}

/// Dense unless `--stream`; sequences longer than the threshold need `--stream`.
pub fn materialize(len: usize, stream: bool) -> CliResult<Materialize> {
    if stream {
        return Ok(Materialize::Streaming);
    }
    let threshold = stream_threshold()?;
    if len > threshold {
        return Err(CliError::Data(format!(
            "sequence length {len} exceeds the dense threshold {threshold}; pass --stream"
        )));
    }
    Ok(Materialize::Dense)
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn method_file_stem(m: Method) -> String {
    m.name().replace(':', "-")
}

/// Left-aligned first column, right-aligned numeric columns.
pub fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (k, cell) in r.iter().enumerate() {
            width[k] = width[k].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 { format!("{c:<w$}", w = width[k]) } else { format!("{c:>w$}", w = width[k]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
