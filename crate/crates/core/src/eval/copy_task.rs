//! Synthetic copying task: `source ++ [sep] ++ source`.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::aggregation::AttributionMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_SOURCE_LEN: usize = 50;
pub const DEFAULT_VOCAB: usize = 32;

/// The three ids at the top of the vocabulary are never drawn as content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservedIds {
    pub bos: usize,
    pub sep: usize,
    pub pad: usize,
}

impl ReservedIds {
    pub fn for_vocab(vocab: usize) -> Result<Self> {
        if vocab < 4 {
            return Err(Error::Config(format!(
                "copy task needs a vocabulary of at least 4 ids (3 reserved), got {vocab}"
            )));
        }
        Ok(ReservedIds {
            bos: vocab - 3,
            sep: vocab - 2,
            pad: vocab - 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopyInstance {
    pub source: Vec<usize>,
    pub sep: usize,
}

impl CopyInstance {
    pub fn source_len(&self) -> usize {
        self.source.len()
    }

    pub fn len(&self) -> usize {
        2 * self.source.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn target(&self) -> &[usize] {
        &self.source
    }

    pub fn sequence(&self) -> Vec<usize> {
        let mut seq = Vec::with_capacity(self.len());
        seq.extend_from_slice(&self.source);
        seq.push(self.sep);
        seq.extend_from_slice(&self.source);
        seq
    }
}

/// `n` instances of `s` content tokens drawn uniformly from `[0, vocab - 3)`.
pub fn gen_copy_batch(n: usize, s: usize, vocab: usize, seed: u64) -> Result<Vec<CopyInstance>> {
    let reserved = ReservedIds::for_vocab(vocab)?;
    if s == 0 {
        return Err(Error::Config("copy source length must be at least 1".into()));
    }
    let hi = u32::try_from(reserved.bos).map_err(|_| Error::Config(format!("vocabulary {vocab} too large")))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| CopyInstance {
            source: (0..s).map(|_| rng.random_range(0..hi) as usize).collect(),
            sep: reserved.sep,
        })
        .collect())
}

/// Gold interactions between copy rows and source columns, `S x S`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldMask {
    pub g: Array2<bool>,
}

impl GoldMask {
    pub fn row_sums(&self) -> Vec<usize> {
        self.g.outer_iter().map(|r| r.iter().filter(|&&b| b).count()).collect()
    }
}

/// Copy row `i` is aligned with source `i`; gold covers `i - 1 ..= i + 1`
/// clipped to the source block.
pub fn gold_mask(s: usize) -> GoldMask {
    GoldMask {
        g: Array2::from_shape_fn((s, s), |(i, j)| i.abs_diff(j) <= 1),
    }
}

/// Rows `S + i` (position `S` is the separator, whose next token is the first
/// copied token) against source columns `0..S`.
pub fn extract_copy_block(c: &AttributionMatrix, s: usize) -> Result<Array2<f64>> {
    let n = 2 * s + 1;
    if c.scores.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "copy block needs a {n}x{n} matrix for S = {s}, got {:?}",
            c.scores.dim()
        )));
    }
    Ok(c.scores.slice(s![s..2 * s, 0..s]).to_owned())
}
