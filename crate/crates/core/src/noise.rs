//! Corruption function for denoising auto-encoding: span deletion, span
//! masking, then a displacement-bounded local shuffle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, DOMAIN_NOISE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseUnit {
    #[default]
    Token,
    /// A unit is a word-initial token plus any following continuation pieces.
    Word,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub p_delete: f64,
    pub p_mask: f64,
    pub shuffle_window: usize,
    pub unit: NoiseUnit,
    pub span: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_delete: 0.2,
            p_mask: 0.1,
            shuffle_window: 3,
            unit: NoiseUnit::Token,
            span: 1,
        }
    }
}

impl NoiseConfig {
    /// No corruption at all: plain auto-encoding.
    pub fn identity() -> Self {
        NoiseConfig {
            p_delete: 0.0,
            p_mask: 0.0,
            shuffle_window: 1,
            unit: NoiseUnit::Token,
            span: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_delete", self.p_delete), ("p_mask", self.p_mask)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.shuffle_window < 1 {
            return Err(Error::Config("shuffle_window must be >= 1".into()));
        }
        if self.span < 1 {
            return Err(Error::Config("span must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generator for one sentence's noise draws, keyed by `(epoch, sentence)`.
pub fn noise_rng(seed: u64, epoch: u64, sentence: u64) -> ChaCha8Rng {
    stream_rng(seed, DOMAIN_NOISE, epoch, sentence)
}

/// Corrupt `tokens` (content ids only, no specials). Steps, in order:
/// delete each span with `p_delete` (keeping one span if all would go),
/// replace each surviving span by `mask_id` with `p_mask`, then reorder
/// units by the key `i + U[0, window)`.
///
/// `continues_word` marks tokens that belong to the preceding token's word;
/// it only matters for [`NoiseUnit::Word`].
pub fn noise(
    tokens: &[usize],
    cfg: &NoiseConfig,
    mask_id: usize,
    continues_word: impl Fn(usize) -> bool,
    rng: &mut impl Rng,
) -> Vec<usize> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut units: Vec<Vec<usize>> = Vec::new();
    for &t in tokens {
        match (cfg.unit, units.last_mut()) {
            (NoiseUnit::Word, Some(last)) if continues_word(t) => last.push(t),
            _ => units.push(vec![t]),
        }
    }

    let span = cfg.span.max(1);
    let n_spans = units.len().div_ceil(span);
    let mut keep: Vec<bool> = (0..n_spans)
        .map(|_| rng.gen::<f64>() >= cfg.p_delete)
        .collect();
    if !keep.iter().any(|&k| k) {
        keep[rng.gen_range(0..n_spans)] = true;
    }

    let mut survivors: Vec<Vec<usize>> = Vec::new();
    for (s, chunk) in units.chunks(span).enumerate() {
        if !keep[s] {
            continue;
        }
        let masked = rng.gen::<f64>() < cfg.p_mask;
        for unit in chunk {
            if masked {
                survivors.push(vec![mask_id; unit.len()]);
            } else {
                survivors.push(unit.clone());
            }
        }
    }

    let window = cfg.shuffle_window.max(1) as f64;
    let mut keyed: Vec<(f64, Vec<usize>)> = survivors
        .into_iter()
        .enumerate()
        .map(|(i, u)| (i as f64 + rng.gen::<f64>() * window, u))
        .collect();
    if cfg.shuffle_window > 1 {
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    keyed.into_iter().flat_map(|(_, u)| u).collect()
}
