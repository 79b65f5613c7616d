use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{EOS, PAD};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, DOMAIN_BATCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mt,
    Dae,
}

/// Row-major `[batch, len]` id matrix, right-padded with `PAD`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let len = rows.iter().map(Vec::len).max().unwrap_or(0);
        if rows.is_empty() || len == 0 {
            return Err(Error::Invalid("token batch needs a non-empty row".into()));
        }
        let mut ids = vec![PAD; rows.len() * len];
        for (b, r) in rows.iter().enumerate() {
            ids[b * len..b * len + r.len()].copy_from_slice(r);
        }
        Ok(TokenBatch {
            ids,
            batch: rows.len(),
            len,
        })
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }

    /// `true` on real tokens, `false` on padding.
    pub fn valid(&self) -> Vec<bool> {
        self.ids.iter().map(|&t| t != PAD).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|b| self.row(b).iter().filter(|&&t| t != PAD).count())
            .collect()
    }

    pub fn n_tokens(&self) -> usize {
        self.ids.iter().filter(|&&t| t != PAD).count()
    }

    /// The unpadded prefix of row `b`.
    pub fn trimmed(&self, b: usize) -> &[usize] {
        let r = self.row(b);
        let n = r.iter().position(|&t| t == PAD).unwrap_or(r.len());
        &r[..n]
    }
}

/// One training batch. Sources end in `EOS`; the decoder reads
/// `[code, y..]` and predicts `[y.., EOS]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub task: Task,
    pub src_lang: String,
    pub tgt_lang: String,
    pub src: TokenBatch,
    pub tgt_in: TokenBatch,
    pub tgt_out: TokenBatch,
}

impl Batch {
    pub fn new(
        task: Task,
        src_lang: &str,
        tgt_lang: &str,
        tgt_code: usize,
        examples: &[Example],
    ) -> Result<Self> {
        if task == Task::Dae && src_lang != tgt_lang {
            return Err(Error::Invalid(format!(
                "denoising batch must be monolingual, got {src_lang}->{tgt_lang}"
            )));
        }
        let src: Vec<Vec<usize>> = examples.iter().map(|e| with_eos(&e.src)).collect();
        let tgt_in: Vec<Vec<usize>> = examples
            .iter()
            .map(|e| {
                std::iter::once(tgt_code)
                    .chain(e.tgt.iter().copied())
                    .collect()
            })
            .collect();
        let tgt_out: Vec<Vec<usize>> = examples.iter().map(|e| with_eos(&e.tgt)).collect();
        Ok(Batch {
            task,
            src_lang: src_lang.to_string(),
            tgt_lang: tgt_lang.to_string(),
            src: TokenBatch::from_rows(&src)?,
            tgt_in: TokenBatch::from_rows(&tgt_in)?,
            tgt_out: TokenBatch::from_rows(&tgt_out)?,
        })
    }

    pub fn n_sentences(&self) -> usize {
        self.src.batch
    }
}

fn with_eos(xs: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(xs.len() + 1);
    v.extend_from_slice(xs);
    v.push(EOS);
    v
}

/// An encoded source/target pair without specials. For denoising the source
/// is the corrupted copy of the target.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    /// Cap on padded source plus target positions per batch.
    pub max_tokens: usize,
    pub max_sentences: usize,
    /// Content tokens per side; longer sentences are truncated.
    pub max_len: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            max_tokens: 1024,
            max_sentences: 64,
            max_len: 32,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sentences == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "max_sentences and max_len must be >= 1".into(),
            ));
        }
        if self.max_tokens < 2 * (self.max_len + 1) {
            return Err(Error::Config(format!(
                "max_tokens = {} cannot hold one sentence of max_len {}",
                self.max_tokens, self.max_len
            )));
        }
        Ok(())
    }
}

/// Which stream a batch sequence belongs to, for labelling and seeding.
#[derive(Clone, Debug)]
pub struct StreamKey<'a> {
    pub task: Task,
    pub src_lang: &'a str,
    pub tgt_lang: &'a str,
    pub tgt_code: usize,
    /// Distinguishes streams that share a seed.
    pub stream: u64,
}

/// Length-bucketed batches in a seeded order. Examples are shuffled, stably
/// sorted by length, cut greedily under the token and sentence caps, and the
/// resulting batches shuffled again.
pub fn make_batches(
    examples: &[Example],
    key: &StreamKey<'_>,
    cfg: &BatchConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, DOMAIN_BATCH, key.stream, epoch);
    let mut truncated = 0usize;
    let mut items: Vec<Example> = examples
        .iter()
        .filter(|e| !e.src.is_empty() && !e.tgt.is_empty())
        .map(|e| {
            if e.src.len() > cfg.max_len || e.tgt.len() > cfg.max_len {
                truncated += 1;
            }
            Example {
                src: e.src[..e.src.len().min(cfg.max_len)].to_vec(),
                tgt: e.tgt[..e.tgt.len().min(cfg.max_len)].to_vec(),
            }
        })
        .collect();
    if truncated > 0 {
        log::warn!(
            "{} of {} {}->{} sentences truncated to {} tokens",
            truncated,
            examples.len(),
            key.src_lang,
            key.tgt_lang,
            cfg.max_len
        );
    }
    items.shuffle(&mut rng);
    items.sort_by_key(|e| (e.src.len().max(e.tgt.len()), e.src.len()));

    let mut batches = Vec::new();
    let mut current: Vec<Example> = Vec::new();
    let (mut src_w, mut tgt_w) = (0usize, 0usize);
    for e in items {
        let s = src_w.max(e.src.len() + 1);
        let t = tgt_w.max(e.tgt.len() + 1);
        let n = current.len() + 1;
        if !current.is_empty() && (n > cfg.max_sentences || n * (s + t) > cfg.max_tokens) {
            batches.push(Batch::new(
                key.task,
                key.src_lang,
                key.tgt_lang,
                key.tgt_code,
                &current,
            )?);
            current.clear();
            src_w = e.src.len() + 1;
            tgt_w = e.tgt.len() + 1;
        } else {
            src_w = s;
            tgt_w = t;
        }
        current.push(e);
    }
    if !current.is_empty() {
        batches.push(Batch::new(
            key.task,
            key.src_lang,
            key.tgt_lang,
            key.tgt_code,
            &current,
        )?);
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}
