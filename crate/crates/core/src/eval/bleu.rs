//! Corpus BLEU over token sequences: clipped 1-4-gram precisions, geometric
//! mean, brevity penalty.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn collect<T: Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<Self> {
        if hyps.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if hyps.len() != refs.len() {
            return Err(Error::Invalid(format!(
                "{} hypotheses for {} references",
                hyps.len(),
                refs.len()
            )));
        }
        let mut st = BleuStats::default();
        for (h, r) in hyps.iter().zip(refs) {
            st.hyp_len += h.len();
            st.ref_len += r.len();
            for n in 1..=MAX_ORDER {
                let hc = ngram_counts(h, n);
                let rc = ngram_counts(r, n);
                st.totals[n - 1] += h.len().saturating_sub(n - 1);
                st.matches[n - 1] += hc
                    .iter()
                    .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                    .sum::<usize>();
            }
        }
        Ok(st)
    }

    /// Score in `[0, 100]`. Orders for which the hypotheses contain no
    /// n-grams at all are left out of the geometric mean; with smoothing,
    /// orders above one get add-one counts.
    pub fn score(&self, smooth: bool) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..MAX_ORDER {
            if self.totals[n] == 0 {
                continue;
            }
            let (m, t) = if smooth && n > 0 {
                (self.matches[n] as f64 + 1.0, self.totals[n] as f64 + 1.0)
            } else {
                (self.matches[n] as f64, self.totals[n] as f64)
            };
            if m == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
            orders += 1;
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
        if orders == 0 {
            return 0.0;
        }
        (100.0 * bp * (log_sum / orders as f64).exp()).clamp(0.0, 100.0)
    }
}

fn ngram_counts<T: Hash + Eq>(xs: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if xs.len() >= n {
        for w in xs.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Unsmoothed corpus BLEU with one reference per hypothesis.
pub fn corpus_bleu<T: Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    Ok(BleuStats::collect(hyps, refs)?.score(false))
}

pub fn corpus_bleu_smoothed<T: Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    Ok(BleuStats::collect(hyps, refs)?.score(true))
}
