use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::eval::bleu::corpus_bleu;
use crate::eval::decode::greedy_decode;
use crate::model::ModelGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub src: String,
    pub tgt: String,
    pub bleu: f64,
    pub sentences: usize,
}

/// BLEU per direction, split into directions seen in training and the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub supervised: Vec<DirectionScore>,
    pub zero_shot: Vec<DirectionScore>,
    pub supervised_avg: Option<f64>,
    pub zero_shot_avg: Option<f64>,
}

fn mean(xs: &[DirectionScore]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().map(|d| d.bleu).sum::<f64>() / xs.len() as f64)
    }
}

impl EvalReport {
    pub fn new(supervised: Vec<DirectionScore>, zero_shot: Vec<DirectionScore>) -> Self {
        EvalReport {
            supervised_avg: mean(&supervised),
            zero_shot_avg: mean(&zero_shot),
            supervised,
            zero_shot,
        }
    }

    pub fn get(&self, src: &str, tgt: &str) -> Option<f64> {
        self.supervised
            .iter()
            .chain(&self.zero_shot)
            .find(|d| d.src == src && d.tgt == tgt)
            .map(|d| d.bleu)
    }

    /// Average over the zero-shot directions that satisfy `pred`.
    pub fn zero_shot_avg_where(&self, pred: impl Fn(&str, &str) -> bool) -> Option<f64> {
        let sel: Vec<DirectionScore> = self
            .zero_shot
            .iter()
            .filter(|d| pred(&d.src, &d.tgt))
            .cloned()
            .collect();
        mean(&sel)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }
}

fn fmt_avg(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (title, rows, avg) in [
            ("supervised", &self.supervised, self.supervised_avg),
            ("zero-shot", &self.zero_shot, self.zero_shot_avg),
        ] {
            writeln!(f, "{title}")?;
            for d in rows {
                writeln!(
                    f,
                    "  {:>4} -> {:<4} {:>7.2}  ({} sentences)",
                    d.src, d.tgt, d.bleu, d.sentences
                )?;
            }
            writeln!(f, "  {:<12} {:>7}", "average", fmt_avg(avg))?;
        }
        Ok(())
    }
}

/// Decodes every requested direction of the multi-parallel `test` sets and
/// scores it against the target side. `supervised` decides which block a
/// direction lands in.
pub fn zero_shot_matrix(
    model: &ModelGraph,
    test: &BTreeMap<String, Vec<Sentence>>,
    directions: &[(String, String)],
    supervised: &[(String, String)],
    max_len: usize,
    limit: Option<usize>,
) -> Result<EvalReport> {
    let mut sup = Vec::new();
    let mut zs = Vec::new();
    for (a, b) in directions {
        let (pa, pb) = (model.pack(a)?, model.pack(b)?);
        let src_text = test
            .get(a)
            .ok_or_else(|| Error::UnknownLanguage(a.clone()))?;
        let ref_text = test
            .get(b)
            .ok_or_else(|| Error::UnknownLanguage(b.clone()))?;
        let n = limit
            .map_or(src_text.len(), |l| l.min(src_text.len()))
            .min(ref_text.len());
        let sources: Vec<Vec<usize>> = src_text[..n].iter().map(|s| pa.vocab.encode(s)).collect();
        let refs: Vec<Vec<usize>> = ref_text[..n].iter().map(|s| pb.vocab.encode(s)).collect();
        let hyps = greedy_decode(model, a, b, &sources, max_len)?;
        let score = DirectionScore {
            src: a.clone(),
            tgt: b.clone(),
            bleu: corpus_bleu(&hyps, &refs)?,
            sentences: n,
        };
        log::debug!("{a}->{b} bleu={:.2}", score.bleu);
        if supervised.contains(&(a.clone(), b.clone())) {
            sup.push(score);
        } else {
            zs.push(score);
        }
    }
    Ok(EvalReport::new(sup, zs))
}

/// All ordered pairs of distinct languages.
pub fn all_directions(langs: &[String]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for a in langs {
        for b in langs {
            if a != b {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(src: &str, tgt: &str, bleu: f64) -> DirectionScore {
        DirectionScore {
            src: src.into(),
            tgt: tgt.into(),
            bleu,
            sentences: 1,
        }
    }

    #[test]
    fn averages_recompute_from_cells() {
        let r = EvalReport::new(
            vec![d("en", "xa", 10.0), d("xa", "en", 20.0)],
            vec![d("xa", "xb", 3.0)],
        );
        assert_eq!(r.supervised_avg, Some(15.0));
        assert_eq!(r.zero_shot_avg, Some(3.0));
        assert_eq!(r.get("xa", "xb"), Some(3.0));
        let empty = EvalReport::new(vec![], vec![]);
        assert_eq!(empty.zero_shot_avg, None);
    }

    #[test]
    fn all_directions_count() {
        let langs: Vec<String> = ["en", "xa", "xb", "xc"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(all_directions(&langs).len(), 12);
    }
}
