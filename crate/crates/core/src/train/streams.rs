//! Endless per-task batch streams. Each epoch re-batches (and, for
//! denoising, re-noises) the same sentences under epoch-keyed seeds.

use std::collections::VecDeque;

use rand::seq::SliceRandom;

use crate::corpus::vocab::MASK;
use crate::corpus::{make_batches, Batch, BatchConfig, Dataset, Example, StreamKey, Task, Vocab};
use crate::error::{Error, Result};
use crate::noise::{noise, noise_rng, NoiseConfig};
use crate::rng::{hash_str, stream_rng, DOMAIN_BATCH};

/// One homogeneous slice of a stream: a translation direction or one
/// language's monolingual text.
#[derive(Clone, Debug)]
struct Source {
    src_lang: String,
    tgt_lang: String,
    tgt_code: usize,
    examples: Vec<Example>,
}

#[derive(Clone, Debug)]
pub struct BatchStream {
    name: String,
    task: Task,
    sources: Vec<Source>,
    noise: Option<NoiseConfig>,
    batch: BatchConfig,
    seed: u64,
    epoch: u64,
    queue: VecDeque<Batch>,
}

fn encode_all(vocab: &Vocab, sents: &[&Vec<String>]) -> Vec<Vec<usize>> {
    sents.iter().map(|s| vocab.encode(s)).collect()
}

fn code_of(vocab: &Vocab, lang: &str) -> Result<usize> {
    vocab
        .lang_code(lang)
        .ok_or_else(|| Error::Invalid(format!("no language code for {lang}")))
}

impl BatchStream {
    /// Both directions of the pivot pair for every language in `others`.
    pub fn translation(
        data: &Dataset,
        others: &[String],
        batch: &BatchConfig,
        seed: u64,
    ) -> Result<Self> {
        let pivot = &data.manifest.pivot;
        let mut sources = Vec::new();
        for x in others {
            let bt = data.bitext(x)?;
            let pv = &data.vocabs[pivot];
            let xv = &data.vocabs[x];
            let p_ids = encode_all(pv, &bt.pivot_side.iter().collect::<Vec<_>>());
            let x_ids = encode_all(xv, &bt.other_side.iter().collect::<Vec<_>>());
            let pair = |src: &[Vec<usize>], tgt: &[Vec<usize>]| -> Vec<Example> {
                src.iter()
                    .zip(tgt)
                    .map(|(s, t)| Example {
                        src: s.clone(),
                        tgt: t.clone(),
                    })
                    .collect()
            };
            sources.push(Source {
                src_lang: pivot.clone(),
                tgt_lang: x.clone(),
                tgt_code: code_of(xv, x)?,
                examples: pair(&p_ids, &x_ids),
            });
            sources.push(Source {
                src_lang: x.clone(),
                tgt_lang: pivot.clone(),
                tgt_code: code_of(pv, pivot)?,
                examples: pair(&x_ids, &p_ids),
            });
        }
        Ok(BatchStream {
            name: "mt".into(),
            task: Task::Mt,
            sources,
            noise: None,
            batch: batch.clone(),
            seed,
            epoch: 0,
            queue: VecDeque::new(),
        })
    }

    /// Reconstruction of each language's training-side text. With the
    /// identity noise config this is plain auto-encoding.
    pub fn denoising(
        data: &Dataset,
        langs: &[String],
        pivot_pairs: &[String],
        noise_cfg: &NoiseConfig,
        batch: &BatchConfig,
        seed: u64,
    ) -> Result<Self> {
        noise_cfg.validate()?;
        let mut sources = Vec::new();
        for l in langs {
            let v = &data.vocabs[l];
            // Only text from the pivot pairs in use counts as training data.
            let mut sents = Vec::new();
            for bt in &data.train {
                if !pivot_pairs.contains(&bt.other) {
                    continue;
                }
                if &bt.pivot == l {
                    sents.extend(bt.pivot_side.iter());
                }
                if &bt.other == l {
                    sents.extend(bt.other_side.iter());
                }
            }
            let examples = encode_all(v, &sents)
                .into_iter()
                .map(|t| Example {
                    src: t.clone(),
                    tgt: t,
                })
                .collect();
            sources.push(Source {
                src_lang: l.clone(),
                tgt_lang: l.clone(),
                tgt_code: code_of(v, l)?,
                examples,
            });
        }
        let identity = *noise_cfg == NoiseConfig::identity();
        Ok(BatchStream {
            name: if identity { "ae".into() } else { "dae".into() },
            task: Task::Dae,
            sources,
            noise: Some(noise_cfg.clone()),
            batch: batch.clone(),
            seed,
            epoch: 0,
            queue: VecDeque::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn refill(&mut self) -> Result<()> {
        let stream_id = hash_str(&self.name);
        let mut all = Vec::new();
        for (k, src) in self.sources.iter().enumerate() {
            let examples: Vec<Example> = match &self.noise {
                None => src.examples.clone(),
                Some(cfg) => {
                    let lang_key = hash_str(&src.src_lang);
                    src.examples
                        .iter()
                        .enumerate()
                        .map(|(i, e)| {
                            let mut rng = noise_rng(self.seed ^ lang_key, self.epoch, i as u64);
                            Example {
                                src: noise(&e.tgt, cfg, MASK, |_| false, &mut rng),
                                tgt: e.tgt.clone(),
                            }
                        })
                        .collect()
                }
            };
            let key = StreamKey {
                task: self.task,
                src_lang: &src.src_lang,
                tgt_lang: &src.tgt_lang,
                tgt_code: src.tgt_code,
                stream: stream_id ^ (k as u64 + 1),
            };
            all.extend(make_batches(
                &examples,
                &key,
                &self.batch,
                self.seed,
                self.epoch,
            )?);
        }
        if all.is_empty() {
            return Err(Error::EmptyStream(self.name.clone()));
        }
        let mut rng = stream_rng(self.seed, DOMAIN_BATCH, stream_id, u64::MAX - self.epoch);
        all.shuffle(&mut rng);
        self.queue.extend(all);
        self.epoch += 1;
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        if self.queue.is_empty() {
            self.refill()?;
        }
        self.queue
            .pop_front()
            .ok_or_else(|| Error::EmptyStream(self.name.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Manifest;

    fn data() -> Dataset {
        Dataset::generate(&Manifest::cipher(1, 2, 40)).unwrap()
    }

    #[test]
    fn translation_stream_covers_both_directions() {
        let d = data();
        let others = d.manifest.others();
        let mut s = BatchStream::translation(&d, &others, &BatchConfig::default(), 0).unwrap();
        let mut dirs = std::collections::BTreeSet::new();
        let mut sentences = 0;
        while s.epoch() < 2 || !s.queue.is_empty() {
            let b = s.next_batch().unwrap();
            if s.epoch() == 1 {
                sentences += b.n_sentences();
            }
            dirs.insert((b.src_lang.clone(), b.tgt_lang.clone()));
            if s.epoch() == 2 {
                break;
            }
        }
        assert_eq!(dirs.len(), 4);
        assert!(dirs.iter().all(|(a, b)| a == "en" || b == "en"));
        assert!(sentences >= 4 * 40 - 64);
    }

    #[test]
    fn denoising_uses_only_training_text_and_renoises_per_epoch() {
        let d = data();
        let langs = vec!["xa".to_string()];
        let cfg = BatchConfig {
            max_sentences: 1000,
            max_tokens: 100_000,
            max_len: 32,
        };
        let mut s = BatchStream::denoising(
            &d,
            &langs,
            &d.manifest.others(),
            &NoiseConfig::default(),
            &cfg,
            3,
        )
        .unwrap();
        let first = s.next_batch().unwrap();
        assert_eq!(first.task, Task::Dae);
        let n: usize = {
            let mut n = first.n_sentences();
            while s.epoch() == 1 && !s.queue.is_empty() {
                n += s.next_batch().unwrap().n_sentences();
            }
            n
        };
        assert_eq!(n, 40);
        let second = s.next_batch().unwrap();
        assert_ne!(first.src, second.src);
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let d = data();
        let o = d.manifest.others();
        let mut a = BatchStream::denoising(
            &d,
            &o,
            &o,
            &NoiseConfig::default(),
            &BatchConfig::default(),
            9,
        )
        .unwrap();
        let mut b = a.clone();
        for _ in 0..10 {
            assert_eq!(a.next_batch().unwrap(), b.next_batch().unwrap());
        }
    }

    #[test]
    fn empty_stream_is_an_error() {
        let d = data();
        let mut s = BatchStream::translation(&d, &[], &BatchConfig::default(), 0).unwrap();
        assert!(matches!(s.next_batch(), Err(Error::EmptyStream(_))));
    }
}
