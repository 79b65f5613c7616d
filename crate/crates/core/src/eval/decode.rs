use crate::corpus::vocab::{EOS, PAD};
use crate::corpus::TokenBatch;
use crate::error::{Error, Result};
use crate::model::{ModelGraph, Session};

/// Sentences decoded together; bounds tape size.
const DECODE_CHUNK: usize = 64;

/// Beam-1 decoding of content-id sentences from `src_lang` into `tgt_lang`.
/// Special tokens other than `EOS` are never emitted. Output excludes the
/// language code and the final `EOS`.
pub fn greedy_decode(
    model: &ModelGraph,
    src_lang: &str,
    tgt_lang: &str,
    sources: &[Vec<usize>],
    max_len: usize,
) -> Result<Vec<Vec<usize>>> {
    if max_len == 0 {
        return Err(Error::Invalid("max_len must be >= 1".into()));
    }
    model.pack(src_lang)?;
    let tv = &model.pack(tgt_lang)?.vocab;
    let code = tv
        .lang_code(tgt_lang)
        .ok_or_else(|| Error::Invalid(format!("no language code for {tgt_lang}")))?;
    let n_specials = tv.n_specials();
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(DECODE_CHUNK) {
        let rows: Vec<Vec<usize>> = chunk
            .iter()
            .map(|s| s.iter().copied().chain(std::iter::once(EOS)).collect())
            .collect();
        let src = TokenBatch::from_rows(&rows)?;
        let mut s = Session::eval(model);
        let memory = s.encode(src_lang, &src)?;
        let b = chunk.len();
        let mut prefix: Vec<Vec<usize>> = vec![vec![code]; b];
        let mut done = vec![false; b];
        for _ in 0..max_len {
            let tgt_in = TokenBatch::from_rows(&prefix)?;
            let logits = s.decode_train(tgt_lang, &memory, &tgt_in)?;
            let lv = s.tape.value(logits);
            let v = lv.last_dim();
            let t = tgt_in.len;
            for (row, p) in prefix.iter_mut().enumerate() {
                if done[row] {
                    p.push(PAD);
                    continue;
                }
                let base = (row * t + t - 1) * v;
                let scores = &lv.data()[base..base + v];
                let mut best = EOS;
                for id in n_specials..v {
                    if scores[id] > scores[best] {
                        best = id;
                    }
                }
                p.push(best);
                if best == EOS {
                    done[row] = true;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        for p in prefix {
            out.push(
                p[1..]
                    .iter()
                    .copied()
                    .take_while(|&t| t != EOS && t != PAD)
                    .collect(),
            );
        }
    }
    Ok(out)
}
