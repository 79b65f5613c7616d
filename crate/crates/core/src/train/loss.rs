use crate::corpus::vocab::PAD;
use crate::corpus::{Batch, Task, TokenBatch};
use crate::error::{Error, Result};
use crate::model::{Memory, Session};
use crate::tensor::{Tensor, Var};

fn token_loss(
    s: &mut Session<'_>,
    logits: Var,
    targets: &TokenBatch,
    smoothing: f64,
) -> Result<Var> {
    if smoothing > 0.0 {
        s.tape
            .cross_entropy_smoothed(logits, &targets.ids, PAD, smoothing)
    } else {
        s.tape.cross_entropy(logits, &targets.ids, PAD)
    }
}

/// Token-mean cross-entropy of the target given the source.
pub fn mt_loss(s: &mut Session<'_>, batch: &Batch, smoothing: f64) -> Result<Var> {
    if batch.task != Task::Mt {
        return Err(Error::Invalid(
            "translation loss needs a parallel batch".into(),
        ));
    }
    let m = s.encode(&batch.src_lang, &batch.src)?;
    let logits = s.decode_train(&batch.tgt_lang, &m, &batch.tgt_in)?;
    token_loss(s, logits, &batch.tgt_out, smoothing)
}

/// Token-mean cross-entropy of the clean sentence given its corruption.
pub fn dae_loss(s: &mut Session<'_>, batch: &Batch, smoothing: f64) -> Result<Var> {
    if batch.task != Task::Dae {
        return Err(Error::Invalid(
            "denoising loss needs a monolingual batch".into(),
        ));
    }
    let logits = s.dae_forward(&batch.src_lang, &batch.tgt_lang, &batch.src, &batch.tgt_in)?;
    token_loss(s, logits, &batch.tgt_out, smoothing)
}

/// `[batch, d]` mean over the valid positions of each row.
fn mean_pool(s: &mut Session<'_>, m: &Memory) -> Result<Var> {
    let mut pool = vec![0.0; m.batch * m.batch * m.len];
    for b in 0..m.batch {
        let row = &m.valid[b * m.len..(b + 1) * m.len];
        let n = row.iter().filter(|&&v| v).count().max(1) as f64;
        for (t, &v) in row.iter().enumerate() {
            if v {
                pool[b * m.batch * m.len + b * m.len + t] = 1.0 / n;
            }
        }
    }
    let p = s
        .tape
        .constant(Tensor::new(vec![m.batch, m.batch * m.len], pool)?);
    s.tape.matmul(p, m.states)
}

/// Squared distance between mean-pooled encoder states of the two sides of
/// a parallel batch, averaged over sentences.
pub fn align_loss(s: &mut Session<'_>, batch: &Batch) -> Result<Var> {
    if batch.task != Task::Mt {
        return Err(Error::Invalid(
            "alignment loss needs a parallel batch".into(),
        ));
    }
    let a = s.encode(&batch.src_lang, &batch.src)?;
    let b = s.encode(&batch.tgt_lang, &batch.tgt_out)?;
    let pa = mean_pool(s, &a)?;
    let pb = mean_pool(s, &b)?;
    let diff = s.tape.sub(pa, pb)?;
    let sq = s.tape.mul(diff, diff)?;
    let total = s.tape.sum(sq);
    Ok(s.tape.scale(total, 1.0 / batch.n_sentences() as f64))
}
