//! Checks shared by the contract tests and the acceptance target. Each
//! returns a [`Check`] so both can report the measured numbers.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use interlingua::corpus::synth::sample_sentence;
use interlingua::corpus::{Batch, Example, Task, Vocab};
use interlingua::eval::corpus_bleu;
use interlingua::model::{
    private_count, shared_count, LayerRange, ModelGraph, ParamStore, Session, SharingSpec,
};
use interlingua::noise::{noise, noise_rng, NoiseConfig};
use interlingua::rng::stream_rng;
use interlingua::tensor::{op_suite, Tensor};
use interlingua::train::{lr_at, mt_loss, RAdam, RAdamConfig};
use interlingua::transformer::Dims;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Check {
            pass,
            detail: detail.into(),
        }
    }

    pub fn assert(self) {
        assert!(self.pass, "{}", self.detail);
    }
}

pub fn small_dims() -> Dims {
    Dims {
        d_model: 8,
        d_ff: 12,
        n_heads: 2,
        dropout: 0.0,
        ..Dims::default()
    }
}

/// Vocabularies for `langs` with `n` content words each.
pub fn toy_vocabs(langs: &[&str], n: usize) -> BTreeMap<String, Vocab> {
    let codes: Vec<String> = langs.iter().map(|l| l.to_string()).collect();
    codes
        .iter()
        .map(|l| {
            let w: Vec<Vec<String>> = vec![(0..n).map(|i| format!("{l}{i:02}")).collect()];
            (
                l.clone(),
                Vocab::build(w.iter().map(Vec::as_slice), &codes).unwrap(),
            )
        })
        .collect()
}

pub fn toy_model(spec: &SharingSpec, v: &BTreeMap<String, Vocab>, seed: u64) -> ModelGraph {
    let langs: Vec<_> = v.iter().map(|(l, v)| (l.clone(), v.clone())).collect();
    ModelGraph::build(spec, &langs, seed).unwrap()
}

/// A translation batch of random content ids.
pub fn toy_batch(v: &BTreeMap<String, Vocab>, src: &str, tgt: &str, seed: u64) -> Batch {
    let mut rng = stream_rng(seed, 0xBA7C, 0, 0);
    let lo = v[src].n_specials();
    let (sn, tn) = (v[src].len(), v[tgt].len());
    let ex: Vec<Example> = (0..3)
        .map(|_| Example {
            src: (0..rng.gen_range(1..6))
                .map(|_| rng.gen_range(lo..sn))
                .collect(),
            tgt: (0..rng.gen_range(1..6))
                .map(|_| rng.gen_range(lo..tn))
                .collect(),
        })
        .collect();
    Batch::new(Task::Mt, src, tgt, v[tgt].lang_code(tgt).unwrap(), &ex).unwrap()
}

/// Grammar sentences over base ids.
pub fn gen_sentences(n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = stream_rng(seed, 0x5E47, 0, 0);
    (0..n).map(|_| sample_sentence(&mut rng)).collect()
}

pub fn gradcheck() -> Check {
    let start = Instant::now();
    let cases = match op_suite(1, 3) {
        Ok(c) => c,
        Err(e) => return Check::new(false, format!("suite failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let (worst, name) = cases
        .iter()
        .map(|c| (c.report.max_rel_error, c.name.as_str()))
        .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    Check::new(
        cases.len() >= 50 && worst < 1e-4 && secs < 120.0,
        format!(
            "{} cases, max relative error {worst:.2e} ({name}), {secs:.1}s",
            cases.len()
        ),
    )
}

fn snapshot(
    store: &ParamStore,
    ids: impl IntoIterator<Item = interlingua::model::ParamId>,
) -> Vec<Vec<u64>> {
    ids.into_iter()
        .map(|id| store.value(id).data().iter().map(|x| x.to_bits()).collect())
        .collect()
}

/// One update on an `xa`-only batch moves the shared storages (as seen through
/// `xb`'s views) and leaves `xb`'s private storages bitwise unchanged.
pub fn tying_update() -> Check {
    let v = toy_vocabs(&["en", "xa", "xb"], 6);
    let spec = SharingSpec {
        enc_layers: 2,
        dec_layers: 2,
        enc_shared: Some(LayerRange::new(2, 2)),
        dec_shared: None,
        cross_range: LayerRange::new(1, 2),
        dims: small_dims(),
    };
    let mut m = toy_model(&spec, &v, 3);
    let xb_views: Vec<_> = m.pack("xb").unwrap().encoder[1]
        .handles()
        .into_iter()
        .copied()
        .collect();
    let shared = m.shared_ids();
    if !xb_views.iter().all(|id| shared.contains(id)) {
        return Check::new(false, "xb's top encoder layer is not the shared storage");
    }
    let private_b = m.private_ids("xb").unwrap();
    let before_b = snapshot(&m.store, private_b.iter().copied());
    let before_views = snapshot(&m.store, xb_views.iter().copied());

    let b = toy_batch(&v, "xa", "en", 1);
    let grads = {
        let mut s = Session::train(&m, None);
        let l = mt_loss(&mut s, &b, 0.0).unwrap();
        s.backward(l).unwrap()
    };
    m.store.zero_grads();
    grads.accumulate_into(&mut m.store);
    RAdam::new(RAdamConfig::default())
        .update(&mut m.store, 1e-2)
        .unwrap();

    let after_views = snapshot(&m.store, xb_views.iter().copied());
    let moved = before_views
        .iter()
        .zip(&after_views)
        .filter(|(a, b)| a != b)
        .count();
    let b_same = snapshot(&m.store, private_b.iter().copied()) == before_b;
    Check::new(
        moved > 0 && b_same,
        format!(
            "{moved}/{} shared views changed, xb private storages ({}) unchanged: {b_same}",
            xb_views.len(),
            private_b.len()
        ),
    )
}

/// Shared gradients of a two-language loss equal the sum of the
/// single-language gradients.
pub fn tying_gradients() -> Check {
    let v = toy_vocabs(&["en", "xa", "xb"], 6);
    let spec = SharingSpec::from_notation("E2-3,C1-2", 3, 2, small_dims()).unwrap();
    let m = toy_model(&spec, &v, 5);
    let ba = toy_batch(&v, "xa", "en", 2);
    let bb = toy_batch(&v, "xb", "en", 3);
    let single = |b: &Batch| {
        let mut s = Session::train(&m, None);
        let l = mt_loss(&mut s, b, 0.0).unwrap();
        s.backward(l).unwrap()
    };
    let (ga, gb) = (single(&ba), single(&bb));
    let pooled = {
        let mut s = Session::train(&m, None);
        let la = mt_loss(&mut s, &ba, 0.0).unwrap();
        let lb = mt_loss(&mut s, &bb, 0.0).unwrap();
        let l = s.tape.add(la, lb).unwrap();
        s.backward(l).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for id in m.shared_ids() {
        let (Some(a), Some(b), Some(p)) = (ga.get(id), gb.get(id), pooled.get(id)) else {
            return Check::new(false, format!("no gradient for {}", m.store.name(id)));
        };
        for k in 0..p.len() {
            worst = worst.max((p[k] - (a[k] + b[k])).abs());
        }
        n += 1;
    }
    Check::new(
        n > 0 && worst < 1e-10,
        format!("{n} shared storages, max |pooled - sum| = {worst:.2e}"),
    )
}

/// `C1-6` on 12 decoder layers: no cross-attention storage above layer 6,
/// and the closed-form count matches the store.
pub fn cross_layout() -> Check {
    let v = toy_vocabs(&["en", "xa"], 5);
    let spec = SharingSpec::from_notation("E3-4,C1-6", 4, 12, small_dims()).unwrap();
    let m = toy_model(&spec, &v, 1);
    let mut upper = 0;
    let mut lower = 0;
    for id in m.store.ids() {
        let name = m.store.name(id);
        let Some(rest) = name.split(".dec.").nth(1) else {
            continue;
        };
        let layer: usize = rest.split('.').next().unwrap().parse().unwrap();
        if name.contains(".cross_") {
            let n = m.store.value(id).numel();
            if layer > 6 {
                upper += n;
            } else {
                lower += n;
            }
        }
    }
    let vsize = v["en"].len();
    let formula = shared_count(&spec) + 2 * private_count(&spec, vsize);
    let total = m.store.numel();
    Check::new(
        upper == 0 && lower > 0 && formula == total,
        format!("cross params in layers 7-12: {upper}, in 1-6: {lower}; formula {formula} vs store {total}"),
    )
}

/// With every cross-attention weight zeroed, logits do not depend on the
/// encoder memory.
pub fn zeroed_cross_ignores_memory() -> Check {
    let v = toy_vocabs(&["en", "xa"], 8);
    let spec = SharingSpec::from_notation("E2-2,C1-2", 2, 3, small_dims()).unwrap();
    let mut m = toy_model(&spec, &v, 9);
    let cross: Vec<_> = m
        .store
        .ids()
        .filter(|&id| m.store.name(id).contains(".cross_attn."))
        .collect();
    for &id in &cross {
        m.store.value_mut(id).data_mut().fill(0.0);
    }
    let logits = |src_seed: u64| {
        let b = toy_batch(&v, "xa", "en", 7);
        let other = toy_batch(&v, "xa", "en", src_seed);
        let mut s = Session::eval(&m);
        let mem = s.encode("xa", &other.src).unwrap();
        let out = s.decode_train("en", &mem, &b.tgt_in).unwrap();
        s.tape.value(out).data().to_vec()
    };
    let (a, b) = (logits(100), logits(200));
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    Check::new(
        !cross.is_empty() && same,
        format!(
            "{} cross storages zeroed, logits bit-identical across memories: {same}",
            cross.len()
        ),
    )
}

/// Deletion and mask rates over at least 100k tokens at the default config.
pub fn noise_rates() -> Check {
    let cfg = NoiseConfig::default();
    let mask = 3;
    let sentences = gen_sentences(20_000, 11);
    let (mut total, mut kept, mut masked, mut sent) = (0usize, 0usize, 0usize, 0u64);
    for s in sentences.iter().cycle() {
        if total >= 100_000 {
            break;
        }
        let toks: Vec<usize> = s.iter().map(|t| t + 10).collect();
        let out = noise(&toks, &cfg, mask, |_| false, &mut noise_rng(5, 0, sent));
        sent += 1;
        total += toks.len();
        kept += out.len();
        masked += out.iter().filter(|&&t| t == mask).count();
    }
    let del = 1.0 - kept as f64 / total as f64;
    let msk = masked as f64 / kept as f64;
    Check::new(
        (0.19..=0.21).contains(&del) && (0.09..=0.11).contains(&msk),
        format!("{total} tokens: deletion {del:.4}, mask {msk:.4}"),
    )
}

pub fn noise_identity() -> Check {
    let cfg = NoiseConfig::identity();
    let sentences = gen_sentences(2_000, 12);
    let bad = sentences
        .iter()
        .enumerate()
        .filter(|(i, s)| noise(s, &cfg, 3, |_| false, &mut noise_rng(1, 0, *i as u64)) != **s)
        .count();
    Check::new(
        bad == 0,
        format!("{bad} of {} sentences changed", sentences.len()),
    )
}

pub fn schedule() -> Check {
    let (peak, w) = (5e-4, 4000);
    let a = lr_at(w, peak, w).unwrap();
    let b = lr_at(w / 2, peak, w).unwrap();
    let c = lr_at(4 * w, peak, w).unwrap();
    Check::new(
        a == 5e-4 && b == 2.5e-4 && c == 2.5e-4,
        format!("lr(w) = {a:e}, lr(w/2) = {b:e}, lr(4w) = {c:e}"),
    )
}

/// Three RAdam steps on `f(x) = x^2 / 2`, against the update written out by
/// hand. The first steps run before rectification engages, so each update
/// is the bias-corrected momentum step.
pub fn radam_trajectory() -> Check {
    let (lr, b1) = (0.1f64, 0.9f64);
    let x1 = 1.0 - lr * 1.0;
    let m2 = b1 * 0.1 + 0.1 * x1;
    let x2 = x1 - lr * m2 / (1.0 - 0.81);
    let m3 = b1 * m2 + 0.1 * x2;
    let x3 = x2 - lr * m3 / (1.0 - 0.729);
    let want = [x1, x2, x3];

    let mut store = ParamStore::new();
    let id = store
        .insert("x", Tensor::new(vec![1], vec![1.0]).unwrap())
        .unwrap();
    let mut opt = RAdam::new(RAdamConfig::default());
    let mut worst: f64 = 0.0;
    for w in want {
        let g = store.value(id).data()[0];
        store.zero_grads();
        store.accumulate_grad(id, &[g]);
        opt.update(&mut store, lr).unwrap();
        worst = worst.max((store.value(id).data()[0] - w).abs());
    }
    Check::new(
        worst < 1e-12,
        format!("max deviation {worst:.2e} over 3 steps"),
    )
}

/// Independent BLEU: n-gram counts by scanning every window.
pub fn brute_bleu(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> f64 {
    let count =
        |xs: &[u32], g: &[u32]| -> usize { xs.windows(g.len()).filter(|w| *w == g).count() };
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4usize {
            let mut seen: Vec<&[u32]> = Vec::new();
            for g in h.windows(n) {
                totals[n - 1] += 1;
                if !seen.contains(&g) {
                    seen.push(g);
                    matches[n - 1] += count(h, g).min(count(rf, g));
                }
            }
        }
    }
    if c == 0 {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return 0.0;
        }
        logs.push((matches[n] as f64 / totals[n] as f64).ln());
    }
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn bleu_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = stream_rng(case, 0xB1E1, 0, 0);
        let n = rng.gen_range(1..8);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n {
            let hl = rng.gen_range(0..14);
            let rl = rng.gen_range(1..14);
            hyps.push((0..hl).map(|_| rng.gen_range(0..5u32)).collect::<Vec<_>>());
            refs.push((0..rl).map(|_| rng.gen_range(0..5u32)).collect::<Vec<_>>());
        }
        let got = corpus_bleu(&hyps, &refs).unwrap();
        worst = worst.max((got - brute_bleu(&hyps, &refs)).abs());
    }
    let words = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
    let x = vec![words("the cat sat on the mat"), words("a b c d")];
    let same = corpus_bleu(&x, &x).unwrap();
    let clipped = corpus_bleu(&[words("the the the the")], &[words("the cat")]).unwrap();
    Check::new(
        worst < 1e-9 && (same - 100.0).abs() < 1e-12 && clipped == 0.0,
        format!(
            "100 corpora max |diff| {worst:.2e}; BLEU(x,x) = {same}; clipping case = {clipped}"
        ),
    )
}
