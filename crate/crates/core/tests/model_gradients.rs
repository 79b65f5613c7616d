//! Finite-difference check of full-model losses against the tape.

use std::collections::BTreeMap;

use interlingua::corpus::{Batch, Example, Task, Vocab};
use interlingua::model::{ModelGraph, Session, SharingSpec};
use interlingua::train::{align_loss, dae_loss, mt_loss};
use interlingua::transformer::Dims;

fn vocabs() -> BTreeMap<String, Vocab> {
    let codes = vec!["en".to_string(), "xa".to_string()];
    codes
        .iter()
        .map(|l| {
            let w: Vec<Vec<String>> = vec![(0..6).map(|i| format!("{l}{i:02}")).collect()];
            (
                l.clone(),
                Vocab::build(w.iter().map(Vec::as_slice), &codes).unwrap(),
            )
        })
        .collect()
}

fn model(v: &BTreeMap<String, Vocab>) -> ModelGraph {
    let spec = SharingSpec {
        enc_layers: 2,
        dec_layers: 2,
        enc_shared: Some(interlingua::model::LayerRange::new(2, 2)),
        dec_shared: None,
        cross_range: interlingua::model::LayerRange::new(1, 1),
        dims: Dims {
            d_model: 8,
            d_ff: 12,
            n_heads: 2,
            dropout: 0.0,
            ..Dims::default()
        },
    };
    let langs: Vec<_> = v.iter().map(|(l, v)| (l.clone(), v.clone())).collect();
    ModelGraph::build(&spec, &langs, 11).unwrap()
}

fn batch(task: Task, v: &BTreeMap<String, Vocab>, src: &str, tgt: &str) -> Batch {
    let ex = vec![
        Example {
            src: vec![6, 7, 8],
            tgt: vec![9, 10],
        },
        Example {
            src: vec![11],
            tgt: vec![7, 8, 9, 6],
        },
    ];
    let code = v[tgt].lang_code(tgt).unwrap();
    Batch::new(task, src, tgt, code, &ex).unwrap()
}

fn loss_of(m: &ModelGraph, b: &Batch, which: &str) -> f64 {
    let mut s = Session::train(m, None);
    let l = match which {
        "mt" => mt_loss(&mut s, b, 0.0).unwrap(),
        "dae" => dae_loss(&mut s, b, 0.0).unwrap(),
        _ => align_loss(&mut s, b).unwrap(),
    };
    s.tape.value(l).item()
}

fn check(which: &str, b: &Batch) {
    let v = vocabs();
    let m = model(&v);
    let mut s = Session::train(&m, None);
    let l = match which {
        "mt" => mt_loss(&mut s, b, 0.0).unwrap(),
        "dae" => dae_loss(&mut s, b, 0.0).unwrap(),
        _ => align_loss(&mut s, b).unwrap(),
    };
    let grads = s.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (id, g) in &grads.entries {
        for j in (0..g.len()).step_by(g.len() / 3 + 1) {
            let eps = 1e-5;
            let mut mp = m.clone();
            mp.store.value_mut(*id).data_mut()[j] += eps;
            let mut mm = m.clone();
            mm.store.value_mut(*id).data_mut()[j] -= eps;
            let num = (loss_of(&mp, b, which) - loss_of(&mm, b, which)) / (2.0 * eps);
            let rel = (num - g[j]).abs() / num.abs().max(g[j].abs()).max(1e-5);
            if rel > worst {
                worst = rel;
            }
            checked += 1;
            assert!(
                rel < 1e-4,
                "{which} {} [{j}]: analytic {} numeric {num}",
                m.store.name(*id),
                g[j]
            );
        }
    }
    assert!(checked > 50, "only {checked} coordinates");
    eprintln!("{which}: {checked} coordinates, worst relative error {worst:.2e}");
}

#[test]
fn translation_loss_gradients() {
    let v = vocabs();
    check("mt", &batch(Task::Mt, &v, "en", "xa"));
}

#[test]
fn denoising_loss_gradients() {
    let v = vocabs();
    check("dae", &batch(Task::Dae, &v, "xa", "xa"));
}

#[test]
fn alignment_loss_gradients() {
    let v = vocabs();
    check("align", &batch(Task::Mt, &v, "xa", "en"));
}
