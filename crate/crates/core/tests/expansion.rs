//! Adding a language to a trained model leaves the old one untouched.

use interlingua::corpus::{Dataset, Manifest};
use interlingua::eval::{build_and_train, greedy_decode};
use interlingua::model::{ModelGraph, SharingSpec};
use interlingua::train::{incremental_train, TrainConfig, TrainScope};
use interlingua::transformer::Dims;

fn bits(m: &ModelGraph) -> Vec<(String, Vec<u64>)> {
    m.store
        .ids()
        .map(|id| {
            let v = m
                .store
                .value(id)
                .data()
                .iter()
                .map(|x| x.to_bits())
                .collect();
            (m.store.name(id).to_string(), v)
        })
        .collect()
}

fn decode_all(m: &ModelGraph, data: &Dataset, pairs: &[(&str, &str)]) -> Vec<Vec<Vec<usize>>> {
    pairs
        .iter()
        .map(|&(s, t)| {
            let v = &m.pack(s).unwrap().vocab;
            let src: Vec<_> = data.test[s].iter().take(8).map(|x| v.encode(x)).collect();
            greedy_decode(m, s, t, &src, 12).unwrap()
        })
        .collect()
}

#[test]
fn frozen_expansion_preserves_old_languages() {
    let data = Dataset::generate(&Manifest::cipher(3, 2, 200)).unwrap();
    let spec = SharingSpec::from_notation(
        "E2-2,C1-1",
        2,
        2,
        Dims {
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            dropout: 0.1,
            ..Dims::default()
        },
    )
    .unwrap();
    let cfg = TrainConfig {
        max_steps: 15,
        warmup_steps: 5,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let scope = TrainScope::with(&data, &["xa".to_string()]);
    let mut model = build_and_train(&spec, &data, &scope, &cfg).unwrap();
    let old = [("en", "xa"), ("xa", "en")];
    let before = bits(&model);
    let decoded = decode_all(&model, &data, &old);

    let t = incremental_train(&mut model, &data, "xb", &cfg).unwrap();
    assert_eq!(t.step, 15);
    let after = bits(&model);
    assert!(after.len() > before.len());
    for (name, v) in &before {
        let (_, w) = after.iter().find(|(n, _)| n == name).unwrap();
        assert_eq!(v, w, "{name} moved");
    }
    assert!(after.iter().any(|(n, _)| n.starts_with("xb.")));
    assert_eq!(decode_all(&model, &data, &old), decoded);
    // The new language is reachable from the old one without a direct pair.
    assert_eq!(decode_all(&model, &data, &[("xa", "xb")])[0].len(), 8);
    assert_eq!(model.store.trainable_numel(), model.store.numel());
}
