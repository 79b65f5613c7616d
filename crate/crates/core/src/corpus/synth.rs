//! Synthetic languages over a shared base grammar.
//!
//! A base sentence is a list of content ids in `0..BASE_VOCAB`. Each language
//! renders it through a token bijection followed by a fixed adjacent-swap
//! reordering, so the ground-truth translation between any two languages is
//! known exactly.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{hash_str, stream_rng, DOMAIN_CORPUS, DOMAIN_LANG};

pub const BASE_VOCAB: usize = 50;
pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 12;

const DET: std::ops::Range<usize> = 0..4;
const ADJ: std::ops::Range<usize> = 4..14;
const NOUN: std::ops::Range<usize> = 14..30;
const VERB_T: std::ops::Range<usize> = 30..38;
const VERB_I: std::ops::Range<usize> = 38..42;
const PREP: std::ops::Range<usize> = 42..47;
const ADV: std::ops::Range<usize> = 47..50;

/// Word-order rule over base ids, applied before the bijection. The swap
/// rules are positional involutions; the others move words by category and
/// are invertible on sentences from the grammar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReorderRule {
    #[default]
    None,
    /// Swap positions (0,1), (2,3), ...
    SwapEven,
    /// Swap positions (1,2), (3,4), ...
    SwapOdd,
    /// The last adjective of a noun phrase follows its noun.
    NounAdj,
    /// Determiners follow the next word.
    PostDet,
}

fn is_det(t: usize) -> bool {
    DET.contains(&t)
}

fn is_adj(t: usize) -> bool {
    ADJ.contains(&t)
}

fn is_noun(t: usize) -> bool {
    NOUN.contains(&t)
}

/// Swaps each non-overlapping adjacent pair matching `pair`, left to right.
fn swap_pairs(xs: &[usize], pair: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut out = xs.to_vec();
    let mut i = 0;
    while i + 1 < out.len() {
        if pair(out[i], out[i + 1]) {
            out.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

fn swap_parity(xs: &[usize], start: usize) -> Vec<usize> {
    let mut out = xs.to_vec();
    let mut i = start;
    while i + 1 < out.len() {
        out.swap(i, i + 1);
        i += 2;
    }
    out
}

impl ReorderRule {
    pub fn apply(self, base: &[usize]) -> Vec<usize> {
        match self {
            ReorderRule::None => base.to_vec(),
            ReorderRule::SwapEven => swap_parity(base, 0),
            ReorderRule::SwapOdd => swap_parity(base, 1),
            ReorderRule::NounAdj => swap_pairs(base, |a, b| is_adj(a) && is_noun(b)),
            ReorderRule::PostDet => swap_pairs(base, |a, _| is_det(a)),
        }
    }

    pub fn invert(self, reordered: &[usize]) -> Vec<usize> {
        match self {
            ReorderRule::NounAdj => swap_pairs(reordered, |a, b| is_noun(a) && is_adj(b)),
            ReorderRule::PostDet => swap_pairs(reordered, |_, b| is_det(b)),
            _ => self.apply(reordered),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticLangSpec {
    pub lang: String,
    /// `bijection[base] = surface`; a permutation of `0..BASE_VOCAB`.
    pub bijection: Vec<usize>,
    pub reorder: ReorderRule,
}

impl SyntheticLangSpec {
    pub fn identity(lang: &str) -> Self {
        SyntheticLangSpec {
            lang: lang.to_string(),
            bijection: (0..BASE_VOCAB).collect(),
            reorder: ReorderRule::None,
        }
    }

    /// Random bijection derived from `(seed, lang)`.
    pub fn seeded(lang: &str, reorder: ReorderRule, seed: u64) -> Self {
        let mut rng = stream_rng(seed, DOMAIN_LANG, hash_str(lang), 0);
        let mut bijection: Vec<usize> = (0..BASE_VOCAB).collect();
        bijection.shuffle(&mut rng);
        SyntheticLangSpec {
            lang: lang.to_string(),
            bijection,
            reorder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; BASE_VOCAB];
        if self.bijection.len() != BASE_VOCAB {
            return Err(Error::Invalid(format!(
                "{}: bijection has wrong size",
                self.lang
            )));
        }
        for &s in &self.bijection {
            if s >= BASE_VOCAB || seen[s] {
                return Err(Error::Invalid(format!(
                    "{}: bijection is not a permutation",
                    self.lang
                )));
            }
            seen[s] = true;
        }
        Ok(())
    }

    /// Base sentence to surface ids.
    pub fn derive(&self, base: &[usize]) -> Result<Vec<usize>> {
        if let Some(b) = base.iter().find(|&&b| b >= BASE_VOCAB) {
            return Err(Error::Invalid(format!("base token {b} outside vocabulary")));
        }
        Ok(self
            .reorder
            .apply(base)
            .into_iter()
            .map(|b| self.bijection[b])
            .collect())
    }

    /// Surface ids back to the base sentence.
    pub fn inverse(&self, surface: &[usize]) -> Result<Vec<usize>> {
        let mut inv = vec![0; BASE_VOCAB];
        for (b, &s) in self.bijection.iter().enumerate() {
            inv[s] = b;
        }
        let base = surface
            .iter()
            .map(|&s| {
                inv.get(s)
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("surface token {s} outside vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.reorder.invert(&base))
    }

    pub fn render(&self, surface: &[usize]) -> Vec<String> {
        surface
            .iter()
            .map(|s| format!("{}{:02}", self.lang, s))
            .collect()
    }

    pub fn parse(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                t.strip_prefix(self.lang.as_str())
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n < BASE_VOCAB)
                    .ok_or_else(|| Error::Invalid(format!("`{t}` is not a {} token", self.lang)))
            })
            .collect()
    }

    /// Base sentence straight to surface strings.
    pub fn sentence(&self, base: &[usize]) -> Result<Vec<String>> {
        Ok(self.render(&self.derive(base)?))
    }
}

/// Exact translation of a surface sentence from `src` to `tgt`.
pub fn oracle_translate(
    src: &SyntheticLangSpec,
    tgt: &SyntheticLangSpec,
    surface: &[usize],
) -> Result<Vec<usize>> {
    tgt.derive(&src.inverse(surface)?)
}

fn pick(rng: &mut impl Rng, r: std::ops::Range<usize>) -> usize {
    rng.gen_range(r)
}

fn noun_phrase(rng: &mut impl Rng, out: &mut Vec<usize>) {
    out.push(pick(rng, DET));
    let adjs = rng.gen_range(0..=2);
    for _ in 0..adjs {
        out.push(pick(rng, ADJ));
    }
    out.push(pick(rng, NOUN));
}

/// One sentence from the template grammar, length in `[MIN_LEN, MAX_LEN]`.
pub fn sample_sentence(rng: &mut impl Rng) -> Vec<usize> {
    loop {
        let mut s = Vec::with_capacity(MAX_LEN);
        noun_phrase(rng, &mut s);
        match rng.gen_range(0..4) {
            0 => {
                s.push(pick(rng, VERB_I));
                if rng.gen_bool(0.5) {
                    s.push(pick(rng, ADV));
                }
            }
            1 => {
                s.push(pick(rng, VERB_T));
                noun_phrase(rng, &mut s);
                if rng.gen_bool(0.3) {
                    s.push(pick(rng, ADV));
                }
            }
            2 => {
                s.push(pick(rng, VERB_T));
                noun_phrase(rng, &mut s);
                s.push(pick(rng, PREP));
                noun_phrase(rng, &mut s);
            }
            _ => {
                s.push(pick(rng, VERB_I));
                s.push(pick(rng, PREP));
                noun_phrase(rng, &mut s);
            }
        }
        if (MIN_LEN..=MAX_LEN).contains(&s.len()) {
            return s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseCorpus {
    pub train: Vec<Vec<usize>>,
    pub valid: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

/// `n` distinct base sentences split 90/5/5 without overlap.
pub fn gen_base_corpus(n: usize, seed: u64) -> Result<BaseCorpus> {
    if n == 0 {
        return Err(Error::Invalid("base corpus size must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, DOMAIN_CORPUS, 0, 0);
    let mut seen = HashSet::with_capacity(n);
    let mut sentences = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while sentences.len() < n {
        attempts += 1;
        if attempts > 100 * n + 1000 {
            return Err(Error::Invalid(format!(
                "cannot draw {n} distinct sentences"
            )));
        }
        let s = sample_sentence(&mut rng);
        if seen.insert(s.clone()) {
            sentences.push(s);
        }
    }
    let n_test = n / 20;
    let n_valid = n / 20;
    let test = sentences.split_off(n - n_test);
    let valid = sentences.split_off(n - n_test - n_valid);
    Ok(BaseCorpus {
        train: sentences,
        valid,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_bounded() {
        let a = gen_base_corpus(400, 3).unwrap();
        let b = gen_base_corpus(400, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len() + a.valid.len() + a.test.len(), 400);
        assert_eq!(a.test.len(), 20);
        for s in a.train.iter().chain(&a.valid).chain(&a.test) {
            assert!((MIN_LEN..=MAX_LEN).contains(&s.len()));
            assert!(s.iter().all(|&t| t < BASE_VOCAB));
        }
        let train: HashSet<_> = a.train.iter().collect();
        assert!(a.test.iter().all(|s| !train.contains(s)));
        assert!(a.valid.iter().all(|s| !train.contains(s)));
        assert_ne!(a, gen_base_corpus(400, 4).unwrap());
    }

    #[test]
    fn identity_language_leaves_sentence_unchanged() {
        let s = vec![0, 5, 17, 33, 14];
        assert_eq!(SyntheticLangSpec::identity("en").derive(&s).unwrap(), s);
    }

    #[test]
    fn derive_round_trips() {
        let s = vec![1, 9, 20, 31, 2, 15, 44, 3, 22];
        for rule in ALL_RULES {
            let spec = SyntheticLangSpec::seeded("xa", rule, 7);
            spec.validate().unwrap();
            assert_eq!(spec.inverse(&spec.derive(&s).unwrap()).unwrap(), s);
            assert!(spec.derive(&[BASE_VOCAB]).is_err());
        }
    }

    #[test]
    fn oracle_on_concrete_sentence_by_hand() {
        let mut a = SyntheticLangSpec::identity("xa");
        a.bijection.swap(0, 1); // base 0 <-> surface 1
        a.reorder = ReorderRule::SwapEven;
        let mut b = SyntheticLangSpec::identity("xb");
        b.bijection.swap(2, 3);
        b.reorder = ReorderRule::SwapOdd;

        // base [0, 2, 4, 6, 8]
        // in A: bijection -> [1, 2, 4, 6, 8], swap even -> [2, 1, 6, 4, 8]
        let in_a = a.derive(&[0, 2, 4, 6, 8]).unwrap();
        assert_eq!(in_a, vec![2, 1, 6, 4, 8]);
        // to B: undo A -> [0, 2, 4, 6, 8]; B bijection -> [0, 3, 4, 6, 8];
        // swap odd -> [0, 4, 3, 8, 6]
        assert_eq!(
            oracle_translate(&a, &b, &in_a).unwrap(),
            vec![0, 4, 3, 8, 6]
        );
    }

    const ALL_RULES: [ReorderRule; 5] = [
        ReorderRule::None,
        ReorderRule::SwapEven,
        ReorderRule::SwapOdd,
        ReorderRule::NounAdj,
        ReorderRule::PostDet,
    ];

    #[test]
    fn category_rules_by_hand() {
        // det adj adj noun verb_t det noun
        let s = [0, 4, 5, 14, 30, 1, 15];
        assert_eq!(ReorderRule::NounAdj.apply(&s), [0, 4, 14, 5, 30, 1, 15]);
        assert_eq!(ReorderRule::PostDet.apply(&s), [4, 0, 5, 14, 30, 15, 1]);
    }

    #[test]
    fn positional_rules_are_involutions() {
        let xs: Vec<usize> = (0..7).collect();
        for r in [
            ReorderRule::None,
            ReorderRule::SwapEven,
            ReorderRule::SwapOdd,
        ] {
            assert_eq!(r.invert(&r.apply(&xs)), xs);
        }
        assert_eq!(ReorderRule::SwapEven.apply(&xs), vec![1, 0, 3, 2, 5, 4, 6]);
        assert_eq!(ReorderRule::SwapOdd.apply(&xs), vec![0, 2, 1, 4, 3, 6, 5]);
    }

    #[test]
    fn render_parse_round_trip() {
        let spec = SyntheticLangSpec::seeded("xc", ReorderRule::None, 1);
        let words = spec.render(&[0, 7, 49]);
        assert_eq!(words, vec!["xc00", "xc07", "xc49"]);
        assert_eq!(spec.parse(&words).unwrap(), vec![0, 7, 49]);
        assert!(spec.parse(&["xa01".to_string()]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn oracle_composes(seed in 0u64..500, ra in 0usize..5, rb in 0usize..5, rc in 0usize..5) {
            let s = sample_sentence(&mut stream_rng(seed, DOMAIN_CORPUS, 9, 9));
            let a = SyntheticLangSpec::seeded("xa", ALL_RULES[ra], seed);
            let b = SyntheticLangSpec::seeded("xb", ALL_RULES[rb], seed);
            let c = SyntheticLangSpec::seeded("xc", ALL_RULES[rc], seed);
            for l in [&a, &b, &c] {
                proptest::prop_assert_eq!(l.inverse(&l.derive(&s).unwrap()).unwrap(), s.clone());
            }
            let x = a.derive(&s).unwrap();
            let direct = oracle_translate(&a, &c, &x).unwrap();
            let via = oracle_translate(&b, &c, &oracle_translate(&a, &b, &x).unwrap()).unwrap();
            proptest::prop_assert_eq!(direct, via);
        }
    }
}
