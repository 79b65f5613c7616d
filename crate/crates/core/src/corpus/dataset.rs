//! Multilingual pivot-centred datasets: generation from a manifest, and the
//! on-disk line format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::{gen_base_corpus, ReorderRule, SyntheticLangSpec};
use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangEntry {
    pub lang: String,
    #[serde(default)]
    pub reorder: ReorderRule,
    /// Render base ids unchanged instead of through a seeded bijection.
    #[serde(default)]
    pub identity: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub pivot: String,
    /// Training pairs per pivot pair. Pairs of different languages are drawn
    /// from disjoint slices of the base corpus, so no sentence is seen in
    /// more than two languages.
    pub pairs_per_language: usize,
    pub languages: Vec<LangEntry>,
}

impl Manifest {
    /// Pivot plus `others` languages with alternating word orders.
    pub fn cipher(seed: u64, others: usize, pairs_per_language: usize) -> Self {
        let rules = [
            ReorderRule::NounAdj,
            ReorderRule::PostDet,
            ReorderRule::None,
        ];
        let mut languages = vec![LangEntry {
            lang: "en".into(),
            reorder: ReorderRule::None,
            identity: false,
        }];
        for i in 0..others {
            languages.push(LangEntry {
                lang: format!("x{}", (b'a' + i as u8) as char),
                reorder: rules[i % rules.len()],
                identity: false,
            });
        }
        Manifest {
            seed,
            pivot: "en".into(),
            pairs_per_language,
            languages,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_language == 0 {
            return Err(Error::Config("pairs_per_language must be >= 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.languages {
            if l.lang.is_empty() || !l.lang.chars().all(|c| c.is_ascii_alphanumeric()) {
                return Err(Error::Config(format!("bad language id `{}`", l.lang)));
            }
            if !seen.insert(l.lang.as_str()) {
                return Err(Error::DuplicateLanguage(l.lang.clone()));
            }
        }
        if !seen.contains(self.pivot.as_str()) {
            return Err(Error::UnknownLanguage(self.pivot.clone()));
        }
        if self.languages.len() < 2 {
            return Err(Error::Config(
                "need the pivot and at least one other language".into(),
            ));
        }
        Ok(())
    }

    pub fn langs(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.lang.clone()).collect()
    }

    pub fn others(&self) -> Vec<String> {
        self.langs()
            .into_iter()
            .filter(|l| *l != self.pivot)
            .collect()
    }

    /// Both directions of every pivot pair.
    pub fn supervised(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for x in self.others() {
            out.push((self.pivot.clone(), x.clone()));
            out.push((x, self.pivot.clone()));
        }
        out
    }

    pub fn spec(&self, lang: &str) -> Result<SyntheticLangSpec> {
        let e = self
            .languages
            .iter()
            .find(|l| l.lang == lang)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))?;
        let mut s = if e.identity {
            SyntheticLangSpec::identity(lang)
        } else {
            SyntheticLangSpec::seeded(lang, e.reorder, self.seed)
        };
        s.reorder = e.reorder;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub type Sentence = Vec<String>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitext {
    pub pivot: String,
    pub other: String,
    pub pivot_side: Vec<Sentence>,
    pub other_side: Vec<Sentence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub vocabs: BTreeMap<String, Vocab>,
    /// One bitext per non-pivot language.
    pub train: Vec<Bitext>,
    /// Multi-parallel: sentence `i` means the same thing in every language.
    pub valid: BTreeMap<String, Vec<Sentence>>,
    pub test: BTreeMap<String, Vec<Sentence>>,
}

impl Dataset {
    pub fn generate(manifest: &Manifest) -> Result<Self> {
        manifest.validate()?;
        let others = manifest.others();
        let train_needed = others.len() * manifest.pairs_per_language;
        let n = (train_needed * 10).div_ceil(9);
        let base = gen_base_corpus(n, manifest.seed)?;
        let specs: BTreeMap<String, SyntheticLangSpec> = manifest
            .langs()
            .into_iter()
            .map(|l| manifest.spec(&l).map(|s| (l, s)))
            .collect::<Result<_>>()?;
        let render = |lang: &str, base: &[Vec<usize>]| -> Result<Vec<Sentence>> {
            base.iter().map(|s| specs[lang].sentence(s)).collect()
        };

        let mut train = Vec::new();
        for (i, x) in others.iter().enumerate() {
            let k = manifest.pairs_per_language;
            let slice = &base.train[i * k..(i + 1) * k];
            train.push(Bitext {
                pivot: manifest.pivot.clone(),
                other: x.clone(),
                pivot_side: render(&manifest.pivot, slice)?,
                other_side: render(x, slice)?,
            });
        }
        let mut valid = BTreeMap::new();
        let mut test = BTreeMap::new();
        for l in manifest.langs() {
            valid.insert(l.clone(), render(&l, &base.valid)?);
            test.insert(l.clone(), render(&l, &base.test)?);
        }
        let vocabs = build_vocabs(manifest, &train)?;
        Ok(Dataset {
            manifest: manifest.clone(),
            vocabs,
            train,
            valid,
            test,
        })
    }

    pub fn bitext(&self, other: &str) -> Result<&Bitext> {
        self.train
            .iter()
            .find(|b| b.other == other)
            .ok_or_else(|| Error::UnknownLanguage(other.to_string()))
    }

    /// Training-side monolingual text of `lang`; the only source for denoising.
    pub fn monolingual(&self, lang: &str) -> Vec<&Sentence> {
        let mut out = Vec::new();
        for b in &self.train {
            if b.pivot == lang {
                out.extend(b.pivot_side.iter());
            }
            if b.other == lang {
                out.extend(b.other_side.iter());
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.manifest.save(&dir.join(MANIFEST_FILE))?;
        for b in &self.train {
            let stem = format!("train.{}-{}", b.pivot, b.other);
            write_lines(&dir.join(format!("{stem}.{}", b.pivot)), &b.pivot_side)?;
            write_lines(&dir.join(format!("{stem}.{}", b.other)), &b.other_side)?;
        }
        for (l, s) in &self.valid {
            write_lines(&dir.join(format!("valid.{l}")), s)?;
        }
        for (l, s) in &self.test {
            write_lines(&dir.join(format!("test.{l}")), s)?;
        }
        for (l, v) in &self.vocabs {
            v.save(&dir.join(format!("vocab.{l}")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
        let mut train = Vec::new();
        for x in manifest.others() {
            let stem = format!("train.{}-{}", manifest.pivot, x);
            let pivot_side = read_lines(&dir.join(format!("{stem}.{}", manifest.pivot)))?;
            let other_side = read_lines(&dir.join(format!("{stem}.{x}")))?;
            if pivot_side.len() != other_side.len() {
                return Err(Error::Invalid(format!(
                    "{stem}: sides have different lengths"
                )));
            }
            train.push(Bitext {
                pivot: manifest.pivot.clone(),
                other: x,
                pivot_side,
                other_side,
            });
        }
        let mut valid = BTreeMap::new();
        let mut test = BTreeMap::new();
        for l in manifest.langs() {
            valid.insert(l.clone(), read_lines(&dir.join(format!("valid.{l}")))?);
            test.insert(l.clone(), read_lines(&dir.join(format!("test.{l}")))?);
        }
        let vocabs = load_vocabs(dir)?;
        Ok(Dataset {
            manifest,
            vocabs,
            train,
            valid,
            test,
        })
    }
}

/// Only the vocabularies of a saved dataset, e.g. to load a checkpoint.
pub fn load_vocabs(dir: &Path) -> Result<BTreeMap<String, Vocab>> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    manifest
        .langs()
        .into_iter()
        .map(|l| {
            let v = Vocab::load(&dir.join(format!("vocab.{l}")))?;
            Ok((l, v))
        })
        .collect()
}

fn build_vocabs(manifest: &Manifest, train: &[Bitext]) -> Result<BTreeMap<String, Vocab>> {
    let codes = manifest.langs();
    let mut out = BTreeMap::new();
    for l in manifest.langs() {
        let mut sents: Vec<&[String]> = Vec::new();
        for b in train {
            if b.pivot == l {
                sents.extend(b.pivot_side.iter().map(Vec::as_slice));
            }
            if b.other == l {
                sents.extend(b.other_side.iter().map(Vec::as_slice));
            }
        }
        out.insert(l.clone(), Vocab::build(sents, &codes)?);
    }
    Ok(out)
}

pub fn write_lines(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut s = String::new();
    for t in sentences {
        s.push_str(&t.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_lines(path: &Path) -> Result<Vec<Sentence>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(tokenize).collect())
}

pub fn tokenize(line: &str) -> Sentence {
    line.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> Dataset {
        Dataset::generate(&Manifest::cipher(3, 3, 60)).unwrap()
    }

    #[test]
    fn supervised_set_is_pivot_only() {
        let m = Manifest::cipher(0, 3, 10);
        let sup = m.supervised();
        assert_eq!(sup.len(), 6);
        assert!(sup.iter().all(|(a, b)| a == "en" || b == "en"));
    }

    #[test]
    fn pivot_pairs_use_disjoint_sentences() {
        let d = small();
        let mut seen = HashSet::new();
        for b in &d.train {
            assert_eq!(b.pivot_side.len(), 60);
            for s in &b.pivot_side {
                assert!(seen.insert(s.clone()));
            }
        }
    }

    #[test]
    fn test_split_is_multi_parallel_and_oracle_exact() {
        let d = small();
        let m = &d.manifest;
        let (xa, xb) = (m.spec("xa").unwrap(), m.spec("xb").unwrap());
        for (a, b) in d.test["xa"].iter().zip(&d.test["xb"]) {
            let ids = xa.parse(a).unwrap();
            let want = crate::corpus::synth::oracle_translate(&xa, &xb, &ids).unwrap();
            assert_eq!(xb.render(&want), *b);
        }
    }

    #[test]
    fn vocabularies_share_no_content_tokens() {
        let d = small();
        let mut owner = std::collections::HashMap::new();
        for (l, v) in &d.vocabs {
            for id in v.n_specials()..v.len() {
                let t = v.token(id).unwrap().to_string();
                if let Some(prev) = owner.insert(t.clone(), l.clone()) {
                    panic!("`{t}` in both {prev} and {l}");
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    }

    #[test]
    fn duplicate_language_rejected() {
        let mut m = Manifest::cipher(0, 2, 10);
        m.languages.push(m.languages[1].clone());
        assert!(matches!(m.validate(), Err(Error::DuplicateLanguage(_))));
    }
}
