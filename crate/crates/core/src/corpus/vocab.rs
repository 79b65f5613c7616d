use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;
pub const MASK: usize = 3;
/// First language-code id; codes follow in manifest language order.
pub const FIRST_LANG_CODE: usize = 4;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "</s>", "<mask>"];

pub fn lang_code_token(lang: &str) -> String {
    format!("<2{lang}>")
}

/// Per-language word vocabulary. Ids are dense: the special block
/// (`PAD UNK EOS MASK`, then one code per language) comes first, followed by
/// content tokens in descending frequency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    n_specials: usize,
}

impl Vocab {
    pub fn build<'a, I>(sentences: I, lang_codes: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut content: Vec<(&str, usize)> = freq.into_iter().collect();
        content.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(lang_codes.iter().map(|l| lang_code_token(l)));
        let n_specials = tokens.len();
        for (t, _) in content {
            if tokens[..n_specials].iter().any(|s| s == t) {
                return Err(Error::Invalid(format!(
                    "content token `{t}` collides with a special"
                )));
            }
            tokens.push(t.to_string());
        }
        Vocab::from_tokens(tokens, n_specials)
    }

    fn from_tokens(tokens: Vec<String>, n_specials: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocab {
            tokens,
            index,
            n_specials,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_specials(&self) -> usize {
        self.n_specials
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < self.n_specials
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lang_code(&self, lang: &str) -> Option<usize> {
        self.id(&lang_code_token(lang))
    }

    pub fn lang_codes(&self) -> std::ops::Range<usize> {
        FIRST_LANG_CODE..self.n_specials
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]).to_string())
            .collect()
    }

    /// SHA-256 over the newline-joined token list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let mut out = String::with_capacity(64);
        for b in h.finalize() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    /// One token per line; the first line records the size of the special block.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = format!("#specials {}\n", self.n_specials);
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let n_specials = lines
            .next()
            .and_then(|l| l.strip_prefix("#specials "))
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| {
                Error::Invalid(format!("{}: missing specials header", path.display()))
            })?;
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        if tokens.len() < n_specials || n_specials < FIRST_LANG_CODE {
            return Err(Error::Invalid(format!(
                "{}: truncated vocabulary",
                path.display()
            )));
        }
        if tokens[..FIRST_LANG_CODE] != SPECIALS {
            return Err(Error::Invalid(format!(
                "{}: special block corrupted",
                path.display()
            )));
        }
        Vocab::from_tokens(tokens, n_specials)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents() -> Vec<Vec<String>> {
        [["b", "a", "b"].as_slice(), ["c", "b"].as_slice()]
            .iter()
            .map(|s| s.iter().map(|t| t.to_string()).collect())
            .collect()
    }

    fn vocab() -> Vocab {
        let s = sents();
        Vocab::build(s.iter().map(Vec::as_slice), &["en".into(), "xa".into()]).unwrap()
    }

    #[test]
    fn specials_once_then_frequency_order() {
        let v = vocab();
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i));
        }
        assert_eq!(v.lang_code("en"), Some(4));
        assert_eq!(v.lang_code("xa"), Some(5));
        assert_eq!(v.n_specials(), 6);
        assert_eq!(v.token(6), Some("b"));
        assert_eq!(v.len(), 9);
        let mut seen = v.tokens.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), v.len());
    }

    #[test]
    fn encode_decode_round_trip_and_unk() {
        let v = vocab();
        let s: Vec<String> = vec!["a".into(), "c".into()];
        assert_eq!(v.decode(&v.encode(&s)), s);
        assert_eq!(v.encode(&["zzz".to_string()]), vec![UNK]);
    }

    #[test]
    fn empty_corpus_is_error() {
        let none: Vec<Vec<String>> = vec![];
        assert!(matches!(
            Vocab::build(none.iter().map(Vec::as_slice), &[]),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn save_load_preserves_hash() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.xa");
        v.save(&p).unwrap();
        let w = Vocab::load(&p).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.content_hash(), w.content_hash());
    }
}
