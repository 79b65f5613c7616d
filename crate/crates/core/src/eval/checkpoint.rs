//! Binary checkpoints: magic, format version, a JSON header, then raw
//! little-endian `f64` parameter data in store order, then optional
//! optimizer moments.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelGraph, SharingSpec};
use crate::train::{RAdam, RAdamConfig};

pub const MAGIC: &[u8; 8] = b"ILNGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangRecord {
    pub lang: String,
    pub vocab_size: usize,
    pub vocab_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub cfg: RAdamConfig,
    pub step: u64,
    /// Storages that carry moments, in store order.
    pub with_moments: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub spec: SharingSpec,
    pub seed: u64,
    pub train_step: u64,
    pub langs: Vec<LangRecord>,
    pub params: Vec<ParamRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

/// A loaded checkpoint: the model plus whatever training state was saved.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelGraph,
    pub train_step: u64,
    pub optimizer: Option<RAdam>,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.reserve(xs.len() * 8);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes the model (and optionally optimizer state) to bytes.
pub fn checkpoint_bytes(
    model: &ModelGraph,
    train_step: u64,
    opt: Option<&RAdam>,
) -> Result<Vec<u8>> {
    let store = &model.store;
    let langs = model
        .packs()
        .map(|p| LangRecord {
            lang: p.lang.clone(),
            vocab_size: p.vocab.len(),
            vocab_hash: p.vocab.content_hash(),
        })
        .collect();
    let params = store
        .ids()
        .map(|id| ParamRecord {
            name: store.name(id).to_string(),
            shape: store.value(id).shape().to_vec(),
        })
        .collect();
    let optimizer = opt.map(|o| OptimizerRecord {
        cfg: o.cfg.clone(),
        step: o.step,
        with_moments: (0..o.m.len()).filter(|&i| !o.m[i].is_empty()).collect(),
    });
    let header = Header {
        spec: model.spec.clone(),
        seed: model.seed,
        train_step,
        langs,
        params,
        optimizer,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in store.ids() {
        put_f64s(&mut out, store.value(id).data());
    }
    if let (Some(o), Some(rec)) = (opt, &header.optimizer) {
        for &i in &rec.with_moments {
            put_f64s(&mut out, &o.m[i]);
            put_f64s(&mut out, &o.v[i]);
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    model: &ModelGraph,
    train_step: u64,
    opt: Option<&RAdam>,
    path: &Path,
) -> Result<()> {
    let bytes = checkpoint_bytes(model, train_step, opt)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

/// Reads only the header, e.g. to learn which vocabularies a checkpoint needs.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    let mut r = Reader { bytes, pos: 0 };
    parse_header(&mut r)
}

fn parse_header(r: &mut Reader<'_>) -> Result<Header> {
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Rebuilds the model from `bytes`. Each language's vocabulary must hash to
/// the value recorded at save time.
pub fn checkpoint_from_bytes(bytes: &[u8], vocabs: &BTreeMap<String, Vocab>) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let header = parse_header(&mut r)?;
    let mut langs = Vec::with_capacity(header.langs.len());
    for rec in &header.langs {
        let v = vocabs
            .get(&rec.lang)
            .ok_or_else(|| Error::UnknownLanguage(rec.lang.clone()))?;
        if v.content_hash() != rec.vocab_hash {
            return Err(Error::VocabHashMismatch {
                lang: rec.lang.clone(),
            });
        }
        langs.push((rec.lang.clone(), v.clone()));
    }
    let mut model = ModelGraph::build(&header.spec, &langs, header.seed)?;
    if model.store.len() != header.params.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters recorded, model has {}",
            header.params.len(),
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (id, rec) in ids.into_iter().zip(&header.params) {
        if model.store.name(id) != rec.name || model.store.value(id).shape() != rec.shape.as_slice()
        {
            return Err(Error::Checkpoint(format!(
                "parameter layout differs at `{}`",
                rec.name
            )));
        }
        let n = model.store.value(id).numel();
        let data = r.f64s(n)?;
        model.store.value_mut(id).data_mut().copy_from_slice(&data);
    }
    let optimizer = match &header.optimizer {
        None => None,
        Some(rec) => {
            let mut o = RAdam::new(rec.cfg.clone());
            o.step = rec.step;
            o.m = vec![Vec::new(); model.store.len()];
            o.v = vec![Vec::new(); model.store.len()];
            for &i in &rec.with_moments {
                let n = header
                    .params
                    .get(i)
                    .ok_or_else(|| Error::Checkpoint("moment index out of range".into()))?
                    .shape
                    .iter()
                    .product();
                o.m[i] = r.f64s(n)?;
                o.v[i] = r.f64s(n)?;
            }
            Some(o)
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        model,
        train_step: header.train_step,
        optimizer,
    })
}

pub fn load_checkpoint(path: &Path, vocabs: &BTreeMap<String, Vocab>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes, vocabs)
}

/// Hex SHA-256 of a serialized model, for equality checks.
pub fn model_digest(model: &ModelGraph) -> Result<String> {
    let bytes = checkpoint_bytes(model, 0, None)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
