//! The multilingual model: one pack of embeddings and layers per language,
//! where layers inside the shared ranges are the same storages for every
//! language.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::spec::SharingSpec;
use crate::model::store::{ParamId, ParamStore};
use crate::transformer::{count, DecoderLayerParams, EncoderLayerParams, Init};

/// Per-language view of the model. Layers are listed bottom-up; entries in
/// a shared range hold the same ids in every pack.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguagePack {
    pub lang: String,
    pub vocab: Vocab,
    pub enc_embed: ParamId,
    /// Decoder input embedding, also the output projection.
    pub dec_embed: ParamId,
    pub encoder: Vec<EncoderLayerParams<ParamId>>,
    pub decoder: Vec<DecoderLayerParams<ParamId>>,
}

impl LanguagePack {
    /// Output softmax weights; tied to the decoder input embedding.
    pub fn out_proj(&self) -> ParamId {
        self.dec_embed
    }

    /// View name to storage id for every parameter this language reads.
    pub fn views(&self) -> Vec<(String, ParamId)> {
        let mut out = vec![
            (format!("{}/enc_embed", self.lang), self.enc_embed),
            (format!("{}/dec_embed", self.lang), self.dec_embed),
            (format!("{}/out_proj", self.lang), self.dec_embed),
        ];
        for (l, layer) in self.encoder.iter().enumerate() {
            for (i, &id) in layer.handles().into_iter().enumerate() {
                out.push((format!("{}/enc.{}.{i}", self.lang, l + 1), id));
            }
        }
        for (l, layer) in self.decoder.iter().enumerate() {
            for (i, &id) in layer.handles().into_iter().enumerate() {
                out.push((format!("{}/dec.{}.{i}", self.lang, l + 1), id));
            }
        }
        out
    }

    pub fn param_ids(&self) -> BTreeSet<ParamId> {
        self.views().into_iter().map(|(_, id)| id).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub spec: SharingSpec,
    pub seed: u64,
    pub store: ParamStore,
    /// Registration order.
    pub langs: Vec<String>,
    packs: BTreeMap<String, LanguagePack>,
    shared_enc: BTreeMap<usize, EncoderLayerParams<ParamId>>,
    shared_dec: BTreeMap<usize, DecoderLayerParams<ParamId>>,
}

impl ModelGraph {
    pub fn build(spec: &SharingSpec, langs: &[(String, Vocab)], seed: u64) -> Result<Self> {
        spec.validate()?;
        if langs.is_empty() {
            return Err(Error::Invalid("model needs at least one language".into()));
        }
        let mut g = ModelGraph {
            spec: spec.clone(),
            seed,
            store: ParamStore::new(),
            langs: Vec::new(),
            packs: BTreeMap::new(),
            shared_enc: BTreeMap::new(),
            shared_dec: BTreeMap::new(),
        };
        let (d, dims) = (spec.dims.d_model, spec.dims.clone());
        for l in 1..=spec.enc_layers {
            if spec.enc_is_shared(l) {
                let p = EncoderLayerParams::build(
                    &format!("shared.enc.{l}"),
                    &dims,
                    &mut g.allocator(d),
                )?;
                g.shared_enc.insert(l, p);
            }
        }
        for l in 1..=spec.dec_layers {
            if spec.dec_is_shared(l) {
                let p = DecoderLayerParams::build(
                    &format!("shared.dec.{l}"),
                    &dims,
                    spec.has_cross(l),
                    &mut g.allocator(d),
                )?;
                g.shared_dec.insert(l, p);
            }
        }
        for (lang, vocab) in langs {
            g.add_pack(lang, vocab.clone())?;
        }
        Ok(g)
    }

    fn allocator(
        &mut self,
        d_model: usize,
    ) -> impl FnMut(&str, &[usize], Init) -> Result<ParamId> + '_ {
        let seed = self.seed;
        move |name: &str, shape: &[usize], init: Init| {
            self.store.init(name, shape, init, seed, d_model)
        }
    }

    fn add_pack(&mut self, lang: &str, vocab: Vocab) -> Result<()> {
        if self.packs.contains_key(lang) {
            return Err(Error::DuplicateLanguage(lang.to_string()));
        }
        if vocab.lang_code(lang).is_none() {
            return Err(Error::Invalid(format!(
                "vocabulary of {lang} lacks its language code"
            )));
        }
        if lang.contains(['.', '/']) || lang == "shared" {
            return Err(Error::Invalid(format!("reserved language id `{lang}`")));
        }
        let spec = self.spec.clone();
        let (d, dims) = (spec.dims.d_model, spec.dims.clone());
        let v = vocab.len();
        let enc_embed = self.allocator(d)(&format!("{lang}.enc_embed"), &[v, d], Init::Embedding)?;
        let dec_embed = self.allocator(d)(&format!("{lang}.dec_embed"), &[v, d], Init::Embedding)?;
        let mut encoder = Vec::with_capacity(spec.enc_layers);
        for l in 1..=spec.enc_layers {
            let p = match self.shared_enc.get(&l) {
                Some(p) => p.clone(),
                None => EncoderLayerParams::build(
                    &format!("{lang}.enc.{l}"),
                    &dims,
                    &mut self.allocator(d),
                )?,
            };
            encoder.push(p);
        }
        let mut decoder = Vec::with_capacity(spec.dec_layers);
        for l in 1..=spec.dec_layers {
            let p = match self.shared_dec.get(&l) {
                Some(p) => p.clone(),
                None => DecoderLayerParams::build(
                    &format!("{lang}.dec.{l}"),
                    &dims,
                    spec.has_cross(l),
                    &mut self.allocator(d),
                )?,
            };
            decoder.push(p);
        }
        self.packs.insert(
            lang.to_string(),
            LanguagePack {
                lang: lang.to_string(),
                vocab,
                enc_embed,
                dec_embed,
                encoder,
                decoder,
            },
        );
        self.langs.push(lang.to_string());
        Ok(())
    }

    /// Adds a language whose private layers are freshly initialized and
    /// whose shared layers are the existing storages. Nothing already in
    /// the store is touched.
    pub fn expand_language(&mut self, lang: &str, vocab: Vocab) -> Result<()> {
        self.add_pack(lang, vocab)
    }

    pub fn pack(&self, lang: &str) -> Result<&LanguagePack> {
        self.packs
            .get(lang)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }

    pub fn packs(&self) -> impl Iterator<Item = &LanguagePack> {
        self.langs.iter().map(|l| &self.packs[l])
    }

    pub fn has_lang(&self, lang: &str) -> bool {
        self.packs.contains_key(lang)
    }

    /// Every view name mapped to its storage.
    pub fn tie_table(&self) -> BTreeMap<String, ParamId> {
        self.packs().flat_map(LanguagePack::views).collect()
    }

    /// Storages touched only by `lang`.
    pub fn private_ids(&self, lang: &str) -> Result<BTreeSet<ParamId>> {
        let prefix = format!("{lang}.");
        Ok(self
            .pack(lang)?
            .param_ids()
            .into_iter()
            .filter(|&id| self.store.name(id).starts_with(&prefix))
            .collect())
    }

    pub fn shared_ids(&self) -> BTreeSet<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("shared."))
            .collect()
    }

    /// Freezes every storage except `lang`'s private ones.
    pub fn freeze_all_but(&mut self, lang: &str) -> Result<()> {
        self.pack(lang)?;
        let prefix = format!("{lang}.");
        self.store.freeze_where(|n| !n.starts_with(&prefix));
        Ok(())
    }

    pub fn tie_report(&self) -> TieReport {
        let mut groups: BTreeMap<String, TieGroup> = BTreeMap::new();
        for id in self.store.ids() {
            let name = self.store.name(id);
            let group = group_of(name);
            let entry = groups.entry(group.clone()).or_insert_with(|| TieGroup {
                group,
                langs: Vec::new(),
                params: 0,
            });
            entry.params += self.store.value(id).numel();
        }
        for pack in self.packs() {
            let ids = pack.param_ids();
            let touched: BTreeSet<String> = ids
                .iter()
                .map(|&id| group_of(self.store.name(id)))
                .collect();
            for g in touched {
                groups
                    .get_mut(&g)
                    .expect("group registered")
                    .langs
                    .push(pack.lang.clone());
            }
        }
        let shared = groups
            .values()
            .filter(|g| g.group.starts_with("shared."))
            .map(|g| g.params)
            .sum();
        let mut per_language = BTreeMap::new();
        for l in &self.langs {
            let prefix = format!("{l}.");
            let n = groups
                .values()
                .filter(|g| g.group.starts_with(&prefix))
                .map(|g| g.params)
                .sum();
            per_language.insert(l.clone(), n);
        }
        TieReport {
            groups: groups.into_values().collect(),
            shared,
            per_language,
            total: self.store.numel(),
        }
    }
}

/// `shared.enc.3.ffn.w1` → `shared.enc.3`; `xa.enc_embed` stays whole.
fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let take = match parts.get(1) {
        Some(&"enc") | Some(&"dec") => 3,
        _ => 2,
    };
    parts[..take.min(parts.len())].join(".")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TieGroup {
    pub group: String,
    /// Languages whose views reference this group.
    pub langs: Vec<String>,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TieReport {
    pub groups: Vec<TieGroup>,
    pub shared: usize,
    pub per_language: BTreeMap<String, usize>,
    /// Sum over storages, not over views.
    pub total: usize,
}

impl std::fmt::Display for TieReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for g in &self.groups {
            writeln!(f, "{:<24} {:>9}  {}", g.group, g.params, g.langs.join(","))?;
        }
        writeln!(f, "shared {}", self.shared)?;
        for (l, n) in &self.per_language {
            writeln!(f, "{l} {n}")?;
        }
        write!(f, "total {}", self.total)
    }
}

/// Closed-form count of one language's private parameters.
pub fn private_count(spec: &SharingSpec, vocab_size: usize) -> usize {
    let (d, ff) = (spec.dims.d_model, spec.dims.d_ff);
    let mut n = 2 * vocab_size * d;
    for l in 1..=spec.enc_layers {
        if !spec.enc_is_shared(l) {
            n += count::encoder_layer(d, ff);
        }
    }
    for l in 1..=spec.dec_layers {
        if !spec.dec_is_shared(l) {
            n += count::decoder_layer(d, ff, spec.has_cross(l));
        }
    }
    n
}

/// Closed-form count of the shared storages.
pub fn shared_count(spec: &SharingSpec) -> usize {
    let (d, ff) = (spec.dims.d_model, spec.dims.d_ff);
    let enc = spec
        .enc_shared
        .map_or(0, |r| r.len() * count::encoder_layer(d, ff));
    let dec: usize = (1..=spec.dec_layers)
        .filter(|&l| spec.dec_is_shared(l))
        .map(|l| count::decoder_layer(d, ff, spec.has_cross(l)))
        .sum();
    enc + dec
}
