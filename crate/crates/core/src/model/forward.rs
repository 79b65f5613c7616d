//! Forward passes over a [`ModelGraph`]: parameters are bound onto a tape
//! once per session and shared by every view that reads them.

use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenBatch;
use crate::error::{Error, Result};
use crate::model::graph::{LanguagePack, ModelGraph};
use crate::model::store::{ParamId, ParamStore};
use crate::tensor::{Mask, Tape, Tensor, Var};
use crate::transformer::{decoder_layer, encoder_layer, sinusoidal_positions};

/// Encoder output for a batch, `[batch*len, d]`, with its key mask.
#[derive(Clone, Debug)]
pub struct Memory {
    pub states: Var,
    pub valid: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

/// Per-storage gradients read off a finished tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.entries {
            store.accumulate_grad(*id, g);
        }
    }
}

pub struct Session<'m> {
    model: &'m ModelGraph,
    pub tape: Tape,
    bound: Vec<Option<Var>>,
    dropout: Option<ChaCha8Rng>,
    track_grads: bool,
}

impl<'m> Session<'m> {
    /// Gradient-tracking session. Dropout is active iff `dropout` is given.
    pub fn train(model: &'m ModelGraph, dropout: Option<ChaCha8Rng>) -> Self {
        Session {
            model,
            tape: Tape::new(),
            bound: vec![None; model.store.len()],
            dropout,
            track_grads: true,
        }
    }

    /// Inference: no dropout, no gradients.
    pub fn eval(model: &'m ModelGraph) -> Self {
        Session {
            model,
            tape: Tape::new(),
            bound: vec![None; model.store.len()],
            dropout: None,
            track_grads: false,
        }
    }

    pub fn model(&self) -> &'m ModelGraph {
        self.model
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let store = &self.model.store;
        let rg = self.track_grads && !store.is_frozen(id);
        let v = self.tape.leaf(store.value(id).clone(), rg);
        self.bound[id.index()] = Some(v);
        v
    }

    fn embed(&mut self, table: ParamId, ids: &TokenBatch) -> Result<Var> {
        let d = self.model.spec.dims.d_model;
        let t = self.param(table);
        let x = self.tape.embedding(t, &ids.ids)?;
        let x = self.tape.scale(x, (d as f64).sqrt());
        let pos = sinusoidal_positions(ids.len, d)?;
        let mut tiled = Vec::with_capacity(ids.batch * ids.len * d);
        for _ in 0..ids.batch {
            tiled.extend_from_slice(pos.data());
        }
        let pos = self
            .tape
            .constant(Tensor::new(vec![ids.batch * ids.len, d], tiled)?);
        let x = self.tape.add(x, pos)?;
        let rate = self.model.spec.dims.dropout;
        Ok(self.tape.dropout(
            x,
            rate,
            self.dropout.as_mut().map(|r| r as &mut dyn rand::RngCore),
        ))
    }

    /// Private encoder layers, then the shared ones: `[batch*len, d]`.
    pub fn encode(&mut self, lang: &str, src: &TokenBatch) -> Result<Memory> {
        let pack: &LanguagePack = self.model.pack(lang)?;
        let valid = src.valid();
        let mask = Mask::padding(src.batch, src.len, &valid)?;
        let mut x = self.embed(pack.enc_embed, src)?;
        for layer in &pack.encoder {
            let p = layer.try_map(&mut |&id| Ok(self.param(id)))?;
            x = encoder_layer(
                &mut self.tape,
                x,
                &mask,
                &p,
                &self.model.spec.dims,
                self.dropout.as_mut(),
            )?;
        }
        Ok(Memory {
            states: x,
            valid,
            batch: src.batch,
            len: src.len,
        })
    }

    /// Teacher-forced decoder logits `[batch*len, V]` for inputs `tgt_in`,
    /// which must start with the target language code.
    pub fn decode_train(
        &mut self,
        lang: &str,
        memory: &Memory,
        tgt_in: &TokenBatch,
    ) -> Result<Var> {
        let pack: &LanguagePack = self.model.pack(lang)?;
        if memory.batch != tgt_in.batch {
            return Err(Error::shape(
                "decode_train",
                &[memory.batch, memory.len],
                &[tgt_in.batch, tgt_in.len],
            ));
        }
        let code = pack.vocab.lang_code(lang);
        for b in 0..tgt_in.batch {
            if Some(tgt_in.row(b)[0]) != code {
                return Err(Error::Invalid(format!(
                    "decoder input row {b} does not start with the {lang} language code"
                )));
            }
        }
        let self_mask = Mask::causal(tgt_in.batch, &tgt_in.valid())?;
        let mem_mask = Mask::padding(tgt_in.batch, tgt_in.len, &memory.valid)?;
        let mut x = self.embed(pack.dec_embed, tgt_in)?;
        for layer in &pack.decoder {
            let p = layer.try_map(&mut |&id| Ok(self.param(id)))?;
            let mem = p.cross.as_ref().map(|_| (memory.states, &mem_mask));
            x = decoder_layer(
                &mut self.tape,
                x,
                &self_mask,
                mem,
                &p,
                &self.model.spec.dims,
                self.dropout.as_mut(),
            )?;
        }
        let out = self.param(pack.out_proj());
        self.tape.matmul_nt(x, out)
    }

    /// Same-language reconstruction of `tgt_in` from the corrupted `noised`.
    pub fn dae_forward(
        &mut self,
        src_lang: &str,
        tgt_lang: &str,
        noised: &TokenBatch,
        tgt_in: &TokenBatch,
    ) -> Result<Var> {
        if src_lang != tgt_lang {
            return Err(Error::Invalid(format!(
                "denoising is monolingual, got {src_lang}->{tgt_lang}"
            )));
        }
        let m = self.encode(src_lang, noised)?;
        self.decode_train(tgt_lang, &m, tgt_in)
    }

    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.tape.backward(loss)?;
        let mut entries = Vec::new();
        for (i, v) in self.bound.iter().enumerate() {
            let Some(v) = v else { continue };
            if let Some(g) = self.tape.grad(*v) {
                entries.push((ParamId(i), g.to_vec()));
            }
        }
        Ok(Gradients { entries })
    }
}
