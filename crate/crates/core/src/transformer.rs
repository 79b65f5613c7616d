//! Transformer sublayers: multi-head attention, sinusoidal positions, encoder
//! layers, and decoder layers whose cross-attention block is optional.
//!
//! Layer parameter structs are generic over the handle type so the same
//! layout serves the parameter store (`ParamId`) and a live tape (`Var`).

use log::debug;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Tape, Tensor, Var};

pub use crate::tensor::Mask;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    #[default]
    Post,
    Pre,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dims {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub activation: Activation,
    pub norm: NormPlacement,
    pub dropout: f64,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_model: 64,
            d_ff: 128,
            n_heads: 4,
            activation: Activation::Gelu,
            norm: NormPlacement::Post,
            dropout: 0.1,
        }
    }
}

/// How a fresh parameter should be initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Xavier-uniform over `[fan_in, fan_out]`.
    Xavier,
    Zeros,
    Ones,
    /// Normal with standard deviation `d_model^-0.5`.
    Embedding,
}

/// Callback used to allocate one named parameter.
pub trait Alloc<H> {
    fn alloc(&mut self, name: &str, shape: &[usize], init: Init) -> Result<H>;
}

impl<H, F> Alloc<H> for F
where
    F: FnMut(&str, &[usize], Init) -> Result<H>,
{
    fn alloc(&mut self, name: &str, shape: &[usize], init: Init) -> Result<H> {
        self(name, shape, init)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<H> {
    pub wq: H,
    pub bq: H,
    pub wk: H,
    pub bk: H,
    pub wv: H,
    pub bv: H,
    pub wo: H,
    pub bo: H,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams<H> {
    pub w1: H,
    pub b1: H,
    pub w2: H,
    pub b2: H,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<H> {
    pub gain: H,
    pub bias: H,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams<H> {
    pub self_attn: AttentionParams<H>,
    pub self_norm: NormParams<H>,
    pub ffn: FeedForwardParams<H>,
    pub ffn_norm: NormParams<H>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossParams<H> {
    pub attn: AttentionParams<H>,
    pub norm: NormParams<H>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams<H> {
    pub self_attn: AttentionParams<H>,
    pub self_norm: NormParams<H>,
    /// Present iff the layer attends to encoder memory.
    pub cross: Option<CrossParams<H>>,
    pub ffn: FeedForwardParams<H>,
    pub ffn_norm: NormParams<H>,
}

impl<H: Clone> AttentionParams<H> {
    pub fn build(prefix: &str, d: usize, a: &mut impl Alloc<H>) -> Result<Self> {
        let mut proj = |n: char| -> Result<(H, H)> {
            Ok((
                a.alloc(&format!("{prefix}.w{n}"), &[d, d], Init::Xavier)?,
                a.alloc(&format!("{prefix}.b{n}"), &[d], Init::Zeros)?,
            ))
        };
        let (wq, bq) = proj('q')?;
        let (wk, bk) = proj('k')?;
        let (wv, bv) = proj('v')?;
        let (wo, bo) = proj('o')?;
        Ok(AttentionParams {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        })
    }

    pub fn handles(&self) -> Vec<&H> {
        vec![
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
        ]
    }

    pub fn try_map<V>(&self, f: &mut impl FnMut(&H) -> Result<V>) -> Result<AttentionParams<V>> {
        Ok(AttentionParams {
            wq: f(&self.wq)?,
            bq: f(&self.bq)?,
            wk: f(&self.wk)?,
            bk: f(&self.bk)?,
            wv: f(&self.wv)?,
            bv: f(&self.bv)?,
            wo: f(&self.wo)?,
            bo: f(&self.bo)?,
        })
    }
}

impl<H: Clone> FeedForwardParams<H> {
    pub fn build(prefix: &str, d: usize, ff: usize, a: &mut impl Alloc<H>) -> Result<Self> {
        Ok(FeedForwardParams {
            w1: a.alloc(&format!("{prefix}.w1"), &[d, ff], Init::Xavier)?,
            b1: a.alloc(&format!("{prefix}.b1"), &[ff], Init::Zeros)?,
            w2: a.alloc(&format!("{prefix}.w2"), &[ff, d], Init::Xavier)?,
            b2: a.alloc(&format!("{prefix}.b2"), &[d], Init::Zeros)?,
        })
    }

    pub fn handles(&self) -> Vec<&H> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn try_map<V>(&self, f: &mut impl FnMut(&H) -> Result<V>) -> Result<FeedForwardParams<V>> {
        Ok(FeedForwardParams {
            w1: f(&self.w1)?,
            b1: f(&self.b1)?,
            w2: f(&self.w2)?,
            b2: f(&self.b2)?,
        })
    }
}

impl<H: Clone> NormParams<H> {
    pub fn build(prefix: &str, d: usize, a: &mut impl Alloc<H>) -> Result<Self> {
        Ok(NormParams {
            gain: a.alloc(&format!("{prefix}.gain"), &[d], Init::Ones)?,
            bias: a.alloc(&format!("{prefix}.bias"), &[d], Init::Zeros)?,
        })
    }

    pub fn handles(&self) -> Vec<&H> {
        vec![&self.gain, &self.bias]
    }

    pub fn try_map<V>(&self, f: &mut impl FnMut(&H) -> Result<V>) -> Result<NormParams<V>> {
        Ok(NormParams {
            gain: f(&self.gain)?,
            bias: f(&self.bias)?,
        })
    }
}

impl<H: Clone> EncoderLayerParams<H> {
    pub fn build(prefix: &str, dims: &Dims, a: &mut impl Alloc<H>) -> Result<Self> {
        let d = dims.d_model;
        Ok(EncoderLayerParams {
            self_attn: AttentionParams::build(&format!("{prefix}.self_attn"), d, a)?,
            self_norm: NormParams::build(&format!("{prefix}.self_norm"), d, a)?,
            ffn: FeedForwardParams::build(&format!("{prefix}.ffn"), d, dims.d_ff, a)?,
            ffn_norm: NormParams::build(&format!("{prefix}.ffn_norm"), d, a)?,
        })
    }

    pub fn handles(&self) -> Vec<&H> {
        let mut v = self.self_attn.handles();
        v.extend(self.self_norm.handles());
        v.extend(self.ffn.handles());
        v.extend(self.ffn_norm.handles());
        v
    }

    pub fn try_map<V>(&self, f: &mut impl FnMut(&H) -> Result<V>) -> Result<EncoderLayerParams<V>> {
        Ok(EncoderLayerParams {
            self_attn: self.self_attn.try_map(f)?,
            self_norm: self.self_norm.try_map(f)?,
            ffn: self.ffn.try_map(f)?,
            ffn_norm: self.ffn_norm.try_map(f)?,
        })
    }
}

impl<H: Clone> DecoderLayerParams<H> {
    pub fn build(
        prefix: &str,
        dims: &Dims,
        has_cross: bool,
        a: &mut impl Alloc<H>,
    ) -> Result<Self> {
        let d = dims.d_model;
        let self_attn = AttentionParams::build(&format!("{prefix}.self_attn"), d, a)?;
        let self_norm = NormParams::build(&format!("{prefix}.self_norm"), d, a)?;
        let cross = if has_cross {
            Some(CrossParams {
                attn: AttentionParams::build(&format!("{prefix}.cross_attn"), d, a)?,
                norm: NormParams::build(&format!("{prefix}.cross_norm"), d, a)?,
            })
        } else {
            None
        };
        Ok(DecoderLayerParams {
            self_attn,
            self_norm,
            cross,
            ffn: FeedForwardParams::build(&format!("{prefix}.ffn"), d, dims.d_ff, a)?,
            ffn_norm: NormParams::build(&format!("{prefix}.ffn_norm"), d, a)?,
        })
    }

    pub fn has_cross(&self) -> bool {
        self.cross.is_some()
    }

    pub fn handles(&self) -> Vec<&H> {
        let mut v = self.self_attn.handles();
        v.extend(self.self_norm.handles());
        if let Some(c) = &self.cross {
            v.extend(c.attn.handles());
            v.extend(c.norm.handles());
        }
        v.extend(self.ffn.handles());
        v.extend(self.ffn_norm.handles());
        v
    }

    pub fn try_map<V>(&self, f: &mut impl FnMut(&H) -> Result<V>) -> Result<DecoderLayerParams<V>> {
        Ok(DecoderLayerParams {
            self_attn: self.self_attn.try_map(f)?,
            self_norm: self.self_norm.try_map(f)?,
            cross: match &self.cross {
                Some(c) => Some(CrossParams {
                    attn: c.attn.try_map(f)?,
                    norm: c.norm.try_map(f)?,
                }),
                None => None,
            },
            ffn: self.ffn.try_map(f)?,
            ffn_norm: self.ffn_norm.try_map(f)?,
        })
    }
}

/// Closed-form parameter counts.
pub mod count {
    pub fn attention(d: usize) -> usize {
        4 * (d * d + d)
    }

    pub fn feed_forward(d: usize, ff: usize) -> usize {
        d * ff + ff + ff * d + d
    }

    pub fn norm(d: usize) -> usize {
        2 * d
    }

    pub fn encoder_layer(d: usize, ff: usize) -> usize {
        attention(d) + feed_forward(d, ff) + 2 * norm(d)
    }

    pub fn decoder_layer(d: usize, ff: usize, has_cross: bool) -> usize {
        let base = encoder_layer(d, ff);
        if has_cross {
            base + attention(d) + norm(d)
        } else {
            base
        }
    }
}

/// Fixed sinusoidal position table `[len, d]`: even columns hold
/// `sin(pos·10000^(-2i/d))`, odd columns the matching cosine.
pub fn sinusoidal_positions(len: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Invalid(format!("position width {d} must be even")));
    }
    if len == 0 {
        return Err(Error::Invalid("position table of length 0".into()));
    }
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = 10000f64.powf(-2.0 * i as f64 / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, d], data)
}

/// Dropout source for training; `None` means eval mode.
pub type DropRng<'a> = Option<&'a mut ChaCha8Rng>;

fn project(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Multi-head attention with input and output projections. `queries` is
/// `[b*tq, d]`, `keys_values` is `[b*tk, d]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    queries: Var,
    keys_values: Var,
    mask: &Mask,
    p: &AttentionParams<Var>,
    n_heads: usize,
    dropout: f64,
    rng: DropRng<'_>,
) -> Result<Var> {
    let q = project(tape, queries, p.wq, p.bq)?;
    let k = project(tape, keys_values, p.wk, p.bk)?;
    let v = project(tape, keys_values, p.wv, p.bv)?;
    let drop = rng.map(|r| (dropout, r as &mut dyn rand::RngCore));
    let ctx = tape.attention(q, k, v, mask, n_heads, drop)?;
    project(tape, ctx, p.wo, p.bo)
}

fn layer_norm(tape: &mut Tape, x: Var, n: &NormParams<Var>) -> Result<Var> {
    tape.layer_norm(x, n.gain, n.bias, LAYER_NORM_EPS)
}

/// Wraps a sublayer with residual connection, dropout and layer norm in the
/// configured order.
fn residual(
    tape: &mut Tape,
    x: Var,
    norm: &NormParams<Var>,
    dims: &Dims,
    mut rng: DropRng<'_>,
    sublayer: impl FnOnce(&mut Tape, Var, DropRng<'_>) -> Result<Var>,
) -> Result<Var> {
    match dims.norm {
        NormPlacement::Post => {
            let y = sublayer(tape, x, rng.as_deref_mut())?;
            let y = tape.dropout(y, dims.dropout, rng.map(|r| r as &mut dyn rand::RngCore));
            let s = tape.add(x, y)?;
            layer_norm(tape, s, norm)
        }
        NormPlacement::Pre => {
            let h = layer_norm(tape, x, norm)?;
            let y = sublayer(tape, h, rng.as_deref_mut())?;
            let y = tape.dropout(y, dims.dropout, rng.map(|r| r as &mut dyn rand::RngCore));
            tape.add(x, y)
        }
    }
}

fn feed_forward(
    tape: &mut Tape,
    x: Var,
    p: &FeedForwardParams<Var>,
    act: Activation,
) -> Result<Var> {
    let h = project(tape, x, p.w1, p.b1)?;
    let h = tape.activation(h, act);
    project(tape, h, p.w2, p.b2)
}

/// Self-attention and feed-forward sublayers over `x[b*t, d]`.
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    pad_mask: &Mask,
    p: &EncoderLayerParams<Var>,
    dims: &Dims,
    mut rng: DropRng<'_>,
) -> Result<Var> {
    let x = residual(
        tape,
        x,
        &p.self_norm,
        dims,
        rng.as_deref_mut(),
        |t, h, r| {
            multi_head_attention(
                t,
                h,
                h,
                pad_mask,
                &p.self_attn,
                dims.n_heads,
                dims.dropout,
                r,
            )
        },
    )?;
    residual(tape, x, &p.ffn_norm, dims, rng, |t, h, _| {
        feed_forward(t, h, &p.ffn, dims.activation)
    })
}

/// Causal self-attention, optional cross-attention over `memory`, then
/// feed-forward. `memory` must be supplied iff the layer has cross params.
pub fn decoder_layer(
    tape: &mut Tape,
    x: Var,
    causal_mask: &Mask,
    memory: Option<(Var, &Mask)>,
    p: &DecoderLayerParams<Var>,
    dims: &Dims,
    mut rng: DropRng<'_>,
) -> Result<Var> {
    let mut x = residual(
        tape,
        x,
        &p.self_norm,
        dims,
        rng.as_deref_mut(),
        |t, h, r| {
            multi_head_attention(
                t,
                h,
                h,
                causal_mask,
                &p.self_attn,
                dims.n_heads,
                dims.dropout,
                r,
            )
        },
    )?;
    match (&p.cross, memory) {
        (Some(cross), Some((mem, mem_mask))) => {
            x = residual(tape, x, &cross.norm, dims, rng.as_deref_mut(), |t, h, r| {
                multi_head_attention(
                    t,
                    h,
                    mem,
                    mem_mask,
                    &cross.attn,
                    dims.n_heads,
                    dims.dropout,
                    r,
                )
            })?;
        }
        (Some(_), None) => {
            return Err(Error::Invalid(
                "cross-attending decoder layer called without encoder memory".into(),
            ))
        }
        (None, Some(_)) => debug!("decoder layer has no cross-attention; memory ignored"),
        (None, None) => {}
    }
    residual(tape, x, &p.ffn_norm, dims, rng, |t, h, _| {
        feed_forward(t, h, &p.ffn, dims.activation)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alloc_random<'t>(
        tape: &'t mut Tape,
        rng: &ChaCha8Rng,
        zero_weights: bool,
    ) -> impl FnMut(&str, &[usize], Init) -> Result<Var> + 't {
        let mut rng = rng.clone();
        move |_name, shape, init| {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Ones => (0..n).map(|_| 1.0 + 0.2 * rng.gen::<f64>()).collect(),
                _ if zero_weights => vec![0.0; n],
                _ => (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            };
            Ok(tape.leaf(Tensor::new(shape.to_vec(), data)?, true))
        }
    }

    fn dims(d: usize, heads: usize) -> Dims {
        Dims {
            d_model: d,
            d_ff: 2 * d,
            n_heads: heads,
            dropout: 0.0,
            ..Dims::default()
        }
    }

    #[test]
    fn positions_closed_form() {
        let p = sinusoidal_positions(5, 8).unwrap();
        assert_eq!(&p.data()[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((p.data()[8] - 1f64.sin()).abs() < 1e-15);
        assert!((p.data()[8] - 0.8415).abs() < 1e-4);
        assert!(p.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(sinusoidal_positions(3, 5).is_err());
    }

    #[test]
    fn cross_layer_count_delta_matches_formula() {
        let d = dims(16, 4);
        let mut n = 0usize;
        let mut counter = |_: &str, s: &[usize], _: Init| -> Result<()> {
            n += s.iter().product::<usize>();
            Ok(())
        };
        DecoderLayerParams::build("x", &d, true, &mut counter).unwrap();
        let with = n;
        n = 0;
        let mut counter = |_: &str, s: &[usize], _: Init| -> Result<()> {
            n += s.iter().product::<usize>();
            Ok(())
        };
        DecoderLayerParams::build("x", &d, false, &mut counter).unwrap();
        let without = n;
        assert_eq!(with - without, 4 * (16 * 16 + 16) + 2 * 16);
        assert_eq!(with, count::decoder_layer(16, 32, true));
        assert_eq!(without, count::decoder_layer(16, 32, false));
    }

    #[test]
    fn zero_weights_reduce_encoder_layer_to_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let d = dims(8, 2);
        let p = {
            let mut a = alloc_random(&mut tape, &rng, true);
            EncoderLayerParams::build("e", &d, &mut a).unwrap()
        };
        let x: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.constant(Tensor::new(vec![3, 8], x).unwrap());
        let mask = Mask::padding(1, 3, &[true; 3]).unwrap();
        let y = encoder_layer(&mut tape, x, &mask, &p, &d, None).unwrap();
        let n1 = tape
            .layer_norm(x, p.self_norm.gain, p.self_norm.bias, LAYER_NORM_EPS)
            .unwrap();
        let n2 = tape
            .layer_norm(n1, p.ffn_norm.gain, p.ffn_norm.bias, LAYER_NORM_EPS)
            .unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(n2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(tape.shape(y), &[3, 8]);
    }

    #[test]
    fn non_cross_decoder_ignores_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let d = dims(8, 2);
        let p = {
            let mut a = alloc_random(&mut tape, &rng, false);
            DecoderLayerParams::build("d", &d, false, &mut a).unwrap()
        };
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.constant(Tensor::new(vec![4, 8], x).unwrap());
        let causal = Mask::causal(1, &[true; 4]).unwrap();
        let mem_mask = Mask::padding(1, 4, &[true; 2]).unwrap();
        let m1 = tape.constant(Tensor::filled(&[2, 8], 0.5));
        let m2 = tape.constant(Tensor::filled(&[2, 8], -9.0));
        let a = decoder_layer(&mut tape, x, &causal, Some((m1, &mem_mask)), &p, &d, None).unwrap();
        let b = decoder_layer(&mut tape, x, &causal, Some((m2, &mem_mask)), &p, &d, None).unwrap();
        assert_eq!(tape.value(a).data(), tape.value(b).data());
    }

    #[test]
    fn cross_decoder_requires_memory() {
        let rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let d = dims(8, 2);
        let p = {
            let mut a = alloc_random(&mut tape, &rng, false);
            DecoderLayerParams::build("d", &d, true, &mut a).unwrap()
        };
        let x = tape.constant(Tensor::filled(&[2, 8], 0.1));
        let causal = Mask::causal(1, &[true; 2]).unwrap();
        assert!(decoder_layer(&mut tape, x, &causal, None, &p, &d, None).is_err());
    }

    #[test]
    fn decoder_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let d = dims(8, 2);
        let p = {
            let mut a = alloc_random(&mut tape, &rng, false);
            DecoderLayerParams::build("d", &d, true, &mut a).unwrap()
        };
        let mut xs: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let causal = Mask::causal(1, &[true; 5]).unwrap();
        let mem = tape.constant(Tensor::filled(&[3, 8], 0.3));
        let mem_mask = Mask::padding(1, 5, &[true; 3]).unwrap();
        let x = tape.constant(Tensor::new(vec![5, 8], xs.clone()).unwrap());
        let a = decoder_layer(&mut tape, x, &causal, Some((mem, &mem_mask)), &p, &d, None).unwrap();
        for v in &mut xs[24..] {
            *v += 3.0;
        }
        let x = tape.constant(Tensor::new(vec![5, 8], xs).unwrap());
        let b = decoder_layer(&mut tape, x, &causal, Some((mem, &mem_mask)), &p, &d, None).unwrap();
        assert_eq!(&tape.value(a).data()[..24], &tape.value(b).data()[..24]);
        assert_ne!(&tape.value(a).data()[24..], &tape.value(b).data()[24..]);
    }
}
