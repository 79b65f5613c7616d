use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

/// Boolean attention mask over `[batch, queries, keys]`; `true` means the key
/// may be attended.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    batch: usize,
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(batch: usize, queries: usize, keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != batch * queries * keys {
            return Err(Error::shape(
                "mask",
                &[batch, queries, keys],
                &[allowed.len()],
            ));
        }
        Ok(Mask {
            batch,
            queries,
            keys,
            allowed,
        })
    }

    /// Every query may see every non-pad key. `key_valid` is `[batch, keys]`.
    pub fn padding(batch: usize, queries: usize, key_valid: &[bool]) -> Result<Self> {
        if batch == 0 || !key_valid.len().is_multiple_of(batch) {
            return Err(Error::Invalid(
                "padding mask rows do not divide batch".into(),
            ));
        }
        let keys = key_valid.len() / batch;
        let mut allowed = Vec::with_capacity(batch * queries * keys);
        for row in key_valid.chunks_exact(keys) {
            for _ in 0..queries {
                allowed.extend_from_slice(row);
            }
        }
        Mask::new(batch, queries, keys, allowed)
    }

    /// Lower-triangular self mask, additionally hiding pad keys.
    pub fn causal(batch: usize, key_valid: &[bool]) -> Result<Self> {
        if batch == 0 || !key_valid.len().is_multiple_of(batch) {
            return Err(Error::Invalid(
                "causal mask rows do not divide batch".into(),
            ));
        }
        let len = key_valid.len() / batch;
        let mut allowed = Vec::with_capacity(batch * len * len);
        for row in key_valid.chunks_exact(len) {
            for i in 0..len {
                for (j, &valid) in row.iter().enumerate() {
                    allowed.push(j <= i && valid);
                }
            }
        }
        Mask::new(batch, len, len, allowed)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn allows(&self, b: usize, q: usize, k: usize) -> bool {
        self.allowed[(b * self.queries + q) * self.keys + k]
    }
}

struct AttnSaved {
    q: usize,
    k: usize,
    v: usize,
    batch: usize,
    tq: usize,
    tk: usize,
    heads: usize,
    scale: f64,
    /// Post-softmax weights `[batch, heads, tq, tk]`.
    probs: Vec<f64>,
    /// Inverted-dropout multipliers on the weights, same layout as `probs`.
    drop: Option<Vec<f64>>,
}

enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    MatMulNT {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        c: f64,
    },
    AddBias {
        x: usize,
        bias: usize,
        cols: usize,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    Softmax {
        x: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        cols: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
        cols: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    Attention(Box<AttnSaved>),
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
        smoothing: f64,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order; [`Tape::backward`] replays them in
/// reverse. A tape supports exactly one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the loss w.r.t. `v`, available after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.last_dim())
    }

    /// `[m,k] · [k,n] → [m,n]`. Leading dimensions of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(Error::shape("matmul", self.shape(a), bs));
        }
        let n = bs[1];
        let mut out = vec![0.0; m * n];
        gemm_nn(
            m,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
        );
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// `[m,k] · [n,k]ᵀ → [m,n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let bs = self.shape(b);
        if bs.len() != 2 || bs[1] != k {
            return Err(Error::shape("matmul_nt", self.shape(a), bs));
        }
        let n = bs[0];
        let mut out = vec![0.0; m * n];
        gemm_nt(
            m,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
        );
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::MatMulNT {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor {
            shape: self.shape(a).to_vec(),
            data,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub { a: a.0, b: b.0 }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let src = self.value(a);
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|v| v * c).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale { a: a.0, c }, rg)
    }

    /// Adds a `[d]` bias to every row of `x[.., d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).last_dim();
        if self.value(bias).numel() != cols {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        let rg = self.rg(&[x, bias]);
        Ok(self.push(
            t,
            Op::AddBias {
                x: x.0,
                bias: bias.0,
                cols,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let src = self.value(x);
        let data = match kind {
            Activation::Gelu => src.data().iter().map(|&v| gelu(v)).collect(),
            Activation::Relu => src.data().iter().map(|&v| v.max(0.0)).collect(),
        };
        let t = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Act { x: x.0, kind }, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Gelu)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Invalid(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(src[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..len {
                    let e = (src[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    s += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= s;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Softmax { x: x.0, len, inner },
            rg,
        ))
    }

    /// Normalizes each row over the last dimension, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = self.value(x).last_dim();
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / cols;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data: out,
        };
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                cols,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Gathers rows of `table[V, d]`; backward scatter-adds into the table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, cols) = self.dims2(table);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= vocab {
                return Err(Error::TokenOutOfRange { id, size: vocab });
            }
            out.extend_from_slice(&src[id * cols..(id + 1) * cols]);
        }
        if ids.is_empty() {
            return Err(Error::Invalid("embedding lookup with no ids".into()));
        }
        let t = Tensor {
            shape: vec![ids.len(), cols],
            data: out,
        };
        let rg = self.rg(&[table]);
        Ok(self.push(
            t,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
                cols,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity when `rng` is `None` (eval mode) or `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: Option<&mut dyn RngCore>) -> Var {
        let Some(rng) = rng else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Dropout { x: x.0, mask }, rg)
    }

    /// Scaled dot-product attention over `heads` heads.
    ///
    /// `q` is `[batch*tq, d]`, `k`/`v` are `[batch*tk, d]`. Masked keys get a
    /// weight of exactly zero. A query row with no attendable key is an error.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &Mask,
        heads: usize,
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<Var> {
        let (qr, d) = self.dims2(q);
        let (kr, dk) = self.dims2(k);
        let (vr, dv) = self.dims2(v);
        let (batch, tq, tk) = (mask.batch, mask.queries, mask.keys);
        if dk != d || dv != d || kr != vr {
            return Err(Error::shape("attention", self.shape(q), self.shape(k)));
        }
        if qr != batch * tq || kr != batch * tk {
            return Err(Error::shape("attention mask", &[qr, kr], &[batch, tq, tk]));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Invalid(format!(
                "d={d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut probs = vec![0.0; batch * heads * tq * tk];
        let mut out = vec![0.0; qr * d];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..tq {
                    let qrow = &qd[(b * tq + i) * d + h * dh..][..dh];
                    let p = &mut probs[((b * heads + h) * tq + i) * tk..][..tk];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..tk {
                        if mask.allows(b, i, j) {
                            let krow = &kd[(b * tk + j) * d + h * dh..][..dh];
                            p[j] = dot(qrow, krow) * scale;
                            mx = mx.max(p[j]);
                        }
                    }
                    if mx == f64::NEG_INFINITY {
                        return Err(Error::FullyMasked { row: b * tq + i });
                    }
                    let mut s = 0.0;
                    for j in 0..tk {
                        if mask.allows(b, i, j) {
                            p[j] = (p[j] - mx).exp();
                            s += p[j];
                        } else {
                            p[j] = 0.0;
                        }
                    }
                    for pj in p.iter_mut() {
                        *pj /= s;
                    }
                }
            }
        }
        let drop = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let keep = 1.0 - rate;
                Some(
                    (0..probs.len())
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect::<Vec<_>>(),
                )
            }
            _ => None,
        };
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..tq {
                    let pbase = ((b * heads + h) * tq + i) * tk;
                    let orow = &mut out[(b * tq + i) * d + h * dh..][..dh];
                    for j in 0..tk {
                        let mut w = probs[pbase + j];
                        if let Some(dm) = &drop {
                            w *= dm[pbase + j];
                        }
                        if w != 0.0 {
                            axpy(w, &vd[(b * tk + j) * d + h * dh..][..dh], orow);
                        }
                    }
                }
            }
        }
        let t = Tensor {
            shape: self.shape(q).to_vec(),
            data: out,
        };
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            t,
            Op::Attention(Box::new(AttnSaved {
                q: q.0,
                k: k.0,
                v: v.0,
                batch,
                tq,
                tk,
                heads,
                scale,
                probs,
                drop,
            })),
            rg,
        ))
    }

    /// Token-mean negative log-likelihood over rows whose target is not `pad_id`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        self.cross_entropy_smoothed(logits, targets, pad_id, 0.0)
    }

    /// Cross-entropy against `(1-ε)·onehot + ε/V`.
    pub fn cross_entropy_smoothed(
        &mut self,
        logits: Var,
        targets: &[usize],
        pad_id: usize,
        smoothing: f64,
    ) -> Result<Var> {
        let (rows, vocab) = self.dims2(logits);
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; rows * vocab];
        let mut tgt = Vec::with_capacity(rows);
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if t == pad_id {
                tgt.push(None);
                continue;
            }
            if t >= vocab {
                return Err(Error::TokenOutOfRange { id: t, size: vocab });
            }
            let row = &src[r * vocab..(r + 1) * vocab];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            let p = &mut probs[r * vocab..(r + 1) * vocab];
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - mx).exp();
                s += *pj;
            }
            for pj in p.iter_mut() {
                *pj /= s;
            }
            let lse = mx + s.ln();
            let mut loss = (1.0 - smoothing) * (lse - row[t]);
            if smoothing > 0.0 {
                let mean_logit = row.iter().sum::<f64>() / vocab as f64;
                loss += smoothing * (lse - mean_logit);
            }
            total += loss;
            count += 1;
            tgt.push(Some(t));
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy {
                logits: logits.0,
                targets: tgt,
                probs,
                count,
                smoothing,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean { x: x.0 }, rg)
    }

    /// Reverse pass from a scalar `loss`. Gradients of every node that
    /// requires one become available through [`Tape::grad`]; contributions
    /// from multiple uses of a value are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::BackwardTwice);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |j: usize| nodes[j].requires_grad;
        fn acc(grads: &mut [Option<Vec<f64>>], j: usize, n: usize) -> &mut Vec<f64> {
            grads[j].get_or_insert_with(|| vec![0.0; n])
        }
        let val = |j: usize| nodes[j].value.data();
        let numel = |j: usize| nodes[j].value.numel();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if needs(a) {
                    let ga = acc(grads, a, numel(a));
                    gemm_nt(m, n, k, g, val(b), ga);
                }
                if needs(b) {
                    let gb = acc(grads, b, numel(b));
                    gemm_tn(k, m, n, val(a), g, gb);
                }
            }
            &Op::MatMulNT { a, b, m, k, n } => {
                if needs(a) {
                    let ga = acc(grads, a, numel(a));
                    gemm_nn(m, n, k, g, val(b), ga);
                }
                if needs(b) {
                    let gb = acc(grads, b, numel(b));
                    gemm_tn(n, m, k, g, val(a), gb);
                }
            }
            &Op::Add { a, b } => {
                for j in [a, b] {
                    if needs(j) {
                        axpy(1.0, g, acc(grads, j, numel(j)));
                    }
                }
            }
            &Op::Sub { a, b } => {
                if needs(a) {
                    axpy(1.0, g, acc(grads, a, numel(a)));
                }
                if needs(b) {
                    axpy(-1.0, g, acc(grads, b, numel(b)));
                }
            }
            &Op::Mul { a, b } => {
                if needs(a) {
                    let other = val(b).to_vec();
                    let ga = acc(grads, a, numel(a));
                    for ((gv, &gi), &o) in ga.iter_mut().zip(g).zip(&other) {
                        *gv += gi * o;
                    }
                }
                if needs(b) {
                    let other = val(a).to_vec();
                    let gb = acc(grads, b, numel(b));
                    for ((gv, &gi), &o) in gb.iter_mut().zip(g).zip(&other) {
                        *gv += gi * o;
                    }
                }
            }
            &Op::Scale { a, c } => {
                if needs(a) {
                    axpy(c, g, acc(grads, a, numel(a)));
                }
            }
            &Op::AddBias { x, bias, cols } => {
                if needs(x) {
                    axpy(1.0, g, acc(grads, x, numel(x)));
                }
                if needs(bias) {
                    let gb = acc(grads, bias, cols);
                    for row in g.chunks_exact(cols) {
                        axpy(1.0, row, gb);
                    }
                }
            }
            &Op::Act { x, kind } => {
                if needs(x) {
                    let xs = val(x);
                    let gx = acc(grads, x, xs.len());
                    match kind {
                        Activation::Gelu => {
                            for ((gv, &gi), &xv) in gx.iter_mut().zip(g).zip(xs) {
                                *gv += gi * gelu_grad(xv);
                            }
                        }
                        Activation::Relu => {
                            for ((gv, &gi), &xv) in gx.iter_mut().zip(g).zip(xs) {
                                if xv > 0.0 {
                                    *gv += gi;
                                }
                            }
                        }
                    }
                }
            }
            &Op::Softmax { x, len, inner } => {
                if needs(x) {
                    let y = nodes[i].value.data();
                    let gx = acc(grads, x, y.len());
                    let outer = y.len() / (len * inner);
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * len * inner + ii;
                            let mut s = 0.0;
                            for j in 0..len {
                                s += g[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..len {
                                let at = base + j * inner;
                                gx[at] += y[at] * (g[at] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                rstd,
            } => {
                let (x, gain, bias, cols) = (*x, *gain, *bias, *cols);
                if needs(gain) {
                    let gg = acc(grads, gain, cols);
                    for (grow, hrow) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for c in 0..cols {
                            gg[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if needs(bias) {
                    let gb = acc(grads, bias, cols);
                    for grow in g.chunks_exact(cols) {
                        axpy(1.0, grow, gb);
                    }
                }
                if needs(x) {
                    let gain_v = val(gain).to_vec();
                    let gx = acc(grads, x, xhat.len());
                    let inv = 1.0 / cols as f64;
                    for (r, (grow, hrow)) in g
                        .chunks_exact(cols)
                        .zip(xhat.chunks_exact(cols))
                        .enumerate()
                    {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..cols {
                            let dh = grow[c] * gain_v[c];
                            m1 += dh;
                            m2 += dh * hrow[c];
                        }
                        m1 *= inv;
                        m2 *= inv;
                        let out = &mut gx[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            let dh = grow[c] * gain_v[c];
                            out[c] += rstd[r] * (dh - m1 - hrow[c] * m2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids, cols } => {
                let (table, cols) = (*table, *cols);
                if needs(table) {
                    let gt = acc(grads, table, numel(table));
                    for (row, &id) in g.chunks_exact(cols).zip(ids) {
                        axpy(1.0, row, &mut gt[id * cols..(id + 1) * cols]);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                if needs(x) {
                    let gx = acc(grads, x, mask.len());
                    for ((gv, &gi), &mv) in gx.iter_mut().zip(g).zip(mask) {
                        *gv += gi * mv;
                    }
                }
            }
            Op::Attention(s) => self.attention_backward(s, g, grads),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
                smoothing,
            } => {
                let logits = *logits;
                if needs(logits) {
                    let vocab = nodes[logits].value.last_dim();
                    let scale = g[0] / *count as f64;
                    let uniform = smoothing / vocab as f64;
                    let gl = acc(grads, logits, probs.len());
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let p = &probs[r * vocab..(r + 1) * vocab];
                        let out = &mut gl[r * vocab..(r + 1) * vocab];
                        for c in 0..vocab {
                            let mut target = uniform;
                            if c == t {
                                target += 1.0 - smoothing;
                            }
                            out[c] += scale * (p[c] - target);
                        }
                    }
                }
            }
            &Op::Sum { x } => {
                if needs(x) {
                    for gv in acc(grads, x, numel(x)).iter_mut() {
                        *gv += g[0];
                    }
                }
            }
            &Op::Mean { x } => {
                if needs(x) {
                    let n = numel(x);
                    let c = g[0] / n as f64;
                    for gv in acc(grads, x, n).iter_mut() {
                        *gv += c;
                    }
                }
            }
        }
    }

    fn attention_backward(&self, s: &AttnSaved, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let d = self.nodes[s.q].value.last_dim();
        let dh = d / s.heads;
        let qd = self.nodes[s.q].value.data();
        let kd = self.nodes[s.k].value.data();
        let vd = self.nodes[s.v].value.data();
        let mut gq = vec![0.0; qd.len()];
        let mut gk = vec![0.0; kd.len()];
        let mut gv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; s.tk];
        for b in 0..s.batch {
            for h in 0..s.heads {
                for i in 0..s.tq {
                    let pbase = ((b * s.heads + h) * s.tq + i) * s.tk;
                    let p = &s.probs[pbase..pbase + s.tk];
                    let go = &g[(b * s.tq + i) * d + h * dh..][..dh];
                    let mut sum = 0.0;
                    for j in 0..s.tk {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let voff = (b * s.tk + j) * d + h * dh;
                        let mut w = p[j];
                        let mut dm = 1.0;
                        if let Some(drop) = &s.drop {
                            dm = drop[pbase + j];
                            w *= dm;
                        }
                        if w != 0.0 {
                            axpy(w, go, &mut gv[voff..voff + dh]);
                        }
                        dp[j] = dot(go, &vd[voff..voff + dh]) * dm;
                        sum += p[j] * dp[j];
                    }
                    let qoff = (b * s.tq + i) * d + h * dh;
                    for j in 0..s.tk {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - sum) * s.scale;
                        let koff = (b * s.tk + j) * d + h * dh;
                        axpy(ds, &kd[koff..koff + dh], &mut gq[qoff..qoff + dh]);
                        axpy(ds, &qd[qoff..qoff + dh], &mut gk[koff..koff + dh]);
                    }
                }
            }
        }
        for (j, part) in [(s.q, gq), (s.k, gk), (s.v, gv)] {
            if self.nodes[j].requires_grad {
                let n = part.len();
                let dst = grads[j].get_or_insert_with(|| vec![0.0; n]);
                axpy(1.0, &part, dst);
            }
        }
    }
}
