use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, Mask, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::{stream_rng, DOMAIN_GRADCHECK};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coordinates: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares the tape gradient of the scalar function `f` with central finite
/// differences at every coordinate of every input.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (ix, grads) in analytic.iter().enumerate() {
        for c in 0..grads.len() {
            let orig = probe[ix].data()[c];
            probe[ix].data_mut()[c] = orig + eps;
            let plus = eval(&f, &probe)?;
            probe[ix].data_mut()[c] = orig - eps;
            let minus = eval(&f, &probe)?;
            probe[ix].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((ix, c, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Step used by the op suite.
pub const SUITE_EPS: f64 = 1e-6;

/// Op families covered by [`op_suite`]. Each case draws fresh shapes and values.
pub const SUITE_OPS: &[&str] = &[
    "matmul",
    "matmul_nt",
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "gelu",
    "relu",
    "softmax",
    "layer_norm",
    "embedding",
    "attention_padding",
    "attention_causal",
    "cross_entropy",
    "cross_entropy_smoothed",
    "mean",
    "composite",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("non-empty shape")
}

/// `sum(x ⊙ w)` for a fixed random `w`, so every output coordinate matters.
fn probe_sum(t: &mut Tape, x: Var, w: &Tensor) -> Result<Var> {
    let w = t.constant(w.clone());
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

/// Runs `cases_per_op` randomized checks of every op in [`SUITE_OPS`].
pub fn op_suite(seed: u64, cases_per_op: usize) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for (oi, &op) in SUITE_OPS.iter().enumerate() {
        for case in 0..cases_per_op {
            let mut rng = stream_rng(seed, DOMAIN_GRADCHECK, oi as u64, case as u64);
            let report = run_case(op, &mut rng)?;
            out.push(GradCase {
                name: format!("{op}#{case}"),
                report,
            });
        }
    }
    Ok(out)
}

fn run_case(op: &str, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (m, k, n) = (
        rng.gen_range(1..5),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    let eps = SUITE_EPS;
    match op {
        "matmul" | "matmul_nt" => {
            let nt = op == "matmul_nt";
            let a = rand_tensor(rng, &[m, k]);
            let b = rand_tensor(rng, &(if nt { [n, k] } else { [k, n] }));
            let w = rand_tensor(rng, &[m, n]);
            grad_check(
                |t, v| {
                    let y = if nt {
                        t.matmul_nt(v[0], v[1])?
                    } else {
                        t.matmul(v[0], v[1])?
                    };
                    probe_sum(t, y, &w)
                },
                &[a, b],
                eps,
            )
        }
        "add" | "sub" | "mul" => {
            let a = rand_tensor(rng, &[m, n]);
            let b = rand_tensor(rng, &[m, n]);
            let w = rand_tensor(rng, &[m, n]);
            grad_check(
                |t, v| {
                    let y = match op {
                        "add" => t.add(v[0], v[1])?,
                        "sub" => t.sub(v[0], v[1])?,
                        _ => t.mul(v[0], v[1])?,
                    };
                    probe_sum(t, y, &w)
                },
                &[a, b],
                eps,
            )
        }
        "scale" => {
            let a = rand_tensor(rng, &[m, n]);
            let w = rand_tensor(rng, &[m, n]);
            let c = rng.gen_range(-3.0..3.0);
            grad_check(
                |t, v| {
                    let y = t.scale(v[0], c);
                    probe_sum(t, y, &w)
                },
                &[a],
                eps,
            )
        }
        "add_bias" => {
            let x = rand_tensor(rng, &[m, n]);
            let b = rand_tensor(rng, &[n]);
            let w = rand_tensor(rng, &[m, n]);
            grad_check(
                |t, v| {
                    let y = t.add_bias(v[0], v[1])?;
                    probe_sum(t, y, &w)
                },
                &[x, b],
                eps,
            )
        }
        "gelu" | "relu" => {
            let mut x = rand_tensor(rng, &[m, n]);
            // Keep clear of the relu kink.
            for v in x.data_mut() {
                *v = v.signum() * (v.abs() + 0.05);
            }
            let w = rand_tensor(rng, &[m, n]);
            let kind = if op == "gelu" {
                Activation::Gelu
            } else {
                Activation::Relu
            };
            grad_check(
                |t, v| {
                    let y = t.activation(v[0], kind);
                    probe_sum(t, y, &w)
                },
                &[x],
                eps,
            )
        }
        "softmax" => {
            let x = rand_tensor(rng, &[m, n + 1]);
            let w = rand_tensor(rng, &[m, n + 1]);
            let axis = rng.gen_range(0..2);
            grad_check(
                |t, v| {
                    let y = t.softmax(v[0], axis)?;
                    probe_sum(t, y, &w)
                },
                &[x],
                eps,
            )
        }
        "layer_norm" => {
            let d = n + 1;
            let x = rand_tensor(rng, &[m, d]);
            let g = rand_tensor(rng, &[d]);
            let b = rand_tensor(rng, &[d]);
            let w = rand_tensor(rng, &[m, d]);
            grad_check(
                |t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    probe_sum(t, y, &w)
                },
                &[x, g, b],
                eps,
            )
        }
        "embedding" => {
            let vocab = k + 1;
            let table = rand_tensor(rng, &[vocab, n]);
            let ids: Vec<usize> = (0..m + 1).map(|_| rng.gen_range(0..vocab)).collect();
            let w = rand_tensor(rng, &[m + 1, n]);
            grad_check(
                |t, v| {
                    let y = t.embedding(v[0], &ids)?;
                    probe_sum(t, y, &w)
                },
                &[table],
                eps,
            )
        }
        "attention_padding" | "attention_causal" => {
            let heads = rng.gen_range(1..3);
            let d = heads * rng.gen_range(1..3);
            let batch = rng.gen_range(1..3);
            let causal = op == "attention_causal";
            let tq = rng.gen_range(1..4);
            let tk = if causal { tq } else { rng.gen_range(1..4) };
            // First key of every row stays valid so no row is fully masked.
            let valid: Vec<bool> = (0..batch * tk)
                .map(|i| i % tk == 0 || rng.gen_bool(0.7))
                .collect();
            let mask = if causal {
                Mask::causal(batch, &valid)?
            } else {
                Mask::padding(batch, tq, &valid)?
            };
            let q = rand_tensor(rng, &[batch * tq, d]);
            let kk = rand_tensor(rng, &[batch * tk, d]);
            let vv = rand_tensor(rng, &[batch * tk, d]);
            let w = rand_tensor(rng, &[batch * tq, d]);
            grad_check(
                |t, v| {
                    let y = t.attention(v[0], v[1], v[2], &mask, heads, None)?;
                    probe_sum(t, y, &w)
                },
                &[q, kk, vv],
                eps,
            )
        }
        "cross_entropy" | "cross_entropy_smoothed" => {
            let vocab = n + 2;
            let rows = m + 1;
            let logits = rand_tensor(rng, &[rows, vocab]);
            // Id 0 acts as padding; the first row always counts.
            let targets: Vec<usize> = (0..rows)
                .map(|r| if r == 0 { 1 } else { rng.gen_range(0..vocab) })
                .collect();
            let smoothing = if op == "cross_entropy" {
                0.0
            } else {
                rng.gen_range(0.05..0.3)
            };
            grad_check(
                |t, v| t.cross_entropy_smoothed(v[0], &targets, 0, smoothing),
                &[logits],
                eps,
            )
        }
        "mean" => {
            let a = rand_tensor(rng, &[m, n]);
            grad_check(
                |t, v| {
                    let sq = t.mul(v[0], v[0])?;
                    Ok(t.mean(sq))
                },
                &[a],
                eps,
            )
        }
        _ => {
            // Projection, bias, layer norm, gelu, self-attention, residual.
            let d = 2 * rng.gen_range(1..3);
            let rows = m + 1;
            let x = rand_tensor(rng, &[rows, d]);
            let wp = rand_tensor(rng, &[d, d]);
            let bp = rand_tensor(rng, &[d]);
            let g = rand_tensor(rng, &[d]);
            let beta = rand_tensor(rng, &[d]);
            let w = rand_tensor(rng, &[rows, d]);
            let mask = Mask::causal(1, &vec![true; rows])?;
            grad_check(
                |t, v| {
                    let h = t.matmul(v[0], v[1])?;
                    let h = t.add_bias(h, v[2])?;
                    let h = t.layer_norm(h, v[3], v[4], 1e-5)?;
                    let h = t.gelu(h);
                    let a = t.attention(h, h, h, &mask, 2, None)?;
                    let y = t.add(a, v[0])?;
                    probe_sum(t, y, &w)
                },
                &[x, wp, bp, g, beta],
                eps,
            )
        }
    }
}
