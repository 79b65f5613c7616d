use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{hash_str, stream_rng, DOMAIN_INIT};
use crate::tensor::Tensor;
use crate::transformer::Init;

/// Index of one parameter storage. Tied views hold the same id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat registry of parameter storages keyed by canonical name, with
/// gradient accumulators and frozen flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    frozen: Vec<bool>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(None);
        self.frozen.push(false);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers `name` with a deterministic initial value. The draw depends
    /// only on `(seed, name)`, so adding parameters never disturbs others.
    pub fn init(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        seed: u64,
        d_model: usize,
    ) -> Result<ParamId> {
        let value = init_tensor(name, shape, init, seed, d_model)?;
        self.insert(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let slot = self.grads[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, &v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Marks every parameter whose canonical name satisfies `pred` as frozen.
    pub fn freeze_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, f) in self.names.iter().zip(self.frozen.iter_mut()) {
            if pred(name) {
                *f = true;
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = false);
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.ids()
            .filter(|&id| !self.is_frozen(id))
            .map(|id| self.value(id).numel())
            .sum()
    }
}

fn init_tensor(
    name: &str,
    shape: &[usize],
    init: Init,
    seed: u64,
    d_model: usize,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut rng = stream_rng(seed, DOMAIN_INIT, hash_str(name), 0);
    let data: Vec<f64> = match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Xavier => {
            let (fan_in, fan_out) = match shape {
                [a, b] => (*a, *b),
                _ => (n, n),
            };
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        }
        Init::Embedding => {
            let normal = Normal::new(0.0, (d_model as f64).powf(-0.5))
                .map_err(|e| Error::Invalid(e.to_string()))?;
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}
