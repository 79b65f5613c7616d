use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BatchConfig, Dataset};
use crate::error::{Error, Result};
use crate::model::{ModelGraph, Session};
use crate::noise::NoiseConfig;
use crate::rng::{stream_rng, DOMAIN_DROPOUT, DOMAIN_TASK};
use crate::train::loss::{align_loss, dae_loss, mt_loss};
use crate::train::optim::{lr_at, RAdam, RAdamConfig};
use crate::train::streams::BatchStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Mt,
    /// Reconstruction without corruption.
    Ae,
    Dae,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Mt => "mt",
            TaskKind::Ae => "ae",
            TaskKind::Dae => "dae",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub seed: u64,
    pub tasks: Vec<TaskKind>,
    pub align_weight: f64,
    pub label_smoothing: f64,
    /// Log a running loss summary every this many steps; 0 disables.
    pub eval_every: u64,
    pub batch: BatchConfig,
    pub noise: NoiseConfig,
    pub radam: RAdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 5e-4,
            warmup_steps: 400,
            max_steps: 5000,
            seed: 1,
            tasks: vec![TaskKind::Mt, TaskKind::Dae],
            align_weight: 0.0,
            label_smoothing: 0.0,
            eval_every: 100,
            batch: BatchConfig::default(),
            noise: NoiseConfig::default(),
            radam: RAdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Large-scale schedule: 64K warmup steps.
    pub fn full_scale() -> Self {
        TrainConfig {
            warmup_steps: 64_000,
            max_steps: 500_000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be >= 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task must be enabled".into()));
        }
        if self.align_weight < 0.0 || !self.align_weight.is_finite() {
            return Err(Error::Config(
                "align_weight must be a finite value >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must lie in [0, 1)".into()));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        self.batch.validate()?;
        self.noise.validate()
    }

    /// Deduplicated task list in a fixed order, so sampling does not depend
    /// on how the list was written.
    pub fn task_set(&self) -> Vec<TaskKind> {
        let mut t = self.tasks.clone();
        t.sort();
        t.dedup();
        t
    }
}

/// Which languages and pairs a run touches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainScope {
    /// Non-pivot languages whose pivot pair provides translation data.
    pub pivot_pairs: Vec<String>,
    /// Languages reconstructed by the auxiliary task.
    pub reconstruct: Vec<String>,
}

impl TrainScope {
    /// Every pair in the manifest and every language.
    pub fn full(data: &Dataset) -> Self {
        TrainScope {
            pivot_pairs: data.manifest.others(),
            reconstruct: data.manifest.langs(),
        }
    }

    /// The pivot and the listed languages.
    pub fn with(data: &Dataset, others: &[String]) -> Self {
        let mut reconstruct = vec![data.manifest.pivot.clone()];
        reconstruct.extend(others.iter().cloned());
        TrainScope {
            pivot_pairs: others.to_vec(),
            reconstruct,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub task: TaskKind,
    pub src_lang: String,
    pub tgt_lang: String,
    /// Task loss before the alignment term.
    pub loss: f64,
    pub align: Option<f64>,
    pub lr: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub opt: RAdam,
    pub step: u64,
    pub history: Vec<StepReport>,
    streams: BTreeMap<TaskKind, BatchStream>,
    tasks: Vec<TaskKind>,
}

impl Trainer {
    pub fn new(data: &Dataset, scope: &TrainScope, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let tasks = cfg.task_set();
        let mut streams = BTreeMap::new();
        for &t in &tasks {
            let s = match t {
                TaskKind::Mt => {
                    BatchStream::translation(data, &scope.pivot_pairs, &cfg.batch, cfg.seed)?
                }
                TaskKind::Dae => BatchStream::denoising(
                    data,
                    &scope.reconstruct,
                    &scope.pivot_pairs,
                    &cfg.noise,
                    &cfg.batch,
                    cfg.seed,
                )?,
                TaskKind::Ae => BatchStream::denoising(
                    data,
                    &scope.reconstruct,
                    &scope.pivot_pairs,
                    &NoiseConfig::identity(),
                    &cfg.batch,
                    cfg.seed,
                )?,
            };
            streams.insert(t, s);
        }
        Ok(Trainer {
            cfg: cfg.clone(),
            opt: RAdam::new(cfg.radam.clone()),
            step: 0,
            history: Vec::new(),
            streams,
            tasks,
        })
    }

    /// One sampled task, one batch, one optimizer update.
    pub fn joint_step(&mut self, model: &mut ModelGraph) -> Result<StepReport> {
        if model.store.trainable_numel() == 0 {
            return Err(Error::NothingTrainable);
        }
        let step = self.step + 1;
        let seed = self.cfg.seed;
        let task =
            self.tasks[stream_rng(seed, DOMAIN_TASK, step, 0).gen_range(0..self.tasks.len())];
        let batch = self
            .streams
            .get_mut(&task)
            .ok_or_else(|| Error::EmptyStream(task.to_string()))?
            .next_batch()?;
        let dropout = Some(stream_rng(seed, DOMAIN_DROPOUT, step, 0));
        let (loss, align, grads) = {
            let mut s = Session::train(model, dropout);
            let ls = self.cfg.label_smoothing;
            let loss = match task {
                TaskKind::Mt => mt_loss(&mut s, &batch, ls)?,
                TaskKind::Ae | TaskKind::Dae => dae_loss(&mut s, &batch, ls)?,
            };
            let mut total = loss;
            let mut align = None;
            if task == TaskKind::Mt && self.cfg.align_weight > 0.0 {
                let a = align_loss(&mut s, &batch)?;
                align = Some(s.tape.value(a).item());
                let wa = s.tape.scale(a, self.cfg.align_weight);
                total = s.tape.add(total, wa)?;
            }
            let loss_value = s.tape.value(loss).item();
            let grads = s.backward(total)?;
            (loss_value, align, grads)
        };
        model.store.zero_grads();
        grads.accumulate_into(&mut model.store);
        let lr = lr_at(step, self.cfg.peak_lr, self.cfg.warmup_steps)?;
        self.opt.update(&mut model.store, lr)?;
        self.step = step;
        let report = StepReport {
            step,
            task,
            src_lang: batch.src_lang,
            tgt_lang: batch.tgt_lang,
            loss,
            align,
            lr,
        };
        self.history.push(report.clone());
        Ok(report)
    }

    /// Steps until `max_steps`.
    pub fn run(&mut self, model: &mut ModelGraph) -> Result<()> {
        let start = Instant::now();
        let every = self.cfg.eval_every;
        while self.step < self.cfg.max_steps {
            let r = self.joint_step(model)?;
            if every > 0 && (r.step % every == 0 || r.step == self.cfg.max_steps) {
                let window = &self.history[self.history.len().saturating_sub(every as usize)..];
                let mut per_task: BTreeMap<TaskKind, (f64, usize)> = BTreeMap::new();
                for h in window {
                    let e = per_task.entry(h.task).or_default();
                    e.0 += h.loss;
                    e.1 += 1;
                }
                let summary: Vec<String> = per_task
                    .iter()
                    .map(|(t, (s, n))| format!("{t}={:.4}", s / *n as f64))
                    .collect();
                log::info!(
                    "step={} task={} loss={:.4} lr={:.3e} avg[{}] elapsed={:.1}s",
                    r.step,
                    r.task,
                    r.loss,
                    r.lr,
                    summary.join(" "),
                    start.elapsed().as_secs_f64()
                );
            }
        }
        Ok(())
    }

    pub fn task_counts(&self) -> BTreeMap<TaskKind, usize> {
        let mut out = BTreeMap::new();
        for h in &self.history {
            *out.entry(h.task).or_default() += 1;
        }
        out
    }
}

/// Trains `model` on `scope` from scratch for `cfg.max_steps`.
pub fn train(
    model: &mut ModelGraph,
    data: &Dataset,
    scope: &TrainScope,
    cfg: &TrainConfig,
) -> Result<Trainer> {
    let mut t = Trainer::new(data, scope, cfg)?;
    t.run(model)?;
    Ok(t)
}

/// Adds `new_lang` to a trained model and trains only its private layers on
/// its pivot pair. Every pre-existing storage stays frozen, so the original
/// languages behave exactly as before.
pub fn incremental_train(
    model: &mut ModelGraph,
    data: &Dataset,
    new_lang: &str,
    cfg: &TrainConfig,
) -> Result<Trainer> {
    if model.has_lang(new_lang) {
        return Err(Error::DuplicateLanguage(new_lang.to_string()));
    }
    let vocab = data
        .vocabs
        .get(new_lang)
        .ok_or_else(|| Error::UnknownLanguage(new_lang.to_string()))?
        .clone();
    model.expand_language(new_lang, vocab)?;
    model.freeze_all_but(new_lang)?;
    let scope = TrainScope {
        pivot_pairs: vec![new_lang.to_string()],
        reconstruct: vec![new_lang.to_string()],
    };
    let trainer = train(model, data, &scope, cfg);
    model.store.unfreeze_all();
    trainer
}
