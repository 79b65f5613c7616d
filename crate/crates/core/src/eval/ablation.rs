//! Comparative runs: one model per sharing spec or per task set, all from
//! the same seeds, each evaluated on the full direction matrix.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::eval::report::{all_directions, zero_shot_matrix, EvalReport};
use crate::model::{LayerRange, ModelGraph, SharingSpec};
use crate::train::{train, TaskKind, TrainConfig, TrainScope};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub max_len: usize,
    /// Test sentences per direction; `None` uses all.
    pub limit: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_len: 32,
            limit: None,
        }
    }
}

/// Builds a model over the pivot and the scope's pairs, seeded with
/// `cfg.seed`, and trains it.
pub fn build_and_train(
    spec: &SharingSpec,
    data: &Dataset,
    scope: &TrainScope,
    cfg: &TrainConfig,
) -> Result<ModelGraph> {
    let packs: Vec<_> = scope_langs(data, scope)
        .into_iter()
        .map(|l| {
            let v = data
                .vocabs
                .get(&l)
                .ok_or_else(|| Error::UnknownLanguage(l.clone()))?;
            Ok((l, v.clone()))
        })
        .collect::<Result<_>>()?;
    let mut model = ModelGraph::build(spec, &packs, cfg.seed)?;
    train(&mut model, data, scope, cfg)?;
    Ok(model)
}

/// [`build_and_train`], then every direction among the model's languages.
pub fn train_and_evaluate(
    spec: &SharingSpec,
    data: &Dataset,
    scope: &TrainScope,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> Result<(ModelGraph, EvalReport)> {
    let model = build_and_train(spec, data, scope, cfg)?;
    let report = evaluate(&model, data, &model.langs, opts)?;
    Ok((model, report))
}

/// Scores all directions among `langs`; directions touching the pivot are
/// the supervised block.
pub fn evaluate(
    model: &ModelGraph,
    data: &Dataset,
    langs: &[String],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    zero_shot_matrix(
        model,
        &data.test,
        &all_directions(langs),
        &data.manifest.supervised(),
        opts.max_len,
        opts.limit,
    )
}

/// Pivot first, then the scope's pairs in manifest order.
fn scope_langs(data: &Dataset, scope: &TrainScope) -> Vec<String> {
    data.manifest
        .langs()
        .into_iter()
        .filter(|l| *l == data.manifest.pivot || scope.pivot_pairs.contains(l))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: usize,
    pub label: String,
    pub trainable_params: usize,
    pub seconds: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Labels by zero-shot average, best first. Ties keep run order.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        let mut out: Vec<(&str, f64)> = self
            .rows
            .iter()
            .map(|r| (r.label.as_str(), r.report.zero_shot_avg.unwrap_or(f64::NAN)))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let avg = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        writeln!(
            f,
            "{:>5}  {:<22} {:>10} {:>10} {:>11} {:>8}",
            "group", "config", "zero-shot", "supervised", "trainable", "secs"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5}  {:<22} {:>10} {:>10} {:>11} {:>8.1}",
                r.group,
                r.label,
                avg(r.report.zero_shot_avg),
                avg(r.report.supervised_avg),
                r.trainable_params,
                r.seconds
            )?;
        }
        writeln!(f, "ranking by zero-shot:")?;
        for (i, (label, z)) in self.ranking().into_iter().enumerate() {
            writeln!(f, "  {}. {label} ({z:.2})", i + 1)?;
        }
        Ok(())
    }
}

/// A labelled spec inside a numbered comparison group.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecRun {
    pub group: usize,
    pub spec: SharingSpec,
}

/// The spec with and without encoder sharing, everything else equal.
pub fn enc_sharing_pair(spec: &SharingSpec) -> [SharingSpec; 2] {
    let mut off = spec.clone();
    off.enc_shared = None;
    [spec.clone(), off]
}

/// The four comparison groups, scaled to `base`:
/// 1. encoder sharing on/off with every decoder layer cross-attending;
/// 2. shrinking shared encoder range (decoder shares and cross-attends on the
///    base cross range);
/// 3. cross range slid from the top of the decoder to the bottom;
/// 4. decoder sharing on/off.
pub fn structure_groups(base: &SharingSpec) -> Result<Vec<SpecRun>> {
    base.validate()?;
    let (enc, dec) = (base.enc_layers, base.dec_layers);
    let shared = base
        .enc_shared
        .unwrap_or_else(|| LayerRange::new(enc / 2 + 1, enc));
    let cross = base.cross_range;
    let all = LayerRange::new(1, dec);
    let mk = |e: Option<LayerRange>, d: Option<LayerRange>, c: LayerRange| SharingSpec {
        enc_shared: e,
        dec_shared: d,
        cross_range: c,
        ..base.clone()
    };
    let mut runs = Vec::new();
    for s in enc_sharing_pair(&mk(Some(shared), None, all)) {
        runs.push(SpecRun { group: 1, spec: s });
    }
    let step = (enc / 4).max(1);
    let mut first = 1;
    while first <= enc {
        runs.push(SpecRun {
            group: 2,
            spec: mk(Some(LayerRange::new(first, enc)), Some(cross), cross),
        });
        first += step;
    }
    runs.push(SpecRun {
        group: 2,
        spec: mk(None, Some(cross), cross),
    });
    let width = cross.len();
    let stride = ((dec - width) / 2).max(1);
    let mut top = dec;
    loop {
        let c = LayerRange::new(top + 1 - width, top);
        runs.push(SpecRun {
            group: 3,
            spec: mk(Some(shared), None, c),
        });
        if c.first == 1 {
            break;
        }
        top = (top - stride).max(width);
    }
    runs.push(SpecRun {
        group: 4,
        spec: mk(Some(shared), Some(cross), cross),
    });
    runs.push(SpecRun {
        group: 4,
        spec: mk(Some(shared), None, cross),
    });
    Ok(runs)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

/// One model per spec, all trained with `cfg` (same seeds).
pub fn ablation_structure(
    runs: &[SpecRun],
    data: &Dataset,
    scope: &TrainScope,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> Result<AblationReport> {
    for r in runs {
        r.spec.validate()?;
    }
    cfg.validate()?;
    let mut out = AblationReport::default();
    for r in runs {
        log::info!("ablation group {} spec {}", r.group, r.spec.notation());
        let ((model, report), seconds) =
            timed(|| train_and_evaluate(&r.spec, data, scope, cfg, opts))?;
        out.rows.push(AblationRow {
            group: r.group,
            label: r.spec.notation(),
            trainable_params: model.store.trainable_numel(),
            seconds,
            report,
        });
    }
    Ok(out)
}

/// A row of the auxiliary-task comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub label: String,
    pub tasks: Vec<TaskKind>,
    pub align_weight: f64,
}

/// Translation only, plus plain reconstruction, plus denoising, plus
/// denoising with the alignment term.
pub fn task_rows(align_weight: f64) -> Vec<TaskRun> {
    let row = |label: &str, tasks: &[TaskKind], w: f64| TaskRun {
        label: label.to_string(),
        tasks: tasks.to_vec(),
        align_weight: w,
    };
    vec![
        row("MT", &[TaskKind::Mt], 0.0),
        row("+AE", &[TaskKind::Mt, TaskKind::Ae], 0.0),
        row("+DAE", &[TaskKind::Mt, TaskKind::Dae], 0.0),
        row("+DAE+Align", &[TaskKind::Mt, TaskKind::Dae], align_weight),
    ]
}

/// One model per task set on `spec`; only `tasks` and `align_weight` of
/// `cfg` vary between rows.
pub fn ablation_tasks(
    runs: &[TaskRun],
    spec: &SharingSpec,
    data: &Dataset,
    scope: &TrainScope,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> Result<AblationReport> {
    spec.validate()?;
    let cfgs: Vec<TrainConfig> = runs
        .iter()
        .map(|r| TrainConfig {
            tasks: r.tasks.clone(),
            align_weight: r.align_weight,
            ..cfg.clone()
        })
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let mut out = AblationReport::default();
    for (r, c) in runs.iter().zip(&cfgs) {
        log::info!("task ablation {}", r.label);
        let ((model, report), seconds) = timed(|| train_and_evaluate(spec, data, scope, c, opts))?;
        out.rows.push(AblationRow {
            group: 1,
            label: r.label.clone(),
            trainable_params: model.store.trainable_numel(),
            seconds,
            report,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(runs: &[SpecRun], group: usize) -> Vec<String> {
        runs.iter()
            .filter(|r| r.group == group)
            .map(|r| r.spec.notation())
            .collect()
    }

    #[test]
    fn desk_groups() {
        let runs = structure_groups(&SharingSpec::desk()).unwrap();
        assert_eq!(labels(&runs, 1), ["E3-4,C1-4", "C1-4"]);
        assert_eq!(
            labels(&runs, 2),
            [
                "E1-4,DC1-2",
                "E2-4,DC1-2",
                "E3-4,DC1-2",
                "E4-4,DC1-2",
                "DC1-2"
            ]
        );
        assert_eq!(labels(&runs, 3), ["E3-4,C3-4", "E3-4,C2-3", "E3-4,C1-2"]);
        assert_eq!(labels(&runs, 4), ["E3-4,DC1-2", "E3-4,C1-2"]);
        for r in &runs {
            r.spec.validate().unwrap();
        }
    }

    #[test]
    fn table_scale_groups() {
        let base = SharingSpec::from_notation("E3-8,C1-6", 8, 10, Default::default()).unwrap();
        let runs = structure_groups(&base).unwrap();
        assert_eq!(labels(&runs, 1), ["E3-8,C1-10", "C1-10"]);
        assert_eq!(labels(&runs, 3), ["E3-8,C5-10", "E3-8,C3-8", "E3-8,C1-6"]);
    }

    #[test]
    fn enc_pair_differs_only_in_sharing() {
        let [on, off] = enc_sharing_pair(&SharingSpec::desk());
        assert!(on.enc_shared.is_some() && off.enc_shared.is_none());
        assert_eq!(on.cross_range, off.cross_range);
        assert_eq!(on.dims, off.dims);
    }

    #[test]
    fn task_rows_follow_the_table() {
        let rows = task_rows(0.5);
        assert_eq!(rows[0].tasks, [TaskKind::Mt]);
        assert_eq!(rows[1].tasks, [TaskKind::Mt, TaskKind::Ae]);
        assert_eq!(rows[2].align_weight, 0.0);
        assert_eq!(rows[3].align_weight, 0.5);
    }

    #[test]
    fn ranking_orders_by_zero_shot() {
        let mk = |label: &str, z: f64| AblationRow {
            group: 1,
            label: label.into(),
            trainable_params: 0,
            seconds: 0.0,
            report: EvalReport::new(
                vec![],
                vec![crate::eval::DirectionScore {
                    src: "a".into(),
                    tgt: "b".into(),
                    bleu: z,
                    sentences: 1,
                }],
            ),
        };
        let r = AblationReport {
            rows: vec![mk("x", 1.0), mk("y", 9.0), mk("z", 5.0)],
        };
        let order: Vec<&str> = r.ranking().into_iter().map(|(l, _)| l).collect();
        assert_eq!(order, ["y", "z", "x"]);
        assert!(r.to_string().contains("1. y"));
    }
}
