use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use interlingua::corpus::{load_vocabs, tokenize, Dataset, Manifest};
use interlingua::eval::{
    ablation_structure, ablation_tasks, build_and_train, evaluate, greedy_decode, load_checkpoint,
    save_checkpoint, structure_groups, task_rows, AblationReport, EvalOptions, RunConfig, SpecRun,
};
use interlingua::model::{ModelGraph, SharingSpec};
use interlingua::tensor::op_suite;
use interlingua::train::{incremental_train, TrainScope};
use interlingua::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "interlingua",
    version,
    about = "Multilingual NMT with a shared encoder interlingua"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-language corpus and its manifest.
    GenData(GenData),
    /// Train a model on a corpus directory and write a checkpoint.
    Train(Train),
    /// Translate lines from a file or stdin.
    Translate(Translate),
    /// Score every direction of the test set.
    Evaluate(Evaluate),
    /// Add one language to a trained model, training only its own layers.
    Expand(Expand),
    /// Compare sharing structures.
    AblateStructure(AblateStructure),
    /// Compare auxiliary task sets.
    AblateTasks(AblateTasks),
    /// Finite-difference check of every differentiable op.
    GradCheck(GradCheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    /// Read the manifest from this TOML file instead of generating one.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of non-pivot languages.
    #[arg(long, default_value_t = 3)]
    languages: usize,
    /// Training pairs per pivot pair.
    #[arg(long, default_value_t = 20_000)]
    pairs: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Corpus directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, Dataset)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.train.max_steps = s;
        }
        cfg.validate()?;
        Ok((cfg, Dataset::load(&self.data)?))
    }
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    run: RunArgs,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Sharing notation such as `E3-4,C1-2`; overrides the config's ranges.
    #[arg(long)]
    spec: Option<String>,
    /// Non-pivot languages to train on (comma separated); default all.
    #[arg(long, value_delimiter = ',')]
    langs: Option<Vec<String>>,
    /// Also evaluate and write the report next to the checkpoint.
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    max_len: usize,
}

#[derive(Args)]
struct Translate {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    src: String,
    #[arg(long)]
    tgt: String,
    /// Input file, one tokenized sentence per line; stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct Evaluate {
    #[command(flatten)]
    model: ModelArgs,
    /// Test sentences per direction.
    #[arg(long)]
    limit: Option<usize>,
    /// Writes `<out>.txt` and `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Expand {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    lang: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateStructure {
    #[command(flatten)]
    run: RunArgs,
    /// Semicolon-separated sharing notations; default is the four groups
    /// derived from the config's model.
    #[arg(long)]
    specs: Option<String>,
    /// Run only this group of the default set.
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateTasks {
    #[command(flatten)]
    run: RunArgs,
    /// Weight of the alignment term in the last row.
    #[arg(long, default_value_t = 0.1)]
    align: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheck {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    cases_per_op: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Translate(a) => translate(a),
        Cmd::Evaluate(a) => evaluate_cmd(a),
        Cmd::Expand(a) => expand(a),
        Cmd::AblateStructure(a) => ablate_structure(a),
        Cmd::AblateTasks(a) => ablate_tasks(a),
        Cmd::GradCheck(a) => grad_check(a),
    }
}

fn gen_data(a: GenData) -> Result<ExitCode> {
    let manifest = match &a.manifest {
        Some(p) => Manifest::load(p)?,
        None => Manifest::cipher(a.seed, a.languages, a.pairs),
    };
    let data = Dataset::generate(&manifest)?;
    data.save(&a.out)?;
    println!(
        "wrote {} languages, {} pairs each, to {}",
        manifest.languages.len(),
        manifest.pairs_per_language,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: Train) -> Result<ExitCode> {
    let (mut cfg, data) = a.run.load()?;
    if let Some(n) = &a.spec {
        cfg.model = SharingSpec::from_notation(
            n,
            cfg.model.enc_layers,
            cfg.model.dec_layers,
            cfg.model.dims.clone(),
        )?;
    }
    let scope = match &a.langs {
        Some(ls) => TrainScope::with(&data, ls),
        None => TrainScope::full(&data),
    };
    let model = build_and_train(&cfg.model, &data, &scope, &cfg.train)?;
    save_checkpoint(&model, cfg.train.max_steps, None, &a.out)?;
    println!("wrote {}", a.out.display());
    if a.report {
        let r = evaluate(&model, &data, &model.langs, &cfg.eval)?;
        print!("{r}");
        write_report(
            &a.out.with_extension("report"),
            &r.to_string(),
            &r.to_json()?,
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn load_model(a: &ModelArgs) -> Result<(Dataset, ModelGraph)> {
    let data = Dataset::load(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint, &data.vocabs)?;
    Ok((data, ck.model))
}

fn translate(a: Translate) -> Result<ExitCode> {
    let model = load_checkpoint(&a.model.checkpoint, &load_vocabs(&a.model.data)?)?.model;
    let sv = &model.pack(&a.src)?.vocab;
    let tv = &model.pack(&a.tgt)?.vocab;
    let lines: Vec<String> = match &a.input {
        Some(p) => std::fs::read_to_string(p)?
            .lines()
            .map(str::to_string)
            .collect(),
        None => std::io::stdin()
            .lock()
            .lines()
            .collect::<std::io::Result<_>>()?,
    };
    let sources: Vec<Vec<usize>> = lines.iter().map(|l| sv.encode(&tokenize(l))).collect();
    let hyps = greedy_decode(&model, &a.src, &a.tgt, &sources, a.model.max_len)?;
    let mut out = std::io::stdout().lock();
    for h in hyps {
        writeln!(out, "{}", tv.decode(&h).join(" "))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate_cmd(a: Evaluate) -> Result<ExitCode> {
    let (data, model) = load_model(&a.model)?;
    let opts = EvalOptions {
        max_len: a.model.max_len,
        limit: a.limit,
    };
    let report = evaluate(&model, &data, &model.langs, &opts)?;
    print!("{report}");
    if let Some(out) = &a.out {
        write_report(out, &report.to_string(), &report.to_json()?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn expand(a: Expand) -> Result<ExitCode> {
    let (cfg, data) = a.run.load()?;
    let mut model = load_checkpoint(&a.checkpoint, &data.vocabs)?.model;
    incremental_train(&mut model, &data, &a.lang, &cfg.train)?;
    save_checkpoint(&model, cfg.train.max_steps, None, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn ablate_structure(a: AblateStructure) -> Result<ExitCode> {
    let (cfg, data) = a.run.load()?;
    let runs: Vec<SpecRun> = match &a.specs {
        Some(list) => list
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|n| {
                Ok(SpecRun {
                    group: 1,
                    spec: SharingSpec::from_notation(
                        n,
                        cfg.model.enc_layers,
                        cfg.model.dec_layers,
                        cfg.model.dims.clone(),
                    )?,
                })
            })
            .collect::<Result<_>>()?,
        None => structure_groups(&cfg.model)?
            .into_iter()
            .filter(|r| a.group.is_none_or(|g| r.group == g))
            .collect(),
    };
    if runs.is_empty() {
        return Err(Error::Config("no specs selected".into()));
    }
    let report = ablation_structure(
        &runs,
        &data,
        &TrainScope::full(&data),
        &cfg.train,
        &cfg.eval,
    )?;
    finish_ablation(&report, a.out.as_deref())
}

fn ablate_tasks(a: AblateTasks) -> Result<ExitCode> {
    let (cfg, data) = a.run.load()?;
    let report = ablation_tasks(
        &task_rows(a.align),
        &cfg.model,
        &data,
        &TrainScope::full(&data),
        &cfg.train,
        &cfg.eval,
    )?;
    finish_ablation(&report, a.out.as_deref())
}

fn finish_ablation(report: &AblationReport, out: Option<&Path>) -> Result<ExitCode> {
    print!("{report}");
    if let Some(out) = out {
        write_report(out, &report.to_string(), &report.to_json()?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn write_report(prefix: &Path, text: &str, json: &str) -> Result<()> {
    std::fs::write(prefix.with_extension("txt"), text)?;
    std::fs::write(prefix.with_extension("json"), json)?;
    Ok(())
}

fn grad_check(a: GradCheck) -> Result<ExitCode> {
    let cases = op_suite(a.seed, a.cases_per_op)?;
    let mut by_op: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &cases {
        let op = c.name.split('#').next().unwrap_or(&c.name);
        let e = by_op.entry(op).or_insert(0.0);
        *e = e.max(c.report.max_rel_error);
    }
    for (op, e) in &by_op {
        println!("{op:<24} {e:.3e}");
    }
    let worst = cases
        .iter()
        .map(|c| c.report.max_rel_error)
        .fold(0.0, f64::max);
    println!("cases {} max relative error {worst:.3e}", cases.len());
    if worst < a.tolerance {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: max relative error {worst:.3e} >= {:.1e}",
            a.tolerance
        );
        Ok(ExitCode::FAILURE)
    }
}
