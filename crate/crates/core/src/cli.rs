//! Command-line entry point. Exit codes: 0 success, 1 runtime error, 2 usage error.

use crate::config::RunConfig;
use crate::dataset::{generate_dataset, Dataset};
use crate::diagnostics::{
    ablation_csv, dispersion_trend, embed_csv, expert_load_histogram, experts_csv, fused_features, gating_csv,
    gating_ratio_report, oversmoothing_csv, oversmoothing_curve, pca_embed, run_ablation, separation_score,
    size_stratified_eval, strata_csv,
};
use crate::error::HsaError;
use crate::hap::ProjectorKind;
use crate::model::{PreparedMol, Variant};
use crate::tasks::{SynthTarget, TaskKind};
use crate::train::{build_predictor, model_grad_check, run_experiment, Example, Predictor, TaskSpec};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "hsanet", version, about = "Hierarchical structure-aware molecular encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset to <out>/dataset.tsv
    GenData(Common),
    /// Train on --dataset; writes train_log.jsonl, metrics.json and model/
    Train(Common),
    /// Evaluate a trained model; writes eval.json and strata.csv
    Eval(Common),
    /// Over-smoothing, dispersion, embedding, separation and expert load
    Diagnose(Common),
    /// Per-layer fraction of molecules routed to the Mamba projector
    GatingReport(Common),
    /// Train every ablation variant on identical data and seeds
    Ablate(Common),
    /// Finite-difference check of every parameter group
    GradCheck(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Trained model directory (defaults to <out>/model where one exists)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Inline config override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Usage(String),
    Runtime(HsaError),
}

impl From<HsaError> for Failure {
    fn from(e: HsaError) -> Self {
        match e {
            HsaError::Config(_) | HsaError::InvalidToggleCombination(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn main(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(c) => gen_data(&c),
        Command::Train(c) => train(&c),
        Command::Eval(c) => eval(&c),
        Command::Diagnose(c) => diagnose(&c),
        Command::GatingReport(c) => gating_report(&c),
        Command::Ablate(c) => ablate(&c),
        Command::GradCheck(c) => grad_check(&c),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn require_dataset(c: &Common) -> CliResult<Dataset> {
    let path = c
        .dataset
        .as_ref()
        .ok_or_else(|| Failure::Usage("--dataset <path> is required for this subcommand".into()))?;
    let ds = Dataset::read(path)?;
    if ds.is_empty() {
        return Err(Failure::Runtime(HsaError::EmptyDataset));
    }
    Ok(ds)
}

fn task_spec(cfg: &RunConfig, ds: &Dataset) -> CliResult<TaskSpec> {
    let columns = if cfg.task == TaskKind::Multilabel {
        Vec::new()
    } else if cfg.targets.is_empty() {
        (0..ds.target_width()).collect()
    } else {
        cfg.targets
            .iter()
            .map(|name| {
                ds.column(name)
                    .or_else(|| name.parse::<usize>().ok().filter(|&i| i < ds.target_width()))
                    .ok_or_else(|| Failure::Usage(format!("target `{name}` is not a dataset column")))
            })
            .collect::<CliResult<Vec<usize>>>()?
    };
    Ok(TaskSpec { kind: cfg.task, columns })
}

fn model_dir(c: &Common) -> Option<PathBuf> {
    c.model.clone().or_else(|| {
        let d = c.out.join("model");
        d.join("model.json").exists().then_some(d)
    })
}

/// Trained model when one is available, otherwise a fresh one built from the config.
fn predictor_for(c: &Common, cfg: &RunConfig, ds: &Dataset) -> CliResult<Predictor> {
    if let Some(dir) = model_dir(c) {
        return Ok(Predictor::load(&dir)?);
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    Ok(build_predictor(ds, &all, cfg.model.clone(), task_spec(cfg, ds)?, &cfg.train)?)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn gen_data(c: &Common) -> CliResult<i32> {
    let cfg = load_config(c)?;
    std::fs::create_dir_all(&c.out)?;
    let ds = generate_dataset(&cfg.generator);
    write(&c.out.join("dataset.tsv"), &ds.to_text())?;
    Ok(0)
}

fn train(c: &Common) -> CliResult<i32> {
    let cfg = load_config(c)?;
    let ds = require_dataset(c)?;
    let task = task_spec(&cfg, &ds)?;
    std::fs::create_dir_all(&c.out)?;
    let mut log = BufWriter::new(File::create(c.out.join("train_log.jsonl"))?);
    let exp = run_experiment(&ds, cfg.model.clone(), task, &cfg.train, Some(&mut log))?;
    drop(log);
    exp.predictor.save(&c.out.join("model"))?;
    let metrics = json!({
        "metric": cfg.task.metric_name(),
        "best_val": exp.log.best_metric,
        "best_epoch": exp.log.best_epoch,
        "epochs": exp.log.records.len(),
    });
    write(&c.out.join("metrics.json"), &format!("{metrics}\n"))?;
    println!("best val {} = {} at epoch {}", cfg.task.metric_name(), exp.log.best_metric, exp.log.best_epoch);
    Ok(0)
}

fn eval(c: &Common) -> CliResult<i32> {
    let cfg = load_config(c)?;
    let ds = require_dataset(c)?;
    let dir = model_dir(c).ok_or_else(|| Failure::Usage("--model <dir> is required (no <out>/model found)".into()))?;
    let p = Predictor::load(&dir)?;
    let examples = p.examples(&ds)?;
    let metric = p.evaluate(&examples)?;
    std::fs::create_dir_all(&c.out)?;
    let strata = size_stratified_eval(&p, &examples, cfg.bin_width)?;
    write(&c.out.join("strata.csv"), &strata_csv(&strata))?;
    let name = p.task.kind.metric_name();
    write(&c.out.join("eval.json"), &format!("{}\n", json!({ "metric": name, "value": metric, "n": examples.len() })))?;
    println!("{name} = {metric}");
    Ok(0)
}

fn ring_labels(ds: &Dataset) -> Vec<usize> {
    let col = ds.column(SynthTarget::HasBenzene.name());
    ds.records
        .iter()
        .map(|r| match col {
            Some(c) => usize::from(r.targets[c] > 0.5),
            None => usize::from(r.graph.has_benzene_ring()),
        })
        .collect()
}

fn diagnose(c: &Common) -> CliResult<i32> {
    let cfg = load_config(c)?;
    let ds = require_dataset(c)?;
    let p = predictor_for(c, &cfg, &ds)?;
    let model = &p.model;
    let mols: Vec<PreparedMol> = ds.records.iter().map(|r| model.prepare(r.graph.clone())).collect();
    std::fs::create_dir_all(&c.out)?;

    let curve = oversmoothing_curve(&model.encoder, &model.store, &mols)?;
    write(&c.out.join("oversmoothing.csv"), &oversmoothing_csv(&curve))?;

    let mut disp = String::from("layer,projector,dispersion\n");
    for l in 1..=model.cfg.layers {
        for (kind, name) in [(ProjectorKind::Attention, "attention"), (ProjectorKind::Mamba, "mamba")] {
            if let Ok(d) = dispersion_trend(model, &mols, l, kind) {
                disp.push_str(&format!("{l},{name},{d}\n"));
            }
        }
    }
    write(&c.out.join("dispersion.csv"), &disp)?;

    let labels = ring_labels(&ds);
    let feats = fused_features(model, &mols)?;
    let embed = pca_embed(&feats, cfg.train.seed)?;
    if embed.degenerate {
        eprintln!("warning: fused features have zero variance; embedding is all zeros");
    }
    write(&c.out.join("embed.csv"), &embed_csv(&embed, &labels))?;
    let separation = separation_score(&feats, &labels).ok();
    write(
        &c.out.join("diagnose.json"),
        &format!("{}\n", json!({ "separation": separation, "molecules": mols.len() })),
    )?;

    write(&c.out.join("gating.csv"), &gating_csv(&gating_ratio_report(model, &mols)?))?;
    if model.cfg.saf {
        write(&c.out.join("experts.csv"), &experts_csv(&expert_load_histogram(model, &mols)?))?;
    }
    Ok(0)
}

fn gating_report(c: &Common) -> CliResult<i32> {
    let cfg = load_config(c)?;
    let ds = require_dataset(c)?;
    let p = predictor_for(c, &cfg, &ds)?;
    let mols: Vec<PreparedMol> = ds.records.iter().map(|r| p.model.prepare(r.graph.clone())).collect();
    std::fs::create_dir_all(&c.out)?;
    let rows = gating_ratio_report(&p.model, &mols)?;
    write(&c.out.join("gating.csv"), &gating_csv(&rows))?;
    Ok(0)
}

fn ablate(c: &Common) -> CliResult<i32> {
    let cfg = load_config(c)?;
    let ds = require_dataset(c)?;
    let task = task_spec(&cfg, &ds)?;
    let seeds = match c.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let mut rows = Vec::new();
    for seed in seeds {
        let mut tcfg = cfg.train.clone();
        tcfg.seed = seed;
        for r in run_ablation(&ds, &cfg.model, &task, &tcfg, &Variant::ablation_rows())? {
            println!("seed {seed} {} {} = {}", r.variant, cfg.task.metric_name(), r.metric);
            rows.push((seed, r));
        }
    }
    std::fs::create_dir_all(&c.out)?;
    write(&c.out.join("ablation.csv"), &ablation_csv(&rows, cfg.task.metric_name()))?;
    Ok(0)
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

fn grad_check(c: &Common) -> CliResult<i32> {
    let cfg = load_config(c)?;
    let ds = match &c.dataset {
        Some(_) => require_dataset(c)?,
        None => {
            let mut g = cfg.generator;
            g.n = 3;
            g.max_atoms = g.max_atoms.min(16);
            generate_dataset(&g)
        }
    };
    let batch_ds = ds.subset(&(0..ds.len().min(3)).collect::<Vec<_>>());
    let all: Vec<usize> = (0..batch_ds.len()).collect();
    let p = build_predictor(&batch_ds, &all, cfg.model.clone(), task_spec(&cfg, &batch_ds)?, &cfg.train)?;
    let examples: Vec<Example> = p.examples(&batch_ds)?;
    let refs: Vec<&Example> = examples.iter().collect();
    let report = model_grad_check(&p, &refs, 8, 1e-5, cfg.train.seed)?;
    for (group, n, err) in &report.groups {
        println!("{group:<16} {n:>3} coords  max rel err {err:.3e}");
    }
    println!("max relative error {:.3e}", report.max_error);
    Ok(if report.max_error < GRAD_CHECK_TOLERANCE { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        main(std::iter::once("hsanet").chain(args.iter().copied()).map(String::from).collect())
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(&["frobnicate"]), 2);
        assert_eq!(run(&["train", "--bogus"]), 2);
        assert_eq!(run(&["train"]), 2);
        assert_eq!(run(&["gen-data", "--set", "dim"]), 2);
    }

    #[test]
    fn missing_dataset_file_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.tsv");
        assert_eq!(run(&["eval", "--dataset", missing.to_str().unwrap(), "--model", "x"]), 1);
    }
}
