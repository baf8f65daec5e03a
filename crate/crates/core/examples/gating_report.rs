//! Per-layer share of molecules the hierarchical gate sends to the Mamba
//! projector, before and after a short training run.

use hsanet::dataset::{generate_dataset, GeneratorConfig};
use hsanet::diagnostics::{gating_csv, gating_ratio_report};
use hsanet::model::ModelConfig;
use hsanet::tasks::{SynthTarget, TaskKind};
use hsanet::train::{build_predictor, run_experiment, TaskSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&GeneratorConfig {
        n: 300,
        seed: 3,
        min_atoms: 4,
        max_atoms: 40,
    });
    let task = TaskSpec {
        kind: TaskKind::Regression,
        columns: vec![ds.column(SynthTarget::RingCount.name()).unwrap()],
    };
    let cfg = ModelConfig {
        layers: 4,
        dim: 32,
        tokens: 4,
        state: 4,
        ff_hidden: 64,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        epochs: 4,
        lr: 2e-3,
        ..TrainConfig::default()
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    let untrained = build_predictor(&ds, &all, cfg.clone(), task.clone(), &tcfg)?;
    let mols: Vec<_> = untrained.examples(&ds)?.into_iter().map(|e| e.mol).collect();
    println!("untrained\n{}", gating_csv(&gating_ratio_report(&untrained.model, &mols)?));

    let exp = run_experiment(&ds, cfg, task, &tcfg, None)?;
    let mols: Vec<_> = exp.val.iter().map(|e| e.mol.clone()).collect();
    println!("trained {} epochs\n{}", tcfg.epochs, gating_csv(&gating_ratio_report(&exp.predictor.model, &mols)?));
    Ok(())
}
