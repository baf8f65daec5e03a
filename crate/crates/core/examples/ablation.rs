//! Trains each architectural variant on identical data and seeds and prints
//! the held-out metric.
//!
//! `cargo run --release --example ablation -- [epochs] [molecules]`

use hsanet::dataset::{generate_dataset, GeneratorConfig};
use hsanet::diagnostics::{ablation_csv, run_ablation};
use hsanet::model::{ModelConfig, Variant};
use hsanet::tasks::{SynthTarget, TaskKind};
use hsanet::train::{TaskSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(Ok(8), |s| s.parse())?;
    let n: usize = args.get(2).map_or(Ok(300), |s| s.parse())?;
    let ds = generate_dataset(&GeneratorConfig {
        n,
        seed: 7,
        min_atoms: 1,
        max_atoms: 40,
    });
    let task = TaskSpec {
        kind: TaskKind::Regression,
        columns: vec![ds.column(SynthTarget::WienerIndex.name()).unwrap()],
    };
    let cfg = ModelConfig {
        layers: 3,
        dim: 32,
        tokens: 4,
        state: 4,
        ff_hidden: 64,
        ..ModelConfig::default()
    };
    let mut rows = Vec::new();
    for seed in [1, 2] {
        let tcfg = TrainConfig {
            epochs,
            lr: 2e-3,
            seed,
            ..TrainConfig::default()
        };
        for r in run_ablation(&ds, &cfg, &task, &tcfg, &Variant::ablation_rows())? {
            println!("seed {seed} {:<14} MAE {:>8.1}  ({} params)", r.variant.to_string(), r.metric, r.params);
            rows.push((seed, r));
        }
    }
    print!("\n{}", ablation_csv(&rows, "mae"));
    Ok(())
}
