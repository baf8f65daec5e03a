//! Error by molecule size on a long-molecule corpus, full model against the
//! attention-only variant.

use hsanet::dataset::{atom_histogram, generate_dataset, GeneratorConfig};
use hsanet::diagnostics::{size_stratified_eval, strata_csv};
use hsanet::hap::ProjectorSet;
use hsanet::model::{ModelConfig, Variant};
use hsanet::tasks::{SynthTarget, TaskKind};
use hsanet::train::{run_experiment, TaskSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&GeneratorConfig {
        n: 300,
        seed: 7,
        min_atoms: 10,
        max_atoms: 120,
    });
    println!("atom-count histogram (bin 20): {:?}", atom_histogram(&ds, 20));
    let task = TaskSpec {
        kind: TaskKind::Regression,
        columns: vec![ds.column(SynthTarget::HeavyAtomCount.name()).unwrap()],
    };
    let base = ModelConfig {
        layers: 3,
        dim: 32,
        tokens: 4,
        state: 4,
        ff_hidden: 64,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        epochs: 6,
        lr: 2e-3,
        ..TrainConfig::default()
    };
    let variants = [
        Variant::FULL,
        Variant {
            projectors: ProjectorSet::AttentionOnly,
            saf: true,
        },
    ];
    for v in variants {
        let exp = run_experiment(&ds, base.clone().with_variant(v), task.clone(), &tcfg, None)?;
        println!("{v}\n{}", strata_csv(&size_stratified_eval(&exp.predictor, &exp.val, 20)?));
    }
    Ok(())
}
