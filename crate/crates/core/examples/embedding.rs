//! 2-D PCA embedding of fused features and the ring/non-ring separation
//! score, before and after training on benzene presence.

use hsanet::dataset::{generate_dataset, GeneratorConfig};
use hsanet::diagnostics::{embed_csv, fused_features, pca_embed, separation_score};
use hsanet::model::ModelConfig;
use hsanet::tasks::{SynthTarget, TaskKind};
use hsanet::train::{build_predictor, train, TaskSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&GeneratorConfig {
        n: 400,
        seed: 7,
        min_atoms: 1,
        max_atoms: 40,
    });
    let task = TaskSpec {
        kind: TaskKind::Binary,
        columns: vec![ds.column(SynthTarget::HasBenzene.name()).unwrap()],
    };
    let cfg = ModelConfig {
        layers: 3,
        dim: 32,
        tokens: 4,
        state: 4,
        ff_hidden: 64,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        epochs: 4,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let (tr, va) = ds.split(tcfg.train_fraction, tcfg.seed);
    let mut p = build_predictor(&ds, &tr, cfg, task, &tcfg)?;
    let train_ex = p.examples(&ds.subset(&tr))?;
    let val_ex = p.examples(&ds.subset(&va))?;
    let mols: Vec<_> = val_ex.iter().map(|e| e.mol.clone()).collect();
    let labels: Vec<usize> = val_ex.iter().map(|e| e.raw[0] as usize).collect();

    let before = separation_score(&fused_features(&p.model, &mols)?, &labels)?;
    train(&mut p, &train_ex, &val_ex, &tcfg, None)?;
    let feats = fused_features(&p.model, &mols)?;
    let after = separation_score(&feats, &labels)?;
    println!("separation score: untrained {before:.3}, trained {after:.3}");

    let e = pca_embed(&feats, 7)?;
    println!("explained variance {:.4} {:.4}", e.explained_variance[0], e.explained_variance[1]);
    for line in embed_csv(&e, &labels).lines().take(11) {
        println!("{line}");
    }
    Ok(())
}
