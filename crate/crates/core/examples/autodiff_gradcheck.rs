//! Reverse-mode gradients against central differences: a hand-built tape
//! expression, then every parameter group of the full model on three
//! molecules.

use hsanet::dataset::{generate_dataset, GeneratorConfig};
use hsanet::model::ModelConfig;
use hsanet::tasks::{SynthTarget, TaskKind};
use hsanet::tensor::{finite_diff_check, Tensor};
use hsanet::train::{build_predictor, model_grad_check, Example, TaskSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::matrix(3, 4, vec![0.3, -0.2, 0.9, 0.1, -1.1, 0.4, 0.0, 0.7, 0.5, 0.5, -0.6, 0.2])?;
    let w = Tensor::matrix(4, 2, vec![0.2, -0.5, 0.8, 0.1, -0.3, 0.6, 0.4, -0.9])?;
    let err = finite_diff_check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.silu(h);
            let p = t.softmax_rows(h)?;
            let q = t.mul(p, h)?;
            Ok(t.sum(q))
        },
        &[x, w],
        1e-6,
    )?;
    println!("softmax(silu(xW)) expression: max relative error {err:.2e}");

    let ds = generate_dataset(&GeneratorConfig {
        n: 3,
        seed: 11,
        min_atoms: 6,
        max_atoms: 16,
    });
    let all: Vec<usize> = (0..ds.len()).collect();
    let task = TaskSpec {
        kind: TaskKind::Regression,
        columns: vec![ds.column(SynthTarget::WienerIndex.name()).unwrap()],
    };
    let p = build_predictor(&ds, &all, ModelConfig::default(), task, &TrainConfig::default())?;
    let examples: Vec<Example> = p.examples(&ds)?;
    let batch: Vec<&Example> = examples.iter().collect();
    let report = model_grad_check(&p, &batch, 8, 1e-5, 7)?;
    for (group, n, e) in &report.groups {
        println!("{group:<16} {n:>2} coords  {e:.2e}");
    }
    println!("full model: max relative error {:.2e}", report.max_error);
    Ok(())
}
