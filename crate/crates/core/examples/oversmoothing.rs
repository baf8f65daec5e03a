//! Mean pairwise node cosine similarity per layer for an 8-layer encoder
//! with random weights, under mean and sum aggregation.

use hsanet::dataset::{generate_dataset, GeneratorConfig};
use hsanet::diagnostics::{mean_pairwise_cosine, oversmoothing_csv, oversmoothing_curve};
use hsanet::encoder::Aggregation;
use hsanet::model::{HsaModel, ModelConfig};
use hsanet::molgraph::MotifVocabulary;
use hsanet::tensor::Session;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&GeneratorConfig {
        n: 200,
        seed: 7,
        ..GeneratorConfig::default()
    });
    let vocab = MotifVocabulary::build(ds.records.iter().map(|r| &r.graph), 1)?;
    for aggregation in [Aggregation::Mean, Aggregation::Sum] {
        let cfg = ModelConfig {
            layers: 8,
            aggregation,
            ..ModelConfig::default()
        };
        let model = HsaModel::new(cfg, vocab.clone(), 7)?;
        let mols: Vec<_> = ds.records.iter().map(|r| model.prepare(r.graph.clone())).collect();
        let curve = oversmoothing_curve(&model.encoder, &model.store, &mols)?;
        println!("{aggregation:?} aggregation");
        print!("{}", oversmoothing_csv(&curve));
        println!("layer 8 - layer 1 = {:.3}", curve[7] - curve[0]);

        let (mut monotone, mut counted) = (0, 0);
        for mol in mols.iter().filter(|m| m.num_atoms() >= 2) {
            let mut sess = Session::new(&model.store, false);
            let hs = model.encoder.encode(&mut sess, &mol.graph, &mol.adj)?;
            let cos: Vec<f64> = hs.iter().map(|&h| mean_pairwise_cosine(sess.tape.value(h)).unwrap_or(0.0)).collect();
            counted += 1;
            monotone += usize::from(cos[2..].windows(2).all(|w| w[1] >= w[0]));
        }
        println!("non-decreasing from layer 3 on: {monotone}/{counted} molecules\n");
    }
    Ok(())
}
