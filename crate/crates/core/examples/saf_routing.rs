//! Top-2 expert routing: per-token choices for one molecule, the expert load
//! over a corpus, and the two fusion modes side by side.

use hsanet::dataset::{generate_dataset, GeneratorConfig};
use hsanet::diagnostics::{expert_load_histogram, experts_csv, prepare_all};
use hsanet::model::{HsaModel, ModelConfig};
use hsanet::molgraph::MotifVocabulary;
use hsanet::saf::SafMode;
use hsanet::tensor::Session;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&GeneratorConfig {
        n: 200,
        seed: 2,
        min_atoms: 3,
        max_atoms: 30,
    });
    let vocab = MotifVocabulary::build(ds.records.iter().map(|r| &r.graph), 2)?;
    for mode in [SafMode::Verbatim, SafMode::Weighted] {
        let cfg = ModelConfig {
            layers: 3,
            dim: 32,
            tokens: 4,
            experts: 6,
            saf_mode: mode,
            ..ModelConfig::default()
        };
        let model = HsaModel::new(cfg, vocab.clone(), 2)?;
        let mols = prepare_all(&model, &ds);
        let mut sess = Session::new(&model.store, false);
        let f = model.forward(&mut sess, &mols[0])?;
        let routing = f.routing.expect("SAF enabled");
        println!("{mode:?} fusion, molecule `{}`", ds.records[0].smiles);
        for (t, d) in routing.routing.iter().enumerate().take(6) {
            let p: Vec<String> = d.probs.iter().map(|p| format!("{p:.2}")).collect();
            println!("  token {t}: experts {:?} gate [{}]", d.selected, p.join(" "));
        }
        println!("  output {:?}", sess.tape.value(f.output).data());
        print!("{}", experts_csv(&expert_load_histogram(&model, &mols)?));
    }
    Ok(())
}
