//! SMILES parsing, structural matrices, motif fragmentation and node
//! serialization for a few small molecules.
//!
//! `cargo run --example parse_and_fragment -- "CC(=O)Oc1ccccc1C(=O)O"`

use hsanet::molgraph::{fragment_motifs, hop_gaps, parse_smiles, serialize_nodes, struct_matrices, MotifVocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = ["CCO", "c1ccccc1", "Cc1ccccc1", "CC(=O)O", "c1ccc2ccccc2c1", "C1CCNCC1"]
            .map(String::from)
            .to_vec();
    }
    let mut graphs = Vec::new();
    for s in &inputs {
        let g = match parse_smiles(s) {
            Ok(g) => g,
            Err(e) => {
                println!("{s}: {e}");
                continue;
            }
        };
        let sm = struct_matrices(&g);
        let motifs = fragment_motifs(&g);
        let order = serialize_nodes(&g, &motifs);
        println!("{s}: {} atoms, {} bonds", g.num_atoms(), g.num_bonds());
        for (frag, key) in motifs.fragments.iter().zip(&motifs.keys) {
            println!("  fragment {frag:?} key {}", key.as_str());
        }
        println!("  serialization {order:?}, hop gaps {:?}", hop_gaps(&order, &sm));
        graphs.push(g);
    }
    let vocab = MotifVocabulary::build(graphs.iter(), 1)?;
    println!("vocabulary ({} keys + UNK):", vocab.len() - 1);
    for (key, freq) in vocab.keys() {
        println!("  {freq:>3}  {}", key.as_str());
    }
    Ok(())
}
