//! The graph-aware selective scan: distance-modulated decay, the
//! constant-input closed form, and linear scaling in sequence length.

use hsanet::molgraph::{fragment_motifs, hop_gaps, parse_smiles, serialize_nodes, struct_matrices};
use hsanet::projectors::{decay_modulation, gssm_scan, scan_values};
use hsanet::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = parse_smiles("CC(C)c1ccc(O)cc1CCN")?;
    let order = serialize_nodes(&g, &fragment_motifs(&g));
    let gaps = hop_gaps(&order, &struct_matrices(&g));
    println!("order {order:?}");
    println!("hop gaps {gaps:?}");
    for alpha in [0.0, 0.5, 1.0] {
        println!("alpha {alpha}: gamma {:?}", decay_modulation(&gaps, alpha));
    }

    // one channel, one state, constant input: s_t = Δ·B·x·(1 − Āᵗ⁺¹)/(1 − Ā)
    let n = 8;
    let (x, dt, b, a) = (0.7, 0.4, 0.5, 0.9);
    let tr = scan_values(&vec![x; n], &vec![dt; n], &vec![b; n], &vec![1.0; n], &[a], &[0.0], &vec![1.0; n], n, 1, 1);
    let ab = (-dt * a).exp();
    for t in 0..n {
        let closed = dt * b * x * (1.0 - ab.powi(t as i32 + 1)) / (1.0 - ab);
        println!("t={t} scan {:.12} closed form {closed:.12}", tr.states[t]);
    }

    let (dim, st) = (64, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [500, 1000, 2000, 4000] {
        let mut r = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(n, dim, r(n * dim, -1.0, 1.0))?);
        let dv = tape.constant(Tensor::matrix(n, dim, r(n * dim, 0.1, 1.0))?);
        let bv = tape.constant(Tensor::matrix(n, st, r(n * st, -1.0, 1.0))?);
        let cv = tape.constant(Tensor::matrix(n, st, r(n * st, -1.0, 1.0))?);
        let av = tape.constant(Tensor::matrix(dim, st, r(dim * st, 0.1, 2.0))?);
        let sk = tape.constant(Tensor::vector(r(dim, -1.0, 1.0)));
        let gamma = decay_modulation(&vec![1; n - 1], 0.5);
        let t = Instant::now();
        gssm_scan(&mut tape, xv, dv, bv, cv, av, sk, &gamma)?;
        println!("n={n:>5}: {:.2} ms", t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(())
}
