//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the target;
//! every other criterion must pass.

use hsanet::dataset::{generate_dataset, Dataset, GeneratorConfig};
use hsanet::diagnostics::{fused_features, oversmoothing_curve, pooled_metric_above, run_ablation, separation_score};
use hsanet::encoder::Aggregation;
use hsanet::hap::ProjectorSet;
use hsanet::model::{HsaModel, ModelConfig, Variant};
use hsanet::molgraph::{fragment_motifs, parse_smiles, serialize_nodes, struct_matrices, BondOrder, MotifVocabulary};
use hsanet::projectors::{decay_modulation, gssm_scan, scan_values, MambaProjector};
use hsanet::saf::{fuse_with, FeedForward, SafMode};
use hsanet::tasks::{SynthTarget, TaskKind};
use hsanet::tensor::{finite_diff_check, ParamStore, Session, Tape, Tensor};
use hsanet::train::{build_predictor, model_grad_check, run_experiment, Example, TaskSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

const KNOWN_RED: &[usize] = &[2, 8];

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "over-smoothing premise", c2_oversmoothing),
        (3, "routing invariants", c3_routing),
        (4, "ssm numerics", c4_ssm),
        (5, "toy ring classification", c5_toy_task),
        (6, "ablation ordering", c6_ablation),
        (7, "size trend", c7_size_trend),
        (8, "feature separation", c8_separation),
        (9, "parser and fragmentation", c9_parser),
        (10, "determinism and scan scaling", c10_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let status = if pass { "PASS" } else { "FAIL" };
        let note = if !pass && KNOWN_RED.contains(&id) { " [known]" } else { "" };
        println!("criterion {id:>2} {status}{note} {name}: {detail} ({secs:.1}s)");
        if !pass && !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        layers: 3,
        dim: 32,
        tokens: 4,
        heads: 4,
        state: 4,
        ff_hidden: 64,
        ..ModelConfig::default()
    }
}

fn regression(ds: &Dataset, target: SynthTarget) -> TaskSpec {
    TaskSpec {
        kind: TaskKind::Regression,
        columns: vec![ds.column(target.name()).expect("generated column")],
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let ds = generate_dataset(&GeneratorConfig {
        n: 3,
        seed: 11,
        min_atoms: 6,
        max_atoms: 16,
    });
    let all: Vec<usize> = (0..ds.len()).collect();
    let task = regression(&ds, SynthTarget::WienerIndex);
    let p = build_predictor(&ds, &all, ModelConfig::default(), task, &TrainConfig::default())?;
    let examples: Vec<Example> = p.examples(&ds)?;
    let batch: Vec<&Example> = examples.iter().collect();
    let report = model_grad_check(&p, &batch, 8, 1e-5, 7)?;
    let groups_ok = report.groups.iter().all(|(_, n, _)| *n > 0);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand_t = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let (a, b, w, g, bias) = (rand_t(&[4, 5]), rand_t(&[4, 5]), rand_t(&[5, 3]), rand_t(&[5]), rand_t(&[5]));
    let adj = Rc::new(vec![vec![1], vec![0, 2, 3], vec![1], vec![1]]);
    let mut op_err = 0.0f64;
    let mut check = |f: &dyn Fn(&mut Tape, &[hsanet::tensor::Var]) -> hsanet::tensor::Result<hsanet::tensor::Var>,
                     ps: &[Tensor]|
     -> Result<(), Box<dyn std::error::Error>> {
        op_err = op_err.max(finite_diff_check(f, ps, 1e-6)?);
        Ok(())
    };
    check(&|t, v| { let m = t.matmul(v[0], v[1])?; Ok(t.sum(m)) }, &[a.clone(), w.clone()])?;
    check(&|t, v| { let m = t.mul(v[0], v[1])?; let s = t.silu(m); Ok(t.sum(s)) }, &[a.clone(), b.clone()])?;
    check(&|t, v| { let s = t.softmax_rows(v[0])?; let m = t.mul(s, v[1])?; Ok(t.sum(m)) }, &[a.clone(), b.clone()])?;
    check(&|t, v| { let l = t.layernorm(v[0], v[1], v[2])?; let m = t.mul(l, v[3])?; Ok(t.sum(m)) }, &[a.clone(), g.clone(), bias.clone(), b.clone()])?;
    check(&|t, v| { let s = t.neighbor_sum(v[0], Rc::clone(&adj))?; let m = t.mul(s, v[1])?; Ok(t.sum(m)) }, &[a.clone(), b.clone()])?;
    check(&|t, v| { let s = t.softplus(v[0]); let e = t.sigmoid(s); let m = t.mul(e, v[1])?; Ok(t.sum(m)) }, &[a.clone(), b.clone()])?;
    check(&|t, v| { let p = t.mean_pool(v[0], None)?; let l = t.smooth_l1(p, &[0.3, -2.0, 0.1, 1.5, 0.0], 1.0)?; Ok(t.sum(l)) }, std::slice::from_ref(&a))?;
    check(&|t, v| { let r = t.gather_rows(v[0], &[3, 0, 3])?; let s = t.scatter_add_rows(r, &[1, 1, 0], 2)?; let q = t.mul(s, s)?; Ok(t.sum(q)) }, std::slice::from_ref(&a))?;

    let secs = start.elapsed().as_secs_f64();
    let pass = report.max_error < 1e-4 && op_err < 1e-5 && groups_ok && secs < 120.0;
    Ok((
        pass,
        format!(
            "model max rel err {:.2e} over {} groups (< 1e-4), per-op max {:.2e} (< 1e-5), {secs:.1}s (< 120s)",
            report.max_error,
            report.groups.len(),
            op_err
        ),
    ))
}

fn c2_oversmoothing() -> Outcome {
    let ds = generate_dataset(&GeneratorConfig {
        n: 200,
        seed: 7,
        ..GeneratorConfig::default()
    });
    let vocab = MotifVocabulary::build(ds.records.iter().map(|r| &r.graph), 1)?;
    let cfg = ModelConfig {
        layers: 8,
        aggregation: Aggregation::Mean,
        ..ModelConfig::default()
    };
    let model = HsaModel::new(cfg, vocab, 7)?;
    let mols: Vec<_> = ds.records.iter().map(|r| model.prepare(r.graph.clone())).collect();
    let curve = oversmoothing_curve(&model.encoder, &model.store, &mols)?;
    let gain = curve[7] - curve[0];
    Ok((
        gain >= 0.2,
        format!("cos layer1 {:.3}, layer8 {:.3}, gain {gain:.3} (>= 0.2)", curve[0], curve[7]),
    ))
}

fn c3_routing() -> Outcome {
    let ds = generate_dataset(&GeneratorConfig {
        n: 20,
        seed: 5,
        min_atoms: 2,
        max_atoms: 30,
    });
    let vocab = MotifVocabulary::build(ds.records.iter().map(|r| &r.graph), 1)?;
    let model = HsaModel::new(small_model(), vocab, 5)?;
    let blocks = model.cfg.layers + 1;
    let mut one_projector = true;
    let mut two_experts = true;
    for r in &ds.records {
        let mol = model.prepare(r.graph.clone());
        let mut sess = Session::new(&model.store, false);
        let f = model.forward(&mut sess, &mol)?;
        one_projector &= f.hap.attention_evals + f.hap.mamba_evals == blocks && f.hap.decisions.len() == blocks;
        let fo = f.routing.as_ref().ok_or("full model has no routing")?;
        let tokens = sess.tape.value(f.tokens).rows();
        two_experts &= fo.routing.len() == tokens
            && fo.routing.iter().all(|d| d.selected[0] != d.selected[1])
            && fo.expert_evals.iter().sum::<usize>() == 2 * tokens;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (dim, m) = (8, 12);
    let z = Tensor::matrix(m, dim, (0..m * dim).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let mut store = ParamStore::new();
    let gate2 = store.add_uniform("g2", &[dim, 2], dim, &mut rng);
    let e2: Vec<FeedForward> = (0..2).map(|i| FeedForward::new(&format!("e{i}"), dim, 16, &mut store, &mut rng)).collect();
    let mut sess = Session::new(&store, false);
    let zv = sess.constant(z.clone());
    let out = fuse_with(&mut sess, zv, gate2, 2, SafMode::Verbatim, |s, i, x| e2[i].forward(s, x))?;
    let y = sess.tape.value(out.y).clone();
    let d0 = e2[0].forward(&mut sess, zv)?;
    let d1 = e2[1].forward(&mut sess, zv)?;
    let dense = sess.tape.add(d0, d1)?;
    let dense_err = y
        .data()
        .iter()
        .zip(sess.tape.value(dense).data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut store4 = ParamStore::new();
    let gate4 = store4.add_uniform("g4", &[dim, 4], dim, &mut rng);
    let e4: Vec<FeedForward> = (0..4).map(|i| FeedForward::new(&format!("e{i}"), dim, 16, &mut store4, &mut rng)).collect();
    let run = |st: &ParamStore| -> hsanet::tensor::Result<(Tensor, Vec<[usize; 2]>)> {
        let mut s = Session::new(st, false);
        let zv = s.constant(z.clone());
        let o = fuse_with(&mut s, zv, gate4, 4, SafMode::Verbatim, |s, i, x| e4[i].forward(s, x))?;
        Ok((s.tape.value(o.y).clone(), o.routing.iter().map(|d| d.selected).collect()))
    };
    let (base, sel) = run(&store4)?;
    let mut independent = true;
    for (e, ff) in e4.iter().enumerate() {
        let mut perturbed = store4.clone();
        for id in ff.params() {
            for v in perturbed.get_mut(id).data_mut() {
                *v += 0.75;
            }
        }
        let (y2, _) = run(&perturbed)?;
        for (t, s) in sel.iter().enumerate() {
            if !s.contains(&e) {
                independent &= base.row(t).iter().zip(y2.row(t)).all(|(a, b)| a.to_bits() == b.to_bits());
            }
        }
    }

    let pass = one_projector && two_experts && dense_err <= 1e-12 && independent;
    Ok((
        pass,
        format!(
            "one projector per block {one_projector}, two distinct experts per token {two_experts}, \
             N=2 dense err {dense_err:.1e} (<= 1e-12), unselected experts bitwise inert {independent}"
        ),
    ))
}

fn c4_ssm() -> Outcome {
    // constant input, fixed step, alpha = 0
    let (n, dim, st) = (30, 2, 3);
    let x = vec![0.7; n * dim];
    let delta = vec![0.4; n * dim];
    let bvec = [0.5, -0.3, 1.1];
    let b: Vec<f64> = (0..n).flat_map(|_| bvec).collect();
    let c = vec![0.0; n * st];
    let a = vec![0.9, 0.2, 1.7, 0.5, 1.3, 0.05];
    let gamma = decay_modulation(&vec![3; n - 1], 0.0);
    let tr = scan_values(&x, &delta, &b, &c, &a, &[0.0; 2], &gamma, n, dim, st);
    let mut closed_err = 0.0f64;
    for t in 0..n {
        for ch in 0..dim {
            for j in 0..st {
                let ab = (-0.4 * a[ch * st + j]).exp();
                let k = (t + 1) as f64;
                let oracle = 0.4 * bvec[j] * 0.7 * (1.0 - ab.powf(k)) / (1.0 - ab);
                closed_err = closed_err.max((tr.states[(t * dim + ch) * st + j] - oracle).abs());
            }
        }
    }

    // memoryless limit: y_t ignores any reordering of earlier steps
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut r = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
    let (xs, ds_, bs, cs) = (r(n * dim, -1.0, 1.0), r(n * dim, 0.5, 1.5), r(n * st, -1.0, 1.0), r(n * st, -1.0, 1.0));
    let big = vec![1e6; dim * st];
    let dsk = r(dim, -1.0, 1.0);
    let ones = vec![1.0; n];
    let y0 = scan_values(&xs, &ds_, &bs, &cs, &big, &dsk, &ones, n, dim, st).y;
    let perm: Vec<usize> = (0..n - 1).rev().chain(std::iter::once(n - 1)).collect();
    let pick = |v: &[f64], w: usize| -> Vec<f64> { perm.iter().flat_map(|&i| v[i * w..(i + 1) * w].to_vec()).collect() };
    let y1 = scan_values(&pick(&xs, dim), &pick(&ds_, dim), &pick(&bs, st), &pick(&cs, st), &big, &dsk, &ones, n, dim, st).y;
    let t = n - 1;
    let memless_err = (0..dim).map(|ch| (y0[t * dim + ch] - y1[t * dim + ch]).abs()).fold(0.0, f64::max);

    // alpha = 0 ignores hop gaps exactly
    let mut store = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(8);
    let mut mp = MambaProjector::new(8, 4, 4, 0.5, &mut store, &mut prng);
    mp.set_alpha(0.0);
    let m = 11;
    let xt = Tensor::matrix(m, 8, (0..m * 8).map(|_| prng.gen_range(-1.0..1.0)).collect())?;
    let gaps: Vec<u32> = (0..m - 1).map(|_| prng.gen_range(1..6)).collect();
    let mut s1 = Session::new(&store, false);
    let xv = s1.constant(xt.clone());
    let ya = mp.scan(&mut s1, xv, &gaps)?;
    let mut s2 = Session::new(&store, false);
    let xv2 = s2.constant(xt);
    let yb = mp.scan(&mut s2, xv2, &vec![1; m - 1])?;
    let exact = s1.tape.value(ya).data() == s2.tape.value(yb).data();

    let pass = closed_err <= 1e-10 && memless_err <= 1e-10 && exact;
    Ok((
        pass,
        format!("closed form err {closed_err:.1e} (<= 1e-10), memoryless err {memless_err:.1e} (<= 1e-10), alpha=0 exact {exact}"),
    ))
}

fn ring_dataset() -> Dataset {
    generate_dataset(&GeneratorConfig {
        n: 1000,
        seed: 7,
        min_atoms: 1,
        max_atoms: 40,
    })
}

fn ring_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        lr: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn ring_task(ds: &Dataset) -> TaskSpec {
    TaskSpec {
        kind: TaskKind::Binary,
        columns: vec![ds.column(SynthTarget::HasBenzene.name()).expect("generated column")],
    }
}

fn c5_toy_task() -> Outcome {
    let start = Instant::now();
    let ds = ring_dataset();
    let exp = run_experiment(&ds, small_model(), ring_task(&ds), &ring_train_config(), None)?;
    let acc = exp.predictor.evaluate(&exp.val)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        acc >= 0.9 && secs < 300.0,
        format!("held-out accuracy {acc:.3} on {} molecules (>= 0.9), {secs:.0}s (< 300s)", exp.val.len()),
    ))
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn c6_ablation() -> Outcome {
    let ds = generate_dataset(&GeneratorConfig {
        n: 600,
        seed: 7,
        min_atoms: 1,
        max_atoms: 40,
    });
    let task = regression(&ds, SynthTarget::WienerIndex);
    let variants = [
        Variant::FULL,
        Variant {
            projectors: ProjectorSet::AttentionOnly,
            saf: true,
        },
        Variant {
            projectors: ProjectorSet::MambaOnly,
            saf: true,
        },
        Variant {
            projectors: ProjectorSet::Both,
            saf: false,
        },
    ];
    let (mut vs_attn, mut vs_mamba, mut vs_mlp) = (0, 0, 0);
    let mut lines = Vec::new();
    for seed in SEEDS {
        let tcfg = TrainConfig {
            epochs: 30,
            lr: 2e-3,
            seed,
            ..TrainConfig::default()
        };
        let rows = run_ablation(&ds, &small_model(), &task, &tcfg, &variants)?;
        let m: Vec<f64> = rows.iter().map(|r| r.metric).collect();
        vs_attn += usize::from(m[0] < m[1]);
        vs_mamba += usize::from(m[0] < m[2]);
        vs_mlp += usize::from(m[0] < m[3]);
        lines.push(format!("s{seed} full {:.0} attn {:.0} mamba {:.0} mlp {:.0}", m[0], m[1], m[2], m[3]));
    }
    let pass = vs_attn >= 2 && vs_mamba >= 2 && vs_mlp >= 2;
    Ok((
        pass,
        format!(
            "val MAE [{}]; full beats attention {vs_attn}/3, mamba {vs_mamba}/3, SAF beats MLP {vs_mlp}/3 (each >= 2)",
            lines.join("; ")
        ),
    ))
}

fn c7_size_trend() -> Outcome {
    let ds = generate_dataset(&GeneratorConfig {
        n: 400,
        seed: 7,
        min_atoms: 20,
        max_atoms: 100,
    });
    let task = regression(&ds, SynthTarget::WienerIndex);
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let tcfg = TrainConfig {
            epochs: 20,
            lr: 2e-3,
            seed,
            ..TrainConfig::default()
        };
        let mut mae = Vec::new();
        for v in [Variant::FULL, Variant { projectors: ProjectorSet::AttentionOnly, saf: true }] {
            let exp = run_experiment(&ds, small_model().with_variant(v), task.clone(), &tcfg, None)?;
            mae.push(pooled_metric_above(&exp.predictor, &exp.val, 60)?);
        }
        wins += usize::from(mae[0] <= mae[1]);
        lines.push(format!("s{seed} full {:.0} attn {:.0}", mae[0], mae[1]));
    }
    Ok((wins >= 2, format!("MAE on >= 60 atoms [{}]; full <= attention {wins}/3 (>= 2)", lines.join("; "))))
}

fn c8_separation() -> Outcome {
    let ds = ring_dataset();
    let task = ring_task(&ds);
    let mut scores = Vec::new();
    for v in [Variant::FULL, Variant { projectors: ProjectorSet::AttentionOnly, saf: true }] {
        let exp = run_experiment(&ds, small_model().with_variant(v), task.clone(), &ring_train_config(), None)?;
        let mols: Vec<_> = exp.val.iter().map(|e| e.mol.clone()).collect();
        let labels: Vec<usize> = exp.val.iter().map(|e| e.raw[0] as usize).collect();
        let feats = fused_features(&exp.predictor.model, &mols)?;
        scores.push(separation_score(&feats, &labels)?);
    }
    Ok((
        scores[0] > scores[1],
        format!("separation full {:.3} vs attention-only {:.3}", scores[0], scores[1]),
    ))
}

fn c9_parser() -> Outcome {
    let mut ok = true;
    let g = parse_smiles("CCO")?;
    ok &= g.num_atoms() == 3 && g.num_bonds() == 2;
    ok &= struct_matrices(&g).distance(0, 2) == 2;
    let m = fragment_motifs(&g);
    ok &= m.fragments == vec![vec![0, 1], vec![2]];
    ok &= serialize_nodes(&g, &m) == vec![0, 1, 2];

    let benzene = parse_smiles("c1ccccc1")?;
    ok &= benzene.num_atoms() == 6
        && benzene.num_bonds() == 6
        && benzene.atoms().iter().all(|a| a.aromatic)
        && benzene.bonds().iter().all(|b| b.order == BondOrder::Aromatic);
    let sm = struct_matrices(&benzene);
    ok &= (0..6).all(|i| sm.distance(i, (i + 3) % 6) == 3);

    let toluene = parse_smiles("Cc1ccccc1")?;
    let tm = fragment_motifs(&toluene);
    ok &= tm.fragments == vec![vec![0], vec![1, 2, 3, 4, 5, 6]];
    ok &= serialize_nodes(&toluene, &tm) == vec![1, 2, 3, 4, 5, 6, 0];

    let acetic = parse_smiles("CC(=O)O")?;
    let bonds: Vec<(usize, usize, BondOrder)> = acetic.bonds().iter().map(|b| (b.a, b.b, b.order)).collect();
    ok &= acetic.num_atoms() == 4
        && bonds == vec![(0, 1, BondOrder::Single), (1, 2, BondOrder::Double), (1, 3, BondOrder::Single)];

    let vocab = MotifVocabulary::build([&benzene, &toluene], 1)?;
    let ring_key = &fragment_motifs(&benzene).keys[0];
    ok &= vocab.frequency(ring_key) == 2;

    let ds = generate_dataset(&GeneratorConfig {
        n: 1000,
        ..GeneratorConfig::default()
    });
    let failures = ds.records.iter().filter(|r| parse_smiles(&r.smiles).is_err()).count();
    Ok((ok && failures == 0, format!("worked examples exact {ok}, generated parse failures {failures}/1000")))
}

fn run_cli(args: &[&str]) -> i32 {
    let mut v = vec!["hsanet".to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    hsanet::cli::main(v)
}

fn cli_pipeline(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let out = dir.to_str().ok_or("non-utf8 path")?;
    let ds = dir.join("dataset.tsv");
    let ds = ds.to_str().ok_or("non-utf8 path")?;
    let sets = ["--set", "n=80", "--set", "layers=2", "--set", "dim=16", "--set", "tokens=4", "--set", "state=4", "--set", "ff_hidden=32", "--set", "epochs=2"];
    let with = |cmd: &str, extra: &[&str]| -> Vec<String> {
        let mut a = vec![cmd.to_string(), "--seed".into(), "5".into(), "--out".into(), out.to_string()];
        a.extend(sets.iter().map(|s| s.to_string()));
        a.extend(extra.iter().map(|s| s.to_string()));
        a
    };
    for (cmd, extra) in [
        ("gen-data", vec![]),
        ("train", vec!["--dataset", ds]),
        ("eval", vec!["--dataset", ds]),
        ("diagnose", vec!["--dataset", ds]),
        ("gating-report", vec!["--dataset", ds]),
    ] {
        let args = with(cmd, &extra);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        if run_cli(&refs) != 0 {
            return Err(format!("`{cmd}` failed").into());
        }
    }
    Ok(())
}

fn median_scan_secs(n: usize) -> Result<f64, Box<dyn std::error::Error>> {
    let (dim, st) = (64, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let mut r = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
    let (x, delta, b, c, a, d) = (r(n * dim, -1.0, 1.0), r(n * dim, 0.1, 1.0), r(n * st, -1.0, 1.0), r(n * st, -1.0, 1.0), r(dim * st, 0.1, 2.0), r(dim, -1.0, 1.0));
    let gamma = decay_modulation(&vec![2; n - 1], 0.5);
    let mut times = Vec::new();
    for _ in 0..5 {
        let mut tape = Tape::new();
        let vx = tape.constant(Tensor::matrix(n, dim, x.clone())?);
        let vd = tape.constant(Tensor::matrix(n, dim, delta.clone())?);
        let vb = tape.constant(Tensor::matrix(n, st, b.clone())?);
        let vc = tape.constant(Tensor::matrix(n, st, c.clone())?);
        let va = tape.constant(Tensor::matrix(dim, st, a.clone())?);
        let vdk = tape.constant(Tensor::vector(d.clone()));
        let t = Instant::now();
        let y = gssm_scan(&mut tape, vx, vd, vb, vc, va, vdk, &gamma)?;
        times.push(t.elapsed().as_secs_f64());
        std::hint::black_box(tape.value(y));
    }
    times.sort_by(f64::total_cmp);
    Ok(times[2])
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli_pipeline(&a)?;
    cli_pipeline(&b)?;
    let files = [
        "dataset.tsv",
        "metrics.json",
        "eval.json",
        "strata.csv",
        "oversmoothing.csv",
        "dispersion.csv",
        "embed.csv",
        "diagnose.json",
        "gating.csv",
        "experts.csv",
        "model/model.json",
        "model/model.ckpt",
    ];
    let mut differing = Vec::new();
    for f in files {
        if std::fs::read(a.join(f))? != std::fs::read(b.join(f))? {
            differing.push(f);
        }
    }
    let t1 = median_scan_secs(2000)?;
    let t2 = median_scan_secs(4000)?;
    let ratio = t2 / t1;
    let pass = differing.is_empty() && ratio <= 2.5;
    Ok((
        pass,
        format!(
            "{} metric files byte-identical ({} differ), scan time ratio {ratio:.2} for 2x length (<= 2.5)",
            files.len(),
            differing.len()
        ),
    ))
}
