use hsanet::dataset::{generate_dataset, Dataset, GeneratorConfig};
use hsanet::diagnostics::{
    ablation_csv, embed_csv, fused_features, gating_csv, gating_ratio_report, oversmoothing_csv, oversmoothing_curve,
    pca_embed, run_ablation, size_stratified_eval, strata_csv,
};
use hsanet::model::{ModelConfig, Variant};
use hsanet::tasks::{SynthTarget, TaskKind};
use hsanet::train::{run_experiment, Adam, Example, Predictor, TaskSpec, TrainConfig};
use std::path::Path;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        layers: 2,
        dim: 16,
        tokens: 4,
        heads: 2,
        state: 4,
        experts: 3,
        ff_hidden: 32,
        ..ModelConfig::default()
    }
}

fn corpus(n: usize) -> Dataset {
    generate_dataset(&GeneratorConfig {
        n,
        seed: 21,
        min_atoms: 2,
        max_atoms: 30,
    })
}

fn task(ds: &Dataset, target: SynthTarget, kind: TaskKind) -> TaskSpec {
    TaskSpec {
        kind,
        columns: vec![ds.column(target.name()).unwrap()],
    }
}

fn short_run() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        lr: 2e-3,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let ds = corpus(60);
    let t = task(&ds, SynthTarget::WienerIndex, TaskKind::Regression);
    let a = run_experiment(&ds, tiny_model(), t.clone(), &short_run(), None).unwrap();
    let b = run_experiment(&ds, tiny_model(), t, &short_run(), None).unwrap();
    let strip = |log: &hsanet::train::TrainLog| -> Vec<(usize, u64, u64)> {
        log.records.iter().map(|r| (r.epoch, r.train_loss.to_bits(), r.val_metric.to_bits())).collect()
    };
    assert_eq!(strip(&a.log), strip(&b.log));
    assert_eq!(a.predictor.model.store.values(), b.predictor.model.store.values());
    let sa = size_stratified_eval(&a.predictor, &a.val, 10).unwrap();
    let sb = size_stratified_eval(&b.predictor, &b.val, 10).unwrap();
    assert_eq!(strata_csv(&sa), strata_csv(&sb));
}

#[test]
fn diagnostics_csvs_are_byte_identical_across_runs() {
    let ds = corpus(40);
    let t = task(&ds, SynthTarget::HasBenzene, TaskKind::Binary);
    let render = || {
        let exp = run_experiment(&ds, tiny_model(), t.clone(), &short_run(), None).unwrap();
        let model = &exp.predictor.model;
        let mols: Vec<_> = exp.train.iter().map(|e| e.mol.clone()).collect();
        let labels: Vec<usize> = exp.train.iter().map(|e| e.raw[0] as usize).collect();
        let curve = oversmoothing_curve(&model.encoder, &model.store, &mols).unwrap();
        let embed = pca_embed(&fused_features(model, &mols).unwrap(), 3).unwrap();
        [
            oversmoothing_csv(&curve),
            gating_csv(&gating_ratio_report(model, &mols).unwrap()),
            embed_csv(&embed, &labels),
        ]
    };
    assert_eq!(render(), render());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let ds = corpus(40);
    let t = task(&ds, SynthTarget::RingCount, TaskKind::Regression);
    let exp = run_experiment(&ds, tiny_model(), t, &short_run(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    exp.predictor.save(dir.path()).unwrap();
    let loaded = Predictor::load(dir.path()).unwrap();
    assert_eq!(loaded.model.store.values(), exp.predictor.model.store.values());
    let fresh: Vec<Example> = loaded.examples(&ds).unwrap();
    for (a, b) in fresh.iter().zip(exp.predictor.examples(&ds).unwrap()) {
        assert_eq!(loaded.predict(&a.mol).unwrap(), exp.predictor.predict(&b.mol).unwrap());
    }
}

#[test]
fn adam_step_with_small_lr_does_not_increase_loss() {
    let ds = corpus(12);
    let t = task(&ds, SynthTarget::HeavyAtomCount, TaskKind::Regression);
    let cfg = TrainConfig {
        lr: 1e-5,
        ..short_run()
    };
    let mut p = run_experiment(&ds, tiny_model(), t, &TrainConfig { epochs: 1, ..cfg.clone() }, None)
        .unwrap()
        .predictor;
    let examples = p.examples(&ds).unwrap();
    let batch: Vec<&Example> = examples.iter().collect();
    let (before, mut grads) = p.loss_and_grad(&batch).unwrap();
    let mut adam = Adam::new(&p.model.store, &cfg);
    adam.step(p.model.store.values_mut(), &mut grads);
    let (after, _) = p.loss_and_grad(&batch).unwrap();
    assert!(after <= before * (1.0 + 1e-9), "{before} -> {after}");
}

#[test]
fn pca_components_are_orthonormal() {
    let ds = corpus(30);
    let t = task(&ds, SynthTarget::HasBenzene, TaskKind::Binary);
    let exp = run_experiment(&ds, tiny_model(), t, &short_run(), None).unwrap();
    let mols: Vec<_> = exp.train.iter().map(|e| e.mol.clone()).collect();
    let e = pca_embed(&fused_features(&exp.predictor.model, &mols).unwrap(), 5).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let [c0, c1] = &e.components;
    assert!((dot(c0, c0) - 1.0).abs() < 1e-8);
    assert!((dot(c1, c1) - 1.0).abs() < 1e-8);
    assert!(dot(c0, c1).abs() < 1e-8);
}

#[test]
fn ablation_csv_reparses() {
    let ds = corpus(30);
    let t = task(&ds, SynthTarget::WienerIndex, TaskKind::Regression);
    let tcfg = TrainConfig {
        epochs: 1,
        ..short_run()
    };
    let rows = run_ablation(&ds, &tiny_model(), &t, &tcfg, &Variant::ablation_rows()).unwrap();
    assert_eq!(rows.len(), 6);
    let csv = ablation_csv(&rows.into_iter().map(|r| (4, r)).collect::<Vec<_>>(), "mae");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,seed,mae,best_epoch,params"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5);
        assert_eq!(f[1], "4");
        assert!(f[2].parse::<f64>().unwrap() >= 0.0);
        assert!(f[3].parse::<usize>().unwrap() >= 1);
        assert!(f[4].parse::<usize>().unwrap() > 0);
    }
}

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["hsanet".to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    hsanet::cli::main(v)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(cli(&["gen-data", "--seed", "9", "--set", "n=50", "--out", out.to_str().unwrap()]), 0);
    }
    assert_eq!(read(&a.join("dataset.tsv")), read(&b.join("dataset.tsv")));
    let ds = Dataset::read(&a.join("dataset.tsv")).unwrap();
    assert_eq!(ds.len(), 50);
}

#[test]
fn cli_outputs_follow_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ds = dir.path().join("dataset.tsv");
    let ds = ds.to_str().unwrap();
    let small = ["--set", "n=40", "--set", "layers=2", "--set", "dim=16", "--set", "tokens=4", "--set", "epochs=1"];
    let run = |cmd: &str, extra: &[&str]| {
        let mut a = vec![cmd, "--out", out];
        a.extend(small);
        a.extend(extra);
        assert_eq!(cli(&a), 0, "{cmd}");
    };
    run("gen-data", &[]);
    run("train", &["--dataset", ds]);
    run("eval", &["--dataset", ds, "--set", "bin_width=10"]);
    run("diagnose", &["--dataset", ds]);
    run("gating-report", &["--dataset", ds]);

    let header = |f: &str| read(&dir.path().join(f)).lines().next().unwrap().to_string();
    assert_eq!(header("oversmoothing.csv"), "layer,cos_sim");
    assert_eq!(header("gating.csv"), "layer,mamba_ratio");
    assert_eq!(header("strata.csv"), "bin_lo,bin_hi,n,metric");
    assert_eq!(header("embed.csv"), "id,x,y,label");

    for line in read(&dir.path().join("strata.csv")).lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f.len(), 4);
        assert_eq!(f[1] - f[0], 10.0);
    }
    for line in read(&dir.path().join("oversmoothing.csv")).lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
    for line in read(&dir.path().join("gating.csv")).lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    for f in ["metrics.json", "eval.json", "diagnose.json"] {
        let v: serde_json::Value = serde_json::from_str(&read(&dir.path().join(f))).unwrap();
        assert!(v.is_object(), "{f}");
    }
    for line in read(&dir.path().join("train_log.jsonl")).lines() {
        let r: hsanet::train::EpochRecord = serde_json::from_str(line).unwrap();
        assert!(r.train_loss.is_finite() && r.seconds >= 0.0);
    }
}
