//! Adam, the epoch loop, evaluation and model persistence.

use crate::dataset::Dataset;
use crate::error::{HsaError, HsaResult};
use crate::model::{HsaModel, ModelConfig, PreparedMol};
use crate::molgraph::{MotifVocabulary, UNK_ID};
use crate::tasks::{accuracy, mae, task_loss, TaskKind};
use crate::tensor::{check_coordinates, load_checkpoint, save_checkpoint, Gradients, ParamStore, Session, SurrogateTrace, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub train_fraction: f64,
    pub min_motif_freq: usize,
    /// Cosine-anneal the learning rate from `lr` to 0 over all steps.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            seed: 7,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            train_fraction: 0.8,
            min_motif_freq: 2,
            cosine_decay: false,
        }
    }
}

/// Which dataset columns the head predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Target columns; unused for multilabel, whose labels come from the motif vocabulary.
    pub columns: Vec<usize>,
}

impl TaskSpec {
    pub fn width(&self, vocab: &MotifVocabulary) -> usize {
        match self.kind {
            TaskKind::Multilabel => vocab.len(),
            _ => self.columns.len(),
        }
    }

    fn raw_targets(&self, targets: &[f64], mol: &PreparedMol, vocab_len: usize) -> Vec<f64> {
        match self.kind {
            TaskKind::Multilabel => {
                let mut t = vec![0.0; vocab_len];
                for &id in &mol.motif_ids {
                    if id != UNK_ID {
                        t[id] = 1.0;
                    }
                }
                t
            }
            _ => self.columns.iter().map(|&c| targets[c]).collect(),
        }
    }
}

/// Per-column standardisation fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(width: usize) -> Self {
        Scaler {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..width).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
        let std = (0..width)
            .map(|c| {
                let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { mean, std }
    }

    pub fn forward(&self, t: &[f64]) -> Vec<f64> {
        t.iter().enumerate().map(|(c, v)| (v - self.mean[c]) / self.std[c]).collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(c, v)| v * self.std[c] + self.mean[c]).collect()
    }
}

/// Model plus what it needs to map raw dataset records to head targets.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: HsaModel,
    pub task: TaskSpec,
    pub scaler: Scaler,
}

/// A dataset record with graph preprocessing done and targets in head space.
#[derive(Debug, Clone)]
pub struct Example {
    pub mol: PreparedMol,
    /// Targets in original units.
    pub raw: Vec<f64>,
    /// Targets the head is trained against (standardised for regression).
    pub target: Vec<f64>,
}

impl Predictor {
    pub fn examples(&self, ds: &Dataset) -> HsaResult<Vec<Example>> {
        let width = self.model.cfg.out_width;
        ds.records
            .iter()
            .map(|r| {
                if let Some(&bad) = self.task.columns.iter().find(|&&c| c >= r.targets.len()) {
                    return Err(HsaError::TargetWidthMismatch {
                        expected: bad + 1,
                        found: r.targets.len(),
                    });
                }
                let mol = self.model.prepare(r.graph.clone());
                let raw = self.task.raw_targets(&r.targets, &mol, self.model.vocab.len());
                if raw.len() != width {
                    return Err(HsaError::TargetWidthMismatch {
                        expected: width,
                        found: raw.len(),
                    });
                }
                let target = match self.task.kind {
                    TaskKind::Regression => self.scaler.forward(&raw),
                    _ => raw.clone(),
                };
                Ok(Example { mol, raw, target })
            })
            .collect()
    }

    /// Head outputs mapped back to target units (logits for classification).
    pub fn predict(&self, mol: &PreparedMol) -> HsaResult<Vec<f64>> {
        let out = self.model.predict(mol)?;
        Ok(match self.task.kind {
            TaskKind::Regression => self.scaler.inverse(&out),
            _ => out,
        })
    }

    /// MAE (regression) or accuracy (classification) over `examples`.
    pub fn evaluate(&self, examples: &[Example]) -> HsaResult<f64> {
        if examples.is_empty() {
            return Err(HsaError::EmptyDataset);
        }
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for ex in examples {
            pred.extend(self.predict(&ex.mol)?);
            truth.extend_from_slice(&ex.raw);
        }
        Ok(match self.task.kind {
            TaskKind::Regression => mae(&pred, &truth),
            _ => accuracy(&pred, &truth),
        })
    }

    /// Mean training loss over `examples` and its gradient.
    pub fn loss_and_grad(&self, examples: &[&Example]) -> HsaResult<(f64, Gradients)> {
        let mut grads = self.model.store.zero_gradients();
        let w = 1.0 / examples.len() as f64;
        let mut total = 0.0;
        for ex in examples {
            let mut sess = Session::new(&self.model.store, true);
            let f = self.model.forward(&mut sess, &ex.mol)?;
            let loss = task_loss(&mut sess.tape, f.output, &ex.target, self.task.kind)?;
            total += sess.tape.value(loss).item();
            sess.tape.backward(loss)?;
            sess.accumulate_into(&mut grads, w);
        }
        Ok((total * w, grads))
    }

    /// Mean training loss over `examples` with parameters taken from `store`.
    pub fn loss_with(&self, store: &ParamStore, examples: &[&Example]) -> crate::tensor::Result<f64> {
        let mut total = 0.0;
        for ex in examples {
            let mut sess = Session::new(store, false);
            let f = self.model.forward(&mut sess, &ex.mol)?;
            let loss = task_loss(&mut sess.tape, f.output, &ex.target, self.task.kind)?;
            total += sess.tape.value(loss).item();
        }
        Ok(total / examples.len() as f64)
    }

    /// Straight-through surrogate of the mean loss: routing choices and detached
    /// gate values are held at `traces` (one per example) while `store` varies.
    pub fn surrogate_loss(&self, store: &ParamStore, examples: &[&Example], traces: &[SurrogateTrace]) -> crate::tensor::Result<f64> {
        let mut total = 0.0;
        for (ex, tr) in examples.iter().zip(traces) {
            let mut sess = Session::replaying(store, tr);
            let f = self.model.forward(&mut sess, &ex.mol)?;
            let loss = task_loss(&mut sess.tape, f.output, &ex.target, self.task.kind)?;
            total += sess.tape.value(loss).item();
        }
        Ok(total / examples.len() as f64)
    }

    /// Records the surrogate traces of a base forward pass over `examples`.
    pub fn traces(&self, examples: &[&Example]) -> crate::tensor::Result<Vec<SurrogateTrace>> {
        examples
            .iter()
            .map(|ex| {
                let mut sess = Session::new(&self.model.store, false);
                self.model.forward(&mut sess, &ex.mol)?;
                Ok(sess.trace().clone())
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> HsaResult<()> {
        std::fs::create_dir_all(dir)?;
        let meta = ModelMeta {
            config: self.model.cfg.clone(),
            task: self.task.clone(),
            scaler: self.scaler.clone(),
            vocab: self.model.vocab.to_tsv(),
        };
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&meta)?)?;
        save_checkpoint(&dir.join("model.ckpt"), &self.model.store)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> HsaResult<Predictor> {
        let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let vocab = MotifVocabulary::from_tsv(&meta.vocab)?;
        let mut model = HsaModel::new(meta.config, vocab, 0)?;
        load_checkpoint(&dir.join("model.ckpt"), &mut model.store)?;
        Ok(Predictor {
            model,
            task: meta.task,
            scaler: meta.scaler,
        })
    }
}

/// Central-difference check of the full-model batch loss, per parameter group.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(group, coordinates checked, max relative error)`.
    pub groups: Vec<(String, usize, f64)>,
    pub max_error: f64,
}

/// Samples up to `per_group` coordinates from each parameter group, preferring
/// coordinates with a nonzero analytic gradient, and compares against central
/// differences of the straight-through surrogate of the mean batch loss.
pub fn model_grad_check(p: &Predictor, batch: &[&Example], per_group: usize, eps: f64, seed: u64) -> HsaResult<GradCheckReport> {
    if batch.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    let (_, grads) = p.loss_and_grad(batch)?;
    let traces = p.traces(batch)?;
    let params = p.model.store.values().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        groups: Vec::new(),
        max_error: 0.0,
    };
    for (name, ids) in p.model.param_groups() {
        let all: Vec<(usize, usize)> = ids
            .iter()
            .flat_map(|id| (0..params[id.index()].len()).map(move |i| (id.index(), i)))
            .collect();
        let live: Vec<(usize, usize)> = all.iter().copied().filter(|&(pi, i)| grads.0[pi][i] != 0.0).collect();
        let pool = if live.is_empty() { all } else { live };
        let coords: Vec<(usize, usize)> = pool.choose_multiple(&mut rng, per_group.min(pool.len())).copied().collect();
        let eval = |ps: &[Tensor]| -> crate::tensor::Result<f64> {
            let mut store = p.model.store.clone();
            store.values_mut().clone_from_slice(ps);
            p.surrogate_loss(&store, batch, &traces)
        };
        let err = check_coordinates(eval, &params, &grads.0, &coords, eps)?;
        report.max_error = report.max_error.max(err);
        report.groups.push((name, coords.len(), err));
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    task: TaskSpec,
    scaler: Scaler,
    vocab: String,
}

/// Bias-corrected Adam with global-norm clipping applied to the gradients first.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.values().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            clip_norm: cfg.clip_norm,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &mut Gradients) {
        if self.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > self.clip_norm {
                grads.scale(self.clip_norm / norm);
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain numbers serialize"));
            out.push('\n');
        }
        out
    }
}

/// Builds the vocabulary from the training split and a fresh model for `task`.
pub fn build_predictor(
    ds: &Dataset,
    train_idx: &[usize],
    mut cfg: ModelConfig,
    task: TaskSpec,
    tcfg: &TrainConfig,
) -> HsaResult<Predictor> {
    if ds.is_empty() || train_idx.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    let graphs: Vec<_> = train_idx.iter().map(|&i| &ds.records[i].graph).collect();
    let vocab = MotifVocabulary::build(graphs, tcfg.min_motif_freq)?;
    cfg.out_width = task.width(&vocab);
    let model = HsaModel::new(cfg, vocab, tcfg.seed)?;
    let mut p = Predictor {
        model,
        task,
        scaler: Scaler::identity(0),
    };
    p.scaler = Scaler::identity(p.model.cfg.out_width);
    if p.task.kind == TaskKind::Regression {
        let rows: Vec<Vec<f64>> = train_idx
            .iter()
            .map(|&i| p.task.columns.iter().map(|&c| ds.records[i].targets[c]).collect())
            .collect();
        if rows.iter().any(|r| r.len() != p.task.columns.len()) {
            return Err(HsaError::TargetWidthMismatch {
                expected: p.task.columns.len(),
                found: ds.target_width(),
            });
        }
        p.scaler = Scaler::fit(&rows);
    }
    Ok(p)
}

/// Epoch loop with seeded shuffling; keeps the parameters of the best
/// validation epoch. `log` receives one JSON line per epoch as it completes.
pub fn train(
    p: &mut Predictor,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> HsaResult<TrainLog> {
    if train.is_empty() || val.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut adam = Adam::new(&p.model.store, cfg);
    let higher = p.task.kind.higher_is_better();
    let mut out = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = cfg.batch_size.max(1);
    let total_steps = (cfg.epochs * train.len().div_ceil(batch)).max(1) as f64;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let exs: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = p.loss_and_grad(&exs)?;
            loss_sum += loss * exs.len() as f64;
            if cfg.cosine_decay {
                let progress = adam.steps() as f64 / total_steps;
                adam.lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            adam.step(p.model.store.values_mut(), &mut grads);
        }
        let val_metric = p.evaluate(val)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_metric,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        let improved = match &best {
            None => true,
            Some((b, _)) => {
                if higher {
                    val_metric > *b
                } else {
                    val_metric < *b
                }
            }
        };
        if improved {
            best = Some((val_metric, p.model.store.clone()));
            out.best_epoch = epoch;
            out.best_metric = val_metric;
        }
        out.records.push(rec);
    }
    if let Some((_, store)) = best {
        p.model.store = store;
    }
    Ok(out)
}

/// Split, build, train and return the predictor with its validation examples.
pub struct Experiment {
    pub predictor: Predictor,
    pub log: TrainLog,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

pub fn run_experiment(
    ds: &Dataset,
    cfg: ModelConfig,
    task: TaskSpec,
    tcfg: &TrainConfig,
    log: Option<&mut dyn Write>,
) -> HsaResult<Experiment> {
    let (tr, va) = ds.split(tcfg.train_fraction, tcfg.seed);
    if tr.is_empty() || va.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    let mut predictor = build_predictor(ds, &tr, cfg, task, tcfg)?;
    let train_ex = predictor.examples(&ds.subset(&tr))?;
    let val_ex = predictor.examples(&ds.subset(&va))?;
    let log = train(&mut predictor, &train_ex, &val_ex, tcfg, log)?;
    Ok(Experiment {
        predictor,
        log,
        train: train_ex,
        val: val_ex,
    })
}
