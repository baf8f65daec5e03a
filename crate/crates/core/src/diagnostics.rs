//! Analysis suite: over-smoothing, dispersion, PCA embedding, cluster
//! separation, gating and expert-load reports, size strata and ablations.
//! Every report has a CSV form with a fixed header.

use crate::dataset::Dataset;
use crate::encoder::GnnEncoder;
use crate::error::{HsaError, HsaResult};
use crate::hap::{LayerTag, ProjectorKind};
use crate::model::{HsaModel, ModelConfig, PreparedMol, Variant};
use crate::tasks::TaskKind;
use crate::train::{run_experiment, Example, Predictor, TaskSpec, TrainConfig};
use crate::tensor::{ParamStore, Session, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Mean cosine similarity over unordered row pairs; `None` for fewer than two rows.
/// Zero rows count as similarity 0 with anything.
pub fn mean_pairwise_cosine(h: &Tensor) -> Option<f64> {
    let n = h.rows();
    if n < 2 {
        return None;
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(h.row(i))).collect();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = norms[i] * norms[j];
            if d > 0.0 {
                sum += dot(h.row(i), h.row(j)) / d;
            }
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

/// Per-layer mean over molecules of [`mean_pairwise_cosine`] of `H^(l)`.
/// Single-atom molecules are skipped.
pub fn oversmoothing_curve(encoder: &GnnEncoder, store: &ParamStore, mols: &[PreparedMol]) -> HsaResult<Vec<f64>> {
    let layers = encoder.config().layers;
    let mut sums = vec![0.0; layers];
    let mut count = 0usize;
    for mol in mols.iter().filter(|m| m.num_atoms() >= 2) {
        let mut sess = Session::new(store, false);
        let hs = encoder.encode(&mut sess, &mol.graph, &mol.adj)?;
        for (l, &h) in hs.iter().enumerate() {
            sums[l] += mean_pairwise_cosine(sess.tape.value(h)).unwrap_or(0.0);
        }
        count += 1;
    }
    if count == 0 {
        return Err(HsaError::EmptyDataset);
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

/// Mean Euclidean distance to the centroid after scaling every vector to unit norm.
pub fn dispersion(vectors: &[Vec<f64>]) -> HsaResult<f64> {
    if vectors.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = norm(v);
            if n > 0.0 {
                v.iter().map(|x| x / n).collect()
            } else {
                v.clone()
            }
        })
        .collect();
    let d = unit[0].len();
    let mut c = vec![0.0; d];
    for u in &unit {
        for (ci, ui) in c.iter_mut().zip(u) {
            *ci += ui;
        }
    }
    c.iter_mut().for_each(|x| *x /= unit.len() as f64);
    let total: f64 = unit
        .iter()
        .map(|u| u.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / unit.len() as f64)
}

/// Dispersion of molecule vectors formed by mean-pooling the tokens that
/// `projector` produces from `H^(layer)` (1-based).
pub fn dispersion_trend(model: &HsaModel, mols: &[PreparedMol], layer: usize, projector: ProjectorKind) -> HsaResult<f64> {
    if mols.len() < 2 {
        return Err(HsaError::EmptyDataset);
    }
    if layer == 0 || layer > model.cfg.layers {
        return Err(HsaError::Config(format!("layer {layer} out of range")));
    }
    let mut vectors = Vec::with_capacity(mols.len());
    for mol in mols {
        let mut sess = Session::new(&model.store, false);
        let hs = model.encoder.encode(&mut sess, &mol.graph, &mol.adj)?;
        let h = hs[layer - 1];
        let toks = match projector {
            ProjectorKind::Attention => model
                .hap
                .attn
                .as_ref()
                .ok_or_else(|| HsaError::Config("model has no attention projector".into()))?
                .project(&mut sess, h, None)?,
            ProjectorKind::Mamba => model
                .hap
                .mamba
                .as_ref()
                .ok_or_else(|| HsaError::Config("model has no mamba projector".into()))?
                .project(&mut sess, h, &mol.order, &mol.hop_gaps)?,
        };
        let pooled = sess.tape.mean_pool(toks.tokens, None)?;
        vectors.push(sess.tape.value(pooled).data().to_vec());
    }
    dispersion(&vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaEmbedding {
    /// `M × 2` coordinates.
    pub coords: Vec<[f64; 2]>,
    /// Principal directions, unit length.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    /// Set when the centred data has zero variance; coordinates are then all zero.
    pub degenerate: bool,
}

pub const PCA_TOL: f64 = 1e-9;
pub const PCA_MAX_ITER: usize = 1000;

/// Top-2 PCA by power iteration with deflation on the covariance matrix.
pub fn pca_embed(features: &[Vec<f64>], seed: u64) -> HsaResult<PcaEmbedding> {
    let m = features.len();
    if m < 2 {
        return Err(HsaError::EmptyDataset);
    }
    let d = features[0].len();
    let mut mean = vec![0.0; d];
    for f in features {
        for (a, b) in mean.iter_mut().zip(f) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m as f64);
    let centred: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for x in &centred {
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += x[i] * x[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= m as f64);
    let total_var: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total_var <= 0.0 || d == 0 {
        return Ok(PcaEmbedding {
            coords: vec![[0.0; 2]; m],
            components: [vec![0.0; d], vec![0.0; d]],
            explained_variance: [0.0; 2],
            degenerate: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut vars = [0.0; 2];
    for k in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthonormalize(&mut v, &comps);
        let mut lambda = 0.0;
        for _ in 0..PCA_MAX_ITER {
            let mut w: Vec<f64> = (0..d).map(|i| dot(&cov[i * d..(i + 1) * d], &v)).collect();
            // deflate previously found directions
            for (c, &lv) in comps.iter().zip(&vars) {
                let proj = dot(c, &v) * lv;
                for (wi, ci) in w.iter_mut().zip(c) {
                    *wi -= proj * ci;
                }
            }
            orthonormalize(&mut w, &comps);
            let new_lambda: f64 = (0..d).map(|i| w[i] * dot(&cov[i * d..(i + 1) * d], &w)).sum();
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            lambda = new_lambda;
            if delta < PCA_TOL {
                break;
            }
        }
        vars[k] = lambda.max(0.0);
        comps.push(v);
    }
    let coords = centred.iter().map(|x| [dot(x, &comps[0]), dot(x, &comps[1])]).collect();
    let c1 = comps.pop().unwrap();
    let c0 = comps.pop().unwrap();
    Ok(PcaEmbedding {
        coords,
        components: [c0, c1],
        explained_variance: vars,
        degenerate: false,
    })
}

/// Gram-Schmidt against `basis`, then unit-normalise; falls back to a basis
/// vector not yet spanned if `v` collapses.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
    }
    let n = norm(v);
    if n > 1e-300 {
        v.iter_mut().for_each(|x| *x /= n);
        return;
    }
    for e in 0..v.len() {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[e] = 1.0;
        for b in basis {
            let p = dot(v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
        let n = norm(v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

/// Mean distance between class centroids divided by the mean over classes
/// of the average distance of members to their centroid.
pub fn separation_score(features: &[Vec<f64>], labels: &[usize]) -> HsaResult<f64> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(HsaError::EmptyDataset);
    }
    let d = features[0].len();
    let classes: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.len() < 2 {
        return Err(HsaError::Config("separation needs at least two classes".into()));
    }
    let mut centroids = Vec::new();
    let mut spreads = Vec::new();
    for &c in &classes {
        let members: Vec<&Vec<f64>> = features.iter().zip(labels).filter(|(_, &l)| l == c).map(|(f, _)| f).collect();
        let mut cen = vec![0.0; d];
        for f in &members {
            for (a, b) in cen.iter_mut().zip(f.iter()) {
                *a += b;
            }
        }
        cen.iter_mut().for_each(|x| *x /= members.len() as f64);
        let spread = members.iter().map(|f| dist(f, &cen)).sum::<f64>() / members.len() as f64;
        centroids.push(cen);
        spreads.push(spread);
    }
    let mut inter = 0.0;
    let mut pairs = 0;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += dist(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    let intra = spreads.iter().sum::<f64>() / spreads.len() as f64;
    Ok(if intra > 0.0 { inter / pairs as f64 / intra } else { f64::INFINITY })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Molecule-level vector: mean of the fused tokens `Y`.
pub fn fused_features(model: &HsaModel, mols: &[PreparedMol]) -> HsaResult<Vec<Vec<f64>>> {
    mols.iter()
        .map(|mol| {
            let mut sess = Session::new(&model.store, false);
            let f = model.forward(&mut sess, mol)?;
            let pooled = sess.tape.mean_pool(f.fused, None)?;
            Ok(sess.tape.value(pooled).data().to_vec())
        })
        .collect()
}

/// Fraction of molecules whose gate picks Mamba, per routed layer in order.
pub fn gating_ratio_report(model: &HsaModel, mols: &[PreparedMol]) -> HsaResult<Vec<(LayerTag, f64)>> {
    if mols.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    let Some(gate) = model.hap.gate.as_ref() else {
        // single-projector models route deterministically
        let r = if model.hap.mamba.is_some() { 1.0 } else { 0.0 };
        let mut tags: Vec<LayerTag> = (1..=model.cfg.layers).map(LayerTag::Layer).collect();
        tags.push(LayerTag::Motif);
        return Ok(tags.into_iter().map(|t| (t, r)).collect());
    };
    let mut tags: Vec<LayerTag> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for mol in mols {
        let mut sess = Session::new(&model.store, false);
        let hf = model.features(&mut sess, mol)?;
        let mut inputs: Vec<(LayerTag, _)> = hf
            .layers
            .iter()
            .enumerate()
            .map(|(l, &h)| (LayerTag::Layer(l + 1), h))
            .collect();
        if model.hap.route_motifs {
            inputs.push((LayerTag::Motif, hf.motif));
        }
        if tags.is_empty() {
            tags = inputs.iter().map(|(t, _)| *t).collect();
            counts = vec![0; tags.len()];
        }
        for (i, (tag, h)) in inputs.into_iter().enumerate() {
            let (_, d) = gate.gate(&mut sess, h, tag)?;
            if d.selected == ProjectorKind::Mamba {
                counts[i] += 1;
            }
        }
    }
    Ok(tags
        .into_iter()
        .zip(counts)
        .map(|(t, c)| (t, c as f64 / mols.len() as f64))
        .collect())
}

pub fn layer_label(tag: LayerTag) -> String {
    match tag {
        LayerTag::Layer(l) => l.to_string(),
        LayerTag::Motif => "motif".to_string(),
    }
}

/// Selections per expert over every token of every molecule.
pub fn expert_load_histogram(model: &HsaModel, mols: &[PreparedMol]) -> HsaResult<Vec<usize>> {
    if mols.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    let mut counts = vec![0usize; model.cfg.experts];
    for mol in mols {
        let mut sess = Session::new(&model.store, false);
        let f = model.forward(&mut sess, mol)?;
        let Some(r) = f.routing else {
            return Err(HsaError::Config("model has no SAF expert bank".into()));
        };
        for (c, e) in counts.iter_mut().zip(&r.expert_evals) {
            *c += e;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub lo: usize,
    pub hi: usize,
    pub n: usize,
    pub metric: f64,
}

/// Metric within half-open atom-count bins `[k·w, (k+1)·w)`; empty bins are omitted.
pub fn size_stratified_eval(p: &Predictor, examples: &[Example], bin_width: usize) -> HsaResult<Vec<Stratum>> {
    if examples.is_empty() {
        return Err(HsaError::EmptyDataset);
    }
    if bin_width == 0 {
        return Err(HsaError::Config("bin width must be positive".into()));
    }
    let mut bins: std::collections::BTreeMap<usize, Vec<&Example>> = Default::default();
    for ex in examples {
        bins.entry(ex.mol.num_atoms() / bin_width).or_default().push(ex);
    }
    bins.into_iter()
        .map(|(k, exs)| {
            let owned: Vec<Example> = exs.into_iter().cloned().collect();
            Ok(Stratum {
                lo: k * bin_width,
                hi: (k + 1) * bin_width,
                n: owned.len(),
                metric: p.evaluate(&owned)?,
            })
        })
        .collect()
}

/// Regression MAE pooled over every example with at least `min_atoms` atoms.
pub fn pooled_metric_above(p: &Predictor, examples: &[Example], min_atoms: usize) -> HsaResult<f64> {
    let sel: Vec<Example> = examples.iter().filter(|e| e.mol.num_atoms() >= min_atoms).cloned().collect();
    p.evaluate(&sel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub metric: f64,
    pub best_epoch: usize,
    pub params: usize,
}

/// Trains each variant with identical data split, seed and settings.
pub fn run_ablation(
    ds: &Dataset,
    base: &ModelConfig,
    task: &TaskSpec,
    tcfg: &TrainConfig,
    variants: &[Variant],
) -> HsaResult<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&v| {
            let exp = run_experiment(ds, base.clone().with_variant(v), task.clone(), tcfg, None)?;
            Ok(AblationRow {
                variant: v,
                metric: exp.log.best_metric,
                best_epoch: exp.log.best_epoch,
                params: exp.predictor.model.store.num_scalars(),
            })
        })
        .collect()
}

/// `true` when `a` is a better value of the task metric than `b`.
pub fn better(kind: TaskKind, a: f64, b: f64) -> bool {
    if kind.higher_is_better() {
        a > b
    } else {
        a < b
    }
}

pub fn oversmoothing_csv(curve: &[f64]) -> String {
    let mut s = String::from("layer,cos_sim\n");
    for (l, v) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{v}", l + 1);
    }
    s
}

pub fn gating_csv(rows: &[(LayerTag, f64)]) -> String {
    let mut s = String::from("layer,mamba_ratio\n");
    for (t, r) in rows {
        let _ = writeln!(s, "{},{r}", layer_label(*t));
    }
    s
}

pub fn experts_csv(counts: &[usize]) -> String {
    let mut s = String::from("expert_id,count\n");
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(s, "{i},{c}");
    }
    s
}

/// Rows are `(seed, result)`.
pub fn ablation_csv(rows: &[(u64, AblationRow)], metric: &str) -> String {
    let mut s = format!("variant,seed,{metric},best_epoch,params\n");
    for (seed, r) in rows {
        let _ = writeln!(s, "{},{seed},{},{},{}", r.variant, r.metric, r.best_epoch, r.params);
    }
    s
}

pub fn strata_csv(rows: &[Stratum]) -> String {
    let mut s = String::from("bin_lo,bin_hi,n,metric\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.lo, r.hi, r.n, r.metric);
    }
    s
}

pub fn embed_csv(e: &PcaEmbedding, labels: &[usize]) -> String {
    let mut s = String::from("id,x,y,label\n");
    for (i, (c, l)) in e.coords.iter().zip(labels).enumerate() {
        let _ = writeln!(s, "{i},{},{},{l}", c[0], c[1]);
    }
    s
}

pub fn prepare_all(model: &HsaModel, ds: &Dataset) -> Vec<PreparedMol> {
    ds.records.iter().map(|r| model.prepare(r.graph.clone())).collect()
}
