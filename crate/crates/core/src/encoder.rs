//! L-layer message-passing encoder producing the hierarchical feature stack,
//! plus the motif encoder.

use crate::molgraph::{Element, MolGraph, MotifSet};
use crate::tensor::{ParamId, ParamStore, Result, Session, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Degrees at or above this share the last embedding bucket.
pub const MAX_DEGREE_BUCKET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// `(1 + ε)·h_v + Σ_{u ∈ N(v)} h_u`
    Sum,
    /// Mean over the closed neighbourhood `{v} ∪ N(v)`; used by the over-smoothing diagnostic.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub epsilon_learnable: bool,
    pub aggregation: Aggregation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 6,
            dim: 64,
            epsilon_learnable: true,
            aggregation: Aggregation::Sum,
        }
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    eps: Option<ParamId>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
}

#[derive(Debug, Clone)]
struct MotifParams {
    emb: ParamId,
    w: ParamId,
    b: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
}

/// Per-layer node features `H^(1..L)` and motif features, as tape handles.
#[derive(Debug, Clone)]
pub struct HierarchicalFeatures {
    pub layers: Vec<Var>,
    pub motif: Var,
}

#[derive(Debug, Clone)]
pub struct GnnEncoder {
    cfg: EncoderConfig,
    elem_emb: ParamId,
    arom_emb: ParamId,
    deg_emb: ParamId,
    layers: Vec<LayerParams>,
    motif: MotifParams,
}

pub(crate) fn add_layernorm(store: &mut ParamStore, prefix: &str, dim: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{prefix}.ln_gain"), Tensor::filled(&[dim], 1.0)),
        store.add(format!("{prefix}.ln_bias"), Tensor::zeros(&[dim])),
    )
}

pub(crate) fn linear(sess: &mut Session, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let wv = sess.param(w);
    let bv = sess.param(b);
    let y = sess.tape.matmul(x, wv)?;
    sess.tape.add_row_bias(y, bv)
}

pub(crate) fn layernorm(sess: &mut Session, x: Var, g: ParamId, b: ParamId) -> Result<Var> {
    let gv = sess.param(g);
    let bv = sess.param(b);
    sess.tape.layernorm(x, gv, bv)
}

impl GnnEncoder {
    /// Registers encoder parameters under `encoder.*`. `motif_vocab_len`
    /// counts the UNK row.
    pub fn new<R: Rng>(cfg: EncoderConfig, motif_vocab_len: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        assert!(cfg.layers >= 1 && cfg.dim >= 2, "encoder needs L >= 1 and d >= 2");
        let d = cfg.dim;
        let elem_emb = store.add_uniform("encoder.embed.element", &[Element::ALL.len(), d], 1, rng);
        let arom_emb = store.add_uniform("encoder.embed.aromatic", &[2, d], 1, rng);
        let deg_emb = store.add_uniform("encoder.embed.degree", &[MAX_DEGREE_BUCKET + 1, d], 1, rng);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                let eps = cfg
                    .epsilon_learnable
                    .then(|| store.add(format!("{p}.eps"), Tensor::scalar(0.0)));
                let w1 = store.add_uniform(format!("{p}.w1"), &[d, d], d, rng);
                let b1 = store.add_uniform(format!("{p}.b1"), &[d], d, rng);
                let w2 = store.add_uniform(format!("{p}.w2"), &[d, d], d, rng);
                let b2 = store.add_uniform(format!("{p}.b2"), &[d], d, rng);
                let (ln_g, ln_b) = add_layernorm(store, &p, d);
                LayerParams {
                    eps,
                    w1,
                    b1,
                    w2,
                    b2,
                    ln_g,
                    ln_b,
                }
            })
            .collect();
        let emb = store.add_uniform("encoder.motif.embed", &[motif_vocab_len.max(1), d], 1, rng);
        let w = store.add_uniform("encoder.motif.w", &[d, d], d, rng);
        let b = store.add_uniform("encoder.motif.b", &[d], d, rng);
        let (ln_g, ln_b) = add_layernorm(store, "encoder.motif", d);
        GnnEncoder {
            cfg,
            elem_emb,
            arom_emb,
            deg_emb,
            layers,
            motif: MotifParams {
                emb,
                w,
                b,
                ln_g,
                ln_b,
            },
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn motif_vocab_len(&self, store: &ParamStore) -> usize {
        store.get(self.motif.emb).rows()
    }

    /// `H^(0)`: element + aromatic-flag + degree-bucket embeddings.
    pub fn init_node_features(&self, sess: &mut Session, g: &MolGraph) -> Result<Var> {
        let el: Vec<usize> = g.atoms().iter().map(|a| a.element.index()).collect();
        let ar: Vec<usize> = g.atoms().iter().map(|a| a.aromatic as usize).collect();
        let dg: Vec<usize> = g.atoms().iter().map(|a| a.degree.min(MAX_DEGREE_BUCKET)).collect();
        let (te, ta, td) = (sess.param(self.elem_emb), sess.param(self.arom_emb), sess.param(self.deg_emb));
        let e = sess.tape.embedding_lookup(te, &el)?;
        let a = sess.tape.embedding_lookup(ta, &ar)?;
        let d = sess.tape.embedding_lookup(td, &dg)?;
        let ea = sess.tape.add(e, a)?;
        sess.tape.add(ea, d)
    }

    /// Runs all layers and returns `H^(1)..H^(L)`.
    pub fn encode(&self, sess: &mut Session, g: &MolGraph, adj: &Rc<Vec<Vec<usize>>>) -> Result<Vec<Var>> {
        let mut h = self.init_node_features(sess, g)?;
        let inv_closed: Option<Var> = match self.cfg.aggregation {
            Aggregation::Sum => None,
            Aggregation::Mean => {
                let w: Vec<f64> = (0..g.num_atoms()).map(|v| 1.0 / (1 + g.degree(v)) as f64).collect();
                Some(sess.constant(Tensor::vector(w)))
            }
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for lp in &self.layers {
            let nsum = sess.tape.neighbor_sum(h, Rc::clone(adj))?;
            let pre = match inv_closed {
                None => {
                    let selfterm = match lp.eps {
                        Some(eps) => {
                            let e = sess.param(eps);
                            let eh = sess.tape.mul(h, e)?;
                            sess.tape.add(h, eh)?
                        }
                        None => h,
                    };
                    sess.tape.add(selfterm, nsum)?
                }
                Some(w) => {
                    let closed = sess.tape.add(h, nsum)?;
                    sess.tape.scale_rows(closed, w)?
                }
            };
            let z = linear(sess, pre, lp.w1, lp.b1)?;
            let z = sess.tape.silu(z);
            let z = linear(sess, z, lp.w2, lp.b2)?;
            h = layernorm(sess, z, lp.ln_g, lp.ln_b)?;
            out.push(h);
        }
        Ok(out)
    }

    /// One row per fragment: `embed(id) + linear(mean of final-layer rows)`, layer-normalized.
    pub fn encode_motifs(&self, sess: &mut Session, final_layer: Var, m: &MotifSet, ids: &[usize]) -> Result<Var> {
        let n = sess.tape.value(final_layer).rows();
        let mut pooled = Vec::with_capacity(m.len());
        for frag in &m.fragments {
            let mut mask = vec![false; n];
            for &v in frag {
                mask[v] = true;
            }
            pooled.push(sess.tape.mean_pool(final_layer, Some(&mask))?);
        }
        let pooled = sess.tape.concat_rows(&pooled)?;
        let proj = linear(sess, pooled, self.motif.w, self.motif.b)?;
        let table = sess.param(self.motif.emb);
        let vocab_rows = sess.tape.value(table).rows();
        // ids outside the table (vocabulary grew after the model was built) fall back to UNK
        let ids: Vec<usize> = ids.iter().map(|&i| if i < vocab_rows { i } else { 0 }).collect();
        let emb = sess.tape.embedding_lookup(table, &ids)?;
        let sum = sess.tape.add(emb, proj)?;
        layernorm(sess, sum, self.motif.ln_g, self.motif.ln_b)
    }

    pub fn encode_hierarchy(
        &self,
        sess: &mut Session,
        g: &MolGraph,
        adj: &Rc<Vec<Vec<usize>>>,
        m: &MotifSet,
        motif_ids: &[usize],
    ) -> Result<HierarchicalFeatures> {
        let layers = self.encode(sess, g, adj)?;
        let motif = self.encode_motifs(sess, *layers.last().unwrap(), m, motif_ids)?;
        Ok(HierarchicalFeatures { layers, motif })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{fragment_motifs, parse_smiles, MotifVocabulary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: EncoderConfig) -> (ParamStore, GnnEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = GnnEncoder::new(cfg, 4, &mut store, &mut rng);
        (store, enc)
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            layers: 3,
            dim: 8,
            ..EncoderConfig::default()
        }
    }

    fn adj(g: &MolGraph) -> Rc<Vec<Vec<usize>>> {
        Rc::new(g.adjacency_lists().to_vec())
    }

    #[test]
    fn single_carbon_initial_row() {
        let (store, enc) = setup(small());
        let g = parse_smiles("C").unwrap();
        let mut s = Session::new(&store, false);
        let h0 = enc.init_node_features(&mut s, &g).unwrap();
        let row = s.tape.value(h0).row(0).to_vec();
        let e = store.get(enc.elem_emb).row(Element::C.index()).to_vec();
        let a = store.get(enc.arom_emb).row(0).to_vec();
        let d = store.get(enc.deg_emb).row(0).to_vec();
        for c in 0..8 {
            assert_eq!(row[c], e[c] + a[c] + d[c]);
        }
    }

    #[test]
    fn benzene_rows_identical_every_layer() {
        let (store, enc) = setup(small());
        let g = parse_smiles("c1ccccc1").unwrap();
        let mut s = Session::new(&store, false);
        let h0 = enc.init_node_features(&mut s, &g).unwrap();
        let v = s.tape.value(h0);
        for r in 1..6 {
            assert_eq!(v.row(r), v.row(0));
        }
        for h in enc.encode(&mut s, &g, &adj(&g)).unwrap() {
            let v = s.tape.value(h);
            for r in 1..6 {
                assert_eq!(v.row(r), v.row(0));
            }
        }
    }

    #[test]
    fn isolated_atom_uses_self_term_only() {
        let (mut store, enc) = setup(small());
        let eps0 = enc.layers[0].eps.unwrap();
        store.get_mut(eps0).data_mut()[0] = 0.5;
        let g = parse_smiles("C").unwrap();
        let mut s = Session::new(&store, false);
        let h0 = enc.init_node_features(&mut s, &g).unwrap();
        let x = s.tape.value(h0).clone();
        let layers = enc.encode(&mut s, &g, &adj(&g)).unwrap();
        // recompute layer 1 by hand: MLP(1.5 * h0)
        let lp = &enc.layers[0];
        let pre: Vec<f64> = x.data().iter().map(|v| v * 1.5).collect();
        let mut t = crate::tensor::Tape::new();
        let p = t.constant(Tensor::matrix(1, 8, pre).unwrap());
        let w1 = t.constant(store.get(lp.w1).clone());
        let b1 = t.constant(store.get(lp.b1).clone());
        let w2 = t.constant(store.get(lp.w2).clone());
        let b2 = t.constant(store.get(lp.b2).clone());
        let g1 = t.constant(store.get(lp.ln_g).clone());
        let bb = t.constant(store.get(lp.ln_b).clone());
        let z = t.matmul(p, w1).unwrap();
        let z = t.add_row_bias(z, b1).unwrap();
        let z = t.silu(z);
        let z = t.matmul(z, w2).unwrap();
        let z = t.add_row_bias(z, b2).unwrap();
        let z = t.layernorm(z, g1, bb).unwrap();
        assert_eq!(t.value(z).data(), s.tape.value(layers[0]).data());
    }

    #[test]
    fn relabeling_permutes_features() {
        let (store, enc) = setup(small());
        let g = parse_smiles("CC(=O)Nc1ccc(O)cc1").unwrap();
        let n = g.num_atoms();
        let perm: Vec<usize> = (0..n).map(|v| (v * 7 + 3) % n).collect();
        let pg = g.permuted(&perm);
        let mut s1 = Session::new(&store, false);
        let mut s2 = Session::new(&store, false);
        let a = enc.encode(&mut s1, &g, &adj(&g)).unwrap();
        let b = enc.encode(&mut s2, &pg, &adj(&pg)).unwrap();
        for (la, lb) in a.iter().zip(&b) {
            let (ta, tb) = (s1.tape.value(*la), s2.tape.value(*lb));
            for (v, &pv) in perm.iter().enumerate() {
                for c in 0..8 {
                    assert!((ta.get(v, c) - tb.get(pv, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn motif_rows_per_fragment() {
        let (store, enc) = setup(small());
        let corpus = [parse_smiles("Cc1ccccc1").unwrap()];
        let vocab = MotifVocabulary::build(&corpus, 1).unwrap();
        for (smi, expect) in [("Cc1ccccc1", 2), ("C", 1)] {
            let g = parse_smiles(smi).unwrap();
            let m = fragment_motifs(&g);
            let ids: Vec<usize> = m.keys.iter().map(|k| vocab.lookup(k)).collect();
            let mut s = Session::new(&store, false);
            let hf = enc.encode_hierarchy(&mut s, &g, &adj(&g), &m, &ids).unwrap();
            assert_eq!(s.tape.shape(hf.motif), &[expect, 8]);
            assert_eq!(hf.layers.len(), 3);
        }
    }

    #[test]
    fn unk_motif_uses_unk_row() {
        let (store, enc) = setup(small());
        let g = parse_smiles("CCO").unwrap();
        let m = fragment_motifs(&g);
        let mut s = Session::new(&store, false);
        let layers = enc.encode(&mut s, &g, &adj(&g)).unwrap();
        let last = *layers.last().unwrap();
        let unk = enc.encode_motifs(&mut s, last, &m, &[0, 0]).unwrap();
        let oov = enc.encode_motifs(&mut s, last, &m, &[0, 99]).unwrap();
        assert_eq!(s.tape.value(unk), s.tape.value(oov));
    }
}
