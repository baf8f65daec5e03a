//! Full pipeline: encoder, adaptive projection, fusion and a pooled linear head.

use crate::encoder::{linear, Aggregation, EncoderConfig, GnnEncoder, HierarchicalFeatures};
use crate::error::{HsaError, HsaResult};
use crate::hap::{Hap, HapOutput, ProjectorSet, SerialContext};
use crate::molgraph::{fragment_motifs, hop_gaps, serialize_nodes, struct_matrices, MolGraph, MotifSet, MotifVocabulary};
use crate::saf::{ExpertBank, FeedForward, FuseOutput, SafMode};
use crate::tensor::{ParamId, ParamStore, Result, Session, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub epsilon_learnable: bool,
    pub aggregation: Aggregation,
    /// Tokens per projected block (`K`).
    pub tokens: usize,
    pub heads: usize,
    pub state: usize,
    pub alpha: f64,
    pub projectors: ProjectorSet,
    pub route_motifs: bool,
    pub saf: bool,
    pub saf_mode: SafMode,
    pub experts: usize,
    pub ff_hidden: usize,
    pub out_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 6,
            dim: 64,
            epsilon_learnable: true,
            aggregation: Aggregation::Sum,
            tokens: 8,
            heads: 4,
            state: 8,
            alpha: 0.5,
            projectors: ProjectorSet::Both,
            route_motifs: true,
            saf: true,
            saf_mode: SafMode::Verbatim,
            experts: 4,
            ff_hidden: 128,
            out_width: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> HsaResult<()> {
        let bad = |m: &str| Err(HsaError::Config(m.to_string()));
        if self.layers == 0 || self.dim == 0 || self.tokens == 0 || self.state == 0 || self.ff_hidden == 0 {
            return bad("layers, dim, tokens, state and ff_hidden must be positive");
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be a positive multiple of heads");
        }
        if self.saf && self.experts < 2 {
            return bad("SAF needs at least two experts");
        }
        if self.out_width == 0 {
            return bad("out_width must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and non-negative");
        }
        Ok(())
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.projectors = v.projectors;
        self.saf = v.saf;
        self
    }

    pub fn variant(&self) -> Variant {
        Variant {
            projectors: self.projectors,
            saf: self.saf,
        }
    }

    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            dim: self.dim,
            epsilon_learnable: self.epsilon_learnable,
            aggregation: self.aggregation,
        }
    }
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub projectors: ProjectorSet,
    pub saf: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        projectors: ProjectorSet::Both,
        saf: true,
    };

    /// Attention-only, Mamba-only and both, each without and with SAF.
    pub fn ablation_rows() -> [Variant; 6] {
        let mut rows = [Variant::FULL; 6];
        let sets = [ProjectorSet::AttentionOnly, ProjectorSet::MambaOnly, ProjectorSet::Both];
        for (i, &projectors) in sets.iter().enumerate() {
            rows[2 * i] = Variant { projectors, saf: false };
            rows[2 * i + 1] = Variant { projectors, saf: true };
        }
        rows
    }

    pub fn from_toggles(attention: bool, mamba: bool, saf: bool) -> HsaResult<Variant> {
        let projectors = match (attention, mamba) {
            (true, true) => ProjectorSet::Both,
            (true, false) => ProjectorSet::AttentionOnly,
            (false, true) => ProjectorSet::MambaOnly,
            (false, false) => {
                return Err(HsaError::InvalidToggleCombination(
                    "attention and mamba cannot both be disabled".into(),
                ))
            }
        };
        Ok(Variant { projectors, saf })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.projectors {
            ProjectorSet::Both => "hap",
            ProjectorSet::AttentionOnly => "attention",
            ProjectorSet::MambaOnly => "mamba",
        };
        write!(f, "{p}{}", if self.saf { "+saf" } else { "+mlp" })
    }
}

/// Graph-side preprocessing shared by every forward pass over a molecule.
#[derive(Debug, Clone)]
pub struct PreparedMol {
    pub graph: MolGraph,
    pub motifs: MotifSet,
    pub motif_ids: Vec<usize>,
    pub order: Vec<usize>,
    pub hop_gaps: Vec<u32>,
    pub adj: Rc<Vec<Vec<usize>>>,
}

impl PreparedMol {
    pub fn new(graph: MolGraph, vocab: &MotifVocabulary) -> Self {
        let motifs = fragment_motifs(&graph);
        let motif_ids = motifs.keys.iter().map(|k| vocab.lookup(k)).collect();
        let order = serialize_nodes(&graph, &motifs);
        let gaps = hop_gaps(&order, &struct_matrices(&graph));
        let adj = Rc::new(graph.adjacency_lists().to_vec());
        PreparedMol {
            graph,
            motifs,
            motif_ids,
            order,
            hop_gaps: gaps,
            adj,
        }
    }

    pub fn num_atoms(&self) -> usize {
        self.graph.num_atoms()
    }
}

#[derive(Debug, Clone)]
pub enum Fusion {
    Saf(ExpertBank, SafMode),
    /// One shared feed-forward map over every token, no gate.
    Shared(FeedForward),
}

/// Intermediate handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `1 × out_width` head output.
    pub output: Var,
    /// Fused tokens `Y`, `M × d`.
    pub fused: Var,
    /// Concatenated projector tokens `Z`, `M × d`.
    pub tokens: Var,
    pub features: HierarchicalFeatures,
    pub hap: HapOutput,
    pub routing: Option<FuseOutput>,
}

#[derive(Debug, Clone)]
pub struct HsaModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub vocab: MotifVocabulary,
    pub encoder: GnnEncoder,
    pub hap: Hap,
    pub fusion: Fusion,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl HsaModel {
    pub fn new(cfg: ModelConfig, vocab: MotifVocabulary, seed: u64) -> HsaResult<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = GnnEncoder::new(cfg.encoder(), vocab.len(), &mut store, &mut rng);
        let hap = Hap::new(
            cfg.projectors,
            cfg.dim,
            cfg.tokens,
            cfg.heads,
            cfg.state,
            cfg.alpha,
            cfg.route_motifs,
            &mut store,
            &mut rng,
        );
        let fusion = if cfg.saf {
            Fusion::Saf(
                ExpertBank::new(cfg.dim, cfg.ff_hidden, cfg.experts, &mut store, &mut rng),
                cfg.saf_mode,
            )
        } else {
            Fusion::Shared(FeedForward::new("fusion.mlp", cfg.dim, cfg.ff_hidden, &mut store, &mut rng))
        };
        let head_w = store.add_uniform("head.w", &[cfg.dim, cfg.out_width], cfg.dim, &mut rng);
        let head_b = store.add_uniform("head.b", &[cfg.out_width], cfg.dim, &mut rng);
        Ok(HsaModel {
            cfg,
            store,
            vocab,
            encoder,
            hap,
            fusion,
            head_w,
            head_b,
        })
    }

    pub fn prepare(&self, graph: MolGraph) -> PreparedMol {
        PreparedMol::new(graph, &self.vocab)
    }

    /// Encoder features only.
    pub fn features(&self, sess: &mut Session, mol: &PreparedMol) -> Result<HierarchicalFeatures> {
        self.encoder
            .encode_hierarchy(sess, &mol.graph, &mol.adj, &mol.motifs, &mol.motif_ids)
    }

    pub fn forward(&self, sess: &mut Session, mol: &PreparedMol) -> Result<Forward> {
        let features = self.features(sess, mol)?;
        let ctx = SerialContext {
            order: &mol.order,
            hop_gaps: &mol.hop_gaps,
        };
        let hap = self.hap.project_all(sess, &features, ctx)?;
        let blocks: Vec<Var> = hap.blocks.iter().map(|b| b.tokens).collect();
        let tokens = sess.tape.concat_rows(&blocks)?;
        let (fused, routing) = match &self.fusion {
            Fusion::Saf(bank, mode) => {
                let out = bank.fuse(sess, tokens, *mode)?;
                (out.y, Some(out))
            }
            Fusion::Shared(ff) => (ff.forward(sess, tokens)?, None),
        };
        let pooled = sess.tape.mean_pool(fused, None)?;
        let output = linear(sess, pooled, self.head_w, self.head_b)?;
        Ok(Forward {
            output,
            fused,
            tokens,
            features,
            hap,
            routing,
        })
    }

    /// Raw head outputs without recording gradients.
    pub fn predict(&self, mol: &PreparedMol) -> Result<Vec<f64>> {
        let mut sess = Session::new(&self.store, false);
        let f = self.forward(&mut sess, mol)?;
        Ok(sess.tape.value(f.output).data().to_vec())
    }

    /// Trainable parameter groups by name prefix, in store order.
    pub fn param_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups: Vec<(String, Vec<ParamId>)> = Vec::new();
        for id in self.store.ids() {
            let name = self.store.name(id);
            let group = param_group(name);
            match groups.iter_mut().find(|(g, _)| g == group) {
                Some((_, ids)) => ids.push(id),
                None => groups.push((group.to_string(), vec![id])),
            }
        }
        groups
    }
}

fn param_group(name: &str) -> &str {
    const GROUPS: [&str; 8] = [
        "encoder",
        "projector.attn",
        "projector.mamba",
        "hap.gate",
        "saf.gate",
        "saf.expert",
        "fusion.mlp",
        "head",
    ];
    GROUPS.iter().find(|g| name.starts_with(**g)).copied().unwrap_or(name)
}
