//! Hierarchical adaptive projection: a linear gate picks exactly one of the
//! two projectors per feature layer.

use crate::encoder::HierarchicalFeatures;
use crate::projectors::{AttnProjector, MambaProjector, ProjectedTokens, TokenSource};
use crate::tensor::{ParamId, ParamStore, Result, Session, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectorKind {
    Attention = 0,
    Mamba = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerTag {
    /// 1-based GNN layer.
    Layer(usize),
    Motif,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub layer: LayerTag,
    pub probs: [f64; 2],
    pub selected: ProjectorKind,
}

/// Which projectors a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectorSet {
    Both,
    AttentionOnly,
    MambaOnly,
}

/// Linear gate `p = softmax(mean_pool(H)·W_g + b_g)`.
#[derive(Debug, Clone)]
pub struct HapGate {
    pub w: ParamId,
    pub b: ParamId,
}

impl HapGate {
    pub fn new<R: Rng>(dim: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        HapGate {
            w: store.add_uniform("hap.gate.w", &[dim, 2], dim, rng),
            b: store.add("hap.gate.b", Tensor::zeros(&[2])),
        }
    }

    /// Returns the `1 × 2` probability row and the hard decision (ties go to attention).
    pub fn gate(&self, sess: &mut Session, h: Var, layer: LayerTag) -> Result<(Var, GateDecision)> {
        let pooled = sess.tape.mean_pool(h, None)?;
        let (w, b) = (sess.param(self.w), sess.param(self.b));
        let logits = sess.tape.matmul(pooled, w)?;
        let logits = sess.tape.add_row_bias(logits, b)?;
        let p = sess.tape.softmax_rows(logits)?;
        let pv = sess.tape.value(p).data();
        let probs = [pv[0], pv[1]];
        let argmax = usize::from(probs[1] > probs[0]);
        let selected = if sess.choice(vec![argmax])[0] == 1 {
            ProjectorKind::Mamba
        } else {
            ProjectorKind::Attention
        };
        Ok((p, GateDecision { layer, probs, selected }))
    }
}

/// Per-molecule inputs the Mamba projector needs besides node features.
#[derive(Debug, Clone, Copy)]
pub struct SerialContext<'a> {
    pub order: &'a [usize],
    pub hop_gaps: &'a [u32],
}

/// Result of routing every feature block.
#[derive(Debug, Clone)]
pub struct HapOutput {
    pub blocks: Vec<ProjectedTokens>,
    pub decisions: Vec<GateDecision>,
    pub attention_evals: usize,
    pub mamba_evals: usize,
}

#[derive(Debug, Clone)]
pub struct Hap {
    pub set: ProjectorSet,
    pub gate: Option<HapGate>,
    pub attn: Option<AttnProjector>,
    pub mamba: Option<MambaProjector>,
    /// Route the motif block through the gate; otherwise it always uses the attention projector when present.
    pub route_motifs: bool,
}

impl Hap {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        set: ProjectorSet,
        dim: usize,
        tokens: usize,
        heads: usize,
        state: usize,
        alpha: f64,
        route_motifs: bool,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let attn = (set != ProjectorSet::MambaOnly).then(|| AttnProjector::new(dim, tokens, heads, store, rng));
        let mamba = (set != ProjectorSet::AttentionOnly)
            .then(|| MambaProjector::new(dim, tokens, state, alpha, store, rng));
        let gate = (set == ProjectorSet::Both).then(|| HapGate::new(dim, store, rng));
        Hap {
            set,
            gate,
            attn,
            mamba,
            route_motifs,
        }
    }

    fn run(&self, kind: ProjectorKind, sess: &mut Session, h: Var, ctx: SerialContext) -> Result<ProjectedTokens> {
        match kind {
            ProjectorKind::Attention => self.attn.as_ref().expect("attention projector").project(sess, h, None),
            ProjectorKind::Mamba => self
                .mamba
                .as_ref()
                .expect("mamba projector")
                .project(sess, h, ctx.order, ctx.hop_gaps),
        }
    }

    /// Runs only the chosen projector. With a gate, the output is scaled by a
    /// straight-through factor that is exactly 1.0 in value.
    pub fn select_and_project(
        &self,
        sess: &mut Session,
        h: Var,
        layer: LayerTag,
        ctx: SerialContext,
    ) -> Result<(ProjectedTokens, Option<GateDecision>)> {
        let gated = self.gate.is_some() && (layer != LayerTag::Motif || self.route_motifs);
        if !gated {
            let kind = match self.set {
                ProjectorSet::MambaOnly => ProjectorKind::Mamba,
                _ => ProjectorKind::Attention,
            };
            return Ok((self.run(kind, sess, h, ctx)?, None));
        }
        let gate = self.gate.as_ref().unwrap();
        let (p, decision) = gate.gate(sess, h, layer)?;
        let out = self.run(decision.selected, sess, h, ctx)?;
        let pk = sess.tape.gather_elems(p, &[decision.selected as usize])?;
        let factor = sess.straight_through_one(pk)?;
        let tokens = sess.tape.mul(out.tokens, factor)?;
        Ok((
            ProjectedTokens {
                tokens,
                source: out.source,
            },
            Some(decision),
        ))
    }

    /// Projects `H^(1..L)` then the motif features, in that order.
    pub fn project_all(&self, sess: &mut Session, hf: &HierarchicalFeatures, ctx: SerialContext) -> Result<HapOutput> {
        let mut out = HapOutput {
            blocks: Vec::with_capacity(hf.layers.len() + 1),
            decisions: Vec::new(),
            attention_evals: 0,
            mamba_evals: 0,
        };
        let inputs = hf
            .layers
            .iter()
            .enumerate()
            .map(|(l, &h)| (LayerTag::Layer(l + 1), h))
            .chain(std::iter::once((LayerTag::Motif, hf.motif)));
        for (tag, h) in inputs {
            // motif rows are fragments, not serialized atoms: give the scan their natural order
            let motif_order: Vec<usize>;
            let motif_gaps: Vec<u32>;
            let c = if tag == LayerTag::Motif {
                let rows = sess.tape.value(h).rows();
                motif_order = (0..rows).collect();
                motif_gaps = vec![1; rows.saturating_sub(1)];
                SerialContext {
                    order: &motif_order,
                    hop_gaps: &motif_gaps,
                }
            } else {
                ctx
            };
            let (block, decision) = self.select_and_project(sess, h, tag, c)?;
            match block.source {
                TokenSource::Mamba => out.mamba_evals += 1,
                _ => out.attention_evals += 1,
            }
            let source = if tag == LayerTag::Motif {
                TokenSource::Motif
            } else {
                block.source
            };
            out.blocks.push(ProjectedTokens {
                tokens: block.tokens,
                source,
            });
            out.decisions.extend(decision);
        }
        Ok(out)
    }
}
