//! The two specialist projectors: learned-query cross-attention and the
//! serialized graph state-space scan. Both map `n × d` node features to a
//! fixed `K × d` token block.

use crate::encoder::{add_layernorm, layernorm, linear};
use crate::tensor::{CustomOp, ParamId, ParamStore, Result, Session, Tape, Tensor, TensorError, Var};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenSource {
    Attention,
    Mamba,
    Motif,
}

/// A `K × d` token block and where it came from.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedTokens {
    pub tokens: Var,
    pub source: TokenSource,
}

/// Learned query bank and multi-head projections.
#[derive(Debug, Clone)]
pub struct AttnProjector {
    tokens: usize,
    heads: usize,
    queries: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
}

/// Output of [`AttnProjector::project_with_weights`].
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub tokens: Var,
    /// Per-head `K × n` attention matrices.
    pub weights: Vec<Var>,
    /// Per-head `K × d_head` weighted values, before the output projection.
    pub head_values: Vec<Var>,
}

impl AttnProjector {
    pub fn new<R: Rng>(dim: usize, tokens: usize, heads: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        assert!(heads >= 1 && dim.is_multiple_of(heads), "d must be divisible by the head count");
        let p = "projector.attn";
        let queries = store.add_uniform(format!("{p}.queries"), &[tokens, dim], 1, rng);
        let wq = store.add_uniform(format!("{p}.wq"), &[dim, dim], dim, rng);
        let wk = store.add_uniform(format!("{p}.wk"), &[dim, dim], dim, rng);
        let wv = store.add_uniform(format!("{p}.wv"), &[dim, dim], dim, rng);
        let wo = store.add_uniform(format!("{p}.wo"), &[dim, dim], dim, rng);
        let bo = store.add_uniform(format!("{p}.bo"), &[dim], dim, rng);
        let (ln_g, ln_b) = add_layernorm(store, p, dim);
        AttnProjector {
            tokens,
            heads,
            queries,
            wq,
            wk,
            wv,
            wo,
            bo,
            ln_g,
            ln_b,
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn project(&self, sess: &mut Session, h: Var, mask: Option<&[bool]>) -> Result<ProjectedTokens> {
        let out = self.project_with_weights(sess, h, mask)?;
        Ok(ProjectedTokens {
            tokens: out.tokens,
            source: TokenSource::Attention,
        })
    }

    pub fn project_with_weights(&self, sess: &mut Session, h: Var, mask: Option<&[bool]>) -> Result<AttentionOutput> {
        if let Some(m) = mask {
            if !m.iter().any(|&b| b) {
                return Err(TensorError::EmptyMask);
            }
        }
        let dim = sess.tape.value(h).cols();
        let dh = dim / self.heads;
        let q0 = sess.param(self.queries);
        let (wq, wk, wv) = (sess.param(self.wq), sess.param(self.wk), sess.param(self.wv));
        let q = sess.tape.matmul(q0, wq)?;
        let k = sess.tape.matmul(h, wk)?;
        let v = sess.tape.matmul(h, wv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let qh = sess.tape.slice_cols(q, i * dh, dh)?;
            let kh = sess.tape.slice_cols(k, i * dh, dh)?;
            let vh = sess.tape.slice_cols(v, i * dh, dh)?;
            let kt = sess.tape.transpose(kh);
            let scores = sess.tape.matmul(qh, kt)?;
            let scores = sess.tape.scale(scores, scale);
            let w = sess.tape.masked_softmax_rows(scores, mask)?;
            heads.push(sess.tape.matmul(w, vh)?);
            weights.push(w);
        }
        let cat = sess.tape.concat_cols(&heads)?;
        let o = linear(sess, cat, self.wo, self.bo)?;
        let res = sess.tape.add(q0, o)?;
        let tokens = layernorm(sess, res, self.ln_g, self.ln_b)?;
        Ok(AttentionOutput {
            tokens,
            weights,
            head_values: heads,
        })
    }
}

/// Parameters of the structure-aware selective scan.
#[derive(Debug, Clone)]
pub struct MambaProjector {
    tokens: usize,
    state: usize,
    alpha: f64,
    w_delta: ParamId,
    b_delta: ParamId,
    w_b: ParamId,
    w_c: ParamId,
    a_log: ParamId,
    d_skip: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
}

impl MambaProjector {
    /// `alpha` scales the extra forgetting applied across non-adjacent serialization jumps.
    pub fn new<R: Rng>(dim: usize, tokens: usize, state: usize, alpha: f64, store: &mut ParamStore, rng: &mut R) -> Self {
        assert!(alpha >= 0.0, "structural bias strength must be non-negative");
        let p = "projector.mamba";
        let w_delta = store.add_uniform(format!("{p}.w_delta"), &[dim, dim], dim, rng);
        let b_delta = store.add_uniform(format!("{p}.b_delta"), &[dim], dim, rng);
        let w_b = store.add_uniform(format!("{p}.w_b"), &[dim, state], dim, rng);
        let w_c = store.add_uniform(format!("{p}.w_c"), &[dim, state], dim, rng);
        // S4D-real style init: A[c, j] = j + 1
        let a: Vec<f64> = (0..dim)
            .flat_map(|_| (0..state).map(|j| ((j + 1) as f64).ln()))
            .collect();
        let a_log = store.add(format!("{p}.a_log"), Tensor::matrix(dim, state, a).unwrap());
        let d_skip = store.add(format!("{p}.d_skip"), Tensor::filled(&[dim], 1.0));
        let (ln_g, ln_b) = add_layernorm(store, p, dim);
        MambaProjector {
            tokens,
            state,
            alpha,
            w_delta,
            b_delta,
            w_b,
            w_c,
            a_log,
            d_skip,
            ln_g,
            ln_b,
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn state_size(&self) -> usize {
        self.state
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        assert!(alpha >= 0.0);
        self.alpha = alpha;
    }

    pub fn a_log_id(&self) -> ParamId {
        self.a_log
    }

    /// Selective scan over an already-serialized `n × d` sequence.
    pub fn scan(&self, sess: &mut Session, x: Var, hop_gaps: &[u32]) -> Result<Var> {
        let n = sess.tape.value(x).rows();
        if hop_gaps.len() + 1 != n {
            return Err(TensorError::ShapeMismatch {
                op: "gssm_scan",
                left: sess.tape.shape(x).to_vec(),
                right: vec![hop_gaps.len()],
            });
        }
        let dpre = linear(sess, x, self.w_delta, self.b_delta)?;
        let delta = sess.tape.softplus(dpre);
        let (wb, wc) = (sess.param(self.w_b), sess.param(self.w_c));
        let b = sess.tape.matmul(x, wb)?;
        let c = sess.tape.matmul(x, wc)?;
        let al = sess.param(self.a_log);
        let a = sess.tape.exp(al);
        let d = sess.param(self.d_skip);
        let gamma = decay_modulation(hop_gaps, self.alpha);
        gssm_scan(&mut sess.tape, x, delta, b, c, a, d, &gamma)
    }

    /// Serialize, scan, segment-pool to `K` tokens, layer-normalize.
    pub fn project(&self, sess: &mut Session, h: Var, order: &[usize], hop_gaps: &[u32]) -> Result<ProjectedTokens> {
        let x = sess.tape.gather_rows(h, order)?;
        let y = self.scan(sess, x, hop_gaps)?;
        let segs = segments(order.len(), self.tokens);
        let pooled = sess.tape.segment_mean(y, &segs)?;
        let tokens = layernorm(sess, pooled, self.ln_g, self.ln_b)?;
        Ok(ProjectedTokens {
            tokens,
            source: TokenSource::Mamba,
        })
    }
}

/// `γ_0 = 1`, `γ_t = 1 + α·(gap_{t−1} − 1)`.
pub fn decay_modulation(hop_gaps: &[u32], alpha: f64) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(hop_gaps.iter().map(|&g| 1.0 + alpha * (g as f64 - 1.0)))
        .collect()
}

/// Contiguous `(start, len)` segments splitting `n` rows into `k` pools,
/// earlier segments taking the remainder. With `n < k` every row is its own
/// segment and the last one repeats to fill.
pub fn segments(n: usize, k: usize) -> Vec<(usize, usize)> {
    assert!(n >= 1 && k >= 1);
    if n < k {
        let mut s: Vec<(usize, usize)> = (0..n).map(|i| (i, 1)).collect();
        s.resize(k, (n - 1, 1));
        return s;
    }
    let (base, rem) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < rem);
        out.push((start, len));
        start += len;
    }
    out
}

/// Forward values of the scan and the per-step states needed for backward.
#[derive(Debug, Clone)]
pub struct ScanTrace {
    pub y: Vec<f64>,
    /// `n × d × s` states.
    pub states: Vec<f64>,
    /// `n × d × s` discretized decays.
    pub decay: Vec<f64>,
}

/// Plain-array scan. Per channel `c` with state `s_t ∈ R^state`:
/// `s_t = exp(−Δ_t,c·A_c·γ_t) ⊙ s_{t−1} + Δ_t,c·B_t·x_t,c`,
/// `y_t,c = C_t·s_t + D_c·x_t,c`.
#[allow(clippy::too_many_arguments)]
pub fn scan_values(
    x: &[f64],
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    a: &[f64],
    d_skip: &[f64],
    gamma: &[f64],
    n: usize,
    dim: usize,
    state: usize,
) -> ScanTrace {
    let mut y = vec![0.0; n * dim];
    let mut states = vec![0.0; n * dim * state];
    let mut decay = vec![0.0; n * dim * state];
    for t in 0..n {
        let bt = &b[t * state..(t + 1) * state];
        let ct = &c[t * state..(t + 1) * state];
        for ch in 0..dim {
            let xv = x[t * dim + ch];
            let dv = delta[t * dim + ch];
            let base = (t * dim + ch) * state;
            let mut acc = 0.0;
            for j in 0..state {
                let ab = (-dv * a[ch * state + j] * gamma[t]).exp();
                let prev = if t == 0 { 0.0 } else { states[base - dim * state + j] };
                let s = ab * prev + dv * bt[j] * xv;
                decay[base + j] = ab;
                states[base + j] = s;
                acc += ct[j] * s;
            }
            y[t * dim + ch] = acc + d_skip[ch] * xv;
        }
    }
    ScanTrace { y, states, decay }
}

#[derive(Debug)]
struct GssmOp {
    trace: ScanTrace,
    gamma: Vec<f64>,
    n: usize,
    dim: usize,
    state: usize,
}

impl CustomOp for GssmOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, gy: &[f64]) -> Vec<Vec<f64>> {
        let (n, dim, st) = (self.n, self.dim, self.state);
        let (x, delta, b, c, a, dsk) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
            inputs[5].data(),
        );
        let (states, decay) = (&self.trace.states, &self.trace.decay);
        let mut gx = vec![0.0; n * dim];
        let mut gdelta = vec![0.0; n * dim];
        let mut gb = vec![0.0; n * st];
        let mut gc = vec![0.0; n * st];
        let mut ga = vec![0.0; dim * st];
        let mut gd = vec![0.0; dim];
        // carry[ch, j] = dL/ds_{t+1} ⊙ decay_{t+1}, propagated backwards
        let mut carry = vec![0.0; dim * st];
        for t in (0..n).rev() {
            let g_t = self.gamma[t];
            for ch in 0..dim {
                let i = t * dim + ch;
                let (xv, dv, g) = (x[i], delta[i], gy[i]);
                gd[ch] += g * xv;
                gx[i] += g * dsk[ch];
                let base = i * st;
                for j in 0..st {
                    let s = states[base + j];
                    gc[t * st + j] += g * s;
                    let gs = g * c[t * st + j] + carry[ch * st + j];
                    let prev = if t == 0 { 0.0 } else { states[base - dim * st + j] };
                    let ab = decay[base + j];
                    let gab = gs * prev * ab;
                    gdelta[i] += gs * b[t * st + j] * xv - gab * a[ch * st + j] * g_t;
                    ga[ch * st + j] -= gab * dv * g_t;
                    gb[t * st + j] += gs * dv * xv;
                    gx[i] += gs * dv * b[t * st + j];
                    carry[ch * st + j] = gs * ab;
                }
            }
        }
        vec![gx, gdelta, gb, gc, ga, gd]
    }
}

/// Records the scan on the tape. Shapes: `x, delta: n × d`, `b, c: n × s`,
/// `a: d × s` (positive), `d_skip: d`, `gamma: n`.
#[allow(clippy::too_many_arguments)]
pub fn gssm_scan(tape: &mut Tape, x: Var, delta: Var, b: Var, c: Var, a: Var, d_skip: Var, gamma: &[f64]) -> Result<Var> {
    let tx = tape.value(x);
    let (n, dim) = (tx.rows(), tx.cols());
    let state = tape.value(a).cols();
    let check = |v: Var, rows: usize, cols: usize| {
        let t = tape.value(v);
        if t.len() != rows * cols {
            Err(TensorError::ShapeMismatch {
                op: "gssm_scan",
                left: t.shape().to_vec(),
                right: vec![rows, cols],
            })
        } else {
            Ok(())
        }
    };
    check(delta, n, dim)?;
    check(b, n, state)?;
    check(c, n, state)?;
    check(a, dim, state)?;
    check(d_skip, 1, dim)?;
    if gamma.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "gssm_scan",
            left: vec![n],
            right: vec![gamma.len()],
        });
    }
    let trace = scan_values(
        tx.data(),
        tape.value(delta).data(),
        tape.value(b).data(),
        tape.value(c).data(),
        tape.value(a).data(),
        tape.value(d_skip).data(),
        gamma,
        n,
        dim,
        state,
    );
    let out = Tensor::matrix(n, dim, trace.y.clone())?;
    let op = GssmOp {
        trace,
        gamma: gamma.to_vec(),
        n,
        dim,
        state,
    };
    Ok(tape.custom(&[x, delta, b, c, a, d_skip], out, Box::new(op)))
}
