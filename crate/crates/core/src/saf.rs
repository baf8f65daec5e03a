//! Source-aware fusion: token-wise top-2 routing over independent feed-forward experts.

use crate::encoder::linear;
use crate::tensor::{ParamId, ParamStore, Result, Session, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafMode {
    /// `y = Σ_{i ∈ I} E_i(z)`, each term carrying a unit-valued straight-through gate factor.
    Verbatim,
    /// `y = Σ_{i ∈ I} (g_i / Σ_{i' ∈ I} g_i')·E_i(z)`.
    Weighted,
}

/// Two-layer `d → d_ff → d` map with SiLU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FeedForward {
    pub fn new<R: Rng>(prefix: &str, dim: usize, hidden: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        FeedForward {
            w1: store.add_uniform(format!("{prefix}.w1"), &[dim, hidden], dim, rng),
            b1: store.add_uniform(format!("{prefix}.b1"), &[hidden], dim, rng),
            w2: store.add_uniform(format!("{prefix}.w2"), &[hidden, dim], hidden, rng),
            b2: store.add_uniform(format!("{prefix}.b2"), &[dim], hidden, rng),
        }
    }

    pub fn forward(&self, sess: &mut Session, x: Var) -> Result<Var> {
        let h = linear(sess, x, self.w1, self.b1)?;
        let h = sess.tape.silu(h);
        linear(sess, h, self.w2, self.b2)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub probs: Vec<f64>,
    pub selected: [usize; 2],
}

/// Indices of the two largest entries, ties to the lower index.
pub fn top2(scores: &[f64]) -> [usize; 2] {
    assert!(scores.len() >= 2, "top-2 routing needs at least two experts");
    let mut first = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[first] {
            first = i;
        }
    }
    let mut second = usize::from(first == 0);
    for i in 0..scores.len() {
        if i != first && scores[i] > scores[second] {
            second = i;
        }
    }
    [first, second]
}

#[derive(Debug, Clone)]
pub struct ExpertBank {
    pub gate: ParamId,
    pub experts: Vec<FeedForward>,
}

/// Fused tokens plus routing bookkeeping for one call.
#[derive(Debug, Clone)]
pub struct FuseOutput {
    pub y: Var,
    pub routing: Vec<RoutingDecision>,
    /// Tokens evaluated by each expert.
    pub expert_evals: Vec<usize>,
    pub gate_evals: usize,
}

impl ExpertBank {
    pub fn new<R: Rng>(dim: usize, hidden: usize, experts: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        assert!(experts >= 2, "SAF needs at least two experts");
        let gate = store.add_uniform("saf.gate.w", &[dim, experts], dim, rng);
        let experts = (0..experts)
            .map(|i| FeedForward::new(&format!("saf.expert{i}"), dim, hidden, store, rng))
            .collect();
        ExpertBank { gate, experts }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    /// Gate distribution and top-2 choice for a single token.
    pub fn route(&self, store: &ParamStore, z: &[f64]) -> RoutingDecision {
        let w = store.get(self.gate);
        let n = w.cols();
        let logits: Vec<f64> = (0..n)
            .map(|e| z.iter().enumerate().map(|(r, &zv)| zv * w.get(r, e)).sum())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let total: f64 = ex.iter().sum();
        let probs: Vec<f64> = ex.iter().map(|e| e / total).collect();
        let selected = top2(&probs);
        RoutingDecision { probs, selected }
    }

    pub fn fuse(&self, sess: &mut Session, z: Var, mode: SafMode) -> Result<FuseOutput> {
        let experts = &self.experts;
        fuse_with(sess, z, self.gate, experts.len(), mode, |s, i, x| experts[i].forward(s, x))
    }
}

/// Top-2 fusion with caller-supplied experts. Each expert runs once on the
/// rows routed to it; experts that receive no tokens are never evaluated.
pub fn fuse_with<F>(sess: &mut Session, z: Var, gate: ParamId, experts: usize, mode: SafMode, mut expert: F) -> Result<FuseOutput>
where
    F: FnMut(&mut Session, usize, Var) -> Result<Var>,
{
    let m = sess.tape.value(z).rows();
    if m == 0 || sess.tape.value(z).is_empty() {
        return Err(TensorError::EmptyMask);
    }
    let wg = sess.param(gate);
    let logits = sess.tape.matmul(z, wg)?;
    let probs = sess.tape.softmax_rows(logits)?;
    let pv = sess.tape.value(probs).clone();
    let routing: Vec<RoutingDecision> = (0..m)
        .map(|j| {
            let row = pv.row(j).to_vec();
            let pick = sess.choice(top2(&row).to_vec());
            RoutingDecision {
                probs: row,
                selected: [pick[0], pick[1]],
            }
        })
        .collect();

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); experts];
    for (j, r) in routing.iter().enumerate() {
        for &i in &r.selected {
            assigned[i].push(j);
        }
    }
    let mut expert_evals = vec![0; experts];
    let mut y: Option<Var> = None;
    for (i, rows) in assigned.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        expert_evals[i] = rows.len();
        let xi = sess.tape.gather_rows(z, rows)?;
        let out = expert(sess, i, xi)?;
        let flat: Vec<usize> = rows.iter().map(|&j| j * experts + i).collect();
        let g = sess.tape.gather_elems(probs, &flat)?;
        let factor = match mode {
            SafMode::Verbatim => sess.straight_through_one(g)?,
            SafMode::Weighted => {
                let pair: Vec<usize> = rows
                    .iter()
                    .map(|&j| {
                        let other = routing[j].selected.iter().copied().find(|&o| o != i).unwrap();
                        j * experts + other
                    })
                    .collect();
                let g2 = sess.tape.gather_elems(probs, &pair)?;
                let denom = sess.tape.add(g, g2)?;
                sess.tape.div(g, denom)?
            }
        };
        let scaled = sess.tape.scale_rows(out, factor)?;
        let placed = sess.tape.scatter_add_rows(scaled, rows, m)?;
        y = Some(match y {
            None => placed,
            Some(acc) => sess.tape.add(acc, placed)?,
        });
    }
    Ok(FuseOutput {
        y: y.expect("at least two experts are always selected"),
        routing,
        expert_evals,
        gate_evals: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top2_ordering_and_ties() {
        assert_eq!(top2(&[2.0, 1.0, 0.5, -1.0]), [0, 1]);
        assert_eq!(top2(&[0.25; 4]), [0, 1]);
        assert_eq!(top2(&[0.1, 0.9]), [1, 0]);
        assert_eq!(top2(&[0.1, 0.2, 0.7]), [2, 1]);
        assert_eq!(top2(&[0.4, 0.2, 0.4]), [0, 2]);
    }

    fn tokens(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Tensor {
        Tensor::matrix(m, d, (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn route_from_logits() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bank = ExpertBank::new(4, 8, 4, &mut store, &mut rng);
        // z = e_0 picks out row 0 of W_s as the logits
        let w = store.get_mut(bank.gate);
        for (e, v) in [2.0, 1.0, 0.5, -1.0].iter().enumerate() {
            w.data_mut()[e] = *v;
        }
        let r = bank.route(&store, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(r.selected, [0, 1]);
        assert!((r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn identity_fuse(mode: SafMode) -> (Tensor, Tensor) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gate = store.add_uniform("g", &[5, 3], 5, &mut rng);
        let z = tokens(&mut rng, 7, 5);
        let mut s = Session::new(&store, true);
        let zv = s.constant(z.clone());
        let out = fuse_with(&mut s, zv, gate, 3, mode, |_, _, x| Ok(x)).unwrap();
        assert_eq!(out.expert_evals.iter().sum::<usize>(), 14);
        (z, s.tape.value(out.y).clone())
    }

    #[test]
    fn identity_experts_verbatim_double() {
        let (z, y) = identity_fuse(SafMode::Verbatim);
        for (a, b) in z.data().iter().zip(y.data()) {
            assert_eq!(*b, 2.0 * a);
        }
    }

    #[test]
    fn identity_experts_weighted_reproduce_input() {
        let (z, y) = identity_fuse(SafMode::Weighted);
        for (a, b) in z.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_experts_equal_dense_sum() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bank = ExpertBank::new(6, 12, 2, &mut store, &mut rng);
        let z = tokens(&mut rng, 9, 6);
        let mut s = Session::new(&store, false);
        let zv = s.constant(z);
        let out = bank.fuse(&mut s, zv, SafMode::Verbatim).unwrap();
        let e0 = bank.experts[0].forward(&mut s, zv).unwrap();
        let e1 = bank.experts[1].forward(&mut s, zv).unwrap();
        let dense = s.tape.add(e0, e1).unwrap();
        let (a, b) = (s.tape.value(out.y), s.tape.value(dense));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
