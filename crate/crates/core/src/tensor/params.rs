use super::{Tape, Tensor, Var};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) matrix of shape `fan_in × fan_out`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(self.values.iter().map(|t| vec![0.0; t.len()]).collect())
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        for g in self.0.iter_mut().flatten() {
            *g *= f;
        }
    }

    pub fn zero(&mut self) {
        for g in self.0.iter_mut().flatten() {
            *g = 0.0;
        }
    }
}

/// Detached anchors and discrete routing choices made during one forward pass.
/// Replaying a trace evaluates the straight-through surrogate of the loss, whose
/// exact derivative is the gradient the tape reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurrogateTrace {
    pub anchors: Vec<Tensor>,
    pub choices: Vec<Vec<usize>>,
}

/// One forward pass: a fresh tape plus lazy parameter binding.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    track: bool,
    trace: SurrogateTrace,
    replay: Option<(&'a SurrogateTrace, usize, usize)>,
}

impl<'a> Session<'a> {
    /// `track = false` records values only; parameters are bound as constants.
    pub fn new(store: &'a ParamStore, track: bool) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            track,
            trace: SurrogateTrace::default(),
            replay: None,
        }
    }

    /// Untracked pass that reuses the anchors and choices of `trace`.
    pub fn replaying(store: &'a ParamStore, trace: &'a SurrogateTrace) -> Self {
        let mut s = Session::new(store, false);
        s.replay = Some((trace, 0, 0));
        s
    }

    pub fn trace(&self) -> &SurrogateTrace {
        &self.trace
    }

    /// `1 + p - anchor` where the anchor is `p`'s own value (so the result is
    /// exactly 1.0), or the recorded anchor when replaying.
    pub fn straight_through_one(&mut self, p: Var) -> super::Result<Var> {
        let anchor = match &mut self.replay {
            Some((t, a, _)) => {
                let v = t.anchors[*a].clone();
                *a += 1;
                v
            }
            None => self.tape.value(p).clone(),
        };
        self.trace.anchors.push(anchor.clone());
        let c = self.tape.constant(anchor);
        let d = self.tape.sub(p, c)?;
        Ok(self.tape.add_scalar(d, 1.0))
    }

    /// A discrete routing decision: returns `computed`, or the recorded choice when replaying.
    pub fn choice(&mut self, computed: Vec<usize>) -> Vec<usize> {
        let out = match &mut self.replay {
            Some((t, _, c)) => {
                let v = t.choices[*c].clone();
                *c += 1;
                v
            }
            None => computed,
        };
        self.trace.choices.push(out.clone());
        out
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn tracking(&self) -> bool {
        self.track
    }

    /// Tape handle for a parameter, loading it on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.track {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Whether a parameter was read during this pass.
    pub fn was_bound(&self, id: ParamId) -> bool {
        self.bound[id.0].is_some()
    }

    pub fn bound_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| ParamId(i))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Adds leaf gradients of every bound parameter into `grads`, scaled by `weight`.
    pub fn accumulate_into(&self, grads: &mut Gradients, weight: f64) {
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = self.tape.grad(*v) {
                    for (dst, &src) in grads.0[i].iter_mut().zip(g) {
                        *dst += weight * src;
                    }
                }
            }
        }
    }
}
