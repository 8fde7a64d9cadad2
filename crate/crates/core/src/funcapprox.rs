//! Critics and softmax policies over finite state spaces, with analytic
//! gradients.
//!
//! States are indices `0..n_states` (a local state for decentralized
//! critics, or a global state index for full-state critics). Networks take
//! the one-hot encoding of the state as input.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Slope of the hidden-layer leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.3;

/// Parameter access shared by every approximator.
pub trait Approximator {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn checkpoint(&self) -> Checkpoint;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::arg(format!(
                "{} parameters for a model with {}",
                values.len(),
                self.n_params()
            )));
        }
        self.params_mut().copy_from_slice(values);
        Ok(())
    }
}

/// Feature matrix of a finite state space, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl FeatureMap {
    /// One-hot features.
    pub fn tabular(n_states: usize) -> Self {
        let rows = (0..n_states)
            .map(|s| (0..n_states).map(|j| f64::from(u8::from(j == s))).collect())
            .collect();
        FeatureMap { dim: n_states, rows }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("feature rows must be non-empty and of equal length"));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("feature value".into()));
        }
        Ok(FeatureMap { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn eval(&self, s: usize) -> Result<&[f64]> {
        self.rows
            .get(s)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::arg(format!("state {s} outside 0..{}", self.rows.len())))
    }

    /// Sup-norm of the features over the state space.
    pub fn bound(&self) -> f64 {
        self.rows.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCritic {
    v: Vec<f64>,
    features: FeatureMap,
}

impl LinearCritic {
    pub fn new(features: FeatureMap) -> Self {
        LinearCritic {
            v: vec![0.0; features.dim()],
            features,
        }
    }

    pub fn with_weights(features: FeatureMap, v: Vec<f64>) -> Result<Self> {
        let mut c = LinearCritic::new(features);
        c.set_params(&v)?;
        Ok(c)
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn value(&self, s: usize) -> Result<f64> {
        Ok(dot(&self.v, self.features.eval(s)?))
    }

    pub fn grad(&self, s: usize) -> Result<Vec<f64>> {
        Ok(self.features.eval(s)?.to_vec())
    }
}

impl Approximator for LinearCritic {
    fn params(&self) -> &[f64] {
        &self.v
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: "linear".into(),
            layers: vec![self.features.n_states(), self.features.dim()],
            slope: None,
            params: self.v.clone(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Fully connected network with leaky-rectifier hidden layers and a linear
/// output layer.
///
/// Parameters are stored flat, layer by layer: the weight matrix row-major
/// (`out × in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }
}

impl Mlp {
    /// Weights uniform in `[-0.5, 0.5] / sqrt(fan_in)`, biases zero.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::arg(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| (rng.random::<f64>() - 0.5) * scale));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.sizes[0] {
            return Err(Error::arg(format!(
                "input of length {} for a network with {} inputs",
                input.len(),
                self.sizes[0]
            )));
        }
        let n_layers = self.sizes.len() - 1;
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let x = &acts[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], x))
                .collect();
            let a = if l + 1 < n_layers {
                z.iter().map(|&v| leaky(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(a);
        }
        Ok(ForwardCache { acts, pre })
    }

    /// Gradient of `Σ_o d_out[o] · output[o]` with respect to the parameters.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < n_layers {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= leaky_deriv(*z);
                }
            }
            let off = offsets[l];
            let x = &cache.acts[l];
            for o in 0..fan_out {
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g = delta[o] * xi;
                }
                grad[off + fan_in * fan_out + o] = delta[o];
            }
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    for (p, wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += delta[o] * wi;
                    }
                }
                delta = prev;
            }
        }
        grad
    }

    fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut m = Mlp::new(&c.layers, 0)?;
        if c.slope.is_some_and(|s| s != LEAKY_SLOPE) {
            return Err(Error::Checkpoint(format!(
                "unsupported activation slope {:?}",
                c.slope
            )));
        }
        m.set_params(&c.params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(m)
    }
}

impl Approximator for Mlp {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: "mlp".into(),
            layers: self.sizes.clone(),
            slope: Some(LEAKY_SLOPE),
            params: self.params.clone(),
        }
    }
}

fn one_hot(s: usize, n: usize) -> Result<Vec<f64>> {
    if s >= n {
        return Err(Error::arg(format!("state {s} outside 0..{n}")));
    }
    let mut x = vec![0.0; n];
    x[s] = 1.0;
    Ok(x)
}

/// Scalar-output network on one-hot state input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCritic {
    net: Mlp,
}

impl MlpCritic {
    pub fn new(n_states: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(n_states)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Ok(MlpCritic {
            net: Mlp::new(&sizes, seed)?,
        })
    }

    pub fn n_states(&self) -> usize {
        self.net.sizes[0]
    }

    pub fn value(&self, s: usize) -> Result<f64> {
        Ok(self.net.forward(&one_hot(s, self.n_states())?)?.output()[0])
    }

    pub fn grad(&self, s: usize) -> Result<Vec<f64>> {
        let cache = self.net.forward(&one_hot(s, self.n_states())?)?;
        Ok(self.net.backward(&cache, &[1.0]))
    }
}

impl Approximator for MlpCritic {
    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn checkpoint(&self) -> Checkpoint {
        self.net.checkpoint()
    }
}

/// The critic interface used by the learner.
#[derive(Debug, Clone, PartialEq)]
pub enum Critic {
    Linear(LinearCritic),
    Mlp(MlpCritic),
}

impl Critic {
    pub fn value(&self, s: usize) -> Result<f64> {
        match self {
            Critic::Linear(c) => c.value(s),
            Critic::Mlp(c) => c.value(s),
        }
    }

    pub fn grad(&self, s: usize) -> Result<Vec<f64>> {
        match self {
            Critic::Linear(c) => c.grad(s),
            Critic::Mlp(c) => c.grad(s),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            Critic::Linear(c) => c.features().n_states(),
            Critic::Mlp(c) => c.n_states(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint, features: Option<FeatureMap>) -> Result<Self> {
        match c.kind.as_str() {
            "linear" => {
                let f = features.unwrap_or_else(|| FeatureMap::tabular(c.layers[0]));
                if c.layers != [f.n_states(), f.dim()] {
                    return Err(Error::Checkpoint("feature shape mismatch".into()));
                }
                LinearCritic::with_weights(f, c.params.clone())
                    .map(Critic::Linear)
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            }
            "mlp" if c.layers.last() == Some(&1) => Ok(Critic::Mlp(MlpCritic {
                net: Mlp::from_checkpoint(c)?,
            })),
            k => Err(Error::Checkpoint(format!("not a critic checkpoint: {k}"))),
        }
    }
}

impl Approximator for Critic {
    fn params(&self) -> &[f64] {
        match self {
            Critic::Linear(c) => c.params(),
            Critic::Mlp(c) => c.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Critic::Linear(c) => c.params_mut(),
            Critic::Mlp(c) => c.params_mut(),
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        match self {
            Critic::Linear(c) => c.checkpoint(),
            Critic::Mlp(c) => c.checkpoint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Logits {
    /// One logit per (state, action), `theta[s * n_actions + a]`.
    Tabular(Vec<f64>),
    Mlp(Mlp),
}

/// Softmax over a finite action set, logits from a table or a network on
/// one-hot state input.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Logits,
}

impl SoftmaxPolicy {
    /// All logits zero: the uniform policy.
    pub fn tabular(n_states: usize, n_actions: usize) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::arg("empty state or action set"));
        }
        Ok(SoftmaxPolicy {
            n_states,
            n_actions,
            logits: Logits::Tabular(vec![0.0; n_states * n_actions]),
        })
    }

    pub fn mlp(n_states: usize, n_actions: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(n_states)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(n_actions))
            .collect();
        Ok(SoftmaxPolicy {
            n_states,
            n_actions,
            logits: Logits::Mlp(Mlp::new(&sizes, seed)?),
        })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        match c.kind.as_str() {
            "tabular_policy" if c.layers.len() == 2 => {
                let mut p = SoftmaxPolicy::tabular(c.layers[0], c.layers[1])
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                p.set_params(&c.params)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                Ok(p)
            }
            "mlp" => {
                let net = Mlp::from_checkpoint(c)?;
                Ok(SoftmaxPolicy {
                    n_states: net.sizes[0],
                    n_actions: *net.sizes.last().expect("two layers"),
                    logits: Logits::Mlp(net),
                })
            }
            k => Err(Error::Checkpoint(format!("not a policy checkpoint: {k}"))),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::arg(format!("state {s} outside 0..{}", self.n_states)));
        }
        Ok(())
    }

    pub fn logits(&self, s: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        match &self.logits {
            Logits::Tabular(t) => Ok(t[s * self.n_actions..(s + 1) * self.n_actions].to_vec()),
            Logits::Mlp(net) => Ok(net.forward(&one_hot(s, self.n_states)?)?.output().to_vec()),
        }
    }

    pub fn probs(&self, s: usize) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(s)?))
    }

    /// `∇_θ log π(a | s)`.
    pub fn score(&self, s: usize, a: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if a >= self.n_actions {
            return Err(Error::arg(format!("action {a} outside 0..{}", self.n_actions)));
        }
        match &self.logits {
            Logits::Tabular(t) => {
                let p = softmax(&t[s * self.n_actions..(s + 1) * self.n_actions]);
                let mut g = vec![0.0; t.len()];
                for (b, pb) in p.iter().enumerate() {
                    g[s * self.n_actions + b] = f64::from(u8::from(a == b)) - pb;
                }
                Ok(g)
            }
            Logits::Mlp(net) => {
                let cache = net.forward(&one_hot(s, self.n_states)?)?;
                let p = softmax(cache.output());
                let d: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(b, pb)| f64::from(u8::from(a == b)) - pb)
                    .collect();
                Ok(net.backward(&cache, &d))
            }
        }
    }

    /// Inverse-CDF draw over actions in ascending order; one uniform per call.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<usize> {
        let p = self.probs(s)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return Ok(a);
            }
        }
        Ok(self.n_actions - 1)
    }
}

impl Approximator for SoftmaxPolicy {
    fn params(&self) -> &[f64] {
        match &self.logits {
            Logits::Tabular(t) => t,
            Logits::Mlp(n) => n.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.logits {
            Logits::Tabular(t) => t,
            Logits::Mlp(n) => n.params_mut(),
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        match &self.logits {
            Logits::Tabular(t) => Checkpoint {
                kind: "tabular_policy".into(),
                layers: vec![self.n_states, self.n_actions],
                slope: None,
                params: t.clone(),
            },
            Logits::Mlp(n) => n.checkpoint(),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Flat parameter dump with a small header.
///
/// ```text
/// dactd-params 1
/// kind mlp
/// layers 2 10 10 2
/// slope 0.3
/// count 162
/// <one value per line>
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub layers: Vec<usize>,
    pub slope: Option<f64>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::from("dactd-params 1\n");
        let _ = writeln!(out, "kind {}", self.kind);
        let layers: Vec<String> = self.layers.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "layers {}", layers.join(" "));
        if let Some(s) = self.slope {
            let _ = writeln!(out, "slope {s:?}");
        }
        let _ = writeln!(out, "count {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("dactd-params 1") {
            return Err(bad("missing header"));
        }
        let mut kind = None;
        let mut layers = None;
        let mut slope = None;
        let mut count = None;
        for line in lines.by_ref() {
            let (key, rest) = line.split_once(' ').ok_or_else(|| bad(line))?;
            match key {
                "kind" => kind = Some(rest.to_string()),
                "layers" => {
                    layers = Some(
                        rest.split_whitespace()
                            .map(str::parse)
                            .collect::<Result<Vec<usize>, _>>()
                            .map_err(|_| bad("layer sizes"))?,
                    )
                }
                "slope" => slope = Some(rest.parse().map_err(|_| bad("slope"))?),
                "count" => {
                    count = Some(rest.parse::<usize>().map_err(|_| bad("count"))?);
                    break;
                }
                _ => return Err(bad(&format!("unknown header field {key}"))),
            }
        }
        let count = count.ok_or_else(|| bad("missing count"))?;
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad("parameter value")))
            .collect::<Result<Vec<_>>>()?;
        if params.len() != count {
            return Err(bad(&format!("expected {count} values, found {}", params.len())));
        }
        Ok(Checkpoint {
            kind: kind.ok_or_else(|| bad("missing kind"))?,
            layers: layers.ok_or_else(|| bad("missing layers"))?,
            slope,
            params,
        })
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h;
            let up = f(&y);
            y[j] = x[j] - h;
            let down = f(&y);
            y[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, 1e-6)` over the coordinates.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_critic_value_and_gradient() {
        let f = FeatureMap::from_rows(vec![vec![0.5, 0.5]]).unwrap();
        let c = LinearCritic::with_weights(f.clone(), vec![1.0, 2.0]).unwrap();
        assert_eq!(c.value(0).unwrap(), 1.5);
        assert_eq!(c.grad(0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(LinearCritic::new(f).value(0).unwrap(), 0.0);
        assert_eq!(FeatureMap::tabular(3).bound(), 1.0);
    }

    #[test]
    fn mlp_critic_matches_finite_differences() {
        let c = MlpCritic::new(2, &[5, 5], 7).unwrap();
        for s in 0..2 {
            let g = c.grad(s).unwrap();
            let fd = central_difference(c.params(), 1e-5, |p| {
                let mut d = c.clone();
                d.set_params(p).unwrap();
                d.value(s).unwrap()
            });
            assert!(max_relative_error(&g, &fd) <= 1e-4);
        }
    }

    #[test]
    fn score_identity_and_saturation() {
        let p = SoftmaxPolicy::tabular(2, 2).unwrap();
        let probs = p.probs(0).unwrap();
        let mut acc = vec![0.0; p.n_params()];
        for a in 0..2 {
            for (x, g) in acc.iter_mut().zip(p.score(0, a).unwrap()) {
                *x += probs[a] * g;
            }
        }
        assert!(acc.iter().all(|x| x.abs() < 1e-15));

        let mut q = SoftmaxPolicy::tabular(1, 2).unwrap();
        q.set_params(&[0.0, 40.0]).unwrap();
        assert!(q.score(0, 1).unwrap().iter().all(|x| x.abs() < 1e-15));
        assert!(matches!(q.score(0, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn mlp_score_matches_finite_differences() {
        let p = SoftmaxPolicy::mlp(2, 2, &[10, 10], 3).unwrap();
        for (s, a) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let g = p.score(s, a).unwrap();
            let fd = central_difference(p.params(), 1e-5, |x| {
                let mut q = p.clone();
                q.set_params(x).unwrap();
                q.probs(s).unwrap()[a].ln()
            });
            assert!(max_relative_error(&g, &fd) <= 1e-4);
        }
    }

    #[test]
    fn sampling_frequencies() {
        let p = SoftmaxPolicy::tabular(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let ones = (0..n).filter(|_| p.sample_action(0, &mut rng).unwrap() == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);

        let mut q = SoftmaxPolicy::tabular(1, 2).unwrap();
        q.set_params(&[0.0, 20.0]).unwrap();
        let ones = (0..n).filter(|_| q.sample_action(0, &mut rng).unwrap() == 1).count();
        assert!(ones as f64 / n as f64 > 0.999);

        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| p.sample_action(0, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = SoftmaxPolicy::mlp(2, 2, &[10, 10], 5).unwrap();
        let text = p.checkpoint().to_text();
        let q = SoftmaxPolicy::from_checkpoint(&Checkpoint::from_text(&text).unwrap()).unwrap();
        assert_eq!(p, q);
        let c = Critic::Linear(LinearCritic::with_weights(FeatureMap::tabular(2), vec![0.1, -3.0]).unwrap());
        let d = Critic::from_checkpoint(&Checkpoint::from_text(&c.checkpoint().to_text()).unwrap(), None)
            .unwrap();
        assert_eq!(c, d);
        assert!(Checkpoint::from_text("garbage").is_err());
    }
}
