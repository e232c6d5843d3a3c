//! Feed-forward policy network with manual backpropagation and AdamW.

use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::Action;
use crate::error::{Error, Result};
use crate::features::{FeatureMode, LAYOUT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Distribution over the three movement actions.
    Softmax3,
    /// `K` delay increments for the regression baseline.
    Linear(usize),
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Softmax3 => Action::COUNT,
            Head::Linear(k) => k,
        }
    }

    pub fn feature_mode(self) -> FeatureMode {
        match self {
            Head::Softmax3 => FeatureMode::Simulation,
            Head::Linear(_) => FeatureMode::Regression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutput {
    Actions([f64; 3]),
    Delta(Vec<f64>),
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Action(Action),
    /// Regression targets; components with `mask == false` contribute nothing.
    Delta {
        values: &'a [f64],
        mask: &'a [bool],
    },
}

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a [f64],
    pub target: Target<'a>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    layer_dims: Vec<usize>,
    head: Head,
    params: Vec<f64>,
    pub adam: AdamState,
    pub adam_config: AdamConfig,
    pub layout_version: u32,
}

impl MlpPolicy {
    /// He-normal hidden layers, `1/fan_in` variance output layer, zero biases.
    pub fn new(input: usize, hidden: &[usize], head: Head, rng: &mut impl rand::Rng) -> Self {
        let mut layer_dims = vec![input];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(head.outputs());
        let mut policy = Self::zeros(layer_dims, head);
        let n_layers = policy.n_layers();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (policy.layer_dims[l], policy.layer_dims[l + 1]);
            let std = if l + 1 < n_layers {
                (2.0 / fan_in as f64).sqrt()
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            let off = policy.weight_offset(l);
            for w in &mut policy.params[off..off + fan_in * fan_out] {
                let z: f64 = StandardNormal.sample(rng);
                *w = z * std;
            }
        }
        policy
    }

    pub fn zeros(layer_dims: Vec<usize>, head: Head) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output layers");
        assert_eq!(*layer_dims.last().unwrap(), head.outputs());
        let n: usize = layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        MlpPolicy {
            layer_dims,
            head,
            params: vec![0.0; n],
            adam: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
            adam_config: AdamConfig::default(),
            layout_version: LAYOUT_VERSION,
        }
    }

    /// Clears the Adam moments and step count, keeping the parameters.
    pub fn reset_optimizer(&mut self) {
        let n = self.params.len();
        self.adam = AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        };
    }

    /// Rebuilds a policy from stored parameters; optimizer state starts fresh.
    pub fn from_params(layer_dims: Vec<usize>, head: Head, params: Vec<f64>) -> Result<Self> {
        if layer_dims.len() < 2 || *layer_dims.last().unwrap() != head.outputs() {
            return Err(Error::Invalid(format!(
                "layer dims {layer_dims:?} do not match head {head:?}"
            )));
        }
        let mut p = Self::zeros(layer_dims, head);
        if params.len() != p.params.len() {
            return Err(Error::Dimension {
                expected: p.params.len(),
                actual: params.len(),
            });
        }
        p.params = params;
        Ok(p)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weight_offset(&self, layer: usize) -> usize {
        self.layer_dims[..layer + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.layer_dims[layer] * self.layer_dims[layer + 1]
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let off = self.weight_offset(layer);
        &self.params[off..off + self.layer_dims[layer] * self.layer_dims[layer + 1]]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let off = self.bias_offset(layer);
        &self.params[off..off + self.layer_dims[layer + 1]]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds the raw head output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layer_dims.len());
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = self.weights(l);
            let b = self.biases(l);
            let input = &acts[l];
            let hidden = l + 1 < self.n_layers();
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if hidden {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Raw head output (logits or delay increments).
    pub fn raw_output(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).pop().unwrap())
    }

    pub fn forward(&self, x: &[f64]) -> Result<PolicyOutput> {
        let out = self.raw_output(x)?;
        Ok(match self.head {
            Head::Softmax3 => PolicyOutput::Actions(softmax3(&out)),
            Head::Linear(_) => PolicyOutput::Delta(out),
        })
    }

    pub fn action_probs(&self, x: &[f64]) -> Result<[f64; 3]> {
        if self.head != Head::Softmax3 {
            return Err(Error::Invalid("policy has a regression head".into()));
        }
        Ok(softmax3(&self.raw_output(x)?))
    }

    /// Mean weighted loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty training batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for sample in batch {
            self.check_input(sample.features)?;
            let acts = self.activations(sample.features);
            let out = acts.last().unwrap();
            let (loss, mut delta) = self.head_loss(out, sample.target)?;
            total += sample.weight * loss;
            let coeff = sample.weight * scale;
            delta.iter_mut().for_each(|d| *d *= coeff);

            for l in (0..self.n_layers()).rev() {
                let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
                let input = &acts[l];
                let w_off = self.weight_offset(l);
                let b_off = self.bias_offset(l);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[b_off + o] += d;
                    let g = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (gi, xi) in g.iter_mut().zip(input) {
                        *gi += d * xi;
                    }
                }
                if l == 0 {
                    break;
                }
                let w = self.weights(l);
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // ReLU derivative on the previous hidden layer
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i}")));
        }
        Ok((loss, grad))
    }

    /// Per-sample loss and gradient with respect to the raw head output.
    fn head_loss(&self, out: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
        match (self.head, target) {
            (Head::Softmax3, Target::Action(a)) => {
                let p = softmax3(out);
                let loss = -p[a.index()].max(f64::MIN_POSITIVE).ln();
                let mut d = p.to_vec();
                d[a.index()] -= 1.0;
                Ok((loss, d))
            }
            (Head::Linear(k), Target::Delta { values, mask }) => {
                if values.len() != k || mask.len() != k {
                    return Err(Error::Dimension {
                        expected: k,
                        actual: values.len(),
                    });
                }
                let n = mask.iter().filter(|&&m| m).count();
                if n == 0 {
                    return Err(Error::Invalid("regression target is fully masked".into()));
                }
                let mut loss = 0.0;
                let mut d = vec![0.0; k];
                for i in 0..k {
                    if mask[i] {
                        let e = out[i] - values[i];
                        loss += e * e;
                        d[i] = 2.0 * e / n as f64;
                    }
                }
                Ok((loss / n as f64, d))
            }
            _ => Err(Error::Invalid("target kind does not match policy head".into())),
        }
    }

    /// One AdamW update (decoupled weight decay) with gradient `grad`.
    pub fn adam_update(&mut self, grad: &[f64], lr: f64) {
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.adam_config;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..self.params.len() {
            let g = grad[i];
            self.params[i] *= 1.0 - lr * weight_decay;
            let m = beta1 * self.adam.m[i] + (1.0 - beta1) * g;
            let v = beta2 * self.adam.v[i] + (1.0 - beta2) * g * g;
            self.adam.m[i] = m;
            self.adam.v[i] = v;
            self.params[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        }
    }

    /// Weighted gradient step; returns the mean weighted loss before the update.
    pub fn train_step(&mut self, batch: &[Sample<'_>], lr: f64) -> Result<f64> {
        if let Some(s) = batch.iter().find(|s| !(s.weight > 0.0 && s.weight <= 1.0)) {
            return Err(Error::Invalid(format!("sample weight {} outside (0, 1]", s.weight)));
        }
        let (loss, grad) = self.loss_and_gradient(batch)?;
        self.adam_update(&grad, lr);
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(loss)
    }

    /// Mean weighted loss without touching the parameters.
    pub fn loss(&self, batch: &[Sample<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let out = self.raw_output(s.features)?;
            total += s.weight * self.head_loss(&out, s.target)?.0;
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

pub fn softmax3(z: &[f64]) -> [f64; 3] {
    let max = z[0].max(z[1]).max(z[2]);
    let e = [(z[0] - max).exp(), (z[1] - max).exp(), (z[2] - max).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Inverse-CDF draw over actions in the order 0, 1, 2.
pub fn sample_action(dist: &[f64; 3], rng: &mut impl rand::Rng) -> Result<Action> {
    let sum: f64 = dist.iter().sum();
    if dist.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "action distribution {dist:?} is not normalized"
        )));
    }
    let u: f64 = rng.random();
    Ok(if u < dist[0] {
        Action::STAY
    } else if u < dist[0] + dist[1] {
        Action::ONE
    } else {
        Action::TWO
    })
}

/// Most likely action, smallest on ties.
pub fn greedy_action(dist: &[f64; 3]) -> Action {
    let mut best = 0;
    for i in 1..3 {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Raises the probability of advancing one station to at least `floor`, then renormalizes.
pub fn stall_clamp(dist: &[f64; 3], floor: f64) -> [f64; 3] {
    let p1 = dist[1].max(floor);
    let s = dist[0] + p1 + dist[2];
    [dist[0] / s, p1 / s, dist[2] / s]
}
