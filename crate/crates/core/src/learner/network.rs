//! Dueling Q-network with hand-written backpropagation.
//!
//! A tanh trunk feeds two linear heads, a scalar state value `V(s)` and
//! per-action advantages `A(s, .)`, combined as
//! `Q(s, a) = V(s) + A(s, a) - mean_b A(s, b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs.max(1))
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Accumulates parameter gradients for output gradient `dz` at input `x`,
    /// adding the input gradient into `dx` when given.
    fn backprop(&self, x: &[f64], dz: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (i, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut grad.weights[i * self.inputs..(i + 1) * self.inputs];
            for (g, &xj) in row.iter_mut().zip(x) {
                *g += d * xj;
            }
            grad.bias[i] += d;
        }
        if let Some(dx) = dx {
            for (i, &d) in dz.iter().enumerate() {
                let row = &self.weights[i * self.inputs..(i + 1) * self.inputs];
                for (acc, &w) in dx.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub input_dim: usize,
    pub trunk: Vec<Dense>,
    pub value: Dense,
    pub advantage: Dense,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by each trunk layer's tanh output.
    activations: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

impl QNetwork {
    pub fn new(
        input_dim: usize,
        hidden_sizes: &[usize],
        num_actions: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || num_actions == 0 || hidden_sizes.contains(&0) {
            return Err(Error::contract("network dimensions must all be >= 1"));
        }
        let mut rng = substream(seed, Stream::Init, &[]);
        let mut trunk = Vec::with_capacity(hidden_sizes.len());
        let mut width = input_dim;
        for &h in hidden_sizes {
            trunk.push(Dense::uniform(width, h, &mut rng));
            width = h;
        }
        Ok(Self {
            input_dim,
            trunk,
            value: Dense::uniform(width, 1, &mut rng),
            advantage: Dense::uniform(width, num_actions, &mut rng),
        })
    }

    /// Same shapes, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            trunk: self
                .trunk
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            value: Dense::zeros(self.value.inputs, 1),
            advantage: Dense::zeros(self.advantage.inputs, self.advantage.outputs),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.advantage.outputs
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.trunk.iter().map(|l| l.outputs).collect()
    }

    pub fn same_architecture(&self, other: &QNetwork) -> bool {
        self.input_dim == other.input_dim
            && self.hidden_sizes() == other.hidden_sizes()
            && self.num_actions() == other.num_actions()
    }

    /// Layers in parameter order: trunk, value head, advantage head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain([&self.value, &self.advantage])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk
            .iter_mut()
            .chain([&mut self.value, &mut self.advantage])
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::num_params).sum()
    }

    /// All parameters, each layer's weights followed by its bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in self.layers_mut() {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// Visits every parameter together with the matching entry of `grad`.
    pub fn zip_params_mut(&mut self, grad: &QNetwork, mut f: impl FnMut(usize, &mut f64, f64)) {
        let mut k = 0;
        for (l, g) in self.layers_mut().zip(grad.layers()) {
            for (p, &d) in l
                .weights
                .iter_mut()
                .zip(&g.weights)
                .chain(l.bias.iter_mut().zip(&g.bias))
            {
                f(k, p, d);
                k += 1;
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::contract(format!(
                "network expects {} features, got {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    fn heads(&self, h: &[f64]) -> Vec<f64> {
        let v = self.value.affine(h)[0];
        let a = self.advantage.affine(h);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        a.iter().map(|ai| v + ai - mean).collect()
    }

    /// Q-values for every action.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.trunk {
            h = layer.affine(&h).into_iter().map(f64::tanh).collect();
        }
        Ok(self.heads(&h))
    }

    /// `(V(s), A(s, .))` before aggregation.
    pub fn value_and_advantages(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(x)?;
        let h = cache.activations.last().expect("input is always cached");
        Ok((self.value.affine(h)[0], self.advantage.affine(h)))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.trunk {
            let prev = activations.last().expect("non-empty");
            let next = layer.affine(prev).into_iter().map(f64::tanh).collect();
            activations.push(next);
        }
        let q = self.heads(activations.last().expect("non-empty"));
        Ok(ForwardCache { activations, q })
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose gradient
    /// with respect to the Q-values is `dq`.
    pub fn backward(&self, cache: &ForwardCache, dq: &[f64], grad: &mut QNetwork) {
        let k = dq.len() as f64;
        let dv = dq.iter().sum::<f64>();
        let da: Vec<f64> = dq.iter().map(|d| d - dv / k).collect();

        let top = cache.activations.len() - 1;
        let mut dh = vec![0.0; cache.activations[top].len()];
        let has_trunk = !self.trunk.is_empty();
        let h = &cache.activations[top];
        self.value.backprop(
            h,
            &[dv],
            &mut grad.value,
            has_trunk.then_some(dh.as_mut_slice()),
        );
        self.advantage.backprop(
            h,
            &da,
            &mut grad.advantage,
            has_trunk.then_some(dh.as_mut_slice()),
        );

        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let out = &cache.activations[l + 1];
            let dz: Vec<f64> = dh.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect();
            let mut dprev = vec![0.0; layer.inputs];
            let want_input = l > 0;
            layer.backprop(
                &cache.activations[l],
                &dz,
                &mut grad.trunk[l],
                want_input.then_some(dprev.as_mut_slice()),
            );
            dh = dprev;
        }
    }
}

fn squared_error(net: &QNetwork, x: &[f64], action: usize, target: f64) -> Result<f64> {
    let q = net.forward(x)?;
    Ok((q[action] - target).powi(2))
}

/// Largest relative error between the analytic gradient of
/// `(Q(x, action) - target)^2` and its central finite difference with step
/// `eps`, over all parameters.
pub fn gradient_check(
    net: &QNetwork,
    x: &[f64],
    action: usize,
    target: f64,
    eps: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!(
            "eps must be in [1e-7, 1e-3], got {eps}"
        )));
    }
    if action >= net.num_actions() {
        return Err(Error::contract(format!("action {action} out of range")));
    }
    let cache = net.forward_cached(x)?;
    let mut dq = vec![0.0; net.num_actions()];
    dq[action] = 2.0 * (cache.q[action] - target);
    let mut grad = net.zeros_like();
    net.backward(&cache, &dq, &mut grad);
    let analytic = grad.parameters();

    let mut probe = net.clone();
    let base = net.parameters();
    let mut params = base.clone();
    let mut worst = 0.0f64;
    for (k, &g_a) in analytic.iter().enumerate() {
        params[k] = base[k] + eps;
        probe.set_parameters(&params)?;
        let up = squared_error(&probe, x, action, target)?;
        params[k] = base[k] - eps;
        probe.set_parameters(&params)?;
        let down = squared_error(&probe, x, action, target)?;
        params[k] = base[k];

        let g_n = (up - down) / (2.0 * eps);
        let rel = (g_a - g_n).abs() / (g_a.abs() + g_n.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
