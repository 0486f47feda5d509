//! Small fully-connected network with hand-rolled backpropagation.
//!
//! The network maps the scaled 6-vector observation to the four head outputs
//! (m, sigma, V, l): Gaussian policy mean and width, state value, and the
//! curvature of the quadratic action-value head. Weights live in one flat
//! vector so gradient bookkeeping, clipping and checkpointing stay trivial.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Floor on the policy standard deviation, in raw-action units.
pub const SIGMA_MIN: f64 = 0.01;

/// Bias on the raw sigma output so the initial policy width is about 0.5.
fn sigma_raw_init() -> f64 {
    // softplus(b) + SIGMA_MIN = 0.5
    (0.49f64.exp() - 1.0).ln()
}

/// Output-layer weights are shrunk at init so the initial policy mean stays
/// near zero and sigma near its bias value.
const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_input() -> usize {
    6
}
fn default_output() -> usize {
    4
}
fn default_sigma_min() -> f64 {
    SIGMA_MIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    #[serde(default = "default_input")]
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_output")]
    pub output_dim: usize,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            input_dim: default_input(),
            hidden: default_hidden(),
            output_dim: default_output(),
            sigma_min: default_sigma_min(),
            adam: AdamConfig::default(),
        }
    }
}

impl MlpSpec {
    /// (fan_in, fan_out) of each dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output_dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// The four policy/value head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    /// Policy mean (raw-action space).
    pub m: f64,
    /// Policy standard deviation, always > 0.
    pub sigma: f64,
    /// State-value estimate.
    pub v: f64,
    /// Action-value curvature coefficient, always >= 0.
    pub l: f64,
}

impl PolicyOutput {
    /// Gaussian log-density of a raw action under the policy.
    pub fn log_pdf(&self, a: f64) -> f64 {
        let z = (a - self.m) / self.sigma;
        -0.5 * (2.0 * std::f64::consts::PI).ln() - self.sigma.ln() - 0.5 * z * z
    }

    /// Sample a raw action.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.m + self.sigma * z
    }

    /// Quadratic action-value head: Q = V - l^2/2 [(a-m)^2 - sigma^2],
    /// constructed so that E_{a~pi}[Q] = V.
    pub fn q_value(&self, a: f64) -> f64 {
        let d = a - self.m;
        self.v - 0.5 * self.l * self.l * (d * d - self.sigma * self.sigma)
    }

    /// d log pi / d(m, sigma).
    pub fn log_pdf_head_grad(&self, a: f64) -> (f64, f64) {
        let d = a - self.m;
        let s2 = self.sigma * self.sigma;
        (d / s2, (d * d - s2) / (s2 * self.sigma))
    }

    /// dQ / d(m, sigma, V, l).
    pub fn q_head_grad(&self, a: f64) -> [f64; 4] {
        let d = a - self.m;
        let l = self.l;
        [
            l * l * d,
            l * l * self.sigma,
            1.0,
            -l * (d * d - self.sigma * self.sigma),
        ]
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cached activations from a forward pass: the input, each post-tanh hidden
/// activation, and the raw (pre-head-mapping) outputs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
    raw_out: Vec<f64>,
}

impl ForwardCache {
    pub fn raw_output(&self) -> &[f64] {
        &self.raw_out
    }
}

/// Dense network with all parameters in one flat vector, laid out per layer
/// as the row-major weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    params: Vec<f64>,
}

impl Mlp {
    /// Xavier-uniform initialization; biases zero except the raw-sigma bias,
    /// which is set so the initial policy width is about 0.5.
    pub fn init<R: Rng>(spec: MlpSpec, rng: &mut R) -> Self {
        let dims = spec.layer_dims();
        let n_layers = dims.len();
        let mut params = Vec::with_capacity(spec.num_params());
        for (li, (fan_in, fan_out)) in dims.iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if li + 1 == n_layers {
                OUTPUT_INIT_SCALE
            } else {
                1.0
            };
            for _ in 0..fan_in * fan_out {
                params.push(scale * rng.gen_range(-limit..limit));
            }
            for o in 0..*fan_out {
                let bias = if li + 1 == n_layers && o == 1 {
                    sigma_raw_init()
                } else {
                    0.0
                };
                params.push(bias);
            }
        }
        Self { spec, params }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn map_heads(&self, raw: &[f64]) -> PolicyOutput {
        PolicyOutput {
            m: raw[0],
            sigma: softplus(raw[1]) + self.spec.sigma_min,
            v: raw[2],
            l: softplus(raw[3]),
        }
    }

    /// Forward pass, returning the head outputs and cached activations.
    pub fn forward(&self, obs: &[f64]) -> Result<(PolicyOutput, ForwardCache)> {
        if obs.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "forward",
                expected: self.spec.input_dim,
                got: obs.len(),
            });
        }
        let dims = self.spec.layer_dims();
        let n_layers = dims.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        acts.push(obs.to_vec());
        let mut offset = 0;
        let mut raw_out = Vec::new();
        for (li, (fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = acts.last().unwrap();
            let mut out = Vec::with_capacity(*fan_out);
            for o in 0..*fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    s += wi * xi;
                }
                out.push(s);
            }
            if li + 1 == n_layers {
                raw_out = out;
            } else {
                for z in out.iter_mut() {
                    *z = z.tanh();
                }
                acts.push(out);
            }
        }
        let heads = self.map_heads(&raw_out);
        Ok((heads, ForwardCache { acts, raw_out }))
    }

    /// Policy output only (no cache), for rollouts and evaluation.
    pub fn policy(&self, obs: &[f64]) -> Result<PolicyOutput> {
        Ok(self.forward(obs)?.0)
    }

    /// Backpropagate a gradient given on the mapped heads (m, sigma, V, l)
    /// into `grad` (accumulated, same layout as the flat parameter vector).
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        head_grad: [f64; 4],
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "backward",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        // Chain through the softplus head mappings.
        let mut delta = vec![
            head_grad[0],
            head_grad[1] * sigmoid(cache.raw_out[1]),
            head_grad[2],
            head_grad[3] * sigmoid(cache.raw_out[3]),
        ];
        let dims = self.spec.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for (fan_in, fan_out) in &dims {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
        for li in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[li];
            let offset = offsets[li];
            let input = &cache.acts[li];
            let w = &self.params[offset..offset + fan_in * fan_out];
            {
                let gw = &mut grad[offset..offset + fan_in * fan_out + fan_out];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for (g, xi) in row.iter_mut().zip(input.iter()) {
                            *g += d * xi;
                        }
                    }
                    gw[fan_in * fan_out + o] += d;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &w[o * fan_in..(o + 1) * fan_in];
                        for (p, wi) in prev.iter_mut().zip(row.iter()) {
                            *p += d * wi;
                        }
                    }
                }
                // tanh'(z) = 1 - a^2 with a the stored post-activation.
                for (p, a) in prev.iter_mut().zip(input.iter()) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, head_grad: [f64; 4]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, head_grad, &mut grad)?;
        Ok(grad)
    }
}

/// Adaptive-moment optimizer state, one slot per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step on `net` along `grad`. A non-finite gradient skips
    /// the update (the caller logs it); moment bookkeeping still advances.
    pub fn step(&mut self, net: &mut Mlp, grad: &[f64], cfg: &AdamConfig) -> bool {
        if grad.iter().any(|g| !g.is_finite()) {
            self.t += 1;
            return false;
        }
        self.t += 1;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = cfg.learning_rate;
        for i in 0..grad.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            net.params_mut()[i] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
        }
        true
    }
}

/// Serialized checkpoint: spec, per-layer row-major weights and biases,
/// optimizer moments, and a format version. Round-trips bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: MlpSpec,
    pub layers: Vec<CheckpointLayer>,
    pub adam: Option<Adam>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_net(net: &Mlp, adam: Option<&Adam>) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in net.spec.layer_dims() {
            let weights = net.params[offset..offset + fan_in * fan_out].to_vec();
            let bias = net.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out]
                .to_vec();
            layers.push(CheckpointLayer { weights, bias });
            offset += fan_in * fan_out + fan_out;
        }
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: net.spec.clone(),
            layers,
            adam: adam.cloned(),
        }
    }

    pub fn into_net(self) -> Result<(Mlp, Option<Adam>)> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let dims = self.spec.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} layers, found {}",
                dims.len(),
                self.layers.len()
            )));
        }
        let mut params = Vec::with_capacity(self.spec.num_params());
        for ((fan_in, fan_out), layer) in dims.iter().zip(&self.layers) {
            if layer.weights.len() != fan_in * fan_out || layer.bias.len() != *fan_out {
                return Err(Error::Checkpoint("layer shape mismatch".into()));
            }
            params.extend_from_slice(&layer.weights);
            params.extend_from_slice(&layer.bias);
        }
        let net = Mlp {
            spec: self.spec,
            params,
        };
        if let Some(adam) = &self.adam {
            if adam.m.len() != net.params.len() || adam.v.len() != net.params.len() {
                return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
            }
        }
        Ok((net, self.adam))
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let data = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&data)?)
    }
}
