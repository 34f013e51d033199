//! A small differentiable network: a ReLU MLP trunk feeding an LSTM cell,
//! with linear heads for environment-action logits, contract-offer logits
//! and a state value. Parameters live in one flat vector so the optimizer
//! and gradient checks can treat them uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetworkError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub lstm: usize,
    pub n_actions: usize,
    pub n_offers: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, width: usize, n_actions: usize, n_offers: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![width, width],
            lstm: width,
            n_actions,
            n_offers,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Linear {
    fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

/// Offsets of every weight block inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    dense: Vec<Linear>,
    lstm_x: Linear,
    lstm_h: Linear,
    env_head: Linear,
    offer_head: Linear,
    value_head: Linear,
    n_params: usize,
}

/// Recurrent state carried across timesteps of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub env_logits: Vec<f64>,
    pub offer_logits: Vec<f64>,
    pub value: f64,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepCache {
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    lstm_input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Gradient of the loss with respect to one step's outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputGrad {
    pub env_logits: Option<Vec<f64>>,
    pub offer_logits: Option<Vec<f64>>,
    pub value: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x + b` for the block `lin` of `params`.
fn affine(params: &[f64], lin: &Linear, x: &[f64], out: &mut [f64]) {
    let w = &params[lin.w..lin.w + lin.rows * lin.cols];
    let b = &params[lin.b..lin.b + lin.rows];
    for r in 0..lin.rows {
        let row = &w[r * lin.cols..(r + 1) * lin.cols];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[r] += acc;
    }
}

/// Accumulates `dW += dy x^T`, `db += dy` and `dx += W^T dy`.
fn affine_backward(params: &[f64], grad: &mut [f64], lin: &Linear, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
    {
        let (gw, gb) = grad[lin.w..lin.b + lin.rows].split_at_mut(lin.rows * lin.cols);
        for r in 0..lin.rows {
            let d = dy[r];
            if d == 0.0 {
                continue;
            }
            gb[r] += d;
            let row = &mut gw[r * lin.cols..(r + 1) * lin.cols];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
    }
    if let Some(dx) = dx {
        let w = &params[lin.w..lin.w + lin.rows * lin.cols];
        for r in 0..lin.rows {
            let d = dy[r];
            if d == 0.0 {
                continue;
            }
            let row = &w[r * lin.cols..(r + 1) * lin.cols];
            for (o, wi) in dx.iter_mut().zip(row) {
                *o += d * wi;
            }
        }
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Self {
        let mut offset = 0;
        let mut linear = |rows: usize, cols: usize| {
            let lin = Linear {
                w: offset,
                b: offset + rows * cols,
                rows,
                cols,
            };
            offset += lin.len();
            lin
        };
        let mut dense = Vec::new();
        let mut width = spec.input_dim;
        for &h in &spec.hidden {
            dense.push(linear(h, width));
            width = h;
        }
        let lstm_x = linear(4 * spec.lstm, width);
        // The recurrent block has no bias of its own; store a zero-row bias.
        let lstm_h = {
            let lin = Linear {
                w: offset,
                b: offset + 4 * spec.lstm * spec.lstm,
                rows: 4 * spec.lstm,
                cols: spec.lstm,
            };
            offset += 4 * spec.lstm * spec.lstm;
            lin
        };
        let mut linear = |rows: usize, cols: usize| {
            let lin = Linear {
                w: offset,
                b: offset + rows * cols,
                rows,
                cols,
            };
            offset += lin.len();
            lin
        };
        let env_head = linear(spec.n_actions, spec.lstm);
        let offer_head = linear(spec.n_offers, spec.lstm);
        let value_head = linear(1, spec.lstm);
        Self {
            spec,
            dense,
            lstm_x,
            lstm_h,
            env_head,
            offer_head,
            value_head,
            n_params: offset,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Uniform weights in +-1/sqrt(fan_in), zero biases, forget-gate bias 1,
    /// and heads scaled down so initial policies are near uniform.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params];
        let mut fill = |lin: &Linear, scale: f64, params: &mut [f64]| {
            let bound = scale / (lin.cols as f64).sqrt();
            for w in &mut params[lin.w..lin.w + lin.rows * lin.cols] {
                *w = rng.gen_range(-bound..bound);
            }
        };
        for lin in &self.dense {
            fill(lin, 1.0, &mut params);
        }
        fill(&self.lstm_x, 1.0, &mut params);
        fill(&self.lstm_h, 1.0, &mut params);
        fill(&self.env_head, 0.1, &mut params);
        fill(&self.offer_head, 0.1, &mut params);
        fill(&self.value_head, 0.1, &mut params);
        let h = self.spec.lstm;
        for k in h..2 * h {
            params[self.lstm_x.b + k] = 1.0;
        }
        params
    }

    pub fn initial_memory(&self) -> Memory {
        Memory {
            h: vec![0.0; self.spec.lstm],
            c: vec![0.0; self.spec.lstm],
        }
    }

    pub fn check_params(&self, params: &[f64]) -> Result<(), NetworkError> {
        if params.len() != self.n_params {
            return Err(NetworkError::ParamCount {
                expected: self.n_params,
                actual: params.len(),
            });
        }
        Ok(())
    }

    /// One timestep. Returns the outputs, the cache for backpropagation,
    /// and leaves the new recurrent state in `memory`.
    pub fn step(&self, params: &[f64], memory: &mut Memory, input: &[f64]) -> Result<(Outputs, StepCache), NetworkError> {
        if input.len() != self.spec.input_dim {
            return Err(NetworkError::InputDimension {
                expected: self.spec.input_dim,
                actual: input.len(),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.dense.len());
        let mut pre_activations = Vec::with_capacity(self.dense.len());
        let mut x = input.to_vec();
        for lin in &self.dense {
            let mut a = vec![0.0; lin.rows];
            affine(params, lin, &x, &mut a);
            let next: Vec<f64> = a.iter().map(|&v| v.max(0.0)).collect();
            layer_inputs.push(std::mem::replace(&mut x, next));
            pre_activations.push(a);
        }
        let h_size = self.spec.lstm;
        let mut z = vec![0.0; 4 * h_size];
        affine(params, &self.lstm_x, &x, &mut z);
        let wh = &params[self.lstm_h.w..self.lstm_h.w + 4 * h_size * h_size];
        for (r, zr) in z.iter_mut().enumerate() {
            let row = &wh[r * h_size..(r + 1) * h_size];
            *zr += row.iter().zip(&memory.h).map(|(w, h)| w * h).sum::<f64>();
        }
        let mut gates = vec![0.0; 4 * h_size];
        let mut c = vec![0.0; h_size];
        let mut tanh_c = vec![0.0; h_size];
        let mut h = vec![0.0; h_size];
        for k in 0..h_size {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h_size + k]);
            let g = z[2 * h_size + k].tanh();
            let o = sigmoid(z[3 * h_size + k]);
            gates[k] = i;
            gates[h_size + k] = f;
            gates[2 * h_size + k] = g;
            gates[3 * h_size + k] = o;
            c[k] = f * memory.c[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        let mut env_logits = vec![0.0; self.spec.n_actions];
        affine(params, &self.env_head, &h, &mut env_logits);
        let mut offer_logits = vec![0.0; self.spec.n_offers];
        affine(params, &self.offer_head, &h, &mut offer_logits);
        let mut value = [0.0];
        affine(params, &self.value_head, &h, &mut value);

        let h_prev = std::mem::replace(&mut memory.h, h.clone());
        let c_prev = std::mem::replace(&mut memory.c, c);
        Ok((
            Outputs {
                env_logits,
                offer_logits,
                value: value[0],
            },
            StepCache {
                layer_inputs,
                pre_activations,
                lstm_input: x,
                h_prev,
                c_prev,
                gates,
                tanh_c,
                h,
            },
        ))
    }

    /// Runs a whole sequence from a fresh memory.
    pub fn unroll(&self, params: &[f64], inputs: &[Vec<f64>]) -> Result<(Vec<Outputs>, Vec<StepCache>), NetworkError> {
        let mut memory = self.initial_memory();
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for input in inputs {
            let (o, c) = self.step(params, &mut memory, input)?;
            outputs.push(o);
            caches.push(c);
        }
        Ok((outputs, caches))
    }

    /// Backpropagation through time. Adds the parameter gradient of the
    /// loss to `grad`, given the loss gradient at each step's outputs.
    pub fn backward(&self, params: &[f64], caches: &[StepCache], output_grads: &[OutputGrad], grad: &mut [f64]) {
        let h_size = self.spec.lstm;
        let mut dh_next = vec![0.0; h_size];
        let mut dc_next = vec![0.0; h_size];
        let mut dz = vec![0.0; 4 * h_size];
        let wh = self.lstm_h;
        for (cache, og) in caches.iter().zip(output_grads).rev() {
            let mut dh = std::mem::replace(&mut dh_next, vec![0.0; h_size]);
            if let Some(d) = &og.env_logits {
                affine_backward(params, grad, &self.env_head, &cache.h, d, Some(&mut dh));
            }
            if let Some(d) = &og.offer_logits {
                affine_backward(params, grad, &self.offer_head, &cache.h, d, Some(&mut dh));
            }
            if og.value != 0.0 {
                affine_backward(params, grad, &self.value_head, &cache.h, &[og.value], Some(&mut dh));
            }
            for k in 0..h_size {
                let i = cache.gates[k];
                let f = cache.gates[h_size + k];
                let g = cache.gates[2 * h_size + k];
                let o = cache.gates[3 * h_size + k];
                let tc = cache.tanh_c[k];
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[h_size + k] = dc * cache.c_prev[k] * f * (1.0 - f);
                dz[2 * h_size + k] = dc * i * (1.0 - g * g);
                dz[3 * h_size + k] = dh[k] * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            // Recurrent weights: dWh += dz h_prev^T, dh_prev = Wh^T dz.
            {
                let w = &params[wh.w..wh.w + 4 * h_size * h_size];
                let gw = &mut grad[wh.w..wh.w + 4 * h_size * h_size];
                for r in 0..4 * h_size {
                    let d = dz[r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = r * h_size..(r + 1) * h_size;
                    for ((g, wv), (hp, dn)) in gw[row.clone()]
                        .iter_mut()
                        .zip(&w[row])
                        .zip(cache.h_prev.iter().zip(dh_next.iter_mut()))
                    {
                        *g += d * hp;
                        *dn += d * wv;
                    }
                }
            }
            let mut dx = vec![0.0; cache.lstm_input.len()];
            affine_backward(params, grad, &self.lstm_x, &cache.lstm_input, &dz, Some(&mut dx));
            for (l, lin) in self.dense.iter().enumerate().rev() {
                let da: Vec<f64> = dx
                    .iter()
                    .zip(&cache.pre_activations[l])
                    .map(|(d, &a)| if a > 0.0 { *d } else { 0.0 })
                    .collect();
                if l == 0 {
                    affine_backward(params, grad, lin, &cache.layer_inputs[l], &da, None);
                } else {
                    let mut below = vec![0.0; lin.cols];
                    affine_backward(params, grad, lin, &cache.layer_inputs[l], &da, Some(&mut below));
                    dx = below;
                }
            }
        }
    }
}

/// Softmax restricted to the allowed entries; disallowed entries get
/// probability 0.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, NetworkError> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(NetworkError::MaskDimension {
                expected: logits.len(),
                actual: m.len(),
            });
        }
        if !m.iter().any(|&a| a) {
            return Err(NetworkError::EmptyMask);
        }
    }
    let allowed = |k: usize| mask.map_or(true, |m| m[k]);
    let max = (0..logits.len())
        .filter(|&k| allowed(k))
        .map(|k| logits[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = (0..logits.len())
        .map(|k| if allowed(k) { (logits[k] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

/// Trembling-hand floor on the contract distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfferFloor {
    pub forced: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub env_probs: Vec<f64>,
    pub offer_probs: Vec<f64>,
    pub value: f64,
}

/// One acting step: masked environment distribution, contract distribution
/// after any trembling-hand floor, and the value estimate. Advances `memory`.
pub fn forward(
    net: &Network,
    params: &[f64],
    memory: &mut Memory,
    observation: &[f64],
    env_mask: Option<&[bool]>,
    floor: Option<OfferFloor>,
) -> Result<Forward, NetworkError> {
    net.check_params(params)?;
    let (out, _) = net.step(params, memory, observation)?;
    let env_probs = masked_softmax(&out.env_logits, env_mask)?;
    let mut offer_probs = masked_softmax(&out.offer_logits, None)?;
    if let Some(f) = floor {
        offer_probs = crate::contracts::tremble_mixture(&offer_probs, f.forced, f.prob);
    }
    Ok(Forward {
        env_probs,
        offer_probs,
        value: out.value,
    })
}

pub const CHECKPOINT_FORMAT: &str = "alliance-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: NetworkSpec,
    /// One parameter vector per agent slot; `None` for scripted agents.
    pub agents: Vec<Option<Vec<f64>>>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, agents: Vec<Option<Vec<f64>>>, metadata: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec,
            agents,
            metadata,
        }
    }

    pub fn to_json(&self) -> Result<String, NetworkError> {
        serde_json::to_string(self).map_err(|e| NetworkError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(NetworkError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let net = Network::new(ck.spec.clone());
        for params in ck.agents.iter().flatten() {
            net.check_params(params)?;
        }
        Ok(ck)
    }
}
