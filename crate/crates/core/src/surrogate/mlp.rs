//! Fully connected ReLU network over binary fingerprint inputs.
//!
//! Weights are stored input-major (`w[i * outputs + o]`), so the first
//! layer can gather only the rows of set fingerprint bits.

use crate::numerics::NUM_CLASSES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One toxicity logit followed by ten efficiency logits.
pub const OUTPUTS: usize = 1 + NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, input: usize, output: usize) -> f64 {
        self.w[input * self.outputs + output]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    /// All-zero network with layer sizes `input → hidden... → 11`.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let dims = Self::dims_for(input, hidden);
        Self {
            layers: dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect(),
        }
    }

    /// He-uniform initialization from a seeded ChaCha8 stream; biases zero.
    pub fn init(input: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input, hidden);
        for layer in &mut p.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            layer.w.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        p
    }

    fn dims_for(input: usize, hidden: &[usize]) -> Vec<usize> {
        std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(OUTPUTS))
            .collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        d.extend(self.layers.last().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.layers.is_empty() {
            return Err("network has no layers".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.inputs * l.outputs || l.b.len() != l.outputs {
                return Err(format!("layer {i} buffers do not match its shape"));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.inputs != l.outputs {
                    return Err(format!("layer {i} outputs {} but layer {} takes {}", l.outputs, i + 1, next.inputs));
                }
            }
            if !l.w.iter().chain(&l.b).all(|v| v.is_finite()) {
                return Err(format!("layer {i} has non-finite entries"));
            }
        }
        if self.layers.last().map(|l| l.outputs) != Some(OUTPUTS) {
            return Err(format!("final layer must have {OUTPUTS} outputs"));
        }
        Ok(())
    }

    /// Runs the network, keeping every layer's post-activation output for
    /// backpropagation. `trace[k]` is the output of layer `k`; the last
    /// entry holds the raw logits.
    pub(crate) fn forward_trace(&self, active: &[usize]) -> Vec<Vec<f64>> {
        let mut trace: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = layer.b.clone();
            if k == 0 {
                for &i in active {
                    let row = &layer.w[i * layer.outputs..(i + 1) * layer.outputs];
                    out.iter_mut().zip(row).for_each(|(o, w)| *o += w);
                }
            } else {
                let prev = &trace[k - 1];
                for (i, &a) in prev.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let row = &layer.w[i * layer.outputs..(i + 1) * layer.outputs];
                    out.iter_mut().zip(row).for_each(|(o, w)| *o += a * w);
                }
            }
            if k + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            trace.push(out);
        }
        trace
    }

    pub(crate) fn logits(&self, active: &[usize]) -> (f64, [f64; NUM_CLASSES]) {
        let trace = self.forward_trace(active);
        split_outputs(trace.last().expect("at least one layer"))
    }
}

pub(crate) fn split_outputs(out: &[f64]) -> (f64, [f64; NUM_CLASSES]) {
    let mut eff = [0.0; NUM_CLASSES];
    eff.copy_from_slice(&out[1..OUTPUTS]);
    (out[0], eff)
}

/// Gradient buffers shaped like [`MlpParams`]. Only first-layer rows that
/// a batch touched are tracked so updates stay sparse.
pub(crate) struct Grads {
    pub layers: Vec<Dense>,
    touched: Vec<bool>,
    touched_rows: Vec<usize>,
}

impl Grads {
    pub fn like(p: &MlpParams) -> Self {
        let layers: Vec<Dense> = p.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        let n = p.input_dim();
        Self {
            layers,
            touched: vec![false; n],
            touched_rows: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        let first_out = self.layers[0].outputs;
        for &r in &self.touched_rows {
            self.layers[0].w[r * first_out..(r + 1) * first_out].fill(0.0);
            self.touched[r] = false;
        }
        self.touched_rows.clear();
        self.layers[0].b.fill(0.0);
        for l in self.layers.iter_mut().skip(1) {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
    }

    /// Accumulates the gradient of one sample given `d loss / d logits`.
    pub fn accumulate(&mut self, p: &MlpParams, active: &[usize], trace: &[Vec<f64>], dlogits: &[f64]) {
        let mut delta = dlogits.to_vec();
        for k in (0..p.layers.len()).rev() {
            let layer = &p.layers[k];
            let g = &mut self.layers[k];
            g.b.iter_mut().zip(&delta).for_each(|(gb, d)| *gb += d);
            if k == 0 {
                for &i in active {
                    if !self.touched[i] {
                        self.touched[i] = true;
                        self.touched_rows.push(i);
                    }
                    let row = &mut g.w[i * g.outputs..(i + 1) * g.outputs];
                    row.iter_mut().zip(&delta).for_each(|(gw, d)| *gw += d);
                }
                break;
            }
            let input = &trace[k - 1];
            let mut prev_delta = vec![0.0; layer.inputs];
            for (i, &a) in input.iter().enumerate() {
                // ReLU: inactive units pass no gradient
                if a <= 0.0 {
                    continue;
                }
                let base = i * layer.outputs;
                let mut acc = 0.0;
                for (o, &d) in delta.iter().enumerate() {
                    g.w[base + o] += a * d;
                    acc += layer.w[base + o] * d;
                }
                prev_delta[i] = acc;
            }
            delta = prev_delta;
        }
    }

    /// `params -= lr * grads`.
    pub fn apply(&self, p: &mut MlpParams, lr: f64) {
        let first_out = p.layers[0].outputs;
        for &r in &self.touched_rows {
            let range = r * first_out..(r + 1) * first_out;
            p.layers[0].w[range.clone()]
                .iter_mut()
                .zip(&self.layers[0].w[range])
                .for_each(|(w, g)| *w -= lr * g);
        }
        for (k, (pl, gl)) in p.layers.iter_mut().zip(&self.layers).enumerate() {
            if k > 0 {
                pl.w.iter_mut().zip(&gl.w).for_each(|(w, g)| *w -= lr * g);
            }
            pl.b.iter_mut().zip(&gl.b).for_each(|(b, g)| *b -= lr * g);
        }
    }
}
