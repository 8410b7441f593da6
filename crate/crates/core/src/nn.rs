//! A small fully connected network with ReLU hidden layers, softmax
//! cross-entropy over per-action atom distributions, and Adam.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

const CHECKPOINT_MAGIC: &str = "ridesim-mlp v1";

/// Dense layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations saved by a forward pass for backpropagation. `inputs[l]` is
/// the input to layer `l` (post-ReLU for hidden layers).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(invalid(format!("layer dims {dims:?} need at least two positive entries")));
    }
    Ok(())
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self { layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() })
    }

    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for layer in &mut net.layers {
            let sd = (2.0 / layer.inputs as f64).sqrt();
            let normal = Normal::new(0.0, sd).map_err(|e| invalid(e.to_string()))?;
            for w in &mut layer.weights {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(invalid(format!("layer {i} has inconsistent parameter shapes")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::Dimension { expected: layers[i - 1].outputs, actual: l.inputs });
            }
        }
        let net = Self { layers };
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(net)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), actual: input.len() });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&x, &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut x, out));
        }
        Ok(ForwardCache { inputs, output: x })
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the network output is `d_output`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grads: &mut Gradients) -> Result<()> {
        if d_output.len() != self.output_dim() {
            return Err(Error::Dimension { expected: self.output_dim(), actual: d_output.len() });
        }
        let mut delta = d_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[l];
            let g = &mut grads.layers[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(gw, xv)| *gw += d * xv);
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            // ReLU derivative: the cached input is the post-activation value.
            prev.iter_mut().zip(x).for_each(|(p, a)| {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            });
            delta = prev;
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        let dims: Vec<String> = self.dims().iter().map(usize::to_string).collect();
        writeln!(out, "dims {}", dims.join(" "))?;
        for layer in &self.layers {
            for row in layer.weights.chunks_exact(layer.inputs) {
                write_reals(&mut out, row)?;
            }
            write_reals(&mut out, &layer.biases)?;
        }
        Ok(())
    }

    /// Reads a network written by [`write_checkpoint`](Self::write_checkpoint)
    /// from a line iterator, leaving any following lines unread.
    pub fn read_checkpoint_lines<I>(lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = std::io::Result<String>>,
    {
        let mut next = || -> Result<String> {
            match lines.next() {
                Some(line) => Ok(line?),
                None => Err(Error::Format { line: 0, msg: "unexpected end of checkpoint".into() }),
            }
        };
        let magic = next()?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(Error::Format { line: 0, msg: format!("expected `{CHECKPOINT_MAGIC}`, found `{magic}`") });
        }
        let dims_line = next()?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| Error::Format { line: 0, msg: "missing dims line".into() })?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Format { line: 0, msg: format!("bad dim `{t}`") }))
            .collect::<Result<_>>()?;
        let mut net = Self::zeros(&dims)?;
        for layer in &mut net.layers {
            for o in 0..layer.outputs {
                let row = read_reals(&next()?, layer.inputs)?;
                layer.weights[o * layer.inputs..(o + 1) * layer.inputs].copy_from_slice(&row);
            }
            layer.biases = read_reals(&next()?, layer.outputs)?;
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(net)
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().filter(|l| !matches!(l, Ok(s) if s.starts_with('#')));
        Self::read_checkpoint_lines(&mut lines)
    }
}

fn write_reals<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    let text: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
    writeln!(out, "{}", text.join(" "))?;
    Ok(())
}

fn read_reals(line: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format { line: 0, msg: format!("bad number `{t}`") }))
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Dimension { expected, actual: values.len() });
    }
    Ok(values)
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self { layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(&mut l.biases).for_each(|v| *v *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub(crate) fn check_distribution(p: &[f64], what: &'static str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(invalid(format!("{what} has negative or non-finite mass")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Cross-entropy between `target` and the softmax of the logits belonging to
/// `action`, together with the derivative with respect to all logits.
pub fn cross_entropy_grad(logits: &[f64], target: &[f64], action: usize) -> Result<(f64, Vec<f64>)> {
    let atoms = target.len();
    check_distribution(target, "target distribution")?;
    if atoms == 0 || !logits.len().is_multiple_of(atoms) || action >= logits.len() / atoms {
        return Err(invalid(format!(
            "action {action} with {atoms} atoms does not fit {} logits",
            logits.len()
        )));
    }
    let slice = &logits[action * atoms..(action + 1) * atoms];
    let log_p = log_softmax(slice);
    let loss = -target.iter().zip(&log_p).map(|(t, lp)| t * lp).sum::<f64>();
    let mut d = vec![0.0; logits.len()];
    for (i, lp) in log_p.iter().enumerate() {
        d[action * atoms + i] = lp.exp() - target[i];
    }
    Ok((loss, d))
}

/// Loss `−Σ target_i log softmax(logits[action])_i` and its gradient.
pub fn loss_and_grad(net: &Mlp, input: &[f64], target: &[f64], action: usize) -> Result<(f64, Gradients)> {
    let cache = net.forward_cached(input)?;
    let (loss, d) = cross_entropy_grad(&cache.output, target, action)?;
    let mut grads = Gradients::zeros_like(net);
    net.backward(&cache, &d, &mut grads)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self { config, step: 0, m: Gradients::zeros_like(net), v: Gradients::zeros_like(net) }
    }
}

/// One bias-corrected Adam update. Parameters are untouched when any
/// gradient is non-finite.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers.len()
        || grads.layers.iter().zip(&net.layers).any(|(g, l)| g.weights.len() != l.weights.len())
    {
        return Err(invalid("gradient shapes do not match the network"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        let params = layer.weights.iter_mut().chain(&mut layer.biases);
        let gs = g.weights.iter().chain(&g.biases);
        let ms = m.weights.iter_mut().chain(&mut m.biases);
        let vs = v.weights.iter_mut().chain(&mut v.biases);
        for (((p, g), m), v) in params.zip(gs).zip(ms).zip(vs) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}
