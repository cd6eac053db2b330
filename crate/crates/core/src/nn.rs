//! Dense feed-forward networks with exact reverse-mode gradients, plus the
//! two first-order optimizers used throughout the crate.
//!
//! All parameters of a [`Network`] live in one flat `Vec<f64>` (per layer:
//! row-major weights, then biases) so optimizers, checkpoints, and
//! finite-difference tests all address the same storage. Gradients are
//! computed by [`Network::backward`] from a forward trace; the loss-specific
//! derivative with respect to the network output is supplied by the caller,
//! which keeps this module independent of any particular objective.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's own output value;
    /// for tanh this is `1 - y^2`, which avoids re-evaluating the input.
    fn slope_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Multi-layer perceptron over `f64` with a shared hidden activation and a
/// separate output activation.
#[derive(Debug, Clone)]
pub struct Network {
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Layer outputs recorded during a forward pass; `stages[0]` is the input,
/// `stages[i]` the post-activation output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    stages: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.stages.last().expect("trace has at least the input stage")
    }

    pub fn stages(&self) -> &[Vec<f64>] {
        &self.stages
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Network {
    /// Zero-initialized network. `dims` lists layer widths including input
    /// and output, so `[3, 64, 64, 1]` is a two-hidden-layer net.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract(format!(
                "network needs at least input and output dims, got {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!("zero-width layer in {dims:?}")));
        }
        Ok(Network {
            dims: dims.to_vec(),
            hidden,
            output,
            params: vec![0.0; param_count(dims)],
        })
    }

    /// Seeded uniform init with limit `sqrt(6 / (fan_in + fan_out))` per
    /// layer; biases start at zero.
    pub fn xavier(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in net.dims.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out; // biases stay zero
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} params, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    fn activation_for_layer(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut offset = 0;
        for layer in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            let act = self.activation_for_layer(layer);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = biases[o];
                for i in 0..n_in {
                    z += row[i] * cur[i];
                }
                next[o] = act.apply(z);
            }
            cur = next;
            offset += n_in * n_out + n_out;
        }
        Ok(cur)
    }

    /// Forward pass that records every stage for a later [`backward`] call.
    ///
    /// [`backward`]: Network::backward
    pub fn traced_forward(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut stages = Vec::with_capacity(self.dims.len());
        stages.push(input.to_vec());
        let mut offset = 0;
        for layer in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            let act = self.activation_for_layer(layer);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let cur = &stages[layer];
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = biases[o];
                for i in 0..n_in {
                    z += row[i] * cur[i];
                }
                next[o] = act.apply(z);
            }
            stages.push(next);
            offset += n_in * n_out + n_out;
        }
        Ok(Trace { stages })
    }

    /// Accumulates `d loss / d params` into `param_grads` given the loss
    /// derivative with respect to the network output, and returns the loss
    /// derivative with respect to the input. Gradients are exact (reverse
    /// mode through every layer), not approximated.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64], param_grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(trace.stages.len(), self.layer_count() + 1, "trace does not match network depth");
        assert_eq!(output_grad.len(), self.output_dim(), "output grad has wrong dimension");
        assert_eq!(param_grads.len(), self.params.len(), "grad buffer has wrong length");

        let mut delta = output_grad.to_vec();
        let mut offset = self.params.len();
        for layer in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            offset -= n_in * n_out + n_out;
            let act = self.activation_for_layer(layer);
            let inputs = &trace.stages[layer];
            let outputs = &trace.stages[layer + 1];
            let weights = &self.params[offset..offset + n_in * n_out];
            let (w_grads, b_grads) =
                param_grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut prev_delta = vec![0.0; n_in];
            for o in 0..n_out {
                let dz = delta[o] * act.slope_at_output(outputs[o]);
                b_grads[o] += dz;
                let row = &weights[o * n_in..(o + 1) * n_in];
                let g_row = &mut w_grads[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    g_row[i] += dz * inputs[i];
                    prev_delta[i] += dz * row[i];
                }
            }
            delta = prev_delta;
        }
        delta
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Text checkpoint: header lines, then all parameters. Values print in
    /// Rust's shortest round-trip form, so load reproduces them bit for bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub(crate) fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("mlp v1\n");
        out.push_str("dims");
        for d in &self.dims {
            let _ = write!(out, " {d}");
        }
        let _ = write!(out, "\nhidden {}\noutput {}\nparams {}\n", self.hidden.tag(), self.output.tag(), self.params.len());
        for chunk in self.params.chunks(8) {
            let mut first = true;
            for v in chunk {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub(crate) fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| Error::parse("empty network checkpoint"))?;
        if magic.trim() != "mlp v1" {
            return Err(Error::parse(format!("bad network header `{magic}`")));
        }
        let dims_line = lines.next().ok_or_else(|| Error::parse("missing dims line"))?;
        let mut dims_it = dims_line.split_whitespace();
        if dims_it.next() != Some("dims") {
            return Err(Error::parse("missing dims line"));
        }
        let dims: Vec<usize> = dims_it
            .map(|t| t.parse().map_err(|_| Error::parse(format!("bad dim `{t}`"))))
            .collect::<Result<_>>()?;
        let hidden = parse_tagged_line(lines.next(), "hidden").and_then(Activation::from_tag)?;
        let output = parse_tagged_line(lines.next(), "output").and_then(Activation::from_tag)?;
        let n: usize = parse_tagged_line(lines.next(), "params")?
            .parse()
            .map_err(|_| Error::parse("bad params count"))?;
        let mut net = Network::zeros(&dims, hidden, output)?;
        if n != net.params.len() {
            return Err(Error::parse(format!(
                "checkpoint declares {n} params but dims {dims:?} imply {}",
                net.params.len()
            )));
        }
        let mut count = 0;
        for tok in lines.flat_map(|l| l.split_whitespace()) {
            if count == n {
                return Err(Error::parse("trailing data after parameters"));
            }
            net.params[count] = tok
                .parse()
                .map_err(|_| Error::parse(format!("bad parameter `{tok}`")))?;
            count += 1;
        }
        if count != n {
            return Err(Error::parse(format!("expected {n} parameters, found {count}")));
        }
        Ok(net)
    }
}

fn parse_tagged_line<'a>(line: Option<&'a str>, tag: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| Error::parse(format!("missing {tag} line")))?;
    line.strip_prefix(tag)
        .map(str::trim)
        .ok_or_else(|| Error::parse(format!("missing {tag} line")))
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMS_PROP_DECAY: f64 = 0.99;
const RMS_PROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Adam,
    RmsProp,
}

/// Elementwise first-order optimizer over a flat parameter vector. The
/// moment buffers are sized once at construction and never change length.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimKind,
    lr: f64,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn adam(lr: f64, n_params: usize) -> Self {
        Optimizer { kind: OptimKind::Adam, lr, step_count: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn rms_prop(lr: f64, n_params: usize) -> Self {
        Optimizer { kind: OptimKind::RmsProp, lr, step_count: 0, m: Vec::new(), v: vec![0.0; n_params] }
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One descent step in place. Rejects mismatched lengths and non-finite
    /// gradients without touching parameters or moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.v.len() || grads.len() != self.v.len() {
            return Err(Error::contract(format!(
                "optimizer sized for {} params, got {} params / {} grads",
                self.v.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient {bad}")));
        }
        self.step_count += 1;
        match self.kind {
            OptimKind::Adam => {
                let t = self.step_count as i32;
                let bias1 = 1.0 - ADAM_BETA1.powi(t);
                let bias2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / bias1;
                    let v_hat = self.v[i] / bias2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            OptimKind::RmsProp => {
                for i in 0..params.len() {
                    let g = grads[i];
                    self.v[i] = RMS_PROP_DECAY * self.v[i] + (1.0 - RMS_PROP_DECAY) * g * g;
                    params[i] -= self.lr * g / (self.v[i].sqrt() + RMS_PROP_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Frozen per-dimension affine transform `(x - mean) / std`, used to pin a
/// snapshot of running observation statistics inside a scoring model. The
/// identity transform has mean 0 and std 1 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        InputNorm { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::contract(format!(
                "norm mean has {} dims, std has {}",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || std.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::contract("norm requires finite means and positive stds"));
        }
        Ok(InputNorm { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::contract(format!(
                "norm sized for {} dims, input has {}",
                self.mean.len(),
                x.len()
            )));
        }
        Ok(x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect())
    }

    pub(crate) fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("mean");
        for v in &self.mean {
            let _ = write!(out, " {v}");
        }
        out.push_str("\nstd");
        for v in &self.std {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
        out
    }

    pub(crate) fn from_lines<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        let parse_vec = |line: Option<&str>, tag: &str| -> Result<Vec<f64>> {
            parse_tagged_line(line, tag)?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::parse(format!("bad {tag} value `{t}`"))))
                .collect()
        };
        let mean = parse_vec(lines.next(), "mean")?;
        let std = parse_vec(lines.next(), "std")?;
        InputNorm::new(mean, std)
    }
}
