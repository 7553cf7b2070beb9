//! Minimal trainable dense networks with hand-rolled reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>` per network (weights row-major,
//! then biases, layer by layer), which is what the optimizer, the Polyak
//! target updates, and the checkpoint format all operate on. A forward pass
//! can record a [`Trace`]; [`DenseNet::backward`] then produces exact
//! gradients of the recorded computation plus the gradient with respect to
//! the input vector, which the actor update needs for the reparameterization
//! path through the critics.
//!
//! Also here: the Adam update rule, numerically-stable softmax utilities,
//! the categorical and squashed-Gaussian stochastic heads, and a central
//! finite-difference gradient checker.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Elu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at pre-activation `x` with post-activation value `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0 // e^x
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Elu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Elu),
            2 => Ok(Activation::Tanh),
            t => Err(Error::MalformedCheckpoint(format!(
                "unknown activation tag {t}"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// DenseNet
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    in_width: usize,
    out_width: usize,
    act: Activation,
    weight_off: usize,
    bias_off: usize,
}

/// A fully-connected network with a flat parameter vector.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Recorded forward pass: the input of every layer plus pre-activations.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` is the input to layer `l`; `inputs[L]` is the output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("trace always has an output")
    }
}

impl DenseNet {
    /// Build a zero-initialized net. `widths` lists layer widths from input
    /// to output (so `widths.len() - 1` layers); `acts` gives one activation
    /// per layer.
    pub fn new(widths: &[usize], acts: &[Activation]) -> Result<Self> {
        if widths.len() < 2 || acts.len() != widths.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "need n+1 widths for n activations, got {} widths and {} activations",
                widths.len(),
                acts.len()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::ShapeMismatch("zero-width layer".into()));
        }
        let mut layers = Vec::with_capacity(acts.len());
        let mut off = 0usize;
        for (i, &act) in acts.iter().enumerate() {
            let (inw, outw) = (widths[i], widths[i + 1]);
            layers.push(LayerSpec {
                in_width: inw,
                out_width: outw,
                act,
                weight_off: off,
                bias_off: off + inw * outw,
            });
            off += inw * outw + outw;
        }
        Ok(Self {
            layers,
            params: vec![0.0; off],
        })
    }

    /// Random initialization: weights `N(0, 1/in_width)`, zero biases.
    pub fn random(widths: &[usize], acts: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::new(widths, acts)?;
        for layer in &net.layers {
            let scale = 1.0 / (layer.in_width as f64).sqrt();
            for w in 0..layer.in_width * layer.out_width {
                net.params[layer.weight_off + w] = rng.sample::<f64, _>(StandardNormal) * scale;
            }
        }
        Ok(net)
    }

    /// Rebuild a net from layer descriptors and a flat parameter vector.
    pub fn from_parts(dims: &[(usize, usize, Activation)], params: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::ShapeMismatch("network with no layers".into()));
        }
        let mut widths = vec![dims[0].0];
        let mut acts = Vec::with_capacity(dims.len());
        for (i, &(inw, outw, act)) in dims.iter().enumerate() {
            if inw != widths[i] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} input width {inw} does not chain from previous output {}",
                    widths[i]
                )));
            }
            widths.push(outw);
            acts.push(act);
        }
        let mut net = Self::new(&widths, &acts)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.in_width, l.out_width, l.act))
            .collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().out_width
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            next.clear();
            next.reserve(layer.out_width);
            for o in 0..layer.out_width {
                let row = layer.weight_off + o * layer.in_width;
                let mut acc = self.params[layer.bias_off + o];
                for (i, &x) in cur.iter().enumerate() {
                    acc += self.params[row + i] * x;
                }
                next.push(layer.act.apply(acc));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that records everything `backward` needs.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(input.to_vec());
        for layer in &self.layers {
            let cur = inputs.last().unwrap();
            let mut z = Vec::with_capacity(layer.out_width);
            for o in 0..layer.out_width {
                let row = layer.weight_off + o * layer.in_width;
                let mut acc = self.params[layer.bias_off + o];
                for (i, &x) in cur.iter().enumerate() {
                    acc += self.params[row + i] * x;
                }
                z.push(acc);
            }
            let post: Vec<f64> = z.iter().map(|&v| layer.act.apply(v)).collect();
            pre.push(z);
            inputs.push(post);
        }
        Ok(Trace { inputs, pre })
    }

    /// Reverse-mode pass over a recorded forward. Accumulates parameter
    /// gradients into `grad_buf` (same layout as `params`) and returns the
    /// gradient with respect to the network input.
    pub fn backward(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        grad_buf: &mut [f64],
    ) -> Result<Vec<f64>> {
        if out_grad.len() != self.output_width() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient width {} vs output width {}",
                out_grad.len(),
                self.output_width()
            )));
        }
        if grad_buf.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer length {} vs parameter count {}",
                grad_buf.len(),
                self.params.len()
            )));
        }
        if trace.inputs.len() != self.layers.len() + 1 {
            return Err(Error::ShapeMismatch(
                "trace does not match this network's depth".into(),
            ));
        }
        let mut delta = out_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[l];
            let z = &trace.pre[l];
            let post = &trace.inputs[l + 1];
            // Through the activation.
            for o in 0..layer.out_width {
                delta[o] *= layer.act.derivative(z[o], post[o]);
            }
            // Parameter gradients.
            for o in 0..layer.out_width {
                let row = layer.weight_off + o * layer.in_width;
                let d = delta[o];
                grad_buf[layer.bias_off + o] += d;
                for (i, &x) in input.iter().enumerate() {
                    grad_buf[row + i] += d * x;
                }
            }
            // Input gradient for the next (earlier) layer.
            let mut prev = vec![0.0; layer.in_width];
            for o in 0..layer.out_width {
                let row = layer.weight_off + o * layer.in_width;
                let d = delta[o];
                for (i, p) in prev.iter_mut().enumerate() {
                    *p += d * self.params[row + i];
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} vs expected {}",
                input.len(),
                self.input_width()
            )));
        }
        Ok(())
    }
}

/// `target <- (1 - coeff) * target + coeff * source`.
pub fn polyak_update(target: &mut [f64], source: &[f64], coeff: f64) {
    debug_assert_eq!(target.len(), source.len());
    for (t, &s) in target.iter_mut().zip(source) {
        *t += coeff * (s - *t);
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, param_count: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer sized for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged("non-finite gradient in Adam step".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Softmax / categorical head
// ---------------------------------------------------------------------------

/// Numerically-stable softmax (max logit subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-softmax via log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Shannon entropy of a probability vector (natural log).
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

#[derive(Debug, Clone)]
pub struct CategoricalSample {
    pub index: usize,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub entropy: f64,
}

/// Sample a categorical distribution parameterized by logits.
pub fn categorical_from_logits(logits: &[f64], rng: &mut impl Rng) -> Result<CategoricalSample> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("categorical with zero arms".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    let probs = softmax(logits);
    let log_probs = log_softmax(logits);
    let h = entropy(&probs);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut index = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            index = i;
            break;
        }
    }
    Ok(CategoricalSample {
        index,
        probs,
        log_probs,
        entropy: h,
    })
}

// ---------------------------------------------------------------------------
// Squashed-Gaussian head
// ---------------------------------------------------------------------------

/// `ln(1 - tanh(u)^2)` without catastrophic cancellation.
pub fn tanh_log_jacobian(u: f64) -> f64 {
    // 1 - tanh^2(u) = 4 e^{-2u} / (1 + e^{-2u})^2
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SquashedSample {
    /// Transmit power in `(0, p_max]` Watts.
    pub power: f64,
    /// Log-density of `power`, including the tanh change of variables and
    /// the affine rescaling onto `(0, p_max)`.
    pub log_density: f64,
    /// The Gaussian variate before squashing.
    pub pre_squash: f64,
}

/// Draw `u ~ N(mu, sigma^2)` and squash onto `(0, p_max)` via
/// `p = p_max * (tanh(u) + 1) / 2`.
pub fn squashed_gaussian_sample(
    mu: f64,
    log_sigma: f64,
    p_max: f64,
    rng: &mut impl Rng,
) -> SquashedSample {
    let eps: f64 = rng.sample(StandardNormal);
    squashed_gaussian_with_noise(mu, log_sigma, p_max, eps)
}

/// Deterministic core of [`squashed_gaussian_sample`] for a fixed noise
/// draw; the reparameterization path used by the actor update.
pub fn squashed_gaussian_with_noise(
    mu: f64,
    log_sigma: f64,
    p_max: f64,
    eps: f64,
) -> SquashedSample {
    let sigma = log_sigma.exp();
    let u = mu + sigma * eps;
    // tanh saturates to exactly -1.0 in f64 beyond |u| ~ 19; nudge inward
    // so the power stays strictly positive.
    let v = u.tanh().clamp(-1.0 + 1e-12, 1.0);
    let power = p_max * (v + 1.0) / 2.0;
    // log N(u; mu, sigma) = -eps^2/2 - log sigma - log sqrt(2 pi)
    let log_normal = -0.5 * eps * eps - log_sigma - 0.5 * (2.0 * std::f64::consts::PI).ln();
    // dp/du = (p_max / 2) (1 - v^2)
    let log_density = log_normal - tanh_log_jacobian(u) - (p_max / 2.0).ln();
    SquashedSample {
        power,
        log_density,
        pre_squash: u,
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central-difference gradient of `loss` at `params`.
pub fn central_difference(loss: impl Fn(&[f64]) -> f64, params: &[f64], step: f64) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let hi = loss(&work);
        work[i] = orig - step;
        let lo = loss(&work);
        work[i] = orig;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// Compare an analytic gradient against central differences; returns the
/// worst per-component relative error (`|a - n| / max(|a|, |n|, 1e-5)`).
pub fn grad_check(
    loss: impl Fn(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    let numeric = central_difference(loss, params, step);
    max_relative_error(analytic, &numeric)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

// ===========================================================================
// Tests
// ===========================================================================
