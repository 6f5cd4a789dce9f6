//! Mean-field Bayesian MLP trained with Bayes-by-Backprop.
//!
//! Every weight and bias `w_j` has a Gaussian posterior
//! `N(mu_j, softplus(rho_j)^2)` and a unit Gaussian prior. Training minimizes
//! the variational free energy
//!
//! ```text
//! L = -E_q[ln p(D | w)] + KL(q || p)
//! ```
//!
//! with the expectation estimated by reparameterized samples
//! `w = mu + softplus(rho) * eps`. The likelihood is Gaussian with one learned
//! homoscedastic log-noise parameter. Predictions average `M` forward passes
//! with independently sampled weights.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DMatrixView};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::RegressionSet;
use crate::error::{LfdError, Result};
use crate::policy::PredictiveOutput;
use crate::record::{self, RecordReader};

pub const INIT_MU_STD: f64 = 0.1;
pub const INIT_SIGMA: f64 = 0.05;
pub const INIT_NOISE: f64 = 0.1;

const RECORD_MAGIC: &str = "lfd-bnn-posterior";
const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = LfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" | "rectifier" => Ok(Activation::Relu),
            other => Err(LfdError::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Position of one dense layer inside the flat parameter vector. Weights are
/// stored column-major as a `fan_in x fan_out` matrix, followed by the bias.
#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden,
            output_dim,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Two hidden layers of 64 tanh units.
    pub fn default_for(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            output_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(LfdError::invalid("input and output dims must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(LfdError::invalid("need at least one non-empty hidden layer"));
        }
        Ok(())
    }

    fn slots(&self) -> Vec<LayerSlot> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        let mut offset = 0;
        dims.windows(2)
            .map(|p| {
                let slot = LayerSlot {
                    fan_in: p[0],
                    fan_out: p[1],
                    weights: offset,
                    bias: offset + p[0] * p[1],
                };
                offset += p[0] * p[1] + p[1];
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|s| s.fan_in * s.fan_out + s.fan_out).sum()
    }

    fn describe(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "{} {} {} {}",
            self.input_dim,
            hidden.join(","),
            self.output_dim,
            self.activation.as_str()
        )
    }

    fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_ascii_whitespace().collect();
        let bad = || LfdError::Parse(format!("bad architecture `{s}`"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let hidden = parts[1]
            .split(',')
            .map(|h| h.parse().map_err(|_| bad()))
            .collect::<Result<Vec<usize>>>()?;
        Self::new(
            parts[0].parse().map_err(|_| bad())?,
            hidden,
            parts[2].parse().map_err(|_| bad())?,
            parts[3].parse()?,
        )
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Factorized Gaussian posterior `q(w)` over all network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub arch: Architecture,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    /// Log standard deviation of the Gaussian observation noise.
    pub log_noise: f64,
    pub seed: u64,
}

/// Posterior at initialization: `mu ~ N(0, 0.1^2)`, every `sigma = 0.05`,
/// observation noise `0.1`.
pub fn init_posterior(arch: &Architecture, seed: u64) -> Result<VariationalPosterior> {
    arch.validate()?;
    let n = arch.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = (0..n)
        .map(|_| INIT_MU_STD * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let rho = vec![softplus_inv(INIT_SIGMA); n];
    Ok(VariationalPosterior {
        arch: arch.clone(),
        mu,
        rho,
        log_noise: INIT_NOISE.ln(),
        seed,
    })
}

impl VariationalPosterior {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> impl Iterator<Item = f64> + '_ {
        self.rho.iter().map(|&r| softplus(r))
    }

    pub fn noise_std(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn write_record<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{RECORD_MAGIC} v{RECORD_VERSION}")?;
        record::write_line(&mut w, "arch", self.arch.describe())?;
        record::write_line(&mut w, "seed", self.seed)?;
        record::write_line(&mut w, "log_noise", self.log_noise)?;
        record::write_floats(&mut w, "mu", &self.mu)?;
        record::write_floats(&mut w, "rho", &self.rho)?;
        Ok(())
    }

    pub fn read_record<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = RecordReader::new(r);
        rd.expect_header(RECORD_MAGIC, RECORD_VERSION)?;
        let arch = Architecture::parse(&rd.field("arch")?)?;
        let seed = rd.parse("seed")?;
        let log_noise = rd.parse("log_noise")?;
        let mu = rd.floats("mu")?;
        let rho = rd.floats("rho")?;
        let n = arch.param_count();
        if mu.len() != n || rho.len() != n {
            return Err(LfdError::Parse(format!(
                "architecture needs {n} parameters, record has {} / {}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(Self {
            arch,
            mu,
            rho,
            log_noise,
            seed,
        })
    }
}

/// One concrete draw of every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub values: Vec<f64>,
}

/// `w = mu + softplus(rho) * eps` for a given noise vector.
pub fn sample_with_noise(post: &VariationalPosterior, eps: &[f64]) -> WeightSample {
    let values = post
        .mu
        .iter()
        .zip(&post.rho)
        .zip(eps)
        .map(|((m, r), e)| m + softplus(*r) * e)
        .collect();
    WeightSample { values }
}

pub fn draw_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn sample_weights<R: Rng + ?Sized>(post: &VariationalPosterior, rng: &mut R) -> WeightSample {
    let eps = draw_noise(post.len(), rng);
    sample_with_noise(post, &eps)
}

/// Closed-form `KL(q || N(0, I))` summed over parameters.
pub fn kl_to_prior(post: &VariationalPosterior) -> f64 {
    post.mu
        .iter()
        .zip(&post.rho)
        .map(|(&m, &r)| {
            let s = softplus(r);
            -s.ln() + 0.5 * (s * s + m * m) - 0.5
        })
        .sum()
}

/// Forward pass of a batch through fixed weights. Returns the network output
/// and the input to every layer (needed for backprop).
fn forward_batch(arch: &Architecture, w: &[f64], x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let slots = arch.slots();
    let last = slots.len() - 1;
    let mut inputs = Vec::with_capacity(slots.len());
    let mut a = x.clone();
    for (l, s) in slots.iter().enumerate() {
        let wm = DMatrixView::from_slice(&w[s.weights..s.bias], s.fan_in, s.fan_out);
        let bias = &w[s.bias..s.bias + s.fan_out];
        let mut z = &a * wm;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let b = bias[j];
            if l == last {
                col.iter_mut().for_each(|v| *v += b);
            } else {
                col.iter_mut().for_each(|v| *v = arch.activation.apply(*v + b));
            }
        }
        inputs.push(a);
        a = z;
    }
    (a, inputs)
}

/// Backpropagate `d_out = dL/d(output)` and accumulate `dL/dw` into `grad`.
fn backward_batch(
    arch: &Architecture,
    w: &[f64],
    inputs: &[DMatrix<f64>],
    d_out: DMatrix<f64>,
    grad: &mut [f64],
) {
    let slots = arch.slots();
    let mut delta = d_out;
    for (l, s) in slots.iter().enumerate().rev() {
        let a = &inputs[l];
        let gw = a.tr_mul(&delta);
        for (g, v) in grad[s.weights..s.bias].iter_mut().zip(gw.as_slice()) {
            *g += v;
        }
        for (j, col) in delta.column_iter().enumerate() {
            grad[s.bias + j] += col.sum();
        }
        if l > 0 {
            let wm = DMatrixView::from_slice(&w[s.weights..s.bias], s.fan_in, s.fan_out);
            let mut da = &delta * wm.transpose();
            da.zip_apply(a, |d, out| *d *= arch.activation.grad_from_output(out));
            delta = da;
        }
    }
}

/// Single-input forward pass with plain loops; `scratch` holds two buffers.
fn forward_one(arch: &Architecture, w: &[f64], x: &[f64], scratch: &mut [Vec<f64>; 2]) -> Vec<f64> {
    let slots = arch.slots();
    let last = slots.len() - 1;
    let [cur, next] = scratch;
    cur.clear();
    cur.extend_from_slice(x);
    for (l, s) in slots.iter().enumerate() {
        next.clear();
        for j in 0..s.fan_out {
            let col = &w[s.weights + j * s.fan_in..s.weights + (j + 1) * s.fan_in];
            let mut z = w[s.bias + j];
            for (xi, wi) in cur.iter().zip(col) {
                z += xi * wi;
            }
            next.push(if l == last { z } else { arch.activation.apply(z) });
        }
        std::mem::swap(cur, next);
    }
    cur.clone()
}

/// Gradient of the loss with respect to every variational parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub log_noise: f64,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Minibatch free energy for explicit noise draws, with its exact gradient.
///
/// `eps` holds one standard-normal vector per Monte Carlo sample. The
/// likelihood term is summed over the batch and the KL term is multiplied by
/// `kl_scale`.
pub fn elbo_with_noise(
    post: &VariationalPosterior,
    batch: &RegressionSet,
    eps: &[Vec<f64>],
    kl_scale: f64,
) -> Result<(f64, Gradient)> {
    let arch = &post.arch;
    if batch.is_empty() {
        return Err(LfdError::invalid("empty batch"));
    }
    if batch.input_dim() != arch.input_dim || batch.output_dim() != arch.output_dim {
        return Err(LfdError::invalid(format!(
            "batch dims {}x{} do not match architecture {}x{}",
            batch.input_dim(),
            batch.output_dim(),
            arch.input_dim,
            arch.output_dim
        )));
    }
    if eps.is_empty() {
        return Err(LfdError::invalid("need at least one Monte Carlo sample"));
    }
    let n = post.len();
    let m = eps.len() as f64;
    let noise_var = (2.0 * post.log_noise).exp();
    let sigma: Vec<f64> = post.rho.iter().map(|r| softplus(*r)).collect();
    let mut values = vec![0.0; n];
    let count = (batch.len() * arch.output_dim) as f64;

    let mut nll = 0.0;
    let mut d_log_noise = 0.0;
    let mut g_mu = vec![0.0; n];
    let mut g_rho = vec![0.0; n];
    let mut gw = vec![0.0; n];
    for e in eps {
        for (((v, mu), s), e) in values.iter_mut().zip(&post.mu).zip(&sigma).zip(e) {
            *v = mu + s * e;
        }
        let (out, inputs) = forward_batch(arch, &values, &batch.inputs);
        let resid = out - &batch.targets;
        let sq: f64 = resid.iter().map(|r| r * r).sum();
        nll += count * (HALF_LN_2PI + post.log_noise) + 0.5 * sq / noise_var;
        d_log_noise += count - sq / noise_var;

        gw.iter_mut().for_each(|g| *g = 0.0);
        backward_batch(arch, &values, &inputs, resid / noise_var, &mut gw);
        for j in 0..n {
            g_mu[j] += gw[j];
            g_rho[j] += gw[j] * e[j];
        }
    }

    let kl: f64 = post
        .mu
        .iter()
        .zip(&sigma)
        .map(|(mu, s)| -s.ln() + 0.5 * (s * s + mu * mu) - 0.5)
        .sum();
    let mut loss = nll / m + kl_scale * kl;
    for j in 0..n {
        let s = sigma[j];
        let ds = sigmoid(post.rho[j]);
        g_mu[j] = g_mu[j] / m + kl_scale * post.mu[j];
        g_rho[j] = (g_rho[j] / m) * ds + kl_scale * (s - 1.0 / s) * ds;
    }
    if !loss.is_finite() {
        loss = f64::NAN;
    }
    Ok((
        loss,
        Gradient {
            mu: g_mu,
            rho: g_rho,
            log_noise: d_log_noise / m,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlScaleMode {
    /// KL multiplied by `batch_len / dataset_len`, so one epoch sums to the
    /// full KL once.
    PerBatchFraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_mc_samples: usize,
    pub predict_mc_samples: usize,
    pub kl_scale_mode: KlScaleMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            train_mc_samples: 2,
            predict_mc_samples: 50,
            kl_scale_mode: KlScaleMode::PerBatchFraction,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.train_mc_samples == 0 || self.predict_mc_samples == 0 {
            return Err(LfdError::invalid("training counts must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LfdError::invalid("learning rate must be > 0"));
        }
        Ok(())
    }

    fn kl_scale(&self, batch_len: usize, dataset_len: usize) -> f64 {
        match self.kl_scale_mode {
            KlScaleMode::PerBatchFraction => batch_len as f64 / dataset_len as f64,
        }
    }
}

/// Monte Carlo estimate of the minibatch loss with `cfg.train_mc_samples`
/// fresh noise draws.
pub fn elbo_loss<R: Rng + ?Sized>(
    post: &VariationalPosterior,
    batch: &RegressionSet,
    dataset_len: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let eps: Vec<Vec<f64>> = (0..cfg.train_mc_samples)
        .map(|_| draw_noise(post.len(), rng))
        .collect();
    let (loss, _) = elbo_with_noise(post, batch, &eps, cfg.kl_scale(batch.len(), dataset_len))?;
    if !loss.is_finite() {
        return Err(LfdError::TrainingDiverged {
            epoch: 0,
            last_finite: Box::new(post.clone()),
        });
    }
    Ok(loss)
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step<'a>(&mut self, params: impl Iterator<Item = (&'a mut f64, f64)>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub posterior: VariationalPosterior,
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch Adam on the free energy, starting from `post`.
pub fn train(post: &VariationalPosterior, data: &RegressionSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(LfdError::invalid("empty training set"));
    }
    let mut post = post.clone();
    let n = post.len();
    let mut adam = Adam::new(cfg.learning_rate, 2 * n + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let snapshot = post.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let eps: Vec<Vec<f64>> = (0..cfg.train_mc_samples)
                .map(|_| draw_noise(n, &mut rng))
                .collect();
            let kl_scale = cfg.kl_scale(chunk.len(), data.len());
            let (loss, grad) = elbo_with_noise(&post, &batch, &eps, kl_scale)?;
            let grad_ok = grad.log_noise.is_finite()
                && grad.mu.iter().chain(&grad.rho).all(|g| g.is_finite());
            if !loss.is_finite() || !grad_ok {
                return Err(LfdError::TrainingDiverged {
                    epoch,
                    last_finite: Box::new(snapshot),
                });
            }
            total += loss / chunk.len() as f64;
            batches += 1;
            let grads = grad.mu.iter().chain(&grad.rho).chain(std::iter::once(&grad.log_noise));
            let params = post
                .mu
                .iter_mut()
                .chain(post.rho.iter_mut())
                .chain(std::iter::once(&mut post.log_noise));
            adam.step(params.zip(grads.copied()));
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(TrainOutcome {
        posterior: post,
        epoch_losses,
    })
}

/// Empirical mean and population standard deviation over sampled outputs.
pub fn summarize(outputs: &[Vec<f64>]) -> PredictiveOutput {
    let m = outputs.len() as f64;
    let dim = outputs[0].len();
    // shift by the first sample so identical samples give an exact mean
    let base = &outputs[0];
    let mut shift = vec![0.0; dim];
    for o in outputs {
        for ((acc, v), b) in shift.iter_mut().zip(o).zip(base) {
            *acc += v - b;
        }
    }
    let mean: Vec<f64> = shift.iter().zip(base).map(|(s, b)| b + s / m).collect();
    let mut var = vec![0.0; dim];
    for o in outputs {
        for ((acc, v), mu) in var.iter_mut().zip(o).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let std = var.iter().map(|v| (v / m).sqrt()).collect();
    PredictiveOutput::new(mean, std)
}

/// Monte Carlo predictive distribution at `x` from `samples` fresh weight
/// draws.
pub fn predict<R: Rng + ?Sized>(
    post: &VariationalPosterior,
    x: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<PredictiveOutput> {
    WeightBank::draw(post, samples, rng)?.predict(x)
}

/// A fixed set of `M` weight draws. Reusing one bank for every step of an
/// episode keeps per-step prediction cost to `M` forward passes.
#[derive(Debug, Clone)]
pub struct WeightBank {
    arch: Architecture,
    samples: Vec<Vec<f64>>,
}

impl WeightBank {
    pub fn draw<R: Rng + ?Sized>(post: &VariationalPosterior, samples: usize, rng: &mut R) -> Result<Self> {
        if samples < 2 {
            return Err(LfdError::invalid("need at least 2 Monte Carlo samples"));
        }
        let samples = (0..samples).map(|_| sample_weights(post, rng).values).collect();
        Ok(Self {
            arch: post.arch.clone(),
            samples,
        })
    }

    /// A bank whose every sample equals the posterior mean.
    pub fn mean_only(post: &VariationalPosterior, samples: usize) -> Self {
        Self {
            arch: post.arch.clone(),
            samples: vec![post.mu.clone(); samples.max(2)],
        }
    }

    pub fn from_samples(arch: Architecture, samples: Vec<WeightSample>) -> Self {
        Self {
            arch,
            samples: samples.into_iter().map(|s| s.values).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn outputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.arch.input_dim {
            return Err(LfdError::invalid(format!(
                "input has dim {}, network expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        let mut scratch = [Vec::new(), Vec::new()];
        Ok(self
            .samples
            .iter()
            .map(|w| forward_one(&self.arch, w, x, &mut scratch))
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictiveOutput> {
        Ok(summarize(&self.outputs(x)?))
    }

    /// Predictions for every row of `xs`, batched per weight sample.
    pub fn predict_rows(&self, xs: &DMatrix<f64>) -> Result<Vec<PredictiveOutput>> {
        if xs.ncols() != self.arch.input_dim {
            return Err(LfdError::invalid("input dim mismatch"));
        }
        let outs: Vec<DMatrix<f64>> = self
            .samples
            .iter()
            .map(|w| forward_batch(&self.arch, w, xs).0)
            .collect();
        Ok((0..xs.nrows())
            .map(|i| {
                let per_sample: Vec<Vec<f64>> = outs
                    .iter()
                    .map(|o| o.row(i).iter().copied().collect())
                    .collect();
                summarize(&per_sample)
            })
            .collect())
    }
}

/// Deterministic forward pass through the posterior means.
pub fn mean_forward(post: &VariationalPosterior, x: &[f64]) -> Vec<f64> {
    let mut scratch = [Vec::new(), Vec::new()];
    forward_one(&post.arch, &post.mu, x, &mut scratch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_arch() -> Architecture {
        Architecture::new(3, vec![5, 4], 2, Activation::Tanh).unwrap()
    }

    fn toy_set(n: usize, seed: u64) -> RegressionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, 2, |i, j| (x[(i, 0)] * (j + 1) as f64).sin() + 0.3 * x[(i, 2)]);
        RegressionSet::new(x, y).unwrap()
    }

    #[test]
    fn parameter_count() {
        let arch = Architecture::new(6, vec![64, 64], 1, Activation::Tanh).unwrap();
        assert_eq!(arch.param_count(), 6 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
        assert_eq!(arch.param_count(), 4673);
        let post = init_posterior(&arch, 0).unwrap();
        assert_eq!(post.mu.len(), 4673);
        assert_eq!(post.rho.len(), 4673);
    }

    #[test]
    fn init_constants_and_determinism() {
        let arch = Architecture::default_for(6, 1);
        let a = init_posterior(&arch, 0).unwrap();
        let b = init_posterior(&arch, 0).unwrap();
        assert_eq!(a, b);
        for s in a.sigma() {
            assert!((s - 0.05).abs() < 1e-15);
        }
        assert!((a.noise_std() - 0.1).abs() < 1e-15);
        let mean = a.mu.iter().sum::<f64>() / a.len() as f64;
        let std = (a.mu.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        assert!((std - 0.1).abs() < 0.005, "mu std {std}");
        assert_ne!(a.mu, init_posterior(&arch, 1).unwrap().mu);
    }

    #[test]
    fn invalid_architectures() {
        assert!(Architecture::new(0, vec![4], 1, Activation::Tanh).is_err());
        assert!(Architecture::new(2, vec![], 1, Activation::Tanh).is_err());
        assert!(Architecture::new(2, vec![4, 0], 1, Activation::Relu).is_err());
    }

    #[test]
    fn softplus_extremes_positive() {
        for r in [-50.0, -30.0, -1.0, 0.0, 1.0, 30.0, 50.0] {
            assert!(softplus(r) > 0.0, "softplus({r})");
        }
        for y in [1e-6, 0.05, 0.5, 1.0, 5.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn reparameterization_identities() {
        let arch = small_arch();
        let mut post = init_posterior(&arch, 2).unwrap();
        let n = post.len();
        assert_eq!(sample_with_noise(&post, &vec![0.0; n]).values, post.mu);
        post.mu.iter_mut().for_each(|m| *m = 0.0);
        let w = sample_with_noise(&post, &vec![1.0; n]);
        assert!(w.values.iter().all(|v| (v - 0.05).abs() < 1e-15));
    }

    #[test]
    fn sampler_spread_matches_sigma() {
        let arch = Architecture::new(1, vec![1], 1, Activation::Tanh).unwrap();
        let mut post = init_posterior(&arch, 0).unwrap();
        post.mu[0] = 0.3;
        post.rho[0] = softplus_inv(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..100_000).map(|_| sample_weights(&post, &mut rng).values[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
        assert!((std - 0.5).abs() < 0.01, "empirical std {std}");
    }

    fn single_weight(mu: f64, sigma: f64) -> VariationalPosterior {
        let arch = Architecture::new(1, vec![1], 1, Activation::Tanh).unwrap();
        VariationalPosterior {
            mu: vec![mu],
            rho: vec![softplus_inv(sigma)],
            log_noise: 0.0,
            seed: 0,
            arch,
        }
    }

    #[test]
    fn kl_closed_form_values() {
        let arch = small_arch();
        let mut post = init_posterior(&arch, 0).unwrap();
        post.mu.iter_mut().for_each(|m| *m = 0.0);
        post.rho.iter_mut().for_each(|r| *r = softplus_inv(1.0));
        assert!(kl_to_prior(&post).abs() < 1e-12);

        assert!((kl_to_prior(&single_weight(1.0, 1.0)) - 0.5).abs() < 1e-12);
        // ln(1/2) + 4/2 - 1/2
        let expected = 0.5f64.ln() + 1.5;
        assert!((kl_to_prior(&single_weight(0.0, 2.0)) - expected).abs() < 1e-12);
        assert!((expected - 0.80685).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_at_prior(
            mus in prop::collection::vec(-3.0f64..3.0, 1..12),
            rhos in prop::collection::vec(-5.0f64..5.0, 12),
        ) {
            let arch = Architecture::new(1, vec![1], 1, Activation::Tanh).unwrap();
            let n = mus.len();
            let post = VariationalPosterior {
                mu: mus.clone(),
                rho: rhos[..n].to_vec(),
                log_noise: 0.0,
                seed: 0,
                arch,
            };
            let kl = kl_to_prior(&post);
            prop_assert!(kl >= 0.0);
            let at_prior = mus.iter().all(|m| m.abs() < 1e-9)
                && post.sigma().all(|s| (s - 1.0).abs() < 1e-9);
            if !at_prior {
                // strictly positive away from the prior
                let gap: f64 = post.mu.iter().zip(post.sigma())
                    .map(|(m, s)| m * m + (s - 1.0) * (s - 1.0)).sum();
                if gap > 1e-6 {
                    prop_assert!(kl > 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_residual_limit_is_log_normalizer() {
        // 1-1-1 tanh net with sigma -> 0 and targets equal to its mean output
        let arch = Architecture::new(1, vec![1], 1, Activation::Tanh).unwrap();
        let mut post = init_posterior(&arch, 4).unwrap();
        post.rho.iter_mut().for_each(|r| *r = -60.0);
        post.log_noise = 0.2f64.ln();
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.3 - 1.0]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| mean_forward(&post, x)).collect();
        let set = RegressionSet::from_rows(&xs, &ys).unwrap();
        let eps = vec![draw_noise(post.len(), &mut ChaCha8Rng::seed_from_u64(0)); 2];
        let (loss, _) = elbo_with_noise(&post, &set, &eps, 0.0).unwrap();
        let expected = 7.0 * (0.5 * (2.0 * std::f64::consts::PI).ln() + 0.2f64.ln());
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn full_batch_kl_scale_is_one() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.kl_scale(500, 500), 1.0);
        assert_eq!(cfg.kl_scale(64, 640), 0.1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = small_arch();
        let mut post = init_posterior(&arch, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // move away from the symmetric init so every term matters
        for (m, r) in post.mu.iter_mut().zip(post.rho.iter_mut()) {
            *m += rng.random_range(-0.5..0.5);
            *r += rng.random_range(-1.0..1.0);
        }
        let data = toy_set(16, 3);
        let eps: Vec<Vec<f64>> = (0..2).map(|_| draw_noise(post.len(), &mut rng)).collect();
        let (_, grad) = elbo_with_noise(&post, &data, &eps, 0.25).unwrap();
        let loss_at = |p: &VariationalPosterior| elbo_with_noise(p, &data, &eps, 0.25).unwrap().0;
        let h = 1e-4;
        for _ in 0..5 {
            let j = rng.random_range(0..post.len());
            for which in 0..2 {
                let mut plus = post.clone();
                let mut minus = post.clone();
                let analytic = if which == 0 {
                    plus.mu[j] += h;
                    minus.mu[j] -= h;
                    grad.mu[j]
                } else {
                    plus.rho[j] += h;
                    minus.rho[j] -= h;
                    grad.rho[j]
                };
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                assert!(rel < 1e-3, "param {j}/{which}: analytic {analytic} fd {fd}");
            }
        }
        let mut plus = post.clone();
        let mut minus = post.clone();
        plus.log_noise += h;
        minus.log_noise -= h;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        assert!((grad.log_noise - fd).abs() / fd.abs() < 1e-3);
    }

    #[test]
    fn elbo_rejects_bad_batches() {
        let post = init_posterior(&small_arch(), 0).unwrap();
        let wrong = RegressionSet::from_rows(&[vec![0.0; 4]], &[vec![0.0; 2]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(elbo_loss(&post, &wrong, 1, &TrainConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let post = init_posterior(&small_arch(), 0).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&post, &toy_set(10, 0), &cfg).unwrap();
        assert_eq!(out.posterior, post);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn training_fits_constant_zero_target() {
        let arch = Architecture::new(3, vec![16, 16], 1, Activation::Tanh).unwrap();
        let post = init_posterior(&arch, 0).unwrap();
        let mut data = toy_set(128, 8);
        data.targets = DMatrix::zeros(128, 1);
        let cfg = TrainConfig { epochs: 100, batch_size: 32, learning_rate: 1e-2, seed: 3, ..TrainConfig::default() };
        let out = train(&post, &data, &cfg).unwrap();
        assert!(out.epoch_losses.last().unwrap() <= &out.epoch_losses[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..data.len() {
            let x: Vec<f64> = data.inputs.row(i).iter().copied().collect();
            let p = predict(&out.posterior, &x, 50, &mut rng).unwrap();
            assert!(p.mean[0].abs() < 0.05, "row {i}: {}", p.mean[0]);
        }
        let again = train(&post, &data, &cfg).unwrap();
        assert_eq!(again.epoch_losses, out.epoch_losses);
    }

    #[test]
    fn divergence_returns_last_finite_posterior() {
        let arch = Architecture::new(3, vec![4], 2, Activation::Tanh).unwrap();
        let post = init_posterior(&arch, 0).unwrap();
        let mut data = toy_set(8, 0);
        data.targets[(0, 0)] = f64::INFINITY;
        let err = train(&post, &data, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap_err();
        match err {
            LfdError::TrainingDiverged { epoch, last_finite } => {
                assert_eq!(epoch, 0);
                assert_eq!(*last_finite, post);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_posterior_has_zero_spread() {
        let arch = small_arch();
        let mut post = init_posterior(&arch, 9).unwrap();
        post.rho.iter_mut().for_each(|r| *r = -800.0);
        let x = [0.2, -0.4, 0.9];
        let p = predict(&post, &x, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.std_per_dim, vec![0.0, 0.0]);
        assert_eq!(p.sigma_scalar, 0.0);
        let det = mean_forward(&post, &x);
        for (a, b) in p.mean.iter().zip(&det) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn predict_needs_two_samples() {
        let post = init_posterior(&small_arch(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(predict(&post, &[0.0; 3], 1, &mut rng), Err(LfdError::InvalidArgument(_))));
        assert!(predict(&post, &[0.0; 2], 5, &mut rng).is_err());
    }

    #[test]
    fn predict_determinism_and_permutation() {
        let post = init_posterior(&small_arch(), 3).unwrap();
        let x = [0.1, 0.5, -0.3];
        let a = predict(&post, &x, 20, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = predict(&post, &x, 20, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!((a.sigma_scalar * 2.0 - a.std_per_dim.iter().sum::<f64>()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<WeightSample> = (0..20).map(|_| sample_weights(&post, &mut rng)).collect();
        let mut reversed = samples.clone();
        reversed.reverse();
        let fwd = WeightBank::from_samples(post.arch.clone(), samples).predict(&x).unwrap();
        let rev = WeightBank::from_samples(post.arch.clone(), reversed).predict(&x).unwrap();
        assert!((fwd.sigma_scalar - rev.sigma_scalar).abs() < 1e-14);
    }

    #[test]
    fn batched_and_single_predictions_agree() {
        let post = init_posterior(&small_arch(), 3).unwrap();
        let bank = WeightBank::draw(&post, 8, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let data = toy_set(5, 1);
        let rows = bank.predict_rows(&data.inputs).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let x: Vec<f64> = data.inputs.row(i).iter().copied().collect();
            let single = bank.predict(&x).unwrap();
            for (a, b) in r.mean.iter().zip(&single.mean) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((r.sigma_scalar - single.sigma_scalar).abs() < 1e-12);
        }
    }

    #[test]
    fn record_round_trip_is_bit_exact() {
        let mut post = init_posterior(&small_arch(), 21).unwrap();
        post.mu[0] = -0.0;
        post.mu[1] = 1e-300;
        post.rho[2] = -49.999999999999;
        let mut buf = Vec::new();
        post.write_record(&mut buf).unwrap();
        let back = VariationalPosterior::read_record(buf.as_slice()).unwrap();
        assert_eq!(back.arch, post.arch);
        assert_eq!(back.seed, post.seed);
        assert_eq!(back.log_noise.to_bits(), post.log_noise.to_bits());
        for (a, b) in back.mu.iter().zip(&post.mu).chain(back.rho.iter().zip(&post.rho)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lfd-bnn-posterior v1\n"));
        let bumped = text.replacen("v1", "v2", 1);
        assert!(VariationalPosterior::read_record(bumped.as_bytes()).is_err());
    }
}
