//! Exact Gaussian-process regression baseline.
//!
//! One independent GP per action dimension with an ARD squared-exponential
//! kernel and a constant mean equal to the training-target mean.
//! Hyperparameters are fitted by gradient ascent on the log marginal
//! likelihood in log-space, with a backtracking step so the objective trace
//! never decreases.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::RegressionSet;
use crate::error::{LfdError, Result};
use crate::policy::{Controller, Observation, PredictiveOutput};
use crate::record::{self, RecordReader};
use crate::window_pipeline::Normalizer;

pub const DEFAULT_MAX_POINTS: usize = 2000;
pub const DEFAULT_FIT_STEPS: usize = 100;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

// bounds on log hyperparameters during fitting
const LOG_VAR_RANGE: (f64, f64) = (-9.2, 9.2); // 1e-4 .. 1e4
const LOG_NOISE_RANGE: (f64, f64) = (-13.8, 4.6); // 1e-6 .. 1e2
const LOG_LENGTH_RANGE: (f64, f64) = (-6.9, 6.9); // 1e-3 .. 1e3

const RECORD_MAGIC: &str = "lfd-gp-model";
const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub mean_constant: f64,
}

impl KernelConfig {
    pub fn isotropic(dim: usize, signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Self {
        Self {
            signal_variance,
            lengthscales: vec![lengthscale; dim],
            noise_variance,
            mean_constant: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.signal_variance > 0.0
            && self.noise_variance > 0.0
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| *l > 0.0);
        if ok {
            Ok(())
        } else {
            Err(LfdError::invalid("kernel variances and lengthscales must be > 0"))
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.lengthscales.len() + 2);
        v.push(self.signal_variance.ln());
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log(theta: &[f64], mean_constant: f64) -> Self {
        let d = theta.len() - 2;
        Self {
            signal_variance: theta[0].exp(),
            lengthscales: theta[1..=d].iter().map(|t| t.exp()).collect(),
            noise_variance: theta[d + 1].exp(),
            mean_constant,
        }
    }

    fn prior_variance(&self) -> f64 {
        self.signal_variance + self.noise_variance
    }
}

/// `signal_variance * exp(-0.5 * sum(((x_j - y_j) / l_j)^2))`.
pub fn kernel_eval(cfg: &KernelConfig, x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), cfg.lengthscales.len());
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(&cfg.lengthscales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum();
    cfg.signal_variance * (-0.5 * r2).exp()
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn check_dims(cfg: &KernelConfig, inputs: &DMatrix<f64>) -> Result<()> {
    if cfg.lengthscales.len() != inputs.ncols() {
        return Err(LfdError::invalid(format!(
            "kernel has {} lengthscales but inputs have {} dims",
            cfg.lengthscales.len(),
            inputs.ncols()
        )));
    }
    Ok(())
}

/// Noise-free kernel matrix over the rows of `inputs`.
fn gram(cfg: &KernelConfig, inputs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = inputs.nrows();
    let scaled = DMatrix::from_fn(n, inputs.ncols(), |i, j| inputs[(i, j)] / cfg.lengthscales[j]);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = cfg.signal_variance;
        for j in 0..i {
            let mut r2 = 0.0;
            for c in 0..scaled.ncols() {
                let d = scaled[(i, c)] - scaled[(j, c)];
                r2 += d * d;
            }
            let v = cfg.signal_variance * (-0.5 * r2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `k + noise*I`, escalating diagonal jitter from 1e-8 by factors
/// of ten up to 1e-2.
fn factorize(mut k: DMatrix<f64>, noise: f64) -> Result<Cholesky<f64, Dyn>> {
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok(c);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(LfdError::IllConditionedKernel { jitter: JITTER_MAX })
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> (f64, DVector<f64>) {
    let alpha = chol.solve(resid);
    let n = resid.len() as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * resid.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * PI).ln();
    (lml, alpha)
}

/// Log evidence of one output column under `cfg`.
pub fn log_marginal_likelihood_1d(inputs: &DMatrix<f64>, targets: &DVector<f64>, cfg: &KernelConfig) -> Result<f64> {
    cfg.validate()?;
    check_dims(cfg, inputs)?;
    if inputs.nrows() == 0 || inputs.nrows() != targets.len() {
        return Err(LfdError::invalid("need matching, nonempty inputs and targets"));
    }
    let chol = factorize(gram(cfg, inputs), cfg.noise_variance)?;
    let resid = targets.map(|y| y - cfg.mean_constant);
    Ok(lml_from_factor(&chol, &resid).0)
}

/// Log evidence summed over output dimensions, one config per dimension.
pub fn log_marginal_likelihood(data: &RegressionSet, cfgs: &[KernelConfig]) -> Result<f64> {
    if cfgs.len() != data.output_dim() {
        return Err(LfdError::invalid("one kernel config per output dim required"));
    }
    cfgs.iter()
        .enumerate()
        .map(|(d, cfg)| log_marginal_likelihood_1d(&data.inputs, &data.targets.column(d).into_owned(), cfg))
        .sum()
}

/// Log evidence and its gradient with respect to the log hyperparameters.
fn lml_and_grad(inputs: &DMatrix<f64>, resid: &DVector<f64>, cfg: &KernelConfig) -> Result<(f64, Vec<f64>)> {
    let kf = gram(cfg, inputs);
    let chol = factorize(kf.clone(), cfg.noise_variance)?;
    let (lml, alpha) = lml_from_factor(&chol, resid);
    let kinv = chol.inverse();
    let n = inputs.nrows();
    let d = inputs.ncols();

    let mut grad = vec![0.0; d + 2];
    let mut trace_w = 0.0;
    let inv_l2: Vec<f64> = cfg.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    for i in 0..n {
        trace_w += alpha[i] * alpha[i] - kinv[(i, i)];
        grad[0] += 0.5 * (alpha[i] * alpha[i] - kinv[(i, i)]) * kf[(i, i)];
        for j in 0..i {
            // symmetric: count the off-diagonal pair twice
            let wk = (alpha[i] * alpha[j] - kinv[(i, j)]) * kf[(i, j)];
            grad[0] += wk;
            for c in 0..d {
                let diff = inputs[(i, c)] - inputs[(j, c)];
                grad[1 + c] += wk * diff * diff * inv_l2[c];
            }
        }
    }
    grad[d + 1] = 0.5 * cfg.noise_variance * trace_w;
    Ok((lml, grad))
}

fn clamp_log(theta: &mut [f64]) {
    let d = theta.len() - 2;
    theta[0] = theta[0].clamp(LOG_VAR_RANGE.0, LOG_VAR_RANGE.1);
    for t in &mut theta[1..=d] {
        *t = t.clamp(LOG_LENGTH_RANGE.0, LOG_LENGTH_RANGE.1);
    }
    theta[d + 1] = theta[d + 1].clamp(LOG_NOISE_RANGE.0, LOG_NOISE_RANGE.1);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    pub steps: usize,
    pub max_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: DEFAULT_FIT_STEPS,
            max_points: DEFAULT_MAX_POINTS,
        }
    }
}

/// Gradient ascent in log-space with backtracking. Returns the final config
/// and the accepted objective values (nondecreasing).
fn optimize(inputs: &DMatrix<f64>, resid: &DVector<f64>, init: &KernelConfig, steps: usize) -> Result<(KernelConfig, Vec<f64>)> {
    let mean = init.mean_constant;
    let mut theta = init.to_log();
    clamp_log(&mut theta);
    let mut cfg = KernelConfig::from_log(&theta, mean);
    let (mut f, mut g) = lml_and_grad(inputs, resid, &cfg)?;
    let mut trace = vec![f];
    let mut step = 0.5;
    'outer: for _ in 0..steps {
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-10) {
            break;
        }
        loop {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi / norm).collect();
            clamp_log(&mut cand);
            let cand_cfg = KernelConfig::from_log(&cand, mean);
            match lml_and_grad(inputs, resid, &cand_cfg) {
                Ok((fc, gc)) if fc.is_finite() && fc >= f => {
                    theta = cand;
                    cfg = cand_cfg;
                    f = fc;
                    g = gc;
                    step = (step * 1.5).min(2.0);
                    break;
                }
                _ => {
                    step *= 0.5;
                    if step < 1e-8 {
                        break 'outer;
                    }
                }
            }
        }
        trace.push(f);
    }
    Ok((cfg, trace))
}

/// Fitted GP policy: immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub configs: Vec<KernelConfig>,
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    factors: Vec<Cholesky<f64, Dyn>>,
    alphas: Vec<DVector<f64>>,
    /// Objective trace of the hyperparameter search, per output dim.
    pub traces: Vec<Vec<f64>>,
}

/// Fit one GP per output dimension starting from `init` (its
/// `mean_constant` is replaced by the per-dimension target mean).
pub fn fit(data: &RegressionSet, init: &KernelConfig, opts: FitOptions) -> Result<GpModel> {
    if data.is_empty() {
        return Err(LfdError::invalid("empty GP training set"));
    }
    if data.len() > opts.max_points {
        return Err(LfdError::DatasetTooLarge {
            n: data.len(),
            cap: opts.max_points,
        });
    }
    init.validate()?;
    check_dims(init, &data.inputs)?;
    let mut configs = Vec::with_capacity(data.output_dim());
    let mut traces = Vec::with_capacity(data.output_dim());
    for d in 0..data.output_dim() {
        let col = data.targets.column(d);
        let mean = col.mean();
        let resid = col.map(|y| y - mean);
        let start = KernelConfig {
            mean_constant: mean,
            ..init.clone()
        };
        let (cfg, trace) = if opts.steps == 0 {
            let f = lml_and_grad(&data.inputs, &resid, &start)?.0;
            (start, vec![f])
        } else {
            optimize(&data.inputs, &resid, &start, opts.steps)?
        };
        configs.push(cfg);
        traces.push(trace);
    }
    GpModel::assemble(configs, data.inputs.clone(), data.targets.clone(), traces)
}

impl GpModel {
    fn assemble(
        configs: Vec<KernelConfig>,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        traces: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut factors = Vec::with_capacity(configs.len());
        let mut alphas = Vec::with_capacity(configs.len());
        for (d, cfg) in configs.iter().enumerate() {
            let chol = factorize(gram(cfg, &inputs), cfg.noise_variance)?;
            let resid = targets.column(d).map(|y| y - cfg.mean_constant);
            alphas.push(chol.solve(&resid));
            factors.push(chol);
        }
        Ok(Self {
            configs,
            inputs,
            targets,
            factors,
            alphas,
            traces,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.configs.len()
    }

    pub fn training_len(&self) -> usize {
        self.inputs.nrows()
    }

    /// Lower-triangular Cholesky factor of `K + noise*I` for output `d`.
    pub fn cholesky_factor(&self, d: usize) -> DMatrix<f64> {
        self.factors[d].l()
    }

    pub fn alpha(&self, d: usize) -> &DVector<f64> {
        &self.alphas[d]
    }

    /// Posterior mean and variance (noise included, not floored) per output.
    pub fn moments(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        if x.len() != self.input_dim() {
            return Err(LfdError::invalid(format!(
                "query has dim {}, GP trained on dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let n = self.training_len();
        Ok(self
            .configs
            .iter()
            .enumerate()
            .map(|(d, cfg)| {
                let kstar = DVector::from_fn(n, |i, _| kernel_eval(cfg, &row(&self.inputs, i), x));
                let mean = cfg.mean_constant + kstar.dot(&self.alphas[d]);
                let v = self.factors[d].l_dirty().solve_lower_triangular(&kstar).unwrap_or(kstar);
                let var = cfg.signal_variance - v.dot(&v) + cfg.noise_variance;
                (mean, var)
            })
            .collect())
    }

    pub fn write_record<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{RECORD_MAGIC} v{RECORD_VERSION}")?;
        record::write_line(&mut w, "dims", format!("{} {} {}", self.training_len(), self.input_dim(), self.output_dim()))?;
        for cfg in &self.configs {
            record::write_floats(
                &mut w,
                "kernel",
                &[&[cfg.signal_variance, cfg.noise_variance, cfg.mean_constant][..], &cfg.lengthscales].concat(),
            )?;
        }
        let rows: Vec<f64> = (0..self.training_len()).flat_map(|i| row(&self.inputs, i)).collect();
        record::write_floats(&mut w, "inputs", &rows)?;
        let trows: Vec<f64> = (0..self.training_len()).flat_map(|i| row(&self.targets, i)).collect();
        record::write_floats(&mut w, "targets", &trows)?;
        Ok(())
    }

    /// Load a model; the factorization is recomputed from the stored
    /// hyperparameters and training set.
    pub fn read_record<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = RecordReader::new(r);
        rd.expect_header(RECORD_MAGIC, RECORD_VERSION)?;
        let dims: Vec<usize> = rd
            .field("dims")?
            .split_ascii_whitespace()
            .map(|s| s.parse().map_err(|_| LfdError::Parse(format!("bad dim `{s}`"))))
            .collect::<Result<_>>()?;
        let [n, din, dout] = dims[..] else {
            return Err(LfdError::Parse("dims needs three entries".into()));
        };
        let mut configs = Vec::with_capacity(dout);
        for _ in 0..dout {
            let v = rd.floats("kernel")?;
            if v.len() != din + 3 {
                return Err(LfdError::Parse("kernel record has wrong length".into()));
            }
            configs.push(KernelConfig {
                signal_variance: v[0],
                noise_variance: v[1],
                mean_constant: v[2],
                lengthscales: v[3..].to_vec(),
            });
        }
        let xs = rd.floats("inputs")?;
        let ys = rd.floats("targets")?;
        if xs.len() != n * din || ys.len() != n * dout {
            return Err(LfdError::Parse("training set size mismatch".into()));
        }
        let inputs = DMatrix::from_row_slice(n, din, &xs);
        let targets = DMatrix::from_row_slice(n, dout, &ys);
        Self::assemble(configs, inputs, targets, vec![Vec::new(); dout])
    }
}

/// Exact predictive distribution; variance floored at zero.
pub fn predict_gp(model: &GpModel, x: &[f64]) -> Result<PredictiveOutput> {
    let moments = model.moments(x)?;
    let mean = moments.iter().map(|m| m.0).collect();
    let std = moments.iter().map(|m| m.1.max(0.0).sqrt()).collect();
    Ok(PredictiveOutput::new(mean, std))
}

/// A fitted GP driving an episode, with its input normalizer.
#[derive(Debug, Clone)]
pub struct GpPolicy {
    pub model: GpModel,
    pub normalizer: Normalizer,
}

impl Controller for GpPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<PredictiveOutput> {
        predict_gp(&self.model, &self.normalizer.apply(obs.window))
    }
}

impl GpModel {
    pub fn prior_variance(&self, d: usize) -> f64 {
        self.configs[d].prior_variance()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, d: usize, seed: u64) -> RegressionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0f64..2.0));
        let y = DMatrix::from_fn(n, 1, |i, _| x[(i, 0)].sin() + 0.1 * rng.random_range(-1.0..1.0));
        RegressionSet::new(x, y).unwrap()
    }

    #[test]
    fn kernel_values() {
        let cfg = KernelConfig::isotropic(3, 1.7, 0.8, 0.1);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(kernel_eval(&cfg, &x, &x), 1.7);
        let unit = KernelConfig::isotropic(2, 1.0, 1.0, 0.1);
        // squared distance 2
        let k = kernel_eval(&unit, &[0.0, 0.0], &[1.0, 1.0]);
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.3679).abs() < 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_eq!(kernel_eval(&cfg, &a, &b), kernel_eval(&cfg, &b, &a));
        }
    }

    #[test]
    fn one_point_evidence() {
        let x = DMatrix::from_row_slice(1, 1, &[0.4]);
        let mut cfg = KernelConfig::isotropic(1, 0.75, 1.0, 0.25);
        cfg.mean_constant = 2.0;
        let y = DVector::from_vec(vec![2.0]);
        let lml = log_marginal_likelihood_1d(&x, &y, &cfg).unwrap();
        assert!((lml + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lml + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn zero_residual_evidence_depends_only_on_determinant() {
        let data = random_set(6, 2, 1);
        let mut cfg = KernelConfig::isotropic(2, 1.0, 0.7, 0.1);
        cfg.mean_constant = 0.5;
        let flat = DVector::from_element(6, 0.5);
        for l in [0.3, 1.0, 3.0] {
            cfg.lengthscales = vec![l; 2];
            let k = gram(&cfg, &data.inputs) + DMatrix::identity(6, 6) * cfg.noise_variance;
            let expected = -0.5 * k.determinant().ln() - 3.0 * (2.0 * PI).ln();
            let got = log_marginal_likelihood_1d(&data.inputs, &flat, &cfg).unwrap();
            assert!((got - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_respects_cap() {
        let data = random_set(30, 1, 0);
        let opts = FitOptions { steps: 0, max_points: 20 };
        let err = fit(&data, &KernelConfig::isotropic(1, 1.0, 1.0, 0.1), opts).unwrap_err();
        assert!(matches!(err, LfdError::DatasetTooLarge { n: 30, cap: 20 }));
    }

    #[test]
    fn zero_steps_keeps_init() {
        let data = random_set(12, 2, 3);
        let init = KernelConfig::isotropic(2, 1.3, 0.9, 0.05);
        let model = fit(&data, &init, FitOptions { steps: 0, ..Default::default() }).unwrap();
        assert_eq!(model.configs[0].signal_variance, 1.3);
        assert_eq!(model.configs[0].lengthscales, vec![0.9, 0.9]);
        assert_eq!(model.configs[0].noise_variance, 0.05);
        let l = model.cholesky_factor(0);
        for i in 0..l.nrows() {
            assert!(l[(i, i)] > 0.0);
            for j in i + 1..l.ncols() {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn fit_trace_nondecreasing_and_improves() {
        let data = random_set(40, 2, 5);
        let init = KernelConfig::isotropic(2, 0.2, 3.0, 0.5);
        let model = fit(&data, &init, FitOptions { steps: 40, ..Default::default() }).unwrap();
        let trace = &model.traces[0];
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(trace.last().unwrap() > &trace[0]);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = random_set(15, 3, 9);
        let cfg = KernelConfig {
            signal_variance: 0.8,
            lengthscales: vec![0.7, 1.3, 2.1],
            noise_variance: 0.05,
            mean_constant: 0.1,
        };
        let resid = data.targets.column(0).map(|y| y - 0.1);
        let (_, grad) = lml_and_grad(&data.inputs, &resid, &cfg).unwrap();
        let theta = cfg.to_log();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            let fp = lml_and_grad(&data.inputs, &resid, &KernelConfig::from_log(&p, 0.1)).unwrap().0;
            let fm = lml_and_grad(&data.inputs, &resid, &KernelConfig::from_log(&m, 0.1)).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * fd.abs().max(1.0), "theta {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn noiseless_linear_interpolation() {
        let xs: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64 * 0.2 - 1.4]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * x[0] - 0.3]).collect();
        let data = RegressionSet::from_rows(&xs, &ys).unwrap();
        let model = fit(&data, &KernelConfig::isotropic(1, 1.0, 1.0, 1e-4), FitOptions::default()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let p = predict_gp(&model, x).unwrap();
            assert!((p.mean[0] - y[0]).abs() < 1e-3, "{} vs {}", p.mean[0], y[0]);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let data = random_set(20, 2, 2);
        let cfg = KernelConfig::isotropic(2, 1.5, 0.5, 0.01);
        let model = fit(&data, &cfg, FitOptions { steps: 0, ..Default::default() }).unwrap();
        let p = predict_gp(&model, &[50.0, -50.0]).unwrap();
        let prior = model.prior_variance(0);
        let var = p.std_per_dim[0].powi(2);
        assert!((var - prior).abs() < 0.01 * prior);
        let m = model.configs[0].mean_constant;
        assert!((p.mean[0] - m).abs() <= 0.01 * m.abs().max(1e-12) + 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let data = random_set(5, 2, 2);
        let model = fit(&data, &KernelConfig::isotropic(2, 1.0, 1.0, 0.1), FitOptions { steps: 0, ..Default::default() }).unwrap();
        assert!(predict_gp(&model, &[0.0]).is_err());
        assert!(fit(&data, &KernelConfig::isotropic(3, 1.0, 1.0, 0.1), FitOptions::default()).is_err());
    }

    #[test]
    fn record_round_trip() {
        let data = random_set(10, 2, 4);
        let model = fit(&data, &KernelConfig::isotropic(2, 1.0, 1.0, 0.1), FitOptions { steps: 5, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        model.write_record(&mut buf).unwrap();
        let back = GpModel::read_record(buf.as_slice()).unwrap();
        assert_eq!(back.configs, model.configs);
        let x = [0.3, -0.2];
        assert_eq!(predict_gp(&back, &x).unwrap(), predict_gp(&model, &x).unwrap());
    }

    #[test]
    fn ill_conditioned_kernel_reports_error() {
        // identical points with a tiny (but valid) noise still factorize via jitter
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DVector::from_vec(vec![0.0, 0.1, 0.2, 0.3]);
        let cfg = KernelConfig::isotropic(1, 1.0, 1.0, 1e-300);
        assert!(log_marginal_likelihood_1d(&x, &y, &cfg).is_ok());
        let nan = DMatrix::from_element(2, 2, f64::NAN);
        let err = factorize(nan, 0.1).unwrap_err();
        assert!(matches!(err, LfdError::IllConditionedKernel { .. }));
    }
}
