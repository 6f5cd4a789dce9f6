//! Flat `key=value` experiment configuration.
//!
//! Values come from three layers: built-in defaults, an optional config file,
//! and command-line overrides, applied in that order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lfd_core::bayes_net::Activation;
use lfd_core::env_suite::{self, Context, ContextKind};

use crate::error::{ExpError, Result};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "LFD_EXP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "results";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    BbbVsGp,
    UncertaintyReward,
    SanityOrder,
    DataEfficiency,
    CmSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::BbbVsGp,
        ExperimentKind::UncertaintyReward,
        ExperimentKind::SanityOrder,
        ExperimentKind::DataEfficiency,
        ExperimentKind::CmSweep,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::BbbVsGp => "bbb_vs_gp",
            ExperimentKind::UncertaintyReward => "uncertainty_reward",
            ExperimentKind::SanityOrder => "sanity_order",
            ExperimentKind::DataEfficiency => "data_efficiency",
            ExperimentKind::CmSweep => "cm_sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ExpError::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub env: ContextKind,
    /// Context family masses; for the pendulum every mass is paired with
    /// every entry of `lengths`.
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub horizon: usize,
    pub dt: f64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,

    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_mc: usize,
    pub predict_mc: usize,
    pub warm_start: bool,

    /// Window length for the loop experiments.
    pub k: usize,
    pub demos_per_request: usize,
    pub eval_episodes: usize,
    pub c: f64,
    pub m: usize,
    /// Detector grace period; 0 means "same as `m`".
    pub t_start: usize,
    pub max_queries_per_context: usize,

    /// bbb_vs_gp
    pub k_values: Vec<usize>,
    /// Family indices used for training in bbb_vs_gp.
    pub train_contexts: Vec<usize>,
    pub demos_per_context: usize,
    pub gp_points: usize,
    pub gp_max_points: usize,
    pub gp_fit_steps: usize,

    /// uncertainty_reward
    pub train_context: usize,
    pub train_demos: usize,
    pub runs: usize,

    /// sanity_order
    pub query_budget: usize,

    /// cm_sweep
    pub c_values: Vec<f64>,
    pub m_values: Vec<usize>,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment,
            env: ContextKind::DoubleIntegrator,
            masses: env_suite::INTEGRATOR_MASSES.to_vec(),
            lengths: env_suite::PENDULUM_LENGTHS.to_vec(),
            horizon: env_suite::DEFAULT_HORIZON,
            dt: env_suite::DEFAULT_DT,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: default_out_dir(),
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            train_mc: 1,
            predict_mc: 50,
            warm_start: true,
            k: 2,
            demos_per_request: 3,
            eval_episodes: 5,
            c: 1.0,
            m: 10,
            t_start: 100,
            max_queries_per_context: 3,
            k_values: vec![1, 2, 5],
            train_contexts: vec![0, 2, 4, 6],
            demos_per_context: 3,
            gp_points: 400,
            gp_max_points: lfd_core::gp_baseline::DEFAULT_MAX_POINTS,
            gp_fit_steps: 40,
            train_context: 2,
            train_demos: 5,
            runs: 5,
            query_budget: 2,
            c_values: vec![0.5, 1.0, 2.0],
            m_values: vec![1, 10, 50],
        };
        if experiment == ExperimentKind::SanityOrder {
            cfg.masses = vec![1.0, 1.1, 6.0];
            cfg.demos_per_request = 5;
        }
        cfg
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExpError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Apply `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_pair(line)
                .map_err(|e| ExpError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| ExpError::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = value.parse()?,
            "env" => self.env = value.parse().map_err(|e| ExpError::Config(format!("{e}")))?,
            "masses" => self.masses = list(key, value)?,
            "lengths" => self.lengths = list(key, value)?,
            "horizon" => self.horizon = one(key, value)?,
            "dt" => self.dt = one(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "hidden" => self.hidden = list(key, value)?,
            "activation" => self.activation = value.parse().map_err(|e| ExpError::Config(format!("{e}")))?,
            "epochs" => self.epochs = one(key, value)?,
            "batch_size" => self.batch_size = one(key, value)?,
            "learning_rate" => self.learning_rate = one(key, value)?,
            "train_mc" => self.train_mc = one(key, value)?,
            "predict_mc" => self.predict_mc = one(key, value)?,
            "warm_start" => self.warm_start = one(key, value)?,
            "k" => self.k = one(key, value)?,
            "demos_per_request" => self.demos_per_request = one(key, value)?,
            "eval_episodes" => self.eval_episodes = one(key, value)?,
            "c" => self.c = one(key, value)?,
            "m" => self.m = one(key, value)?,
            "t_start" => self.t_start = one(key, value)?,
            "max_queries_per_context" => self.max_queries_per_context = one(key, value)?,
            "k_values" => self.k_values = list(key, value)?,
            "train_contexts" => self.train_contexts = list(key, value)?,
            "demos_per_context" => self.demos_per_context = one(key, value)?,
            "gp_points" => self.gp_points = one(key, value)?,
            "gp_max_points" => self.gp_max_points = one(key, value)?,
            "gp_fit_steps" => self.gp_fit_steps = one(key, value)?,
            "train_context" => self.train_context = one(key, value)?,
            "train_demos" => self.train_demos = one(key, value)?,
            "runs" => self.runs = one(key, value)?,
            "query_budget" => self.query_budget = one(key, value)?,
            "c_values" => self.c_values = list(key, value)?,
            "m_values" => self.m_values = list(key, value)?,
            _ => return Err(ExpError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, in a fixed order. Feeding these back
    /// through [`set`](Self::set) reproduces the config.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("experiment", self.experiment.to_string()),
            ("env", self.env.as_str().to_string()),
            ("masses", join(&self.masses)),
            ("lengths", join(&self.lengths)),
            ("horizon", self.horizon.to_string()),
            ("dt", self.dt.to_string()),
            ("seeds", join(&self.seeds)),
            ("hidden", join(&self.hidden)),
            ("activation", self.activation.as_str().to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("train_mc", self.train_mc.to_string()),
            ("predict_mc", self.predict_mc.to_string()),
            ("warm_start", self.warm_start.to_string()),
            ("k", self.k.to_string()),
            ("demos_per_request", self.demos_per_request.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("c", self.c.to_string()),
            ("m", self.m.to_string()),
            ("t_start", self.t_start.to_string()),
            ("max_queries_per_context", self.max_queries_per_context.to_string()),
            ("k_values", join(&self.k_values)),
            ("train_contexts", join(&self.train_contexts)),
            ("demos_per_context", self.demos_per_context.to_string()),
            ("gp_points", self.gp_points.to_string()),
            ("gp_max_points", self.gp_max_points.to_string()),
            ("gp_fit_steps", self.gp_fit_steps.to_string()),
            ("train_context", self.train_context.to_string()),
            ("train_demos", self.train_demos.to_string()),
            ("runs", self.runs.to_string()),
            ("query_budget", self.query_budget.to_string()),
            ("c_values", join(&self.c_values)),
            ("m_values", join(&self.m_values)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ExpError::Config(msg.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if self.masses.is_empty() || self.masses.iter().any(|m| !(*m > 0.0)) {
            return bad("masses must be a nonempty list of positive values");
        }
        if self.env == ContextKind::Pendulum && (self.lengths.is_empty() || self.lengths.iter().any(|l| !(*l > 0.0))) {
            return bad("lengths must be a nonempty list of positive values");
        }
        if self.horizon == 0 || !(self.dt > 0.0) {
            return bad("horizon and dt must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden must list positive layer widths");
        }
        if self.k == 0 || self.k_values.is_empty() || self.k_values.contains(&0) {
            return bad("window sizes must be >= 1");
        }
        if self.k_values.iter().chain([&self.k]).any(|k| *k > self.horizon) {
            return bad("window size exceeds horizon");
        }
        if self.predict_mc < 2 {
            return bad("predict_mc must be >= 2");
        }
        if self.eval_episodes == 0 || self.runs == 0 || self.demos_per_request == 0 || self.train_demos == 0 {
            return bad("episode counts must be >= 1");
        }
        if self.demos_per_context == 0 || self.gp_points == 0 {
            return bad("bbb_vs_gp counts must be >= 1");
        }
        if self.m == 0 || self.m_values.is_empty() || self.m_values.contains(&0) {
            return bad("smoothing windows must be >= 1");
        }
        if !(self.c > 0.0) || self.c_values.is_empty() || self.c_values.iter().any(|c| !(*c > 0.0)) {
            return bad("threshold scales must be > 0");
        }
        // the index settings only matter to the experiments that read them
        let n = self.family().len();
        match self.experiment {
            ExperimentKind::BbbVsGp if self.train_contexts.is_empty() => return bad("train_contexts must be nonempty"),
            ExperimentKind::BbbVsGp if self.train_contexts.iter().any(|i| *i >= n) => {
                return bad("train_contexts index out of range")
            }
            ExperimentKind::UncertaintyReward if self.train_context >= n => {
                return bad("train_context index out of range")
            }
            _ => {}
        }
        Ok(())
    }

    /// The context family described by `env`, `masses`, `lengths`,
    /// `horizon` and `dt`.
    pub fn family(&self) -> Vec<Context> {
        let mut out = Vec::new();
        match self.env {
            ContextKind::DoubleIntegrator => {
                for (i, &m) in self.masses.iter().enumerate() {
                    out.push(Context::double_integrator(format!("di-{i}"), m));
                }
            }
            ContextKind::Pendulum => {
                for &l in &self.lengths {
                    for &m in &self.masses {
                        let i = out.len();
                        out.push(Context::pendulum(format!("pend-{i}"), m, l));
                    }
                }
            }
        }
        for c in &mut out {
            c.horizon = self.horizon;
            c.dt = self.dt;
        }
        out
    }
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| ExpError::Config(format!("bad value `{value}` for `{key}`")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| one(key, v.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
