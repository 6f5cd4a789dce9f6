//! The active learning-from-demonstration loop and its baselines.
//!
//! The active learner runs its policy on each context in turn. Whenever the
//! detector fires it halts, asks the expert for demonstrations of the
//! current context, retrains on everything collected so far, re-derives the
//! threshold from the trained contexts and restarts the episode. The naive
//! baseline asks on every context; the random baseline never asks.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bayes_net::{
    init_posterior, train, Activation, Architecture, TrainConfig, VariationalPosterior, WeightBank,
};
use crate::confidence_detector::{DetectorParams, DetectorState, DetectorTraceRow};
use crate::dataset::RegressionSet;
use crate::env_suite::{self, get_demonstrations, Context, State, Trajectory, Transition};
use crate::error::{LfdError, Result};
use crate::policy::{Controller, Observation, PredictiveOutput};
use crate::window_pipeline::{build_windows, window_dim, window_features, Normalizer, TemporalWindow};

pub const DEFAULT_DEMOS_PER_REQUEST: usize = 3;
pub const DEFAULT_MAX_QUERIES_PER_CONTEXT: usize = 3;
pub const DEFAULT_EVAL_EPISODES: usize = 5;

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_DEMOS: u64 = 1;
const TAG_EPISODE: u64 = 2;
const TAG_EVAL: u64 = 3;
const TAG_TRAIN: u64 = 4;
const TAG_BANK: u64 = 5;
const TAG_INIT: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// Retrain from the current posterior rather than a fresh one.
    pub warm_start: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            train: TrainConfig::default(),
            warm_start: true,
        }
    }
}

/// A Bayes-by-Backprop policy over temporal windows, with its normalizer.
#[derive(Debug, Clone)]
pub struct BbbLearner {
    pub k: usize,
    pub dim_s: usize,
    pub dim_a: usize,
    pub config: LearnerConfig,
    pub posterior: VariationalPosterior,
    pub normalizer: Normalizer,
    /// Monte Carlo weight draws shared by every prediction of the current
    /// posterior.
    bank: WeightBank,
    seed: u64,
    train_calls: usize,
    pub last_losses: Vec<f64>,
}

impl BbbLearner {
    pub fn new(k: usize, dim_s: usize, dim_a: usize, config: LearnerConfig, seed: u64) -> Result<Self> {
        let input = window_dim(k, dim_s, dim_a);
        let arch = Architecture::new(input, config.hidden.clone(), dim_a, config.activation)?;
        let posterior = init_posterior(&arch, mix_seed(seed, TAG_INIT, 0))?;
        let bank = draw_bank(&posterior, &config, seed, 0)?;
        Ok(Self {
            k,
            dim_s,
            dim_a,
            config,
            posterior,
            normalizer: Normalizer::identity(input),
            bank,
            seed,
            train_calls: 0,
            last_losses: Vec::new(),
        })
    }

    pub fn train_calls(&self) -> usize {
        self.train_calls
    }

    pub fn is_trained(&self) -> bool {
        self.train_calls > 0
    }

    pub fn input_dim(&self) -> usize {
        self.posterior.arch.input_dim
    }

    /// Refit the normalizer on `windows` and train on all of them.
    pub fn retrain(&mut self, windows: &[TemporalWindow]) -> Result<()> {
        self.normalizer = Normalizer::fit_windows(windows)?;
        let data = to_regression_set(windows, &self.normalizer)?;
        let start = if self.config.warm_start {
            self.posterior.clone()
        } else {
            init_posterior(&self.posterior.arch, mix_seed(self.seed, TAG_INIT, self.train_calls as u64))?
        };
        let cfg = TrainConfig {
            seed: mix_seed(self.config.train.seed ^ self.seed, TAG_TRAIN, self.train_calls as u64),
            ..self.config.train.clone()
        };
        let out = train(&start, &data, &cfg)?;
        self.posterior = out.posterior;
        self.last_losses = out.epoch_losses;
        self.train_calls += 1;
        self.bank = draw_bank(&self.posterior, &self.config, self.seed, self.train_calls)?;
        Ok(())
    }

    pub fn policy(&self) -> BbbPolicy<'_> {
        BbbPolicy { learner: self }
    }

    pub fn bank(&self) -> &WeightBank {
        &self.bank
    }

    /// Predictive output for one unnormalized window.
    pub fn predict(&self, window: &[f64]) -> Result<PredictiveOutput> {
        self.bank.predict(&self.normalizer.apply(window))
    }

    /// Mean predictive uncertainty over a set of stored windows.
    pub fn mean_sigma(&self, windows: &[TemporalWindow]) -> Result<f64> {
        if windows.is_empty() {
            return Err(LfdError::invalid("no windows to measure uncertainty on"));
        }
        let data = to_regression_set(windows, &self.normalizer)?;
        let preds = self.bank.predict_rows(&data.inputs)?;
        Ok(preds.iter().map(|p| p.sigma_scalar).sum::<f64>() / preds.len() as f64)
    }
}

fn draw_bank(post: &VariationalPosterior, config: &LearnerConfig, seed: u64, calls: usize) -> Result<WeightBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_BANK, calls as u64));
    WeightBank::draw(post, config.train.predict_mc_samples.max(2), &mut rng)
}

/// Normalized features and targets as a regression set.
pub fn to_regression_set(windows: &[TemporalWindow], norm: &Normalizer) -> Result<RegressionSet> {
    if windows.is_empty() {
        return Err(LfdError::invalid("no windows"));
    }
    let din = windows[0].features.len();
    let dout = windows[0].target.len();
    let mut x = DMatrix::zeros(windows.len(), din);
    let mut buf = vec![0.0; din];
    for (i, w) in windows.iter().enumerate() {
        norm.apply_into(&w.features, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let y = DMatrix::from_fn(windows.len(), dout, |i, j| windows[i].target[j]);
    RegressionSet::new(x, y)
}

/// The learner acting in an episode.
pub struct BbbPolicy<'a> {
    learner: &'a BbbLearner,
}

impl Controller for BbbPolicy<'_> {
    fn act(&mut self, obs: &Observation<'_>) -> Result<PredictiveOutput> {
        self.learner.predict(obs.window)
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    /// Executed steps only; a halted episode stops before acting.
    pub trajectory: Trajectory,
    /// `sigma_t` of every executed step.
    pub sigmas: Vec<f64>,
    pub trace: Vec<DetectorTraceRow>,
    /// `r_d`: sum of rewards over executed steps.
    pub reward: f64,
    /// `sigma_d`: sum of `sigma_t` over executed steps.
    pub sigma_sum: f64,
    /// Detector step count at which the episode was halted.
    pub halted_at: Option<usize>,
}

impl EpisodeResult {
    pub fn halted(&self) -> bool {
        self.halted_at.is_some()
    }
}

/// Run one episode from `start`. Each step builds the current window,
/// predicts, feeds `sigma_t` to the detector and halts if it fires;
/// otherwise the mean action is applied.
pub fn run_episode_from<C: Controller + ?Sized>(
    controller: &mut C,
    ctx: &Context,
    detector: &mut DetectorState,
    k: usize,
    start: State,
    episode_seed: u64,
) -> Result<EpisodeResult> {
    let dim_a = ctx.action_dim();
    controller.begin_episode(episode_seed);
    let mut states: Vec<[f64; 2]> = vec![start.to_array()];
    let mut actions: Vec<Vec<f64>> = Vec::with_capacity(ctx.horizon);
    let mut rewards: Vec<f64> = Vec::with_capacity(ctx.horizon);
    let mut steps = Vec::with_capacity(ctx.horizon);
    let mut sigmas = Vec::with_capacity(ctx.horizon);
    let mut trace = Vec::with_capacity(ctx.horizon);
    let mut s = start;
    let mut halted_at = None;

    for t in 0..ctx.horizon {
        let lo = states.len().saturating_sub(k);
        let alo = lo.min(actions.len());
        let window = window_features(&states[lo..], &actions[alo..], &rewards[alo..], dim_a, k)?;
        let out = controller.act(&Observation {
            state: &states[states.len() - 1],
            window: &window,
        })?;
        detector.observe(out.sigma_scalar)?;
        let fired = detector.should_query();
        trace.push(DetectorTraceRow {
            t: detector.t(),
            sigma_t: out.sigma_scalar,
            smoothed: detector.smoothed()?,
            threshold: detector.threshold(),
            fired,
        });
        if fired {
            halted_at = Some(detector.t());
            break;
        }
        let action: Vec<f64> = out.mean.iter().map(|a| ctx.clip(*a)).collect();
        let (next, r) = env_suite::step(ctx, &s, &action).map_err(|e| env_suite::with_step(e, t))?;
        steps.push(Transition {
            state: s,
            action: action.clone(),
            reward: r,
        });
        sigmas.push(out.sigma_scalar);
        states.push(next.to_array());
        actions.push(action);
        rewards.push(r);
        s = next;
    }
    let reward = rewards.iter().sum();
    let sigma_sum = sigmas.iter().sum();
    Ok(EpisodeResult {
        trajectory: Trajectory {
            context_id: ctx.id.clone(),
            steps,
            terminal: s,
        },
        sigmas,
        trace,
        reward,
        sigma_sum,
        halted_at,
    })
}

/// [`run_episode_from`] with the start state drawn from `episode_seed`.
pub fn run_episode<C: Controller + ?Sized>(
    controller: &mut C,
    ctx: &Context,
    detector: &mut DetectorState,
    k: usize,
    episode_seed: u64,
) -> Result<EpisodeResult> {
    let start = env_suite::reset(ctx, &mut ChaCha8Rng::seed_from_u64(episode_seed));
    run_episode_from(controller, ctx, detector, k, start, episode_seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub rewards: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub mean_reward: f64,
    pub mean_sigma: f64,
}

/// Full-horizon rollouts with the detector disabled. Episode `i` starts from
/// the reset state drawn from `mix_seed(seed, .., i)`, so different
/// controllers evaluated with the same seed face the same start states.
pub fn evaluate_policy<C: Controller + ?Sized>(
    controller: &mut C,
    ctx: &Context,
    episodes: usize,
    k: usize,
    seed: u64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(LfdError::invalid("need at least one evaluation episode"));
    }
    let mut rewards = Vec::with_capacity(episodes);
    let mut sigmas = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut det = DetectorState::disabled();
        let ep = run_episode(controller, ctx, &mut det, k, mix_seed(seed, TAG_EVAL, i as u64))?;
        rewards.push(ep.reward);
        sigmas.push(ep.sigma_sum);
    }
    let n = episodes as f64;
    Ok(EvalResult {
        mean_reward: rewards.iter().sum::<f64>() / n,
        mean_sigma: sigmas.iter().sum::<f64>() / n,
        rewards,
        sigmas,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rank_corr(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(LfdError::invalid(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(LfdError::invalid("need at least 3 pairs"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(LfdError::invalid("rank correlation undefined for constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerMode {
    Active,
    Naive,
    Random,
}

impl LearnerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LearnerMode::Active => "active",
            LearnerMode::Naive => "naive",
            LearnerMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub contexts: Vec<Context>,
    pub k: usize,
    pub detector: DetectorParams,
    pub demos_per_request: usize,
    pub learner: LearnerConfig,
    /// Evaluation episodes run right after each context is completed; 0 skips them.
    pub eval_episodes: usize,
    pub max_queries_per_context: usize,
    /// Stop asking once this many requests were made.
    pub max_total_queries: Option<usize>,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(contexts: Vec<Context>, k: usize, seed: u64) -> Self {
        Self {
            contexts,
            k,
            detector: DetectorParams::default(),
            demos_per_request: DEFAULT_DEMOS_PER_REQUEST,
            learner: LearnerConfig::default(),
            eval_episodes: DEFAULT_EVAL_EPISODES,
            max_queries_per_context: DEFAULT_MAX_QUERIES_PER_CONTEXT,
            max_total_queries: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(LfdError::invalid("context sequence is empty"));
        }
        if self.demos_per_request == 0 {
            return Err(LfdError::invalid("demos_per_request must be >= 1"));
        }
        if self.k == 0 {
            return Err(LfdError::invalid("window size must be >= 1"));
        }
        for c in &self.contexts {
            c.validate()?;
        }
        DetectorState::new(self.detector)?;
        self.learner.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextLog {
    pub index: usize,
    pub context_id: String,
    /// `r_d` of the completed episode in this context.
    pub reward: f64,
    /// `sigma_d` of the completed episode in this context.
    pub sigma_sum: f64,
    pub queried: bool,
    pub queries: usize,
    pub omega_at_entry: f64,
    /// Detector step of every halted attempt.
    pub halts: Vec<usize>,
    pub steps: Vec<StepLog>,
    /// Mean evaluation reward of the policy right after this context was
    /// completed (`None` when evaluation is disabled).
    pub eval_reward: Option<f64>,
    pub eval_sigma: Option<f64>,
}

/// Per-step record of the completed episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub t: usize,
    pub reward: f64,
    pub sigma: f64,
    pub action: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: LearnerMode,
    pub seed: u64,
    pub contexts: Vec<ContextLog>,
    pub total_queries: usize,
    /// Context index of each request, in order.
    pub query_contexts: Vec<usize>,
    /// Sum of `r_d` over the completed episodes, one per context.
    pub cumulative_reward: f64,
    pub omega_trace: Vec<f64>,
    pub trained_contexts: Vec<String>,
    pub train_calls: usize,
    /// Window count after each request.
    pub dataset_sizes: Vec<usize>,
}

impl RunLog {
    /// Sum over contexts of the evaluation reward measured when each
    /// context was faced. Zero when evaluation is disabled.
    pub fn eval_cumulative_reward(&self) -> f64 {
        self.contexts.iter().filter_map(|c| c.eval_reward).sum()
    }

    /// One row per context: `context,r_d,sigma_d,queried,queries,omega_at_entry`.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "context,r_d,sigma_d,queried,queries,omega_at_entry")?;
        for c in &self.contexts {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.context_id, c.reward, c.sigma_sum, c.queried as u8, c.queries, c.omega_at_entry
            )?;
        }
        Ok(())
    }

    /// Per-step trace of every completed episode: `context,t,r_t,sigma_t,a_t`.
    pub fn write_step_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "context,t,r_t,sigma_t,a_t")?;
        for c in &self.contexts {
            for s in &c.steps {
                writeln!(w, "{},{},{},{},{}", c.context_id, s.t, s.reward, s.sigma, s.action)?;
            }
        }
        Ok(())
    }
}

/// Mutable state shared by the learners while walking the context sequence.
struct Session<'a> {
    cfg: &'a RunConfig,
    learner: BbbLearner,
    detector: DetectorState,
    windows: Vec<TemporalWindow>,
    /// (context index, window range) of every trained context.
    per_context: Vec<(usize, Vec<TemporalWindow>)>,
    demo_rng: ChaCha8Rng,
    log: RunLog,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a RunConfig, mode: LearnerMode) -> Result<Self> {
        cfg.validate()?;
        let first = &cfg.contexts[0];
        Ok(Self {
            learner: BbbLearner::new(cfg.k, first.state_dim(), first.action_dim(), cfg.learner.clone(), cfg.seed)?,
            detector: DetectorState::new(cfg.detector)?,
            windows: Vec::new(),
            per_context: Vec::new(),
            demo_rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, TAG_DEMOS, 0)),
            log: RunLog {
                mode,
                seed: cfg.seed,
                contexts: Vec::new(),
                total_queries: 0,
                query_contexts: Vec::new(),
                cumulative_reward: 0.0,
                omega_trace: Vec::new(),
                trained_contexts: Vec::new(),
                train_calls: 0,
                dataset_sizes: Vec::new(),
            },
            cfg,
        })
    }

    fn budget_left(&self) -> bool {
        self.cfg.max_total_queries.is_none_or(|b| self.log.total_queries < b)
    }

    /// Collect demonstrations on context `ci`, retrain on the aggregate and
    /// re-derive the threshold.
    fn query(&mut self, ci: usize) -> Result<()> {
        let ctx = &self.cfg.contexts[ci];
        let demos = get_demonstrations(ctx, self.cfg.demos_per_request, &mut self.demo_rng)?;
        let mut fresh = Vec::new();
        for traj in &demos {
            let episode = self.log.dataset_sizes.len() * self.cfg.demos_per_request + fresh.len();
            fresh.extend(build_windows(traj, episode, self.cfg.k)?);
        }
        self.windows.extend(fresh.iter().cloned());
        match self.per_context.iter_mut().find(|(i, _)| *i == ci) {
            Some((_, w)) => w.extend(fresh),
            None => {
                self.per_context.push((ci, fresh));
                self.log.trained_contexts.push(ctx.id.clone());
            }
        }
        self.learner.retrain(&self.windows)?;
        let per_context: Vec<f64> = self
            .per_context
            .iter()
            .map(|(_, w)| self.learner.mean_sigma(w))
            .collect::<Result<_>>()?;
        self.detector.update_threshold(&per_context)?;
        self.log.omega_trace.push(self.detector.omega());
        self.log.total_queries += 1;
        self.log.query_contexts.push(ci);
        self.log.dataset_sizes.push(self.windows.len());
        self.log.train_calls = self.learner.train_calls();
        Ok(())
    }

    fn episode(&mut self, ci: usize, detect: bool) -> Result<EpisodeResult> {
        let ctx = &self.cfg.contexts[ci];
        // same start for every attempt and every learner on this context
        let seed = mix_seed(self.cfg.seed, TAG_EPISODE, ci as u64);
        let mut disabled = DetectorState::disabled();
        let det = if detect {
            self.detector.restart_episode();
            &mut self.detector
        } else {
            &mut disabled
        };
        let mut policy = self.learner.policy();
        run_episode(&mut policy, ctx, det, self.cfg.k, seed)
    }

    fn record(
        &mut self,
        ci: usize,
        ep: EpisodeResult,
        queries: usize,
        omega_at_entry: f64,
        halts: Vec<usize>,
    ) -> Result<()> {
        let ctx = &self.cfg.contexts[ci];
        let (eval_reward, eval_sigma) = if self.cfg.eval_episodes > 0 {
            let mut policy = self.learner.policy();
            let seed = mix_seed(self.cfg.seed, TAG_EVAL, ci as u64);
            let r = evaluate_policy(&mut policy, ctx, self.cfg.eval_episodes, self.cfg.k, seed)?;
            (Some(r.mean_reward), Some(r.mean_sigma))
        } else {
            (None, None)
        };
        let steps = ep
            .trajectory
            .steps
            .iter()
            .zip(&ep.sigmas)
            .enumerate()
            .map(|(t, (s, sigma))| StepLog {
                t,
                reward: s.reward,
                sigma: *sigma,
                action: s.action[0],
            })
            .collect();
        self.log.cumulative_reward += ep.reward;
        self.log.contexts.push(ContextLog {
            index: ci,
            context_id: self.cfg.contexts[ci].id.clone(),
            reward: ep.reward,
            sigma_sum: ep.sigma_sum,
            queried: queries > 0,
            queries,
            omega_at_entry,
            halts,
            steps,
            eval_reward,
            eval_sigma,
        });
        Ok(())
    }

    fn finish(mut self) -> Result<RunLog> {
        self.log.train_calls = self.learner.train_calls();
        Ok(self.log)
    }
}

/// The active learner: query only when the detector fires.
pub fn run_active_lfd(cfg: &RunConfig) -> Result<RunLog> {
    let mut s = Session::new(cfg, LearnerMode::Active)?;
    for ci in 0..cfg.contexts.len() {
        let omega_at_entry = s.detector.omega();
        let mut queries = 0;
        let mut halts = Vec::new();
        loop {
            let detect = queries < cfg.max_queries_per_context && s.budget_left();
            let ep = s.episode(ci, detect)?;
            if let Some(t) = ep.halted_at {
                halts.push(t);
                s.query(ci)?;
                queries += 1;
                continue;
            }
            s.record(ci, ep, queries, omega_at_entry, halts)?;
            break;
        }
    }
    s.finish()
}

/// Naive learner (query every context before acting) or random learner
/// (never query, act with the untrained network).
pub fn run_baseline(cfg: &RunConfig, mode: LearnerMode) -> Result<RunLog> {
    if mode == LearnerMode::Active {
        return run_active_lfd(cfg);
    }
    let mut s = Session::new(cfg, mode)?;
    for ci in 0..cfg.contexts.len() {
        let omega_at_entry = s.detector.omega();
        let mut queries = 0;
        if mode == LearnerMode::Naive && s.budget_left() {
            s.query(ci)?;
            queries = 1;
        }
        let ep = s.episode(ci, false)?;
        s.record(ci, ep, queries, omega_at_entry, Vec::new())?;
    }
    s.finish()
}
