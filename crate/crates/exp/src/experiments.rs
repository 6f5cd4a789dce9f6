//! The five experiments. Every function is deterministic in its config.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use lfd_core::active_loop::{
    evaluate_policy, mix_seed, run_active_lfd, run_baseline, spearman_rank_corr, to_regression_set, BbbLearner,
    LearnerConfig, LearnerMode, RunConfig, RunLog,
};
use lfd_core::bayes_net::TrainConfig;
use lfd_core::confidence_detector::DetectorParams;
use lfd_core::env_suite::{get_demonstrations, Context, Trajectory};
use lfd_core::gp_baseline::{self, FitOptions, GpPolicy, KernelConfig};
use lfd_core::policy::Controller;
use lfd_core::window_pipeline::{build_windows, window_dim, Normalizer, TemporalWindow};
use lfd_core::LfdError;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::table::{cell, Table};

const TAG_TRAIN_DEMOS: u64 = 101;
const TAG_HELDOUT: u64 = 102;
const TAG_GP_SUBSAMPLE: u64 = 103;
const TAG_EVAL: u64 = 104;
const TAG_ORDER: u64 = 105;

pub fn learner_config(cfg: &ExperimentConfig) -> LearnerConfig {
    LearnerConfig {
        hidden: cfg.hidden.clone(),
        activation: cfg.activation,
        train: TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            train_mc_samples: cfg.train_mc,
            predict_mc_samples: cfg.predict_mc,
            ..TrainConfig::default()
        },
        warm_start: cfg.warm_start,
    }
}

pub fn detector_params(cfg: &ExperimentConfig, c: f64, m: usize) -> DetectorParams {
    DetectorParams {
        scale: c,
        window: m,
        t_start: (cfg.t_start > 0).then_some(cfg.t_start),
    }
}

pub fn run_config(cfg: &ExperimentConfig, contexts: Vec<Context>, seed: u64, c: f64, m: usize) -> RunConfig {
    let mut rc = RunConfig::new(contexts, cfg.k, seed);
    rc.detector = detector_params(cfg, c, m);
    rc.demos_per_request = cfg.demos_per_request;
    rc.learner = learner_config(cfg);
    rc.eval_episodes = cfg.eval_episodes;
    rc.max_queries_per_context = cfg.max_queries_per_context;
    rc
}

/// The context family shuffled by `seed`.
pub fn shuffled_family(cfg: &ExperimentConfig, seed: u64) -> Vec<Context> {
    let mut fam = cfg.family();
    fam.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_ORDER, 0)));
    fam
}

fn windows_of(trajs: &[Trajectory], k: usize, first_episode: usize) -> Result<Vec<TemporalWindow>> {
    let mut out = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        out.extend(build_windows(t, first_episode + i, k)?);
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Root-mean-square error of the controller's mean action on held-out windows.
fn window_rmse<F>(windows: &[TemporalWindow], mut predict: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut sq = 0.0;
    let mut n = 0usize;
    for w in windows {
        let p = predict(&w.features)?;
        for (a, b) in p.iter().zip(&w.target) {
            sq += (a - b) * (a - b);
            n += 1;
        }
    }
    Ok((sq / n as f64).sqrt())
}

fn mean_reward_over<C: Controller>(
    controller: &mut C,
    contexts: &[&Context],
    episodes: usize,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let mut rs = Vec::with_capacity(contexts.len());
    for (i, ctx) in contexts.iter().enumerate() {
        let r = evaluate_policy(controller, ctx, episodes, k, mix_seed(seed, TAG_EVAL, i as u64))?;
        rs.push(r.mean_reward);
    }
    Ok(mean(&rs))
}

// ---------------------------------------------------------------- bbb_vs_gp

#[derive(Debug, Clone, PartialEq)]
pub struct BbbGpRow {
    pub seed: u64,
    pub k: usize,
    pub input_dim: usize,
    pub learner: &'static str,
    pub n_train: usize,
    pub rmse: Option<f64>,
    pub reward: Option<f64>,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BbbVsGp {
    pub rows: Vec<BbbGpRow>,
}

impl BbbVsGp {
    /// Seed-averaged reward of `learner` at window size `k`, over rows that
    /// produced a reward.
    pub fn mean_reward(&self, learner: &str, k: usize) -> Option<f64> {
        let rs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.learner == learner && r.k == k)
            .filter_map(|r| r.reward)
            .collect();
        (!rs.is_empty()).then(|| mean(&rs))
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "bbb_vs_gp",
            &["seed", "k", "input_dim", "learner", "n_train", "rmse", "reward", "status"],
        );
        for r in &self.rows {
            t.push(vec![
                r.seed.to_string(),
                r.k.to_string(),
                r.input_dim.to_string(),
                r.learner.to_string(),
                r.n_train.to_string(),
                cell(r.rmse),
                cell(r.reward),
                r.status.to_string(),
            ]);
        }
        t
    }
}

pub fn bbb_vs_gp(cfg: &ExperimentConfig) -> Result<BbbVsGp> {
    cfg.validate()?;
    let per_seed: Vec<_> = cfg.seeds.par_iter().map(|&seed| bbb_vs_gp_seed(cfg, seed)).collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(BbbVsGp { rows })
}

fn bbb_vs_gp_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<BbbGpRow>> {
    let fam = cfg.family();
    let contexts: Vec<&Context> = cfg.train_contexts.iter().map(|&i| &fam[i]).collect();
    let mut demos = Vec::new();
    let mut heldout = Vec::new();
    for (i, ctx) in contexts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_TRAIN_DEMOS, i as u64));
        demos.extend(get_demonstrations(ctx, cfg.demos_per_context, &mut rng)?);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_HELDOUT, i as u64));
        heldout.extend(get_demonstrations(ctx, 1, &mut rng)?);
    }
    let dim_s = fam[0].state_dim();
    let dim_a = fam[0].action_dim();
    let mut rows = Vec::new();
    for &k in &cfg.k_values {
        let input_dim = window_dim(k, dim_s, dim_a);
        let train = windows_of(&demos, k, 0)?;
        let test = windows_of(&heldout, k, demos.len())?;
        let eval_seed = mix_seed(seed, TAG_EVAL, k as u64);

        let mut learner = BbbLearner::new(k, dim_s, dim_a, learner_config(cfg), seed)?;
        learner.retrain(&train)?;
        let rmse = window_rmse(&test, |x| Ok(learner.predict(x)?.mean))?;
        let reward = mean_reward_over(&mut learner.policy(), &contexts, cfg.eval_episodes, k, eval_seed)?;
        rows.push(BbbGpRow {
            seed,
            k,
            input_dim,
            learner: "bbb",
            n_train: train.len(),
            rmse: Some(rmse),
            reward: Some(reward),
            status: "ok",
        });

        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_GP_SUBSAMPLE, k as u64)));
        idx.truncate(cfg.gp_points);
        idx.sort_unstable();
        let subset: Vec<TemporalWindow> = idx.iter().map(|&i| train[i].clone()).collect();
        rows.push(match fit_gp(cfg, &subset) {
            Ok(mut policy) => {
                let rmse = window_rmse(&test, |x| Ok(gp_baseline::predict_gp(&policy.model, &policy.normalizer.apply(x))?.mean))?;
                let reward = mean_reward_over(&mut policy, &contexts, cfg.eval_episodes, k, eval_seed)?;
                BbbGpRow {
                    seed,
                    k,
                    input_dim,
                    learner: "gp",
                    n_train: subset.len(),
                    rmse: Some(rmse),
                    reward: Some(reward),
                    status: "ok",
                }
            }
            Err(LfdError::DatasetTooLarge { .. }) => BbbGpRow {
                seed,
                k,
                input_dim,
                learner: "gp",
                n_train: subset.len(),
                rmse: None,
                reward: None,
                status: "capped",
            },
            Err(e) => return Err(e.into()),
        });
    }
    Ok(rows)
}

/// GP on normalized windows, hyperparameters initialized from the data scale.
pub fn fit_gp(cfg: &ExperimentConfig, windows: &[TemporalWindow]) -> lfd_core::Result<GpPolicy> {
    let normalizer = Normalizer::fit_windows(windows)?;
    let data = to_regression_set(windows, &normalizer)?;
    let d = data.input_dim();
    let col = data.targets.column(0);
    let m = col.mean();
    let var = (col.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / col.len() as f64).max(1e-6);
    let init = KernelConfig::isotropic(d, var, (d as f64).sqrt(), 0.01 * var);
    let model = gp_baseline::fit(
        &data,
        &init,
        FitOptions {
            steps: cfg.gp_fit_steps,
            max_points: cfg.gp_max_points,
        },
    )?;
    Ok(GpPolicy { model, normalizer })
}

// ------------------------------------------------------- uncertainty_reward

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub seed: u64,
    pub context: usize,
    pub mass: f64,
    pub run: usize,
    pub sigma_d: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySummary {
    pub seed: u64,
    pub spearman: f64,
    /// Context with the smallest mean `sigma_d`.
    pub min_sigma_context: usize,
    pub train_context: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReward {
    pub rows: Vec<ScatterRow>,
    pub summaries: Vec<UncertaintySummary>,
}

impl UncertaintyReward {
    pub fn tables(&self) -> Vec<Table> {
        let mut t = Table::new(
            "uncertainty_reward",
            &["seed", "context", "mass", "run", "sigma_d", "r_d", "trained"],
        );
        let trained = |seed: u64| self.summaries.iter().find(|s| s.seed == seed).map(|s| s.train_context);
        for r in &self.rows {
            t.push(vec![
                r.seed.to_string(),
                r.context.to_string(),
                r.mass.to_string(),
                r.run.to_string(),
                r.sigma_d.to_string(),
                r.reward.to_string(),
                ((trained(r.seed) == Some(r.context)) as u8).to_string(),
            ]);
        }
        let mut s = Table::new(
            "uncertainty_reward_summary",
            &["seed", "spearman", "min_sigma_context", "train_context"],
        );
        for x in &self.summaries {
            s.push(vec![
                x.seed.to_string(),
                x.spearman.to_string(),
                x.min_sigma_context.to_string(),
                x.train_context.to_string(),
            ]);
        }
        vec![t, s]
    }
}

pub fn uncertainty_reward(cfg: &ExperimentConfig) -> Result<UncertaintyReward> {
    cfg.validate()?;
    let per_seed: Vec<_> = cfg.seeds.par_iter().map(|&seed| uncertainty_reward_seed(cfg, seed)).collect();
    let mut out = UncertaintyReward {
        rows: Vec::new(),
        summaries: Vec::new(),
    };
    for r in per_seed {
        let (rows, summary) = r?;
        out.rows.extend(rows);
        out.summaries.push(summary);
    }
    Ok(out)
}

fn uncertainty_reward_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<ScatterRow>, UncertaintySummary)> {
    let fam = cfg.family();
    let ctx = &fam[cfg.train_context];
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, TAG_TRAIN_DEMOS, 0));
    let demos = get_demonstrations(ctx, cfg.train_demos, &mut rng)?;
    let mut learner = BbbLearner::new(cfg.k, ctx.state_dim(), ctx.action_dim(), learner_config(cfg), seed)?;
    learner.retrain(&windows_of(&demos, cfg.k, 0)?)?;

    let mut rows = Vec::new();
    let mut mean_sigmas = Vec::new();
    for (ci, c) in fam.iter().enumerate() {
        let mut sig = Vec::new();
        for run in 0..cfg.runs {
            // run `i` starts from the same state in every context
            let s = mix_seed(seed, TAG_EVAL, run as u64);
            let r = evaluate_policy(&mut learner.policy(), c, 1, cfg.k, s)?;
            sig.push(r.mean_sigma);
            rows.push(ScatterRow {
                seed,
                context: ci,
                mass: c.dynamics.mass,
                run,
                sigma_d: r.mean_sigma,
                reward: r.mean_reward,
            });
        }
        mean_sigmas.push(mean(&sig));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.sigma_d).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.reward).collect();
    let spearman = spearman_rank_corr(&xs, &ys)?;
    let min_sigma_context = mean_sigmas
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((
        rows,
        UncertaintySummary {
            seed,
            spearman,
            min_sigma_context,
            train_context: cfg.train_context,
        },
    ))
}

// ------------------------------------------- sanity_order / data_efficiency

#[derive(Debug, Clone, PartialEq)]
pub struct LoopRow {
    pub seed: u64,
    pub learner: LearnerMode,
    pub c: f64,
    pub m: usize,
    pub queries: usize,
    /// 1-based positions in the context order of each request.
    pub query_positions: Vec<usize>,
    /// Mean evaluation reward measured right after each context was
    /// completed, summed over the contexts.
    pub cumulative_reward: f64,
    /// Sum of `r_d` of the completed episodes during the run.
    pub online_reward: f64,
    pub ordering: Vec<String>,
}

impl LoopRow {
    fn from_log(log: &RunLog, contexts: &[Context], c: f64, m: usize) -> Self {
        Self {
            seed: log.seed,
            learner: log.mode,
            c,
            m,
            queries: log.total_queries,
            query_positions: log.query_contexts.iter().map(|i| i + 1).collect(),
            cumulative_reward: log.eval_cumulative_reward(),
            online_reward: log.cumulative_reward,
            ordering: contexts.iter().map(|c| c.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopResults {
    pub experiment: ExperimentKind,
    pub rows: Vec<LoopRow>,
}

impl LoopResults {
    pub fn of(&self, learner: LearnerMode) -> impl Iterator<Item = &LoopRow> {
        self.rows.iter().filter(move |r| r.learner == learner)
    }

    pub fn cell(&self, c: f64, m: usize) -> impl Iterator<Item = &LoopRow> {
        self.rows.iter().filter(move |r| r.c == c && r.m == m)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            self.experiment.as_str(),
            &[
                "seed",
                "learner",
                "c",
                "m",
                "queries",
                "query_positions",
                "cumulative_reward",
                "online_reward",
                "ordering",
            ],
        );
        for r in &self.rows {
            t.push(vec![
                r.seed.to_string(),
                r.learner.as_str().to_string(),
                r.c.to_string(),
                r.m.to_string(),
                r.queries.to_string(),
                join(&r.query_positions),
                r.cumulative_reward.to_string(),
                r.online_reward.to_string(),
                r.ordering.join(";"),
            ]);
        }
        t
    }
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Active and naive learners on the fixed context order, both limited to
/// `query_budget` requests.
pub fn sanity_order(cfg: &ExperimentConfig) -> Result<LoopResults> {
    cfg.validate()?;
    let jobs: Vec<(u64, LearnerMode)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [(s, LearnerMode::Active), (s, LearnerMode::Naive)])
        .collect();
    let rows: Vec<Result<LoopRow>> = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let fam = cfg.family();
            let mut rc = run_config(cfg, fam.clone(), seed, cfg.c, cfg.m);
            rc.max_total_queries = Some(cfg.query_budget);
            let log = run_baseline(&rc, mode)?;
            Ok(LoopRow::from_log(&log, &fam, cfg.c, cfg.m))
        })
        .collect();
    Ok(LoopResults {
        experiment: ExperimentKind::SanityOrder,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// Active, naive and random learners on a seed-shuffled context order.
pub fn data_efficiency(cfg: &ExperimentConfig) -> Result<LoopResults> {
    cfg.validate()?;
    let jobs: Vec<(u64, LearnerMode)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [(s, LearnerMode::Active), (s, LearnerMode::Naive), (s, LearnerMode::Random)])
        .collect();
    let rows: Vec<Result<LoopRow>> = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let fam = shuffled_family(cfg, seed);
            let log = run_baseline(&run_config(cfg, fam.clone(), seed, cfg.c, cfg.m), mode)?;
            Ok(LoopRow::from_log(&log, &fam, cfg.c, cfg.m))
        })
        .collect();
    Ok(LoopResults {
        experiment: ExperimentKind::DataEfficiency,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// The active learner over the `c_values` x `m_values` grid.
pub fn cm_sweep(cfg: &ExperimentConfig) -> Result<LoopResults> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &c in &cfg.c_values {
        for &m in &cfg.m_values {
            for &s in &cfg.seeds {
                jobs.push((c, m, s));
            }
        }
    }
    let rows: Vec<Result<LoopRow>> = jobs
        .par_iter()
        .map(|&(c, m, seed)| {
            let fam = shuffled_family(cfg, seed);
            let log = run_active_lfd(&run_config(cfg, fam.clone(), seed, c, m))?;
            Ok(LoopRow::from_log(&log, &fam, c, m))
        })
        .collect();
    Ok(LoopResults {
        experiment: ExperimentKind::CmSweep,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// Run the configured experiment and return its tables.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    Ok(match cfg.experiment {
        ExperimentKind::BbbVsGp => vec![bbb_vs_gp(cfg)?.table()],
        ExperimentKind::UncertaintyReward => uncertainty_reward(cfg)?.tables(),
        ExperimentKind::SanityOrder => vec![sanity_order(cfg)?.table()],
        ExperimentKind::DataEfficiency => vec![data_efficiency(cfg)?.table()],
        ExperimentKind::CmSweep => vec![cm_sweep(cfg)?.table()],
    })
}
