//! Temporal-window features.
//!
//! A window ending at step `t` with size `k` is laid out as
//! `[s_{t-k+1} .. s_t | a_{t-k+1} .. a_{t-1} | r_{t-k+1} .. r_{t-1}]`:
//! `k` states, the `k - 1` actions taken between them and the matching
//! `k - 1` rewards. The target is the expert action `a_t`.

use std::io::Write;

use crate::env_suite::Trajectory;
use crate::error::{LfdError, Result};

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

pub fn window_dim(k: usize, dim_s: usize, dim_a: usize) -> usize {
    assert!(k >= 1, "window size must be >= 1");
    k * dim_s + (k - 1) * dim_a + (k - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WindowSource {
    pub context_id: String,
    pub episode: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWindow {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
    pub source: WindowSource,
}

/// Build the window ending at the last entry of `states`.
///
/// `states` holds every observed state so far; `actions` and `rewards` hold
/// one entry per completed step, so `states.len() == actions.len() + 1`.
/// Histories shorter than `k` are padded at the front with the earliest state
/// and zero actions and rewards.
pub fn window_features(
    states: &[[f64; 2]],
    actions: &[Vec<f64>],
    rewards: &[f64],
    dim_a: usize,
    k: usize,
) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(LfdError::invalid("window history has no states"));
    }
    if k == 0 {
        return Err(LfdError::invalid("window size must be >= 1"));
    }
    if actions.len() + 1 != states.len() || rewards.len() != actions.len() {
        return Err(LfdError::invalid(format!(
            "inconsistent history: {} states, {} actions, {} rewards",
            states.len(),
            actions.len(),
            rewards.len()
        )));
    }
    let dim_s = states[0].len();
    let mut out = Vec::with_capacity(window_dim(k, dim_s, dim_a));

    let n = states.len();
    for slot in 0..k {
        // slot 0 is the oldest position in the window
        let back = k - 1 - slot;
        let s = if back < n { &states[n - 1 - back] } else { &states[0] };
        out.extend_from_slice(s);
    }
    let m = actions.len();
    for slot in 0..k - 1 {
        let back = k - 2 - slot;
        if back < m {
            let a = &actions[m - 1 - back];
            debug_assert_eq!(a.len(), dim_a);
            out.extend_from_slice(a);
        } else {
            out.extend(std::iter::repeat_n(0.0, dim_a));
        }
    }
    for slot in 0..k - 1 {
        let back = k - 2 - slot;
        out.push(if back < m { rewards[m - 1 - back] } else { 0.0 });
    }
    Ok(out)
}

/// Partial-episode window with replicate-and-zero padding.
pub fn bootstrap_window(
    states: &[[f64; 2]],
    actions: &[Vec<f64>],
    rewards: &[f64],
    dim_a: usize,
    k: usize,
) -> Result<Vec<f64>> {
    window_features(states, actions, rewards, dim_a, k)
}

/// All stride-one windows of a trajectory: exactly `T - k + 1` of them.
pub fn build_windows(traj: &Trajectory, episode: usize, k: usize) -> Result<Vec<TemporalWindow>> {
    let len = traj.len();
    if k == 0 {
        return Err(LfdError::invalid("window size must be >= 1"));
    }
    if len < k {
        return Err(LfdError::TooShortTrajectory { len, k });
    }
    let dim_a = traj.steps[0].action.len();
    let states: Vec<[f64; 2]> = traj.steps.iter().map(|s| s.state.to_array()).collect();
    let actions: Vec<Vec<f64>> = traj.steps.iter().map(|s| s.action.clone()).collect();
    let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();

    (k - 1..len)
        .map(|t| {
            let lo = t + 1 - k;
            let features =
                window_features(&states[lo..=t], &actions[lo..t], &rewards[lo..t], dim_a, k)?;
            Ok(TemporalWindow {
                features,
                target: actions[t].clone(),
                source: WindowSource {
                    context_id: traj.context_id.clone(),
                    episode,
                    t,
                },
            })
        })
        .collect()
}

/// Column names for the feature layout, newest slot suffixed `@0`.
pub fn feature_names(k: usize, dim_s: usize, dim_a: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(window_dim(k, dim_s, dim_a));
    let lag = |slot: usize, newest: usize| -> String {
        let back = newest - slot;
        if back == 0 {
            "@0".to_string()
        } else {
            format!("@-{back}")
        }
    };
    for slot in 0..k {
        for j in 1..=dim_s {
            names.push(format!("s{j}{}", lag(slot, k - 1)));
        }
    }
    for slot in 0..k - 1 {
        for j in 1..=dim_a {
            names.push(format!("a{j}{}", lag(slot, k - 1)));
        }
    }
    for slot in 0..k - 1 {
        names.push(format!("r{}", lag(slot, k - 1)));
    }
    names
}

/// Dataset export: one header row naming every feature slot, then the
/// targets.
pub fn write_dataset_csv<W: Write>(
    mut w: W,
    windows: &[TemporalWindow],
    k: usize,
    dim_s: usize,
    dim_a: usize,
) -> std::io::Result<()> {
    let mut header = vec!["context".to_string(), "episode".into(), "t".into()];
    header.extend(feature_names(k, dim_s, dim_a));
    header.extend((1..=dim_a).map(|j| format!("target_a{j}")));
    writeln!(w, "{}", header.join(","))?;
    for win in windows {
        write!(w, "{},{},{}", win.source.context_id, win.source.episode, win.source.t)?;
        for x in win.features.iter().chain(&win.target) {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Per-feature z-score transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit on a set of feature rows. Uses the population standard deviation.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(LfdError::invalid("normalizer needs at least 2 rows"));
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn fit_windows(windows: &[TemporalWindow]) -> Result<Self> {
        Self::fit(windows.iter().map(|w| w.features.as_slice()))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (x, (m, s))) in out.iter_mut().zip(x.iter().zip(self.mean.iter().zip(&self.std))) {
            *o = (x - m) / s;
        }
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }
}
