//! Moving-average uncertainty detector with a scaled adaptive threshold.
//!
//! The detector fires when the mean of the last `m` uncertainty values
//! exceeds `c * omega` after a grace period of `t_start` steps. `omega`
//! starts at zero, so an untrained learner always asks for help on its first
//! context.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{LfdError, Result};

pub const DEFAULT_SCALE: f64 = 1.0;
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Threshold scale `c`.
    pub scale: f64,
    /// Smoothing window `m`.
    pub window: usize,
    /// Grace period; `None` means "same as `window`".
    pub t_start: Option<usize>,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            window: DEFAULT_WINDOW,
            t_start: None,
        }
    }
}

impl DetectorParams {
    pub fn grace(&self) -> usize {
        self.t_start.unwrap_or(self.window)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    buffer: VecDeque<f64>,
    window: usize,
    scale: f64,
    omega: f64,
    t_start: usize,
    t: usize,
}

impl DetectorState {
    pub fn new(params: DetectorParams) -> Result<Self> {
        if params.window == 0 {
            return Err(LfdError::invalid("smoothing window m must be >= 1"));
        }
        if !(params.scale > 0.0) || !params.scale.is_finite() {
            return Err(LfdError::invalid("threshold scale c must be positive and finite"));
        }
        Ok(Self {
            buffer: VecDeque::with_capacity(params.window),
            window: params.window,
            scale: params.scale,
            omega: 0.0,
            t_start: params.grace(),
            t: 0,
        })
    }

    /// A detector that never fires: its threshold is `+inf`.
    pub fn disabled() -> Self {
        Self {
            buffer: VecDeque::new(),
            window: 1,
            scale: 1.0,
            omega: f64::INFINITY,
            t_start: 0,
            t: 0,
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn threshold(&self) -> f64 {
        self.scale * self.omega
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn t_start(&self) -> usize {
        self.t_start
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn buffer(&self) -> impl Iterator<Item = &f64> {
        self.buffer.iter()
    }

    pub fn observe(&mut self, sigma_t: f64) -> Result<()> {
        if !sigma_t.is_finite() || sigma_t < 0.0 {
            return Err(LfdError::invalid(format!(
                "uncertainty must be finite and >= 0, got {sigma_t}"
            )));
        }
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sigma_t);
        self.t += 1;
        Ok(())
    }

    pub fn smoothed(&self) -> Result<f64> {
        if self.buffer.is_empty() {
            return Err(LfdError::NotReady);
        }
        Ok(self.buffer.iter().sum::<f64>() / self.buffer.len() as f64)
    }

    pub fn should_query(&self) -> bool {
        match self.smoothed() {
            Ok(s) => s > self.threshold() && self.t > self.t_start,
            Err(_) => false,
        }
    }

    /// Clear the smoothing buffer and step counter for a new episode.
    pub fn restart_episode(&mut self) {
        self.buffer.clear();
        self.t = 0;
    }

    /// Set `omega` to the mean per-context uncertainty and restart the
    /// episode.
    pub fn update_threshold(&mut self, per_context_mean_sigmas: &[f64]) -> Result<()> {
        if per_context_mean_sigmas.is_empty() {
            return Err(LfdError::invalid("no trained contexts to average over"));
        }
        if per_context_mean_sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(LfdError::invalid("per-context uncertainties must be finite and >= 0"));
        }
        // sort first so the mean does not depend on the order contexts were trained in
        let mut sorted = per_context_mean_sigmas.to_vec();
        sorted.sort_by(f64::total_cmp);
        self.omega = sorted.iter().sum::<f64>() / sorted.len() as f64;
        self.restart_episode();
        Ok(())
    }
}

/// One row of the per-step detector trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorTraceRow {
    pub t: usize,
    pub sigma_t: f64,
    pub smoothed: f64,
    pub threshold: f64,
    pub fired: bool,
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[DetectorTraceRow]) -> std::io::Result<()> {
    writeln!(w, "t,sigma_t,smoothed,c_omega,fired")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.t, r.sigma_t, r.smoothed, r.threshold, r.fired as u8
        )?;
    }
    Ok(())
}
