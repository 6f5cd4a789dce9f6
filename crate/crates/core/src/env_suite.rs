//! Simulated task contexts and their expert demonstrators.
//!
//! Two families are provided: a frictionless double integrator (point mass on
//! a line) and a damped torque-driven pendulum that must be swung up. A
//! context hides its physical parameters from the learner; only the expert
//! knows them.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix1, Matrix2, Vector2};
use rand::Rng;

use crate::error::{LfdError, Result};
use crate::policy::{Controller, Observation, PredictiveOutput};

pub const GRAVITY: f64 = 9.81;

/// Riccati iteration stops once successive iterates differ by less than this
/// in max-norm.
pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITER: usize = 100_000;
/// Lower bound on the action cost used by the LQR design.
pub const MIN_ACTION_COST: f64 = 1e-3;

/// Swing-up hands over to LQR inside this region around upright.
pub const CAPTURE_ANGLE: f64 = 0.3;
pub const CAPTURE_RATE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextKind {
    DoubleIntegrator,
    Pendulum,
}

impl ContextKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContextKind::DoubleIntegrator => "double_integrator",
            ContextKind::Pendulum => "pendulum",
        }
    }
}

impl std::str::FromStr for ContextKind {
    type Err = LfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double_integrator" | "integrator" => Ok(ContextKind::DoubleIntegrator),
            "pendulum" => Ok(ContextKind::Pendulum),
            other => Err(LfdError::invalid(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    /// kg
    pub mass: f64,
    /// m, pendulum only
    pub length: f64,
    /// N·m·s, pendulum only
    pub damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub pos: f64,
    pub vel: f64,
    pub act: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            pos: 1.0,
            vel: 0.1,
            act: 0.001,
        }
    }
}

/// A hidden task variant: dynamics, reward and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub id: String,
    pub kind: ContextKind,
    pub dynamics: Dynamics,
    pub dt: f64,
    pub horizon: usize,
    pub reward: RewardWeights,
    pub action_limit: f64,
}

pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_HORIZON: usize = 200;
pub const INTEGRATOR_ACTION_LIMIT: f64 = 10.0;
/// Pendulum torque limit as a fraction of the static gravity torque `m g l`.
pub const PENDULUM_TORQUE_FRACTION: f64 = 0.8;
pub const PENDULUM_DAMPING: f64 = 0.05;

pub const INTEGRATOR_MASSES: [f64; 8] = [0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
pub const PENDULUM_MASSES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
pub const PENDULUM_LENGTHS: [f64; 2] = [0.5, 1.0];

impl Context {
    pub fn double_integrator(id: impl Into<String>, mass: f64) -> Self {
        Self {
            id: id.into(),
            kind: ContextKind::DoubleIntegrator,
            dynamics: Dynamics {
                mass,
                length: 0.0,
                damping: 0.0,
            },
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            reward: RewardWeights::default(),
            action_limit: INTEGRATOR_ACTION_LIMIT,
        }
    }

    pub fn pendulum(id: impl Into<String>, mass: f64, length: f64) -> Self {
        Self {
            id: id.into(),
            kind: ContextKind::Pendulum,
            dynamics: Dynamics {
                mass,
                length,
                damping: PENDULUM_DAMPING,
            },
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            reward: RewardWeights::default(),
            action_limit: PENDULUM_TORQUE_FRACTION * mass * GRAVITY * length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dynamics;
        if !(d.mass > 0.0) {
            return Err(LfdError::invalid(format!("{}: mass must be > 0", self.id)));
        }
        if self.kind == ContextKind::Pendulum && !(d.length > 0.0) {
            return Err(LfdError::invalid(format!("{}: length must be > 0", self.id)));
        }
        if !(self.dt > 0.0) || self.horizon == 0 || !(self.action_limit > 0.0) {
            return Err(LfdError::invalid(format!(
                "{}: dt, horizon and action_limit must be positive",
                self.id
            )));
        }
        let w = &self.reward;
        if w.pos < 0.0 || w.vel < 0.0 || w.act < 0.0 {
            return Err(LfdError::invalid(format!("{}: negative reward weight", self.id)));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn action_dim(&self) -> usize {
        1
    }

    pub fn clip(&self, a: f64) -> f64 {
        a.clamp(-self.action_limit, self.action_limit)
    }

    /// Position error term of the reward: distance to the goal.
    pub fn goal_error(&self, s: &State) -> f64 {
        match self.kind {
            ContextKind::DoubleIntegrator => s.pos,
            ContextKind::Pendulum => wrap_angle(s.pos - PI),
        }
    }

    pub fn reward(&self, s: &State, a: f64) -> f64 {
        let p = self.goal_error(s);
        let w = &self.reward;
        -(w.pos * p * p + w.vel * s.vel * s.vel + w.act * a * a)
    }
}

/// The eight double-integrator contexts used by the experiments, ids `di-0..7`.
pub fn integrator_family() -> Vec<Context> {
    INTEGRATOR_MASSES
        .iter()
        .enumerate()
        .map(|(i, &m)| Context::double_integrator(format!("di-{i}"), m))
        .collect()
}

pub fn pendulum_family() -> Vec<Context> {
    let mut out = Vec::new();
    for &l in &PENDULUM_LENGTHS {
        for &m in &PENDULUM_MASSES {
            let i = out.len();
            out.push(Context::pendulum(format!("pend-{i}"), m, l));
        }
    }
    out
}

/// Generalized position and velocity: `(x, v)` for the integrator,
/// `(theta, theta_dot)` for the pendulum with `theta = 0` hanging down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub pos: f64,
    pub vel: f64,
}

impl State {
    pub fn new(pos: f64, vel: f64) -> Self {
        Self { pos, vel }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.pos, self.vel]
    }

    fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.vel.is_finite()
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Advance one step of semi-implicit Euler. The action is clipped to the
/// context's limit before integration; the returned reward uses the clipped
/// action and the pre-step state.
pub fn step(ctx: &Context, s: &State, action: &[f64]) -> Result<(State, f64)> {
    let a = ctx.clip(action[0]);
    let reward = ctx.reward(s, a);
    let d = &ctx.dynamics;
    let next = match ctx.kind {
        ContextKind::DoubleIntegrator => {
            let vel = s.vel + (a / d.mass) * ctx.dt;
            State::new(s.pos + vel * ctx.dt, vel)
        }
        ContextKind::Pendulum => {
            let inertia = d.mass * d.length * d.length;
            let acc = -(GRAVITY / d.length) * s.pos.sin() - (d.damping / inertia) * s.vel
                + a / inertia;
            let vel = s.vel + acc * ctx.dt;
            State::new(wrap_angle(s.pos + vel * ctx.dt), vel)
        }
    };
    if !next.is_finite() || !reward.is_finite() {
        return Err(LfdError::SimulationDiverged {
            context: ctx.id.clone(),
            step: 0,
        });
    }
    Ok((next, reward))
}

pub fn reset<R: Rng + ?Sized>(ctx: &Context, rng: &mut R) -> State {
    match ctx.kind {
        ContextKind::DoubleIntegrator => {
            let pos = rng.random_range(-2.0..=2.0);
            let vel = rng.random_range(-0.5..=0.5);
            State::new(pos, vel)
        }
        ContextKind::Pendulum => {
            let pos = rng.random_range(-0.05..=0.05);
            let vel = rng.random_range(-0.05..=0.05);
            State::new(pos, vel)
        }
    }
}

/// Total mechanical energy of the pendulum, zero potential at the pivot.
pub fn pendulum_energy(ctx: &Context, s: &State) -> f64 {
    let d = &ctx.dynamics;
    0.5 * d.mass * d.length * d.length * s.vel * s.vel - d.mass * GRAVITY * d.length * s.pos.cos()
}

/// Discrete linearization `(A, B)` of the semi-implicit Euler update, in
/// coordinates relative to the goal (origin / upright).
pub fn linearize(ctx: &Context) -> (Matrix2<f64>, Vector2<f64>) {
    let d = &ctx.dynamics;
    let dt = ctx.dt;
    // v' = alpha*p + (1 + dt*beta)... written as acc = alpha*p + beta*v + gamma*a
    let (alpha, beta, gamma) = match ctx.kind {
        ContextKind::DoubleIntegrator => (0.0, 0.0, 1.0 / d.mass),
        ContextKind::Pendulum => {
            let inertia = d.mass * d.length * d.length;
            (GRAVITY / d.length, -d.damping / inertia, 1.0 / inertia)
        }
    };
    let a = Matrix2::new(
        1.0 + dt * dt * alpha,
        dt * (1.0 + dt * beta),
        dt * alpha,
        1.0 + dt * beta,
    );
    let b = Vector2::new(dt * dt * gamma, dt * gamma);
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrGain {
    /// Feedback `a = -k . (p, v)`.
    pub k: [f64; 2],
    pub cost_to_go: Matrix2<f64>,
    pub iterations: usize,
}

/// Discrete-time LQR by fixed-point iteration of the Riccati recursion,
/// starting from `P = Q`.
pub fn lqr_gain(a: &Matrix2<f64>, b: &Vector2<f64>, q: &Matrix2<f64>, r: f64) -> Result<LqrGain> {
    let r = Matrix1::new(r);
    let mut p = *q;
    for it in 1..=RICCATI_MAX_ITER {
        let bt_p = b.transpose() * p;
        let s = r + bt_p * b;
        let k = (bt_p * a) / s[(0, 0)];
        let next = a.transpose() * p * a - a.transpose() * p * b * k + q;
        let delta = (next - p).abs().max();
        p = next;
        if !delta.is_finite() {
            break;
        }
        if delta < RICCATI_TOL {
            let bt_p = b.transpose() * p;
            let k = (bt_p * a) / (r + bt_p * b)[(0, 0)];
            return Ok(LqrGain {
                k: [k[(0, 0)], k[(0, 1)]],
                cost_to_go: p,
                iterations: it,
            });
        }
    }
    Err(LfdError::RiccatiFailure {
        iterations: RICCATI_MAX_ITER,
    })
}

/// Spectral radius of a real 2x2 matrix.
pub fn spectral_radius(m: &Matrix2<f64>) -> f64 {
    let tr = m.trace();
    let det = m.determinant();
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        (tr / 2.0 + r).abs().max((tr / 2.0 - r).abs())
    } else {
        // complex pair, |lambda|^2 = det
        det.sqrt()
    }
}

/// LQR gain about the goal of `ctx` with `Q = diag(w_pos, w_vel)` and
/// `R = max(w_act, MIN_ACTION_COST)`.
pub fn solve_lqr(ctx: &Context) -> Result<LqrGain> {
    let (a, b) = linearize(ctx);
    let q = Matrix2::new(ctx.reward.pos, 0.0, 0.0, ctx.reward.vel);
    let r = ctx.reward.act.max(MIN_ACTION_COST);
    let gain = lqr_gain(&a, &b, &q, r)?;
    let closed = a - b * nalgebra::RowVector2::new(gain.k[0], gain.k[1]);
    if spectral_radius(&closed) >= 1.0 {
        return Err(LfdError::RiccatiFailure {
            iterations: gain.iterations,
        });
    }
    Ok(gain)
}

/// Programmatic demonstrator for one context.
#[derive(Debug, Clone)]
pub struct Expert {
    ctx: Context,
    gain: LqrGain,
    /// Swing-up energy gain (pendulum only).
    pub energy_gain: f64,
}

pub const DEFAULT_ENERGY_GAIN: f64 = 5.0;

impl Expert {
    pub fn new(ctx: &Context) -> Result<Self> {
        ctx.validate()?;
        Ok(Self {
            ctx: ctx.clone(),
            gain: solve_lqr(ctx)?,
            energy_gain: DEFAULT_ENERGY_GAIN,
        })
    }

    pub fn context(&self) -> &Context {
        &self.ctx
    }

    pub fn gain(&self) -> &LqrGain {
        &self.gain
    }

    pub fn action(&self, s: &State) -> f64 {
        let ctx = &self.ctx;
        let lqr = |p: f64, v: f64| -(self.gain.k[0] * p + self.gain.k[1] * v);
        let raw = match ctx.kind {
            ContextKind::DoubleIntegrator => lqr(s.pos, s.vel),
            ContextKind::Pendulum => {
                let err = ctx.goal_error(s);
                if err.abs() < CAPTURE_ANGLE && s.vel.abs() < CAPTURE_RATE {
                    lqr(err, s.vel)
                } else {
                    // dE/dt = a * theta_dot for a torque-driven pendulum, so
                    // pumping follows the sign of the angular velocity.
                    let d = &ctx.dynamics;
                    let target = d.mass * GRAVITY * d.length;
                    let gap = (target - pendulum_energy(ctx, s)) / target;
                    let dir = if s.vel >= 0.0 { 1.0 } else { -1.0 };
                    (self.energy_gain * gap).clamp(-1.0, 1.0) * ctx.action_limit * dir
                }
            }
        };
        ctx.clip(raw)
    }
}

/// Convenience wrapper: the expert's clipped action at `s`.
pub fn expert_action(ctx: &Context, s: &State) -> Result<Vec<f64>> {
    Ok(vec![Expert::new(ctx)?.action(s)])
}

impl Controller for Expert {
    fn act(&mut self, obs: &Observation<'_>) -> Result<PredictiveOutput> {
        let s = State::new(obs.state[0], obs.state[1]);
        Ok(PredictiveOutput::certain(vec![self.action(&s)]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// One episode of `(state, action, reward)` triples plus the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub context_id: String,
    pub steps: Vec<Transition>,
    pub terminal: State,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn episodic_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// CSV with columns `t,s1,s2,a1,r` and the context id in a leading comment.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# context={}", self.context_id)?;
        let adim = self.steps.first().map_or(1, |s| s.action.len());
        let mut header = String::from("t,s1,s2");
        for j in 1..=adim {
            header.push_str(&format!(",a{j}"));
        }
        header.push_str(",r");
        writeln!(w, "{header}")?;
        for (t, st) in self.steps.iter().enumerate() {
            write!(w, "{t},{},{}", st.state.pos, st.state.vel)?;
            for a in &st.action {
                write!(w, ",{a}")?;
            }
            writeln!(w, ",{}", st.reward)?;
        }
        Ok(())
    }
}

/// Roll the expert out for one full horizon from `start`.
pub fn expert_rollout(expert: &Expert, start: State) -> Result<Trajectory> {
    let ctx = expert.context();
    let mut s = start;
    let mut steps = Vec::with_capacity(ctx.horizon);
    for t in 0..ctx.horizon {
        let a = vec![expert.action(&s)];
        let (next, r) = step(ctx, &s, &a).map_err(|e| with_step(e, t))?;
        steps.push(Transition {
            state: s,
            action: a,
            reward: r,
        });
        s = next;
    }
    Ok(Trajectory {
        context_id: ctx.id.clone(),
        steps,
        terminal: s,
    })
}

pub(crate) fn with_step(err: LfdError, t: usize) -> LfdError {
    match err {
        LfdError::SimulationDiverged { context, .. } => {
            LfdError::SimulationDiverged { context, step: t }
        }
        other => other,
    }
}

/// `n_episodes` expert rollouts from fresh reset states.
pub fn get_demonstrations<R: Rng + ?Sized>(
    ctx: &Context,
    n_episodes: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if n_episodes == 0 {
        return Err(LfdError::invalid("n_episodes must be >= 1"));
    }
    let expert = Expert::new(ctx)?;
    (0..n_episodes)
        .map(|_| {
            let start = reset(ctx, rng);
            expert_rollout(&expert, start)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integrator_rest_is_fixed_point() {
        for m in [0.5, 1.0, 6.0] {
            let ctx = Context::double_integrator("a", m);
            let (s, _) = step(&ctx, &State::new(1.0, 0.0), &[0.0]).unwrap();
            assert_eq!(s, State::new(1.0, 0.0));
        }
    }

    #[test]
    fn integrator_hand_step() {
        let ctx = Context::double_integrator("a", 1.0);
        let (s, _) = step(&ctx, &State::new(1.0, 0.0), &[1.0]).unwrap();
        assert!((s.vel - 0.05).abs() < 1e-15);
        assert!((s.pos - 1.0025).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clipped_before_integration() {
        let ctx = Context::double_integrator("a", 1.0);
        let (big, r_big) = step(&ctx, &State::new(0.0, 0.0), &[1e6]).unwrap();
        let (lim, r_lim) = step(&ctx, &State::new(0.0, 0.0), &[ctx.action_limit]).unwrap();
        assert_eq!(big, lim);
        assert_eq!(r_big, r_lim);
    }

    #[test]
    fn pendulum_upright_is_equilibrium() {
        let ctx = Context::pendulum("p", 1.0, 1.0);
        let (s, r) = step(&ctx, &State::new(PI, 0.0), &[0.0]).unwrap();
        assert!((wrap_angle(s.pos - PI)).abs() < 1e-12);
        assert!(s.vel.abs() < 1e-12);
        assert!(r.abs() < 1e-20);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_is_divergence() {
        let ctx = Context::double_integrator("a", 1.0);
        let err = step(&ctx, &State::new(f64::NAN, 0.0), &[0.0]).unwrap_err();
        assert!(matches!(err, LfdError::SimulationDiverged { .. }));
    }

    #[test]
    fn reset_support_and_determinism() {
        let ctx = Context::double_integrator("a", 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let s = reset(&ctx, &mut rng);
            assert!((-2.0..=2.0).contains(&s.pos));
            assert!((-0.5..=0.5).contains(&s.vel));
        }
        let a = reset(&ctx, &mut ChaCha8Rng::seed_from_u64(9));
        let b = reset(&ctx, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let pend = Context::pendulum("p", 1.0, 1.0);
        for _ in 0..1000 {
            let s = reset(&pend, &mut rng);
            assert!(s.pos.abs() <= 0.05 + 1e-12 && s.vel.abs() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn lqr_scale_invariance() {
        let ctx = Context::double_integrator("a", 1.0);
        let (a, b) = linearize(&ctx);
        let q = Matrix2::new(1.0, 0.0, 0.0, 0.1);
        let k1 = lqr_gain(&a, &b, &q, 0.01).unwrap().k;
        let k2 = lqr_gain(&a, &b, &(q * 7.0), 0.07).unwrap().k;
        assert!((k1[0] - k2[0]).abs() < 1e-6 * k1[0].abs());
        assert!((k1[1] - k2[1]).abs() < 1e-6 * k1[1].abs());
    }

    #[test]
    fn expert_at_goal_is_zero() {
        let ctx = Context::double_integrator("a", 1.0);
        assert_eq!(expert_action(&ctx, &State::new(0.0, 0.0)).unwrap(), vec![0.0]);
        let pend = Context::pendulum("p", 1.0, 1.0);
        let a = expert_action(&pend, &State::new(PI, 0.0)).unwrap()[0];
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn demonstrations_have_full_length_and_bounded_actions() {
        let ctx = Context::double_integrator("a", 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let demos = get_demonstrations(&ctx, 3, &mut rng).unwrap();
        assert_eq!(demos.len(), 3);
        for d in &demos {
            assert_eq!(d.len(), 200);
            assert!(d.steps.iter().all(|s| s.action[0].abs() <= ctx.action_limit));
            assert!(d.steps.iter().all(|s| s.reward <= 0.0));
        }
        assert!(get_demonstrations(&ctx, 0, &mut rng).is_err());
    }

    #[test]
    fn mass_changes_next_state() {
        let a = Context::double_integrator("a", 1.0);
        let mut b = a.clone();
        b.dynamics.mass = 1.1;
        let s = State::new(0.3, -0.2);
        assert_ne!(step(&a, &s, &[2.0]).unwrap().0, step(&b, &s, &[2.0]).unwrap().0);
    }

    #[test]
    fn trajectory_csv_layout() {
        let ctx = Context::double_integrator("di-x", 1.0);
        let expert = Expert::new(&ctx).unwrap();
        let traj = expert_rollout(&expert, State::new(1.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# context=di-x"));
        assert_eq!(lines.next(), Some("t,s1,s2,a1,r"));
        assert_eq!(lines.count(), 200);
    }
}
