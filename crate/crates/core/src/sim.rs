//! Cart-pole swing-up environment.
//!
//! A uniform rigid rod pivots on a force-driven cart running on a straight
//! track. The pole angle `u` is measured in degrees with `0` hanging down and
//! `±180` upright; the cart position `y` is in millimetres from the track
//! centre. Each step holds one of three motor commands for `step_duration`
//! seconds, integrated with fixed-step RK4.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

/// Bonus reward granted on every step spent in the zenith region.
pub const ZENITH_BONUS: f64 = 10.0;
/// Normalised angle above which the pole counts as upright.
pub const ZENITH_ANGLE_NORM: f64 = 175.0 / 180.0;
/// Angular-velocity observable below which the pole counts as still.
pub const ZENITH_ANG_VEL_OBS: f64 = 6.0 / 40.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("step called before reset")]
    NotReset,
    #[error("step called on a finished episode (step {0})")]
    EpisodeFinished(usize),
    #[error("non-finite state component after integration: {0:?}")]
    NonFinite(SimState),
    #[error("integration interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("config file {path}: {source}")]
    ConfigFile {
        path: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Rod length in metres.
    pub pole_length: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub gravity: f64,
    /// Magnitude of the force applied for `Left` / `Right`, in newtons.
    pub motor_force: f64,
    /// Viscous cart friction in N·s/m.
    pub cart_friction: f64,
    /// Viscous pivot friction in N·m·s/rad.
    pub pivot_friction: f64,
    pub step_duration: f64,
    pub integrator_substeps: usize,
    pub track_limit_mm: f64,
    pub max_steps: usize,
    /// Safety limit on the angular-velocity observable.
    pub ang_vel_safety_limit: f64,
    /// Gaussian noise standard deviation per observable (observation units).
    pub sensor_noise_std: [f64; 4],
    pub action_delay_steps: usize,
    /// Divisor mapping deg/s to the angular-velocity observable.
    pub ang_vel_obs_scale: f64,
    /// Divisor mapping mm/s to the cart-velocity observable.
    pub cart_vel_obs_scale: f64,
    /// Gaussian perturbation of the rest state at reset, in state units
    /// (deg, deg/s, mm, mm/s).
    pub start_perturbation_std: [f64; 4],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pole_length: 0.975,
            cart_mass: 1.0,
            pole_mass: 0.3,
            gravity: 9.81,
            motor_force: 8.0,
            cart_friction: 0.5,
            pivot_friction: 0.003,
            step_duration: 0.1,
            integrator_substeps: 20,
            track_limit_mm: 390.0,
            max_steps: 1000,
            ang_vel_safety_limit: 100.0,
            sensor_noise_std: [0.0; 4],
            action_delay_steps: 0,
            ang_vel_obs_scale: 40.0,
            cart_vel_obs_scale: 390.0,
            start_perturbation_std: [0.0; 4],
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("pole_length", self.pole_length),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("step_duration", self.step_duration),
            ("track_limit_mm", self.track_limit_mm),
            ("ang_vel_obs_scale", self.ang_vel_obs_scale),
            ("cart_vel_obs_scale", self.cart_vel_obs_scale),
            ("ang_vel_safety_limit", self.ang_vel_safety_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("gravity", self.gravity),
            ("motor_force", self.motor_force),
            ("cart_friction", self.cart_friction),
            ("pivot_friction", self.pivot_friction),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.integrator_substeps == 0 {
            return Err(SimError::InvalidConfig("integrator_substeps must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(SimError::InvalidConfig("max_steps must be >= 1".into()));
        }
        for v in self.sensor_noise_std.iter().chain(&self.start_perturbation_std) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "noise and perturbation standard deviations must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| SimError::ConfigFile {
            path: "<inline>".into(),
            source: Box::new(e),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let wrap = |e: Box<dyn std::error::Error + Send + Sync>| SimError::ConfigFile {
            path: path.display().to_string(),
            source: e,
        };
        let text = std::fs::read_to_string(path).map_err(|e| wrap(Box::new(e)))?;
        let cfg: SimConfig = serde_json::from_str(&text).map_err(|e| wrap(Box::new(e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn half_length(&self) -> f64 {
        0.5 * self.pole_length
    }

    /// Moment of inertia of the rod about the pivot.
    pub fn pivot_inertia(&self) -> f64 {
        self.pole_mass * self.pole_length * self.pole_length / 3.0
    }

    /// Potential energy of the upright pole relative to the pivot height.
    pub fn upright_energy(&self) -> f64 {
        self.pole_mass * self.gravity * self.half_length()
    }

    /// Total mechanical energy (cart + rod) in joules, potential referenced
    /// to the pivot height.
    pub fn mechanical_energy(&self, s: &SimState) -> f64 {
        let q = PhysState::from_state(s);
        let m = self.pole_mass;
        let l = self.half_length();
        let total = self.cart_mass + m;
        let kinetic = 0.5 * total * q.x_dot * q.x_dot
            + m * l * q.theta.cos() * q.x_dot * q.theta_dot
            + 0.5 * self.pivot_inertia() * q.theta_dot * q.theta_dot;
        kinetic - m * self.gravity * l * q.theta.cos()
    }

    /// Small-oscillation period about the hanging equilibrium for a free,
    /// frictionless cart.
    pub fn small_angle_period(&self) -> f64 {
        let m = self.pole_mass;
        let l = self.half_length();
        let reduced = self.pivot_inertia() - (m * l) * (m * l) / (self.cart_mass + m);
        let effective_length = reduced / (m * l);
        2.0 * PI * (effective_length / self.gravity).sqrt()
    }

    pub fn observe(&self, s: &SimState) -> Observation {
        Observation {
            u_norm: s.u / 180.0,
            u_dot_obs: s.u_dot / self.ang_vel_obs_scale,
            y_norm: s.y / self.track_limit_mm,
            y_dot_obs: s.y_dot / self.cart_vel_obs_scale,
        }
    }
}

/// Ground-truth physical state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Pole angle in degrees, 0 hanging down, ±180 upright.
    pub u: f64,
    /// Angular velocity in deg/s.
    pub u_dot: f64,
    /// Cart position in mm from the track centre.
    pub y: f64,
    /// Cart velocity in mm/s.
    pub y_dot: f64,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.u_dot.is_finite() && self.y.is_finite() && self.y_dot.is_finite()
    }

    /// Returns the state with `u` wrapped into `[-180, 180]`.
    pub fn wrapped(mut self) -> Self {
        self.u = wrap_degrees(self.u);
        self
    }
}

pub fn wrap_degrees(u: f64) -> f64 {
    if (-180.0..=180.0).contains(&u) {
        return u;
    }
    let w = (u + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid maps +180 to -180; keep the sign of the input at the seam.
    if w == -180.0 && u > 0.0 {
        180.0
    } else {
        w
    }
}

/// The 4-vector delivered to policies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u_norm: f64,
    pub u_dot_obs: f64,
    pub y_norm: f64,
    pub y_dot_obs: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; 4] {
        [self.u_norm, self.u_dot_obs, self.y_norm, self.y_dot_obs]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { u_norm: a[0], u_dot_obs: a[1], y_norm: a[2], y_dot_obs: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Left = 0,
    NoOp = 1,
    Right = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::NoOp, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Sign of the motor force.
    pub fn direction(self) -> f64 {
        match self {
            Action::Left => -1.0,
            Action::NoOp => 0.0,
            Action::Right => 1.0,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub in_zenith: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Reward for a ground-truth state: angle term times position term, plus
/// the zenith bonus.
pub fn reward_fn(state: &SimState, cfg: &SimConfig) -> f64 {
    let angle = 0.5 * (1.0 - (state.u * PI / 180.0).cos());
    let position = (PI / 2.0 * state.y / cfg.track_limit_mm).cos();
    let bonus = if is_zenith(state, cfg) { ZENITH_BONUS } else { 0.0 };
    angle * position + bonus
}

/// Zenith region, evaluated on normalised observables.
pub fn is_zenith(state: &SimState, cfg: &SimConfig) -> bool {
    let obs = cfg.observe(state);
    obs.u_norm.abs() > ZENITH_ANGLE_NORM && obs.u_dot_obs.abs() < ZENITH_ANG_VEL_OBS
}

/// SI-unit generalised coordinates used by the integrator.
#[derive(Clone, Copy, Debug)]
struct PhysState {
    theta: f64,
    theta_dot: f64,
    x: f64,
    x_dot: f64,
}

impl PhysState {
    fn from_state(s: &SimState) -> Self {
        Self {
            theta: s.u.to_radians(),
            theta_dot: s.u_dot.to_radians(),
            x: s.y * 1e-3,
            x_dot: s.y_dot * 1e-3,
        }
    }

    fn to_state(self) -> SimState {
        SimState {
            u: self.theta.to_degrees(),
            u_dot: self.theta_dot.to_degrees(),
            y: self.x * 1e3,
            y_dot: self.x_dot * 1e3,
        }
    }

    fn axpy(self, h: f64, d: Deriv) -> Self {
        Self {
            theta: self.theta + h * d.theta,
            theta_dot: self.theta_dot + h * d.theta_dot,
            x: self.x + h * d.x,
            x_dot: self.x_dot + h * d.x_dot,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Deriv {
    theta: f64,
    theta_dot: f64,
    x: f64,
    x_dot: f64,
}

/// Equations of motion: the 2×2 mass matrix of (cart, rod) solved for the
/// accelerations.
fn derivative(cfg: &SimConfig, q: PhysState, force: f64) -> Deriv {
    let m = cfg.pole_mass;
    let ml = m * cfg.half_length();
    let total = cfg.cart_mass + m;
    let inertia = cfg.pivot_inertia();
    let (sin, cos) = q.theta.sin_cos();

    let rhs_cart = force - cfg.cart_friction * q.x_dot + ml * sin * q.theta_dot * q.theta_dot;
    let rhs_rod = -ml * cfg.gravity * sin - cfg.pivot_friction * q.theta_dot;
    let coupling = ml * cos;
    let det = total * inertia - coupling * coupling;

    Deriv {
        theta: q.theta_dot,
        theta_dot: (total * rhs_rod - coupling * rhs_cart) / det,
        x: q.x_dot,
        x_dot: (inertia * rhs_cart - coupling * rhs_rod) / det,
    }
}

fn rk4_step(cfg: &SimConfig, q: PhysState, force: f64, h: f64) -> PhysState {
    let k1 = derivative(cfg, q, force);
    let k2 = derivative(cfg, q.axpy(0.5 * h, k1), force);
    let k3 = derivative(cfg, q.axpy(0.5 * h, k2), force);
    let k4 = derivative(cfg, q.axpy(h, k3), force);
    let comb = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) / 6.0;
    q.axpy(
        h,
        Deriv {
            theta: comb(k1.theta, k2.theta, k3.theta, k4.theta),
            theta_dot: comb(k1.theta_dot, k2.theta_dot, k3.theta_dot, k4.theta_dot),
            x: comb(k1.x, k2.x, k3.x, k4.x),
            x_dot: comb(k1.x_dot, k2.x_dot, k3.x_dot, k4.x_dot),
        },
    )
}

/// Advances `state` by `dt` seconds under a constant cart force with RK4.
///
/// The substep length is `step_duration / integrator_substeps`; intervals
/// that are not a whole multiple use the next larger count of equal
/// substeps. The angle is not wrapped.
pub fn integrate(cfg: &SimConfig, state: &SimState, force: f64, dt: f64) -> Result<SimState, SimError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::BadInterval(dt));
    }
    if !state.is_finite() {
        return Err(SimError::NonFinite(*state));
    }
    let nominal = cfg.step_duration / cfg.integrator_substeps.max(1) as f64;
    let n = ((dt / nominal) - 1e-9).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut q = PhysState::from_state(state);
    for _ in 0..n {
        q = rk4_step(cfg, q, force, h);
    }
    let out = q.to_state();
    if !out.is_finite() {
        return Err(SimError::NonFinite(out));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Unset,
    Running,
    Finished,
}

/// Stateful simulator instance. `reset` must be called before `step`.
#[derive(Clone, Debug)]
pub struct CartPoleSwingUp {
    cfg: SimConfig,
    state: SimState,
    steps: usize,
    phase: Phase,
    rng: ChaCha8Rng,
    pending: VecDeque<Action>,
}

impl CartPoleSwingUp {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: SimState::default(),
            steps: 0,
            phase: Phase::Unset,
            rng: seeding::rng(0),
            pending: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Overwrites the ground-truth state of a running episode.
    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        self.rng = seeding::rng(seed);
        let mut s = SimState::default();
        let p = self.cfg.start_perturbation_std;
        if p.iter().any(|v| *v > 0.0) {
            let mut draw = |std: f64| gaussian(&mut self.rng, std);
            s.u = draw(p[0]);
            s.u_dot = draw(p[1]);
            s.y = draw(p[2]);
            s.y_dot = draw(p[3]);
            s = s.wrapped();
        }
        self.state = s;
        self.steps = 0;
        self.phase = Phase::Running;
        self.pending = std::iter::repeat_n(Action::NoOp, self.cfg.action_delay_steps).collect();
        self.noisy_observation()
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, SimError> {
        match self.phase {
            Phase::Unset => return Err(SimError::NotReset),
            Phase::Finished => return Err(SimError::EpisodeFinished(self.steps)),
            Phase::Running => {}
        }
        let applied = if self.cfg.action_delay_steps == 0 {
            action
        } else {
            self.pending.push_back(action);
            self.pending.pop_front().unwrap_or(Action::NoOp)
        };
        let force = applied.direction() * self.cfg.motor_force;
        let next = integrate(&self.cfg, &self.state, force, self.cfg.step_duration);
        let next = match next {
            Ok(s) => s.wrapped(),
            Err(e) => {
                self.phase = Phase::Finished;
                return Err(e);
            }
        };
        self.state = next;
        self.steps += 1;

        let truth = self.cfg.observe(&next);
        let reward = reward_fn(&next, &self.cfg);
        let in_zenith = is_zenith(&next, &self.cfg);
        let terminated = next.y.abs() > self.cfg.track_limit_mm
            || truth.u_dot_obs.abs() > self.cfg.ang_vel_safety_limit;
        let truncated = !terminated && self.steps >= self.cfg.max_steps;
        if terminated || truncated {
            self.phase = Phase::Finished;
        }
        Ok(StepResult {
            observation: self.noisy_observation(),
            reward,
            terminated,
            truncated,
            in_zenith,
        })
    }

    fn noisy_observation(&mut self) -> Observation {
        let mut obs = self.cfg.observe(&self.state).to_array();
        let noise = self.cfg.sensor_noise_std;
        if noise.iter().any(|v| *v > 0.0) {
            for (o, std) in obs.iter_mut().zip(noise) {
                *o += gaussian(&mut self.rng, std);
            }
        }
        Observation::from_array(obs)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// One row of a trajectory dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub state: SimState,
    pub action: Action,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub in_zenith: bool,
}

pub const TRAJECTORY_HEADER: [&str; 10] =
    ["step", "u", "u_dot", "y", "y_dot", "action", "reward", "terminated", "truncated", "in_zenith"];

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SimError::Io(std::io::Error::other(e));
    w.write_record(TRAJECTORY_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.state.u.to_string(),
            r.state.u_dot.to_string(),
            r.state.y.to_string(),
            r.state.y_dot.to_string(),
            r.action.index().to_string(),
            r.reward.to_string(),
            r.terminated.to_string(),
            r.truncated.to_string(),
            r.in_zenith.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
