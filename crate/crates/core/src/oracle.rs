//! Policies: the common [`Policy`] interface, the energy-shaping swing-up
//! controller used as the default teacher, and MLP Q-network inference.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::sim::{Action, Observation, SimConfig};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite observation {0:?}")]
    NonFiniteObservation(Observation),
    #[error("mlp layer {layer}: {detail}")]
    Dimension { layer: usize, detail: String },
    #[error("mlp layer {layer}: non-finite parameter at index {index}")]
    NonFiniteWeight { layer: usize, index: usize },
    #[error("malformed mlp document: {0}")]
    Malformed(String),
    #[error("unsupported hidden activation {0:?}")]
    UnsupportedActivation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid oracle parameters: {0}")]
    InvalidParams(String),
}

/// A deterministic map from observations to actions.
pub trait Policy: Send + Sync {
    fn act(&self, obs: &Observation) -> Result<Action, PolicyError>;

    fn name(&self) -> String {
        "policy".into()
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, obs: &Observation) -> Result<Action, PolicyError> {
        (**self).act(obs)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&self, obs: &Observation) -> Result<Action, PolicyError> {
        (**self).act(obs)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// Never moves the cart.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoOpPolicy;

impl Policy for NoOpPolicy {
    fn act(&self, _obs: &Observation) -> Result<Action, PolicyError> {
        Ok(Action::NoOp)
    }

    fn name(&self) -> String {
        "noop".into()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Below these energy and speed levels the rod counts as hanging at rest and
/// the swing phase never idles. The hanging rest state has deficit 2.
const STALL_DEFICIT: f64 = 1.9;
const STALL_ANG_VEL_OBS: f64 = 0.5;
const STALL_CART_VEL_OBS: f64 = 0.25;

/// Gains and thresholds of the energy-shaping controller.
///
/// The balance law and the cart-centring terms act on observation-scaled
/// deviations: angle from upright divided by 180°, the angular-velocity
/// observable, and the normalised cart position and velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyOracleParams {
    /// Weight of the relative energy deficit in the pumping signal.
    pub energy_gain: f64,
    /// Angular distance from upright (degrees) inside which the balance law
    /// takes over.
    pub balance_angle_deg: f64,
    pub balance_gain_angle: f64,
    pub balance_gain_angvel: f64,
    pub balance_gain_pos: f64,
    pub balance_gain_vel: f64,
    /// Cart-centring gains mixed into the pumping signal.
    pub swing_gain_pos: f64,
    pub swing_gain_vel: f64,
    /// Signals with magnitude at or below this emit `NoOp`.
    pub deadband: f64,
    /// Normalised position beyond which an outward-moving cart is pushed
    /// back toward the centre.
    pub edge_margin: f64,
    /// Seconds of constant-velocity extrapolation applied to the cart
    /// position before the edge test.
    pub edge_lookahead_s: f64,
}

impl Default for EnergyOracleParams {
    fn default() -> Self {
        Self {
            energy_gain: 1.614,
            balance_angle_deg: 33.34,
            balance_gain_angle: 23.8,
            balance_gain_angvel: 1.641,
            balance_gain_pos: -0.084,
            balance_gain_vel: -0.701,
            swing_gain_pos: 0.3429,
            swing_gain_vel: 1.39,
            deadband: 0.3097,
            edge_margin: 0.6139,
            edge_lookahead_s: 0.1704,
        }
    }
}

impl EnergyOracleParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.balance_angle_deg > 0.0 && self.balance_angle_deg < 90.0) {
            return Err(PolicyError::InvalidParams(format!(
                "balance_angle_deg must lie in (0, 90), got {}",
                self.balance_angle_deg
            )));
        }
        let finite = [
            self.energy_gain,
            self.balance_gain_angle,
            self.balance_gain_angvel,
            self.balance_gain_pos,
            self.balance_gain_vel,
            self.swing_gain_pos,
            self.swing_gain_vel,
            self.deadband,
            self.edge_margin,
            self.edge_lookahead_s,
        ];
        if finite.iter().any(|g| !g.is_finite()) {
            return Err(PolicyError::InvalidParams("gains must be finite".into()));
        }
        if self.deadband < 0.0 {
            return Err(PolicyError::InvalidParams("deadband must be >= 0".into()));
        }
        Ok(())
    }
}

/// Energy-shaping swing-up with a linear balance law near upright.
///
/// Far from upright a desired cart acceleration is formed from the energy
/// pump `-energy_gain * deficit * theta_dot * cos(theta)` (deficit relative
/// to the upright potential energy) plus cart-centring terms, converted to a
/// motor force through the rod model and quantised. From exact rest the tie
/// is broken toward `Right`. Within `balance_angle_deg` of upright a linear
/// state feedback takes over. Near the track ends an outward-moving cart is
/// always pushed back.
#[derive(Clone, Debug)]
pub struct EnergyOracle {
    params: EnergyOracleParams,
    sim: SimConfig,
}

impl EnergyOracle {
    pub fn new(params: EnergyOracleParams, sim: &SimConfig) -> Result<Self, PolicyError> {
        params.validate()?;
        sim.validate().map_err(|e| PolicyError::InvalidParams(e.to_string()))?;
        Ok(Self { params, sim: sim.clone() })
    }

    pub fn with_defaults(sim: &SimConfig) -> Result<Self, PolicyError> {
        Self::new(EnergyOracleParams::default(), sim)
    }

    pub fn params(&self) -> &EnergyOracleParams {
        &self.params
    }

    /// Rod energy deficit relative to the upright target, in units of the
    /// target.
    fn relative_energy_deficit(&self, theta: f64, theta_dot: f64) -> f64 {
        let target = self.sim.upright_energy();
        let energy = 0.5 * self.sim.pivot_inertia() * theta_dot * theta_dot - target * theta.cos();
        (target - energy) / target
    }

    /// Motor force that produces cart acceleration `accel` in the given state.
    fn force_for_acceleration(&self, accel: f64, theta: f64, theta_dot: f64, x_dot: f64) -> f64 {
        let s = &self.sim;
        let ml = s.pole_mass * 0.5 * s.pole_length;
        let (sin, cos) = theta.sin_cos();
        let theta_ddot =
            (-ml * cos * accel - ml * s.gravity * sin - s.pivot_friction * theta_dot) / s.pivot_inertia();
        (s.cart_mass + s.pole_mass) * accel + ml * cos * theta_ddot - ml * sin * theta_dot * theta_dot
            + s.cart_friction * x_dot
    }

    fn quantize(&self, signal: f64) -> Action {
        if signal > self.params.deadband {
            Action::Right
        } else if signal < -self.params.deadband {
            Action::Left
        } else {
            Action::NoOp
        }
    }

    pub fn energy_act(&self, obs: &Observation) -> Result<Action, PolicyError> {
        if !obs.is_finite() {
            return Err(PolicyError::NonFiniteObservation(*obs));
        }
        let p = &self.params;
        let theta = obs.u_norm * PI;
        let theta_dot = (obs.u_dot_obs * self.sim.ang_vel_obs_scale).to_radians();
        let x_dot = obs.y_dot_obs * self.sim.cart_vel_obs_scale * 1e-3;
        // signed distance from upright in units of 180 degrees
        let from_top = if obs.u_norm >= 0.0 { obs.u_norm - 1.0 } else { obs.u_norm + 1.0 };

        let y_ahead = obs.y_norm
            + obs.y_dot_obs * self.sim.cart_vel_obs_scale / self.sim.track_limit_mm * p.edge_lookahead_s;
        if y_ahead.abs() > p.edge_margin && y_ahead * obs.y_dot_obs >= 0.0 {
            return Ok(if y_ahead > 0.0 { Action::Left } else { Action::Right });
        }

        if from_top.abs() * 180.0 < p.balance_angle_deg {
            let signal = -(p.balance_gain_angle * from_top
                + p.balance_gain_angvel * obs.u_dot_obs
                + p.balance_gain_pos * obs.y_norm
                + p.balance_gain_vel * obs.y_dot_obs);
            return Ok(self.quantize(signal));
        }

        let deficit = self.relative_energy_deficit(theta, theta_dot);
        // cart acceleration a feeds the rod energy at rate -m l cos(theta) a theta_dot
        let pump = -p.energy_gain * deficit * theta_dot * theta.cos();
        let accel = pump - p.swing_gain_pos * obs.y_norm - p.swing_gain_vel * obs.y_dot_obs;
        let force = self.force_for_acceleration(accel, theta, theta_dot, x_dot);
        let action = self.quantize(force / self.sim.motor_force.max(f64::MIN_POSITIVE));
        let resting = deficit > STALL_DEFICIT
            && obs.u_dot_obs.abs() < STALL_ANG_VEL_OBS
            && obs.y_dot_obs.abs() < STALL_CART_VEL_OBS;
        if action == Action::NoOp && resting {
            // hanging nearly still: kick in the pumping direction, ties to Right
            return Ok(if pump < 0.0 { Action::Left } else { Action::Right });
        }
        Ok(action)
    }
}

impl Policy for EnergyOracle {
    fn act(&self, obs: &Observation) -> Result<Action, PolicyError> {
        self.energy_act(obs)
    }

    fn name(&self) -> String {
        "energy".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// One affine layer, weights stored row-major (`rows` outputs × `cols`
/// inputs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.cols).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b
        }));
    }
}

/// Feed-forward Q-network: tanh on every hidden layer, linear output of
/// three Q-values, greedy action by argmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpPolicy {
    pub input_size: usize,
    pub hidden_activation: Activation,
    pub layers: Vec<DenseLayer>,
}

#[derive(Deserialize)]
struct RawMlp {
    input_size: usize,
    hidden_activation: String,
    layers: Vec<DenseLayer>,
}

impl MlpPolicy {
    pub fn new(input_size: usize, layers: Vec<DenseLayer>) -> Result<Self, PolicyError> {
        let p = Self { input_size, hidden_activation: Activation::Tanh, layers };
        p.validate()?;
        Ok(p)
    }

    /// Zero network with the given layer widths, e.g. `[4, 64, 64, 3]`.
    pub fn zeros(widths: &[usize]) -> Result<Self, PolicyError> {
        if widths.len() < 2 {
            return Err(PolicyError::Malformed("need at least input and output widths".into()));
        }
        let layers = widths.windows(2).map(|w| DenseLayer::zeros(w[1], w[0])).collect();
        Self::new(widths[0], layers)
    }

    /// Seeded network with uniform Glorot-scaled weights and zero biases.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(widths)?;
        let mut rng = seeding::rng(seed);
        for l in &mut p.layers {
            let limit = (6.0 / (l.rows + l.cols) as f64).sqrt();
            l.weights.iter_mut().for_each(|w| *w = rng.random_range(-limit..=limit));
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.layers.is_empty() {
            return Err(PolicyError::Malformed("no layers".into()));
        }
        let mut width = self.input_size;
        for (k, l) in self.layers.iter().enumerate() {
            if l.cols != width {
                return Err(PolicyError::Dimension {
                    layer: k,
                    detail: format!("expects {} inputs, previous width is {width}", l.cols),
                });
            }
            if l.weights.len() != l.rows * l.cols {
                return Err(PolicyError::Dimension {
                    layer: k,
                    detail: format!("{} weights for a {}x{} matrix", l.weights.len(), l.rows, l.cols),
                });
            }
            if l.bias.len() != l.rows {
                return Err(PolicyError::Dimension {
                    layer: k,
                    detail: format!("bias length {} for {} rows", l.bias.len(), l.rows),
                });
            }
            if let Some(index) = l.weights.iter().chain(&l.bias).position(|v| !v.is_finite()) {
                return Err(PolicyError::NonFiniteWeight { layer: k, index });
            }
            width = l.rows;
        }
        if width != Action::ALL.len() {
            return Err(PolicyError::Dimension {
                layer: self.layers.len() - 1,
                detail: format!("output width {width}, expected 3 Q-values"),
            });
        }
        Ok(())
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.rows * l.cols + l.rows).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if input.len() != self.input_size {
            return Err(PolicyError::Dimension {
                layer: 0,
                detail: format!("input has {} values, expected {}", input.len(), self.input_size),
            });
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k != last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn q_values(&self, obs: &Observation) -> Result<[f64; 3], PolicyError> {
        let q = self.forward(&obs.to_array())?;
        Ok([q[0], q[1], q[2]])
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let raw: RawMlp = serde_json::from_str(text).map_err(|e| PolicyError::Malformed(e.to_string()))?;
        let hidden_activation = match raw.hidden_activation.as_str() {
            "tanh" => Activation::Tanh,
            other => return Err(PolicyError::UnsupportedActivation(other.into())),
        };
        let p = Self { input_size: raw.input_size, hidden_activation, layers: raw.layers };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mlp serialization is infallible")
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PolicyError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json())
            .map_err(|source| PolicyError::Io { path: path.display().to_string(), source })
    }
}

impl Policy for MlpPolicy {
    fn act(&self, obs: &Observation) -> Result<Action, PolicyError> {
        if !obs.is_finite() {
            return Err(PolicyError::NonFiniteObservation(*obs));
        }
        let q = self.q_values(obs)?;
        Ok(Action::from_index(argmax_lowest(&q)).expect("three Q-values"))
    }

    fn name(&self) -> String {
        format!("mlp({} params)", self.count_params())
    }
}
