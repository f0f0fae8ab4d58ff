//! The car-following decision block and the IDM baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward_step, LstmMemory, NetworkParams};
use crate::state::{features, integrate_step, ObservationFeatures, VehicleState};

/// Braking floor for IDM (m/s²). The raw interaction term is unbounded as the
/// gap closes.
pub const IDM_EMERGENCY_DECEL: f64 = 8.0;

/// One decision step: next acceleration from the follower's state, its
/// leader's state and the follower's memory.
///
/// Memory is owned by the caller and threaded through explicitly, so a single
/// model value can drive any number of vehicles.
pub trait CarFollowingModel {
    type Memory: Clone;

    fn initial_memory(&self) -> Self::Memory;

    fn decide(
        &self,
        follower: &VehicleState,
        leader: &VehicleState,
        memory: &Self::Memory,
    ) -> Result<(f64, Self::Memory)>;
}

/// Advances the follower by one decision step with `model`.
pub fn step_block<M: CarFollowingModel + ?Sized>(
    model: &M,
    follower: &VehicleState,
    leader: &VehicleState,
    memory: &M::Memory,
    dt: f64,
) -> Result<(VehicleState, M::Memory)> {
    let (a_next, memory) = model.decide(follower, leader, memory)?;
    let next = integrate_step(follower, a_next, dt)?;
    Ok((next, memory))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Maximum acceleration (m/s²).
    pub a_max: f64,
    /// Comfortable deceleration (m/s²).
    pub b: f64,
    /// Desired velocity (m/s).
    pub v0: f64,
    /// Jam gap (m).
    pub g_jam: f64,
    /// Safe time headway (s).
    pub t_headway: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 1.4,
            b: 2.0,
            v0: 30.0,
            g_jam: 2.0,
            t_headway: 1.5,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a_max", self.a_max),
            ("b", self.b),
            ("v0", self.v0),
            ("g_jam", self.g_jam),
            ("t_headway", self.t_headway),
            ("delta", self.delta),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("idm.{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Desired dynamic gap s*.
    fn desired_gap(&self, v_f: f64, dv: f64) -> f64 {
        let closing = -dv;
        self.g_jam + v_f * self.t_headway + v_f * closing / (2.0 * (self.a_max * self.b).sqrt())
    }

    /// Gap at which a follower travelling at `v` behind an equally fast
    /// leader neither accelerates nor brakes. Only defined for `0 <= v < v0`.
    pub fn equilibrium_gap(&self, v: f64) -> Option<f64> {
        if !(0.0..self.v0).contains(&v) {
            return None;
        }
        let free = 1.0 - (v / self.v0).powf(self.delta);
        Some(self.desired_gap(v, 0.0) / free.sqrt())
    }

    /// Scales every parameter except `delta` by the matching factor.
    pub fn scaled(&self, factors: [f64; 5]) -> Self {
        Self {
            a_max: self.a_max * factors[0],
            b: self.b * factors[1],
            v0: self.v0 * factors[2],
            g_jam: self.g_jam * factors[3],
            t_headway: self.t_headway * factors[4],
            delta: self.delta,
        }
    }
}

/// IDM acceleration, clamped to `[-IDM_EMERGENCY_DECEL, a_max]`.
pub fn idm_acceleration(obs: &ObservationFeatures, p: &IdmParams) -> f64 {
    let s_star = p.desired_gap(obs.v_f, obs.dv);
    let free = (obs.v_f / p.v0).powf(p.delta);
    let interaction = (s_star / obs.dx).powi(2);
    let a = p.a_max * (1.0 - free - interaction);
    a.clamp(-IDM_EMERGENCY_DECEL, p.a_max)
}

impl CarFollowingModel for IdmParams {
    type Memory = ();

    fn initial_memory(&self) {}

    fn decide(&self, follower: &VehicleState, leader: &VehicleState, _: &()) -> Result<(f64, ())> {
        if !follower.is_finite() || !leader.is_finite() {
            return Err(Error::non_finite("idm input state"));
        }
        Ok((idm_acceleration(&features(follower, leader), self), ()))
    }
}

/// The LSTM car-following function; memory is the stacked hidden/cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub params: NetworkParams,
}

impl LstmModel {
    pub fn new(params: NetworkParams) -> Self {
        Self { params }
    }
}

impl CarFollowingModel for LstmModel {
    type Memory = LstmMemory;

    fn initial_memory(&self) -> LstmMemory {
        LstmMemory::zeros(self.params.hidden_sizes())
    }

    fn decide(&self, follower: &VehicleState, leader: &VehicleState, memory: &LstmMemory) -> Result<(f64, LstmMemory)> {
        forward_step(&self.params, &features(follower, leader), memory)
    }
}

/// Runtime-selected model, for callers that pick the family from config.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Idm(IdmParams),
    Lstm(LstmModel),
}

#[derive(Debug, Clone)]
pub enum AnyMemory {
    None,
    Lstm(LstmMemory),
}

impl CarFollowingModel for AnyModel {
    type Memory = AnyMemory;

    fn initial_memory(&self) -> AnyMemory {
        match self {
            AnyModel::Idm(_) => AnyMemory::None,
            AnyModel::Lstm(m) => AnyMemory::Lstm(m.initial_memory()),
        }
    }

    fn decide(&self, follower: &VehicleState, leader: &VehicleState, memory: &AnyMemory) -> Result<(f64, AnyMemory)> {
        match (self, memory) {
            (AnyModel::Idm(p), _) => p.decide(follower, leader, &()).map(|(a, ())| (a, AnyMemory::None)),
            (AnyModel::Lstm(m), AnyMemory::Lstm(h)) => {
                m.decide(follower, leader, h).map(|(a, h)| (a, AnyMemory::Lstm(h)))
            }
            (AnyModel::Lstm(_), AnyMemory::None) => Err(Error::Config("LSTM model driven with empty memory".into())),
        }
    }
}
