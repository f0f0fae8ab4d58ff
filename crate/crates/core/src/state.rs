//! Vehicle states, trajectories, platoons and the kinematic update every
//! car-following model shares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest gap (m) ever fed to a model. Overlapping vehicles are clamped here.
pub const DX_MIN: f64 = 0.1;

/// Decision interval used throughout the experiments (s).
pub const DEFAULT_DT: f64 = 0.5;

/// Kinematic state of one vehicle at one decision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position along the lane (m).
    pub x: f64,
    /// Velocity (m/s).
    pub v: f64,
    /// Acceleration (m/s²).
    pub a: f64,
}

impl VehicleState {
    pub const fn new(x: f64, v: f64, a: f64) -> Self {
        Self { x, v, a }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite() && self.a.is_finite()
    }
}

/// Inputs a car-following decision sees: follower speed, closing-speed sign
/// convention `dv = v_leader - v_follower`, and the (clamped) gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationFeatures {
    pub v_f: f64,
    pub dv: f64,
    pub dx: f64,
}

impl ObservationFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.v_f, self.dv, self.dx]
    }
}

/// Uniform-acceleration update of one decision step.
///
/// Velocity is clamped at zero; a vehicle that would reverse stops and holds
/// its position instead.
pub fn integrate_step(s: &VehicleState, a_next: f64, dt: f64) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("decision interval must be positive, got {dt}")));
    }
    if !s.is_finite() || !a_next.is_finite() {
        return Err(Error::non_finite("integrate_step input"));
    }
    let v_raw = s.v + a_next * dt;
    if v_raw < 0.0 {
        return Ok(VehicleState::new(s.x, 0.0, a_next));
    }
    Ok(VehicleState::new(s.x + v_raw * dt, v_raw, a_next))
}

/// Same update as [`integrate_step`], also reporting whether the velocity
/// clamp engaged. Training needs this: a clamped step has zero sensitivity to
/// the acceleration.
pub(crate) fn integrate_step_flagged(s: &VehicleState, a_next: f64, dt: f64) -> Result<(VehicleState, bool)> {
    let next = integrate_step(s, a_next, dt)?;
    Ok((next, s.v + a_next * dt < 0.0))
}

pub fn features(follower: &VehicleState, leader: &VehicleState) -> ObservationFeatures {
    ObservationFeatures {
        v_f: follower.v,
        dv: leader.v - follower.v,
        dx: (leader.x - follower.x).max(DX_MIN),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct Trajectory {
    vehicle_id: u64,
    t0: f64,
    dt: f64,
    states: Vec<VehicleState>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    vehicle_id: u64,
    t0: f64,
    dt: f64,
    states: Vec<VehicleState>,
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = Error;

    fn try_from(r: TrajectoryRepr) -> Result<Self> {
        Trajectory::new(r.vehicle_id, r.t0, r.dt, r.states)
    }
}

impl From<Trajectory> for TrajectoryRepr {
    fn from(t: Trajectory) -> Self {
        TrajectoryRepr {
            vehicle_id: t.vehicle_id,
            t0: t.t0,
            dt: t.dt,
            states: t.states,
        }
    }
}

impl Trajectory {
    pub fn new(vehicle_id: u64, t0: f64, dt: f64, states: Vec<VehicleState>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::Data(format!(
                "vehicle {vehicle_id}: invalid time base t0={t0}, dt={dt}"
            )));
        }
        if states.is_empty() {
            return Err(Error::Data(format!("vehicle {vehicle_id}: empty trajectory")));
        }
        if let Some(k) = states.iter().position(|s| !s.is_finite()) {
            return Err(Error::non_finite(format!("vehicle {vehicle_id} state {k}")));
        }
        if let Some(k) = states.iter().position(|s| s.v < 0.0) {
            return Err(Error::Data(format!(
                "vehicle {vehicle_id}: negative velocity at step {k}"
            )));
        }
        Ok(Self {
            vehicle_id,
            t0,
            dt,
            states,
        })
    }

    pub fn vehicle_id(&self) -> u64 {
        self.vehicle_id
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Time stamp of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.x)
    }
}

/// Ordered vehicles sharing one studied period; index 0 is the first leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlatoonRepr", into = "PlatoonRepr")]
pub struct Platoon {
    platoon_id: u64,
    lane: Option<u32>,
    trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct PlatoonRepr {
    platoon_id: u64,
    #[serde(default)]
    lane: Option<u32>,
    trajectories: Vec<Trajectory>,
}

impl TryFrom<PlatoonRepr> for Platoon {
    type Error = Error;

    fn try_from(r: PlatoonRepr) -> Result<Self> {
        Platoon::new(r.platoon_id, r.trajectories).map(|p| p.with_lane(r.lane))
    }
}

impl From<Platoon> for PlatoonRepr {
    fn from(p: Platoon) -> Self {
        PlatoonRepr {
            platoon_id: p.platoon_id,
            lane: p.lane,
            trajectories: p.trajectories,
        }
    }
}

impl Platoon {
    pub fn new(platoon_id: u64, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.len() < 2 {
            return Err(Error::Data(format!(
                "platoon {platoon_id}: needs at least 2 vehicles, got {}",
                trajectories.len()
            )));
        }
        let first = &trajectories[0];
        for tr in &trajectories[1..] {
            if tr.len() != first.len() || tr.dt != first.dt || tr.t0 != first.t0 {
                return Err(Error::Shape(format!(
                    "platoon {platoon_id}: vehicle {} does not share the leader's time base",
                    tr.vehicle_id
                )));
            }
        }
        for pair in trajectories.windows(2) {
            if !(pair[0].states[0].x > pair[1].states[0].x) {
                return Err(Error::Data(format!(
                    "platoon {platoon_id}: vehicle {} is not behind vehicle {} at t0",
                    pair[1].vehicle_id, pair[0].vehicle_id
                )));
            }
        }
        Ok(Self {
            platoon_id,
            lane: None,
            trajectories,
        })
    }

    pub fn with_lane(mut self, lane: Option<u32>) -> Self {
        self.lane = lane;
        self
    }

    pub fn platoon_id(&self) -> u64 {
        self.platoon_id
    }

    pub fn lane(&self) -> Option<u32> {
        self.lane
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn leader(&self) -> &Trajectory {
        &self.trajectories[0]
    }

    /// Number of vehicles, leader included.
    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    /// Number of decision steps (states per vehicle).
    pub fn steps(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.trajectories[0].dt
    }

    pub fn t0(&self) -> f64 {
        self.trajectories[0].t0
    }

    /// Splits into consecutive leader/follower pairs `(i-1, i)`.
    ///
    /// Pair ids are `platoon_id * 1000 + i`, which stays unique as long as
    /// platoons hold fewer than 1000 vehicles.
    pub fn pairs(&self) -> Vec<Platoon> {
        (1..self.size())
            .map(|i| Platoon {
                platoon_id: self.platoon_id * 1000 + i as u64,
                lane: self.lane,
                trajectories: vec![self.trajectories[i - 1].clone(), self.trajectories[i].clone()],
            })
            .collect()
    }

    /// Checks that `other` has the same vehicle count and step count.
    pub fn check_same_shape(&self, other: &Platoon) -> Result<()> {
        if self.size() != other.size() || self.steps() != other.steps() {
            return Err(Error::Shape(format!(
                "platoon {} is {}x{}, platoon {} is {}x{}",
                self.platoon_id,
                self.size(),
                self.steps(),
                other.platoon_id,
                other.size(),
                other.steps()
            )));
        }
        Ok(())
    }
}
