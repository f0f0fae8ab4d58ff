//! Synthetic platoons: a leader following a speed profile and IDM followers
//! with jittered parameters.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, PlatoonFilter, Provenance};
use crate::error::{Error, Result};
use crate::models::{step_block, IdmParams};
use crate::sampling::keyed_seed;
use crate::state::{integrate_step, Platoon, Trajectory, VehicleState};

/// Salt separating synthesis streams from the other keyed streams.
const SYNTH_STREAM: u64 = 0x5359_4e54;

/// One piece of the leader's speed profile. Each segment starts from the
/// speed the previous one ended at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSegment {
    Hold {
        duration: f64,
    },
    /// Linear change to `to` m/s.
    Ramp {
        duration: f64,
        to: f64,
    },
    /// `base - amplitude * sin(2 pi tau / period)`: a dip first, then a
    /// recovery above the base speed.
    Oscillation {
        duration: f64,
        amplitude: f64,
        period: f64,
    },
}

impl ProfileSegment {
    fn duration(&self) -> f64 {
        match *self {
            ProfileSegment::Hold { duration }
            | ProfileSegment::Ramp { duration, .. }
            | ProfileSegment::Oscillation { duration, .. } => duration,
        }
    }

    fn speed(&self, base: f64, tau: f64) -> f64 {
        match *self {
            ProfileSegment::Hold { .. } => base,
            ProfileSegment::Ramp { duration, to } => base + (to - base) * (tau / duration).min(1.0),
            ProfileSegment::Oscillation { amplitude, period, .. } => base - amplitude * (TAU * tau / period).sin(),
        }
    }
}

/// Leader speed profile with per-platoon variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedProfile {
    pub initial_speed: f64,
    pub segments: Vec<ProfileSegment>,
}

impl SpeedProfile {
    /// Speed at `t` seconds after the profile starts; the last speed holds
    /// after the final segment.
    pub fn speed(&self, t: f64) -> f64 {
        let mut base = self.initial_speed;
        let mut start = 0.0;
        for seg in &self.segments {
            let d = seg.duration();
            if t < start + d {
                return seg.speed(base, t - start);
            }
            base = seg.speed(base, d);
            start += d;
        }
        base
    }

    fn scaled(&self, speed_offset: f64, amp_scale: f64, period_scale: f64) -> Self {
        Self {
            initial_speed: self.initial_speed + speed_offset,
            segments: self
                .segments
                .iter()
                .map(|s| match *s {
                    ProfileSegment::Ramp { duration, to } => ProfileSegment::Ramp {
                        duration,
                        to: to + speed_offset,
                    },
                    ProfileSegment::Oscillation {
                        duration,
                        amplitude,
                        period,
                    } => ProfileSegment::Oscillation {
                        duration,
                        amplitude: amplitude * amp_scale,
                        period: period * period_scale,
                    },
                    ref hold => hold.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub idm: IdmParams,
    pub profile: SpeedProfile,
    /// Vehicles per platoon, leader included.
    pub platoon_size: usize,
    pub num_platoons: usize,
    /// Length of the studied window (s).
    pub duration: f64,
    pub dt: f64,
    /// Simulated time before the studied window starts (s).
    pub warmup: f64,
    /// Extra warmup drawn uniformly from `[0, warmup_spread)` per platoon, so
    /// windows catch the profile at different phases.
    pub warmup_spread: f64,
    /// Leader speed offset drawn uniformly from `[-speed_spread, speed_spread]`.
    pub speed_spread: f64,
    /// Relative jitter on IDM parameters and on oscillation amplitude/period.
    pub jitter: f64,
    /// Std of Gaussian noise on observed positions (m).
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            profile: SpeedProfile {
                initial_speed: 15.0,
                segments: vec![ProfileSegment::Oscillation {
                    duration: 400.0,
                    amplitude: 5.0,
                    period: 60.0,
                }],
            },
            platoon_size: 5,
            num_platoons: 220,
            duration: 20.0,
            dt: 0.5,
            warmup: 0.0,
            warmup_spread: 60.0,
            speed_spread: 3.0,
            jitter: 0.3,
            noise_std: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.idm.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.platoon_size < 2 {
            return bad(format!(
                "synth.platoon_size must be at least 2, got {}",
                self.platoon_size
            ));
        }
        if self.num_platoons == 0 {
            return bad("synth.num_platoons must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("synth.dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return bad(format!(
                "synth.duration must be at least one step, got {}",
                self.duration
            ));
        }
        for (name, v) in [
            ("warmup", self.warmup),
            ("warmup_spread", self.warmup_spread),
            ("speed_spread", self.speed_spread),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("synth.{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("synth.jitter must be in [0, 1), got {}", self.jitter));
        }
        if !(self.profile.initial_speed >= 0.0) {
            return bad("synth.profile.initial_speed must be non-negative".into());
        }
        for (k, seg) in self.profile.segments.iter().enumerate() {
            let ok = match *seg {
                ProfileSegment::Hold { duration } => duration > 0.0,
                ProfileSegment::Ramp { duration, to } => duration > 0.0 && to.is_finite(),
                ProfileSegment::Oscillation {
                    duration,
                    amplitude,
                    period,
                } => duration > 0.0 && amplitude >= 0.0 && period > 0.0,
            };
            if !ok {
                return bad(format!(
                    "synth.profile.segments[{k}] has non-positive duration, period or amplitude"
                ));
            }
        }
        Ok(())
    }

    /// Steps in the studied window.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

fn jitter_factor(rng: &mut ChaCha8Rng, j: f64) -> f64 {
    if j == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - j..1.0 + j)
    }
}

fn one_platoon(cfg: &SynthConfig, index: u64) -> Result<Platoon> {
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(&[cfg.seed, SYNTH_STREAM, index]));
    let j = cfg.jitter;
    let offset = if cfg.speed_spread > 0.0 {
        rng.random_range(-cfg.speed_spread..=cfg.speed_spread)
    } else {
        0.0
    };
    let profile = cfg
        .profile
        .scaled(offset, jitter_factor(&mut rng, j), jitter_factor(&mut rng, j));
    let warmup = cfg.warmup
        + if cfg.warmup_spread > 0.0 {
            rng.random_range(0.0..cfg.warmup_spread)
        } else {
            0.0
        };
    let skip = (warmup / cfg.dt).round() as usize;
    let steps = cfg.steps();
    let total = skip + steps;
    let id = index + 1;

    // Leader: accelerations chosen so integration lands on the profile speed.
    let mut leader = Vec::with_capacity(total);
    let v_init = profile.speed(0.0);
    let params: Vec<IdmParams> = (1..cfg.platoon_size)
        .map(|_| {
            let f = [(); 5].map(|_| jitter_factor(&mut rng, j));
            cfg.idm.scaled(f)
        })
        .collect();
    let gaps = params
        .iter()
        .map(|p| {
            p.equilibrium_gap(v_init).ok_or_else(|| {
                Error::Config(format!(
                    "initial leader speed {v_init} is outside the IDM equilibrium range"
                ))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let head_x: f64 = gaps.iter().sum::<f64>() + 100.0;
    leader.push(VehicleState::new(head_x, v_init, 0.0));
    for k in 1..total {
        let target = profile.speed(k as f64 * cfg.dt);
        if target < 0.0 {
            return Err(Error::Config(format!(
                "leader speed profile of platoon {id} reaches negative speed {target} at t={}",
                k as f64 * cfg.dt
            )));
        }
        let prev = leader[k - 1];
        let a = (target - prev.v) / cfg.dt;
        leader.push(integrate_step(&prev, a, cfg.dt)?);
    }

    let mut vehicles = vec![leader];
    let mut x = head_x;
    for (p, gap) in params.iter().zip(&gaps) {
        x -= gap;
        let ahead = vehicles.last().unwrap();
        let mut states = Vec::with_capacity(total);
        states.push(VehicleState::new(x, v_init, 0.0));
        for k in 0..total - 1 {
            let (next, ()) = step_block(p, &states[k], &ahead[k], &(), cfg.dt)?;
            states.push(next);
        }
        vehicles.push(states);
    }

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(format!("synth.noise_std: {e}")))?;
    let trajectories = vehicles
        .into_iter()
        .enumerate()
        .map(|(i, states)| {
            let window = states[skip..]
                .iter()
                .map(|s| {
                    let dx = if cfg.noise_std > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    VehicleState::new(s.x + dx, s.v, s.a)
                })
                .collect();
            Trajectory::new(id * 100 + i as u64, 0.0, cfg.dt, window)
        })
        .collect::<Result<Vec<_>>>()?;
    Platoon::new(id, trajectories)
}

/// Simulates `cfg.num_platoons` independent platoons. Every platoon draws
/// from its own keyed stream, so the output does not depend on scheduling.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let platoons = (0..cfg.num_platoons as u64)
        .into_par_iter()
        .map(|k| one_platoon(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        platoons,
        meta: DatasetMeta {
            provenance: Provenance::Synthetic(cfg.clone()),
            dt: cfg.dt,
            filter: PlatoonFilter {
                min_vehicles: cfg.platoon_size,
                min_duration: cfg.duration,
                lanes: None,
            },
            split: None,
        },
    })
}
