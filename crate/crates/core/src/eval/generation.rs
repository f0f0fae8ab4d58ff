use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{step_block, CarFollowingModel};
use crate::state::{Platoon, Trajectory, VehicleState};

/// What platoon generation is given: the first leader's full trajectory and
/// each follower's initial position and speed.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTask {
    pub platoon_id: u64,
    pub lane: Option<u32>,
    pub leader: Trajectory,
    /// `(vehicle_id, x, v)` for each follower, front to back.
    pub followers: Vec<(u64, f64, f64)>,
}

impl GenerationTask {
    /// Task derived from an observed platoon: its leader plus the followers'
    /// first positions and speeds.
    pub fn from_platoon(p: &Platoon) -> Self {
        Self {
            platoon_id: p.platoon_id(),
            lane: p.lane(),
            leader: p.leader().clone(),
            followers: p.trajectories()[1..]
                .iter()
                .map(|t| (t.vehicle_id(), t.states()[0].x, t.states()[0].v))
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.leader.len() < 2 {
            return Err(Error::Data(format!(
                "platoon {}: leader trajectory needs at least 2 steps",
                self.platoon_id
            )));
        }
        if self.followers.is_empty() {
            return Err(Error::Data(format!("platoon {}: no followers", self.platoon_id)));
        }
        let mut ahead = self.leader.states()[0].x;
        for &(id, x, v) in &self.followers {
            if !(x < ahead) || !x.is_finite() {
                return Err(Error::Data(format!(
                    "platoon {}: follower {id} does not start behind its leader",
                    self.platoon_id
                )));
            }
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Data(format!(
                    "platoon {}: follower {id} has invalid initial speed {v}",
                    self.platoon_id
                )));
            }
            ahead = x;
        }
        Ok(())
    }
}

/// Generates every follower's trajectory, front to back. Each follower sees
/// the *generated* trajectory of the vehicle ahead (the actual one only for
/// the first follower) and its own generated state; no actual follower state
/// is ever used after the initial one.
pub fn generate_platoon<M>(model: &M, task: &GenerationTask) -> Result<Platoon>
where
    M: CarFollowingModel + ?Sized,
{
    task.validate()?;
    let dt = task.leader.dt();
    let t0 = task.leader.t0();
    let steps = task.leader.len();
    let mut trajectories = vec![task.leader.clone()];

    for &(id, x0, v0) in &task.followers {
        let upstream = trajectories.last().expect("leader present").states();
        let mut states = Vec::with_capacity(steps);
        states.push(VehicleState::new(x0, v0, 0.0));
        let mut memory = model.initial_memory();
        for t in 0..steps - 1 {
            let (next, mem) = step_block(model, &states[t], &upstream[t], &memory, dt)?;
            states.push(next);
            memory = mem;
        }
        trajectories.push(Trajectory::new(id, t0, dt, states)?);
    }
    Ok(Platoon::new(task.platoon_id, trajectories)?.with_lane(task.lane))
}

/// Generates every platoon of `data` from its own leader and initial states.
pub fn generate_dataset<M>(model: &M, data: &[Platoon]) -> Result<Vec<Platoon>>
where
    M: CarFollowingModel + Sync + ?Sized,
{
    data.par_iter()
        .map(|p| generate_platoon(model, &GenerationTask::from_platoon(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{IdmParams, LstmModel};
    use crate::network::{init_params, NetworkParams, DEFAULT_HIDDEN};
    use crate::state::integrate_step;

    fn constant_leader(v: f64, steps: usize) -> Trajectory {
        let states = (0..steps)
            .map(|t| VehicleState::new(500.0 + v * 0.5 * t as f64, v, 0.0))
            .collect();
        Trajectory::new(1, 0.0, 0.5, states).unwrap()
    }

    #[test]
    fn zero_network_coasts() {
        let model = LstmModel::new(NetworkParams::zeros(&DEFAULT_HIDDEN));
        let task = GenerationTask {
            platoon_id: 1,
            lane: None,
            leader: constant_leader(15.0, 40),
            followers: vec![(2, 480.0, 10.0), (3, 460.0, 10.0)],
        };
        let p = generate_platoon(&model, &task).unwrap();
        for tr in &p.trajectories()[1..] {
            let s = tr.states();
            for t in 1..s.len() {
                assert_eq!(s[t].x, s[t - 1].x + 10.0 * 0.5);
                assert_eq!(s[t].v, 10.0);
            }
        }
    }

    #[test]
    fn single_follower_matches_loop() {
        let model = LstmModel::new(init_params(4));
        let leader = constant_leader(12.0, 30);
        let task = GenerationTask {
            platoon_id: 9,
            lane: None,
            leader: leader.clone(),
            followers: vec![(2, 480.0, 11.0)],
        };
        let p = generate_platoon(&model, &task).unwrap();

        let mut state = VehicleState::new(480.0, 11.0, 0.0);
        let mut mem = crate::network::LstmMemory::zeros(&DEFAULT_HIDDEN);
        for t in 0..29 {
            let obs = crate::state::features(&state, &leader.states()[t]);
            let (a, m) = crate::network::forward_step(&model.params, &obs, &mem).unwrap();
            state = integrate_step(&state, a, 0.5).unwrap();
            mem = m;
            assert_eq!(p.trajectories()[1].states()[t + 1], state);
        }
    }

    #[test]
    fn idm_equilibrium_platoon_holds_gaps() {
        let idm = IdmParams::default();
        let v = 15.0;
        let gap = idm.equilibrium_gap(v).unwrap();
        let followers = (1..5).map(|i| (i as u64 + 1, 500.0 - gap * i as f64, v)).collect();
        let task = GenerationTask {
            platoon_id: 1,
            lane: None,
            leader: constant_leader(v, 41),
            followers,
        };
        let p = generate_platoon(&idm, &task).unwrap();
        let trajs = p.trajectories();
        for i in 1..5 {
            for t in 0..41 {
                let g = trajs[i - 1].states()[t].x - trajs[i].states()[t].x;
                assert!((g - gap).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invalid_tasks() {
        let idm = IdmParams::default();
        let mut task = GenerationTask {
            platoon_id: 1,
            lane: None,
            leader: constant_leader(10.0, 10),
            followers: vec![(2, 510.0, 10.0)],
        };
        assert!(generate_platoon(&idm, &task).is_err());
        task.followers = vec![];
        assert!(generate_platoon(&idm, &task).is_err());
        task.followers = vec![(2, 490.0, 10.0)];
        task.leader = constant_leader(10.0, 1);
        assert!(generate_platoon(&idm, &task).is_err());
    }
}
