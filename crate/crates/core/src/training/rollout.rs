use crate::error::{Error, Result};
use crate::network::{forward_traced, GradientTape, LstmMemory, NetworkParams};
use crate::sampling::SampleMask;
use crate::state::{features, integrate_step_flagged, ObservationFeatures, VehicleState};

/// Everything one recorded follower rollout produces.
#[derive(Debug, Clone)]
pub struct FollowerRollout {
    /// Generated states; entry 0 is the follower's actual initial state.
    pub generated: Vec<VehicleState>,
    /// Raw observation fed to the network at each decision step.
    pub inputs: Vec<ObservationFeatures>,
    /// State each step integrated from (actual or generated, per the mask).
    pub bases: Vec<VehicleState>,
    pub tape: GradientTape,
}

/// Rolls one follower through its studied period.
///
/// At step `t` the mask selects between the actual pair
/// `(actual_self[t], actual_leader[t])` and the generated pair
/// `(generated[t], generated_leader[t])`; the chosen follower state is also
/// the base the predicted acceleration is integrated from.
pub fn rollout_follower(
    params: &NetworkParams,
    actual_self: &[VehicleState],
    actual_leader: &[VehicleState],
    generated_leader: &[VehicleState],
    mask: &SampleMask,
    dt: f64,
) -> Result<FollowerRollout> {
    let steps = actual_self.len();
    if steps == 0 || actual_leader.len() != steps || generated_leader.len() != steps {
        return Err(Error::Shape(format!(
            "rollout inputs disagree in length: self {}, leader {}, generated leader {}",
            steps,
            actual_leader.len(),
            generated_leader.len()
        )));
    }
    if mask.len() + 1 < steps {
        return Err(Error::Shape(format!(
            "mask of length {} cannot drive {} decision steps",
            mask.len(),
            steps - 1
        )));
    }

    let mut generated = Vec::with_capacity(steps);
    generated.push(actual_self[0]);
    let mut inputs = Vec::with_capacity(steps - 1);
    let mut bases = Vec::with_capacity(steps - 1);
    let mut tape = GradientTape::new();
    let mut memory = LstmMemory::zeros(params.hidden_sizes());

    for t in 0..steps - 1 {
        let (own, lead) = if mask.uses_actual(t) {
            (actual_self[t], actual_leader[t])
        } else {
            (generated[t], generated_leader[t])
        };
        let obs = features(&own, &lead);
        let input = params.norm.apply(&obs);
        let (accel, next_memory, trace) = forward_traced(params, &input, &memory)?;
        let (next, clamped) = integrate_step_flagged(&own, accel, dt)?;
        tape.push(trace, if clamped { 0.0 } else { dt * dt });
        inputs.push(obs);
        bases.push(own);
        generated.push(next);
        memory = next_memory;
    }

    Ok(FollowerRollout {
        generated,
        inputs,
        bases,
        tape,
    })
}
