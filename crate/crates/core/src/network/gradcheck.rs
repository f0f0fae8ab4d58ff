//! Central-difference gradient oracle and the tiny-network gradient check.
//!
//! The oracle differentiates a *replay* loss: the rollout's observations and
//! integration bases are recorded once at the unperturbed parameters and held
//! fixed while `theta` moves. That is the function whose gradient the
//! backward pass computes (fed-back states carry no gradient), evaluated
//! purely through forward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward_rollout, forward_step, FeatureNorm, LstmMemory, NetworkParams};
use crate::error::Result;
use crate::sampling::{keyed_seed, sample_mask};
use crate::state::{integrate_step, ObservationFeatures, VehicleState};
use crate::training::rollout_follower;

/// Fourth-order central differences of `loss` at `theta`, one coordinate at
/// a time: `(-f(+2h) + 8 f(+h) - 8 f(-h) + f(-2h)) / 12h`. The second-order
/// stencil's h^2 truncation term is too large on the first-layer weights.
pub fn finite_difference_gradient(mut loss: impl FnMut(&[f64]) -> f64, theta: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            let orig = probe[k];
            let mut at = |offset: f64| {
                probe[k] = orig + offset;
                loss(&probe)
            };
            let (up2, up, down, down2) = (at(2.0 * step), at(step), at(-step), at(-2.0 * step));
            probe[k] = orig;
            (8.0 * (up - down) - (up2 - down2)) / (12.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub trials: u64,
    pub fd_step: f64,
    pub threshold: f64,
    /// Coordinates whose gradients are both below this magnitude are compared
    /// in absolute rather than relative terms.
    pub abs_floor: f64,
    /// Fault injection: scale applied to the analytic gradient (0 = none).
    pub perturb: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            hidden: vec![4, 4, 3],
            steps: 10,
            trials: 20,
            fd_step: 1e-3,
            threshold: 1e-4,
            abs_floor: 1e-7,
            perturb: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: u64,
    pub max_rel_error: f64,
    pub blocks: Vec<BlockError>,
    pub threshold: f64,
    pub passed: bool,
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Random but physically plausible leader/follower pair.
fn random_pair(rng: &mut ChaCha8Rng, steps: usize, dt: f64) -> (Vec<VehicleState>, Vec<VehicleState>) {
    let mut lead = vec![VehicleState::new(
        rng.random_range(20.0..35.0),
        rng.random_range(8.0..15.0),
        0.0,
    )];
    let mut follow = vec![VehicleState::new(0.0, rng.random_range(8.0..15.0), 0.0)];
    for _ in 1..steps {
        let l = integrate_step(lead.last().unwrap(), rng.random_range(-1.5..1.5), dt).unwrap();
        let f = integrate_step(follow.last().unwrap(), rng.random_range(-1.5..1.5), dt).unwrap();
        lead.push(l);
        follow.push(f);
    }
    (lead, follow)
}

/// Compares the backward pass with central differences on `trials` random
/// (parameters, data, mask) draws.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let dt = 0.5;
    let mut worst = 0.0f64;
    let mut blocks: Vec<BlockError> = Vec::new();

    for trial in 0..cfg.trials {
        let trial_seed = keyed_seed(&[cfg.seed, trial]);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let norm = FeatureNorm {
            mean: [11.0, 0.0, 25.0],
            std: [3.0, 2.0, 10.0],
        };
        let params = NetworkParams::init(&cfg.hidden, trial_seed)?.with_norm(norm);
        let (lead, follow) = random_pair(&mut rng, cfg.steps, dt);
        let mask = sample_mask(0.5, cfg.steps, rng.random())?;

        let roll = rollout_follower(&params, &follow, &lead, &lead, &mask, dt)?;
        let t_len = cfg.steps as f64;
        let dl_dx: Vec<f64> = (1..cfg.steps)
            .map(|t| 2.0 * (roll.generated[t].x - follow[t].x) / t_len)
            .collect();
        let mut analytic = backward_rollout(&params, &roll.tape, &dl_dx)?;
        if cfg.perturb != 0.0 {
            analytic.scale(1.0 + cfg.perturb);
        }

        let inputs: Vec<ObservationFeatures> = roll.inputs.clone();
        let bases = roll.bases.clone();
        let hidden = cfg.hidden.clone();
        let replay = |theta: &[f64]| -> f64 {
            let p = NetworkParams::from_theta(&hidden, theta.to_vec(), norm).expect("same layout");
            let mut mem = LstmMemory::zeros(&hidden);
            let mut loss = 0.0;
            for t in 0..inputs.len() {
                let (a, next) = forward_step(&p, &inputs[t], &mem).expect("finite replay");
                mem = next;
                // x' - x_actual written as (x_base - x_actual) + v' dt: the same
                // value, without cancelling two ~100 m positions.
                let v = integrate_step(&bases[t], a, dt).expect("finite replay").v;
                let r = (bases[t].x - follow[t + 1].x) + v * dt;
                loss += r * r / t_len;
            }
            loss
        };
        let numeric = finite_difference_gradient(replay, params.theta(), cfg.fd_step);

        for block in params.layout().blocks() {
            let range = block.offset..block.offset + block.len;
            let err = analytic.values[range.clone()]
                .iter()
                .zip(&numeric[range])
                .map(|(&a, &n)| rel_error(a, n, cfg.abs_floor))
                .fold(0.0, f64::max);
            match blocks.iter_mut().find(|b| b.name == block.name) {
                Some(b) => b.max_rel_error = b.max_rel_error.max(err),
                None => blocks.push(BlockError {
                    name: block.name.clone(),
                    max_rel_error: err,
                }),
            }
            worst = worst.max(err);
        }
    }

    Ok(GradCheckReport {
        trials: cfg.trials,
        max_rel_error: worst,
        blocks,
        threshold: cfg.threshold,
        passed: worst < cfg.threshold,
    })
}
