//! Pair-level teacher-forced training and platoon-level training with
//! scheduled sampling.

mod checkpoint;
mod loss;
mod rollout;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::generate_dataset;
use crate::models::LstmModel;
use crate::network::{
    backward_rollout, AdamConfig, FeatureNorm, Gradients, NetworkParams, OptimizerKind, OptimizerState,
};
use crate::sampling::{keyed_seed, mask_seed, sample_mask, DecaySchedule, SampleMask, ScheduleFamily};
use crate::state::{features, ObservationFeatures, Platoon, VehicleState, DEFAULT_DT};

pub use checkpoint::{load_checkpoint, save_checkpoint, FitState};
pub use loss::{pair_loss, platoon_loss};
pub use rollout::{rollout_follower, FollowerRollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One update per epoch over the whole dataset.
    FullEpoch,
    /// Shuffled minibatches of the given size.
    Minibatch(usize),
}

/// Which training algorithm an epoch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainLevel {
    /// Teacher forcing on two-vehicle platoons; loss without the `1/I` factor.
    Pair,
    /// Scheduled sampling over whole platoons, followers generated upstream
    /// first; loss with the `1/I` factor.
    Platoon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamConfig,
    pub schedule: DecaySchedule,
    pub batch: BatchMode,
    pub seed: u64,
    pub dt: f64,
    /// Keep the network inputs of every rollout in the epoch result.
    #[serde(default)]
    pub record_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            schedule: DecaySchedule::standard(ScheduleFamily::InverseSigmoid, 100),
            batch: BatchMode::FullEpoch,
            seed: 0,
            dt: DEFAULT_DT,
            record_inputs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("train.dt must be positive, got {}", self.dt)));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr must be non-negative, got {}", self.lr)));
        }
        if self.batch == BatchMode::Minibatch(0) {
            return Err(Error::Config("train.batch minibatch size must be positive".into()));
        }
        self.schedule.validate()
    }

    pub fn new_optimizer(&self, num_params: usize) -> Result<OptimizerState> {
        OptimizerState::with_adam(self.optimizer, self.lr, self.adam, num_params)
    }
}

/// Network inputs of one follower rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTrace {
    pub platoon_id: u64,
    pub vehicle_index: usize,
    pub inputs: Vec<ObservationFeatures>,
}

#[derive(Debug, Clone)]
pub struct EpochResult {
    pub params: NetworkParams,
    /// Mean per-platoon loss over the epoch.
    pub loss: f64,
    /// Populated when `record_inputs` is set; ordered by platoon id then
    /// vehicle index.
    pub inputs: Vec<InputTrace>,
}

/// Per-platoon loss, its gradient and the traced inputs.
struct PlatoonPass {
    loss: f64,
    grads: Gradients,
    inputs: Vec<InputTrace>,
}

fn platoon_pass(
    params: &NetworkParams,
    platoon: &Platoon,
    masks: &[SampleMask],
    loss_divisor: f64,
    dt: f64,
    record: bool,
) -> Result<PlatoonPass> {
    let steps = platoon.steps();
    let t_len = steps as f64;
    let mut grads = Gradients::zeros(params.num_params());
    let mut loss = 0.0;
    let mut inputs = Vec::new();
    let trajs = platoon.trajectories();
    let mut upstream: Vec<VehicleState> = trajs[0].states().to_vec();

    for i in 1..platoon.size() {
        let actual = trajs[i].states();
        let roll = rollout_follower(params, actual, trajs[i - 1].states(), &upstream, &masks[i - 1], dt)?;
        let mut dl_dx = Vec::with_capacity(steps - 1);
        for t in 1..steps {
            let e = roll.generated[t].x - actual[t].x;
            loss += e * e / (t_len * loss_divisor);
            dl_dx.push(2.0 * e / (t_len * loss_divisor));
        }
        grads.add_assign(&backward_rollout(params, &roll.tape, &dl_dx)?);
        if record {
            inputs.push(InputTrace {
                platoon_id: platoon.platoon_id(),
                vehicle_index: i,
                inputs: roll.inputs,
            });
        }
        upstream = roll.generated;
    }
    if !loss.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite loss on platoon {}",
            platoon.platoon_id()
        )));
    }
    Ok(PlatoonPass { loss, grads, inputs })
}

/// Dataset indices sorted by platoon id, so neither reduction order nor
/// batch composition depends on how the dataset happens to be ordered.
fn canonical_order(data: &[Platoon]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by_key(|&i| data[i].platoon_id());
    idx
}

fn batches(data: &[Platoon], cfg: &TrainConfig, epoch: u32) -> Vec<Vec<usize>> {
    let mut order = canonical_order(data);
    match cfg.batch {
        BatchMode::FullEpoch => vec![order],
        BatchMode::Minibatch(size) => {
            let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(&[cfg.seed, 0x6261_7463, epoch as u64]));
            order.shuffle(&mut rng);
            order
                .chunks(size)
                .map(|c| {
                    let mut c = c.to_vec();
                    c.sort_by_key(|&i| data[i].platoon_id());
                    c
                })
                .collect()
        }
    }
}

fn run_epoch(
    params: &NetworkParams,
    opt: &mut OptimizerState,
    data: &[Platoon],
    cfg: &TrainConfig,
    epoch: u32,
    level: TrainLevel,
) -> Result<EpochResult> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let eps = match level {
        TrainLevel::Pair => 1.0,
        TrainLevel::Platoon => cfg.schedule.epsilon(epoch),
    };
    let mut params = params.clone();
    let mut loss_sum = 0.0;
    let mut inputs = Vec::new();

    for batch in batches(data, cfg, epoch) {
        let passes: Vec<Result<PlatoonPass>> = batch
            .par_iter()
            .map(|&idx| {
                let p = &data[idx];
                let divisor = match level {
                    TrainLevel::Pair => 1.0,
                    TrainLevel::Platoon => p.size() as f64,
                };
                let masks = (1..p.size())
                    .map(|i| match level {
                        TrainLevel::Pair => Ok(SampleMask::teacher_forcing(p.steps())),
                        TrainLevel::Platoon => {
                            sample_mask(eps, p.steps(), mask_seed(cfg.seed, epoch, p.platoon_id(), i))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                platoon_pass(&params, p, &masks, divisor, cfg.dt, cfg.record_inputs)
            })
            .collect();

        let mut grads = Gradients::zeros(params.num_params());
        let mut batch_loss = 0.0;
        for pass in passes {
            let pass = pass.map_err(|e| match e {
                Error::NonFinite { context } => Error::Diverged(context),
                other => other,
            })?;
            grads.add_assign(&pass.grads);
            batch_loss += pass.loss;
            inputs.extend(pass.inputs);
        }
        grads.scale(1.0 / batch.len() as f64);
        loss_sum += batch_loss;
        if !grads.is_finite() {
            return Err(Error::Diverged(format!("non-finite gradient in epoch {epoch}")));
        }
        opt.apply(params.theta_mut(), &grads)?;
        if params.theta().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite parameters after update in epoch {epoch}"
            )));
        }
    }

    inputs.sort_by_key(|t| (t.platoon_id, t.vehicle_index));
    Ok(EpochResult {
        params,
        loss: loss_sum / data.len() as f64,
        inputs,
    })
}

/// One epoch of teacher-forced training on vehicle pairs.
pub fn train_pair_epoch(
    params: &NetworkParams,
    opt: &mut OptimizerState,
    pairs: &[Platoon],
    cfg: &TrainConfig,
    epoch: u32,
) -> Result<EpochResult> {
    if let Some(p) = pairs.iter().find(|p| p.size() != 2) {
        return Err(Error::Data(format!(
            "pair training got platoon {} with {} vehicles",
            p.platoon_id(),
            p.size()
        )));
    }
    run_epoch(params, opt, pairs, cfg, epoch, TrainLevel::Pair)
}

/// One epoch of platoon-level training with scheduled sampling.
pub fn train_platoon_epoch(
    params: &NetworkParams,
    opt: &mut OptimizerState,
    platoons: &[Platoon],
    cfg: &TrainConfig,
    epoch: u32,
) -> Result<EpochResult> {
    run_epoch(params, opt, platoons, cfg, epoch, TrainLevel::Platoon)
}

pub fn train_epoch(
    params: &NetworkParams,
    opt: &mut OptimizerState,
    data: &[Platoon],
    cfg: &TrainConfig,
    epoch: u32,
    level: TrainLevel,
) -> Result<EpochResult> {
    match level {
        TrainLevel::Pair => train_pair_epoch(params, opt, data, cfg, epoch),
        TrainLevel::Platoon => train_platoon_epoch(params, opt, data, cfg, epoch),
    }
}

/// Z-score constants over every actual follower/leader observation.
pub fn feature_norm_for(data: &[Platoon]) -> Result<FeatureNorm> {
    let mut obs = Vec::new();
    for p in data {
        let trajs = p.trajectories();
        for i in 1..p.size() {
            let (f, l) = (trajs[i].states(), trajs[i - 1].states());
            obs.extend(f.iter().zip(l).map(|(f, l)| features(f, l)));
        }
    }
    FeatureNorm::fit(&obs)
}

/// Free-running position MSE of `params` on `data`.
pub fn inference_loss(params: &NetworkParams, data: &[Platoon]) -> Result<f64> {
    let model = LstmModel::new(params.clone());
    let generated = generate_dataset(&model, data)?;
    platoon_loss(data, &generated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub inference_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_inference_loss: f64,
    pub best_params: NetworkParams,
    pub final_params: NetworkParams,
    /// Whether the divergence guard halved the learning rate.
    pub lr_halved: bool,
}

impl TrainReport {
    /// `epoch,train_loss,inference_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,inference_loss\n");
        for (k, (tr, inf)) in self.train_loss.iter().zip(&self.inference_loss).enumerate() {
            out.push_str(&format!("{k},{tr},{inf}\n"));
        }
        out
    }
}

/// Runs epochs `state.next_epoch .. until` (capped at `cfg.epochs`), calling
/// `on_epoch` after each completed epoch, e.g. to write a checkpoint.
///
/// A non-finite epoch is retried once with half the learning rate; a second
/// divergence aborts the run.
pub fn fit_from(
    state: &mut FitState,
    train: &[Platoon],
    eval: &[Platoon],
    cfg: &TrainConfig,
    level: TrainLevel,
    until: u32,
    mut on_epoch: impl FnMut(&FitState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if eval.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let until = until.min(cfg.epochs);
    while state.next_epoch < until {
        let k = state.next_epoch;
        let mut opt = state.opt.clone();
        let result = match train_epoch(&state.params, &mut opt, train, cfg, k, level) {
            Ok(r) => r,
            Err(Error::Diverged(msg)) if !state.lr_halved => {
                log::warn!("epoch {k} diverged ({msg}); halving learning rate and retrying");
                state.lr_halved = true;
                state.opt.lr *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        // A free-running rollout that blows up is a bad model, not a failed
        // run; it scores the largest finite loss so checkpoints stay valid.
        let inf = match inference_loss(&result.params, eval) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFinite { .. }) => f64::MAX,
            Err(e) => return Err(e),
        };
        log::info!("epoch {k}: train loss {:.6}, inference loss {inf:.6}", result.loss);
        state.params = result.params;
        state.opt = opt;
        state.train_loss.push(result.loss);
        state.inference_loss.push(inf);
        if state.best.as_ref().is_none_or(|(_, best, _)| inf < *best) {
            state.best = Some((k as usize, inf, state.params.clone()));
        }
        state.next_epoch += 1;
        on_epoch(state)?;
    }
    Ok(())
}

/// Trains for `cfg.epochs` epochs and reports per-epoch losses together with
/// the parameters that scored the lowest inference loss.
pub fn fit(
    initial: &NetworkParams,
    train: &[Platoon],
    eval: &[Platoon],
    cfg: &TrainConfig,
    level: TrainLevel,
) -> Result<TrainReport> {
    let mut state = FitState::new(initial.clone(), cfg)?;
    fit_from(&mut state, train, eval, cfg, level, cfg.epochs, |_| Ok(()))?;
    state.into_report()
}
