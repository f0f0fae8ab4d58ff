use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, OptimizerState};

/// Resumable training state: everything `fit_from` needs to continue exactly
/// where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub next_epoch: u32,
    pub params: NetworkParams,
    pub opt: OptimizerState,
    pub train_loss: Vec<f64>,
    pub inference_loss: Vec<f64>,
    /// `(epoch, inference loss, params)` of the best epoch so far.
    pub best: Option<(usize, f64, NetworkParams)>,
    pub lr_halved: bool,
}

impl FitState {
    pub fn new(params: NetworkParams, cfg: &TrainConfig) -> Result<Self> {
        let opt = cfg.new_optimizer(params.num_params())?;
        Ok(Self {
            next_epoch: 0,
            params,
            opt,
            train_loss: Vec::new(),
            inference_loss: Vec::new(),
            best: None,
            lr_halved: false,
        })
    }

    pub fn into_report(self) -> Result<TrainReport> {
        let (best_epoch, best_inference_loss, best_params) =
            self.best.ok_or_else(|| Error::Data("no epoch completed".into()))?;
        Ok(TrainReport {
            train_loss: self.train_loss,
            inference_loss: self.inference_loss,
            best_epoch,
            best_inference_loss,
            best_params,
            final_params: self.params,
            lr_halved: self.lr_halved,
        })
    }
}

/// Writes the state as JSON. Floats use shortest round-trip formatting, so a
/// reload is bitwise identical.
pub fn save_checkpoint(state: &FitState, path: &Path) -> Result<()> {
    let text = serde_json::to_string(state)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FitState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
