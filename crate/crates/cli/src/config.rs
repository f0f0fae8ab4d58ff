//! Run configuration. Every section has complete defaults; a config file only
//! needs the keys it changes, and unknown keys are rejected.

use std::path::{Path, PathBuf};

use platoon_core::data::{LengthUnit, PlatoonFilter, SplitRule, SynthConfig};
use platoon_core::network::{AdamConfig, GradCheckConfig, OptimizerKind, DEFAULT_HIDDEN};
use platoon_core::training::{BatchMode, TrainConfig, TrainLevel};
use platoon_core::{DecaySchedule, IdmParams, ScheduleFamily};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds synthesis, splits, initialization, masks and shuffles.
    pub seed: u64,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub gradcheck: GradCheckConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Fraction,
    Lanes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub rule: SplitKind,
    pub eval_fraction: f64,
    pub eval_lanes: Vec<u32>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            rule: SplitKind::Fraction,
            eval_fraction: 1.0 / 11.0,
            eval_lanes: vec![2],
        }
    }
}

impl SplitSection {
    pub fn rule(&self, seed: u64) -> SplitRule {
        match self.rule {
            SplitKind::Fraction => SplitRule::Fraction {
                eval_fraction: self.eval_fraction,
                seed,
            },
            SplitKind::Lanes => SplitRule::Lanes {
                eval_lanes: self.eval_lanes.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Training dataset; defaults to `<out>/train.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Evaluation dataset; defaults to `<out>/eval.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<PathBuf>,
    /// Trajectory CSV read by `ingest`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub unit: LengthUnit,
    pub filter: PlatoonFilter,
    /// Decision interval of extracted platoons (s).
    pub dt: f64,
    pub split: SplitSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: None,
            eval: None,
            csv: None,
            unit: LengthUnit::Meters,
            filter: PlatoonFilter::default(),
            dt: 0.5,
            split: SplitSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Idm,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    /// LSTM model file; defaults to `<out>/model.bin`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub idm: IdmParams,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Lstm,
            hidden: DEFAULT_HIDDEN.to_vec(),
            file: None,
            idm: IdmParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Teacher forcing on leader/follower pairs.
    Pair,
    /// Scheduled sampling over whole platoons.
    Platoon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub epochs: u32,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub schedule: ScheduleFamily,
    /// Decay rate; the family's standard value when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    /// Decay offset; the family's standard value when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Epoch after which the schedule is zero; `epochs` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch_max: Option<u32>,
    /// Training items per update; 0 means one update per epoch.
    pub batch_size: usize,
    /// Share of the training set held out to pick the best epoch.
    pub validation_fraction: f64,
    /// Schedule families to train one after another (platoon mode only).
    pub sweep: Vec<ScheduleFamily>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: TrainMode::Platoon,
            epochs: 60,
            lr: 3e-3,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            schedule: ScheduleFamily::InverseSigmoid,
            w: None,
            c: None,
            epoch_max: None,
            batch_size: 10,
            validation_fraction: 0.1,
            sweep: Vec::new(),
        }
    }
}

impl TrainSection {
    pub fn level(&self) -> TrainLevel {
        match self.mode {
            TrainMode::Pair => TrainLevel::Pair,
            TrainMode::Platoon => TrainLevel::Platoon,
        }
    }

    pub fn train_config(&self, family: ScheduleFamily, seed: u64) -> TrainConfig {
        let epoch_max = self.epoch_max.unwrap_or(self.epochs);
        let mut schedule = DecaySchedule::standard(family, epoch_max);
        if let Some(w) = self.w {
            schedule.w = w;
        }
        if let Some(c) = self.c {
            schedule.c = c;
        }
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            optimizer: self.optimizer,
            adam: self.adam,
            schedule,
            batch: match self.batch_size {
                0 => BatchMode::FullEpoch,
                n => BatchMode::Minibatch(n),
            },
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Generated dataset scored by `evaluate`; defaults to
    /// `<out>/generated.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<PathBuf>,
    /// Platoons with error grids written; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_limit: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the seed override and fills every defaulted path from `out`.
    pub fn resolve(mut self, seed: Option<u64>, out: &Path) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if self.synth.seed != 0 && self.synth.seed != self.seed {
            return Err(CliError::Usage(format!(
                "synth.seed ({}) conflicts with the top-level seed ({}); set only the top-level seed",
                self.synth.seed, self.seed
            )));
        }
        self.synth.seed = self.seed;
        self.gradcheck.seed = self.seed;
        let or_out = |p: &mut Option<PathBuf>, name: &str| {
            if p.is_none() {
                *p = Some(out.join(name));
            }
        };
        or_out(&mut self.data.train, "train.json");
        or_out(&mut self.data.eval, "eval.json");
        or_out(&mut self.model.file, "model.bin");
        or_out(&mut self.eval.generated, "generated.json");
        Ok(self)
    }
}
