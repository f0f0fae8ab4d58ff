//! Datasets: ingestion, platoon extraction, synthesis and splitting.

mod extract;
mod records;
mod resample;
mod synth;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::keyed_seed;
use crate::state::Platoon;

pub use extract::extract_platoons;
pub use records::{
    parse_trajectory_csv, read_trajectory_csv, write_trajectory_csv, LengthUnit, ParsedRecords, RawRecord,
    FEET_TO_METERS,
};
pub use resample::{resample, resample_window};
pub use synth::{synthesize, ProfileSegment, SpeedProfile, SynthConfig};

/// Which platoons a dataset admits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatoonFilter {
    pub min_vehicles: usize,
    /// Studied-period length (s).
    pub min_duration: f64,
    /// Allowed lanes; `None` admits every lane.
    pub lanes: Option<Vec<u32>>,
}

impl Default for PlatoonFilter {
    fn default() -> Self {
        Self {
            min_vehicles: 5,
            min_duration: 20.0,
            lanes: None,
        }
    }
}

impl PlatoonFilter {
    pub(crate) fn lane_allowed(&self, lane: u32) -> bool {
        self.lanes.as_ref().is_none_or(|l| l.contains(&lane))
    }

    pub fn check(&self, p: &Platoon) -> Result<()> {
        let id = p.platoon_id();
        if p.size() < self.min_vehicles {
            return Err(Error::Data(format!(
                "platoon {id} has {} vehicles, filter needs {}",
                p.size(),
                self.min_vehicles
            )));
        }
        let span = p.steps() as f64 * p.dt();
        if span + 1e-9 < self.min_duration {
            return Err(Error::Data(format!(
                "platoon {id} spans {span} s, filter needs {} s",
                self.min_duration
            )));
        }
        if let Some(lanes) = &self.lanes {
            if !p.lane().is_some_and(|l| lanes.contains(&l)) {
                return Err(Error::Data(format!(
                    "platoon {id} lane {:?} not in {lanes:?}",
                    p.lane()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Extracted from parsed trajectory records.
    Records {
        count: usize,
    },
    /// Extracted from a trajectory file.
    File {
        path: String,
        unit: LengthUnit,
    },
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub provenance: Provenance,
    /// Decision interval (s).
    pub dt: f64,
    pub filter: PlatoonFilter,
    /// Which side of which split this is, if any.
    #[serde(default)]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub platoons: Vec<Platoon>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.platoons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.platoons.is_empty()
    }

    /// Re-checks every platoon against the recorded filter and interval.
    pub fn check_filters(&self) -> Result<()> {
        for p in &self.platoons {
            self.meta.filter.check(p)?;
            if (p.dt() - self.meta.dt).abs() > 1e-12 {
                return Err(Error::Data(format!(
                    "platoon {} has dt {}, dataset records {}",
                    p.platoon_id(),
                    p.dt(),
                    self.meta.dt
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(text)?;
        ds.check_filters()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// Shuffled split holding out `round(eval_fraction * n)` platoons.
    Fraction { eval_fraction: f64, seed: u64 },
    /// Platoons in `eval_lanes` go to evaluation.
    Lanes { eval_lanes: Vec<u32> },
}

/// Splits into disjoint `(train, eval)` sets covering the input. The result
/// does not depend on the input order of platoons.
pub fn split(ds: &Dataset, rule: &SplitRule) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let mut sorted = ds.platoons.clone();
    sorted.sort_by_key(|p| p.platoon_id());
    let (train, eval): (Vec<Platoon>, Vec<Platoon>) = match rule {
        SplitRule::Fraction { eval_fraction, seed } => {
            if !(0.0..=1.0).contains(eval_fraction) {
                return Err(Error::Config(format!(
                    "eval_fraction must be in [0, 1], got {eval_fraction}"
                )));
            }
            let n_eval = (eval_fraction * sorted.len() as f64).round() as usize;
            let mut idx: Vec<usize> = (0..sorted.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(keyed_seed(&[*seed, 0x5350_4c54])));
            let mut is_eval = vec![false; sorted.len()];
            for &k in &idx[..n_eval] {
                is_eval[k] = true;
            }
            let (e, t): (Vec<_>, Vec<_>) = sorted.into_iter().zip(is_eval).partition(|(_, e)| *e);
            (
                t.into_iter().map(|(p, _)| p).collect(),
                e.into_iter().map(|(p, _)| p).collect(),
            )
        }
        SplitRule::Lanes { eval_lanes } => sorted
            .into_iter()
            .partition(|p| !p.lane().is_some_and(|l| eval_lanes.contains(&l))),
    };
    if train.is_empty() || eval.is_empty() {
        log::warn!("split left one side empty ({} train, {} eval)", train.len(), eval.len());
    }
    let side = |platoons: Vec<Platoon>, name: &str| Dataset {
        platoons,
        meta: DatasetMeta {
            split: Some(name.to_string()),
            ..ds.meta.clone()
        },
    };
    Ok((side(train, "train"), side(eval, "eval")))
}
