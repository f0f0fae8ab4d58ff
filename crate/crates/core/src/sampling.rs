//! Scheduled sampling: the per-epoch probability of feeding actual states and
//! the per-rollout binary masks drawn from it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    AlwaysActual,
    Linear,
    Exponential,
    InverseSigmoid,
    AlwaysGenerated,
}

impl ScheduleFamily {
    pub const ALL: [ScheduleFamily; 5] = [
        ScheduleFamily::AlwaysActual,
        ScheduleFamily::Linear,
        ScheduleFamily::Exponential,
        ScheduleFamily::InverseSigmoid,
        ScheduleFamily::AlwaysGenerated,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleFamily::AlwaysActual => "always_actual",
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Exponential => "exponential",
            ScheduleFamily::InverseSigmoid => "inverse_sigmoid",
            ScheduleFamily::AlwaysGenerated => "always_generated",
        }
    }
}

impl fmt::Display for ScheduleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown schedule family `{s}`")))
    }
}

/// Decay of the actual-state probability over training epochs.
///
/// `w` is the decay rate and `c` the offset; which of them matter depends on
/// the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySchedule {
    pub family: ScheduleFamily,
    pub w: f64,
    pub c: f64,
    pub epoch_max: u32,
}

impl DecaySchedule {
    /// The reference parameterization for each family given the epoch budget:
    /// linear `w = -2/epoch, c = 1`; exponential `w = 0.9, c = 0`; inverse
    /// sigmoid `w = 1/4, c = epoch/4`.
    pub fn standard(family: ScheduleFamily, epoch_max: u32) -> Self {
        let e = epoch_max as f64;
        let (w, c) = match family {
            ScheduleFamily::Linear => (-2.0 / e, 1.0),
            ScheduleFamily::Exponential => (0.9, 0.0),
            ScheduleFamily::InverseSigmoid => (0.25, e / 4.0),
            ScheduleFamily::AlwaysActual | ScheduleFamily::AlwaysGenerated => (0.0, 0.0),
        };
        Self {
            family,
            w,
            c,
            epoch_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epoch_max < 1 {
            return Err(Error::Config("schedule epoch_max must be at least 1".into()));
        }
        if !self.w.is_finite() || !self.c.is_finite() {
            return Err(Error::Config("schedule parameters must be finite".into()));
        }
        Ok(())
    }

    fn decay(&self, k: f64) -> f64 {
        match self.family {
            ScheduleFamily::AlwaysActual => 1.0,
            ScheduleFamily::AlwaysGenerated => 0.0,
            ScheduleFamily::Linear => self.w * k + self.c,
            ScheduleFamily::Exponential => self.w.powf(k) + self.c,
            ScheduleFamily::InverseSigmoid => 1.0 - 1.0 / (1.0 + (-self.w * (k - self.c)).exp()),
        }
    }

    /// Probability of using the actual state at epoch `k`; zero past
    /// `epoch_max`.
    pub fn epsilon(&self, k: u32) -> f64 {
        if k > self.epoch_max {
            return 0.0;
        }
        let d = self.decay(k as f64);
        // Median of (0, d, 1); NaN collapses to 0.
        if d.is_nan() {
            0.0
        } else {
            d.clamp(0.0, 1.0)
        }
    }
}

/// Free-function form of [`DecaySchedule::epsilon`].
pub fn epsilon(schedule: &DecaySchedule, k: u32) -> f64 {
    schedule.epsilon(k)
}

/// One bit per decision step: `true` feeds the actual state, `false` the
/// generated one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMask {
    bits: Vec<bool>,
}

impl SampleMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// All-actual mask (teacher forcing).
    pub fn teacher_forcing(len: usize) -> Self {
        Self { bits: vec![true; len] }
    }

    /// All-generated mask (free-running rollout).
    pub fn free_running(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn uses_actual(&self, t: usize) -> bool {
        self.bits[t]
    }
}

/// Independent Bernoulli(`eps`) bits, reproducible from `seed`.
pub fn sample_mask(eps: f64, len: usize, seed: u64) -> Result<SampleMask> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("sampling probability {eps} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..len).map(|_| rng.random::<f64>() < eps).collect();
    Ok(SampleMask { bits })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a tuple of keys into one RNG seed. Used so that every random draw is
/// a function of *what* it is for rather than of iteration order.
pub fn keyed_seed(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x005e_ed0f_f011_0e55, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Seed of the mask used for one follower rollout.
pub fn mask_seed(run_seed: u64, epoch: u32, platoon_id: u64, vehicle_index: usize) -> u64 {
    keyed_seed(&[run_seed, 0x6d61_736b, epoch as u64, platoon_id, vehicle_index as u64])
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPOCHS: u32 = 100;

    #[test]
    fn linear_reference_points() {
        let s = DecaySchedule::standard(ScheduleFamily::Linear, EPOCHS);
        assert_eq!(s.epsilon(0), 1.0);
        assert!(s.epsilon(50).abs() < 1e-15);
        assert!((s.epsilon(25) - 0.5).abs() < 1e-15);
        assert_eq!(s.epsilon(80), 0.0);
    }

    #[test]
    fn inverse_sigmoid_midpoint() {
        let s = DecaySchedule::standard(ScheduleFamily::InverseSigmoid, EPOCHS);
        assert_eq!(s.c, 25.0);
        assert_eq!(s.epsilon(25), 0.5);
    }

    #[test]
    fn exponential_value() {
        let s = DecaySchedule::standard(ScheduleFamily::Exponential, EPOCHS);
        assert!((s.epsilon(10) - 0.348_678_440_1).abs() < 1e-10);
        assert!((s.epsilon(10) - 0.9f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn constant_families() {
        let a = DecaySchedule::standard(ScheduleFamily::AlwaysActual, EPOCHS);
        let g = DecaySchedule::standard(ScheduleFamily::AlwaysGenerated, EPOCHS);
        for k in 0..=EPOCHS {
            assert_eq!(a.epsilon(k), 1.0);
            assert_eq!(g.epsilon(k), 0.0);
        }
        assert_eq!(a.epsilon(EPOCHS + 1), 0.0);
    }

    #[test]
    fn family_names_round_trip() {
        for f in ScheduleFamily::ALL {
            assert_eq!(f.name().parse::<ScheduleFamily>().unwrap(), f);
        }
        assert!("cosine".parse::<ScheduleFamily>().is_err());
    }

    #[test]
    fn mask_extremes() {
        assert!(sample_mask(1.0, 50, 3).unwrap().bits().iter().all(|&b| b));
        assert!(sample_mask(0.0, 50, 3).unwrap().bits().iter().all(|&b| !b));
        assert!(sample_mask(1.5, 5, 3).is_err());
    }

    #[test]
    fn mask_frequency() {
        let m = sample_mask(0.5, 10_000, 11).unwrap();
        let mean = m.bits().iter().filter(|&&b| b).count() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");
    }

    #[test]
    fn mask_is_reproducible() {
        assert_eq!(sample_mask(0.3, 100, 5).unwrap(), sample_mask(0.3, 100, 5).unwrap());
        assert_ne!(mask_seed(1, 0, 7, 2), mask_seed(1, 0, 7, 3));
        assert_ne!(mask_seed(1, 0, 7, 2), mask_seed(1, 1, 7, 2));
        assert_ne!(mask_seed(1, 0, 7, 2), mask_seed(2, 0, 7, 2));
    }

    proptest::proptest! {
        #[test]
        fn epsilon_in_unit_interval(k in 0u32..1000, w in -5.0..5.0f64, c in -50.0..50.0f64, fam in 0usize..5) {
            let s = DecaySchedule { family: ScheduleFamily::ALL[fam], w, c, epoch_max: 100 };
            let e = s.epsilon(k);
            proptest::prop_assert!((0.0..=1.0).contains(&e));
            if k > 100 {
                proptest::prop_assert_eq!(e, 0.0);
            }
        }
    }

    #[test]
    fn standard_schedules_non_increasing() {
        for fam in [
            ScheduleFamily::Linear,
            ScheduleFamily::Exponential,
            ScheduleFamily::InverseSigmoid,
        ] {
            let s = DecaySchedule::standard(fam, EPOCHS);
            for k in 0..EPOCHS {
                assert!(s.epsilon(k + 1) <= s.epsilon(k), "{fam} at {k}");
            }
        }
    }
}
