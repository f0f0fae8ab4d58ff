//! Position-error metrics over generated platoons.
//!
//! Index conventions follow the training losses: followers `i >= 2`, steps
//! `t >= 2`, with averages dividing by the platoon size `I` and the step
//! count `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::Platoon;

fn check_shapes(actual: &[Platoon], generated: &[Platoon]) -> Result<()> {
    if actual.len() != generated.len() {
        return Err(Error::Shape(format!(
            "{} actual platoons but {} generated",
            actual.len(),
            generated.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Data("metrics over an empty dataset".into()));
    }
    for (a, g) in actual.iter().zip(generated) {
        a.check_same_shape(g)?;
    }
    Ok(())
}

/// `|x_i(t) - x_hat_i(t)|` for followers `i >= 2` and steps `t >= 2`,
/// vehicle-major.
fn abs_errors<'a>(a: &'a Platoon, g: &'a Platoon) -> impl Iterator<Item = f64> + 'a {
    let g = g.trajectories();
    a.trajectories()[1..].iter().enumerate().flat_map(move |(i, tr)| {
        let gen = g[i + 1].states();
        tr.states()[1..].iter().zip(&gen[1..]).map(|(x, y)| (x.x - y.x).abs())
    })
}

fn platoon_max(a: &Platoon, g: &Platoon) -> f64 {
    abs_errors(a, g).fold(0.0, f64::max)
}

/// Mean absolute position error.
pub fn mae(actual: &[Platoon], generated: &[Platoon]) -> Result<f64> {
    check_shapes(actual, generated)?;
    let mut total = 0.0;
    for (a, g) in actual.iter().zip(generated) {
        let (t_len, i_len) = (a.steps() as f64, a.size() as f64);
        let mut per_step = 0.0;
        for t in 1..a.steps() {
            let sum: f64 = (1..a.size())
                .map(|i| (a.trajectories()[i].states()[t].x - g.trajectories()[i].states()[t].x).abs())
                .sum();
            per_step += sum / i_len;
        }
        total += per_step / t_len;
    }
    Ok(total / actual.len() as f64)
}

/// Mean over platoons of the per-platoon maximum absolute error.
pub fn mmaae(actual: &[Platoon], generated: &[Platoon]) -> Result<f64> {
    check_shapes(actual, generated)?;
    let sum: f64 = actual.iter().zip(generated).map(|(a, g)| platoon_max(a, g)).sum();
    Ok(sum / actual.len() as f64)
}

/// Empirical distribution over a sorted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    samples: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        Self { samples }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of samples `<= x` (right-continuous step function).
    pub fn eval(&self, x: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.partition_point(|&s| s <= x) as f64 / self.samples.len() as f64
    }

    /// `value,cdf` rows, one per sample.
    pub fn to_csv(&self) -> String {
        let n = self.samples.len() as f64;
        let mut out = String::from("value,cdf\n");
        for (k, v) in self.samples.iter().enumerate() {
            out.push_str(&format!("{v},{}\n", (k + 1) as f64 / n));
        }
        out
    }
}

/// Every absolute error sample.
pub fn ae_distribution(actual: &[Platoon], generated: &[Platoon]) -> Result<EmpiricalCdf> {
    check_shapes(actual, generated)?;
    let samples = actual
        .iter()
        .zip(generated)
        .flat_map(|(a, g)| abs_errors(a, g))
        .collect();
    Ok(EmpiricalCdf::new(samples))
}

/// One maximum absolute error per platoon.
pub fn pmaae_distribution(actual: &[Platoon], generated: &[Platoon]) -> Result<EmpiricalCdf> {
    check_shapes(actual, generated)?;
    Ok(EmpiricalCdf::new(
        actual.iter().zip(generated).map(|(a, g)| platoon_max(a, g)).collect(),
    ))
}

/// Absolute error per (follower, step) of one platoon, for heat maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrid {
    pub platoon_id: u64,
    pub vehicle_ids: Vec<u64>,
    pub times: Vec<f64>,
    /// `values[row][t]`, row 0 = first follower.
    pub values: Vec<Vec<f64>>,
}

impl ErrorGrid {
    /// Header `vehicle,<t_1>,<t_2>,...` then one row per follower.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vehicle");
        for t in &self.times {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
        for (id, row) in self.vehicle_ids.iter().zip(&self.values) {
            out.push_str(&id.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn error_grid(actual: &Platoon, generated: &Platoon) -> Result<ErrorGrid> {
    actual.check_same_shape(generated)?;
    let leader = actual.leader();
    let followers = &actual.trajectories()[1..];
    Ok(ErrorGrid {
        platoon_id: actual.platoon_id(),
        vehicle_ids: followers.iter().map(|t| t.vehicle_id()).collect(),
        times: (0..actual.steps()).map(|k| leader.time(k)).collect(),
        values: followers
            .iter()
            .zip(&generated.trajectories()[1..])
            .map(|(a, g)| {
                a.states()
                    .iter()
                    .zip(g.states())
                    .map(|(x, y)| (x.x - y.x).abs())
                    .collect()
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mmaae: f64,
    pub ae_samples: Vec<f64>,
    pub pmaae_samples: Vec<f64>,
    pub error_grids: Vec<ErrorGrid>,
}

impl MetricsReport {
    pub fn compute(actual: &[Platoon], generated: &[Platoon]) -> Result<Self> {
        Ok(Self {
            mae: mae(actual, generated)?,
            mmaae: mmaae(actual, generated)?,
            ae_samples: ae_distribution(actual, generated)?.samples,
            pmaae_samples: pmaae_distribution(actual, generated)?.samples,
            error_grids: actual
                .iter()
                .zip(generated)
                .map(|(a, g)| error_grid(a, g))
                .collect::<Result<_>>()?,
        })
    }
}
