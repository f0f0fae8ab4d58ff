//! Position-MSE training losses.
//!
//! Both follow the literal normalization: sums over decision steps start at
//! the second step but divide by the full step count `T`, and the
//! platoon-level loss divides by the platoon size `I` while summing followers
//! only.

use crate::error::{Error, Result};
use crate::state::Platoon;

/// `(1/N) sum_n (1/T) sum_{t>=2} (x_2(t) - x_hat_2(t))^2` over vehicle pairs.
///
/// `generated[n]` holds the generated follower positions of pair `n`,
/// including the (unscored) first step.
pub fn pair_loss(pairs: &[Platoon], generated: &[Vec<f64>]) -> Result<f64> {
    if pairs.len() != generated.len() {
        return Err(Error::Shape(format!(
            "{} pairs but {} generated sequences",
            pairs.len(),
            generated.len()
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Data("loss over an empty dataset".into()));
    }
    let mut total = 0.0;
    for (pair, gen) in pairs.iter().zip(generated) {
        if pair.size() != 2 {
            return Err(Error::Shape(format!(
                "platoon {} has {} vehicles, pair loss needs 2",
                pair.platoon_id(),
                pair.size()
            )));
        }
        let actual = pair.trajectories()[1].states();
        if gen.len() != actual.len() {
            return Err(Error::Shape(format!(
                "pair {}: {} actual steps, {} generated",
                pair.platoon_id(),
                actual.len(),
                gen.len()
            )));
        }
        let t_len = actual.len() as f64;
        let sum: f64 = actual[1..].iter().zip(&gen[1..]).map(|(a, g)| (a.x - g).powi(2)).sum();
        total += sum / t_len;
    }
    Ok(total / pairs.len() as f64)
}

/// `(1/N) sum_n (1/T) sum_{t>=2} (1/I) sum_{i>=2} (x_i(t) - x_hat_i(t))^2`.
pub fn platoon_loss(actual: &[Platoon], generated: &[Platoon]) -> Result<f64> {
    if actual.len() != generated.len() {
        return Err(Error::Shape(format!(
            "{} actual platoons but {} generated",
            actual.len(),
            generated.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Data("loss over an empty dataset".into()));
    }
    let mut total = 0.0;
    for (a, g) in actual.iter().zip(generated) {
        a.check_same_shape(g)?;
        let t_len = a.steps() as f64;
        let i_len = a.size() as f64;
        let mut per_step = 0.0;
        for t in 1..a.steps() {
            let mut over_vehicles = 0.0;
            for i in 1..a.size() {
                let e = a.trajectories()[i].states()[t].x - g.trajectories()[i].states()[t].x;
                over_vehicles += e * e;
            }
            per_step += over_vehicles / i_len;
        }
        total += per_step / t_len;
    }
    Ok(total / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Trajectory, VehicleState};

    fn traj(id: u64, xs: &[f64]) -> Trajectory {
        Trajectory::new(
            id,
            0.0,
            0.5,
            xs.iter().map(|&x| VehicleState::new(x, 1.0, 0.0)).collect(),
        )
        .unwrap()
    }

    fn platoon(id: u64, size: usize, steps: usize, shift: f64) -> (Platoon, Platoon) {
        let make = |off: f64| {
            let trajs = (0..size)
                .map(|i| {
                    let base = 100.0 - 20.0 * i as f64;
                    let xs: Vec<f64> = (0..steps)
                        .map(|t| base + t as f64 + if i > 0 && t > 0 { off } else { 0.0 })
                        .collect();
                    traj(i as u64 + 1, &xs)
                })
                .collect();
            Platoon::new(id, trajs).unwrap()
        };
        (make(0.0), make(shift))
    }

    #[test]
    fn pair_loss_zero_on_identity() {
        let (p, _) = platoon(1, 2, 5, 0.0);
        let gen: Vec<f64> = p.trajectories()[1].positions().collect();
        assert_eq!(pair_loss(&[p], &[gen]).unwrap(), 0.0);
    }

    #[test]
    fn pair_loss_literal_normalization() {
        let p = Platoon::new(1, vec![traj(1, &[10.0, 11.0, 12.0]), traj(2, &[0.0, 1.0, 2.0])]).unwrap();
        let gen = vec![0.0, 1.5, 2.5];
        let loss = pair_loss(std::slice::from_ref(&p), std::slice::from_ref(&gen)).unwrap();
        assert!((loss - 0.5 / 3.0).abs() < 1e-15);
        let doubled = vec![0.0, 2.0, 3.0];
        let loss2 = pair_loss(&[p], &[doubled]).unwrap();
        assert!((loss2 - 4.0 * loss).abs() < 1e-15);
    }

    #[test]
    fn platoon_loss_uniform_error() {
        let (a, g) = platoon(1, 5, 40, 1.0);
        let loss = platoon_loss(&[a], &[g]).unwrap();
        assert!((loss - 0.78).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn platoon_loss_on_pairs_is_half_pair_loss() {
        let (a, g) = platoon(1, 2, 7, 0.3);
        let gen: Vec<f64> = g.trajectories()[1].positions().collect();
        let pl = platoon_loss(std::slice::from_ref(&a), &[g]).unwrap();
        let pa = pair_loss(&[a], &[gen]).unwrap();
        assert!((pl - pa / 2.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let (a, _) = platoon(1, 3, 4, 0.0);
        let (b, _) = platoon(2, 2, 4, 0.0);
        assert!(platoon_loss(std::slice::from_ref(&a), &[b]).is_err());
        assert!(platoon_loss(std::slice::from_ref(&a), &[]).is_err());
        assert!(pair_loss(&[a], &[vec![0.0; 4]]).is_err());
    }
}
