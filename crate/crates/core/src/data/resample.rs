//! Linear-interpolation resampling onto a regular decision-step grid.

use crate::error::{Error, Result};
use crate::state::{Trajectory, VehicleState};

/// Relative slack when deciding whether a grid point lies on a sample or
/// inside the input span.
const GRID_EPS: f64 = 1e-9;

/// Samples `(time, position, velocity)` rows (sorted by time) at `t` by
/// linear interpolation. `None` outside the span.
pub(crate) fn interpolate(times: &[f64], xs: &[f64], vs: &[f64], t: f64) -> Option<(f64, f64)> {
    let (first, last) = (*times.first()?, *times.last()?);
    let slack = GRID_EPS * (1.0 + t.abs());
    if t < first - slack || t > last + slack {
        return None;
    }
    let j = times.partition_point(|&s| s <= t);
    if j == 0 {
        return Some((xs[0], vs[0]));
    }
    let k = j - 1;
    if (t - times[k]).abs() <= slack || k + 1 == times.len() {
        return Some((xs[k], vs[k]));
    }
    if (times[k + 1] - t).abs() <= slack {
        return Some((xs[k + 1], vs[k + 1]));
    }
    let u = (t - times[k]) / (times[k + 1] - times[k]);
    Some((xs[k] + u * (xs[k + 1] - xs[k]), vs[k] + u * (vs[k + 1] - vs[k])))
}

/// Accelerations by backward difference of velocity; the first step uses the
/// forward difference.
pub(crate) fn with_difference_accelerations(xv: &[(f64, f64)], dt: f64) -> Vec<VehicleState> {
    let n = xv.len();
    (0..n)
        .map(|k| {
            let a = match (k, n) {
                (_, 1) => 0.0,
                (0, _) => (xv[1].1 - xv[0].1) / dt,
                _ => (xv[k].1 - xv[k - 1].1) / dt,
            };
            VehicleState::new(xv[k].0, xv[k].1, a)
        })
        .collect()
}

/// Resamples `times`/`xs`/`vs` at `t_start + k * dt_out` for `k < n`.
pub(crate) fn resample_rows(
    times: &[f64],
    xs: &[f64],
    vs: &[f64],
    t_start: f64,
    n: usize,
    dt_out: f64,
) -> Result<Vec<VehicleState>> {
    let xv = (0..n)
        .map(|k| {
            let t = t_start + k as f64 * dt_out;
            interpolate(times, xs, vs, t).ok_or_else(|| {
                Error::Data(format!(
                    "resample time {t} outside input span [{}, {}]",
                    times.first().copied().unwrap_or(f64::NAN),
                    times.last().copied().unwrap_or(f64::NAN)
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(with_difference_accelerations(&xv, dt_out))
}

/// Resamples over the whole span of `traj` at interval `dt_out`, starting at
/// `t0`. A trajectory already at `dt_out` is returned unchanged.
pub fn resample(traj: &Trajectory, dt_out: f64) -> Result<Trajectory> {
    if !(dt_out > 0.0 && dt_out.is_finite()) {
        return Err(Error::Config(format!(
            "resample interval must be positive, got {dt_out}"
        )));
    }
    if (traj.dt() - dt_out).abs() <= GRID_EPS * dt_out {
        return Ok(traj.clone());
    }
    let span = traj.time(traj.len() - 1) - traj.t0();
    let n = ((span / dt_out) * (1.0 + GRID_EPS)).floor() as usize + 1;
    let times: Vec<f64> = (0..traj.len()).map(|k| traj.time(k)).collect();
    let xs: Vec<f64> = traj.states().iter().map(|s| s.x).collect();
    let vs: Vec<f64> = traj.states().iter().map(|s| s.v).collect();
    let states = resample_rows(&times, &xs, &vs, traj.t0(), n, dt_out)?;
    Trajectory::new(traj.vehicle_id(), traj.t0(), dt_out, states)
}

/// Resamples a fixed window of `n` states starting at `t_start`.
pub fn resample_window(traj: &Trajectory, t_start: f64, n: usize, dt_out: f64) -> Result<Trajectory> {
    let times: Vec<f64> = (0..traj.len()).map(|k| traj.time(k)).collect();
    let xs: Vec<f64> = traj.states().iter().map(|s| s.x).collect();
    let vs: Vec<f64> = traj.states().iter().map(|s| s.v).collect();
    let states = resample_rows(&times, &xs, &vs, t_start, n, dt_out)?;
    Trajectory::new(traj.vehicle_id(), t_start, dt_out, states)
}
