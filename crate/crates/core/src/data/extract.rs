//! Platoon extraction from raw per-frame records.

use std::collections::{BTreeMap, HashMap};

use super::records::RawRecord;
use super::resample::resample_rows;
use super::{Dataset, DatasetMeta, PlatoonFilter, Provenance};
use crate::state::{Platoon, Trajectory};

/// Times are bucketed to the millisecond when matching frames across vehicles.
fn time_key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

struct Series {
    lane: Vec<u32>,
    times: Vec<f64>,
    xs: Vec<f64>,
    vs: Vec<f64>,
}

/// Chains vehicles through `preceding_id` inside one lane and cuts each
/// chain of `filter.min_vehicles` that persists for at least
/// `filter.min_duration` into disjoint, leading-aligned windows of exactly
/// `filter.min_duration`, sampled every `dt`.
///
/// Every vehicle with an in-lane follower chain of the required length heads
/// a candidate, so longer queues yield overlapping vehicle sets. A chain
/// breaks as soon as any member changes lane, drops out of the records, or
/// changes the vehicle it follows.
pub fn extract_platoons(records: &[RawRecord], filter: &PlatoonFilter, dt: f64) -> Dataset {
    let mut frames: BTreeMap<i64, Vec<&RawRecord>> = BTreeMap::new();
    for r in records {
        frames.entry(time_key(r.time)).or_default().push(r);
    }
    let timeline: Vec<i64> = frames.keys().copied().collect();

    // chain -> list of (first frame index, last frame index)
    let mut runs: HashMap<Vec<u64>, Vec<(usize, usize)>> = HashMap::new();
    for (fi, key) in timeline.iter().enumerate() {
        let rows = &frames[key];
        let by_id: HashMap<u64, &RawRecord> = rows.iter().map(|r| (r.vehicle_id, *r)).collect();
        let mut follower_of: HashMap<u64, &RawRecord> = HashMap::new();
        for r in rows {
            if r.preceding_id == 0 || !filter.lane_allowed(r.lane) {
                continue;
            }
            let Some(lead) = by_id.get(&r.preceding_id) else {
                continue;
            };
            if lead.lane != r.lane {
                continue;
            }
            // Two vehicles claiming the same leader: keep the closer one.
            match follower_of.get(&r.preceding_id) {
                Some(prev) if prev.position >= r.position => {}
                _ => {
                    follower_of.insert(r.preceding_id, r);
                }
            }
        }
        for head in rows {
            if !filter.lane_allowed(head.lane) {
                continue;
            }
            let mut chain = vec![head.vehicle_id];
            while chain.len() < filter.min_vehicles {
                match follower_of.get(chain.last().unwrap()) {
                    Some(f) if !chain.contains(&f.vehicle_id) => chain.push(f.vehicle_id),
                    _ => break,
                }
            }
            if chain.len() < filter.min_vehicles {
                continue;
            }
            let list = runs.entry(chain).or_default();
            match list.last_mut() {
                Some(run) if run.1 + 1 == fi => run.1 = fi,
                _ => list.push((fi, fi)),
            }
        }
    }

    let mut series: HashMap<u64, Series> = HashMap::new();
    let mut sorted: Vec<&RawRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id).then(a.time.total_cmp(&b.time)));
    for r in sorted {
        let s = series.entry(r.vehicle_id).or_insert_with(|| Series {
            lane: Vec::new(),
            times: Vec::new(),
            xs: Vec::new(),
            vs: Vec::new(),
        });
        if s.times.last().is_some_and(|&t| time_key(t) == time_key(r.time)) {
            continue;
        }
        s.lane.push(r.lane);
        s.times.push(r.time);
        s.xs.push(r.position);
        s.vs.push(r.velocity);
    }

    let n = (filter.min_duration / dt).round() as usize;
    let window_len = n.saturating_sub(1) as f64 * dt;
    let mut windows: Vec<(i64, Vec<u64>, f64)> = Vec::new();
    for (chain, list) in &runs {
        for &(a, b) in list {
            let (start, end) = (timeline[a] as f64 / 1000.0, timeline[b] as f64 / 1000.0);
            let mut s = start;
            while s + window_len <= end + 1e-9 && end - start >= filter.min_duration - frame_slack(&timeline) {
                windows.push((time_key(s), chain.clone(), s));
                s += filter.min_duration;
            }
        }
    }
    windows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut platoons = Vec::new();
    for (_, chain, start) in windows {
        let trajs: Option<Vec<Trajectory>> = chain
            .iter()
            .map(|id| {
                let s = &series[id];
                let states = resample_rows(&s.times, &s.xs, &s.vs, start, n, dt).ok()?;
                Trajectory::new(*id, start, dt, states).ok()
            })
            .collect();
        let lane = series[&chain[0]].lane[series[&chain[0]].times.partition_point(|&t| t < start - 1e-9)];
        match trajs.map(|t| Platoon::new(platoons.len() as u64 + 1, t)) {
            Some(Ok(p)) => platoons.push(p.with_lane(Some(lane))),
            Some(Err(e)) => log::warn!("dropping window of chain {chain:?} at {start}s: {e}"),
            None => log::warn!("dropping window of chain {chain:?} at {start}s: resampling failed"),
        }
    }

    Dataset {
        platoons,
        meta: DatasetMeta {
            provenance: Provenance::Records { count: records.len() },
            dt,
            filter: filter.clone(),
            split: None,
        },
    }
}

/// One frame interval of the timeline: a run covering frames `0..=k` spans
/// `k` intervals, so it persists one interval longer than `end - start`.
fn frame_slack(timeline: &[i64]) -> f64 {
    timeline
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / 1000.0)
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
        + 1e-9
}
