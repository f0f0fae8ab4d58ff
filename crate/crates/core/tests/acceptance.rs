//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use platoon_core::data::{
    extract_platoons, parse_trajectory_csv, split, synthesize, Dataset, LengthUnit, PlatoonFilter, RawRecord,
    SplitRule, SynthConfig,
};
use platoon_core::eval::{
    ae_distribution, generate_dataset, generate_platoon, mae, mmaae, pmaae_distribution, GenerationTask,
};
use platoon_core::models::idm_acceleration;
use platoon_core::network::{
    gradient_check, read_model, write_model, GradCheckConfig, NetworkParams, OptimizerKind, DEFAULT_HIDDEN,
};
use platoon_core::training::{
    feature_norm_for, fit, train_pair_epoch, train_platoon_epoch, BatchMode, TrainConfig, TrainLevel,
};
use platoon_core::{
    DecaySchedule, IdmParams, LstmModel, ObservationFeatures, Platoon, ScheduleFamily, Trajectory, VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and thresholds.
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(30);
const DEGEN_PARAM_TOL: f64 = 1e-12;
const DEGEN_TIME_LIMIT: Duration = Duration::from_secs(60);
const EXP_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-12;
const EQUILIBRIUM_DRIFT_TOL: f64 = 1e-6;
const MIN_MEDIAN_MAE_REDUCTION: f64 = 0.20;
const SEEDS: [u64; 3] = [1, 2, 3];
const SEED_MAJORITY: usize = 2;
const EXPERIMENT_TIME_TARGET: Duration = Duration::from_secs(15 * 60);

// Experiment setup for the directional criteria.
const EPOCHS: u32 = 60;
const LR: f64 = 3e-3;
/// Platoons per minibatch; pair runs use `(I - 1)` times as many pairs so
/// every variant takes the same number of optimizer steps.
const BATCH_PLATOONS: usize = 10;
const N_TRAIN: usize = 200;
const N_EVAL: usize = 20;
const VALIDATION_FRACTION: f64 = 0.1;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(id: u32, name: &'static str, passed: bool, detail: String) -> Outcome {
    println!(
        "criterion {id} [{}] {name}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    Outcome {
        id,
        name,
        passed,
        detail,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = GradCheckConfig {
        threshold: GRAD_REL_TOL,
        ..GradCheckConfig::default()
    };
    let r = gradient_check(&cfg).expect("gradient check runs");
    let elapsed = start.elapsed();
    let worst = r
        .blocks
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    report(
        1,
        "gradient correctness",
        r.max_rel_error < GRAD_REL_TOL && elapsed < GRAD_TIME_LIMIT && r.trials == 20,
        format!(
            "{} trials, max rel error {:.3e} (worst block {}), limit {GRAD_REL_TOL:e}, {:.1}s",
            r.trials,
            r.max_rel_error,
            worst.name,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let ds = synthesize(&SynthConfig {
        num_platoons: 12,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let pairs: Vec<Platoon> = ds.platoons.iter().flat_map(|p| p.pairs()).collect();
    let norm = feature_norm_for(&pairs).unwrap();
    let init = NetworkParams::init(&DEFAULT_HIDDEN, 9).unwrap().with_norm(norm);
    let alpha = 1e-3;
    let base = TrainConfig {
        epochs: 5,
        optimizer: OptimizerKind::Sgd,
        schedule: DecaySchedule::standard(ScheduleFamily::AlwaysActual, 5),
        batch: BatchMode::Minibatch(8),
        seed: 11,
        record_inputs: true,
        ..TrainConfig::default()
    };
    // Platoon-level loss carries 1/I = 1/2, folded into the step size.
    let cfg1 = TrainConfig {
        lr: alpha,
        ..base.clone()
    };
    let cfg2 = TrainConfig {
        lr: 2.0 * alpha,
        ..base
    };
    let (mut p1, mut p2) = (init.clone(), init);
    let mut o1 = cfg1.new_optimizer(p1.num_params()).unwrap();
    let mut o2 = cfg2.new_optimizer(p2.num_params()).unwrap();
    let mut inputs_equal = true;
    let mut max_diff = 0.0f64;
    for k in 0..5 {
        let r1 = train_pair_epoch(&p1, &mut o1, &pairs, &cfg1, k).unwrap();
        let r2 = train_platoon_epoch(&p2, &mut o2, &pairs, &cfg2, k).unwrap();
        inputs_equal &= !r1.inputs.is_empty() && r1.inputs == r2.inputs;
        p1 = r1.params;
        p2 = r2.params;
        for (a, b) in p1.theta().iter().zip(p2.theta()) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    report(
        2,
        "algorithm degeneration",
        inputs_equal && max_diff <= DEGEN_PARAM_TOL && elapsed < DEGEN_TIME_LIMIT,
        format!(
            "{} pairs x 5 epochs, inputs identical: {inputs_equal}, max |theta1 - theta2| = {max_diff:.3e} (limit {DEGEN_PARAM_TOL:e}), {:.1}s",
            pairs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let inv = DecaySchedule::standard(ScheduleFamily::InverseSigmoid, 100);
    let lin = DecaySchedule::standard(ScheduleFamily::Linear, 100);
    let exp = DecaySchedule::standard(ScheduleFamily::Exponential, 100);
    let e25 = inv.epsilon(25);
    let (l0, l50) = (lin.epsilon(0), lin.epsilon(50));
    let e10 = exp.epsilon(10);
    let monotone = [inv, lin, exp]
        .iter()
        .all(|s| (0..100).all(|k| s.epsilon(k + 1) <= s.epsilon(k)));
    let ok = e25 == 0.5 && l0 == 1.0 && l50 == 0.0 && (e10 - 0.9f64.powi(10)).abs() <= EXP_TOL && monotone;
    report(
        3,
        "decay schedules",
        ok,
        format!("inverse sigmoid eps25={e25}, linear eps0={l0} eps50={l50}, exponential eps10={e10:.15}, monotone={monotone}"),
    )
}

fn random_instance(rng: &mut ChaCha8Rng, id: u64) -> (Platoon, Platoon) {
    let size = rng.random_range(2..7);
    let steps = rng.random_range(2..12);
    let build = |rng: &mut ChaCha8Rng| {
        let trajs = (0..size)
            .map(|i| {
                let states = (0..steps)
                    .map(|_| VehicleState::new(1000.0 - 100.0 * i as f64 + rng.random_range(-20.0..20.0), 5.0, 0.0))
                    .collect();
                Trajectory::new(i as u64 + 1, 0.0, 0.5, states).unwrap()
            })
            .collect();
        Platoon::new(id, trajs).unwrap()
    };
    (build(rng), build(rng))
}

/// Direct loops over platoons, steps and vehicles.
fn naive_metrics(actual: &[Platoon], gen: &[Platoon]) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let n = actual.len();
    let mut mae = 0.0;
    let mut maxes = Vec::new();
    let mut all = Vec::new();
    for p in 0..n {
        let (a, g) = (&actual[p], &gen[p]);
        let (big_i, big_t) = (a.size(), a.steps());
        let mut per_platoon = 0.0;
        let mut m = 0.0f64;
        for t in 1..big_t {
            let mut per_step = 0.0;
            for i in 1..big_i {
                let e = (a.trajectories()[i].states()[t].x - g.trajectories()[i].states()[t].x).abs();
                per_step += e;
                m = m.max(e);
                all.push(e);
            }
            per_platoon += per_step / big_i as f64;
        }
        mae += per_platoon / big_t as f64;
        maxes.push(m);
    }
    let mmaae = maxes.iter().sum::<f64>() / n as f64;
    all.sort_by(f64::total_cmp);
    maxes.sort_by(f64::total_cmp);
    (mae / n as f64, mmaae, all, maxes)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut order_ok = true;
    for _ in 0..100 {
        let n = rng.random_range(1..5);
        let (actual, gen): (Vec<_>, Vec<_>) = (0..n).map(|k| random_instance(&mut rng, k + 1)).unzip();
        let (m1, mm1, ae1, pm1) = naive_metrics(&actual, &gen);
        let m2 = mae(&actual, &gen).unwrap();
        let mm2 = mmaae(&actual, &gen).unwrap();
        let ae2 = ae_distribution(&actual, &gen).unwrap();
        let pm2 = pmaae_distribution(&actual, &gen).unwrap();
        worst = worst.max((m1 - m2).abs()).max((mm1 - mm2).abs());
        if ae1.len() != ae2.len() || pm1.len() != pm2.len() {
            worst = f64::INFINITY;
        } else {
            for (a, b) in ae1.iter().zip(ae2.samples()).chain(pm1.iter().zip(pm2.samples())) {
                worst = worst.max((a - b).abs());
            }
        }
        order_ok &= m2 <= mm2;
    }
    report(
        4,
        "metric oracles",
        worst <= METRIC_TOL && order_ok,
        format!("100 instances, max deviation from loop recomputation {worst:.3e}, MAE <= MMaAE on all: {order_ok}"),
    )
}

/// Gap where the IDM acceleration behind an equally fast leader is zero.
fn bisect_gap(p: &IdmParams, v: f64) -> f64 {
    let acc = |g: f64| idm_acceleration(&ObservationFeatures { v_f: v, dv: 0.0, dx: g }, p);
    let (mut lo, mut hi) = (p.g_jam, 1000.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if acc(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_5() -> Outcome {
    let idm = IdmParams::default();
    let v = 15.0;
    let gap = bisect_gap(&idm, v);
    let steps = 40;
    let leader = Trajectory::new(
        1,
        0.0,
        0.5,
        (0..steps)
            .map(|t| VehicleState::new(500.0 + v * 0.5 * t as f64, v, 0.0))
            .collect(),
    )
    .unwrap();
    let task = GenerationTask {
        platoon_id: 1,
        lane: None,
        leader,
        followers: (1..5).map(|i| (i as u64 + 1, 500.0 - gap * i as f64, v)).collect(),
    };
    let p = generate_platoon(&idm, &task).unwrap();
    let mut drift = 0.0f64;
    for w in p.trajectories().windows(2) {
        for t in 0..steps {
            drift = drift.max((w[0].states()[t].x - w[1].states()[t].x - gap).abs());
        }
    }
    report(
        5,
        "IDM equilibrium",
        drift < EQUILIBRIUM_DRIFT_TOL,
        format!("bisected gap {gap:.9} m at {v} m/s, max drift over {steps} steps {drift:.3e} m"),
    )
}

#[derive(Clone, Copy)]
struct Scores {
    mae: f64,
    mmaae: f64,
}

struct SeedResult {
    lstm: Scores,
    lstm_ss: Scores,
    lstm_pl: Scores,
    int_lstm: Scores,
    idm: Scores,
}

fn synth_for_experiments(seed: u64) -> SynthConfig {
    SynthConfig {
        num_platoons: N_TRAIN + N_EVAL,
        seed,
        ..SynthConfig::default()
    }
}

fn run_seed(seed: u64) -> SeedResult {
    let ds = synthesize(&synth_for_experiments(seed)).unwrap();
    let frac = N_EVAL as f64 / (N_TRAIN + N_EVAL) as f64;
    let (train, eval) = split(
        &ds,
        &SplitRule::Fraction {
            eval_fraction: frac,
            seed,
        },
    )
    .unwrap();
    // Model selection uses a slice of the training data, never the eval set.
    let (fit_set, val) = split(
        &train,
        &SplitRule::Fraction {
            eval_fraction: VALIDATION_FRACTION,
            seed: seed + 100,
        },
    )
    .unwrap();
    let norm = feature_norm_for(&fit_set.platoons).unwrap();
    let init = NetworkParams::init(&DEFAULT_HIDDEN, seed).unwrap().with_norm(norm);
    let pairs: Vec<Platoon> = fit_set.platoons.iter().flat_map(|p| p.pairs()).collect();
    let followers = fit_set.platoons[0].size() - 1;

    let run = |data: &[Platoon], family: ScheduleFamily, level: TrainLevel, batch: usize| {
        let cfg = TrainConfig {
            epochs: EPOCHS,
            lr: LR,
            schedule: DecaySchedule::standard(family, EPOCHS),
            batch: BatchMode::Minibatch(batch),
            seed,
            ..TrainConfig::default()
        };
        let rep = fit(&init, data, &val.platoons, &cfg, level).unwrap();
        let generated = generate_dataset(&LstmModel::new(rep.best_params), &eval.platoons).unwrap();
        Scores {
            mae: mae(&eval.platoons, &generated).unwrap(),
            mmaae: mmaae(&eval.platoons, &generated).unwrap(),
        }
    };
    let pair_batch = BATCH_PLATOONS * followers;
    let idm_gen = generate_dataset(&IdmParams::default(), &eval.platoons).unwrap();
    SeedResult {
        lstm: run(&pairs, ScheduleFamily::AlwaysActual, TrainLevel::Pair, pair_batch),
        lstm_ss: run(&pairs, ScheduleFamily::InverseSigmoid, TrainLevel::Platoon, pair_batch),
        lstm_pl: run(
            &fit_set.platoons,
            ScheduleFamily::AlwaysActual,
            TrainLevel::Platoon,
            BATCH_PLATOONS,
        ),
        int_lstm: run(
            &fit_set.platoons,
            ScheduleFamily::InverseSigmoid,
            TrainLevel::Platoon,
            BATCH_PLATOONS,
        ),
        idm: Scores {
            mae: mae(&eval.platoons, &idm_gen).unwrap(),
            mmaae: mmaae(&eval.platoons, &idm_gen).unwrap(),
        },
    }
}

fn criteria_6_to_8() -> Vec<Outcome> {
    let start = Instant::now();
    let results: Vec<SeedResult> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    let elapsed = start.elapsed();
    println!(
        "  seed |   LSTM MAE/MMaAE | LSTM+SS MAE/MMaAE | LSTM+PL MAE/MMaAE | Int-LSTM MAE/MMaAE | IDM (reference)"
    );
    for (s, r) in SEEDS.iter().zip(&results) {
        let f = |x: Scores| format!("{:>7.3}/{:<7.3}", x.mae, x.mmaae);
        println!(
            "  {s:>4} | {} |   {} |   {} |    {} | {}",
            f(r.lstm),
            f(r.lstm_ss),
            f(r.lstm_pl),
            f(r.int_lstm),
            f(r.idm)
        );
    }
    println!(
        "  experiment wall time {:.1}s (target {}s)",
        elapsed.as_secs_f64(),
        EXPERIMENT_TIME_TARGET.as_secs()
    );

    let wins6 = results
        .iter()
        .filter(|r| r.int_lstm.mae < r.lstm.mae && r.int_lstm.mmaae < r.lstm.mmaae)
        .count();
    let med_reduction = median(results.iter().map(|r| 1.0 - r.int_lstm.mae / r.lstm.mae).collect());
    let c6 = report(
        6,
        "Int-LSTM beats teacher-forced LSTM",
        wins6 >= SEED_MAJORITY && med_reduction >= MIN_MEDIAN_MAE_REDUCTION,
        format!(
            "lower MAE and MMaAE on {wins6}/3 seeds (need {SEED_MAJORITY}), median MAE reduction {:.1}% (need {:.0}%)",
            100.0 * med_reduction,
            100.0 * MIN_MEDIAN_MAE_REDUCTION
        ),
    );

    let wins7 = results.iter().filter(|r| r.int_lstm.mmaae < r.lstm_pl.mmaae).count();
    let c7 = report(
        7,
        "inverse sigmoid beats always_actual on MMaAE",
        wins7 >= SEED_MAJORITY,
        format!("lower MMaAE on {wins7}/3 seeds (need {SEED_MAJORITY})"),
    );

    let med = |f: fn(&SeedResult) -> f64| median(results.iter().map(f).collect());
    let (m_lstm, m_ss, m_pl, m_int) = (
        med(|r| r.lstm.mae),
        med(|r| r.lstm_ss.mae),
        med(|r| r.lstm_pl.mae),
        med(|r| r.int_lstm.mae),
    );
    let c8 = report(
        8,
        "ablation direction",
        m_ss < m_lstm && m_int <= m_ss && m_int <= m_pl,
        format!(
            "median MAE: LSTM {m_lstm:.3}, LSTM+SS {m_ss:.3}, LSTM+PL {m_pl:.3}, Int-LSTM {m_int:.3} (need SS < LSTM and Int-LSTM <= SS, PL)"
        ),
    );
    vec![c6, c7, c8]
}

fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // Identical config and seed give identical model bytes.
    let ds = synthesize(&SynthConfig {
        num_platoons: 16,
        seed: 77,
        noise_std: 0.3,
        ..SynthConfig::default()
    })
    .unwrap();
    let train_once = || {
        let cfg = TrainConfig {
            epochs: 3,
            schedule: DecaySchedule::standard(ScheduleFamily::InverseSigmoid, 3),
            batch: BatchMode::Minibatch(4),
            seed: 77,
            ..TrainConfig::default()
        };
        let init = NetworkParams::init(&DEFAULT_HIDDEN, 77)
            .unwrap()
            .with_norm(feature_norm_for(&ds.platoons).unwrap());
        let rep = fit(&init, &ds.platoons, &ds.platoons[..4], &cfg, TrainLevel::Platoon).unwrap();
        let mut bytes = Vec::new();
        write_model(&rep.final_params, &mut bytes).unwrap();
        (rep.final_params, bytes)
    };
    let (params, bytes_a) = train_once();
    let (_, bytes_b) = train_once();
    let same_bytes = bytes_a == bytes_b;
    ok &= same_bytes;
    notes.push(format!("model bytes identical: {same_bytes}"));

    let back = read_model(bytes_a.as_slice()).unwrap();
    let model_rt = back.hidden_sizes() == params.hidden_sizes()
        && back.norm == params.norm
        && back
            .theta()
            .iter()
            .zip(params.theta())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    ok &= model_rt;
    notes.push(format!("model round trip: {model_rt}"));

    let ds_rt = Dataset::from_json(&ds.to_json().unwrap())
        .map(|d| d == ds)
        .unwrap_or(false);
    ok &= ds_rt;
    notes.push(format!("dataset round trip: {ds_rt}"));

    // Hand-authored NGSIM rows (feet, 10 Hz frames, extra columns ignored).
    let parsed = parse_trajectory_csv(&testdata("ngsim_three_rows.csv"), LengthUnit::Feet).unwrap();
    let ft = 0.3048;
    let expected = [
        RawRecord {
            vehicle_id: 2,
            time: 1.3,
            lane: 2,
            position: 35.381 * ft,
            velocity: 40.0 * ft,
            acceleration: 0.0,
            preceding_id: 0,
        },
        RawRecord {
            vehicle_id: 13,
            time: 1.3,
            lane: 2,
            position: 10.381 * ft,
            velocity: 38.5 * ft,
            acceleration: -1.25 * ft,
            preceding_id: 2,
        },
        RawRecord {
            vehicle_id: 27,
            time: 1.4,
            lane: 1,
            position: 120.0 * ft,
            velocity: 12.0 * ft,
            acceleration: 3.4 * ft,
            preceding_id: 0,
        },
    ];
    let fixture_ok = parsed.skipped.is_empty()
        && parsed.records.len() == 3
        && parsed.records.iter().zip(&expected).all(|(a, e)| {
            a.vehicle_id == e.vehicle_id
                && a.lane == e.lane
                && a.preceding_id == e.preceding_id
                && (a.time - e.time).abs() < 1e-12
                && (a.position - e.position).abs() < 1e-12
                && (a.velocity - e.velocity).abs() < 1e-12
                && (a.acceleration - e.acceleration).abs() < 1e-12
        });
    ok &= fixture_ok;
    notes.push(format!("3-row fixture parsed as authored: {fixture_ok}"));

    // Chain fixture: vehicles 11..15 in lane 3 for 25 s, 60 ft apart, 40 ft/s.
    let chain = parse_trajectory_csv(&testdata("ngsim_chain.csv"), LengthUnit::Feet).unwrap();
    let extracted = extract_platoons(&chain.records, &PlatoonFilter::default(), 0.5);
    let chain_ok = extracted.platoons.len() == 1 && {
        let p = &extracted.platoons[0];
        let ids: Vec<u64> = p.trajectories().iter().map(|t| t.vehicle_id()).collect();
        ids == [11, 12, 13, 14, 15]
            && p.steps() == 40
            && (p.t0() - 10.0).abs() < 1e-9
            && p.lane() == Some(3)
            && p.trajectories().iter().enumerate().all(|(j, tr)| {
                tr.states().iter().enumerate().all(|(k, s)| {
                    let x = (1000.0 - 60.0 * j as f64 + 40.0 * 0.5 * k as f64) * ft;
                    (s.x - x).abs() < 1e-9 && (s.v - 40.0 * ft).abs() < 1e-9
                })
            })
    };
    ok &= chain_ok;
    notes.push(format!("chain fixture yields the expected platoon: {chain_ok}"));

    report(9, "determinism and round trips", ok, notes.join(", "))
}

fn main() {
    // Respect `cargo test -- <filter>` style invocations that target other
    // test binaries: run only when unfiltered or when asked for by name.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        return;
    }

    let mut outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
    ];
    outcomes.extend(criteria_6_to_8());
    outcomes.push(criterion_9());

    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.passed).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("failed criterion {} ({}): {}", o.id, o.name, o.detail);
        }
        std::process::exit(1);
    }
}
