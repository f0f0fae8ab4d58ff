use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use platoon_core::data::{extract_platoons, parse_trajectory_csv, split, synthesize, Dataset, Provenance};
use platoon_core::eval::{error_grid, generate_dataset, mae, mmaae, EmpiricalCdf, MetricsReport};
use platoon_core::network::{gradient_check, load_model, save_model, NetworkParams};
use platoon_core::training::{feature_norm_for, fit_from, load_checkpoint, save_checkpoint, FitState, TrainLevel};
use platoon_core::{AnyModel, LstmModel, Platoon, ScheduleFamily};
use serde::Serialize;

use crate::config::{ModelKind, RunConfig, TrainMode};
use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(path, text + "\n")
}

/// Every command leaves the configuration it actually ran with.
fn write_resolved(cfg: &RunConfig, out: &Path, command: &str) -> CliResult {
    write_file(&out.join(format!("{command}.config.toml")), cfg.to_toml())
}

fn resolved(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("paths are filled by RunConfig::resolve")
}

fn load_dataset(path: &Path, what: &str) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "{what} dataset {} not found (run `platoon synth` or `platoon ingest`, or set data.{what})",
            path.display()
        )));
    }
    Ok(Dataset::load(path)?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    total_platoons: usize,
    train_platoons: usize,
    eval_platoons: usize,
    train_file: &'a Path,
    eval_file: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped_rows: Option<usize>,
}

fn split_and_save(cfg: &RunConfig, out: &Path, ds: &Dataset, command: &str, skipped: Option<usize>) -> CliResult {
    let (train, eval) = split(ds, &cfg.data.split.rule(cfg.seed))?;
    let (train_path, eval_path) = (resolved(&cfg.data.train), resolved(&cfg.data.eval));
    write_file(train_path, train.to_json()?)?;
    write_file(eval_path, eval.to_json()?)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command,
            seed: cfg.seed,
            total_platoons: ds.len(),
            train_platoons: train.len(),
            eval_platoons: eval.len(),
            train_file: train_path,
            eval_file: eval_path,
            skipped_rows: skipped,
        },
    )?;
    write_resolved(cfg, out, command)?;
    println!(
        "{command}: {} platoons ({} train -> {}, {} eval -> {})",
        ds.len(),
        train.len(),
        train_path.display(),
        eval.len(),
        eval_path.display()
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult {
    let ds = synthesize(&cfg.synth)?;
    split_and_save(cfg, out, &ds, "synth", None)
}

pub fn ingest(cfg: &RunConfig, out: &Path) -> CliResult {
    let csv = cfg
        .data
        .csv
        .as_deref()
        .ok_or_else(|| CliError::Usage("ingest needs data.csv".into()))?;
    if !csv.exists() {
        return Err(CliError::Usage(format!("trajectory file {} not found", csv.display())));
    }
    let parsed = parse_trajectory_csv(csv, cfg.data.unit)?;
    for msg in parsed.skipped.iter().take(20) {
        log::warn!("{}: {msg}", csv.display());
    }
    let mut ds = extract_platoons(&parsed.records, &cfg.data.filter, cfg.data.dt);
    ds.meta.provenance = Provenance::File {
        path: csv.display().to_string(),
        unit: cfg.data.unit,
    };
    if ds.is_empty() {
        return Err(CliError::Data(format!(
            "no platoon in {} passes the filters",
            csv.display()
        )));
    }
    split_and_save(cfg, out, &ds, "ingest", Some(parsed.skipped.len()))
}

#[derive(Serialize)]
struct TrainSummary {
    schedule: ScheduleFamily,
    mode: TrainMode,
    epochs: usize,
    best_epoch: usize,
    best_inference_loss: f64,
    final_train_loss: f64,
    lr_halved: bool,
}

/// Trains one schedule into `dir`; `None` when stopped early.
#[allow(clippy::too_many_arguments)]
fn train_one(
    cfg: &RunConfig,
    family: ScheduleFamily,
    dir: &Path,
    model_file: &Path,
    init: &NetworkParams,
    items: &[Platoon],
    val: &[Platoon],
    resume: bool,
    stop_after: Option<u32>,
) -> CliResult<Option<NetworkParams>> {
    let tcfg = cfg.train.train_config(family, cfg.seed);
    let level = cfg.train.level();
    let ckpt = dir.join("checkpoint.json");
    let mut state = if resume && ckpt.exists() {
        let state = load_checkpoint(&ckpt)?;
        log::info!("resuming {} from epoch {}", dir.display(), state.next_epoch);
        state
    } else {
        FitState::new(init.clone(), &tcfg)?
    };
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let until = stop_after.unwrap_or(tcfg.epochs);
    fit_from(&mut state, items, val, &tcfg, level, until, |s| {
        save_checkpoint(s, &ckpt)
    })?;
    if state.next_epoch < tcfg.epochs {
        println!("stopped after epoch {}; resume with --resume", state.next_epoch);
        return Ok(None);
    }
    let report = state.into_report()?;
    save_model(&report.best_params, model_file)?;
    save_model(&report.final_params, &dir.join("model_final.bin"))?;
    write_file(&dir.join("loss.csv"), report.to_csv())?;
    write_json(
        &dir.join("train_report.json"),
        &TrainSummary {
            schedule: family,
            mode: cfg.train.mode,
            epochs: report.train_loss.len(),
            best_epoch: report.best_epoch,
            best_inference_loss: report.best_inference_loss,
            final_train_loss: *report.train_loss.last().unwrap_or(&f64::NAN),
            lr_halved: report.lr_halved,
        },
    )?;
    println!(
        "{family}: best epoch {} (inference loss {:.6}) -> {}",
        report.best_epoch,
        report.best_inference_loss,
        model_file.display()
    );
    Ok(Some(report.best_params))
}

pub fn train(cfg: &RunConfig, out: &Path, resume: bool, stop_after: Option<u32>) -> CliResult {
    let sweep = !cfg.train.sweep.is_empty();
    if sweep && cfg.train.mode != TrainMode::Platoon {
        return Err(CliError::Usage("train.sweep needs train.mode = \"platoon\"".into()));
    }
    if cfg.model.kind != ModelKind::Lstm {
        return Err(CliError::Usage(
            "only LSTM models are trained; set model.kind = \"lstm\"".into(),
        ));
    }
    let resolved_path = out.join("train.config.toml");
    if resume {
        let previous = fs::read_to_string(&resolved_path).map_err(|_| {
            CliError::Usage(format!(
                "--resume needs {} from an earlier run",
                resolved_path.display()
            ))
        })?;
        if previous != cfg.to_toml() {
            return Err(CliError::Usage(
                "--resume with a configuration different from the interrupted run".into(),
            ));
        }
    }
    let train_ds = load_dataset(resolved(&cfg.data.train), "train")?;
    let (fit_set, val) = if cfg.train.validation_fraction > 0.0 {
        let (f, v) = split(
            &train_ds,
            &platoon_core::data::SplitRule::Fraction {
                eval_fraction: cfg.train.validation_fraction,
                seed: cfg.seed.wrapping_add(1),
            },
        )?;
        (f.platoons, v.platoons)
    } else {
        (train_ds.platoons.clone(), train_ds.platoons)
    };
    if fit_set.is_empty() || val.is_empty() {
        return Err(CliError::Data("training or validation set is empty".into()));
    }
    let norm = feature_norm_for(&fit_set)?;
    let init = NetworkParams::init(&cfg.model.hidden, cfg.seed)?.with_norm(norm);
    let items: Vec<Platoon> = match cfg.train.level() {
        TrainLevel::Pair => fit_set.iter().flat_map(Platoon::pairs).collect(),
        TrainLevel::Platoon => fit_set,
    };
    write_resolved(cfg, out, "train")?;

    if !sweep {
        train_one(
            cfg,
            cfg.train.schedule,
            out,
            resolved(&cfg.model.file),
            &init,
            &items,
            &val,
            resume,
            stop_after,
        )?;
        return Ok(());
    }

    let eval_path = resolved(&cfg.data.eval);
    let eval = if eval_path.exists() {
        Some(Dataset::load(eval_path)?)
    } else {
        None
    };
    let mut table = String::from("schedule,best_epoch,best_inference_loss,eval_mae,eval_mmaae\n");
    for &family in &cfg.train.sweep {
        let dir = out.join("sweep").join(family.name());
        let Some(params) = train_one(
            cfg,
            family,
            &dir,
            &dir.join("model.bin"),
            &init,
            &items,
            &val,
            resume,
            stop_after,
        )?
        else {
            return Ok(());
        };
        let summary: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.join("train_report.json")).map_err(|e| CliError::Data(e.to_string()))?,
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
        let (m, mm) = match &eval {
            Some(ds) => {
                let g = generate_dataset(&LstmModel::new(params), &ds.platoons)?;
                (mae(&ds.platoons, &g)?, mmaae(&ds.platoons, &g)?)
            }
            None => (f64::NAN, f64::NAN),
        };
        let _ = writeln!(
            table,
            "{family},{},{},{m},{mm}",
            summary["best_epoch"], summary["best_inference_loss"]
        );
    }
    write_file(&out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn load_any_model(cfg: &RunConfig) -> CliResult<AnyModel> {
    match cfg.model.kind {
        ModelKind::Idm => {
            cfg.model.idm.validate()?;
            Ok(AnyModel::Idm(cfg.model.idm))
        }
        ModelKind::Lstm => {
            let path = resolved(&cfg.model.file);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "model file {} not found (train one or set model.file)",
                    path.display()
                )));
            }
            Ok(AnyModel::Lstm(LstmModel::new(load_model(path)?)))
        }
    }
}

/// `vehicle,t,x,v,a,x_actual,v_actual,a_actual`, one row per vehicle and step.
fn trajectory_csv(actual: &Platoon, generated: &Platoon) -> String {
    let mut out = String::from("vehicle,t,x,v,a,x_actual,v_actual,a_actual\n");
    for (a, g) in actual.trajectories().iter().zip(generated.trajectories()) {
        for (k, (sa, sg)) in a.states().iter().zip(g.states()).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                g.vehicle_id(),
                g.time(k),
                sg.x,
                sg.v,
                sg.a,
                sa.x,
                sa.v,
                sa.a
            );
        }
    }
    out
}

pub fn generate(cfg: &RunConfig, out: &Path) -> CliResult {
    let model = load_any_model(cfg)?;
    let eval = load_dataset(resolved(&cfg.data.eval), "eval")?;
    let generated = generate_dataset(&model, &eval.platoons)?;
    for (a, g) in eval.platoons.iter().zip(&generated) {
        write_file(
            &out.join("trajectories").join(format!("platoon_{}.csv", a.platoon_id())),
            trajectory_csv(a, g),
        )?;
    }
    let ds = Dataset {
        platoons: generated,
        meta: platoon_core::data::DatasetMeta {
            split: Some("generated".into()),
            ..eval.meta.clone()
        },
    };
    let path = resolved(&cfg.eval.generated);
    write_file(path, ds.to_json()?)?;
    write_resolved(cfg, out, "generate")?;
    println!("generate: {} platoons -> {}", ds.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsSummary {
    platoons: usize,
    mae: f64,
    mmaae: f64,
    ae_samples: usize,
}

fn by_id(mut platoons: Vec<Platoon>) -> Vec<Platoon> {
    platoons.sort_by_key(Platoon::platoon_id);
    platoons
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> CliResult {
    let actual = by_id(load_dataset(resolved(&cfg.data.eval), "eval")?.platoons);
    let gen_path = resolved(&cfg.eval.generated);
    if !gen_path.exists() {
        return Err(CliError::Usage(format!(
            "generated dataset {} not found (run `platoon generate` or set eval.generated)",
            gen_path.display()
        )));
    }
    let generated = by_id(Dataset::load(gen_path)?.platoons);
    let ids = |v: &[Platoon]| v.iter().map(Platoon::platoon_id).collect::<Vec<_>>();
    if ids(&actual) != ids(&generated) {
        return Err(CliError::Data(
            "generated and actual datasets hold different platoons".into(),
        ));
    }
    let report = MetricsReport::compute(&actual, &generated)?;
    write_json(
        &out.join("metrics.json"),
        &MetricsSummary {
            platoons: actual.len(),
            mae: report.mae,
            mmaae: report.mmaae,
            ae_samples: report.ae_samples.len(),
        },
    )?;
    write_file(&out.join("ae_cdf.csv"), EmpiricalCdf::new(report.ae_samples).to_csv())?;
    write_file(
        &out.join("pmaae_cdf.csv"),
        EmpiricalCdf::new(report.pmaae_samples).to_csv(),
    )?;
    let limit = cfg.eval.grid_limit.unwrap_or(usize::MAX);
    for (a, g) in actual.iter().zip(&generated).take(limit) {
        let grid = error_grid(a, g)?;
        write_file(
            &out.join("grids").join(format!("platoon_{}.csv", a.platoon_id())),
            grid.to_csv(),
        )?;
    }
    write_resolved(cfg, out, "evaluate")?;
    println!(
        "evaluate: {} platoons, MAE {:.4} m, MMaAE {:.4} m",
        actual.len(),
        report.mae,
        report.mmaae
    );
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, out: &Path, perturb: Option<f64>) -> CliResult {
    let mut gc = cfg.gradcheck.clone();
    if let Some(p) = perturb {
        gc.perturb = p;
    }
    let report = gradient_check(&gc)?;
    for b in &report.blocks {
        println!("{:<14} max rel error {:.3e}", b.name, b.max_rel_error);
    }
    println!(
        "gradcheck: {} trials, max rel error {:.3e}, threshold {:e}: {}",
        report.trials,
        report.max_rel_error,
        report.threshold,
        if report.passed { "PASS" } else { "FAIL" }
    );
    write_json(&out.join("gradcheck.json"), &report)?;
    write_resolved(cfg, out, "gradcheck")?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max rel error {:.3e} >= {:e}",
            report.max_rel_error, report.threshold
        )))
    }
}
