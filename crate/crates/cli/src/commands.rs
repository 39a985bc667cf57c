//! The subcommands, callable as library functions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use attnop_core::models::{count_params, count_params_formula, estimate_flops, ArchRow, ComplexityConfig};
use attnop_core::training::{evaluate, history_csv, train, EpochRecord};
use attnop_core::{Dataset, Metrics, ModelConfig, ModelParameters, TrainConfig, Variant};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DataSource, ExperimentConfig};
use crate::container::{write_container, DatasetMeta};
use crate::error::{CliError, CliResult};
use crate::verify::{verify_convergence, VerifyConfig, VerifyReport};

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("serializable"))
}

/// Generates every generator block of `data` into `out/<block>`.
pub fn cmd_datagen(config: &ExperimentConfig, out: &Path, seed: Option<u64>) -> CliResult<Vec<(String, DatasetMeta)>> {
    let data = config.data()?;
    let blocks = [("train", &data.train), ("validation", &data.validation), ("test", &data.test)];
    let mut written = Vec::new();
    for (name, src) in blocks {
        let Some(src) = src else { continue };
        if let DataSource::Container(p) = src {
            return Err(CliError::Config(format!("data.{name} names a container ({}), not a generator", p.display())));
        }
        let src = match seed {
            Some(s) => src.clone().with_seed(s),
            None => src.clone(),
        };
        let dataset = src.load()?;
        let meta = write_container(&out.join(name), &dataset, Some(&src))?;
        log::info!("wrote {} {} samples to {}", meta.n_samples, meta.problem, out.join(name).display());
        written.push((name.to_string(), meta));
    }
    if written.is_empty() {
        return Err(CliError::Config("no data blocks to generate".into()));
    }
    Ok(written)
}

pub struct TrainRun {
    pub model: ModelParameters,
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub initial_checkpoint: PathBuf,
}

pub fn train_config(config: &ExperimentConfig, seed: Option<u64>) -> TrainConfig {
    let mut t = config.train.clone().unwrap_or_default();
    if let Some(s) = seed {
        t.seed = s;
    }
    t
}

/// Trains from a fresh initialization seeded by the training seed. Writes
/// `checkpoint_init.json`, `checkpoint.json` and `history.csv`; on a
/// numeric failure the history so far is still written.
pub fn cmd_train(config: &ExperimentConfig, out: &Path, seed: Option<u64>) -> CliResult<TrainRun> {
    let tc = train_config(config, seed);
    tc.validate()?;
    let model_config = config.model()?.clone();
    let data = config.train_source()?.load()?;
    let validation = match &config.data()?.validation {
        Some(v) => Some(v.load()?),
        None => None,
    };
    train_on(model_config, &data, validation.as_ref(), &tc, out)
}

pub fn train_on(
    model_config: ModelConfig,
    data: &Dataset,
    validation: Option<&Dataset>,
    tc: &TrainConfig,
    out: &Path,
) -> CliResult<TrainRun> {
    let mut model = ModelParameters::init(model_config, tc.seed)?;
    if tc.normalize {
        model.set_normalizer(Some(data.fit_normalizer()?));
    }
    let initial_checkpoint = out.join("checkpoint_init.json");
    save_checkpoint(&initial_checkpoint, &model)?;
    let history_path = out.join("history.csv");
    let mut so_far = Vec::new();
    let result = train(model, data, validation, tc, |rec| {
        so_far.push(rec.clone());
        if let Err(e) = write_text(&history_path, &history_csv(&so_far)) {
            log::warn!("could not update history: {e}");
        }
    });
    match result {
        Ok(outcome) => {
            write_text(&history_path, &history_csv(&outcome.history))?;
            let checkpoint = out.join("checkpoint.json");
            save_checkpoint(&checkpoint, &outcome.model)?;
            Ok(TrainRun { model: outcome.model, history: outcome.history, checkpoint, initial_checkpoint })
        }
        Err(failure) => {
            write_text(&history_path, &history_csv(&failure.history))?;
            Err(failure.error.into())
        }
    }
}

/// Applies the eval block's smoothing switch to a loaded model.
fn eval_model(config: &ExperimentConfig, model: ModelParameters) -> CliResult<ModelParameters> {
    let Some(flag) = config.eval.as_ref().and_then(|e| e.smoothing) else { return Ok(model) };
    match (flag, model.config().smoothing.is_some()) {
        (false, true) => {
            let mut c = model.config().clone();
            c.smoothing = None;
            let mut m = ModelParameters::from_flat(c, model.flatten().to_vec())?;
            m.set_normalizer(model.normalizer().cloned());
            Ok(m)
        }
        (true, false) => Err(CliError::Config("eval.smoothing is on but the model has no smoothing layer".into())),
        _ => Ok(model),
    }
}

/// Evaluates a checkpoint on the test source and writes `metrics.json`.
pub fn cmd_eval(config: &ExperimentConfig, checkpoint: &Path, out: &Path) -> CliResult<Metrics> {
    let model = eval_model(config, load_checkpoint(checkpoint)?)?;
    let data = config.test_source()?.load()?;
    let metrics = evaluate(&model, &data)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub resolution: usize,
    pub n_points: usize,
    pub median_rel_l2: f64,
    pub mean_rel_l2: f64,
    pub max_rel_l2: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("resolution,n_points,median_rel_l2,mean_rel_l2,max_rel_l2\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e},{:e},{:e}", r.resolution, r.n_points, r.median_rel_l2, r.mean_rel_l2, r.max_rel_l2);
    }
    s
}

/// Zero-shot evaluation of one checkpoint on test sets regenerated at each
/// resolution (points per axis). Rows that cannot be evaluated are skipped
/// with a warning. Writes `sweep.csv`.
pub fn cmd_sweep_resolution(
    config: &ExperimentConfig,
    checkpoint: &Path,
    resolutions: Option<&[usize]>,
    out: &Path,
) -> CliResult<Vec<SweepRow>> {
    let model = eval_model(config, load_checkpoint(checkpoint)?)?;
    let source = config.test_source()?;
    let resolutions = match resolutions {
        Some(r) => r.to_vec(),
        None => config.eval.as_ref().map(|e| e.resolutions.clone()).unwrap_or_default(),
    };
    if resolutions.is_empty() {
        return Err(CliError::Config("no resolutions requested (eval.resolutions)".into()));
    }
    let mut rows = Vec::new();
    for r in resolutions {
        let attempt = source.at_resolution(r).and_then(|src| {
            let data = src.load()?;
            let m = evaluate(&model, &data)?;
            Ok((data, m))
        });
        match attempt {
            Ok((data, m)) => rows.push(SweepRow {
                resolution: r,
                n_points: data.get(0).map_or(0, |s| s.input.len()),
                median_rel_l2: m.median,
                mean_rel_l2: m.mean,
                max_rel_l2: m.max,
            }),
            Err(CliError::Io(e)) => return Err(CliError::Io(e)),
            Err(e) => {
                log::warn!("resolution {r} skipped: {e}");
                eprintln!("resolution {r} skipped: {e}");
            }
        }
    }
    write_text(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub row: ArchRow,
    pub config: ComplexityConfig,
    pub params_formula: u64,
    /// Count of a constructed model, where the row maps onto one.
    pub params_constructed: Option<u64>,
    pub flops: Vec<(usize, u64)>,
}

fn int_root(x: usize, d: usize) -> Option<usize> {
    (1..=x).find(|r| r.pow(d as u32) >= x).filter(|r| r.pow(d as u32) == x)
}

/// A model whose parameter count the row's closed form describes.
pub fn model_for_row(c: &ComplexityConfig) -> Option<ModelConfig> {
    let variant = match c.row {
        ArchRow::Tno => return Some(ModelConfig::tno(c.d_u, c.d_z, c.d, c.d_model, c.layers(), 1)),
        ArchRow::Vitno => Variant::Vitno,
        ArchRow::Fano => Variant::Fano,
        ArchRow::Fno | ArchRow::Afno => return None,
    };
    let side = int_root(c.k_max, c.d)?;
    if side % 2 == 0 {
        return None;
    }
    let per_axis = int_root(c.n_patches, c.d)?;
    let m = ModelConfig::patched(variant, c.d_u, c.d_z, c.d_model, c.layers(), 1, vec![per_axis; c.d], vec![side / 2; c.d]);
    Some(m)
}

pub fn complexity_rows(rows: &[ComplexityConfig], n_points: &[usize]) -> CliResult<Vec<ComplexityRow>> {
    rows.iter()
        .map(|c| {
            let constructed = match model_for_row(c) {
                Some(m) => Some(count_params(&m)? as u64),
                None => None,
            };
            let flops = n_points.iter().map(|&n| Ok((n, estimate_flops(c, n)?))).collect::<CliResult<_>>()?;
            Ok(ComplexityRow { row: c.row, config: c.clone(), params_formula: count_params_formula(c)?, params_constructed: constructed, flops })
        })
        .collect()
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut s = String::from("row,d_u,d,d_z,d_model,k_max,n_patches,layers,params_formula,params_constructed,n_points,flops\n");
    for r in rows {
        let c = &r.config;
        let prefix = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.row,
            c.d_u,
            c.d,
            c.d_z,
            c.d_model,
            c.k_max,
            c.n_patches,
            c.layers(),
            r.params_formula,
            r.params_constructed.map(|v| v.to_string()).unwrap_or_default()
        );
        if r.flops.is_empty() {
            let _ = writeln!(s, "{prefix},,");
        }
        for (n, f) in &r.flops {
            let _ = writeln!(s, "{prefix},{n},{f}");
        }
    }
    s
}

pub fn complexity_text(rows: &[ComplexityRow]) -> String {
    let mut s = format!("{:<6} {:>7} {:>5} {:>14} {:>14}  flops\n", "row", "d_model", "L", "params", "constructed");
    for r in rows {
        let flops: Vec<String> = r.flops.iter().map(|(n, f)| format!("N={n}: {f}")).collect();
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>5} {:>14} {:>14}  {}",
            r.row.name(),
            r.config.d_model,
            r.config.layers(),
            r.params_formula,
            r.params_constructed.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            flops.join(", ")
        );
    }
    s
}

/// Evaluates the closed forms; writes `complexity.csv` and `complexity.txt`.
/// Without a complexity block, the TNO Darcy configuration is tabulated.
pub fn cmd_complexity(config: &ExperimentConfig, out: &Path) -> CliResult<Vec<ComplexityRow>> {
    let (rows, ns) = match &config.complexity {
        Some(b) => (b.rows.clone(), b.n_points.clone()),
        None => (vec![ComplexityConfig::new(ArchRow::Tno, 1, 2, 1, 128)], vec![64 * 64]),
    };
    let table = complexity_rows(&rows, &ns)?;
    for r in &table {
        if let Some(c) = r.params_constructed {
            if c != r.params_formula {
                return Err(CliError::Numeric(format!(
                    "{} row: constructed model has {c} parameters, closed form {}",
                    r.row, r.params_formula
                )));
            }
        }
    }
    write_text(&out.join("complexity.csv"), &complexity_csv(&table))?;
    write_text(&out.join("complexity.txt"), &complexity_text(&table))?;
    Ok(table)
}

/// Runs the convergence harness for each configured kind and writes
/// `verify.json`. A failed check is reported as a numeric failure after
/// the report is written.
pub fn cmd_verify_convergence(config: &ExperimentConfig, out: &Path, seed: Option<u64>) -> CliResult<Vec<VerifyReport>> {
    let mut vc: VerifyConfig = config.verify.clone().unwrap_or_default();
    if let Some(s) = seed {
        vc.params_seed = s;
    }
    let reports = vc.kinds.iter().map(|&k| verify_convergence(k, &vc)).collect::<CliResult<Vec<_>>>()?;
    write_json(&out.join("verify.json"), &reports)?;
    Ok(reports)
}
