//! Report layout of `run` and `suite`:
//!
//! ```text
//! <out>/manifest.json
//! <out>/summary.csv
//! <out>/correlation.csv                      correlation suites only
//! <out>/<task>/task.toml
//! <out>/<task>/trials.csv
//! <out>/<task>/records/trial<t>.csv          KTF only
//! <out>/<task>/checkpoints/trial<t>_iter<k>.model
//! <out>/<task>/alignment/trial<t>_iter<k>.csv
//! <out>/<task>/data/trial<t>_{source,labeled,unlabeled}.domain
//! <out>/<task>/models/trial<t>.model
//! <out>/<task>/embeddings/trial<t>.csv
//! <out>/<task>/error.txt                     failed tasks only
//! ```
//!
//! Everything except `manifest.json` (which carries timings) is a pure
//! function of the config and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};
use shda_core::analysis::{
    average_records, dump_model_embeddings, write_correlation_report, write_matrix_csv, write_summary,
};
use shda_core::domains::save_domain;
use shda_core::model::save_model;
use shda_core::suites::{run_tasks, RunOptions, SuiteConfig, SuiteKind, TaskOutcome, TaskSpec, TrainerId};
use shda_core::trainers::{write_records, TrainRecord};
use shda_core::{Error, Result};

use crate::{CliError, CliResult, RunArgs};

pub const TRIALS_HEADER: &str = "trial,accuracy,baseline_accuracy";

pub fn records_path(task_dir: &Path, trial: usize) -> PathBuf {
    task_dir.join("records").join(format!("trial{trial}.csv"))
}

pub fn checkpoint_paths(task_dir: &Path, trial: usize, iteration: usize) -> (PathBuf, PathBuf) {
    let stem = format!("trial{trial}_iter{iteration}");
    (
        task_dir.join("checkpoints").join(format!("{stem}.model")),
        task_dir.join("alignment").join(format!("{stem}.csv")),
    )
}

pub fn data_path(task_dir: &Path, trial: usize, part: &str) -> PathBuf {
    task_dir.join("data").join(format!("trial{trial}_{part}.domain"))
}

fn mkdirs(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdirs(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_config(path: &Path) -> Result<(String, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    Ok((text, hash))
}

#[derive(Serialize)]
struct TaskEntry {
    id: String,
    dir: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    trials: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: String,
    config_sha256: String,
    seed: u64,
    summary: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation: Option<&'static str>,
    tasks: Vec<TaskEntry>,
    total_seconds: f64,
}

fn options(args: &RunArgs) -> RunOptions {
    RunOptions {
        checkpoint_iterations: args.checkpoints.clone(),
        keep_final_model: args.save_models || args.embeddings,
        keep_data: args.save_data || args.embeddings || !args.checkpoints.is_empty(),
    }
}

fn write_trials(dir: &Path, outcome: &TaskOutcome) -> Result<()> {
    let mut s = format!("{TRIALS_HEADER}\n");
    for t in &outcome.trials {
        let base = t.baseline_accuracy.map(|b| format!("{b:?}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:?},{base}", t.trial, t.accuracy);
    }
    write_text(&dir.join("trials.csv"), &s)
}

fn write_task(dir: &Path, spec: &TaskSpec, outcome: &TaskOutcome, args: &RunArgs) -> Result<()> {
    mkdirs(dir)?;
    write_text(&dir.join("task.toml"), &spec.to_toml())?;
    write_trials(dir, outcome)?;
    for t in &outcome.trials {
        if !t.records.is_empty() {
            let p = records_path(dir, t.trial);
            mkdirs(p.parent().expect("records dir"))?;
            write_records(&p, &t.records)?;
        }
        for (k, model, align) in &t.checkpoints {
            let (mp, ap) = checkpoint_paths(dir, t.trial, *k);
            mkdirs(mp.parent().expect("checkpoint dir"))?;
            mkdirs(ap.parent().expect("alignment dir"))?;
            save_model(model, &mp)?;
            write_matrix_csv(&ap, &align.scores)?;
        }
        if let Some(data) = &t.data {
            mkdirs(&dir.join("data"))?;
            save_domain(&data.source, &data_path(dir, t.trial, "source"))?;
            save_domain(&data.target.labeled, &data_path(dir, t.trial, "labeled"))?;
            save_domain(&data.target.unlabeled_domain()?, &data_path(dir, t.trial, "unlabeled"))?;
        }
        if let (true, Some(model)) = (args.save_models, &t.final_model) {
            let p = dir.join("models").join(format!("trial{}.model", t.trial));
            mkdirs(p.parent().expect("models dir"))?;
            save_model(model, &p)?;
        }
        if args.embeddings {
            if spec.trainer != TrainerId::Ktf {
                warn!("{}: embeddings are only dumped for ktf tasks", spec.id);
            } else if let (Some(model), Some(data)) = (&t.final_model, &t.data) {
                let p = dir.join("embeddings").join(format!("trial{}.csv", t.trial));
                mkdirs(p.parent().expect("embeddings dir"))?;
                dump_model_embeddings(
                    model,
                    &data.source,
                    &data.target.labeled,
                    &data.target.unlabeled,
                    data.target.unlabeled_truth(),
                    &p,
                )?;
            }
        }
    }
    Ok(())
}

/// Record series and NNt accuracies of every trial that has both.
pub fn correlation_inputs<'a>(outcomes: impl Iterator<Item = &'a TaskOutcome>) -> (Vec<Vec<TrainRecord>>, Vec<f64>) {
    let mut series = Vec::new();
    let mut base = Vec::new();
    for o in outcomes {
        for t in &o.trials {
            if let (false, Some(b)) = (t.records.is_empty(), t.baseline_accuracy) {
                series.push(t.records.clone());
                base.push(b);
            }
        }
    }
    (series, base)
}

struct Execution<'a> {
    command: &'static str,
    config: &'a Path,
    hash: String,
    seed: u64,
    correlation: bool,
}

fn execute(exec: Execution<'_>, specs: &[TaskSpec], args: &RunArgs, out: &Path, jobs: usize) -> CliResult<()> {
    let started = std::time::Instant::now();
    mkdirs(out)?;
    info!("running {} task(s) on {jobs} worker(s)", specs.len());
    let results = run_tasks(specs, jobs, &options(args))?;

    let mut entries = Vec::new();
    let mut rows = Vec::new();
    let mut failures = 0;
    for (spec, result) in specs.iter().zip(&results) {
        let dir = out.join(&spec.id);
        let mut entry = TaskEntry {
            id: spec.id.clone(),
            dir: spec.id.clone(),
            status: "ok",
            error: None,
            trials: spec.trials,
            seconds: 0.0,
        };
        let written = result
            .as_ref()
            .map_err(|e| e.to_string())
            .and_then(|o| write_task(&dir, spec, o, args).map(|_| o).map_err(|e| e.to_string()));
        match written {
            Ok(o) => {
                entry.seconds = o.trials.iter().map(|t| t.seconds).sum();
                info!("{}: mean accuracy {:.4}", spec.id, o.mean_accuracy());
                rows.extend(o.summary_rows());
            }
            Err(msg) => {
                error!("{}: {msg}", spec.id);
                failures += 1;
                write_text(&dir.join("error.txt"), &format!("{msg}\n"))?;
                entry.status = "failed";
                entry.error = Some(msg);
            }
        }
        entries.push(entry);
    }
    write_summary(&out.join("summary.csv"), &rows)?;

    let mut correlation = None;
    if exec.correlation {
        let (series, base) = correlation_inputs(results.iter().filter_map(|r| r.as_ref().ok()));
        let tuples = average_records(&series, &base)?;
        let (rs, rst) = write_correlation_report(&out.join("correlation.csv"), &tuples)?;
        println!("spearman_Ls_Pr={rs} spearman_Lst_Pr={rst}");
        correlation = Some("correlation.csv");
    }

    let manifest = Manifest {
        tool: "shda",
        version: env!("CARGO_PKG_VERSION"),
        command: exec.command,
        config: exec.config.display().to_string(),
        config_sha256: exec.hash,
        seed: exec.seed,
        summary: "summary.csv",
        correlation,
        tasks: entries,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&out.join("manifest.json"), &(json + "\n"))?;
    println!("wrote {}", out.join("summary.csv").display());
    match failures {
        0 => Ok(()),
        n if n == specs.len() && n == 1 => Err(results
            .into_iter()
            .find_map(|r| r.err())
            .map(CliError::Core)
            .unwrap_or(CliError::PartialFailure(n))),
        n => Err(CliError::PartialFailure(n)),
    }
}

pub fn run_task_command(args: &RunArgs, seed: Option<u64>, out: &Path, jobs: usize) -> CliResult<()> {
    let (text, hash) = read_config(&args.config)?;
    let mut spec = TaskSpec::from_toml(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let exec = Execution {
        command: "run",
        config: &args.config,
        hash,
        seed: spec.seed,
        correlation: false,
    };
    execute(exec, std::slice::from_ref(&spec), args, out, jobs)
}

pub fn run_suite_command(args: &RunArgs, seed: Option<u64>, out: &Path, jobs: usize) -> CliResult<()> {
    let (text, hash) = read_config(&args.config)?;
    let mut cfg = SuiteConfig::from_toml(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let specs = cfg.generate()?;
    let exec = Execution {
        command: "suite",
        config: &args.config,
        hash,
        seed: cfg.seed,
        correlation: matches!(cfg.suite, SuiteKind::Correlation { .. }),
    };
    write_text(&out.join("suite.toml"), &text)?;
    execute(exec, &specs, args, out, jobs)
}
