use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use shda_core::analysis::{
    average_records, cosine_alignment, mean_std, write_correlation_report, write_matrix_csv, write_summary, SummaryRow,
};
use shda_core::domains::load_domain;
use shda_core::model::load_model;
use shda_core::suites::{TaskSpec, TrainerId};
use shda_core::trainers::read_records;
use shda_core::{Error, Matrix, Result};

use crate::report::{data_path, records_path, TRIALS_HEADER};
use crate::CliResult;

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Output directory of a previous `run` or `suite`.
    pub input: PathBuf,
}

struct TrialRow {
    trial: usize,
    accuracy: f64,
    baseline: Option<f64>,
}

fn no_input(path: &Path, what: &str) -> Error {
    Error::io(path, io::Error::new(io::ErrorKind::NotFound, what.to_string()))
}

fn bad_line(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_trials(path: &Path) -> Result<Vec<TrialRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRIALS_HEADER) {
        return Err(bad_line(path, 1, format!("expected header `{TRIALS_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let parsed = (|| {
                if f.len() != 3 {
                    return None;
                }
                let baseline = if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().ok()?)
                };
                Some(TrialRow {
                    trial: f[0].parse().ok()?,
                    accuracy: f[1].parse().ok()?,
                    baseline,
                })
            })();
            parsed.ok_or_else(|| bad_line(path, i + 2, "expected `trial,accuracy,baseline_accuracy`"))
        })
        .collect()
}

/// Task directories in declaration order: the manifest's order when
/// present, otherwise sorted by name.
fn task_dirs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Err(no_input(input, "input directory does not exist"));
    }
    let manifest = input.join("manifest.json");
    let mut dirs: Vec<PathBuf> = if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| bad_line(&manifest, e.line(), e.to_string()))?;
        v["tasks"]
            .as_array()
            .map(|tasks| {
                tasks
                    .iter()
                    .filter(|t| t["status"] == "ok")
                    .filter_map(|t| t["dir"].as_str().map(|d| input.join(d)))
                    .collect()
            })
            .unwrap_or_default()
    } else {
        let mut found: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        found.sort();
        found
    };
    dirs.retain(|d| d.join("trials.csv").is_file());
    if dirs.is_empty() {
        return Err(no_input(input, "no task outputs (trials.csv) found"));
    }
    Ok(dirs)
}

fn summary_rows(id: &str, trainer: TrainerId, trials: &[TrialRow]) -> Vec<SummaryRow> {
    let row = |name: &str, v: &[f64]| {
        let (mean, std) = mean_std(v);
        SummaryRow {
            task_id: id.to_string(),
            trainer: name.to_string(),
            mean_accuracy: mean,
            std_accuracy: std,
            trials: v.len(),
        }
    };
    let acc: Vec<f64> = trials.iter().map(|t| t.accuracy).collect();
    let base: Vec<f64> = trials.iter().filter_map(|t| t.baseline).collect();
    let mut rows = vec![row(trainer.as_str(), &acc)];
    if !base.is_empty() {
        rows.push(row(TrainerId::Nnt.as_str(), &base));
    }
    rows
}

/// `(trial, iteration, path)` of every stored checkpoint model.
fn checkpoints(dir: &Path) -> Result<Vec<(usize, usize, PathBuf)>> {
    let cdir = dir.join("checkpoints");
    if !cdir.is_dir() {
        return Ok(vec![]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&cdir).map_err(|e| Error::io(&cdir, e))? {
        let path = entry.map_err(|e| Error::io(&cdir, e))?.path();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let parsed = name
            .strip_prefix("trial")
            .and_then(|r| r.split_once("_iter"))
            .and_then(|(t, k)| Some((t.parse().ok()?, k.parse().ok()?)));
        if let Some((t, k)) = parsed {
            out.push((t, k, path));
        }
    }
    out.sort();
    Ok(out)
}

fn realign(dir: &Path, out_dir: &Path) -> Result<usize> {
    let mut written = 0;
    for (trial, k, path) in checkpoints(dir)? {
        let model = load_model(&path)?;
        let source = load_domain(&data_path(dir, trial, "source"))?;
        let labeled = load_domain(&data_path(dir, trial, "labeled"))?;
        let unlabeled = load_domain(&data_path(dir, trial, "unlabeled"))?;
        let x = Matrix::vstack(&[labeled.samples(), unlabeled.samples()])?;
        let y: Vec<usize> = labeled.labels().iter().chain(unlabeled.labels()).copied().collect();
        let a = cosine_alignment(&model, &source, &x, &y)?;
        let target = out_dir.join("alignment").join(format!("trial{trial}_iter{k}.csv"));
        fs::create_dir_all(target.parent().expect("alignment dir")).map_err(|e| Error::io(out_dir, e))?;
        write_matrix_csv(&target, &a.scores)?;
        written += 1;
    }
    Ok(written)
}

pub fn run(args: &AnalyzeArgs, out: &Path) -> CliResult<()> {
    let dirs = task_dirs(&args.input)?;
    let out = out.join("analysis");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut baselines = Vec::new();
    let mut aligned = 0;
    for dir in &dirs {
        let spec_path = dir.join("task.toml");
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec = TaskSpec::from_toml(&text)?;
        let trials = read_trials(&dir.join("trials.csv"))?;
        rows.extend(summary_rows(&spec.id, spec.trainer, &trials));
        for t in &trials {
            let p = records_path(dir, t.trial);
            if let (true, Some(b)) = (p.is_file(), t.baseline) {
                series.push(read_records(&p)?);
                baselines.push(b);
            }
        }
        aligned += realign(dir, &out.join(&spec.id))?;
    }
    write_summary(&out.join("summary.csv"), &rows)?;
    info!(
        "recomputed {} summary row(s) and {aligned} alignment matrix(es)",
        rows.len()
    );
    if !series.is_empty() {
        let tuples = average_records(&series, &baselines)?;
        let (rs, rst) = write_correlation_report(&out.join("correlation.csv"), &tuples)?;
        println!("spearman_Ls_Pr={rs} spearman_Lst_Pr={rst}");
    }
    println!("wrote {}", out.display());
    Ok(())
}
