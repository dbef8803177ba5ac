use std::time::Instant;

use rayon::prelude::*;

use super::spec::{SplitSpec, TaskSpec, TrainerId};
use crate::analysis::{accuracy, cosine_alignment, mean_std, AlignmentMatrix, SummaryRow};
use crate::domains::{fraction_counts, partition_halves, split_target, Domain, NormStats, SplitTarget};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream};
use crate::model::Model;
use crate::objective::HocnHyper;
use crate::trainers::{train_hocn, train_ktf_observed, train_nnt, TrainRecord};

/// What to retain from each trial beyond accuracies and records.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// KTF iterations at which to snapshot the model and its alignment
    /// matrix.
    pub checkpoint_iterations: Vec<usize>,
    pub keep_final_model: bool,
    pub keep_data: bool,
}

/// The data one trial trained on.
#[derive(Clone, Debug)]
pub struct TrialData {
    pub source: Domain,
    pub target: SplitTarget,
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub accuracy: f64,
    pub baseline_accuracy: Option<f64>,
    pub records: Vec<TrainRecord>,
    pub checkpoints: Vec<(usize, Model, AlignmentMatrix)>,
    pub final_model: Option<Model>,
    pub data: Option<TrialData>,
    pub source_stats: Option<NormStats>,
    /// Wall-clock time of the trial; the only non-deterministic field.
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub id: String,
    pub trainer: TrainerId,
    pub trials: Vec<TrialOutcome>,
}

impl TaskOutcome {
    pub fn accuracies(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.accuracy).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean_std(&self.accuracies()).0
    }

    /// The trainer's row, plus an `nnt` row when baselines were run.
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let row = |trainer: &str, accs: &[f64]| {
            let (mean, std) = mean_std(accs);
            SummaryRow {
                task_id: self.id.clone(),
                trainer: trainer.to_string(),
                mean_accuracy: mean,
                std_accuracy: std,
                trials: accs.len(),
            }
        };
        let mut rows = vec![row(self.trainer.as_str(), &self.accuracies())];
        let base: Vec<f64> = self.trials.iter().filter_map(|t| t.baseline_accuracy).collect();
        if !base.is_empty() {
            rows.push(row(TrainerId::Nnt.as_str(), &base));
        }
        rows
    }
}

fn unlabeled_accuracy(model: &Model, t: &SplitTarget) -> Result<f64> {
    accuracy(&model.predict(&t.unlabeled)?, t.unlabeled_truth())
}

/// Builds the data of one trial: `(source, split target, source stats)`.
pub fn trial_data(spec: &TaskSpec, trial: usize) -> Result<(Domain, SplitTarget, Option<NormStats>)> {
    let stream = trial_stream(spec, trial);
    let (target, _) = spec.target.data.build(&stream.fork_named("target"))?;
    let (source, split, stats) = match &spec.target.split {
        SplitSpec::FewLabeled {
            labeled_per_class,
            unlabeled,
        } => {
            let split = split_target(&target, *labeled_per_class, *unlabeled, &mut stream.fork_named("split"))?;
            let (source, stats) = spec.source.data.build(&stream.fork_named("source"))?;
            (source, split, stats)
        }
        SplitSpec::Halves { labeled_fraction } => {
            let (src, tgt) = partition_halves(&target, &mut stream.fork_named("halves"))?;
            let counts = fraction_counts(&tgt, *labeled_fraction)?;
            let split = crate::domains::split_target_counts(
                &tgt,
                &counts,
                crate::domains::Unlabeled::All,
                &mut stream.fork_named("split"),
            )?;
            (src, split, None)
        }
    };
    let mut source = source;
    let trng = stream.fork_named("transforms");
    for (i, t) in spec.source.transforms.iter().enumerate() {
        source = t.apply(&source, &trng.fork(i as u64))?;
    }
    if source.num_classes() != split.num_classes() {
        return Err(Error::Alignment(format!(
            "source has {} classes after transforms, target has {}",
            source.num_classes(),
            split.num_classes()
        )));
    }
    Ok((source, split, stats))
}

/// `seed → "trial" → t`; every component forks from here by name.
pub fn trial_stream(spec: &TaskSpec, trial: usize) -> RngStream {
    RngStream::new(spec.seed).fork_named("trial").fork(trial as u64)
}

pub fn run_trial(spec: &TaskSpec, trial: usize, opts: &RunOptions) -> Result<TrialOutcome> {
    let started = Instant::now();
    let stream = trial_stream(spec, trial);
    let (source, target, source_stats) = trial_data(spec, trial)?;
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let model = match spec.trainer {
        TrainerId::Ktf => {
            let all_x = Matrix::vstack(&[target.labeled.samples(), &target.unlabeled])?;
            let all_y: Vec<usize> = target
                .labeled
                .labels()
                .iter()
                .chain(target.unlabeled_truth())
                .copied()
                .collect();
            let (m, recs) = train_ktf_observed(
                &source,
                &target,
                &spec.ktf,
                &mut stream.fork_named("ktf"),
                &mut |k, m| {
                    if opts.checkpoint_iterations.contains(&k) {
                        let a = cosine_alignment(m, &source, &all_x, &all_y)?;
                        checkpoints.push((k, m.clone(), a));
                    }
                    Ok(())
                },
            )?;
            records = recs;
            m
        }
        TrainerId::Nnt => train_nnt(&target.labeled, &spec.nnt, &mut stream.fork_named("nnt"))?,
        TrainerId::Hocn | TrainerId::HocnBeta0 => {
            let h = HocnHyper {
                beta: if spec.trainer == TrainerId::HocnBeta0 {
                    0.0
                } else {
                    spec.hocn.beta
                },
                ..spec.hocn.clone()
            };
            train_hocn(&source, &target.labeled, &h, &mut stream.fork_named("hocn"))?
        }
    };
    let accuracy = unlabeled_accuracy(&model, &target)?;
    let baseline_accuracy = if spec.baseline && spec.trainer != TrainerId::Nnt {
        let b = train_nnt(&target.labeled, &spec.nnt, &mut stream.fork_named("nnt"))?;
        Some(unlabeled_accuracy(&b, &target)?)
    } else {
        None
    };
    Ok(TrialOutcome {
        trial,
        accuracy,
        baseline_accuracy,
        records,
        checkpoints,
        final_model: opts.keep_final_model.then_some(model),
        data: opts.keep_data.then_some(TrialData { source, target }),
        source_stats,
        seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn run_task(spec: &TaskSpec, opts: &RunOptions) -> Result<TaskOutcome> {
    spec.validate()?;
    let trials = (0..spec.trials)
        .map(|t| run_trial(spec, t, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskOutcome {
        id: spec.id.clone(),
        trainer: spec.trainer,
        trials,
    })
}

/// Runs every trial of every task on a pool of `jobs` workers. Results
/// come back in declaration order; a failing task does not stop the
/// others.
pub fn run_tasks(specs: &[TaskSpec], jobs: usize, opts: &RunOptions) -> Result<Vec<Result<TaskOutcome>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    let checked: Vec<Result<()>> = specs.iter().map(TaskSpec::validate).collect();
    let units: Vec<(usize, usize)> = specs
        .iter()
        .enumerate()
        .filter(|(i, _)| checked[*i].is_ok())
        .flat_map(|(i, s)| (0..s.trials).map(move |t| (i, t)))
        .collect();
    let mut done: Vec<Result<TrialOutcome>> =
        pool.install(|| units.par_iter().map(|&(i, t)| run_trial(&specs[i], t, opts)).collect());
    let mut done = done.drain(..);
    Ok(specs
        .iter()
        .zip(checked)
        .map(|(spec, check)| {
            check?;
            let trials: Vec<Result<TrialOutcome>> = done.by_ref().take(spec.trials).collect();
            Ok(TaskOutcome {
                id: spec.id.clone(),
                trainer: spec.trainer,
                trials: trials.into_iter().collect::<Result<_>>()?,
            })
        })
        .collect())
}
