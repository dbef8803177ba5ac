//! Task specifications, the experiment-family generators and the task
//! executor.
//!
//! All randomness in a task flows from its `seed`: the trial stream is
//! `seed → "trial" → t`, and the target, split, source, transforms and
//! trainers each fork from it by name. Tasks in a permutation or
//! homogeneous suite share a seed, so they see identical samples and
//! differ only in source labels.

mod exec;
mod generate;
mod spec;

pub use exec::{
    run_task, run_tasks, run_trial, trial_data, trial_stream, RunOptions, TaskOutcome, TrialData, TrialOutcome,
};
pub use generate::{
    all_permutations, category_permutation_suite, correlation_suite, default_alphas, default_correlation_deltas,
    distribution_triple, homogeneous_permutation_suite, identity_then_derangements, noise_injection_suite,
    noise_sweep_suite, subsample, OrderSpec, SuiteConfig, SuiteKind, SweepKind,
};
pub use spec::{
    parse_toml, read_header, ClassCounts, DataRecipe, SourceRecipe, SplitSpec, TargetRecipe, TaskSpec, TrainerId,
    Transform, CONFIG_VERSION,
};
