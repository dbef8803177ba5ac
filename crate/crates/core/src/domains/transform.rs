use serde::{Deserialize, Serialize};

use super::{Domain, SplitTarget};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream};

/// Blends two domains row-wise: `α·noise + (1−α)·source`.
///
/// Both sample matrices are first sorted by `(label, original row)`, so the
/// blend pairs the k-th sample of class c in each domain.
pub fn inject_noise(source: &Domain, noise: &Domain, alpha: f64) -> Result<Domain> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("injection ratio {alpha} outside [0, 1]")));
    }
    if source.dim() != noise.dim() || source.num_classes() != noise.num_classes() {
        return Err(Error::Alignment(format!(
            "source is {}-dim with {} classes, noise is {}-dim with {} classes",
            source.dim(),
            source.num_classes(),
            noise.dim(),
            noise.num_classes()
        )));
    }
    if source.class_counts() != noise.class_counts() {
        return Err(Error::Alignment(format!(
            "per-class counts differ: {:?} vs {:?}",
            source.class_counts(),
            noise.class_counts()
        )));
    }
    let s = source.sorted_by_label();
    let n = noise.sorted_by_label();
    let data = s
        .samples()
        .as_slice()
        .iter()
        .zip(n.samples().as_slice())
        .map(|(&x, &z)| alpha * z + (1.0 - alpha) * x)
        .collect();
    let (rows, cols) = s.samples().shape();
    let (_, labels, c) = s.into_parts();
    Domain::new(Matrix::from_raw(rows, cols, data), labels, c)
}

fn check_bijection(perm: &[usize], c: usize) -> Result<()> {
    if perm.len() != c {
        return Err(Error::param(format!(
            "permutation of length {} for {c} classes",
            perm.len()
        )));
    }
    let mut seen = vec![false; c];
    for &p in perm {
        if p >= c || std::mem::replace(&mut seen[p], true) {
            return Err(Error::param(format!("{perm:?} is not a bijection on 0..{c}")));
        }
    }
    Ok(())
}

/// Relabels every sample: label `l` becomes `perm[l]`.
pub fn permute_categories(domain: &Domain, perm: &[usize]) -> Result<Domain> {
    check_bijection(perm, domain.num_classes())?;
    let labels = domain.labels().iter().map(|&l| perm[l]).collect();
    Domain::new(domain.samples().clone(), labels, domain.num_classes())
}

/// Keeps only classes `0..keep`.
pub fn truncate_categories(domain: &Domain, keep: usize) -> Result<Domain> {
    if keep == 0 || keep > domain.num_classes() {
        return Err(Error::param(format!(
            "cannot keep {keep} of {} classes",
            domain.num_classes()
        )));
    }
    let idx: Vec<usize> = (0..domain.len()).filter(|&i| domain.labels()[i] < keep).collect();
    Domain::new(
        domain.samples().select_rows(&idx),
        idx.iter().map(|&i| domain.labels()[i]).collect(),
        keep,
    )
}

/// How many unlabeled samples to keep per class after the labeled draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unlabeled {
    All,
    PerClass(usize),
}

/// Draws `labeled_per_class` labeled samples per class without
/// replacement; the unlabeled part comes from the remaining samples.
pub fn split_target(
    domain: &Domain,
    labeled_per_class: usize,
    unlabeled: Unlabeled,
    rng: &mut RngStream,
) -> Result<SplitTarget> {
    split_target_counts(domain, &vec![labeled_per_class; domain.num_classes()], unlabeled, rng)
}

/// Like [`split_target`] with a separate labeled count for every class.
pub fn split_target_counts(
    domain: &Domain,
    labeled_counts: &[usize],
    unlabeled: Unlabeled,
    rng: &mut RngStream,
) -> Result<SplitTarget> {
    if labeled_counts.len() != domain.num_classes() {
        return Err(Error::param(format!(
            "{} labeled counts for {} classes",
            labeled_counts.len(),
            domain.num_classes()
        )));
    }
    let mut lab = Vec::new();
    let mut unl = Vec::new();
    for (c, &labeled_per_class) in labeled_counts.iter().enumerate() {
        let mut idx = domain.class_indices(c);
        let need = labeled_per_class
            + match unlabeled {
                Unlabeled::All => 1,
                Unlabeled::PerClass(u) => u.max(1),
            };
        if idx.len() < need {
            return Err(Error::Split(format!(
                "class {c} has {} samples, needs at least {need}",
                idx.len()
            )));
        }
        rng.fork(c as u64).shuffle(&mut idx);
        let (l, rest) = idx.split_at(labeled_per_class);
        lab.extend_from_slice(l);
        match unlabeled {
            Unlabeled::All => unl.extend_from_slice(rest),
            Unlabeled::PerClass(u) => unl.extend_from_slice(&rest[..u]),
        }
    }
    let labeled = Domain::new(
        domain.samples().select_rows(&lab),
        lab.iter().map(|&i| domain.labels()[i]).collect(),
        domain.num_classes(),
    )?;
    SplitTarget::new(
        labeled,
        domain.samples().select_rows(&unl),
        unl.iter().map(|&i| domain.labels()[i]).collect(),
    )
}

/// Per-class labeled counts `max(1, ⌈fraction·n_c⌉)`.
pub fn fraction_counts(domain: &Domain, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("labeled fraction {fraction} outside (0, 1)")));
    }
    Ok(domain
        .class_counts()
        .iter()
        .map(|&n| ((fraction * n as f64).ceil() as usize).max(1))
        .collect())
}

/// Randomly splits every class into two halves; returns `(first, second)`.
/// Odd class sizes put the extra sample in the second half.
pub fn partition_halves(domain: &Domain, rng: &mut RngStream) -> Result<(Domain, Domain)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for c in 0..domain.num_classes() {
        let mut idx = domain.class_indices(c);
        if idx.len() < 2 {
            return Err(Error::Split(format!("class {c} has fewer than 2 samples")));
        }
        rng.fork(c as u64).shuffle(&mut idx);
        let half = idx.len() / 2;
        a.extend_from_slice(&idx[..half]);
        b.extend_from_slice(&idx[half..]);
    }
    let take = |idx: &[usize]| {
        Domain::new(
            domain.samples().select_rows(idx),
            idx.iter().map(|&i| domain.labels()[i]).collect(),
            domain.num_classes(),
        )
    };
    Ok((take(&a)?, take(&b)?))
}
