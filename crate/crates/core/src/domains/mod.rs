//! Labeled domains, noise-domain synthesis and the task-construction
//! transforms (permutation, truncation, injection, splitting).

mod io;
mod noise;
mod transform;

pub use io::{load_domain, read_sidecar, save_domain, sidecar_path, write_sidecar};
pub use noise::{
    make_cluster_domain, make_elementwise_noise_domain, make_gmm_noise_domain, ClusterSpec, CovarianceMode,
    GmmNoiseSpec, NormStats,
};
pub use transform::{
    fraction_counts, inject_noise, partition_halves, permute_categories, split_target, split_target_counts,
    truncate_categories, Unlabeled,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A labeled sample collection: one row per sample, labels in `[0, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    samples: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Domain {
    /// Validates labels and rejects domains in which some class is empty.
    pub fn new(samples: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != samples.rows() {
            return Err(Error::dim(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.rows()
            )));
        }
        if num_classes == 0 {
            return Err(Error::param("a domain needs at least one class"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::param(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let domain = Self {
            samples,
            labels,
            num_classes,
        };
        if let Some(class) = domain.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::DegenerateClass { class });
        }
        Ok(domain)
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices of class `c`, in storage order.
    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// One-hot label matrix, `n × C`.
    pub fn one_hot(&self) -> Matrix {
        one_hot(&self.labels, self.num_classes)
    }

    /// Rows reordered by `(label, original index)`.
    pub fn sorted_by_label(&self) -> Domain {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.labels[i]);
        Domain {
            samples: self.samples.select_rows(&order),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn into_parts(self) -> (Matrix, Vec<usize>, usize) {
        (self.samples, self.labels, self.num_classes)
    }
}

pub(crate) fn one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = 1.0;
    }
    m
}

/// A target domain after splitting: a few labeled samples, many unlabeled
/// ones whose true labels are kept only for evaluation.
#[derive(Clone, Debug)]
pub struct SplitTarget {
    pub labeled: Domain,
    pub unlabeled: Matrix,
    unlabeled_truth: Vec<usize>,
}

impl SplitTarget {
    pub fn new(labeled: Domain, unlabeled: Matrix, unlabeled_truth: Vec<usize>) -> Result<Self> {
        if labeled.dim() != unlabeled.cols() {
            return Err(Error::dim(format!(
                "labeled dimension {} vs unlabeled dimension {}",
                labeled.dim(),
                unlabeled.cols()
            )));
        }
        if unlabeled_truth.len() != unlabeled.rows() {
            return Err(Error::dim("unlabeled truth length differs from sample count"));
        }
        if unlabeled_truth.iter().any(|&l| l >= labeled.num_classes()) {
            return Err(Error::param("unlabeled truth label out of range"));
        }
        Ok(Self {
            labeled,
            unlabeled,
            unlabeled_truth,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labeled.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.labeled.dim()
    }

    /// Withheld ground truth; for evaluation only, never for training.
    pub fn unlabeled_truth(&self) -> &[usize] {
        &self.unlabeled_truth
    }

    /// The unlabeled part as a labeled domain (evaluation helpers only).
    pub fn unlabeled_domain(&self) -> Result<Domain> {
        Domain::new(self.unlabeled.clone(), self.unlabeled_truth.clone(), self.num_classes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_labels_and_empty_classes() {
        let x = Matrix::zeros(3, 2);
        assert!(Domain::new(x.clone(), vec![0, 1], 2).is_err());
        assert!(Domain::new(x.clone(), vec![0, 1, 2], 2).is_err());
        assert!(matches!(
            Domain::new(x.clone(), vec![0, 0, 2], 3),
            Err(Error::DegenerateClass { class: 1 })
        ));
        let d = Domain::new(x, vec![1, 0, 1], 2).unwrap();
        assert_eq!(d.class_counts(), vec![1, 2]);
        assert_eq!(d.class_indices(1), vec![0, 2]);
    }

    #[test]
    fn sorting_is_stable() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let d = Domain::new(x, vec![1, 0, 1, 0], 2).unwrap().sorted_by_label();
        assert_eq!(d.labels(), &[0, 0, 1, 1]);
        assert_eq!(d.samples().column(0), vec![1.0, 3.0, 0.0, 2.0]);
    }
}
