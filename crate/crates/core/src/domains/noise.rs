//! Synthetic domains: Gaussian-mixture noise with class-scaled means and
//! PSD-projected covariances, entry-wise noise, and clustered stand-ins for
//! real target domains.

use serde::{Deserialize, Serialize};

use super::Domain;
use crate::error::{Error, Result};
use crate::linalg::{sample_elementwise, sample_mvn_factored, sym_eig, CovFactor, Elementwise, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Every class shares the identity covariance.
    Identity,
    /// Class `c` (1-based) uses `c·δ·PSD((Σ + Σᵀ)/2)` with `Σ` standard normal.
    ScaledRandomPsd,
}

/// Recipe for a Gaussian-mixture noise domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmNoiseSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_counts: Vec<usize>,
    pub delta: f64,
    pub covariance: CovarianceMode,
    pub seed: u64,
}

impl GmmNoiseSpec {
    pub fn uniform_counts(
        num_classes: usize,
        dim: usize,
        per_class: usize,
        delta: f64,
        covariance: CovarianceMode,
        seed: u64,
    ) -> Self {
        Self {
            num_classes,
            dim,
            per_class_counts: vec![per_class; num_classes],
            delta,
            covariance,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::param("noise spec needs at least one class and one dimension"));
        }
        if self.per_class_counts.len() != self.num_classes {
            return Err(Error::param(format!(
                "{} per-class counts for {} classes",
                self.per_class_counts.len(),
                self.num_classes
            )));
        }
        if self.per_class_counts.contains(&0) {
            return Err(Error::param("every class needs at least one sample"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::param(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }

    /// Generates the domain from the spec's own seed.
    pub fn generate(&self) -> Result<(Domain, NormStats)> {
        make_gmm_noise_domain(self, &mut RngStream::new(self.seed))
    }
}

/// Average norms of the realized class means and covariances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub avg_mean_norm: f64,
    pub avg_cov_fro: f64,
}

/// Draws a Gaussian-mixture noise domain.
///
/// Class `c` (1-based in the formulas, 0-based as a label) has mean
/// `c·δ·μ_c` with `μ_c ~ N(0, I)`. Each class draws from its own forked
/// stream, so class `c` is unaffected by the counts of other classes.
pub fn make_gmm_noise_domain(spec: &GmmNoiseSpec, rng: &mut RngStream) -> Result<(Domain, NormStats)> {
    spec.validate()?;
    let d = spec.dim;
    let base = rng.fork_named("gmm");
    let mut blocks = Vec::with_capacity(spec.num_classes);
    let mut labels = Vec::new();
    let mut mean_norm_sum = 0.0;
    let mut cov_fro_sum = 0.0;

    for (c, &count) in spec.per_class_counts.iter().enumerate() {
        let mut r = base.fork(c as u64);
        let scale = (c + 1) as f64 * spec.delta;
        let mean: Vec<f64> = (0..d).map(|_| scale * r.normal()).collect();
        mean_norm_sum += mean.iter().map(|v| v * v).sum::<f64>().sqrt();

        let factor = match spec.covariance {
            CovarianceMode::Identity => {
                cov_fro_sum += (d as f64).sqrt();
                CovFactor::identity(d)
            }
            CovarianceMode::ScaledRandomPsd => {
                let raw = Matrix::from_raw(d, d, (0..d * d).map(|_| r.normal()).collect());
                let eig = sym_eig(&raw)?;
                // ‖c·δ·PSD(S)‖_F = c·δ·sqrt(Σ max(λ,0)²).
                let fro = eig.values.iter().map(|&l| l.max(0.0).powi(2)).sum::<f64>().sqrt();
                cov_fro_sum += scale * fro;
                CovFactor::from_eig(&eig, scale)
            }
        };
        blocks.push(sample_mvn_factored(&mean, &factor, count, &mut r)?);
        labels.extend(std::iter::repeat(c).take(count));
    }

    let refs: Vec<&Matrix> = blocks.iter().collect();
    let samples = Matrix::vstack(&refs)?;
    let k = spec.num_classes as f64;
    let stats = NormStats {
        avg_mean_norm: mean_norm_sum / k,
        avg_cov_fro: cov_fro_sum / k,
    };
    Ok((Domain::new(samples, labels, spec.num_classes)?, stats))
}

/// Draws each class block independently from the same entry-wise law.
pub fn make_elementwise_noise_domain(
    dist: Elementwise,
    num_classes: usize,
    dim: usize,
    per_class_counts: &[usize],
    rng: &mut RngStream,
) -> Result<Domain> {
    dist.validate()?;
    if per_class_counts.len() != num_classes {
        return Err(Error::param(format!(
            "{} per-class counts for {num_classes} classes",
            per_class_counts.len()
        )));
    }
    let base = rng.fork_named("elementwise");
    let mut blocks = Vec::with_capacity(num_classes);
    let mut labels = Vec::new();
    for (c, &count) in per_class_counts.iter().enumerate() {
        let mut r = base.fork(c as u64);
        blocks.push(sample_elementwise(dist, count, dim, &mut r)?);
        labels.extend(std::iter::repeat(c).take(count));
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Domain::new(Matrix::vstack(&refs)?, labels, num_classes)
}

/// Isotropic Gaussian clusters: class means `~ N(0, separation²·I)`,
/// within-class noise `N(0, spread²·I)`. Used as a stand-in for featurized
/// real domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_separation() -> f64 {
    0.5
}

fn default_spread() -> f64 {
    1.0
}

impl ClusterSpec {
    pub fn new(num_classes: usize, dim: usize, per_class: usize) -> Self {
        Self {
            num_classes,
            dim,
            per_class,
            separation: default_separation(),
            spread: default_spread(),
        }
    }
}

pub fn make_cluster_domain(spec: &ClusterSpec, rng: &mut RngStream) -> Result<Domain> {
    if spec.num_classes == 0 || spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::param("cluster spec needs positive classes, dim and per_class"));
    }
    if !(spec.separation >= 0.0) || !(spec.spread > 0.0) {
        return Err(Error::param("cluster separation must be ≥ 0 and spread > 0"));
    }
    let base = rng.fork_named("clusters");
    let d = spec.dim;
    let mut data = Vec::with_capacity(spec.num_classes * spec.per_class * d);
    let mut labels = Vec::new();
    for c in 0..spec.num_classes {
        let mut r = base.fork(c as u64);
        let mean: Vec<f64> = (0..d).map(|_| spec.separation * r.normal()).collect();
        for _ in 0..spec.per_class {
            data.extend(mean.iter().map(|m| m + spec.spread * r.normal()));
        }
        labels.extend(std::iter::repeat(c).take(spec.per_class));
    }
    Domain::new(Matrix::from_raw(labels.len(), d, data), labels, spec.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_mode_covariance_norm() {
        let spec = GmmNoiseSpec::uniform_counts(3, 16, 5, 0.7, CovarianceMode::Identity, 1);
        let (d, stats) = spec.generate().unwrap();
        assert_eq!(d.samples().shape(), (15, 16));
        assert_eq!(stats.avg_cov_fro, 4.0);
        assert_eq!(d.class_counts(), vec![5, 5, 5]);
    }

    #[test]
    fn mean_norm_tracks_closed_form() {
        // E‖cδμ‖ ≈ cδ√d, so the class average is ≈ δ(C+1)/2·√d.
        let (c, d, delta) = (6, 300, 0.2);
        let mut total = 0.0;
        let seeds = 10;
        for s in 0..seeds {
            let spec = GmmNoiseSpec::uniform_counts(c, d, 1, delta, CovarianceMode::Identity, s);
            total += spec.generate().unwrap().1.avg_mean_norm;
        }
        let expected = delta * (c as f64 + 1.0) / 2.0 * (d as f64).sqrt();
        assert!((total / seeds as f64 / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn scaled_psd_cov_norm_grows_with_delta() {
        let mut prev = 0.0;
        for delta in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let spec = GmmNoiseSpec::uniform_counts(3, 20, 2, delta, CovarianceMode::ScaledRandomPsd, 4);
            let stats = spec.generate().unwrap().1;
            assert!(stats.avg_cov_fro > prev);
            prev = stats.avg_cov_fro;
        }
    }

    #[test]
    fn gmm_is_deterministic_and_validated() {
        let spec = GmmNoiseSpec::uniform_counts(2, 8, 4, 0.5, CovarianceMode::ScaledRandomPsd, 9);
        assert_eq!(spec.generate().unwrap().0, spec.generate().unwrap().0);
        let mut bad = spec.clone();
        bad.delta = 0.0;
        assert!(bad.generate().is_err());
        bad = spec.clone();
        bad.per_class_counts = vec![1];
        assert!(bad.generate().is_err());
    }

    #[test]
    fn elementwise_shapes() {
        let mut r = RngStream::new(3);
        let d = make_elementwise_noise_domain(Elementwise::Laplace { loc: 0.0, scale: 1.0 }, 2, 3, &[5, 5], &mut r)
            .unwrap();
        assert_eq!(d.samples().shape(), (10, 3));
        assert_eq!(d.labels(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);

        let u = make_elementwise_noise_domain(
            Elementwise::Uniform { lo: -10.0, hi: 10.0 },
            6,
            300,
            &[100; 6],
            &mut RngStream::new(4),
        )
        .unwrap();
        assert_eq!(u.samples().shape(), (600, 300));
        assert!(u.samples().as_slice().iter().all(|v| v.abs() <= 10.0));
        let again = make_elementwise_noise_domain(
            Elementwise::Uniform { lo: -10.0, hi: 10.0 },
            6,
            300,
            &[100; 6],
            &mut RngStream::new(4),
        )
        .unwrap();
        assert_eq!(u, again);
    }
}
