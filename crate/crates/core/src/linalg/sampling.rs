use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eig::{sym_eig, EigDecomposition};
use crate::linalg::matrix::gemm;
use crate::linalg::{Matrix, RngStream};

/// Symmetric square root `L` of a PSD covariance, `L·Lᵀ = Σ`.
///
/// Built from the eigendecomposition as `V·diag(√max(λ, 0))·Vᵀ`, so
/// rank-deficient covariances are fine.
#[derive(Clone, Debug)]
pub struct CovFactor {
    root: Matrix,
}

impl CovFactor {
    pub fn from_cov(cov: &Matrix) -> Result<Self> {
        Ok(Self::from_eig(&sym_eig(cov)?, 1.0))
    }

    /// Factor of `scale · V·diag(max(λ, 0))·Vᵀ`.
    pub fn from_eig(eig: &EigDecomposition, scale: f64) -> Self {
        let root = eig.recompose_with(|l| (scale * l.max(0.0)).sqrt());
        Self {
            root: root.symmetrized(),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            root: Matrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.root.rows()
    }

    pub fn root(&self) -> &Matrix {
        &self.root
    }
}

/// Draws `n` rows from `N(mean, cov)`.
pub fn sample_mvn(mean: &[f64], cov: &Matrix, n: usize, rng: &mut RngStream) -> Result<Matrix> {
    if !cov.is_square() || cov.rows() != mean.len() {
        return Err(Error::dim(format!(
            "mean of length {} with {}x{} covariance",
            mean.len(),
            cov.rows(),
            cov.cols()
        )));
    }
    let factor = CovFactor::from_cov(cov)?;
    sample_mvn_factored(mean, &factor, n, rng)
}

/// Draws `n` rows `mean + L·z` with `z` standard normal.
pub fn sample_mvn_factored(mean: &[f64], factor: &CovFactor, n: usize, rng: &mut RngStream) -> Result<Matrix> {
    let d = mean.len();
    if factor.dim() != d {
        return Err(Error::dim(format!(
            "mean of length {d} with factor of dimension {}",
            factor.dim()
        )));
    }
    let z = Matrix::from_raw(n, d, (0..n * d).map(|_| rng.normal()).collect());
    let mut out = Matrix::zeros(n, d);
    // Row form: x = z · Lᵀ.
    gemm(&z, false, &factor.root, true, &mut out, 1.0, 0.0);
    out.add_row_vector(mean);
    Ok(out)
}

/// Entry-wise sampling distributions for non-Gaussian noise domains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Elementwise {
    Uniform { lo: f64, hi: f64 },
    Laplace { loc: f64, scale: f64 },
    StdNormal,
}

impl Elementwise {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Elementwise::Uniform { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => {
                Err(Error::param(format!("uniform bounds need lo < hi, got [{lo}, {hi}]")))
            }
            Elementwise::Laplace { loc, scale } if !(scale > 0.0) || !loc.is_finite() || !scale.is_finite() => {
                Err(Error::param(format!("laplace scale must be positive, got {scale}")))
            }
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Elementwise::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
            Elementwise::Laplace { loc, scale } => {
                // Inverse CDF with u ~ U(-1/2, 1/2); u = -1/2 is redrawn to keep ln finite.
                let mut u = rng.uniform() - 0.5;
                while u == -0.5 {
                    u = rng.uniform() - 0.5;
                }
                loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Elementwise::StdNormal => rng.normal(),
        }
    }
}

pub fn sample_elementwise(dist: Elementwise, n: usize, d: usize, rng: &mut RngStream) -> Result<Matrix> {
    dist.validate()?;
    let data = (0..n * d).map(|_| dist.draw(rng)).collect();
    Ok(Matrix::from_raw(n, d, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mut r = RngStream::new(1);
        let mean = [1.5, -2.0, 0.25];
        let x = sample_mvn(&mean, &Matrix::zeros(3, 3), 20, &mut r).unwrap();
        for row in x.row_iter() {
            assert_eq!(row, &mean);
        }
    }

    #[test]
    fn standard_normal_means_within_clt_bound() {
        let mut r = RngStream::new(2);
        let n = 10_000;
        let x = sample_mvn(&[0.0; 4], &Matrix::identity(4), n, &mut r).unwrap();
        let bound = 4.0 / (n as f64).sqrt();
        for m in x.column_means() {
            assert!(m.abs() < bound, "{m}");
        }
    }

    #[test]
    fn diagonal_covariance_moments() {
        let mut r = RngStream::new(3);
        let x = sample_mvn(&[0.0, 0.0], &Matrix::from_diag(&[4.0, 1.0]), 20_000, &mut r).unwrap();
        let v0 = variance(&x.column(0));
        let v1 = variance(&x.column(1));
        assert!((v0 / 4.0 - 1.0).abs() < 0.05, "{v0}");
        assert!((v1 - 1.0).abs() < 0.05, "{v1}");
    }

    #[test]
    fn factor_reproduces_covariance() {
        let c = Matrix::from_rows(&[[2.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.0, 0.3, 0.5]]).unwrap();
        let f = CovFactor::from_cov(&c).unwrap();
        let llt = f.root().matmul_t(f.root()).unwrap();
        assert!(llt.sub(&c).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn mvn_is_deterministic() {
        let c = Matrix::from_rows(&[[1.0, 0.2], [0.2, 2.0]]).unwrap();
        let a = sample_mvn(&[1.0, 2.0], &c, 50, &mut RngStream::new(9)).unwrap();
        let b = sample_mvn(&[1.0, 2.0], &c, 50, &mut RngStream::new(9)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn mean_cov_mismatch() {
        let mut r = RngStream::new(1);
        assert!(matches!(
            sample_mvn(&[0.0; 3], &Matrix::identity(2), 1, &mut r),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn uniform_support() {
        let mut r = RngStream::new(4);
        let x = sample_elementwise(Elementwise::Uniform { lo: -10.0, hi: 10.0 }, 500, 100, &mut r).unwrap();
        assert!(x.as_slice().iter().all(|v| (-10.0..=10.0).contains(v)));
    }

    #[test]
    fn laplace_median() {
        let mut r = RngStream::new(5);
        let x = sample_elementwise(Elementwise::Laplace { loc: 0.0, scale: 1.0 }, 500, 100, &mut r).unwrap();
        let mut v = x.into_vec();
        v.sort_by(f64::total_cmp);
        let median = 0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2]);
        assert!(median.abs() < 0.05, "{median}");
        // Laplace(0, 1) has variance 2.
        assert!((variance(&v) / 2.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn std_normal_variance() {
        let mut r = RngStream::new(6);
        let x = sample_elementwise(Elementwise::StdNormal, 500, 100, &mut r).unwrap();
        assert!((variance(x.as_slice()) - 1.0).abs() < 0.05);
    }

    #[test]
    fn invalid_parameters() {
        let mut r = RngStream::new(0);
        assert!(sample_elementwise(Elementwise::Uniform { lo: 1.0, hi: 1.0 }, 1, 1, &mut r).is_err());
        assert!(sample_elementwise(Elementwise::Laplace { loc: 0.0, scale: 0.0 }, 1, 1, &mut r).is_err());
    }

    #[test]
    fn expected_norm_of_standard_normal_vectors() {
        let mut r = RngStream::new(8);
        let d = 300;
        let x = sample_elementwise(Elementwise::StdNormal, 1000, d, &mut r).unwrap();
        let avg: f64 = x
            .row_iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / 1000.0;
        assert!((avg / (d as f64).sqrt() - 1.0).abs() < 0.02, "{avg}");
    }
}
