//! Fixtures shared by the benchmarks.

use shda_core::domains::{
    make_cluster_domain, make_gmm_noise_domain, split_target, ClusterSpec, CovarianceMode, GmmNoiseSpec, Unlabeled,
};
use shda_core::{Domain, Matrix, RngStream, SplitTarget};

/// `(A + Aᵀ)/2` with standard-normal `A`.
pub fn random_symmetric(n: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed);
    let a: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    Matrix::from_vec(n, n, s).expect("square")
}

/// The desk-scale noise-source task: 4 classes, 50-dim clusters with 3
/// labeled per class, identity-covariance noise in a `d_sub` subspace.
pub fn noise_task(d_sub: usize, per_class: usize, seed: u64) -> (Domain, SplitTarget) {
    let root = RngStream::new(seed);
    let target = make_cluster_domain(&ClusterSpec::new(4, 50, 203), &mut root.fork_named("target")).expect("target");
    let split = split_target(&target, 3, Unlabeled::All, &mut root.fork_named("split")).expect("split");
    let spec = GmmNoiseSpec::uniform_counts(4, d_sub, per_class, 1.0, CovarianceMode::Identity, 0);
    let (noise, _) = make_gmm_noise_domain(&spec, &mut root.fork_named("source")).expect("noise");
    (noise, split)
}
