use serde::{Deserialize, Serialize};

use super::spec::{
    parse_toml, ClassCounts, DataRecipe, SourceRecipe, SplitSpec, TargetRecipe, TaskSpec, TrainerId, Transform,
    CONFIG_VERSION,
};
use crate::domains::CovarianceMode;
use crate::error::{Error, Result};
use crate::linalg::{Elementwise, RngStream};
use crate::objective::{HocnHyper, KtfHyper, NntHyper};

fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true))
}

fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &p)| i == p)
}

/// Every permutation of `0..c` in lexicographic order; the identity comes
/// first.
pub fn all_permutations(c: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..c).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..c).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..c).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// The identity followed by `total − 1` distinct uniformly drawn
/// derangements (no class keeps its index).
pub fn identity_then_derangements(c: usize, total: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    if total == 0 {
        return Err(Error::param("at least one order is required"));
    }
    // !c = (c − 1)(!(c−1) + !(c−2)).
    let mut der = [1u64, 0];
    for k in 2..=c as u64 {
        der = [der[1], (k - 1) * (der[0] + der[1])];
    }
    let available = if c == 0 { 0 } else { der[1] };
    if (total - 1) as u64 > available {
        return Err(Error::param(format!(
            "{} derangements requested but only {available} exist for {c} classes",
            total - 1
        )));
    }
    let mut out = vec![(0..c).collect::<Vec<_>>()];
    while out.len() < total {
        let mut p: Vec<usize> = (0..c).collect();
        rng.shuffle(&mut p);
        if p.iter().enumerate().all(|(i, &v)| i != v) && !out.contains(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn check_orders(orders: &[Vec<usize>], c: Option<usize>) -> Result<()> {
    let first = orders
        .first()
        .ok_or_else(|| Error::schema("orders", "no orders given"))?;
    if !is_identity(first) {
        return Err(Error::schema(
            "orders[0]",
            "the ground-truth (identity) order must come first",
        ));
    }
    for (i, o) in orders.iter().enumerate() {
        if !is_bijection(o) || c.is_some_and(|c| c != o.len()) {
            return Err(Error::schema(
                format!("orders[{i}]"),
                format!("{o:?} is not a bijection on the classes"),
            ));
        }
    }
    Ok(())
}

/// One task per order; only the source labels are permuted. Task `i`
/// is named `<base>_order<i+1>`, so order 1 is the ground truth.
pub fn category_permutation_suite(base: &TaskSpec, orders: &[Vec<usize>]) -> Result<Vec<TaskSpec>> {
    check_orders(orders, base.source.num_classes()?)?;
    Ok(orders
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut t = base.clone();
            t.id = format!("{}_order{}", base.id, i + 1);
            t.source.transforms.push(Transform::Permute { perm: o.clone() });
            t
        })
        .collect())
}

/// `0, 0.2, …, 1`.
pub fn default_alphas() -> Vec<f64> {
    (0..=5).map(|i| i as f64 / 5.0).collect()
}

/// One task per α, each blending identity-covariance noise into the
/// source.
pub fn noise_injection_suite(base: &TaskSpec, alphas: &[f64], delta: f64) -> Result<Vec<TaskSpec>> {
    if alphas.is_empty() {
        return Err(Error::schema("alphas", "empty grid"));
    }
    alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::schema(format!("alphas[{i}]"), format!("{alpha} outside [0, 1]")));
            }
            let mut t = base.clone();
            t.id = format!("{}_alpha{}", base.id, fmt_num(alpha));
            t.source.transforms.push(Transform::Inject {
                alpha,
                delta,
                covariance: CovarianceMode::Identity,
            });
            Ok(t)
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.replace('.', "p")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    MeanCov,
    SampleCount,
    Dimension,
    Distribution,
}

impl SweepKind {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::MeanCov => (1..=5).map(|i| i as f64 / 5.0).collect(),
            SweepKind::SampleCount => (3..=7).map(|i| (i * 100) as f64).collect(),
            SweepKind::Dimension => (1..=5).map(|i| (i * 100) as f64).collect(),
            SweepKind::Distribution => vec![0.0, 1.0, 2.0],
        }
    }
}

/// Gaussian / Uniform(−10, 10) / Laplace(0, 1).
pub fn distribution_triple() -> [(&'static str, Option<Elementwise>); 3] {
    [
        ("gaussian", None),
        ("uniform", Some(Elementwise::Uniform { lo: -10.0, hi: 10.0 })),
        ("laplace", Some(Elementwise::Laplace { loc: 0.0, scale: 1.0 })),
    ]
}

fn as_count(v: f64, field: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::schema(field, format!("{v} is not a positive integer")))
    }
}

/// Noise-source sweeps. Each task's subspace width is set to its noise
/// dimension so the noise can be used without a source projector.
///
/// Defaults: 100 per class at d = 300 (mean/covariance and distribution),
/// d = 300 (sample count), 500 per class (dimension); δ = 0.2 wherever it
/// is not the swept quantity.
pub fn noise_sweep_suite(
    base: &TaskSpec,
    kind: SweepKind,
    values: &[f64],
    num_classes: usize,
) -> Result<Vec<TaskSpec>> {
    if values.is_empty() {
        return Err(Error::schema("values", "empty grid"));
    }
    let mut out = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let field = format!("values[{i}]");
        let gmm = |per_class: usize, dim: usize, delta: f64| DataRecipe::Gmm {
            num_classes,
            dim,
            per_class: ClassCounts::Uniform(per_class),
            delta,
            covariance: CovarianceMode::ScaledRandomPsd,
            seed: 0,
        };
        let (name, data) = match kind {
            SweepKind::MeanCov => {
                if !(v > 0.0) {
                    return Err(Error::schema(field, format!("delta {v} must be positive")));
                }
                (format!("delta{}", fmt_num(v)), gmm(100, 300, v))
            }
            SweepKind::SampleCount => {
                let n = as_count(v, &field)?;
                (format!("n{n}"), gmm(n, 300, 0.2))
            }
            SweepKind::Dimension => {
                let d = as_count(v, &field)?;
                (format!("d{d}"), gmm(500, d, 0.2))
            }
            SweepKind::Distribution => {
                let table = distribution_triple();
                let idx = as_count(v + 1.0, &field)? - 1;
                let (label, dist) = table
                    .get(idx)
                    .ok_or_else(|| Error::schema(field.clone(), "distribution index must be 0, 1 or 2"))?;
                let data = match dist {
                    None => gmm(100, 300, 0.2),
                    Some(e) => DataRecipe::Elementwise {
                        dist: *e,
                        num_classes,
                        dim: 300,
                        per_class: ClassCounts::Uniform(100),
                        seed: 0,
                    },
                };
                (label.to_string(), data)
            }
        };
        let mut t = base.clone();
        t.id = format!("{}_{name}", base.id);
        t.ktf.d_sub = data.static_dim().expect("generated recipes have a static dimension");
        t.source = SourceRecipe {
            data,
            transforms: vec![],
        };
        out.push(t);
    }
    Ok(out)
}

/// `0.05, 0.15, …, 9.95` (100 points).
pub fn default_correlation_deltas() -> Vec<f64> {
    (0..100).map(|i| (5 + 10 * i) as f64 / 100.0).collect()
}

/// `points` values picked evenly from `grid`, both ends included.
pub fn subsample(grid: &[f64], points: usize) -> Result<Vec<f64>> {
    if points == 0 || points > grid.len() {
        return Err(Error::schema("delta_points", format!("must be in 1..={}", grid.len())));
    }
    if points == 1 {
        return Ok(vec![grid[0]]);
    }
    let last = (grid.len() - 1) as f64;
    Ok((0..points)
        .map(|i| grid[(i as f64 * last / (points - 1) as f64).round() as usize])
        .collect())
}

/// KTF tasks over random noise domains. Task `i` draws δ from `deltas`
/// cyclically, per-class counts uniformly from `count_range`, and its own
/// noise sub-stream; all tasks share the target.
pub fn correlation_suite(
    base: &TaskSpec,
    tasks: usize,
    deltas: &[f64],
    count_range: (usize, usize),
    num_classes: usize,
    rng: &RngStream,
) -> Result<Vec<TaskSpec>> {
    if tasks == 0 || deltas.is_empty() {
        return Err(Error::schema("tasks", "need at least one task and one delta"));
    }
    if let Some(bad) = deltas.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::schema(format!("deltas[{bad}]"), "must be positive"));
    }
    let (lo, hi) = count_range;
    if lo == 0 || lo > hi {
        return Err(Error::schema(
            "count_range",
            format!("[{lo}, {hi}] is not a valid range"),
        ));
    }
    Ok((0..tasks)
        .map(|i| {
            let mut r = rng.fork_named("counts").fork(i as u64);
            let counts = (0..num_classes).map(|_| r.int_inclusive(lo, hi)).collect();
            let mut t = base.clone();
            t.id = format!("{}_{i:03}", base.id);
            t.trainer = TrainerId::Ktf;
            t.baseline = true;
            t.source = SourceRecipe {
                data: DataRecipe::Gmm {
                    num_classes,
                    dim: base.ktf.d_sub,
                    per_class: ClassCounts::Each(counts),
                    delta: deltas[i % deltas.len()],
                    covariance: CovarianceMode::ScaledRandomPsd,
                    seed: i as u64,
                },
                transforms: vec![],
            };
            t
        })
        .collect())
}

/// The β = 0 control followed by one shared-projector task per order.
pub fn homogeneous_permutation_suite(
    base: &TaskSpec,
    labeled_fraction: f64,
    orders: &[Vec<usize>],
) -> Result<Vec<TaskSpec>> {
    let mut b = base.clone();
    b.source = SourceRecipe {
        data: DataRecipe::TargetHalf,
        transforms: vec![],
    };
    b.target.split = SplitSpec::Halves { labeled_fraction };
    b.baseline = false;
    let mut control = b.clone();
    control.trainer = TrainerId::HocnBeta0;
    control.id = format!("{}_beta0", base.id);
    b.trainer = TrainerId::Hocn;
    let mut out = vec![control];
    out.extend(category_permutation_suite(&b, orders)?);
    Ok(out)
}

/// How permutation orders are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSpec {
    /// All `C!` permutations.
    All,
    /// Identity plus `n − 1` random derangements.
    Random(usize),
    Explicit(Vec<Vec<usize>>),
}

impl OrderSpec {
    pub fn resolve(&self, c: usize, rng: &RngStream) -> Result<Vec<Vec<usize>>> {
        match self {
            OrderSpec::All => Ok(all_permutations(c)),
            OrderSpec::Random(n) => identity_then_derangements(c, *n, &mut rng.fork_named("orders")),
            OrderSpec::Explicit(v) => Ok(v.clone()),
        }
    }
}

fn default_labeled_fraction() -> f64 {
    0.01
}

fn default_injection_delta() -> f64 {
    1.0
}

fn default_correlation_tasks() -> usize {
    100
}

fn default_count_range() -> (usize, usize) {
    (100, 1000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SuiteKind {
    CategoryPermutation {
        source: SourceRecipe,
        /// Defaults to the identity plus `C − 1` random derangements.
        #[serde(default)]
        orders: Option<OrderSpec>,
    },
    NoiseInjection {
        source: SourceRecipe,
        #[serde(default)]
        alphas: Option<Vec<f64>>,
        #[serde(default = "default_injection_delta")]
        delta: f64,
    },
    NoiseSweep {
        sweep: SweepKind,
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
    Correlation {
        #[serde(default = "default_correlation_tasks")]
        tasks: usize,
        #[serde(default)]
        deltas: Option<Vec<f64>>,
        /// Evenly subsample the δ grid to this many points.
        #[serde(default)]
        delta_points: Option<usize>,
        #[serde(default = "default_count_range")]
        count_range: (usize, usize),
    },
    HomogeneousPermutation {
        #[serde(default = "default_labeled_fraction")]
        labeled_fraction: f64,
        #[serde(default)]
        orders: Option<OrderSpec>,
    },
}

impl SuiteKind {
    pub fn name(&self) -> &'static str {
        match self {
            SuiteKind::CategoryPermutation { .. } => "category_permutation",
            SuiteKind::NoiseInjection { .. } => "noise_injection",
            SuiteKind::NoiseSweep { .. } => "noise_sweep",
            SuiteKind::Correlation { .. } => "correlation",
            SuiteKind::HomogeneousPermutation { .. } => "homogeneous_permutation",
        }
    }
}

fn default_trainer() -> TrainerId {
    TrainerId::Ktf
}

fn default_suite_trials() -> usize {
    10
}

fn default_config_version() -> u32 {
    CONFIG_VERSION
}

/// A suite config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_config_version")]
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_suite_trials")]
    pub trials: usize,
    #[serde(default = "default_trainer")]
    pub trainer: TrainerId,
    #[serde(default)]
    pub baseline: bool,
    pub target: TargetRecipe,
    #[serde(default)]
    pub ktf: KtfHyper,
    #[serde(default)]
    pub nnt: NntHyper,
    #[serde(default)]
    pub hocn: HocnHyper,
    pub suite: SuiteKind,
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SuiteConfig = parse_toml(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::schema(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", cfg.version),
            ));
        }
        Ok(cfg)
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.suite.name().to_string())
    }

    /// Expands the config into validated task specs. Deterministic in the
    /// config and its seed.
    pub fn generate(&self) -> Result<Vec<TaskSpec>> {
        let rng = RngStream::new(self.seed).fork_named("suite");
        let mut base = TaskSpec {
            version: CONFIG_VERSION,
            id: self.name(),
            trainer: self.trainer,
            trials: self.trials,
            seed: self.seed,
            source: SourceRecipe {
                data: DataRecipe::TargetHalf,
                transforms: vec![],
            },
            target: self.target.clone(),
            baseline: self.baseline,
            ktf: self.ktf.clone(),
            nnt: self.nnt.clone(),
            hocn: self.hocn.clone(),
        };
        let target_classes = || {
            self.target
                .data
                .num_classes()?
                .ok_or_else(|| Error::schema("target.data", "cannot determine the class count"))
        };
        let tasks = match &self.suite {
            SuiteKind::CategoryPermutation { source, orders } => {
                base.source = source.clone();
                let c = match source.num_classes()? {
                    Some(c) => c,
                    None => target_classes()?,
                };
                let orders = orders.clone().unwrap_or(OrderSpec::Random(c)).resolve(c, &rng)?;
                category_permutation_suite(&base, &orders)?
            }
            SuiteKind::NoiseInjection { source, alphas, delta } => {
                base.source = source.clone();
                noise_injection_suite(&base, &alphas.clone().unwrap_or_else(default_alphas), *delta)?
            }
            SuiteKind::NoiseSweep { sweep, values } => {
                let vals = values.clone().unwrap_or_else(|| sweep.default_values());
                noise_sweep_suite(&base, *sweep, &vals, target_classes()?)?
            }
            SuiteKind::Correlation {
                tasks,
                deltas,
                delta_points,
                count_range,
            } => {
                let mut grid = deltas.clone().unwrap_or_else(default_correlation_deltas);
                if let Some(p) = delta_points {
                    grid = subsample(&grid, *p)?;
                }
                correlation_suite(&base, *tasks, &grid, *count_range, target_classes()?, &rng)?
            }
            SuiteKind::HomogeneousPermutation {
                labeled_fraction,
                orders,
            } => {
                let c = target_classes()?;
                let orders = orders.clone().unwrap_or(OrderSpec::Random(c)).resolve(c, &rng)?;
                homogeneous_permutation_suite(&base, *labeled_fraction, &orders)?
            }
        };
        for t in &tasks {
            t.validate()?;
        }
        Ok(tasks)
    }
}
