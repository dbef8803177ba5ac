use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domains::{
    inject_noise, load_domain, make_cluster_domain, make_elementwise_noise_domain, make_gmm_noise_domain,
    permute_categories, truncate_categories, ClusterSpec, CovarianceMode, Domain, GmmNoiseSpec, NormStats, Unlabeled,
};
use crate::error::{Error, Result};
use crate::linalg::{Elementwise, RngStream};
use crate::objective::{HocnHyper, KtfHyper, NntHyper};

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_trials() -> usize {
    10
}

/// Parses TOML, reporting the failing field path on error.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::schema(
            if path == "." { "<root>".to_string() } else { path },
            inner.message().to_string(),
        )
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerId {
    Ktf,
    Nnt,
    Hocn,
    HocnBeta0,
}

impl TrainerId {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainerId::Ktf => "ktf",
            TrainerId::Nnt => "nnt",
            TrainerId::Hocn => "hocn",
            TrainerId::HocnBeta0 => "hocn_beta0",
        }
    }

    pub fn is_homogeneous(self) -> bool {
        matches!(self, TrainerId::Hocn | TrainerId::HocnBeta0)
    }
}

/// Either one count for every class or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassCounts {
    Uniform(usize),
    Each(Vec<usize>),
}

impl ClassCounts {
    pub fn resolve(&self, num_classes: usize) -> Result<Vec<usize>> {
        match self {
            ClassCounts::Uniform(n) => Ok(vec![*n; num_classes]),
            ClassCounts::Each(v) if v.len() == num_classes => Ok(v.clone()),
            ClassCounts::Each(v) => Err(Error::schema(
                "per_class",
                format!("{} counts for {num_classes} classes", v.len()),
            )),
        }
    }
}

fn default_covariance() -> CovarianceMode {
    CovarianceMode::ScaledRandomPsd
}

/// Where a domain comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataRecipe {
    File {
        path: PathBuf,
    },
    Gmm {
        num_classes: usize,
        dim: usize,
        per_class: ClassCounts,
        delta: f64,
        #[serde(default = "default_covariance")]
        covariance: CovarianceMode,
        /// Sub-stream id, so sibling tasks can draw distinct domains.
        #[serde(default)]
        seed: u64,
    },
    Elementwise {
        dist: Elementwise,
        num_classes: usize,
        dim: usize,
        per_class: ClassCounts,
        #[serde(default)]
        seed: u64,
    },
    Clusters(ClusterSpec),
    /// The first half of the target domain (homogeneous control only).
    TargetHalf,
}

impl DataRecipe {
    /// Dimension when known without touching the filesystem.
    pub fn static_dim(&self) -> Option<usize> {
        match self {
            DataRecipe::Gmm { dim, .. } | DataRecipe::Elementwise { dim, .. } => Some(*dim),
            DataRecipe::Clusters(c) => Some(c.dim),
            DataRecipe::File { .. } | DataRecipe::TargetHalf => None,
        }
    }

    /// Class count; file recipes read only the header line.
    pub fn num_classes(&self) -> Result<Option<usize>> {
        Ok(match self {
            DataRecipe::Gmm { num_classes, .. } | DataRecipe::Elementwise { num_classes, .. } => Some(*num_classes),
            DataRecipe::Clusters(c) => Some(c.num_classes),
            DataRecipe::TargetHalf => None,
            DataRecipe::File { path } => Some(read_header(path)?.1),
        })
    }

    pub fn build(&self, rng: &RngStream) -> Result<(Domain, Option<NormStats>)> {
        match self {
            DataRecipe::File { path } => Ok((load_domain(path)?, None)),
            DataRecipe::Gmm {
                num_classes,
                dim,
                per_class,
                delta,
                covariance,
                seed,
            } => {
                let spec = GmmNoiseSpec {
                    num_classes: *num_classes,
                    dim: *dim,
                    per_class_counts: per_class.resolve(*num_classes)?,
                    delta: *delta,
                    covariance: *covariance,
                    seed: *seed,
                };
                let (d, s) = make_gmm_noise_domain(&spec, &mut rng.fork(*seed))?;
                Ok((d, Some(s)))
            }
            DataRecipe::Elementwise {
                dist,
                num_classes,
                dim,
                per_class,
                seed,
            } => {
                let counts = per_class.resolve(*num_classes)?;
                let d = make_elementwise_noise_domain(*dist, *num_classes, *dim, &counts, &mut rng.fork(*seed))?;
                Ok((d, None))
            }
            DataRecipe::Clusters(spec) => Ok((make_cluster_domain(spec, &mut rng.clone())?, None)),
            DataRecipe::TargetHalf => Err(Error::schema(
                "source.data.kind",
                "target_half is only available with a halves split",
            )),
        }
    }
}

/// `(d, C, n)` from a domain file header.
pub fn read_header(path: &Path) -> Result<(usize, usize, usize)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let mut vals = [None; 3];
    for tok in line.trim().strip_prefix("#domain").unwrap_or("").split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            let slot = match k {
                "d" => 0,
                "C" => 1,
                "n" => 2,
                _ => continue,
            };
            vals[slot] = v.parse().ok();
        }
    }
    match vals {
        [Some(d), Some(c), Some(n)] => Ok((d, c, n)),
        _ => Err(Error::format(
            path,
            1,
            "expected `#domain d=<int> C=<int> n=<int>` header",
        )),
    }
}

fn default_inject_delta() -> f64 {
    1.0
}

fn default_inject_cov() -> CovarianceMode {
    CovarianceMode::Identity
}

/// Source-side transformations, applied in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    Permute {
        perm: Vec<usize>,
    },
    Truncate {
        keep: usize,
    },
    /// Blends in a Gaussian-mixture noise domain generated to match the
    /// source's class counts and dimension.
    Inject {
        alpha: f64,
        #[serde(default = "default_inject_delta")]
        delta: f64,
        #[serde(default = "default_inject_cov")]
        covariance: CovarianceMode,
    },
}

impl Transform {
    pub fn apply(&self, d: &Domain, rng: &RngStream) -> Result<Domain> {
        match self {
            Transform::Permute { perm } => permute_categories(d, perm),
            Transform::Truncate { keep } => truncate_categories(d, *keep),
            Transform::Inject {
                alpha,
                delta,
                covariance,
            } => {
                let spec = GmmNoiseSpec {
                    num_classes: d.num_classes(),
                    dim: d.dim(),
                    per_class_counts: d.class_counts(),
                    delta: *delta,
                    covariance: *covariance,
                    seed: 0,
                };
                let (noise, _) = make_gmm_noise_domain(&spec, &mut rng.fork_named("inject"))?;
                inject_noise(d, &noise, *alpha)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRecipe {
    pub data: DataRecipe,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

impl SourceRecipe {
    /// Class count after truncations, when statically known.
    pub fn num_classes(&self) -> Result<Option<usize>> {
        let mut c = self.data.num_classes()?;
        for t in &self.transforms {
            if let Transform::Truncate { keep } = t {
                c = Some(*keep);
            }
        }
        Ok(c)
    }
}

fn default_labeled_per_class() -> usize {
    3
}

fn default_unlabeled() -> Unlabeled {
    Unlabeled::All
}

fn default_fraction() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    /// A few labeled samples per class, the rest unlabeled.
    FewLabeled {
        #[serde(default = "default_labeled_per_class")]
        labeled_per_class: usize,
        #[serde(default = "default_unlabeled")]
        unlabeled: Unlabeled,
    },
    /// Stratified halves: the first feeds the source, the second is split
    /// with `⌈fraction·n_c⌉` labeled samples per class.
    Halves {
        #[serde(default = "default_fraction")]
        labeled_fraction: f64,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::FewLabeled {
            labeled_per_class: default_labeled_per_class(),
            unlabeled: default_unlabeled(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecipe {
    pub data: DataRecipe,
    #[serde(default)]
    pub split: SplitSpec,
}

/// One experiment: data recipes, trainer, hyperparameters and trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub id: String,
    pub trainer: TrainerId,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub source: SourceRecipe,
    pub target: TargetRecipe,
    /// Also train the target-only baseline per trial (KTF only).
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub ktf: KtfHyper,
    #[serde(default)]
    pub nnt: NntHyper,
    #[serde(default)]
    pub hocn: HocnHyper,
}

impl TaskSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: TaskSpec = parse_toml(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("task specs always serialize")
    }

    /// Structural checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::schema(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        if self.id.is_empty() || self.id.contains([',', '\n', '/', '\\']) || self.id == "." || self.id == ".." {
            return Err(Error::schema("id", format!("`{}` is not a valid task id", self.id)));
        }
        if self.trials == 0 {
            return Err(Error::schema("trials", "must be at least 1"));
        }
        let halves = matches!(self.target.split, SplitSpec::Halves { .. });
        let from_half = self.source.data == DataRecipe::TargetHalf;
        if matches!(self.target.data, DataRecipe::TargetHalf) {
            return Err(Error::schema("target.data.kind", "target cannot be target_half"));
        }
        if from_half != halves {
            return Err(Error::schema(
                "source.data.kind",
                "target_half sources and halves splits must be used together",
            ));
        }
        for (i, t) in self.source.transforms.iter().enumerate() {
            if let Transform::Inject { alpha, .. } = t {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::schema(
                        format!("source.transforms[{i}].alpha"),
                        format!("{alpha} outside [0, 1]"),
                    ));
                }
            }
        }
        match &self.target.split {
            SplitSpec::Halves { labeled_fraction } if !(*labeled_fraction > 0.0 && *labeled_fraction < 1.0) => {
                return Err(Error::schema(
                    "target.split.labeled_fraction",
                    format!("{labeled_fraction} outside (0, 1)"),
                ));
            }
            SplitSpec::FewLabeled {
                labeled_per_class: 0, ..
            } => {
                return Err(Error::schema("target.split.labeled_per_class", "must be at least 1"));
            }
            _ => {}
        }
        match self.trainer {
            TrainerId::Ktf => {
                self.ktf.validate().map_err(|e| prefix("ktf", e))?;
                if halves {
                    return Err(Error::schema("target.split.mode", "ktf needs a few_labeled split"));
                }
                if let Some(d) = self.source.data.static_dim() {
                    if d != self.ktf.d_sub {
                        return Err(Error::schema(
                            "source.data.dim",
                            format!("noise source must live in the {}-dim subspace, got {d}", self.ktf.d_sub),
                        ));
                    }
                }
            }
            TrainerId::Nnt => self.nnt.validate().map_err(|e| prefix("nnt", e))?,
            TrainerId::Hocn | TrainerId::HocnBeta0 => {
                self.hocn.validate().map_err(|e| prefix("hocn", e))?;
                if !halves {
                    return Err(Error::schema(
                        "target.split.mode",
                        "homogeneous trainers need a halves split with a target_half source",
                    ));
                }
            }
        }
        if self.baseline {
            self.nnt.validate().map_err(|e| prefix("nnt", e))?;
        }
        Ok(())
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Schema { field, msg } => Error::schema(format!("{section}.{field}"), msg),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KTF_TASK: &str = r#"
id = "toy"
trainer = "ktf"
trials = 2
seed = 3

[source.data]
kind = "gmm"
num_classes = 4
dim = 256
per_class = 200
delta = 1.0
covariance = "identity"

[[source.transforms]]
op = "permute"
perm = [1, 0, 3, 2]

[target.data]
kind = "clusters"
num_classes = 4
dim = 50
per_class = 203

[ktf]
iterations = 20
"#;

    #[test]
    fn parses_and_round_trips() {
        let spec = TaskSpec::from_toml(KTF_TASK).unwrap();
        assert_eq!(spec.trainer, TrainerId::Ktf);
        assert_eq!(spec.ktf.iterations, 20);
        assert_eq!(spec.ktf.beta, 0.1);
        assert_eq!(spec.target.split, SplitSpec::default());
        assert_eq!(spec.source.num_classes().unwrap(), Some(4));
        assert_eq!(TaskSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = KTF_TASK.replace("trainer = \"ktf\"", "trainer = \"svm\"");
        match TaskSpec::from_toml(&bad) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "trainer"),
            other => panic!("{other:?}"),
        }
        let bad = KTF_TASK.replace("dim = 256", "dim = 300");
        match TaskSpec::from_toml(&bad) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "source.data.dim"),
            other => panic!("{other:?}"),
        }
        let bad = KTF_TASK.replace("iterations = 20", "iterations = 0");
        match TaskSpec::from_toml(&bad) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "ktf.iterations"),
            other => panic!("{other:?}"),
        }
        let bad = KTF_TASK.replace("trials = 2", "trials = 2\ncolour = 1");
        assert!(matches!(TaskSpec::from_toml(&bad), Err(Error::Schema { .. })));
        let bad = format!("version = 9\n{KTF_TASK}");
        match TaskSpec::from_toml(&bad) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "version"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn homogeneous_pairing_is_enforced() {
        let mut spec = TaskSpec::from_toml(KTF_TASK).unwrap();
        spec.trainer = TrainerId::Hocn;
        assert!(spec.validate().is_err());
        spec.source.data = DataRecipe::TargetHalf;
        spec.target.split = SplitSpec::Halves { labeled_fraction: 0.01 };
        spec.validate().unwrap();
        spec.trainer = TrainerId::Ktf;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn transforms_apply_in_order() {
        let rng = RngStream::new(1);
        let d = DataRecipe::Clusters(ClusterSpec::new(3, 2, 4)).build(&rng).unwrap().0;
        let p = Transform::Permute { perm: vec![2, 0, 1] }.apply(&d, &rng).unwrap();
        assert_eq!(p.class_counts(), vec![4, 4, 4]);
        let t = Transform::Truncate { keep: 2 }.apply(&p, &rng).unwrap();
        assert_eq!(t.num_classes(), 2);
        let zero = Transform::Inject {
            alpha: 0.0,
            delta: 1.0,
            covariance: CovarianceMode::Identity,
        };
        assert_eq!(zero.apply(&d, &rng).unwrap(), d.sorted_by_label());
    }
}
