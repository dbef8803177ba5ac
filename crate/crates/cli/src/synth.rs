use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::{ArgGroup, Args};
use serde::Serialize;
use shda_core::domains::{save_domain, write_sidecar, ClusterSpec, CovarianceMode, NormStats};
use shda_core::linalg::Elementwise;
use shda_core::suites::{ClassCounts, DataRecipe};
use shda_core::{Error, RngStream};

use crate::{CliError, CliResult};

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("kind").required(true).args(["gmm", "clusters", "elementwise"])))]
pub struct SynthArgs {
    /// Gaussian-mixture noise: `C= d= n= delta= [cov=identity|scaled] [stream=]`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    gmm: Option<Vec<String>>,

    /// Gaussian clusters: `C= d= n= [separation=] [spread=]`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    clusters: Option<Vec<String>>,

    /// Entry-wise noise: `dist=uniform|laplace|normal C= d= n= [lo= hi=] [loc= scale=] [stream=]`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    elementwise: Option<Vec<String>>,

    /// File stem inside the output directory.
    #[arg(long, default_value = "synth")]
    name: String,
}

struct Pairs {
    flag: &'static str,
    map: BTreeMap<String, String>,
}

impl Pairs {
    fn parse(flag: &'static str, items: &[String]) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for item in items {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--{flag}: expected KEY=VALUE, got `{item}`")))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Usage(format!("--{flag}: `{k}` given twice")));
            }
        }
        Ok(Self { flag, map })
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("--{}: cannot parse {key}=`{v}`", self.flag))),
        }
    }

    fn need<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<T> {
        self.take(key)?
            .ok_or_else(|| CliError::Usage(format!("--{}: missing required {key}=", self.flag)))
    }

    fn counts(&mut self) -> CliResult<ClassCounts> {
        let raw: String = self.need("n")?;
        let parsed: Result<Vec<usize>, _> = raw.split(',').map(str::parse).collect();
        match parsed {
            Ok(v) if v.len() == 1 => Ok(ClassCounts::Uniform(v[0])),
            Ok(v) => Ok(ClassCounts::Each(v)),
            Err(_) => Err(CliError::Usage(format!("--{}: cannot parse n=`{raw}`", self.flag))),
        }
    }

    fn finish(self) -> CliResult<()> {
        match self.map.keys().next() {
            Some(k) => Err(CliError::Usage(format!("--{}: unknown key `{k}`", self.flag))),
            None => Ok(()),
        }
    }
}

fn recipe(args: &SynthArgs) -> CliResult<DataRecipe> {
    if let Some(items) = &args.gmm {
        let mut p = Pairs::parse("gmm", items)?;
        let covariance = match p.take::<String>("cov")?.as_deref() {
            None | Some("scaled") | Some("scaled_random_psd") => CovarianceMode::ScaledRandomPsd,
            Some("identity") => CovarianceMode::Identity,
            Some(other) => return Err(CliError::Usage(format!("--gmm: unknown cov=`{other}`"))),
        };
        let r = DataRecipe::Gmm {
            num_classes: p.need("C")?,
            dim: p.need("d")?,
            per_class: p.counts()?,
            delta: p.need("delta")?,
            covariance,
            seed: p.take("stream")?.unwrap_or(0),
        };
        p.finish()?;
        Ok(r)
    } else if let Some(items) = &args.clusters {
        let mut p = Pairs::parse("clusters", items)?;
        let mut spec = ClusterSpec::new(p.need("C")?, p.need("d")?, p.need("n")?);
        if let Some(s) = p.take("separation")? {
            spec.separation = s;
        }
        if let Some(s) = p.take("spread")? {
            spec.spread = s;
        }
        p.finish()?;
        Ok(DataRecipe::Clusters(spec))
    } else {
        let items = args.elementwise.as_deref().unwrap_or_default();
        let mut p = Pairs::parse("elementwise", items)?;
        let dist = match p.need::<String>("dist")?.as_str() {
            "uniform" => Elementwise::Uniform {
                lo: p.take("lo")?.unwrap_or(-10.0),
                hi: p.take("hi")?.unwrap_or(10.0),
            },
            "laplace" => Elementwise::Laplace {
                loc: p.take("loc")?.unwrap_or(0.0),
                scale: p.take("scale")?.unwrap_or(1.0),
            },
            "normal" => Elementwise::StdNormal,
            other => return Err(CliError::Usage(format!("--elementwise: unknown dist=`{other}`"))),
        };
        let r = DataRecipe::Elementwise {
            dist,
            num_classes: p.need("C")?,
            dim: p.need("d")?,
            per_class: p.counts()?,
            seed: p.take("stream")?.unwrap_or(0),
        };
        p.finish()?;
        Ok(r)
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    generator: &'static str,
    version: &'static str,
    seed: u64,
    recipe: &'a DataRecipe,
    stats: Option<NormStats>,
}

pub fn run(args: &SynthArgs, seed: u64, out: &Path) -> CliResult<()> {
    let recipe = recipe(args)?;
    let (domain, stats) = recipe.build(&RngStream::new(seed))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(format!("{}.domain", args.name));
    save_domain(&domain, &path)?;
    write_sidecar(
        &path,
        &Sidecar {
            generator: "shda synth",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            recipe: &recipe,
            stats,
        },
    )?;
    println!(
        "wrote {} ({} samples, d={}, C={})",
        path.display(),
        domain.len(),
        domain.dim(),
        domain.num_classes()
    );
    if let Some(s) = stats {
        println!("avg_mean_norm={:.4} avg_cov_fro={:.4}", s.avg_mean_norm, s.avg_cov_fro);
    }
    Ok(())
}
