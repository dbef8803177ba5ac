use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::Domain;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Writes the text format: a `#domain d=.. C=.. n=..` header, then one
/// `label,v1,..,vd` line per sample. Floats use the shortest round-trip
/// representation, so `load_domain(save_domain(d))` is bit-exact.
pub fn save_domain(domain: &Domain, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(domain.len() * (domain.dim() * 20 + 4));
    let _ = writeln!(
        out,
        "#domain d={} C={} n={}",
        domain.dim(),
        domain.num_classes(),
        domain.len()
    );
    for (row, &label) in domain.samples().row_iter().zip(domain.labels()) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_header(line: &str, path: &Path) -> Result<(usize, usize, usize)> {
    let bad = |msg: &str| Error::format(path, 1, msg);
    let rest = line
        .strip_prefix("#domain")
        .ok_or_else(|| bad("expected `#domain d=<int> C=<int> n=<int>` header"))?;
    let mut fields = [None; 3];
    for tok in rest.split_whitespace() {
        let (key, val) = tok.split_once('=').ok_or_else(|| bad("header field without `=`"))?;
        let slot = match key {
            "d" => 0,
            "C" => 1,
            "n" => 2,
            _ => return Err(bad(&format!("unknown header field `{key}`"))),
        };
        let v: usize = val
            .parse()
            .map_err(|_| bad(&format!("header field `{key}` is not a non-negative integer")))?;
        if fields[slot].replace(v).is_some() {
            return Err(bad(&format!("duplicate header field `{key}`")));
        }
    }
    match fields {
        [Some(d), Some(c), Some(n)] => Ok((d, c, n)),
        _ => Err(bad("header must define d, C and n")),
    }
}

pub fn load_domain(path: &Path) -> Result<Domain> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "empty domain file"))?;
    let (d, c, n) = parse_header(header.trim(), path)?;
    if c == 0 {
        return Err(Error::format(path, 1, "C must be at least 1"));
    }

    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if labels.len() == n {
            return Err(Error::format(path, lineno, format!("more than n={n} sample rows")));
        }
        let mut parts = line.trim().split(',');
        let label: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(path, lineno, "label is not a non-negative integer"))?;
        if label >= c {
            return Err(Error::format(
                path,
                lineno,
                format!("label {label} out of range for C={c}"),
            ));
        }
        let before = data.len();
        for tok in parts {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::format(path, lineno, format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::format(path, lineno, "non-finite value"));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::format(
                path,
                lineno,
                format!("expected {d} values, found {}", data.len() - before),
            ));
        }
        labels.push(label);
    }
    if labels.len() != n {
        return Err(Error::format(
            path,
            text.lines().count(),
            format!("header promises n={n} rows, found {}", labels.len()),
        ));
    }
    Domain::new(Matrix::from_raw(n, d, data), labels, c).map_err(|e| match e {
        Error::DegenerateClass { class } => Error::format(path, 1, format!("class {class} has no samples")),
        other => other,
    })
}

/// `<path>.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes provenance metadata next to a domain file.
pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<PathBuf> {
    let target = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::schema("sidecar", e.to_string()))?;
    fs::write(&target, json + "\n").map_err(|e| Error::io(&target, e))?;
    Ok(target)
}

pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let target = sidecar_path(path);
    let text = fs::read_to_string(&target).map_err(|e| Error::io(&target, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&target, e.line(), e.to_string()))
}
