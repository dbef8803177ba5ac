//! Metrics, tuple averaging, Spearman correlation, cosine alignment and
//! the CSV reports built from them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domains::Domain;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Model;
use crate::trainers::TrainRecord;

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::dim("accuracy over zero samples"));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn improvement_ratio(ktf_acc: f64, nnt_acc: f64) -> Result<f64> {
    if !(nnt_acc > 0.0) {
        return Err(Error::DegenerateBaseline);
    }
    Ok(ktf_acc / nnt_acc)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one side is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's coefficient: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("needs at least two pairs".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// One averaged `(L_s, L_{s,t}, P_r)` tuple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedTuple {
    pub record_index: usize,
    pub loss_source: f64,
    pub loss_align: f64,
    pub p_r: f64,
}

/// Averages record series across tasks by record index. Each task's
/// accuracy is divided by that task's baseline before averaging.
pub fn average_records(series: &[Vec<TrainRecord>], nnt_accuracies: &[f64]) -> Result<Vec<AveragedTuple>> {
    if series.is_empty() {
        return Err(Error::param("no record series to average"));
    }
    if series.len() != nnt_accuracies.len() {
        return Err(Error::dim(format!(
            "{} series but {} baseline accuracies",
            series.len(),
            nnt_accuracies.len()
        )));
    }
    let len = series[0].len();
    if let Some(bad) = series.iter().position(|s| s.len() != len) {
        return Err(Error::dim(format!(
            "series {bad} has {} records, expected {len}",
            series[bad].len()
        )));
    }
    let n = series.len() as f64;
    let mut out = Vec::with_capacity(len);
    for r in 0..len {
        let (mut ls, mut la, mut pr) = (0.0, 0.0, 0.0);
        for (s, &base) in series.iter().zip(nnt_accuracies) {
            ls += s[r].loss_source;
            la += s[r].loss_align;
            pr += improvement_ratio(s[r].accuracy, base)?;
        }
        out.push(AveragedTuple {
            record_index: r,
            loss_source: ls / n,
            loss_align: la / n,
            p_r: pr / n,
        });
    }
    Ok(out)
}

/// Spearman coefficients `(ρ(L_s, P_r), ρ(L_{s,t}, P_r))`.
pub fn tuple_correlations(tuples: &[AveragedTuple]) -> Result<(f64, f64)> {
    let ls: Vec<f64> = tuples.iter().map(|t| t.loss_source).collect();
    let la: Vec<f64> = tuples.iter().map(|t| t.loss_align).collect();
    let pr: Vec<f64> = tuples.iter().map(|t| t.p_r).collect();
    Ok((spearman(&ls, &pr)?, spearman(&la, &pr)?))
}

/// Cosine scores between target class means (rows) and source class
/// means (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentMatrix {
    pub scores: Matrix,
    /// Target classes whose mean vector had zero norm.
    pub zero_target: Vec<usize>,
    /// Source classes whose mean vector had zero norm.
    pub zero_source: Vec<usize>,
}

impl AlignmentMatrix {
    pub fn mean_diagonal(&self) -> f64 {
        let c = self.scores.rows().min(self.scores.cols());
        (0..c).map(|i| self.scores[(i, i)]).sum::<f64>() / c as f64
    }
}

fn hard_means(x: &Matrix, labels: &[usize], c: usize) -> Matrix {
    let mut sums = Matrix::zeros(c, x.cols());
    let mut counts = vec![0usize; c];
    for (row, &l) in x.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(k).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Cosine score matrix between two sets of class means.
pub fn cosine_matrix(target_means: &Matrix, source_means: &Matrix) -> Result<AlignmentMatrix> {
    if target_means.cols() != source_means.cols() {
        return Err(Error::dim(format!(
            "target means are {}-dim, source means are {}-dim",
            target_means.cols(),
            source_means.cols()
        )));
    }
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tn: Vec<f64> = target_means.row_iter().map(norm).collect();
    let sn: Vec<f64> = source_means.row_iter().map(norm).collect();
    let mut scores = Matrix::zeros(target_means.rows(), source_means.rows());
    for c in 0..target_means.rows() {
        for k in 0..source_means.rows() {
            if tn[c] > 0.0 && sn[k] > 0.0 {
                let dot: f64 = target_means
                    .row(c)
                    .iter()
                    .zip(source_means.row(k))
                    .map(|(a, b)| a * b)
                    .sum();
                scores[(c, k)] = (dot / (tn[c] * sn[k])).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(AlignmentMatrix {
        scores,
        zero_target: (0..tn.len()).filter(|&c| tn[c] == 0.0).collect(),
        zero_source: (0..sn.len()).filter(|&k| sn[k] == 0.0).collect(),
    })
}

/// Alignment of projected target class means (ground-truth labels) with
/// source-noise class means.
pub fn cosine_alignment(
    model: &Model,
    source_noise: &Domain,
    target_samples: &Matrix,
    target_truth: &[usize],
) -> Result<AlignmentMatrix> {
    let c = model.num_classes();
    if source_noise.num_classes() != c {
        return Err(Error::dim(format!(
            "model has {c} classes, source has {}",
            source_noise.num_classes()
        )));
    }
    if target_truth.len() != target_samples.rows() || target_truth.iter().any(|&l| l >= c) {
        return Err(Error::dim("target truth does not match the target samples"));
    }
    let h = model.project(target_samples)?;
    let mt = hard_means(&h, target_truth, c);
    let ms = hard_means(source_noise.samples(), source_noise.labels(), c);
    cosine_matrix(&mt, &ms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingRole {
    Source,
    LabeledTarget,
    UnlabeledTarget,
}

impl EmbeddingRole {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingRole::Source => "source",
            EmbeddingRole::LabeledTarget => "labeled-target",
            EmbeddingRole::UnlabeledTarget => "unlabeled-target",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(EmbeddingRole::Source),
            "labeled-target" => Some(EmbeddingRole::LabeledTarget),
            "unlabeled-target" => Some(EmbeddingRole::UnlabeledTarget),
            _ => None,
        }
    }
}

/// Samples already in subspace coordinates, ready to dump.
pub struct EmbeddingBlock<'a> {
    pub role: EmbeddingRole,
    pub coords: &'a Matrix,
    pub labels: &'a [usize],
}

/// Writes `role,label,coords...` rows. Target blocks should be projected
/// with [`Model::project`] first; source noise is already in the subspace.
pub fn dump_embeddings(blocks: &[EmbeddingBlock<'_>], path: &Path) -> Result<()> {
    let mut out = String::new();
    for b in blocks {
        if b.labels.len() != b.coords.rows() {
            return Err(Error::dim("embedding labels do not match coordinates"));
        }
        for (row, l) in b.coords.row_iter().zip(b.labels) {
            let _ = write!(out, "{},{l}", b.role.as_str());
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Projects the target parts with `model` and dumps all three roles.
pub fn dump_model_embeddings(
    model: &Model,
    source_noise: &Domain,
    labeled: &Domain,
    unlabeled: &Matrix,
    unlabeled_truth: &[usize],
    path: &Path,
) -> Result<()> {
    let hl = model.project(labeled.samples())?;
    let hu = model.project(unlabeled)?;
    dump_embeddings(
        &[
            EmbeddingBlock {
                role: EmbeddingRole::Source,
                coords: source_noise.samples(),
                labels: source_noise.labels(),
            },
            EmbeddingBlock {
                role: EmbeddingRole::LabeledTarget,
                coords: &hl,
                labels: labeled.labels(),
            },
            EmbeddingBlock {
                role: EmbeddingRole::UnlabeledTarget,
                coords: &hu,
                labels: unlabeled_truth,
            },
        ],
        path,
    )
}

pub fn read_embeddings(path: &Path) -> Result<Vec<(EmbeddingRole, usize, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: &str| Error::format(path, i + 1, m);
        let mut f = line.split(',');
        let role = f
            .next()
            .and_then(EmbeddingRole::parse)
            .ok_or_else(|| bad("unknown role"))?;
        let label = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad label"))?;
        let coords = f
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad coordinate"))?;
        out.push((role, label, coords));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task_id: String,
    pub trainer: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub trials: usize,
}

pub const SUMMARY_HEADER: &str = "task_id,trainer,mean_accuracy,std_accuracy,trials";
pub const CORRELATION_HEADER: &str = "record_index,L_s,L_st,P_r";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{}",
            r.task_id, r.trainer, r.mean_accuracy, r.std_accuracy, r.trials
        );
    }
    write_text(path, &out)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some(SUMMARY_HEADER) {
        return Err(Error::format(path, 1, format!("expected header `{SUMMARY_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: &str| Error::format(path, i + 1, m);
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        rows.push(SummaryRow {
            task_id: f[0].to_string(),
            trainer: f[1].to_string(),
            mean_accuracy: f[2].parse().map_err(|_| bad("bad mean_accuracy"))?,
            std_accuracy: f[3].parse().map_err(|_| bad("bad std_accuracy"))?,
            trials: f[4].parse().map_err(|_| bad("bad trials"))?,
        });
    }
    Ok(rows)
}

/// Writes the averaged tuples plus the `spearman_Ls_Pr=..,spearman_Lst_Pr=..`
/// footer.
pub fn write_correlation_report(path: &Path, tuples: &[AveragedTuple]) -> Result<(f64, f64)> {
    let (a, b) = tuple_correlations(tuples)?;
    let mut out = format!("{CORRELATION_HEADER}\n");
    for t in tuples {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?}",
            t.record_index, t.loss_source, t.loss_align, t.p_r
        );
    }
    let _ = writeln!(out, "spearman_Ls_Pr={a:?},spearman_Lst_Pr={b:?}");
    write_text(path, &out)?;
    Ok((a, b))
}

/// Tuples of a correlation report and its `(ρ_Ls, ρ_Lst)` footer, if any.
pub type CorrelationReport = (Vec<AveragedTuple>, Option<(f64, f64)>);

/// Parses a correlation report; returns the tuples and the footer values.
pub fn read_correlation_report(path: &Path) -> Result<CorrelationReport> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some(CORRELATION_HEADER) {
        return Err(Error::format(
            path,
            1,
            format!("expected header `{CORRELATION_HEADER}`"),
        ));
    }
    let mut tuples = Vec::new();
    let mut footer = None;
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: &str| Error::format(path, i + 1, m);
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("spearman_Ls_Pr=") {
            let (a, b) = rest
                .split_once(",spearman_Lst_Pr=")
                .ok_or_else(|| bad("malformed footer"))?;
            footer = Some((
                a.parse().map_err(|_| bad("bad footer value"))?,
                b.parse().map_err(|_| bad("bad footer value"))?,
            ));
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        tuples.push(AveragedTuple {
            record_index: f[0].parse().map_err(|_| bad("bad record_index"))?,
            loss_source: f[1].parse().map_err(|_| bad("bad L_s"))?,
            loss_align: f[2].parse().map_err(|_| bad("bad L_st"))?,
            p_r: f[3].parse().map_err(|_| bad("bad P_r"))?,
        });
    }
    Ok((tuples, footer))
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(path, i + 1, "bad matrix entry"))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(path, 1, "empty matrix file"));
    }
    Matrix::from_rows(&rows).map_err(|e| Error::format(path, 1, e.to_string()))
}
