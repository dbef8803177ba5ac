//! Loss terms and their analytic gradients.
//!
//! Every objective is `Σ_k w_k·CE_k + μ·SMMD + τ·‖θ‖²` over some subset
//! of terms, so one forward/backward pass in [`Problem`] serves KTF, NNt
//! and HoCN.
//!
//! Class-mean matrices have `C + 1` rows: row 0 pools every sample and row
//! `k + 1` belongs to label `k`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::domains::{one_hot, Domain, SplitTarget};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};
use crate::model::{leaky_relu, softmax_rows, Model, DEFAULT_SUBSPACE_DIM};

pub const PROB_CLAMP: f64 = 1e-12;
/// Soft-mass threshold below which a class is left out of SMMD.
pub const MIN_CLASS_MASS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KtfHyper {
    pub beta: f64,
    pub mu: f64,
    pub tau: f64,
    pub d_sub: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub record_every: usize,
}

impl Default for KtfHyper {
    fn default() -> Self {
        Self {
            beta: 0.1,
            mu: 0.1,
            tau: 0.05,
            d_sub: DEFAULT_SUBSPACE_DIM,
            iterations: 600,
            learning_rate: 0.001,
            record_every: 10,
        }
    }
}

impl KtfHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("mu", self.mu), ("tau", self.tau)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::schema(name, format!("must be positive, got {v}")));
            }
        }
        check_schedule(self.d_sub, self.iterations, self.learning_rate)?;
        if self.record_every == 0 {
            return Err(Error::schema("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

fn check_schedule(d_sub: usize, iterations: usize, lr: f64) -> Result<()> {
    if d_sub == 0 {
        return Err(Error::schema("d_sub", "must be at least 1"));
    }
    if iterations == 0 {
        return Err(Error::schema("iterations", "must be at least 1"));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::schema("learning_rate", format!("must be positive, got {lr}")));
    }
    Ok(())
}

/// Target-only baseline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NntHyper {
    pub tau: f64,
    pub d_sub: usize,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for NntHyper {
    fn default() -> Self {
        Self {
            tau: 0.001,
            d_sub: DEFAULT_SUBSPACE_DIM,
            iterations: 100,
            learning_rate: 0.01,
        }
    }
}

impl NntHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::schema("tau", format!("must be non-negative, got {}", self.tau)));
        }
        check_schedule(self.d_sub, self.iterations, self.learning_rate)
    }
}

/// Shared-projector homogeneous control settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HocnHyper {
    pub beta: f64,
    pub tau: f64,
    pub d_sub: usize,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for HocnHyper {
    fn default() -> Self {
        Self {
            beta: 0.01,
            tau: 0.005,
            d_sub: DEFAULT_SUBSPACE_DIM,
            iterations: 600,
            learning_rate: 0.001,
        }
    }
}

impl HocnHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("tau", self.tau)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::schema(name, format!("must be non-negative, got {v}")));
            }
        }
        check_schedule(self.d_sub, self.iterations, self.learning_rate)
    }
}

/// Mean cross-entropy `(1/n)·Σᵢ Σ_c −y_ic·ln max(p_ic, 1e-12)`.
pub fn cross_entropy(y: &Matrix, p: &Matrix) -> Result<f64> {
    if y.shape() != p.shape() {
        return Err(Error::dim(format!(
            "labels are {:?}, probabilities are {:?}",
            y.shape(),
            p.shape()
        )));
    }
    if y.rows() == 0 {
        return Err(Error::dim("cross-entropy over zero samples"));
    }
    let s: f64 = y
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .filter(|(&yi, _)| yi != 0.0)
        .map(|(&yi, &pi)| -yi * pi.max(PROB_CLAMP).ln())
        .sum();
    Ok(s / y.rows() as f64)
}

fn ce_labels(labels: &[usize], p: &Matrix, rows: Range<usize>) -> f64 {
    let s: f64 = rows
        .clone()
        .zip(labels)
        .map(|(i, &l)| -p[(i, l)].max(PROB_CLAMP).ln())
        .sum();
    s / labels.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeans {
    /// `(C+1) × d`.
    pub means: Matrix,
    /// Mass behind each row; rows below [`MIN_CLASS_MASS`] are skipped.
    pub weights: Vec<f64>,
}

impl ClassMeans {
    pub fn num_classes(&self) -> usize {
        self.means.rows() - 1
    }

    /// Means from a per-sample membership matrix `n × C` (hard or soft).
    /// Row 0 gives every sample unit weight.
    fn from_membership(h: &Matrix, membership: &Matrix) -> Self {
        let n = h.rows();
        let c = membership.cols();
        let (a, weights) = mean_operator(membership, n, c);
        let mut means = Matrix::zeros(c + 1, h.cols());
        gemm(&a, true, h, false, &mut means, 1.0, 0.0);
        Self { means, weights }
    }
}

/// Builds `A` (`n × (C+1)`) with `Aᵀ·H` equal to the class-mean matrix, and
/// the per-row masses. Skipped classes get a zero column.
fn mean_operator(membership: &Matrix, n: usize, c: usize) -> (Matrix, Vec<f64>) {
    let mut weights = vec![n as f64; c + 1];
    weights[1..].copy_from_slice(&membership.column_sums());
    let mut a = Matrix::zeros(n, c + 1);
    for i in 0..n {
        let row = a.row_mut(i);
        row[0] = 1.0 / n as f64;
        for k in 0..c {
            if weights[k + 1] >= MIN_CLASS_MASS {
                row[k + 1] = membership[(i, k)] / weights[k + 1];
            }
        }
    }
    (a, weights)
}

/// Hard-label class means of source samples that already live in the
/// subspace.
pub fn class_means_source(noise: &Domain) -> Result<ClassMeans> {
    if let Some(class) = noise.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::DegenerateClass { class });
    }
    Ok(ClassMeans::from_membership(noise.samples(), &noise.one_hot()))
}

/// Soft target class means: labeled samples count fully in their class,
/// unlabeled ones by the classifier's current probabilities.
pub fn class_means_target_soft(model: &Model, labeled: &Domain, unlabeled: &Matrix) -> Result<ClassMeans> {
    if labeled.num_classes() != model.num_classes() {
        return Err(Error::dim(format!(
            "model has {} classes, labeled target has {}",
            model.num_classes(),
            labeled.num_classes()
        )));
    }
    let x = Matrix::vstack(&[labeled.samples(), unlabeled])?;
    let h = model.project(&x)?;
    let soft = model
        .classifier
        .classify(&h.select_rows(&(labeled.len()..x.rows()).collect::<Vec<_>>()))?;
    let membership = Matrix::vstack(&[&labeled.one_hot(), &soft])?;
    Ok(ClassMeans::from_membership(&h, &membership))
}

/// `(1/K)·Σ_c ‖m_s^c − m_t^c‖²` over the `K` rows where both sides carry
/// mass.
pub fn smmd(ms: &ClassMeans, mt: &ClassMeans) -> Result<f64> {
    if ms.means.shape() != mt.means.shape() {
        return Err(Error::dim(format!(
            "class means {:?} vs {:?}",
            ms.means.shape(),
            mt.means.shape()
        )));
    }
    let mut total = 0.0;
    let mut kept = 0usize;
    for c in 0..ms.means.rows() {
        if ms.weights[c] < MIN_CLASS_MASS || mt.weights[c] < MIN_CLASS_MASS {
            continue;
        }
        kept += 1;
        total += ms
            .means
            .row(c)
            .iter()
            .zip(mt.means.row(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(if kept == 0 { 0.0 } else { total / kept as f64 })
}

/// Gradients in the parameter layout of [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub projector_weight: Matrix,
    pub projector_bias: Vec<f64>,
    pub classifier_weight: Matrix,
    pub classifier_bias: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            projector_weight: Matrix::zeros(model.d_in(), model.d_sub()),
            projector_bias: vec![0.0; model.d_sub()],
            classifier_weight: Matrix::zeros(model.d_sub(), model.num_classes()),
            classifier_bias: vec![0.0; model.num_classes()],
        }
    }

    /// Same order as [`Model::param_slices`].
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.projector_weight.as_slice(),
            &self.projector_bias,
            self.classifier_weight.as_slice(),
            &self.classifier_bias,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Unweighted loss components at one parameter point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Cross-entropy on labeled target samples.
    pub labeled: f64,
    /// Cross-entropy on source samples (0 when the objective has none).
    pub source: f64,
    /// SMMD between source and soft target means (0 when absent).
    pub align: f64,
    /// `‖g‖² + ‖f‖²`.
    pub reg: f64,
    /// The weighted objective value.
    pub total: f64,
}

struct ProjectedCe {
    rows: Range<usize>,
    labels: Vec<usize>,
    weight: f64,
}

struct DirectCe {
    samples: Matrix,
    labels: Vec<usize>,
    weight: f64,
}

struct Align {
    labeled: Range<usize>,
    unlabeled: Range<usize>,
    labeled_one_hot: Matrix,
    source_means: ClassMeans,
    weight: f64,
}

/// A prepared objective: inputs are stacked once so each evaluation costs
/// one projector product.
pub struct Problem {
    x: Matrix,
    projected: Vec<ProjectedCe>,
    direct: Option<DirectCe>,
    align: Option<Align>,
    tau: f64,
    num_classes: usize,
    d_in: usize,
    d_sub: Option<usize>,
}

struct Forward {
    z: Matrix,
    h: Matrix,
    p: Matrix,
    p_direct: Option<Matrix>,
}

impl Problem {
    /// KTF: labeled CE + β·source CE + μ·SMMD + τ·reg. The source already
    /// lives in the subspace and bypasses the projector.
    pub fn ktf(source: &Domain, target: &SplitTarget, beta: f64, mu: f64, tau: f64) -> Result<Self> {
        let c = target.num_classes();
        if source.num_classes() != c {
            return Err(Error::Alignment(format!(
                "source has {} classes, target has {c}",
                source.num_classes()
            )));
        }
        let n_l = target.labeled.len();
        let x = Matrix::vstack(&[target.labeled.samples(), &target.unlabeled])?;
        Ok(Self {
            projected: vec![ProjectedCe {
                rows: 0..n_l,
                labels: target.labeled.labels().to_vec(),
                weight: 1.0,
            }],
            direct: Some(DirectCe {
                samples: source.samples().clone(),
                labels: source.labels().to_vec(),
                weight: beta,
            }),
            align: Some(Align {
                labeled: 0..n_l,
                unlabeled: n_l..x.rows(),
                labeled_one_hot: target.labeled.one_hot(),
                source_means: class_means_source(source)?,
                weight: mu,
            }),
            tau,
            num_classes: c,
            d_in: x.cols(),
            d_sub: Some(source.dim()),
            x,
        })
    }

    pub fn nnt(labeled: &Domain, tau: f64) -> Self {
        Self {
            x: labeled.samples().clone(),
            projected: vec![ProjectedCe {
                rows: 0..labeled.len(),
                labels: labeled.labels().to_vec(),
                weight: 1.0,
            }],
            direct: None,
            align: None,
            tau,
            num_classes: labeled.num_classes(),
            d_in: labeled.dim(),
            d_sub: None,
        }
    }

    /// HoCN: labeled CE + β·source CE through one shared projector. With
    /// β = 0 the source is dropped entirely and the graph is NNt's.
    pub fn hocn(source: &Domain, labeled: &Domain, beta: f64, tau: f64) -> Result<Self> {
        if source.dim() != labeled.dim() {
            return Err(Error::Homogeneity {
                source_dim: source.dim(),
                target_dim: labeled.dim(),
            });
        }
        if source.num_classes() != labeled.num_classes() {
            return Err(Error::Alignment(format!(
                "source has {} classes, target has {}",
                source.num_classes(),
                labeled.num_classes()
            )));
        }
        let mut p = Self::nnt(labeled, tau);
        if beta != 0.0 {
            let n_l = labeled.len();
            p.x = Matrix::vstack(&[labeled.samples(), source.samples()])?;
            p.projected.push(ProjectedCe {
                rows: n_l..n_l + source.len(),
                labels: source.labels().to_vec(),
                weight: beta,
            });
        }
        Ok(p)
    }

    fn check(&self, model: &Model) -> Result<()> {
        if model.d_in() != self.d_in {
            return Err(Error::dim(format!(
                "model input dimension {} vs data dimension {}",
                model.d_in(),
                self.d_in
            )));
        }
        if model.num_classes() != self.num_classes {
            return Err(Error::dim(format!(
                "model has {} classes, data has {}",
                model.num_classes(),
                self.num_classes
            )));
        }
        if let Some(d) = self.d_sub {
            if d != model.d_sub() {
                return Err(Error::dim(format!(
                    "source noise dimension {d} vs subspace dimension {}",
                    model.d_sub()
                )));
            }
        }
        Ok(())
    }

    fn forward(&self, model: &Model) -> Result<Forward> {
        self.check(model)?;
        let z = model.projector.pre_activation(&self.x)?;
        let slope = model.projector.leaky_slope;
        let h = z.map(|v| leaky_relu(v, slope));
        let mut p = model.classifier.logits(&h)?;
        softmax_rows(&mut p);
        let p_direct = match &self.direct {
            Some(d) => Some(model.classifier.classify(&d.samples)?),
            None => None,
        };
        Ok(Forward { z, h, p, p_direct })
    }

    /// Soft labels of the unlabeled rows at `model`; empty when the
    /// objective has no alignment term.
    pub fn soft_labels(&self, model: &Model) -> Result<Matrix> {
        let f = self.forward(model)?;
        Ok(self.soft_from(&f))
    }

    fn soft_from(&self, f: &Forward) -> Matrix {
        match &self.align {
            Some(a) => f.p.select_rows(&a.unlabeled.clone().collect::<Vec<_>>()),
            None => Matrix::zeros(0, self.num_classes),
        }
    }

    /// Returns the mean operator over projected rows and the target means.
    fn target_means(&self, a: &Align, h: &Matrix, soft: &Matrix) -> Result<(Matrix, ClassMeans)> {
        if soft.shape() != (a.unlabeled.len(), self.num_classes) {
            return Err(Error::dim("frozen soft labels have the wrong shape"));
        }
        let membership = Matrix::vstack(&[&a.labeled_one_hot, soft])?;
        let rows = a.labeled.len() + a.unlabeled.len();
        debug_assert_eq!(rows, h.rows());
        let (op, weights) = mean_operator(&membership, rows, self.num_classes);
        let mut means = Matrix::zeros(self.num_classes + 1, h.cols());
        gemm(&op, true, h, false, &mut means, 1.0, 0.0);
        Ok((op, ClassMeans { means, weights }))
    }

    fn losses(
        &self,
        model: &Model,
        f: &Forward,
        soft: Option<&Matrix>,
    ) -> Result<(LossParts, Option<(Matrix, ClassMeans)>)> {
        let mut parts = LossParts {
            reg: model.projector.sum_of_squares() + model.classifier.sum_of_squares(),
            ..LossParts::default()
        };
        let mut total = 0.0;
        for (k, t) in self.projected.iter().enumerate() {
            let ce = ce_labels(&t.labels, &f.p, t.rows.clone());
            if k == 0 {
                parts.labeled = ce;
            } else {
                parts.source = ce;
            }
            total += t.weight * ce;
        }
        if let (Some(d), Some(p)) = (&self.direct, &f.p_direct) {
            parts.source = ce_labels(&d.labels, p, 0..d.labels.len());
            total += d.weight * parts.source;
        }
        let mut align_state = None;
        if let Some(a) = &self.align {
            let own;
            let soft = match soft {
                Some(s) => s,
                None => {
                    own = self.soft_from(f);
                    &own
                }
            };
            let (op, mt) = self.target_means(a, &f.h, soft)?;
            parts.align = smmd(&a.source_means, &mt)?;
            total += a.weight * parts.align;
            align_state = Some((op, mt));
        }
        parts.total = total + self.tau * parts.reg;
        Ok((parts, align_state))
    }

    /// Objective value with soft labels taken from `model` itself.
    pub fn evaluate(&self, model: &Model) -> Result<LossParts> {
        let f = self.forward(model)?;
        Ok(self.losses(model, &f, None)?.0)
    }

    /// Objective value with the soft labels held at `soft`.
    pub fn evaluate_frozen(&self, model: &Model, soft: &Matrix) -> Result<LossParts> {
        let f = self.forward(model)?;
        Ok(self.losses(model, &f, Some(soft))?.0)
    }

    /// Value and exact gradient, soft labels treated as constants.
    pub fn gradient(&self, model: &Model) -> Result<(LossParts, GradientSet)> {
        let f = self.forward(model)?;
        let (parts, align_state) = self.losses(model, &f, None)?;
        let mut g = GradientSet::zeros_like(model);
        let c = self.num_classes;

        // d/dlogits of clamped CE; rows whose true-class probability is
        // clamped contribute nothing.
        let mut dlogits = Matrix::zeros(self.x.rows(), c);
        for t in &self.projected {
            let scale = t.weight / t.labels.len() as f64;
            for (i, &l) in t.rows.clone().zip(&t.labels) {
                if f.p[(i, l)] < PROB_CLAMP {
                    continue;
                }
                let out = dlogits.row_mut(i);
                for (o, &pv) in out.iter_mut().zip(f.p.row(i)) {
                    *o = scale * pv;
                }
                out[l] -= scale;
            }
        }
        gemm(&f.h, true, &dlogits, false, &mut g.classifier_weight, 1.0, 0.0);
        add_column_sums(&mut g.classifier_bias, &dlogits);

        let mut dh = Matrix::zeros(f.h.rows(), f.h.cols());
        gemm(&dlogits, false, &model.classifier.weight, true, &mut dh, 1.0, 0.0);

        if let (Some(d), Some(p)) = (&self.direct, &f.p_direct) {
            let scale = d.weight / d.labels.len() as f64;
            let mut dl = Matrix::zeros(p.rows(), c);
            for (i, &l) in d.labels.iter().enumerate() {
                if p[(i, l)] < PROB_CLAMP {
                    continue;
                }
                let out = dl.row_mut(i);
                for (o, &pv) in out.iter_mut().zip(p.row(i)) {
                    *o = scale * pv;
                }
                out[l] -= scale;
            }
            gemm(&d.samples, true, &dl, false, &mut g.classifier_weight, 1.0, 1.0);
            add_column_sums(&mut g.classifier_bias, &dl);
        }

        if let (Some(a), Some((op, mt))) = (&self.align, align_state) {
            let ms = &a.source_means;
            let kept: Vec<usize> = (0..=c)
                .filter(|&k| ms.weights[k] >= MIN_CLASS_MASS && mt.weights[k] >= MIN_CLASS_MASS)
                .collect();
            if !kept.is_empty() {
                let scale = 2.0 * a.weight / kept.len() as f64;
                let mut gm = Matrix::zeros(c + 1, mt.means.cols());
                for &k in &kept {
                    let out = gm.row_mut(k);
                    for ((o, &t), &s) in out.iter_mut().zip(mt.means.row(k)).zip(ms.means.row(k)) {
                        *o = scale * (t - s);
                    }
                }
                gemm(&op, false, &gm, false, &mut dh, 1.0, 1.0);
            }
        }

        let slope = model.projector.leaky_slope;
        let dz = Matrix::from_raw(
            dh.rows(),
            dh.cols(),
            dh.as_slice()
                .iter()
                .zip(f.z.as_slice())
                .map(|(&d, &z)| if z >= 0.0 { d } else { slope * d })
                .collect(),
        );
        gemm(&self.x, true, &dz, false, &mut g.projector_weight, 1.0, 0.0);
        add_column_sums(&mut g.projector_bias, &dz);

        let two_tau = 2.0 * self.tau;
        let params = model.param_slices();
        let grads = [
            g.projector_weight.as_mut_slice(),
            &mut g.projector_bias,
            g.classifier_weight.as_mut_slice(),
            &mut g.classifier_bias,
        ];
        for (gs, ps) in grads.into_iter().zip(params) {
            for (gv, &pv) in gs.iter_mut().zip(ps) {
                *gv += two_tau * pv;
            }
        }
        Ok((parts, g))
    }
}

fn add_column_sums(out: &mut [f64], m: &Matrix) {
    for row in m.row_iter() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub fn ktf_objective(model: &Model, source: &Domain, target: &SplitTarget, h: &KtfHyper) -> Result<f64> {
    Ok(Problem::ktf(source, target, h.beta, h.mu, h.tau)?
        .evaluate(model)?
        .total)
}

pub fn nnt_objective(model: &Model, labeled: &Domain, tau: f64) -> Result<f64> {
    Ok(Problem::nnt(labeled, tau).evaluate(model)?.total)
}

pub fn hocn_objective(model: &Model, source: &Domain, labeled: &Domain, beta: f64, tau: f64) -> Result<f64> {
    Ok(Problem::hocn(source, labeled, beta, tau)?.evaluate(model)?.total)
}

/// Hard one-hot targets for a label vector.
pub fn labels_one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    one_hot(labels, num_classes)
}
