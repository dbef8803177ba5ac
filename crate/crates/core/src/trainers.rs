//! Full-batch Adam and the KTF, NNt and HoCN training loops.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::accuracy;
use crate::domains::{Domain, SplitTarget};
use crate::error::{Error, Result};
use crate::linalg::RngStream;
use crate::model::{init_model, Model};
use crate::objective::{GradientSet, HocnHyper, KtfHyper, NntHyper, Problem};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: [Vec<f64>; 4],
    second: [Vec<f64>; 4],
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros = model.param_slices().map(|s| vec![0.0; s.len()]);
        Self {
            second: zeros.clone(),
            first: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(state: &mut AdamState, model: &mut Model, grads: &GradientSet, lr: f64) -> Result<()> {
    let gs = grads.slices();
    let shapes_ok = model
        .param_slices()
        .iter()
        .zip(&gs)
        .zip(&state.first)
        .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(Error::dim("gradient or optimizer state does not match the model"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in model
        .param_slices_mut()
        .into_iter()
        .zip(gs)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss_source: f64,
    pub loss_align: f64,
    /// Accuracy on unlabeled target samples against withheld truth.
    pub accuracy: f64,
}

fn optimize(
    problem: &Problem,
    model: &mut Model,
    iterations: usize,
    lr: f64,
    observer: &mut dyn FnMut(usize, &Model) -> Result<()>,
) -> Result<()> {
    let mut state = AdamState::new(model);
    for k in 1..=iterations {
        let (parts, grads) = problem.gradient(model)?;
        if !parts.total.is_finite() {
            return Err(Error::Numerical(format!("objective diverged at iteration {k}")));
        }
        adam_step(&mut state, model, &grads, lr)?;
        observer(k, model)?;
    }
    model.validate()
}

/// Trains KTF. `observer(k, model)` sees the model after every step `k`
/// (1-based); records are taken whenever `k % record_every == 0`.
pub fn train_ktf_observed(
    source: &Domain,
    target: &SplitTarget,
    h: &KtfHyper,
    rng: &mut RngStream,
    observer: &mut dyn FnMut(usize, &Model) -> Result<()>,
) -> Result<(Model, Vec<TrainRecord>)> {
    h.validate()?;
    if source.dim() != h.d_sub {
        return Err(Error::dim(format!(
            "source noise has dimension {}, subspace is {}",
            source.dim(),
            h.d_sub
        )));
    }
    let problem = Problem::ktf(source, target, h.beta, h.mu, h.tau)?;
    let mut model = init_model(target.dim(), h.d_sub, target.num_classes(), &mut rng.fork_named("init"))?;
    let mut records = Vec::with_capacity(h.iterations / h.record_every);
    let truth = target.unlabeled_truth();
    let mut hook = |k: usize, m: &Model| -> Result<()> {
        if k % h.record_every == 0 {
            let parts = problem.evaluate(m)?;
            let acc = if truth.is_empty() {
                0.0
            } else {
                accuracy(&m.predict(&target.unlabeled)?, truth)?
            };
            records.push(TrainRecord {
                iteration: k,
                loss_source: parts.source,
                loss_align: parts.align,
                accuracy: acc,
            });
        }
        observer(k, m)
    };
    optimize(&problem, &mut model, h.iterations, h.learning_rate, &mut hook)?;
    Ok((model, records))
}

pub fn train_ktf(
    source: &Domain,
    target: &SplitTarget,
    h: &KtfHyper,
    rng: &mut RngStream,
) -> Result<(Model, Vec<TrainRecord>)> {
    train_ktf_observed(source, target, h, rng, &mut |_, _| Ok(()))
}

pub fn train_nnt(labeled: &Domain, h: &NntHyper, rng: &mut RngStream) -> Result<Model> {
    h.validate()?;
    let problem = Problem::nnt(labeled, h.tau);
    let mut model = init_model(
        labeled.dim(),
        h.d_sub,
        labeled.num_classes(),
        &mut rng.fork_named("init"),
    )?;
    optimize(&problem, &mut model, h.iterations, h.learning_rate, &mut |_, _| Ok(()))?;
    Ok(model)
}

/// Trains the shared-projector control; `h.beta = 0` gives the
/// target-only variant.
pub fn train_hocn(source: &Domain, labeled: &Domain, h: &HocnHyper, rng: &mut RngStream) -> Result<Model> {
    h.validate()?;
    let problem = Problem::hocn(source, labeled, h.beta, h.tau)?;
    let mut model = init_model(
        labeled.dim(),
        h.d_sub,
        labeled.num_classes(),
        &mut rng.fork_named("init"),
    )?;
    optimize(&problem, &mut model, h.iterations, h.learning_rate, &mut |_, _| Ok(()))?;
    Ok(model)
}

pub const RECORDS_HEADER: &str = "iteration,loss_source,loss_align,accuracy";

pub fn write_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?}",
            r.iteration, r.loss_source, r.loss_align, r.accuracy
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TrainRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RECORDS_HEADER) {
        return Err(Error::format(path, 1, format!("expected header `{RECORDS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let lineno = i + 2;
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(Error::format(
                path,
                lineno,
                format!("expected 4 fields, found {}", f.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::format(path, lineno, format!("`{s}` is not a number")))
        };
        out.push(TrainRecord {
            iteration: f[0]
                .parse()
                .map_err(|_| Error::format(path, lineno, "iteration is not an integer"))?,
            loss_source: num(f[1])?,
            loss_align: num(f[2])?,
            accuracy: num(f[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_cluster_domain, split_target, ClusterSpec, CovarianceMode, GmmNoiseSpec, Unlabeled};
    use crate::linalg::Matrix;
    use crate::model::ProjectorParams;
    use crate::objective::ktf_objective;

    fn small_task(seed: u64, d_sub: usize) -> (Domain, SplitTarget) {
        let mut r = RngStream::new(seed);
        let target = make_cluster_domain(&ClusterSpec::new(3, 10, 30), &mut r).unwrap();
        let split = split_target(&target, 3, Unlabeled::All, &mut r).unwrap();
        let noise = GmmNoiseSpec::uniform_counts(3, d_sub, 20, 1.0, CovarianceMode::Identity, seed)
            .generate()
            .unwrap()
            .0;
        (noise, split)
    }

    fn scalar_model(w: f64) -> Model {
        Model {
            projector: ProjectorParams {
                weight: Matrix::from_rows(&[[w]]).unwrap(),
                bias: vec![0.0],
                leaky_slope: 0.01,
            },
            classifier: crate::model::ClassifierParams {
                weight: Matrix::from_rows(&[[0.0]]).unwrap(),
                bias: vec![0.0],
            },
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut m = scalar_model(0.7);
        let before = m.clone();
        let mut s = AdamState::new(&m);
        let g = GradientSet::zeros_like(&m);
        adam_step(&mut s, &mut m, &g, 0.1).unwrap();
        assert_eq!(m, before);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut m = scalar_model(1.0);
        let mut s = AdamState::new(&m);
        let mut g = GradientSet::zeros_like(&m);
        g.projector_weight = Matrix::from_rows(&[[0.5]]).unwrap();
        adam_step(&mut s, &mut m, &g, 0.01).unwrap();
        // m̂ = 0.5, v̂ = 0.25, so the step is lr·0.5/(0.5 + 1e-8).
        let expect = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((m.projector.weight[(0, 0)] - expect).abs() < 1e-15);

        adam_step(&mut s, &mut m, &g, 0.01).unwrap();
        let m2 = 0.9 * 0.05 + 0.1 * 0.5;
        let v2 = 0.999 * 0.00025 + 0.001 * 0.25;
        let step2 = 0.01 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((m.projector.weight[(0, 0)] - (expect - step2)).abs() < 1e-15);

        let mut other = scalar_model(1.0);
        other.projector.bias = vec![0.0, 0.0];
        assert!(adam_step(&mut s, &mut other, &g, 0.01).is_err());
    }

    #[test]
    fn ktf_record_counts_and_determinism() {
        let (noise, split) = small_task(1, 8);
        let h = KtfHyper {
            d_sub: 8,
            iterations: 30,
            ..KtfHyper::default()
        };
        let (m1, r1) = train_ktf(&noise, &split, &h, &mut RngStream::new(5)).unwrap();
        let (m2, r2) = train_ktf(&noise, &split, &h, &mut RngStream::new(5)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert_eq!(r1.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert!(r1.iter().all(|r| r.loss_align.is_finite() && r.loss_align >= 0.0));
        assert!(r1.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));

        let one = KtfHyper {
            iterations: 10,
            ..h.clone()
        };
        assert_eq!(
            train_ktf(&noise, &split, &one, &mut RngStream::new(5)).unwrap().1.len(),
            1
        );
        let wrong = KtfHyper { d_sub: 9, ..h };
        assert!(train_ktf(&noise, &split, &wrong, &mut RngStream::new(5)).is_err());
    }

    #[test]
    fn default_schedule_gives_sixty_records() {
        let (noise, split) = small_task(2, 16);
        let h = KtfHyper {
            d_sub: 16,
            ..KtfHyper::default()
        };
        let mut seen = 0;
        let (_, recs) = train_ktf_observed(&noise, &split, &h, &mut RngStream::new(0), &mut |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(recs.len(), 60);
        assert_eq!(seen, 600);
    }

    #[test]
    fn ktf_objective_mostly_decreases() {
        let (noise, split) = small_task(3, 16);
        let h = KtfHyper {
            d_sub: 16,
            ..KtfHyper::default()
        };
        let mut values = Vec::new();
        train_ktf_observed(&noise, &split, &h, &mut RngStream::new(1), &mut |k, m| {
            if k % 50 == 0 {
                values.push(ktf_objective(m, &noise, &split, &h)?);
            }
            Ok(())
        })
        .unwrap();
        let down = values.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(down as f64 >= 0.9 * (values.len() - 1) as f64, "{values:?}");
    }

    #[test]
    fn nnt_fits_separable_toy() {
        let x = Matrix::from_rows(&[[2.0, 0.1], [1.5, -0.2], [-2.0, 0.3], [-1.0, 0.0]]).unwrap();
        let d = Domain::new(x.clone(), vec![0, 0, 1, 1], 2).unwrap();
        let m = train_nnt(&d, &NntHyper::default(), &mut RngStream::new(3)).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(m.d_sub(), 256);
        assert_eq!(m, train_nnt(&d, &NntHyper::default(), &mut RngStream::new(3)).unwrap());
    }

    #[test]
    fn hocn_without_source_weight_is_nnt() {
        let (_, split) = small_task(4, 4);
        let src = make_cluster_domain(&ClusterSpec::new(3, 10, 5), &mut RngStream::new(9)).unwrap();
        let hh = HocnHyper {
            beta: 0.0,
            iterations: 20,
            d_sub: 8,
            ..HocnHyper::default()
        };
        let nh = NntHyper {
            tau: hh.tau,
            d_sub: 8,
            iterations: 20,
            learning_rate: hh.learning_rate,
        };
        let a = train_hocn(&src, &split.labeled, &hh, &mut RngStream::new(2)).unwrap();
        let b = train_nnt(&split.labeled, &nh, &mut RngStream::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn records_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let recs = vec![
            TrainRecord {
                iteration: 10,
                loss_source: 1.0 / 3.0,
                loss_align: 0.25,
                accuracy: 0.5,
            },
            TrainRecord {
                iteration: 20,
                loss_source: 0.1,
                loss_align: 1e-9,
                accuracy: 0.75,
            },
        ];
        write_records(&p, &recs).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with(RECORDS_HEADER));
        assert_eq!(read_records(&p).unwrap(), recs);
        fs::write(&p, "a,b\n").unwrap();
        assert!(matches!(read_records(&p), Err(Error::Format { .. })));
    }
}
