//! The target projector `g_t(x) = LeakyReLU(x·W + b)` and the shared
//! softmax classifier `f(h) = softmax(h·V + a)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix, RngStream};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_SUBSPACE_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorParams {
    /// `d_in × d_sub`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub leaky_slope: f64,
}

impl ProjectorParams {
    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_sub(&self) -> usize {
        self.weight.cols()
    }

    /// Pre-activations `x·W + b`.
    pub fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::dim(format!(
                "projector expects {} input columns, got {}",
                self.d_in(),
                x.cols()
            )));
        }
        let mut z = Matrix::zeros(x.rows(), self.d_sub());
        gemm(x, false, &self.weight, false, &mut z, 1.0, 0.0);
        z.add_row_vector(&self.bias);
        Ok(z)
    }

    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        let slope = self.leaky_slope;
        Ok(self.pre_activation(x)?.map(|z| leaky_relu(z, slope)))
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.weight.sum_of_squares() + self.bias.iter().map(|v| v * v).sum::<f64>()
    }
}

#[inline]
pub fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `d_sub × C`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    pub fn d_sub(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn logits(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.d_sub() {
            return Err(Error::dim(format!(
                "classifier expects {} input columns, got {}",
                self.d_sub(),
                h.cols()
            )));
        }
        let mut out = Matrix::zeros(h.rows(), self.num_classes());
        gemm(h, false, &self.weight, false, &mut out, 1.0, 0.0);
        out.add_row_vector(&self.bias);
        Ok(out)
    }

    pub fn classify(&self, h: &Matrix) -> Result<Matrix> {
        let mut p = self.logits(h)?;
        softmax_rows(&mut p);
        Ok(p)
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.weight.sum_of_squares() + self.bias.iter().map(|v| v * v).sum::<f64>()
    }
}

/// In-place row softmax with per-row max subtraction.
pub fn softmax_rows(m: &mut Matrix) {
    let cols = m.cols();
    if cols == 0 {
        return;
    }
    for row in m.as_mut_slice().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub projector: ProjectorParams,
    pub classifier: ClassifierParams,
}

/// Weights `~ N(0, 1/fan_in)`, biases zero.
pub fn init_model(d_in: usize, d_sub: usize, num_classes: usize, rng: &mut RngStream) -> Result<Model> {
    if d_in == 0 || d_sub == 0 || num_classes == 0 {
        return Err(Error::param(format!(
            "model dimensions must be positive, got d_in={d_in} d_sub={d_sub} C={num_classes}"
        )));
    }
    let draw = |rows: usize, cols: usize, r: &mut RngStream| {
        let s = 1.0 / (rows as f64).sqrt();
        Matrix::from_raw(rows, cols, (0..rows * cols).map(|_| s * r.normal()).collect())
    };
    let mut rp = rng.fork_named("projector");
    let mut rc = rng.fork_named("classifier");
    Ok(Model {
        projector: ProjectorParams {
            weight: draw(d_in, d_sub, &mut rp),
            bias: vec![0.0; d_sub],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        },
        classifier: ClassifierParams {
            weight: draw(d_sub, num_classes, &mut rc),
            bias: vec![0.0; num_classes],
        },
    })
}

impl Model {
    pub fn new(projector: ProjectorParams, classifier: ClassifierParams) -> Result<Self> {
        let m = Self { projector, classifier };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.projector;
        let c = &self.classifier;
        if p.bias.len() != p.d_sub() || c.bias.len() != c.num_classes() {
            return Err(Error::dim("bias length disagrees with its weight matrix"));
        }
        if p.d_sub() != c.d_sub() {
            return Err(Error::dim(format!(
                "projector width {} vs classifier input {}",
                p.d_sub(),
                c.d_sub()
            )));
        }
        let finite = p.weight.all_finite()
            && c.weight.all_finite()
            && p.bias.iter().chain(&c.bias).all(|v| v.is_finite())
            && p.leaky_slope.is_finite();
        if !finite {
            return Err(Error::Numerical("model has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.projector.d_in()
    }

    pub fn d_sub(&self) -> usize {
        self.projector.d_sub()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        self.projector.project(x)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        self.classifier.classify(&self.project(x)?)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }

    /// Parameters in the fixed order `W, b, V, a`.
    pub fn param_slices(&self) -> [&[f64]; 4] {
        [
            self.projector.weight.as_slice(),
            &self.projector.bias,
            self.classifier.weight.as_slice(),
            &self.classifier.bias,
        ]
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.projector.weight.as_mut_slice(),
            &mut self.projector.bias,
            self.classifier.weight.as_mut_slice(),
            &mut self.classifier.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// Writes `#model d_in d_sub C slope`, then the rows of `W`, the `b` line,
/// the rows of `V` and the `a` line, comma-separated.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fn line(out: &mut String, vals: &[f64]) {
        for (j, v) in vals.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#model {} {} {} {:?}",
        model.d_in(),
        model.d_sub(),
        model.num_classes(),
        model.projector.leaky_slope
    );
    for row in model.projector.weight.row_iter() {
        line(&mut out, row);
    }
    line(&mut out, &model.projector.bias);
    for row in model.classifier.weight.row_iter() {
        line(&mut out, row);
    }
    line(&mut out, &model.classifier.bias);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::format(path, 1, "empty model file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "#model" {
        return Err(Error::format(path, 1, "expected `#model d_in d_sub C slope` header"));
    }
    let dims: Vec<usize> = fields[1..4]
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::format(path, 1, format!("bad dimension `{s}`")))
        })
        .collect::<Result<_>>()?;
    let slope: f64 = fields[4]
        .parse()
        .map_err(|_| Error::format(path, 1, "bad leaky slope"))?;
    let (d_in, d_sub, c) = (dims[0], dims[1], dims[2]);

    let mut read_rows = |count: usize, width: usize| -> Result<Vec<f64>> {
        let mut vals = Vec::with_capacity(count * width);
        for _ in 0..count {
            let (idx, l) = lines
                .next()
                .ok_or_else(|| Error::format(path, text.lines().count() + 1, "truncated model file"))?;
            let row: Vec<f64> = l
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, idx + 1, "unparseable value"))?;
            if row.len() != width {
                return Err(Error::format(
                    path,
                    idx + 1,
                    format!("expected {width} values, found {}", row.len()),
                ));
            }
            vals.extend(row);
        }
        Ok(vals)
    };
    let w = read_rows(d_in, d_sub)?;
    let b = read_rows(1, d_sub)?;
    let v = read_rows(d_sub, c)?;
    let a = read_rows(1, c)?;
    let model = Model::new(
        ProjectorParams {
            weight: Matrix::from_vec(d_in, d_sub, w)?,
            bias: b,
            leaky_slope: slope,
        },
        ClassifierParams {
            weight: Matrix::from_vec(d_sub, c, v)?,
            bias: a,
        },
    )?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_model(w: f64, b: f64) -> ProjectorParams {
        ProjectorParams {
            weight: Matrix::from_rows(&[[w]]).unwrap(),
            bias: vec![b],
            leaky_slope: 0.01,
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = init_model(5, 4, 3, &mut RngStream::new(1)).unwrap();
        let b = init_model(5, 4, 3, &mut RngStream::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.projector.weight.shape(), (5, 4));
        assert_eq!(a.classifier.weight.shape(), (4, 3));
        assert!(a.projector.bias.iter().chain(&a.classifier.bias).all(|&v| v == 0.0));
        assert!(init_model(0, 4, 3, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn projection_cases() {
        let p = scalar_model(1.0, 0.0);
        let x = Matrix::from_rows(&[[-2.0]]).unwrap();
        assert!((p.project(&x).unwrap()[(0, 0)] + 0.02).abs() < 1e-15);

        let id = ProjectorParams {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
            leaky_slope: 0.01,
        };
        let x = Matrix::from_rows(&[[1.0, 0.0, 2.5], [0.5, 3.0, 0.0]]).unwrap();
        assert_eq!(id.project(&x).unwrap(), x);

        let bias_only = ProjectorParams {
            weight: Matrix::zeros(2, 2),
            bias: vec![1.5, -4.0],
            leaky_slope: 0.01,
        };
        assert_eq!(bias_only.project(&Matrix::zeros(1, 2)).unwrap().row(0), &[1.5, -0.04]);
        assert!(id.project(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn softmax_cases() {
        let c = ClassifierParams {
            weight: Matrix::zeros(1, 2),
            bias: vec![0.0, 2f64.ln()],
        };
        let p = c.classify(&Matrix::zeros(1, 1)).unwrap();
        assert!((p[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[(0, 1)] - 2.0 / 3.0).abs() < 1e-15);

        let mut u = Matrix::from_rows(&[[7.0; 4]]).unwrap();
        softmax_rows(&mut u);
        assert!(u.row(0).iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let base = [0.3, -1.2, 2.0];
        let mut a = Matrix::from_rows(&[base]).unwrap();
        let mut b = Matrix::from_rows(&[base.map(|v| v + 1000.0)]).unwrap();
        softmax_rows(&mut a);
        softmax_rows(&mut b);
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        let m = Matrix::from_rows(&[[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]).unwrap();
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = init_model(6, 256, 4, &mut RngStream::new(3)).unwrap();
        m.projector.bias[3] = -1.0 / 3.0;
        let p = dir.path().join("m.txt");
        save_model(&m, &p).unwrap();
        let header = fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "#model 6 256 4 0.01");
        assert_eq!(load_model(&p).unwrap(), m);

        fs::write(&p, "#model 1 1 1 0.01\n1.0\n").unwrap();
        assert!(matches!(load_model(&p), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn softmax_rows_normalize(logits in proptest::collection::vec(-1e4f64..1e4, 1..12)) {
            let mut m = Matrix::from_vec(1, logits.len(), logits).unwrap();
            softmax_rows(&mut m);
            let s: f64 = m.row(0).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(m.row(0).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn projection_is_positively_homogeneous(seed in any::<u64>(), alpha in 0.01f64..100.0) {
            let mut r = RngStream::new(seed);
            let mut m = init_model(4, 3, 2, &mut r).unwrap();
            m.projector.bias = vec![0.0; 3];
            let x = Matrix::from_raw(5, 4, (0..20).map(|_| r.normal()).collect());
            let lhs = m.project(&x.scale(alpha)).unwrap();
            let rhs = m.project(&x).unwrap().scale(alpha);
            prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10 * alpha.max(1.0));
        }
    }
}
