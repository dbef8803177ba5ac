//! Symmetric eigendecomposition.
//!
//! Two independent routes are provided. [`sym_eig`] reduces the matrix to
//! tridiagonal form with Householder reflections and then runs implicit QL
//! with Wilkinson-style shifts; it is the production path. [`sym_eig_jacobi`]
//! is the classic cyclic Jacobi method. It is slower by a large constant
//! factor but has no shared code with the first route, so each one serves as
//! an oracle for the other.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct EigDecomposition {
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector paired with `values[j]`.
    pub vectors: Matrix,
}

const QL_MAX_ITER: usize = 60;
const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-12;

fn check_square(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::dim(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix (symmetrized first).
pub fn sym_eig(a: &Matrix) -> Result<EigDecomposition> {
    check_square(a)?;
    let n = a.rows();
    if n == 0 {
        return Ok(EigDecomposition {
            values: vec![],
            vectors: Matrix::zeros(0, 0),
        });
    }
    // `vt` holds eigenvectors as rows so every rotation touches contiguous memory.
    let mut vt = a.symmetrized();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut vt, &mut d, &mut e);
    ql_implicit(&mut vt, &mut d, &mut e)?;
    Ok(sorted(d, vt))
}

/// Householder reduction to tridiagonal form. On return `d` holds the
/// diagonal, `e[1..]` the sub-diagonal and the rows of `vt` the accumulated
/// orthogonal transform.
fn tridiagonalize(vt: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = vt[(j, n - 1)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for &dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = vt[(j, i - 1)];
                vt[(j, i)] = 0.0;
                vt[(i, j)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);
            for j in 0..i {
                f = d[j];
                vt[(i, j)] = f;
                let row_j = vt.row(j);
                let mut g = e[j] + row_j[j] * f;
                for k in (j + 1)..i {
                    g += row_j[k] * d[k];
                    e[k] += row_j[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                let row_j = vt.row_mut(j);
                for k in j..i {
                    row_j[k] -= f * e[k] + g * d[k];
                }
                d[j] = row_j[i - 1];
                row_j[i] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        vt[(i, n - 1)] = vt[(i, i)];
        vt[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            {
                let row = vt.row(i + 1);
                for k in 0..=i {
                    d[k] = row[k] / h;
                }
            }
            for j in 0..=i {
                let (head, tail) = vt.as_mut_slice().split_at_mut((i + 1) * n);
                let u = &tail[..n];
                let row_j = &mut head[j * n..(j + 1) * n];
                let g: f64 = u[..=i].iter().zip(&row_j[..=i]).map(|(a, b)| a * b).sum();
                for k in 0..=i {
                    row_j[k] -= g * d[k];
                }
            }
        }
        vt.row_mut(i + 1)[..=i].fill(0.0);
    }
    for j in 0..n {
        d[j] = vt[(j, n - 1)];
        vt[(j, n - 1)] = 0.0;
    }
    vt[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL iteration on the tridiagonal `(d, e)`, rotating the rows of `vt`.
fn ql_implicit(vt: &mut Matrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(Error::Numerical(format!(
                        "symmetric eigensolver did not converge on a {n}x{n} matrix"
                    )));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (head, tail) = vt.as_mut_slice().split_at_mut((i + 1) * n);
                    let vi = &mut head[i * n..];
                    let vi1 = &mut tail[..n];
                    for (a, b) in vi.iter_mut().zip(vi1.iter_mut()) {
                        let hb = *b;
                        *b = s * *a + c * hb;
                        *a = c * *a - s * hb;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Orders eigenpairs descending; `rows` holds eigenvectors as rows.
fn sorted(values: Vec<f64>, rows: Matrix) -> EigDecomposition {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for (k, &v) in rows.row(src).iter().enumerate() {
            vectors[(k, col)] = v;
        }
    }
    EigDecomposition {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors,
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps over all off-diagonal pairs until the off-diagonal Frobenius mass
/// drops below `1e-12 · ‖A‖_F`, or fails after 100 sweeps.
pub fn sym_eig_jacobi(a: &Matrix) -> Result<EigDecomposition> {
    check_square(a)?;
    let n = a.rows();
    let mut m = a.symmetrized();
    // Rows of `v` are the accumulated eigenvectors.
    let mut v = Matrix::identity(n);
    let total = m.frobenius_norm();

    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut converged = n <= 1 || total == 0.0;
    let mut sweep = 0;
    while !converged {
        if sweep == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge on a {n}x{n} matrix after {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rows p and q, then columns p and q (A ← Jᵀ A J).
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vp = v[(p, k)];
                    let vq = v[(q, k)];
                    v[(p, k)] = c * vp - s * vq;
                    v[(q, k)] = s * vp + c * vq;
                }
            }
        }
        converged = off(&m) <= JACOBI_TOL * total;
    }
    let values = (0..n).map(|i| m[(i, i)]).collect();
    Ok(sorted(values, v))
}

impl EigDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        let weights: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        for i in 0..n {
            for (x, w) in scaled.row_mut(i).iter_mut().zip(&weights) {
                *x *= w;
            }
        }
        scaled.matmul_t(&self.vectors).expect("eigenvector matrix is square")
    }

    pub fn reconstruct(&self) -> Matrix {
        self.recompose_with(|l| l)
    }
}

/// Projects a symmetric matrix onto the PSD cone by zeroing its negative
/// eigenvalues. The input is symmetrized first.
pub fn psd_project(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(a)?;
    Ok(eig.recompose_with(|l| l.max(0.0)).symmetrized())
}
