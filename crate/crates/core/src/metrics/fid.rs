use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Diagonal regulariser added to both covariances.
pub const FID_EPS: f64 = 1e-6;

fn moments(x: &Mat) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let mut mu = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mu.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in 0..n {
        let c: Vec<f64> = x.row(r).iter().zip(&mu).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n as f64 - 1.0) + if i == j { FID_EPS } else { 0.0 };
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets (rows are samples):
/// `‖μA−μB‖² + Tr(ΣA + ΣB − 2(ΣA ΣB)^{1/2})`, with the trace of the root taken
/// from the symmetric product `√ΣA ΣB √ΣA`.
pub fn fid(a: &Mat, b: &Mat) -> Result<f64> {
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::EmptyInput("FID needs at least two samples per set".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::geometry(format!("feature widths differ: {} vs {}", a.cols(), b.cols())));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Numeric("non-finite features".into()));
    }
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y).powi(2)).sum();
    let ra = sym_sqrt(&cov_a);
    let mut prod = &ra * &cov_b * &ra;
    prod = (&prod + prod.transpose()) * 0.5;
    let eig = SymmetricEigen::new(prod);
    let tr_root: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_root;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite covariance term".into()));
    }
    Ok(value.max(0.0))
}
