use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionModel {
    /// Ordinary least squares on the 0/1 response (linear probability model).
    #[default]
    Linear,
    /// Logistic regression fitted by IRLS; R² is McFadden's pseudo-R².
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionStep {
    pub variable: usize,
    pub r2: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub model: RegressionModel,
    /// Column indices in entry order.
    pub selected: Vec<usize>,
    pub names: Vec<String>,
    /// Coefficients on standardised columns, aligned with `selected`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
    /// Full-model R² minus R² without that variable, aligned with `selected`.
    pub delta_r2: Vec<f64>,
    pub steps: Vec<RegressionStep>,
}

/// Least-squares coefficients of `y` on the columns of `x` (no implicit
/// intercept), via Householder QR.
pub fn ols(x: &Mat, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::geometry("design and response lengths differ"));
    }
    if n < p {
        return Err(Error::Domain("more columns than observations".into()));
    }
    let a = DMatrix::from_row_slice(n, p, x.data());
    let b = DVector::from_column_slice(y);
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    for i in 0..p {
        if r[(i, i)].abs() < 1e-12 {
            return Err(Error::Domain("design matrix is rank deficient".into()));
        }
    }
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Domain("design matrix is rank deficient".into()))?;
    Ok(sol.iter().copied().collect())
}

fn standardise(x: &Mat) -> (Mat, Vec<bool>) {
    let (n, p) = x.shape();
    let mut out = x.clone();
    let mut usable = vec![true; p];
    for j in 0..p {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        let sd = ((0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd < 1e-12 {
            usable[j] = false;
        }
        for i in 0..n {
            out.set(i, j, if usable[j] { (x.get(i, j) - mean) / sd } else { 0.0 });
        }
    }
    (out, usable)
}

fn design(z: &Mat, cols: &[usize]) -> Mat {
    let n = z.rows();
    let mut d = Mat::zeros(n, cols.len() + 1);
    for i in 0..n {
        d.set(i, 0, 1.0);
        for (k, &j) in cols.iter().enumerate() {
            d.set(i, k + 1, z.get(i, j));
        }
    }
    d
}

struct Fit {
    coef: Vec<f64>,
    /// RSS for linear fits, deviance for logistic fits.
    loss: f64,
}

fn fit_linear(z: &Mat, y: &[f64], cols: &[usize]) -> Result<Fit> {
    let d = design(z, cols);
    let coef = ols(&d, y)?;
    let loss = (0..y.len())
        .map(|i| {
            let pred: f64 = d.row(i).iter().zip(&coef).map(|(a, b)| a * b).sum();
            (y[i] - pred).powi(2)
        })
        .sum();
    Ok(Fit { coef, loss })
}

fn fit_logistic(z: &Mat, y: &[f64], cols: &[usize]) -> Result<Fit> {
    let d = design(z, cols);
    let (n, p) = d.shape();
    let mut beta = vec![0.0; p];
    let dev = |beta: &[f64]| -> f64 {
        -2.0 * (0..n)
            .map(|i| {
                let eta: f64 = d.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
                let mu = (1.0 / (1.0 + (-eta).exp())).clamp(1e-12, 1.0 - 1e-12);
                y[i] * mu.ln() + (1.0 - y[i]) * (1.0 - mu).ln()
            })
            .sum::<f64>()
    };
    let mut last = dev(&beta);
    for _ in 0..100 {
        let mut w = Mat::zeros(n, p);
        let mut target = vec![0.0; n];
        for i in 0..n {
            let eta: f64 = d.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = (1.0 / (1.0 + (-eta).exp())).clamp(1e-9, 1.0 - 1e-9);
            let wi = (mu * (1.0 - mu)).sqrt();
            for j in 0..p {
                w.set(i, j, d.get(i, j) * wi);
            }
            target[i] = wi * (eta + (y[i] - mu) / (mu * (1.0 - mu)));
        }
        beta = ols(&w, &target)?;
        let cur = dev(&beta);
        if (last - cur).abs() < 1e-10 * (1.0 + cur.abs()) {
            last = cur;
            break;
        }
        last = cur;
    }
    Ok(Fit { coef: beta, loss: last })
}

/// Forward stepwise selection: at each step, among candidates that are not
/// collinear with the current model, the one with the largest R² gain enters
/// if its entry test (partial F for linear, likelihood ratio for logistic)
/// has p < `entry_p`.
pub fn stepwise_regression(
    x: &Mat,
    y: &[f64],
    names: &[String],
    entry_p: f64,
    model: RegressionModel,
) -> Result<RegressionResult> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::geometry("design and response lengths differ"));
    }
    if n < 3 {
        return Err(Error::EmptyInput("need at least three observations".into()));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("regression inputs must be finite".into()));
    }
    let (z, usable) = standardise(x);
    let fit = |cols: &[usize]| match model {
        RegressionModel::Linear => fit_linear(&z, y, cols),
        RegressionModel::Logistic => fit_logistic(&z, y, cols),
    };
    let null = fit(&[])?;
    let base = null.loss;
    let r2_of = |loss: f64| if base <= 0.0 { 0.0 } else { (1.0 - loss / base).clamp(0.0, 1.0) };

    let mut selected: Vec<usize> = Vec::new();
    let mut current = null;
    let mut steps = Vec::new();
    loop {
        let k = selected.len() + 1;
        if n <= k + 1 {
            break;
        }
        let mut best: Option<(usize, Fit)> = None;
        for j in (0..p).filter(|j| usable[*j] && !selected.contains(j)) {
            let mut cols = selected.clone();
            cols.push(j);
            let Ok(f) = fit(&cols) else { continue };
            if best.as_ref().is_none_or(|(_, b)| f.loss < b.loss) {
                best = Some((j, f));
            }
        }
        let Some((j, f)) = best else { break };
        let tol = 1e-10 * base.max(f64::MIN_POSITIVE);
        let gain = current.loss - f.loss;
        if current.loss <= tol || gain <= tol {
            break;
        }
        let p_value = match model {
            RegressionModel::Linear => {
                let df2 = (n - k - 1) as f64;
                if f.loss <= tol {
                    0.0
                } else {
                    let stat = gain / (f.loss / df2);
                    let dist = FisherSnedecor::new(1.0, df2).map_err(|e| Error::Numeric(e.to_string()))?;
                    if stat.is_finite() && stat > 0.0 { 1.0 - dist.cdf(stat) } else { 1.0 }
                }
            }
            RegressionModel::Logistic => {
                let dist = ChiSquared::new(1.0).map_err(|e| Error::Numeric(e.to_string()))?;
                1.0 - dist.cdf(gain)
            }
        };
        if !(p_value < entry_p) {
            break;
        }
        selected.push(j);
        steps.push(RegressionStep {
            variable: j,
            r2: r2_of(f.loss),
            p_value,
        });
        current = f;
    }
    let r2 = r2_of(current.loss);
    let mut delta_r2 = Vec::with_capacity(selected.len());
    for i in 0..selected.len() {
        let rest: Vec<usize> = selected.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, &c)| c).collect();
        let reduced = fit(&rest)?;
        delta_r2.push((r2 - r2_of(reduced.loss)).max(0.0));
    }
    Ok(RegressionResult {
        model,
        names: selected.iter().map(|&j| names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))).collect(),
        coefficients: current.coef[1..].to_vec(),
        intercept: current.coef[0],
        selected,
        r2,
        delta_r2,
        steps,
    })
}
