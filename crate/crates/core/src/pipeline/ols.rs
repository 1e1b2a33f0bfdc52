//! Ordinary least squares from band values to density, the regression baseline.

use crate::error::{contract, Error, Result};

/// Intercept plus one coefficient per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl OlsFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Lower-triangular `L` with `A = L Lᵀ`, row-major `n × n`.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::Numeric(format!("normal equations are singular at column {i} (pivot {d:e})")));
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    x
}

/// Fits `y ≈ b₀ + Σ bⱼ xⱼ` by the ridge-regularized normal equations
/// `(XᵀX + εI) b = Xᵀy` on centred features, which leaves the intercept
/// unpenalized. A constant feature gets coefficient exactly 0.
pub fn fit_ols(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<OlsFit> {
    let Some(first) = rows.first() else {
        return contract("OLS needs at least one sample");
    };
    let p = first.len();
    if rows.len() != y.len() {
        return Err(Error::Shape(format!("{} feature rows for {} targets", rows.len(), y.len())));
    }
    if rows.len() < p + 1 {
        return contract(format!("OLS with {p} features needs at least {} samples, got {}", p + 1, rows.len()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != p) {
        return Err(Error::Shape(format!("feature rows have {} and {p} entries", r.len())));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let constant: Vec<bool> = (0..p).map(|j| rows.iter().all(|r| r[j] == first[j])).collect();
    let centred = |r: &[f64], j: usize| if constant[j] { 0.0 } else { r[j] - mean[j] };
    let y_mean = y.iter().sum::<f64>() / n;
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (r, &t) in rows.iter().zip(y) {
        let xc: Vec<f64> = (0..p).map(|j| centred(r, j)).collect();
        for i in 0..p {
            rhs[i] += xc[i] * (t - y_mean);
            for j in 0..p {
                gram[i * p + j] += xc[i] * xc[j];
            }
        }
    }
    for i in 0..p {
        gram[i * p + i] += ridge;
    }
    let coef = if p == 0 { Vec::new() } else { cholesky_solve(&cholesky(&gram, p)?, p, &rhs) };
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("OLS coefficients are not finite".into()));
    }
    let intercept = y_mean - coef.iter().zip(&mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(OlsFit { intercept, coef })
}
