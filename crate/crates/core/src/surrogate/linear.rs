use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{check_dim, Error, Result};

/// `beta^T x + beta0` in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub beta: Vec<f64>,
    pub beta0: f64,
    /// Ridge weight used in scaled space; zero for plain least squares.
    #[serde(default)]
    pub ridge: f64,
}

impl LinearSurrogate {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.beta.len(), x.len())?;
        Ok(self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + self.beta0)
    }
}

/// In-place Cholesky factor of a symmetric matrix. Returns `None` on a
/// non-positive pivot.
fn cholesky(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
        for k in j + 1..n {
            a[j][k] = 0.0;
        }
    }
    Some(a)
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    y
}

/// Condition-number estimate from the Cholesky diagonal.
fn condition_estimate(l: &[Vec<f64>]) -> f64 {
    let diag = l.iter().enumerate().map(|(i, r)| r[i]);
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    (hi / lo).powi(2)
}

const MAX_CONDITION: f64 = 1e10;

/// Least squares on the training split via normal equations in scaled space,
/// with a small ridge term when the Gram matrix is near-singular.
pub fn fit_linear(data: &Dataset) -> Result<LinearSurrogate> {
    if data.train.len() < 2 {
        return Err(Error::Training(format!("linear fit needs at least 2 training rows, got {}", data.train.len())));
    }
    let n = data.dim();
    let m = n + 1;
    let mut gram = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for &i in &data.train {
        let mut z = data.scaled_x(i);
        z.push(1.0);
        let y = data.scaled_y(i);
        for a in 0..m {
            rhs[a] += z[a] * y;
            for b in 0..=a {
                gram[a][b] += z[a] * z[b];
            }
        }
    }
    for a in 0..m {
        for b in a + 1..m {
            gram[a][b] = gram[b][a];
        }
    }
    let plain = cholesky(gram.clone()).filter(|l| condition_estimate(l) <= MAX_CONDITION);
    let (l, ridge) = match plain {
        Some(l) => (l, 0.0),
        None => {
            let trace: f64 = (0..m).map(|a| gram[a][a]).sum();
            let lambda = 1e-8 * trace / m as f64;
            let mut g = gram;
            for (a, row) in g.iter_mut().enumerate() {
                row[a] += lambda;
            }
            let l = cholesky(g).ok_or_else(|| Error::Training("Gram matrix is singular even with ridge".into()))?;
            (l, lambda)
        }
    };
    let w = cholesky_solve(&l, &rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("linear fit produced non-finite coefficients".into()));
    }
    let (ym, ys) = (data.y_scaler.mean[0], data.y_scaler.scale[0]);
    let xs = &data.x_scaler;
    let beta: Vec<f64> = (0..n).map(|j| ys * w[j] / xs.scale[j]).collect();
    let shift: f64 = (0..n).map(|j| w[j] * xs.mean[j] / xs.scale[j]).sum();
    let beta0 = ym + ys * (w[n] - shift);
    Ok(LinearSurrogate { beta, beta0, ridge })
}
