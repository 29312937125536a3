use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::panel::LaggedRow;

/// VAR(ℓ): `Y_t = A + Σ_s B_s Y_{t-s} + ε_t`, one OLS equation per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub columns: Vec<String>,
    pub lag: usize,
    /// Column whose equation `predict` evaluates.
    pub target: usize,
    pub intercepts: Vec<f64>,
    /// `coefficients[s][m][n]`: effect of column n at lag s+1 on column m.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub ridge: Option<f64>,
}

impl VarModel {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Predicts every column from `[Y_{t-1}; ...; Y_{t-ℓ}]`.
    pub fn predict_all(&self, inputs: &[f64]) -> Result<Vec<f64>, ForecastError> {
        let n = self.dim();
        if inputs.len() != n * self.lag {
            return Err(ForecastError::DimensionMismatch {
                expected: n * self.lag,
                got: inputs.len(),
            });
        }
        Ok((0..n).map(|m| self.equation(m, inputs)).collect())
    }

    /// Prediction of the target column.
    pub fn predict(&self, inputs: &[f64]) -> Result<f64, ForecastError> {
        let n = self.dim();
        if inputs.len() != n * self.lag {
            return Err(ForecastError::DimensionMismatch {
                expected: n * self.lag,
                got: inputs.len(),
            });
        }
        Ok(self.equation(self.target, inputs))
    }

    fn equation(&self, m: usize, inputs: &[f64]) -> f64 {
        let n = self.dim();
        let mut y = self.intercepts[m];
        for (s, block) in self.coefficients.iter().enumerate() {
            for (b, x) in block[m].iter().zip(&inputs[s * n..(s + 1) * n]) {
                y += b * x;
            }
        }
        y
    }
}

/// Cholesky factor of a symmetric matrix; `Err(min_pivot)` when it is not
/// numerically positive definite.
fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, f64> {
    let k = a.len();
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![vec![0.0; k]; k];
    let mut min_pivot = f64::INFINITY;
    for j in 0..k {
        let mut d = a[j][j];
        for p in 0..j {
            d -= l[j][p] * l[j][p];
        }
        min_pivot = min_pivot.min(d);
        if !(d > tol) {
            return Err(min_pivot);
        }
        let d = d.sqrt();
        l[j][j] = d;
        for i in j + 1..k {
            let mut s = a[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            l[i][j] = s / d;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = l.len();
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i][p] * y[p];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s -= l[p][i] * x[p];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Fits all N equations by least squares on an intercept plus the ℓ·N lagged
/// regressors. The intercept is absorbed by centring, so a ridge fallback
/// never shrinks it.
pub fn fit_var(rows: &[LaggedRow], columns: &[String], lag: usize, target: usize) -> Result<VarModel, ForecastError> {
    let n = columns.len();
    let k = n * lag;
    if lag == 0 || n == 0 || target >= n {
        return Err(ForecastError::InvalidConfig(format!(
            "lag {lag}, {n} columns, target {target}"
        )));
    }
    if rows.len() <= k + 1 {
        return Err(ForecastError::TooFewRows {
            needed: k + 1,
            got: rows.len(),
        });
    }
    for r in rows {
        if r.inputs.len() != k || r.current.len() != n {
            return Err(ForecastError::DimensionMismatch {
                expected: k,
                got: r.inputs.len(),
            });
        }
    }
    let t = rows.len() as f64;
    let mut xbar = vec![0.0; k];
    let mut ybar = vec![0.0; n];
    for r in rows {
        for (a, x) in xbar.iter_mut().zip(&r.inputs) {
            *a += x;
        }
        for (a, y) in ybar.iter_mut().zip(&r.current) {
            *a += y;
        }
    }
    xbar.iter_mut().for_each(|v| *v /= t);
    ybar.iter_mut().for_each(|v| *v /= t);

    let mut sxx = vec![vec![0.0; k]; k];
    let mut sxy = vec![vec![0.0; n]; k];
    let mut dx = vec![0.0; k];
    for r in rows {
        for (d, (x, m)) in dx.iter_mut().zip(r.inputs.iter().zip(&xbar)) {
            *d = x - m;
        }
        for i in 0..k {
            for j in 0..=i {
                sxx[i][j] += dx[i] * dx[j];
            }
            for (m, (y, yb)) in r.current.iter().zip(&ybar).enumerate() {
                sxy[i][m] += dx[i] * (y - yb);
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            sxx[j][i] = sxx[i][j];
        }
    }

    let trace: f64 = (0..k).map(|i| sxx[i][i]).sum();
    let (l, ridge) = match cholesky(&sxx) {
        Ok(l) => (l, None),
        Err(_) => {
            let lambda = if trace > 0.0 { 1e-8 * trace / k as f64 } else { 1e-8 };
            let mut reg = sxx.clone();
            for (i, row) in reg.iter_mut().enumerate() {
                row[i] += lambda;
            }
            match cholesky(&reg) {
                Ok(l) => (l, Some(lambda)),
                Err(min_pivot) => return Err(ForecastError::Singular { min_pivot, trace }),
            }
        }
    };

    let mut coefficients = vec![vec![vec![0.0; n]; n]; lag];
    let mut intercepts = ybar.clone();
    for m in 0..n {
        let rhs: Vec<f64> = (0..k).map(|i| sxy[i][m]).collect();
        let beta = cholesky_solve(&l, &rhs);
        for (i, b) in beta.iter().enumerate() {
            coefficients[i / n][m][i % n] = *b;
            intercepts[m] -= b * xbar[i];
        }
    }
    let model = VarModel {
        columns: columns.to_vec(),
        lag,
        target,
        intercepts,
        coefficients,
        ridge,
    };
    let finite = model.intercepts.iter().all(|v| v.is_finite())
        && model.coefficients.iter().flatten().flatten().all(|v| v.is_finite());
    if !finite {
        return Err(ForecastError::Singular { min_pivot: 0.0, trace });
    }
    Ok(model)
}
