use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least squares with an unpenalized intercept.
///
/// Columns and target are centered, then `[X_c; √λ I] w = [y_c; 0]` is solved
/// by QR, which avoids squaring the condition number of the normal equations.
pub(crate) fn fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let (n, d) = x.shape();
    let col_mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let extra = if lambda > 0.0 { d } else { 0 };
    let mut a = DMatrix::zeros(n + extra, d);
    let mut b = DVector::zeros(n + extra);
    for i in 0..n {
        for j in 0..d {
            a[(i, j)] = x[(i, j)] - col_mean[j];
        }
        b[i] = y[i] - y_mean;
    }
    let s = lambda.sqrt();
    for j in 0..extra {
        a[(n + j, j)] = s;
    }
    if n + extra < d {
        return Err(Error::Singular);
    }

    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..d).map(|j| r[(j, j)].abs()).collect();
    let scale = diag.iter().fold(0.0f64, |m, v| m.max(*v));
    if scale == 0.0 || diag.iter().any(|v| *v <= 1e-10 * scale) {
        return Err(Error::Singular);
    }
    let qtb = qr.q().transpose() * b;
    let w = r.solve_upper_triangular(&qtb).ok_or(Error::Singular)?;
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&col_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok((intercept, weights))
}
