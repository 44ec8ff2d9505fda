//! Plug-in least squares from quantized moments, with estimating-equation
//! standard errors, confidence intervals, and the full-precision OLS
//! baseline.
//!
//! The point estimate solves `SigmaHat beta = SigmaXyHat`. Its sampling
//! covariance is estimated by the sandwich
//! `SigmaHat^{-1} Vhat SigmaHat^{-1} / n`, where `Vhat` is the covariance of
//! the per-sample estimating-equation terms
//! `r_i = Xt_i Yt_i - (Xt_i Xt_i^T + Delta_i) beta`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, spd_inverse, sym_eigen, SymEigen};
use crate::moments::{estimate_moments, MomentEstimates};
use crate::quantize::QuantizedDataset;
use crate::scalar::{s, Scalar};
use crate::stats::{normal_quantile, Kahan};

/// Minimum eigenvalue below which the moment matrix is treated as not
/// positive definite. Failures signal that `n` is too small for `d`.
pub const PD_TOLERANCE: f64 = 1e-8;

/// Result of a quantized-data regression fit.
#[derive(Debug, Clone, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct FitResult<T> {
    /// Point estimate.
    #[serde(rename = "beta")]
    pub beta_hat: Vec<T>,
    /// Per-coordinate standard errors, `sqrt(diag(covHat))`.
    #[serde(rename = "se")]
    pub std_errors: Vec<T>,
    /// Per-coordinate confidence intervals at `level`.
    pub ci: Vec<(T, T)>,
    pub level: T,
    pub n: usize,
    pub d: usize,
    /// Smallest eigenvalue of the moment matrix that was inverted.
    #[serde(rename = "minEig")]
    pub min_eig_sigma_hat: T,
    /// Estimated covariance of `beta_hat` (the full sandwich, already
    /// divided by `n`).
    #[serde(skip)]
    pub cov_hat: Array2<T>,
}

/// Ordinary least squares on full-precision data.
#[derive(Debug, Clone, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct OlsResult<T> {
    pub beta_hat: Vec<T>,
    /// `sigma2_hat (X^T X)^{-1}`.
    #[serde(skip)]
    pub cov_hat: Array2<T>,
    /// Residual variance estimate `RSS / (n - d)`.
    pub sigma2_hat: T,
    /// Residual sum of squares.
    pub rss: T,
    pub n: usize,
    pub d: usize,
}

/// Solve the estimating equation `SigmaHat beta = SigmaXyHat`.
///
/// Returns the solution together with the spectral decomposition of
/// `SigmaHat` for reuse. Errors with [`Error::NotPositiveDefinite`] when the
/// smallest eigenvalue is at or below [`PD_TOLERANCE`].
pub fn solve_normal_equations<T: Scalar>(
    moments: &MomentEstimates<T>,
) -> Result<(Array1<T>, SymEigen<T>)> {
    let eig = sym_eigen(&moments.sigma_hat);
    let min_eig = eig.min_value();
    if min_eig <= s(PD_TOLERANCE) {
        return Err(Error::NotPositiveDefinite {
            min_eig: min_eig.to_f64_lossy(),
        });
    }
    let mut beta = eig.solve(&moments.sigma_xy_hat, s(PD_TOLERANCE))?;
    // one step of iterative refinement keeps the residual at roundoff level
    let residual = moments.sigma_hat.dot(&beta) - &moments.sigma_xy_hat;
    let correction = eig.solve(&residual, s(PD_TOLERANCE))?;
    beta -= &correction;
    Ok((beta, eig))
}

/// Covariance `Vhat` of the per-sample estimating-equation terms
/// `r_i = Xt_i Yt_i - (Xt_i Xt_i^T + Delta_i) beta`, centered at the mean
/// residual.
pub fn residual_second_moment<T: Scalar>(
    ds: &QuantizedDataset<T>,
    beta: ArrayView1<T>,
) -> Result<Array2<T>> {
    let n = ds.n();
    let d = ds.d();
    if beta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: beta.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    for &b in beta.iter() {
        if !b.is_finite() {
            return Err(Error::NonFinite {
                value: b.to_f64_lossy(),
            });
        }
    }
    let r2 = ds.ranges().xsq.upper();

    let residual_into = |i: usize, out: &mut [T]| {
        let y = ds.y_value(i);
        let mut xb = T::zero();
        for k in 0..d {
            xb += ds.x_value(i, k) * beta[k];
        }
        for (j, slot) in out.iter_mut().enumerate() {
            let delta = ds.xsq_value(i, j) - r2;
            *slot = ds.x_value(i, j) * (y - xb) - delta * beta[j];
        }
    };

    let mut scratch = vec![T::zero(); d];
    let mut mean_acc: Vec<Kahan<T>> = vec![Kahan::new(); d];
    for i in 0..n {
        residual_into(i, &mut scratch);
        for j in 0..d {
            mean_acc[j].add(scratch[j]);
        }
    }
    let inv_n = T::one() / s::<T>(n as f64);
    let mean: Vec<T> = mean_acc.iter().map(|k| k.value() * inv_n).collect();

    let mut cov_acc: Vec<Kahan<T>> = vec![Kahan::new(); d * (d + 1) / 2];
    for i in 0..n {
        residual_into(i, &mut scratch);
        let mut idx = 0;
        for j in 0..d {
            let cj = scratch[j] - mean[j];
            for k in j..d {
                cov_acc[idx].add(cj * (scratch[k] - mean[k]));
                idx += 1;
            }
        }
    }
    let mut vhat = Array2::zeros((d, d));
    let mut idx = 0;
    for j in 0..d {
        for k in j..d {
            let v = cov_acc[idx].value() * inv_n;
            vhat[(j, k)] = v;
            vhat[(k, j)] = v;
            idx += 1;
        }
    }
    Ok(vhat)
}

fn sandwich_from_parts<T: Scalar>(
    eig: &SymEigen<T>,
    vhat: &Array2<T>,
    n: usize,
) -> Result<Array2<T>> {
    let d = vhat.nrows();
    // SigmaHat^{-1} Vhat SigmaHat^{-1} / n, column solves through the
    // spectral factorization
    let mut w = Array2::zeros((d, d));
    for j in 0..d {
        let col = eig.solve(&vhat.column(j).to_owned(), s(PD_TOLERANCE))?;
        for i in 0..d {
            w[(i, j)] = col[i];
        }
    }
    let mut cov = Array2::zeros((d, d));
    for i in 0..d {
        let row = eig.solve(&w.row(i).to_owned(), s(PD_TOLERANCE))?;
        for j in 0..d {
            cov[(i, j)] = row[j];
        }
    }
    let inv_n = T::one() / s::<T>(n as f64);
    for i in 0..d {
        for j in 0..i {
            let m = (cov[(i, j)] + cov[(j, i)]) / s::<T>(2.0) * inv_n;
            cov[(i, j)] = m;
            cov[(j, i)] = m;
        }
        cov[(i, i)] = cov[(i, i)] * inv_n;
    }
    Ok(cov)
}

/// Sandwich covariance estimate for a given point estimate:
/// `SigmaHat^{-1} Vhat SigmaHat^{-1} / n`.
pub fn sandwich_covariance<T: Scalar>(
    ds: &QuantizedDataset<T>,
    beta: ArrayView1<T>,
) -> Result<Array2<T>> {
    let moments = estimate_moments(ds)?;
    let eig = sym_eigen(&moments.sigma_hat);
    if eig.min_value() <= s(PD_TOLERANCE) {
        return Err(Error::NotPositiveDefinite {
            min_eig: eig.min_value().to_f64_lossy(),
        });
    }
    let vhat = residual_second_moment(ds, beta)?;
    sandwich_from_parts(&eig, &vhat, ds.n())
}

/// Fit the plug-in estimator on a quantized dataset and report standard
/// errors and confidence intervals at the given level.
pub fn fit_quantized<T: Scalar>(ds: &QuantizedDataset<T>, level: T) -> Result<FitResult<T>> {
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    let moments = estimate_moments(ds)?;
    let (beta, eig) = solve_normal_equations(&moments)?;
    let vhat = residual_second_moment(ds, beta.view())?;
    let cov = sandwich_from_parts(&eig, &vhat, ds.n())?;
    let d = ds.d();
    let z = normal_quantile((T::one() + level) / s(2.0));
    let mut se = Vec::with_capacity(d);
    let mut ci = Vec::with_capacity(d);
    for j in 0..d {
        let sj = cov[(j, j)].max(T::zero()).sqrt();
        se.push(sj);
        ci.push((beta[j] - z * sj, beta[j] + z * sj));
    }
    Ok(FitResult {
        beta_hat: beta.to_vec(),
        std_errors: se,
        ci,
        level,
        n: ds.n(),
        d,
        min_eig_sigma_hat: eig.min_value(),
        cov_hat: cov,
    })
}

/// Ordinary least squares with covariance `sigma2_hat (X^T X)^{-1}`.
pub fn fit_ols<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>) -> Result<OlsResult<T>> {
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < d || d == 0 {
        return Err(Error::SingularDesign);
    }
    let xtx = x.t().dot(&x);
    let xty = x.t().dot(&y);
    let l = cholesky(&xtx).map_err(|_| Error::SingularDesign)?;
    let beta = cholesky_solve(&l, &xty);

    let fitted = x.dot(&beta);
    let mut rss = Kahan::new();
    for i in 0..n {
        let e = y[i] - fitted[i];
        rss.add(e * e);
    }
    let rss = rss.value();
    let dof = if n > d { n - d } else { 1 };
    let sigma2 = rss / s(dof as f64);
    let mut cov = spd_inverse(&xtx).map_err(|_| Error::SingularDesign)?;
    cov.mapv_inplace(|v| v * sigma2);
    Ok(OlsResult {
        beta_hat: beta.to_vec(),
        cov_hat: cov,
        sigma2_hat: sigma2,
        rss,
        n,
        d,
    })
}

/// MSE ratio of the quantized-data estimator to the full-precision baseline.
pub fn relative_efficiency<T: Scalar>(quantized_mse: T, ols_mse: T) -> Result<T> {
    if !(ols_mse > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "baseline MSE must be positive, got {ols_mse}"
        )));
    }
    Ok(quantized_mse / ols_mse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{ClampMode, ResolvedRanges};
    use crate::rng::StreamKey;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identity_moments_return_rhs() {
        let ranges = ResolvedRanges::from_rl(1.0, 1.0).unwrap();
        let m = MomentEstimates::from_parts(
            Array2::eye(3),
            array![0.3, -1.2, 0.8],
            100,
            ranges,
        )
        .unwrap();
        let (beta, _) = solve_normal_equations(&m).unwrap();
        assert_abs_diff_eq!(beta[0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(beta[1], -1.2, epsilon = 1e-14);
        assert_abs_diff_eq!(beta[2], 0.8, epsilon = 1e-14);
    }

    #[test]
    fn indefinite_moments_are_rejected() {
        let ranges = ResolvedRanges::from_rl(1.0, 1.0).unwrap();
        let m = MomentEstimates::from_parts(
            array![[1.0, 2.0], [2.0, 1.0]],
            array![1.0, 1.0],
            50,
            ranges,
        )
        .unwrap();
        assert!(matches!(
            solve_normal_equations(&m),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn estimating_equation_residual_is_tiny() {
        let n = 2000;
        let d = 4;
        let mut rng = StreamKey::new(17).rng();
        let x = Array2::from_shape_fn((n, d), |_| -1.0 + 2.0 * rng.gen::<f64>());
        let beta_star = array![0.5, -0.25, 0.0, 1.0];
        let y = Array1::from_shape_fn(n, |i| {
            let mut acc = 0.0;
            for j in 0..d {
                acc += x[(i, j)] * beta_star[j];
            }
            acc + 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let ranges = ResolvedRanges::from_rl(1.0, 4.0).unwrap();
        let ds =
            QuantizedDataset::from_raw(x.view(), y.view(), ranges, 5, ClampMode::Clamp).unwrap();
        let moments = estimate_moments(&ds).unwrap();
        let (beta, _) = solve_normal_equations(&moments).unwrap();
        let resid = moments.sigma_hat.dot(&beta) - &moments.sigma_xy_hat;
        let scale = 1.0
            + moments
                .sigma_xy_hat
                .iter()
                .fold(0.0f64, |a, &v| a.max(v.abs()));
        let inf: f64 = resid.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(inf < 1e-10 * scale, "residual {inf}");
    }

    #[test]
    fn identical_residuals_give_zero_covariance() {
        // with beta = 0 and constant bits, every estimating-equation term is
        // identical, so the centered covariance vanishes
        let x = Array2::from_elem((20, 1), 1.0);
        let y = Array1::from_elem(20, 2.0);
        let ranges = ResolvedRanges::from_rl(1.0, 2.0).unwrap();
        let ds =
            QuantizedDataset::from_raw(x.view(), y.view(), ranges, 0, ClampMode::Strict).unwrap();
        let vhat = residual_second_moment(&ds, array![0.0].view()).unwrap();
        assert_abs_diff_eq!(vhat[(0, 0)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn ols_orthonormal_design_recovers_projection() {
        let x = Array2::eye(4);
        let y = array![1.0, -2.0, 0.5, 3.0];
        let fit = fit_ols(x.view(), y.view()).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(fit.beta_hat[j], y[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn ols_noiseless_recovery_and_orthogonal_residuals() {
        let n = 300;
        let d = 5;
        let mut rng = StreamKey::new(23).rng();
        let x = Array2::from_shape_fn((n, d), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let beta_star = array![1.0, -0.5, 0.25, 0.0, 2.0];
        let y = x.dot(&beta_star);
        let fit = fit_ols(x.view(), y.view()).unwrap();
        for j in 0..d {
            assert_abs_diff_eq!(fit.beta_hat[j], beta_star[j], epsilon = 1e-10);
        }

        // noisy case: residuals orthogonal to the columns of X
        let y2 = Array1::from_shape_fn(n, |i| {
            y[i] + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let fit2 = fit_ols(x.view(), y2.view()).unwrap();
        let beta2 = Array1::from_vec(fit2.beta_hat.clone());
        let resid = &y2 - &x.dot(&beta2);
        for j in 0..d {
            let dot: f64 = x.column(j).dot(&resid);
            let scale: f64 = x.column(j).dot(&x.column(j)).sqrt() * resid.dot(&resid).sqrt();
            assert!(dot.abs() / scale < 1e-8, "column {j} correlation {dot}");
        }
    }

    #[test]
    fn singular_design_is_rejected() {
        let mut x = Array2::zeros((10, 2));
        for i in 0..10 {
            x[(i, 0)] = i as f64;
            x[(i, 1)] = 2.0 * i as f64;
        }
        let y = Array1::zeros(10);
        assert!(matches!(
            fit_ols(x.view(), y.view()),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn relative_efficiency_basics() {
        assert_eq!(relative_efficiency(2.0, 2.0).unwrap(), 1.0);
        assert!(relative_efficiency(1.0, 0.0).is_err());
    }

    #[test]
    fn scaling_y_and_l_by_two_scales_beta_exactly() {
        // probabilities are scale invariant, so the bit draws coincide and
        // the estimate doubles bit for bit
        let n = 500;
        let d = 3;
        let mut rng = StreamKey::new(44).rng();
        let x = Array2::from_shape_fn((n, d), |_| -1.0 + 2.0 * rng.gen::<f64>());
        let y = Array1::from_shape_fn(n, |i| x[(i, 0)] - 0.5 * x[(i, 2)] + 0.1 * rng.gen::<f64>());
        let y2 = y.mapv(|v| 2.0 * v);

        let ranges1 = ResolvedRanges::from_rl(1.0, 3.0).unwrap();
        let ranges2 = ResolvedRanges::from_rl(1.0, 6.0).unwrap();
        let ds1 =
            QuantizedDataset::from_raw(x.view(), y.view(), ranges1, 99, ClampMode::Clamp).unwrap();
        let ds2 =
            QuantizedDataset::from_raw(x.view(), y2.view(), ranges2, 99, ClampMode::Clamp).unwrap();
        let m1 = estimate_moments(&ds1).unwrap();
        let m2 = estimate_moments(&ds2).unwrap();
        let (b1, _) = solve_normal_equations(&m1).unwrap();
        let (b2, _) = solve_normal_equations(&m2).unwrap();
        for j in 0..d {
            assert_eq!(2.0 * b1[j], b2[j], "coordinate {j}");
        }
    }

    #[test]
    fn fit_reports_level_and_interval_shape() {
        let n = 4000;
        let mut rng = StreamKey::new(3).rng();
        let x = Array2::from_shape_fn((n, 2), |_| -1.0 + 2.0 * rng.gen::<f64>());
        let y = Array1::from_shape_fn(n, |i| {
            x[(i, 0)] * 0.8
                + 0.4 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let ranges = ResolvedRanges::from_rl(1.0, 3.5).unwrap();
        let ds =
            QuantizedDataset::from_raw(x.view(), y.view(), ranges, 1, ClampMode::Clamp).unwrap();
        let fit = fit_quantized(&ds, 0.95).unwrap();
        for j in 0..2 {
            let (lo, hi) = fit.ci[j];
            assert!(lo < fit.beta_hat[j] && fit.beta_hat[j] < hi);
            let z = 1.959963984540054;
            assert_abs_diff_eq!(hi - fit.beta_hat[j], z * fit.std_errors[j], epsilon = 1e-10);
        }
        assert!(fit.min_eig_sigma_hat > 0.0);
    }
}
