//! One-dimensional Gaussian-design likelihood machinery.
//!
//! For `X ~ N(0,1)`, `Y = beta X + sigma eps`, and sign bits produced by the
//! dithered quantizers with ranges `[-R, R]` and `[-L, L]`, the collision
//! probability
//!
//! ```text
//! pi(beta) = 2 P(Xt > 0, Yt > 0)
//! ```
//!
//! is the sufficient statistic of the bit stream: each observation is a
//! Bernoulli(`pi`) collision indicator. Dithering makes the sign of the
//! quantizer output the sign of `value + Unif(-range, range)`, so
//!
//! ```text
//! pi(beta) = 2 E_{z1, z2} P(X > -z1, Y > -z2)
//! ```
//!
//! with `z1 ~ Unif(-R, R)`, `z2 ~ Unif(-L, L)`. The inner orthant
//! probability factorizes through the conditional law `Y | X = x`, leaving a
//! single normal-CDF integral; the outer dither average is a 2D adaptive
//! quadrature. No four-dimensional integration is ever performed.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_2d};
use crate::quantize::{ClampMode, QuantizedDataset, ResolvedRanges};
use crate::rng::StreamKey;
use crate::scalar::{s, Scalar};
use crate::stats::{normal_pdf, normal_sf};

/// Absolute tolerance for [`collision_probability`].
pub const PI_ABS_TOL: f64 = 1e-7;
/// Tighter tolerance used under finite differences.
const FISHER_PI_TOL: f64 = 1e-11;

/// Scalar regression model with quantizer ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarModel<T> {
    /// Regression coefficient the quantities are evaluated at.
    pub beta: T,
    /// Noise level, strictly positive.
    pub sigma: T,
    /// Predictor quantizer bound.
    pub r: T,
    /// Response quantizer bound.
    pub l: T,
}

impl<T: Scalar> ScalarModel<T> {
    pub fn new(beta: T, sigma: T, r: T, l: T) -> Result<Self> {
        if !beta.is_finite() || !(sigma > T::zero()) || !(r > T::zero()) || !(l > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "scalar model needs finite beta, positive sigma/r/l; got beta={beta}, sigma={sigma}, r={r}, l={l}"
            )));
        }
        Ok(ScalarModel { beta, sigma, r, l })
    }

    pub fn with_beta(&self, beta: T) -> Self {
        ScalarModel { beta, ..*self }
    }
}

/// Upper-orthant probability `P(X > a, Y > b)` for the model's joint law,
/// via the factorized single integral
/// `int_a^inf phi(x) (1 - Phi((b - beta x)/sigma)) dx`.
fn orthant<T: Scalar>(a: T, b: T, beta: T, sigma: T, abs_tol: T) -> Result<T> {
    let cut = s::<T>(9.0);
    let lo = a.max(-cut);
    if lo >= cut {
        return Ok(T::zero());
    }
    integrate(
        |x| Ok(normal_pdf(x) * normal_sf((b - beta * x) / sigma)),
        lo,
        cut,
        abs_tol,
        128,
    )
}

fn collision_probability_inner<T: Scalar>(model: &ScalarModel<T>, abs_tol: T) -> Result<T> {
    let r = model.r;
    let l = model.l;
    let area_half = s::<T>(2.0) * r * l; // 2 R L = (4 R L) / 2
    // split the error budget between the outer panels and the inner orthants
    let outer_tol = abs_tol * area_half / s(2.0);
    let inner_tol = abs_tol / s(8.0);
    let beta = model.beta;
    let sigma = model.sigma;
    let integral = integrate_2d(
        |z1, z2| orthant(-z1, -z2, beta, sigma, inner_tol),
        (-r, r),
        (-l, l),
        outer_tol,
        8192,
    )?;
    let pi = integral / (s::<T>(2.0) * r * l);
    Ok(pi.max(T::zero()).min(T::one()))
}

/// Collision probability `pi(beta)` to absolute tolerance [`PI_ABS_TOL`].
pub fn collision_probability<T: Scalar>(model: &ScalarModel<T>) -> Result<T> {
    collision_probability_inner(model, s(PI_ABS_TOL))
}

/// Collision indicators `c_i = 1{sign(Xt_i) = sign(Yt_i)}` from a quantized
/// dataset with a single predictor.
pub fn collision_indicators<T: Scalar>(ds: &QuantizedDataset<T>) -> Result<Vec<bool>> {
    if ds.d() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: ds.d(),
        });
    }
    Ok((0..ds.n()).map(|i| ds.x_bit(i, 0) == ds.y_bit(i)).collect())
}

fn log_likelihood_from_pi<T: Scalar>(collisions: usize, n: usize, pi: T) -> Result<T> {
    let eps = s::<T>(1e-12);
    if pi <= eps || pi >= T::one() - eps {
        return Err(Error::DegenerateProbability {
            pi: pi.to_f64_lossy(),
        });
    }
    let k = s::<T>(collisions as f64);
    let rest = s::<T>((n - collisions) as f64);
    Ok(k * pi.ln() + rest * (T::one() - pi).ln())
}

/// Log-likelihood of a collision-bit sequence at coefficient `beta`; the
/// other model parameters come from `model`. Empty input gives 0.
pub fn log_likelihood<T: Scalar>(bits: &[bool], beta: T, model: &ScalarModel<T>) -> Result<T> {
    if bits.is_empty() {
        return Ok(T::zero());
    }
    let pi = collision_probability(&model.with_beta(beta))?;
    let collisions = bits.iter().filter(|&&b| b).count();
    log_likelihood_from_pi(collisions, bits.len(), pi)
}

/// Maximum-likelihood estimate of the coefficient for known `sigma`, by
/// Brent maximization of the log-likelihood over `interval`.
///
/// Fails with [`Error::NoInteriorMaximum`] when the maximizer sticks to an
/// endpoint, which is what happens when all bits agree.
pub fn fit_mle<T: Scalar>(
    bits: &[bool],
    model: &ScalarModel<T>,
    interval: (T, T),
) -> Result<T> {
    let (lo, hi) = interval;
    if !(lo < hi) {
        return Err(Error::InvalidConfig("empty search interval".into()));
    }
    if bits.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let collisions = bits.iter().filter(|&&b| b).count();
    let n = bits.len();
    let pi_tol = s::<T>(1e-9);
    let eval = |beta: T| -> Result<T> {
        let pi = collision_probability_inner(&model.with_beta(beta), pi_tol)?;
        log_likelihood_from_pi(collisions, n, pi)
    };

    // Brent's method on the negated log-likelihood
    let tol = s::<T>(1e-6);
    let golden = s::<T>(0.381_966_011_250_105);
    let mut a = lo;
    let mut b = hi;
    let mut x = a + golden * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = -eval(x)?;
    let mut fw = fx;
    let mut fv = fx;
    let mut d = T::zero();
    let mut e = T::zero();
    for _ in 0..200 {
        let mid = (a + b) / s(2.0);
        let tol1 = tol * x.abs() + s::<T>(1e-12);
        let tol2 = s::<T>(2.0) * tol1;
        if (x - mid).abs() <= tol2 - (b - a) / s(2.0) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // parabolic step through (v, w, x)
            let r1 = (x - w) * (fx - fv);
            let q1 = (x - v) * (fx - fw);
            let mut p = (x - v) * q1 - (x - w) * r1;
            let mut q = s::<T>(2.0) * (q1 - r1);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (q * e_old / s(2.0)).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < mid { b - x } else { a - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let fu = -eval(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }

    let margin = s::<T>(10.0) * tol;
    if x - lo < margin || hi - x < margin {
        return Err(Error::NoInteriorMaximum {
            lower: lo.to_f64_lossy(),
            upper: hi.to_f64_lossy(),
        });
    }
    Ok(x)
}

/// Collision probability, its derivative in `beta`, and the per-sample
/// Fisher information `piDot^2 (1/pi + 1/(1 - pi))`.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct FisherInfo<T> {
    pub pi: T,
    pub pi_dot: T,
    pub info: T,
}

/// Richardson-extrapolated central difference of `pi` at the model's beta.
fn pi_derivative<T: Scalar>(model: &ScalarModel<T>, h: T, pi_tol: T) -> Result<T> {
    let at = |beta: T| collision_probability_inner(&model.with_beta(beta), pi_tol);
    let d_h = (at(model.beta + h)? - at(model.beta - h)?) / (s::<T>(2.0) * h);
    let half = h / s(2.0);
    let d_half = (at(model.beta + half)? - at(model.beta - half)?) / (s::<T>(2.0) * half);
    Ok((s::<T>(4.0) * d_half - d_h) / s(3.0))
}

/// Fisher information of one collision bit at the model's beta.
pub fn fisher_information<T: Scalar>(model: &ScalarModel<T>) -> Result<FisherInfo<T>> {
    let pi_tol = s::<T>(FISHER_PI_TOL);
    let pi = collision_probability_inner(model, pi_tol)?;
    let eps = s::<T>(1e-9);
    if pi <= eps || pi >= T::one() - eps {
        return Err(Error::DegenerateProbability {
            pi: pi.to_f64_lossy(),
        });
    }
    let h = s::<T>(1e-4) * T::one().max(model.beta.abs());
    let pi_dot = pi_derivative(model, h, pi_tol)?;
    let info = pi_dot * pi_dot * (T::one() / pi + T::one() / (T::one() - pi));
    Ok(FisherInfo { pi, pi_dot, info })
}

/// Simulate quantized sign pairs from the model and return the empirical
/// collision frequency; the Monte Carlo oracle for the quadrature.
pub fn collision_frequency_mc<T: Scalar>(
    model: &ScalarModel<T>,
    n: usize,
    seed: u64,
) -> Result<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let ranges = ResolvedRanges::from_rl(model.r, model.l)?;
    let mut rng = StreamKey::new(seed).rng();
    let mut x = Array2::zeros((n, 1));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let xi: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let eps: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        x[(i, 0)] = s::<T>(xi);
        y[i] = model.beta * s::<T>(xi) + model.sigma * s::<T>(eps);
    }
    let ds = QuantizedDataset::from_raw(x.view(), y.view(), ranges, seed, ClampMode::Clamp)?;
    let bits = collision_indicators(&ds)?;
    let hits = bits.iter().filter(|&&b| b).count();
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model(beta: f64) -> ScalarModel<f64> {
        ScalarModel::new(beta, 1.0, 2.5, 4.0).unwrap()
    }

    #[test]
    fn pi_at_zero_is_half() {
        let pi = collision_probability(&model(0.0)).unwrap();
        assert_abs_diff_eq!(pi, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn pi_is_odd_around_half() {
        for &beta in &[0.4, 1.3] {
            let plus = collision_probability(&model(beta)).unwrap();
            let minus = collision_probability(&model(-beta)).unwrap();
            assert_abs_diff_eq!(plus + minus, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn pi_is_monotone_on_tested_range() {
        let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let values: Vec<f64> = grid
            .iter()
            .map(|&b| collision_probability(&model(b)).unwrap())
            .collect();
        for w in values.windows(2) {
            assert!(w[0] < w[1], "pi not increasing: {values:?}");
        }
        // stays inside (eps, 1 - eps) at desk-scale ranges
        for &v in &values {
            assert!(v > 1e-3 && v < 1.0 - 1e-3);
        }
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let m = model(1.0);
        let pi = collision_probability(&m).unwrap();
        let n = 1_000_000;
        let freq = collision_frequency_mc(&m, n, 314).unwrap();
        let se = (pi * (1.0 - pi) / n as f64).sqrt();
        assert!(
            (pi - freq).abs() < 4.0 * se,
            "quadrature {pi} vs MC {freq} (se {se})"
        );
    }

    #[test]
    fn log_likelihood_closed_forms() {
        let m = model(0.7);
        let pi = collision_probability(&m).unwrap();
        let all_ones = vec![true; 50];
        let ll = log_likelihood(&all_ones, 0.7, &m).unwrap();
        assert_abs_diff_eq!(ll, 50.0 * pi.ln(), epsilon = 1e-6);
        let empty: Vec<bool> = vec![];
        assert_eq!(log_likelihood(&empty, 0.7, &m).unwrap(), 0.0);
    }

    #[test]
    fn mle_inverts_collision_fraction_on_grid() {
        // if the sample fraction equals pi(beta0) exactly, the maximizer is
        // beta0 (pi is monotone on the tested range)
        let m = model(0.0);
        for &beta0 in &[0.5, 1.5] {
            let pi = collision_probability(&m.with_beta(beta0)).unwrap();
            let n = 10_000usize;
            let k = (pi * n as f64).round() as usize;
            let mut bits = vec![true; k];
            bits.extend(std::iter::repeat(false).take(n - k));
            let beta_hat = fit_mle(&bits, &m, (-1.0, 4.0)).unwrap();
            // the rounded count moves the target by at most 0.5/n / piDot
            assert_abs_diff_eq!(beta_hat, beta0, epsilon = 2e-3);
        }
    }

    #[test]
    fn all_equal_bits_hit_the_boundary() {
        let m = model(0.5);
        let bits = vec![true; 100];
        assert!(matches!(
            fit_mle(&bits, &m, (0.0, 3.0)),
            Err(Error::NoInteriorMaximum { .. })
        ));
    }

    #[test]
    fn fisher_info_is_positive_at_null() {
        let m = ScalarModel::new(0.0, 1.0, 2.5, 4.0).unwrap();
        let fi = fisher_information(&m).unwrap();
        assert!(fi.pi_dot > 0.0, "pi_dot {}", fi.pi_dot);
        assert!(fi.info > 0.0);
    }

    #[test]
    fn derivative_stencils_agree() {
        let m = model(0.5);
        let h = 1e-4 * 1.0f64;
        let richardson = pi_derivative(&m, h, 1e-11).unwrap();
        // five-point stencil sharing the +-h evaluations
        let at = |beta: f64| collision_probability_inner(&m.with_beta(beta), 1e-11).unwrap();
        let five_point = (-at(0.5 + 2.0 * h) + 8.0 * at(0.5 + h) - 8.0 * at(0.5 - h)
            + at(0.5 - 2.0 * h))
            / (12.0 * h);
        assert!(
            (richardson - five_point).abs() <= 1e-5 * richardson.abs(),
            "richardson {richardson} vs five-point {five_point}"
        );
    }

    #[test]
    fn collision_indicators_require_one_dimension() {
        let x = Array2::from_elem((5, 2), 0.1);
        let y = Array1::from_elem(5, 0.1);
        let ranges = ResolvedRanges::from_rl(1.0, 1.0).unwrap();
        let ds =
            QuantizedDataset::from_raw(x.view(), y.view(), ranges, 1, ClampMode::Clamp).unwrap();
        assert!(collision_indicators(&ds).is_err());
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(ScalarModel::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(ScalarModel::new(f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(ScalarModel::new(0.0, 1.0, -1.0, 1.0).is_err());
    }
}
