//! l1-penalized estimation from quantized moments, and the debiasing step
//! that restores per-coordinate asymptotic normality.
//!
//! The penalized problem is
//!
//! ```text
//! minimize   0.5 b' SigmaHat b - b' SigmaXyHat + lambda ||b||_1
//! subject to ||b||_1 <= radius            (optional)
//! ```
//!
//! solved by projected proximal gradient with a backtracking step. Because
//! `SigmaHat` may be indefinite when `d/n` is large, the solver certifies a
//! fixed point of the prox-project operator rather than global optimality,
//! and backtracking keeps the objective non-increasing either way.
//!
//! Debiasing computes an approximate inverse `M` of `SigmaHat` row by row
//! (smallest quadratic form subject to `||SigmaHat m - e_j||_inf <= mu`) and
//! corrects the penalized estimate to
//! `betaDb = beta + M (SigmaXyHat - SigmaHat beta)`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mat_vec, max_abs, sym_eigen};
use crate::moments::MomentEstimates;
use crate::quantize::QuantizedDataset;
use crate::regress::residual_second_moment;
use crate::scalar::{s, Scalar};
use crate::stats::normal_quantile;

/// Step-size rule for the proximal gradient iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule<T> {
    /// Constant step; the caller owns its validity.
    Fixed(T),
    /// Start from `1 / ||SigmaHat||_op` and halve until the quadratic upper
    /// bound holds and the objective does not increase.
    Backtracking,
}

/// Configuration for [`fit_lasso`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig<T> {
    pub lambda: T,
    /// Radius of the l1-ball constraint; `None` drops the constraint.
    pub ball_radius: Option<T>,
    pub max_iter: usize,
    /// Fixed-point residual tolerance in the sup norm.
    pub tol: T,
    pub step_rule: StepRule<T>,
}

impl<T: Scalar> LassoConfig<T> {
    pub fn new(lambda: T) -> Self {
        LassoConfig {
            lambda,
            ball_radius: None,
            max_iter: 20_000,
            tol: s(1e-8),
            step_rule: StepRule::Backtracking,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if let Some(r) = self.ball_radius {
            if !(r > T::zero()) {
                return Err(Error::InvalidConfig("ball radius must be positive".into()));
            }
        }
        if let StepRule::Fixed(eta) = self.step_rule {
            if !(eta > T::zero()) || !eta.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "fixed step size must be positive and finite, got {eta}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of the penalized solve. `converged == false` means the iteration
/// budget ran out; `beta` is then the best iterate seen.
#[derive(Debug, Clone)]
pub struct LassoFit<T> {
    pub beta: Array1<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm fixed-point residual at the returned iterate.
    pub fixed_point_residual: T,
    /// Penalized objective at the returned iterate.
    pub objective: T,
}

impl<T: Scalar> LassoFit<T> {
    /// Indices of nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != T::zero())
            .map(|(j, _)| j)
            .collect()
    }
}

/// Soft-thresholding operator `sign(z) max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold<T: Scalar>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

/// Euclidean projection onto the l1 ball of the given radius, by sorting the
/// absolute values and thresholding (simplex projection applied to |v|).
pub fn project_l1_ball<T: Scalar>(v: &Array1<T>, radius: T) -> Array1<T> {
    let norm1 = v.iter().fold(T::zero(), |acc, &x| acc + x.abs());
    if norm1 <= radius {
        return v.clone();
    }
    let mut mags: Vec<T> = v.iter().map(|&x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).expect("finite magnitudes"));
    let mut cumulative = T::zero();
    let mut tau = T::zero();
    for (k, &m) in mags.iter().enumerate() {
        cumulative += m;
        let candidate = (cumulative - radius) / s::<T>((k + 1) as f64);
        if candidate >= m {
            break;
        }
        tau = candidate;
    }
    v.mapv(|x| soft_threshold(x, tau))
}

fn smooth_objective<T: Scalar>(m: &MomentEstimates<T>, beta: &Array1<T>) -> T {
    let sb = m.sigma_hat.dot(beta);
    s::<T>(0.5) * beta.dot(&sb) - beta.dot(&m.sigma_xy_hat)
}

fn penalized_objective<T: Scalar>(m: &MomentEstimates<T>, beta: &Array1<T>, lambda: T) -> T {
    smooth_objective(m, beta) + lambda * beta.iter().fold(T::zero(), |acc, &b| acc + b.abs())
}

fn prox_project_step<T: Scalar>(
    beta: &Array1<T>,
    grad: &Array1<T>,
    eta: T,
    lambda: T,
    radius: Option<T>,
) -> Array1<T> {
    let mut next = Array1::zeros(beta.len());
    for j in 0..beta.len() {
        next[j] = soft_threshold(beta[j] - eta * grad[j], eta * lambda);
    }
    match radius {
        Some(r) => project_l1_ball(&next, r),
        None => next,
    }
}

/// Solve the penalized problem by projected proximal gradient.
pub fn fit_lasso<T: Scalar>(
    moments: &MomentEstimates<T>,
    cfg: &LassoConfig<T>,
) -> Result<LassoFit<T>> {
    cfg.validate()?;
    let d = moments.d;
    let op_norm = sym_eigen(&moments.sigma_hat).max_abs_value();
    let mut eta = match cfg.step_rule {
        StepRule::Fixed(eta) => eta,
        StepRule::Backtracking => {
            if op_norm > T::zero() {
                T::one() / op_norm
            } else {
                T::one()
            }
        }
    };
    let eta_floor = eta * s::<T>(1e-12);
    let backtracking = matches!(cfg.step_rule, StepRule::Backtracking);

    let mut beta: Array1<T> = Array1::zeros(d);
    let mut objective = penalized_objective(moments, &beta, cfg.lambda);
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = T::infinity();

    while iterations < cfg.max_iter {
        iterations += 1;
        let grad = moments.sigma_hat.dot(&beta) - &moments.sigma_xy_hat;
        let mut candidate = prox_project_step(&beta, &grad, eta, cfg.lambda, cfg.ball_radius);
        if backtracking {
            loop {
                let diff = &candidate - &beta;
                let dist2 = diff.dot(&diff);
                let upper = smooth_objective(moments, &beta)
                    + grad.dot(&diff)
                    + dist2 / (s::<T>(2.0) * eta);
                let cand_obj = penalized_objective(moments, &candidate, cfg.lambda);
                let majorized = smooth_objective(moments, &candidate) <= upper + s(1e-14);
                if majorized && cand_obj <= objective + s(1e-14) {
                    break;
                }
                eta = eta / s(2.0);
                if eta < eta_floor {
                    return Err(Error::InvalidConfig(
                        "backtracking step size underflow".into(),
                    ));
                }
                candidate = prox_project_step(&beta, &grad, eta, cfg.lambda, cfg.ball_radius);
            }
        }
        residual = candidate
            .iter()
            .zip(beta.iter())
            .fold(T::zero(), |acc, (&c, &b)| acc.max((c - b).abs()));
        let cand_obj = penalized_objective(moments, &candidate, cfg.lambda);
        beta = candidate;
        objective = cand_obj;
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(LassoFit {
        beta,
        converged,
        iterations,
        fixed_point_residual: residual,
        objective,
    })
}

const DEBIAS_MAX_SWEEPS: usize = 2_000;

/// Solve one row of the approximate-inverse program by coordinate descent on
/// `0.5 m' SigmaHat m - m_j + mu ||m||_1`, warm-started from `start`.
fn debias_row<T: Scalar>(
    sigma: &Array2<T>,
    j: usize,
    mu: T,
    start: &Array1<T>,
) -> Result<Array1<T>> {
    let d = sigma.nrows();
    let mut m = start.clone();
    let mut q = sigma.dot(&m); // q = SigmaHat m, maintained incrementally
    let tol = s::<T>(1e-10) * (T::one() + mu);
    for _ in 0..DEBIAS_MAX_SWEEPS {
        let mut max_change = T::zero();
        for k in 0..d {
            let diag = sigma[(k, k)];
            if diag <= s(1e-12) {
                return Err(Error::Infeasible {
                    row: j,
                    best_residual: f64::INFINITY,
                });
            }
            let target = if k == j { T::one() } else { T::zero() };
            let partial = q[k] - diag * m[k];
            let updated = soft_threshold(target - partial, mu) / diag;
            let change = updated - m[k];
            if change != T::zero() {
                for i in 0..d {
                    q[i] += sigma[(i, k)] * change;
                }
                m[k] = updated;
                max_change = max_change.max(change.abs());
            }
        }
        if max_change <= tol {
            break;
        }
    }
    // feasibility of the row: ||SigmaHat m - e_j||_inf <= mu (with solver slack)
    let mut worst = T::zero();
    for k in 0..d {
        let target = if k == j { T::one() } else { T::zero() };
        worst = worst.max((q[k] - target).abs());
    }
    if worst > mu * (T::one() + s(1e-6)) + s(1e-9) {
        return Err(Error::Infeasible {
            row: j,
            best_residual: worst.to_f64_lossy(),
        });
    }
    Ok(m)
}

/// Approximate inverse of the moment matrix: row `j` minimizes
/// `m' SigmaHat m` subject to `||SigmaHat m - e_j||_inf <= mu`, realized
/// through the penalized dual solved by coordinate descent. Rows are
/// warm-started from their predecessor.
pub fn compute_debias_matrix<T: Scalar>(
    moments: &MomentEstimates<T>,
    mu: T,
) -> Result<Array2<T>> {
    if !(mu > T::zero()) {
        return Err(Error::InvalidConfig("mu must be positive".into()));
    }
    let d = moments.d;
    let mut m = Array2::zeros((d, d));
    let mut warm: Array1<T> = Array1::zeros(d);
    for j in 0..d {
        let row = debias_row(&moments.sigma_hat, j, mu, &warm)?;
        for k in 0..d {
            m[(j, k)] = row[k];
        }
        warm = row;
    }
    Ok(m)
}

/// Default slack for the approximate inverse, `0.1 sqrt(log d / n)`.
pub fn default_debias_mu<T: Scalar>(d: usize, n: usize) -> T {
    s::<T>(0.1) * s::<T>(((d as f64).ln() / n as f64).sqrt())
}

/// Like [`compute_debias_matrix`], doubling `mu` on infeasibility (up to
/// four times) before giving up. Returns the matrix and the slack actually
/// used.
pub fn compute_debias_matrix_auto<T: Scalar>(
    moments: &MomentEstimates<T>,
    mu0: T,
) -> Result<(Array2<T>, T)> {
    let mut mu = mu0;
    let mut last_err = None;
    for _ in 0..=4 {
        match compute_debias_matrix(moments, mu) {
            Ok(m) => return Ok((m, mu)),
            Err(e @ Error::Infeasible { .. }) => {
                last_err = Some(e);
                mu = mu * s(2.0);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Debiased estimate with per-coordinate variances and intervals.
#[derive(Debug, Clone, Serialize)]
#[serde(bound(serialize = "T: Scalar"))]
pub struct DebiasResult<T> {
    /// `beta + M (SigmaXyHat - SigmaHat beta)`.
    pub beta_db: Vec<T>,
    /// Estimated variance of each debiased coordinate, `(M Vhat M')_jj / n`.
    pub per_coord_var: Vec<T>,
    pub ci: Vec<(T, T)>,
    pub level: T,
    /// `||M SigmaHat - I||_inf` for the matrix actually used.
    pub inf_norm_residual: T,
}

/// Debias a penalized estimate using a precomputed approximate inverse.
pub fn debias<T: Scalar>(
    moments: &MomentEstimates<T>,
    beta_lasso: ArrayView1<T>,
    ds: &QuantizedDataset<T>,
    m_matrix: &Array2<T>,
    level: T,
) -> Result<DebiasResult<T>> {
    let d = moments.d;
    if beta_lasso.len() != d || m_matrix.nrows() != d || m_matrix.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: beta_lasso.len(),
        });
    }
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    let beta = beta_lasso.to_owned();
    let correction = &moments.sigma_xy_hat - &moments.sigma_hat.dot(&beta);
    let beta_db = &beta + &mat_vec(m_matrix, &correction);

    let vhat = residual_second_moment(ds, beta_lasso)?;
    let mv = m_matrix.dot(&vhat);
    let n_inv = T::one() / s::<T>(moments.n as f64);
    let z = normal_quantile((T::one() + level) / s(2.0));
    let mut per_coord_var = Vec::with_capacity(d);
    let mut ci = Vec::with_capacity(d);
    for j in 0..d {
        let mut quad = T::zero();
        for k in 0..d {
            quad += mv[(j, k)] * m_matrix[(j, k)];
        }
        let var = quad.max(T::zero()) * n_inv;
        let se = var.sqrt();
        per_coord_var.push(var);
        ci.push((beta_db[j] - z * se, beta_db[j] + z * se));
    }

    let mut residual_mat = m_matrix.dot(&moments.sigma_hat);
    for j in 0..d {
        residual_mat[(j, j)] -= T::one();
    }
    Ok(DebiasResult {
        beta_db: beta_db.to_vec(),
        per_coord_var,
        ci,
        level,
        inf_norm_residual: max_abs(&residual_mat),
    })
}
