//! Normal distribution helpers, compensated summation, and small sample
//! statistics shared by the estimation and simulation modules.

use crate::scalar::{s, Scalar};

/// Standard normal density.
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    s((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal CDF, computed through `erfc` in double precision
/// (absolute error below 1e-15 over the full range).
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    s(0.5 * libm::erfc(-x / std::f64::consts::SQRT_2))
}

/// Standard normal survival function `1 - Phi(x)` without cancellation.
pub fn normal_sf<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    s(0.5 * libm::erfc(x / std::f64::consts::SQRT_2))
}

/// Standard normal quantile (inverse CDF), Wichura's AS 241 rational
/// approximation in double precision.
///
/// Panics if `p` is outside `(0, 1)`.
pub fn normal_quantile<T: Scalar>(p: T) -> T {
    let p = p.to_f64_lossy();
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0,1), got {p}");
    s(ppnd16(p))
}

fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.3871328727963666080e0,
        1.3314166789178437745e2,
        1.9715909503065514427e3,
        1.3731693765509461125e4,
        4.5921953931549871457e4,
        6.7265770927008700853e4,
        3.3430575583588128105e4,
        2.5090809287301226727e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252e1,
        6.8718700749205790830e2,
        5.3941960214247511077e3,
        2.1213794301586595867e4,
        3.9307895800092710610e4,
        2.8729085735721942674e4,
        5.2264952788528545610e3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734e0,
        4.63033784615654529590e0,
        5.76949722146069140550e0,
        3.64784832476320460504e0,
        1.27045825245236838258e0,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187e0,
        1.67638483018380384940e0,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720e0,
        5.46378491116411436990e0,
        1.78482653991729133580e0,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];

    fn ratio(num: &[f64; 8], den: &[f64; 8], r: f64) -> f64 {
        let mut n = num[7];
        let mut d = den[7];
        for k in (0..7).rev() {
            n = n * r + num[k];
            d = d * r + den[k];
        }
        n / d
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * ratio(&A, &B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        ratio(&C, &D, r - 1.6)
    } else {
        ratio(&E, &F, r - 5.0)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy)]
pub struct Kahan<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Default for Kahan<T> {
    fn default() -> Self {
        Kahan {
            sum: T::zero(),
            comp: T::zero(),
        }
    }
}

impl<T: Scalar> Kahan<T> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Fold another accumulator into this one (sum first, then carry).
    pub fn merge(&mut self, other: Kahan<T>) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

/// Mean, sample standard deviation, and standard error of the mean.
pub fn mean_sd_se<T: Scalar>(xs: &[T]) -> (T, T, T) {
    let n = xs.len();
    assert!(n > 0, "mean of empty slice");
    let mut acc = Kahan::new();
    for &x in xs {
        acc.add(x);
    }
    let mean = acc.value() / s(n as f64);
    if n < 2 {
        return (mean, T::zero(), T::zero());
    }
    let mut ss = Kahan::new();
    for &x in xs {
        let d = x - mean;
        ss.add(d * d);
    }
    let var = ss.value() / s((n - 1) as f64);
    let sd = var.max(T::zero()).sqrt();
    (mean, sd, sd / s((n as f64).sqrt()))
}

/// Median of a slice (averaging the two central order statistics).
pub fn median<T: Scalar>(xs: &[T]) -> T {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / s(2.0)
    }
}

/// Kolmogorov-Smirnov statistic of a sample against the standard normal.
pub fn ks_statistic_normal<T: Scalar>(samples: &[T]) -> T {
    assert!(!samples.is_empty());
    let mut v: Vec<f64> = samples.iter().map(|x| x.to_f64_lossy()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi.max(lo));
    }
    s(d)
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope<T: Scalar>(points: &[(T, T)]) -> T {
    assert!(points.len() >= 2, "slope needs at least two points");
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x.to_f64_lossy().ln(), y.to_f64_lossy().ln()))
        .collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in logs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    s(sxy / sxx)
}
