//! Unbiased covariance and cross-covariance estimates from quantized bits.
//!
//! With predictor bits decoded to `+-R`, squared bits to `{0, R^2}`, and the
//! response bit to `+-L`, the estimates are
//!
//! ```text
//! SigmaHat[j][k] = mean of Xt_j Xt_k          (j != k)
//! SigmaHat[j][j] = mean of Xsq_j              (the quantized square)
//! SigmaXyHat[j]  = mean of Xt_j Yt
//! ```
//!
//! The diagonal uses the separately quantized squares directly, which is the
//! same as adding the correction `diag(Xsq_j - R^2)` to `Xt Xt^T` but avoids
//! cancellation when `R` is large. Conditional on the raw data, every entry
//! is unbiased for the corresponding sample moment.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::{PairedQuantizedDataset, QuantizedDataset, QuantizedSample, ResolvedRanges};
use crate::scalar::{s, Scalar};
use crate::stats::Kahan;

/// Moment estimates assembled from a quantized dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct MomentEstimates<T> {
    /// Symmetric `d x d` covariance estimate, serialized row-major.
    #[serde(with = "serde_matrix")]
    pub sigma_hat: Array2<T>,
    /// Cross-covariance estimate of length `d`.
    #[serde(with = "serde_vector")]
    pub sigma_xy_hat: Array1<T>,
    pub n: usize,
    pub d: usize,
    pub ranges: ResolvedRanges<T>,
}

impl<T: Scalar> MomentEstimates<T> {
    /// Assemble estimates directly; used by solvers' tests and synthetic
    /// problems. The matrix is symmetrized.
    pub fn from_parts(
        mut sigma_hat: Array2<T>,
        sigma_xy_hat: Array1<T>,
        n: usize,
        ranges: ResolvedRanges<T>,
    ) -> Result<Self> {
        let d = sigma_hat.nrows();
        if sigma_hat.ncols() != d || sigma_xy_hat.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma_xy_hat.len(),
            });
        }
        for i in 0..d {
            for j in 0..i {
                let m = (sigma_hat[(i, j)] + sigma_hat[(j, i)]) / s::<T>(2.0);
                sigma_hat[(i, j)] = m;
                sigma_hat[(j, i)] = m;
            }
        }
        Ok(MomentEstimates {
            sigma_hat,
            sigma_xy_hat,
            n,
            d,
            ranges,
        })
    }
}

mod serde_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: Scalar>(
        m: &Array2<T>,
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<T>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        serde::Serialize::serialize(&rows, ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Scalar>(
        de: D,
    ) -> std::result::Result<Array2<T>, D::Error> {
        let rows: Vec<Vec<T>> = serde::Deserialize::deserialize(de)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut out = Array2::zeros((n, m));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(serde::de::Error::custom("ragged matrix"));
            }
            for (j, &v) in row.iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

mod serde_vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: Scalar>(
        v: &Array1<T>,
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&v.to_vec(), ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Scalar>(
        de: D,
    ) -> std::result::Result<Array1<T>, D::Error> {
        let v: Vec<T> = serde::Deserialize::deserialize(de)?;
        Ok(Array1::from_vec(v))
    }
}

#[inline]
fn upper_index(d: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < d);
    j * (2 * d - j - 1) / 2 + (k - j - 1)
}

/// Streaming accumulator for [`MomentEstimates`]. Samples can be mapped in
/// parallel into per-chunk accumulators and merged in index order; batch and
/// streaming paths share this code.
#[derive(Debug, Clone)]
pub struct MomentAccumulator<T> {
    d: usize,
    ranges: ResolvedRanges<T>,
    n: u64,
    diag: Vec<Kahan<T>>,
    upper: Vec<Kahan<T>>,
    xy: Vec<Kahan<T>>,
}

impl<T: Scalar> MomentAccumulator<T> {
    pub fn new(d: usize, ranges: ResolvedRanges<T>) -> Self {
        MomentAccumulator {
            d,
            ranges,
            n: 0,
            diag: vec![Kahan::new(); d],
            upper: vec![Kahan::new(); d * (d - 1) / 2],
            xy: vec![Kahan::new(); d],
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Fold in one sample given decoded values.
    #[inline]
    fn accumulate_decoded(&mut self, x: &[T], xsq: &[T], y: T) {
        let d = self.d;
        for j in 0..d {
            self.diag[j].add(xsq[j]);
            self.xy[j].add(x[j] * y);
            for k in (j + 1)..d {
                self.upper[upper_index(d, j, k)].add(x[j] * x[k]);
            }
        }
        self.n += 1;
    }

    /// Fold in one quantized sample.
    pub fn accumulate(&mut self, sample: &QuantizedSample) -> Result<()> {
        if sample.dim() != self.d || sample.xsq_bits.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: sample.dim(),
            });
        }
        let r = self.ranges.x.upper();
        let r2 = self.ranges.xsq.upper();
        let l = self.ranges.y.upper();
        let x: Vec<T> = sample
            .x_bits
            .iter()
            .map(|&b| if b { r } else { -r })
            .collect();
        let xsq: Vec<T> = sample
            .xsq_bits
            .iter()
            .map(|&b| if b { r2 } else { T::zero() })
            .collect();
        let y = if sample.y_bit { l } else { -l };
        self.accumulate_decoded(&x, &xsq, y);
        Ok(())
    }

    /// Fold another accumulator into this one. Call in deterministic index
    /// order when combining parallel chunks.
    pub fn merge(&mut self, other: &MomentAccumulator<T>) -> Result<()> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        if other.ranges != self.ranges {
            return Err(Error::InvalidConfig(
                "cannot merge accumulators with different ranges".into(),
            ));
        }
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            a.merge(*b);
        }
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            a.merge(*b);
        }
        for (a, b) in self.xy.iter_mut().zip(&other.xy) {
            a.merge(*b);
        }
        self.n += other.n;
        Ok(())
    }

    /// Divide by the sample count once and emit the estimates.
    pub fn finalize(self) -> Result<MomentEstimates<T>> {
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        let d = self.d;
        let inv_n = T::one() / s::<T>(self.n as f64);
        let mut sigma = Array2::zeros((d, d));
        for j in 0..d {
            sigma[(j, j)] = self.diag[j].value() * inv_n;
            for k in (j + 1)..d {
                let v = self.upper[upper_index(d, j, k)].value() * inv_n;
                sigma[(j, k)] = v;
                sigma[(k, j)] = v;
            }
        }
        let xy = Array1::from_iter(self.xy.iter().map(|k| k.value() * inv_n));
        Ok(MomentEstimates {
            sigma_hat: sigma,
            sigma_xy_hat: xy,
            n: self.n as usize,
            d,
            ranges: self.ranges,
        })
    }
}

/// Moment estimates from a quantized dataset.
pub fn estimate_moments<T: Scalar>(ds: &QuantizedDataset<T>) -> Result<MomentEstimates<T>> {
    let d = ds.d();
    let mut acc = MomentAccumulator::new(d, *ds.ranges());
    let mut x = vec![T::zero(); d];
    let mut xsq = vec![T::zero(); d];
    for i in 0..ds.n() {
        for j in 0..d {
            x[j] = ds.x_value(i, j);
            xsq[j] = ds.xsq_value(i, j);
        }
        acc.accumulate_decoded(&x, &xsq, ds.y_value(i));
    }
    acc.finalize()
}

/// Moment estimates under the paired scheme. Off-diagonal entries and the
/// cross-covariance use the first bit set only; diagonal entries use the
/// per-sample product of the two independent passes.
pub fn estimate_moments_paired<T: Scalar>(
    ds: &PairedQuantizedDataset<T>,
) -> Result<MomentEstimates<T>> {
    let d = ds.d();
    if ds.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut acc = MomentAccumulator::new(d, *ds.ranges());
    let mut x = vec![T::zero(); d];
    let mut prod = vec![T::zero(); d];
    for i in 0..ds.n() {
        for j in 0..d {
            x[j] = ds.first_value(i, j);
            prod[j] = x[j] * ds.second_value(i, j);
        }
        acc.accumulate_decoded(&x, &prod, ds.y_value(i));
    }
    acc.finalize()
}
