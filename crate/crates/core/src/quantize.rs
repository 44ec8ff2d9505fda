//! One-bit dithered scalar quantization.
//!
//! A value `z` in `[l, u]` is rounded to `u` with probability
//! `(z - l)/(u - l)` and to `l` otherwise, which makes the output an
//! unbiased estimate of the input conditional on the input. Datasets store
//! the resulting sign bits for every predictor coordinate, every squared
//! coordinate, and the response, which is all downstream estimation ever
//! sees.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::rng::{tags, u64_to_unit, StreamKey};
use crate::scalar::{s, Scalar};

/// Closed interval a quantizer rounds into; only the endpoints are
/// representable outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerRange<T> {
    lower: T,
    upper: T,
}

impl<T: Scalar> QuantizerRange<T> {
    pub fn new(lower: T, upper: T) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() || lower >= upper {
            return Err(Error::InvalidRange {
                lower: lower.to_f64_lossy(),
                upper: upper.to_f64_lossy(),
            });
        }
        Ok(QuantizerRange { lower, upper })
    }

    /// Symmetric range `[-r, r]`.
    pub fn symmetric(r: T) -> Result<Self> {
        Self::new(-r, r)
    }

    pub fn lower(&self) -> T {
        self.lower
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    /// Interval width `u - l`.
    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn contains(&self, z: T) -> bool {
        z >= self.lower && z <= self.upper
    }
}

/// Behavior for inputs outside the quantizer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClampMode {
    /// Clamp to the nearer endpoint and count the event.
    #[default]
    Clamp,
    /// Refuse out-of-range inputs.
    Strict,
}

/// The three ranges used for a quantized regression dataset:
/// `[-R, R]` for predictors, `[0, R^2]` for their squares, `[-L, L]` for the
/// response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRanges<T> {
    pub x: QuantizerRange<T>,
    pub xsq: QuantizerRange<T>,
    pub y: QuantizerRange<T>,
}

impl<T: Scalar> ResolvedRanges<T> {
    /// Build the range triple from the predictor bound `r` and response
    /// bound `l`. The squared range is implied as `[0, r^2]`.
    pub fn from_rl(r: T, l: T) -> Result<Self> {
        if !(r > T::zero()) || !(l > T::zero()) || !r.is_finite() || !l.is_finite() {
            return Err(Error::InvalidRange {
                lower: r.to_f64_lossy(),
                upper: l.to_f64_lossy(),
            });
        }
        Ok(ResolvedRanges {
            x: QuantizerRange::symmetric(r)?,
            xsq: QuantizerRange::new(T::zero(), r * r)?,
            y: QuantizerRange::symmetric(l)?,
        })
    }

    pub fn r(&self) -> T {
        self.x.upper()
    }

    pub fn l(&self) -> T {
        self.y.upper()
    }
}

/// Rule for choosing the quantizer ranges from the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RangePolicy<T> {
    /// Fixed bounds, for data with known support.
    Fixed { r: T, l: T },
    /// Log-growing bounds for sub-Gaussian data: with `n` samples in `d`
    /// dimensions,
    /// `R_n = sqrt(2 c_k (q+1) log(n d))` and
    /// `L_n = (sqrt(2 (q+1) c_kbar) signal_norm + sqrt(2 (q+1) c_keps)) sqrt(log n)`.
    SubGaussianLogN {
        q: T,
        c_k: T,
        c_kbar: T,
        c_keps: T,
        /// Noise level, carried for presets and diagnostics.
        sigma: T,
        /// `||Sigma^{1/2} beta*||_2`, the signal scale entering `L_n`.
        signal_norm: T,
    },
}

impl<T: Scalar> RangePolicy<T> {
    /// The fixed-range choice used in the empirical studies:
    /// `R = 2.5`, `L = 2.5 sqrt(sigma^2 + ||beta*||^2)`.
    pub fn empirical_fixed(sigma: T, signal_norm: T) -> Self {
        let scale = s::<T>(2.5);
        RangePolicy::Fixed {
            r: scale,
            l: scale * (sigma * sigma + signal_norm * signal_norm).sqrt(),
        }
    }

    /// Resolve the policy into concrete ranges for `n` samples of dimension `d`.
    pub fn resolve(&self, n: usize, d: usize) -> Result<ResolvedRanges<T>> {
        if n < 2 || d < 1 {
            return Err(Error::SampleSizeTooSmall {
                n,
                requirement: "n >= 2 and d >= 1".into(),
            });
        }
        match *self {
            RangePolicy::Fixed { r, l } => ResolvedRanges::from_rl(r, l),
            RangePolicy::SubGaussianLogN {
                q,
                c_k,
                c_kbar,
                c_keps,
                sigma: _,
                signal_norm,
            } => {
                if q < T::zero() || c_k <= T::zero() || c_kbar <= T::zero() || c_keps <= T::zero()
                {
                    return Err(Error::InvalidConfig(
                        "sub-Gaussian policy needs q >= 0 and positive constants".into(),
                    ));
                }
                if q > T::zero() {
                    let min_n = s::<T>(8.0).powf(T::one() / q);
                    if s::<T>(n as f64) <= min_n {
                        return Err(Error::SampleSizeTooSmall {
                            n,
                            requirement: format!("n > 8^(1/q) = {:.3}", min_n.to_f64_lossy()),
                        });
                    }
                }
                let two = s::<T>(2.0);
                let q1 = q + T::one();
                let log_nd = s::<T>((n as f64 * d as f64).ln());
                let log_n = s::<T>((n as f64).ln());
                let r = (two * c_k * q1 * log_nd).sqrt();
                let l = ((two * q1 * c_kbar).sqrt() * signal_norm + (two * q1 * c_keps).sqrt())
                    * log_n.sqrt();
                ResolvedRanges::from_rl(r, l)
            }
        }
    }
}

/// Probability that the quantizer outputs the upper endpoint for input `z`,
/// after clamping when enabled. This is the quantity whose exactness makes
/// the output conditionally unbiased: `p u + (1 - p) l = z`.
pub fn upper_probability<T: Scalar>(
    z: T,
    range: &QuantizerRange<T>,
    mode: ClampMode,
) -> Result<(T, bool)> {
    if !z.is_finite() {
        return Err(Error::NonFinite {
            value: z.to_f64_lossy(),
        });
    }
    let (z, clamped) = if range.contains(z) {
        (z, false)
    } else {
        match mode {
            ClampMode::Strict => {
                return Err(Error::OutOfRange {
                    value: z.to_f64_lossy(),
                    lower: range.lower().to_f64_lossy(),
                    upper: range.upper().to_f64_lossy(),
                })
            }
            ClampMode::Clamp => (z.max(range.lower()).min(range.upper()), true),
        }
    };
    Ok(((z - range.lower()) / range.width(), clamped))
}

/// One quantization decision driven by an addressed uniform word.
#[inline]
fn quantize_bit<T: Scalar>(
    z: T,
    range: &QuantizerRange<T>,
    mode: ClampMode,
    word: u64,
) -> Result<(bool, bool)> {
    let (p, clamped) = upper_probability(z, range, mode)?;
    Ok((s::<T>(u64_to_unit(word)) < p, clamped))
}

/// Quantize a scalar using an external random source; returns the endpoint
/// value the quantizer emitted.
pub fn quantize_scalar<T: Scalar, R: rand::Rng>(
    z: T,
    range: &QuantizerRange<T>,
    mode: ClampMode,
    rng: &mut R,
) -> Result<T> {
    let (bit, _) = quantize_bit(z, range, mode, rng.next_u64())?;
    Ok(if bit { range.upper() } else { range.lower() })
}

/// Independent dither streams for the three quantizers (plus the second
/// predictor pass used by the paired scheme).
#[derive(Debug, Clone, Copy)]
pub struct QuantizerStreams {
    pub x: StreamKey,
    pub xsq: StreamKey,
    pub y: StreamKey,
    pub x_pair: StreamKey,
}

impl QuantizerStreams {
    pub fn new(master_seed: u64) -> Self {
        let root = StreamKey::new(master_seed);
        QuantizerStreams {
            x: root.child(tags::QUANT_X),
            xsq: root.child(tags::QUANT_XSQ),
            y: root.child(tags::QUANT_Y),
            x_pair: root.child(tags::QUANT_X_PAIR),
        }
    }
}

/// Bit triple for one observation: `d` predictor sign bits, `d` squared-value
/// bits, and one response bit. Exactly `2d + 1` payload bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedSample {
    pub x_bits: Vec<bool>,
    pub xsq_bits: Vec<bool>,
    pub y_bit: bool,
}

impl QuantizedSample {
    pub fn dim(&self) -> usize {
        self.x_bits.len()
    }
}

/// Quantize one `(x, y)` observation. The squared bits quantize the raw
/// `x_j^2`, not the square of the emitted sign bit. Returns the sample and
/// the number of clamp events it took.
pub fn quantize_triplet<T: Scalar>(
    x: ArrayView1<T>,
    y: T,
    ranges: &ResolvedRanges<T>,
    streams: &QuantizerStreams,
    sample_index: u64,
    mode: ClampMode,
) -> Result<(QuantizedSample, u64)> {
    let d = x.len();
    if d == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let mut clamps = 0u64;
    let mut x_bits = Vec::with_capacity(d);
    let mut xsq_bits = Vec::with_capacity(d);
    for (j, &xj) in x.iter().enumerate() {
        let (bit, cl) = quantize_bit(
            xj,
            &ranges.x,
            mode,
            streams.x.draw_at(sample_index, j as u64),
        )?;
        clamps += cl as u64;
        x_bits.push(bit);
        let (sq_bit, sq_cl) = quantize_bit(
            xj * xj,
            &ranges.xsq,
            mode,
            streams.xsq.draw_at(sample_index, j as u64),
        )?;
        clamps += sq_cl as u64;
        xsq_bits.push(sq_bit);
    }
    let (y_bit, y_cl) = quantize_bit(y, &ranges.y, mode, streams.y.draw_at(sample_index, 0))?;
    clamps += y_cl as u64;
    Ok((
        QuantizedSample {
            x_bits,
            xsq_bits,
            y_bit,
        },
        clamps,
    ))
}

/// A quantized regression dataset: `n` bit triples plus the ranges that
/// decode them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDataset<T> {
    n: usize,
    d: usize,
    ranges: ResolvedRanges<T>,
    x_bits: BitMatrix,
    xsq_bits: BitMatrix,
    y_bits: BitMatrix,
    master_seed: u64,
    clamp_events: u64,
}

impl<T: Scalar> QuantizedDataset<T> {
    /// Quantize a full-precision dataset. Every dither decision is addressed
    /// by `(master_seed, sample, coordinate, stream)`, so the result does not
    /// depend on evaluation order.
    pub fn from_raw(
        x: ArrayView2<T>,
        y: ArrayView1<T>,
        ranges: ResolvedRanges<T>,
        master_seed: u64,
        mode: ClampMode,
    ) -> Result<Self> {
        let n = x.nrows();
        let d = x.ncols();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if n == 0 || d == 0 {
            return Err(Error::EmptyDataset);
        }
        let streams = QuantizerStreams::new(master_seed);
        let mut ds = QuantizedDataset {
            n,
            d,
            ranges,
            x_bits: BitMatrix::zeros(n, d),
            xsq_bits: BitMatrix::zeros(n, d),
            y_bits: BitMatrix::zeros(n, 1),
            master_seed,
            clamp_events: 0,
        };
        for i in 0..n {
            for j in 0..d {
                let xj = x[(i, j)];
                let (bit, cl) =
                    quantize_bit(xj, &ranges.x, mode, streams.x.draw_at(i as u64, j as u64))?;
                ds.x_bits.set(i, j, bit);
                ds.clamp_events += cl as u64;
                let (sq, sq_cl) = quantize_bit(
                    xj * xj,
                    &ranges.xsq,
                    mode,
                    streams.xsq.draw_at(i as u64, j as u64),
                )?;
                ds.xsq_bits.set(i, j, sq);
                ds.clamp_events += sq_cl as u64;
            }
            let (yb, y_cl) = quantize_bit(y[i], &ranges.y, mode, streams.y.draw_at(i as u64, 0))?;
            ds.y_bits.set(i, 0, yb);
            ds.clamp_events += y_cl as u64;
        }
        Ok(ds)
    }

    /// Assemble a dataset from already-quantized samples.
    pub fn from_samples(
        samples: &[QuantizedSample],
        ranges: ResolvedRanges<T>,
        master_seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = samples[0].dim();
        let n = samples.len();
        let mut ds = QuantizedDataset {
            n,
            d,
            ranges,
            x_bits: BitMatrix::zeros(n, d),
            xsq_bits: BitMatrix::zeros(n, d),
            y_bits: BitMatrix::zeros(n, 1),
            master_seed,
            clamp_events: 0,
        };
        for (i, sample) in samples.iter().enumerate() {
            if sample.dim() != d || sample.xsq_bits.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: sample.dim(),
                });
            }
            for j in 0..d {
                ds.x_bits.set(i, j, sample.x_bits[j]);
                ds.xsq_bits.set(i, j, sample.xsq_bits[j]);
            }
            ds.y_bits.set(i, 0, sample.y_bit);
        }
        Ok(ds)
    }

    pub(crate) fn from_parts(
        n: usize,
        d: usize,
        ranges: ResolvedRanges<T>,
        x_bits: BitMatrix,
        xsq_bits: BitMatrix,
        y_bits: BitMatrix,
        master_seed: u64,
    ) -> Self {
        QuantizedDataset {
            n,
            d,
            ranges,
            x_bits,
            xsq_bits,
            y_bits,
            master_seed,
            clamp_events: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ranges(&self) -> &ResolvedRanges<T> {
        self.ranges_ref()
    }

    fn ranges_ref(&self) -> &ResolvedRanges<T> {
        &self.ranges
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Number of inputs that fell outside their range and were clamped.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Raw bit accessors.
    pub fn x_bit(&self, i: usize, j: usize) -> bool {
        self.x_bits.get(i, j)
    }

    pub fn xsq_bit(&self, i: usize, j: usize) -> bool {
        self.xsq_bits.get(i, j)
    }

    pub fn y_bit(&self, i: usize) -> bool {
        self.y_bits.get(i, 0)
    }

    /// Decoded predictor coordinate: `R` or `-R`.
    #[inline]
    pub fn x_value(&self, i: usize, j: usize) -> T {
        if self.x_bits.get(i, j) {
            self.ranges.x.upper()
        } else {
            self.ranges.x.lower()
        }
    }

    /// Decoded squared coordinate: `R^2` or `0`.
    #[inline]
    pub fn xsq_value(&self, i: usize, j: usize) -> T {
        if self.xsq_bits.get(i, j) {
            self.ranges.xsq.upper()
        } else {
            self.ranges.xsq.lower()
        }
    }

    /// Decoded response: `L` or `-L`.
    #[inline]
    pub fn y_value(&self, i: usize) -> T {
        if self.y_bits.get(i, 0) {
            self.ranges.y.upper()
        } else {
            self.ranges.y.lower()
        }
    }

    /// Materialize one sample's bits.
    pub fn sample(&self, i: usize) -> QuantizedSample {
        QuantizedSample {
            x_bits: self.x_bits.row_iter(i).collect(),
            xsq_bits: self.xsq_bits.row_iter(i).collect(),
            y_bit: self.y_bits.get(i, 0),
        }
    }

    /// Dataset consisting of the first `m` samples.
    pub fn prefix(&self, m: usize) -> Self {
        assert!(m >= 1 && m <= self.n, "prefix length out of bounds");
        QuantizedDataset {
            n: m,
            d: self.d,
            ranges: self.ranges,
            x_bits: self.x_bits.prefix(m),
            xsq_bits: self.xsq_bits.prefix(m),
            y_bits: self.y_bits.prefix(m),
            master_seed: self.master_seed,
            clamp_events: self.clamp_events,
        }
    }
}

/// Dataset for the paired quantization scheme: each predictor coordinate is
/// quantized twice with independent dither, and diagonal covariance entries
/// come from the product of the two passes instead of squared-value bits.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedQuantizedDataset<T> {
    n: usize,
    d: usize,
    ranges: ResolvedRanges<T>,
    first_bits: BitMatrix,
    second_bits: BitMatrix,
    y_bits: BitMatrix,
    master_seed: u64,
    clamp_events: u64,
}

impl<T: Scalar> PairedQuantizedDataset<T> {
    /// Quantize a dataset under the paired scheme. The first pass and the
    /// response share dither streams with [`QuantizedDataset::from_raw`] for
    /// the same seed, so the two schemes can be compared on common draws.
    pub fn from_raw(
        x: ArrayView2<T>,
        y: ArrayView1<T>,
        ranges: ResolvedRanges<T>,
        master_seed: u64,
        mode: ClampMode,
    ) -> Result<Self> {
        let n = x.nrows();
        let d = x.ncols();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if n == 0 || d == 0 {
            return Err(Error::EmptyDataset);
        }
        let streams = QuantizerStreams::new(master_seed);
        let mut ds = PairedQuantizedDataset {
            n,
            d,
            ranges,
            first_bits: BitMatrix::zeros(n, d),
            second_bits: BitMatrix::zeros(n, d),
            y_bits: BitMatrix::zeros(n, 1),
            master_seed,
            clamp_events: 0,
        };
        for i in 0..n {
            for j in 0..d {
                let xj = x[(i, j)];
                let (b1, c1) =
                    quantize_bit(xj, &ranges.x, mode, streams.x.draw_at(i as u64, j as u64))?;
                let (b2, c2) = quantize_bit(
                    xj,
                    &ranges.x,
                    mode,
                    streams.x_pair.draw_at(i as u64, j as u64),
                )?;
                ds.first_bits.set(i, j, b1);
                ds.second_bits.set(i, j, b2);
                ds.clamp_events += (c1 as u64) + (c2 as u64);
            }
            let (yb, yc) = quantize_bit(y[i], &ranges.y, mode, streams.y.draw_at(i as u64, 0))?;
            ds.y_bits.set(i, 0, yb);
            ds.clamp_events += yc as u64;
        }
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ranges(&self) -> &ResolvedRanges<T> {
        &self.ranges
    }

    #[inline]
    pub fn first_value(&self, i: usize, j: usize) -> T {
        if self.first_bits.get(i, j) {
            self.ranges.x.upper()
        } else {
            self.ranges.x.lower()
        }
    }

    #[inline]
    pub fn second_value(&self, i: usize, j: usize) -> T {
        if self.second_bits.get(i, j) {
            self.ranges.x.upper()
        } else {
            self.ranges.x.lower()
        }
    }

    #[inline]
    pub fn y_value(&self, i: usize) -> T {
        if self.y_bits.get(i, 0) {
            self.ranges.y.upper()
        } else {
            self.ranges.y.lower()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};

    fn unit_range() -> QuantizerRange<f64> {
        QuantizerRange::new(-1.0, 1.0).unwrap()
    }

    #[test]
    fn probability_at_endpoints_and_midpoint() {
        let r = unit_range();
        assert_eq!(upper_probability(-1.0, &r, ClampMode::Strict).unwrap().0, 0.0);
        assert_eq!(upper_probability(1.0, &r, ClampMode::Strict).unwrap().0, 1.0);
        assert_eq!(upper_probability(0.0, &r, ClampMode::Strict).unwrap().0, 0.5);
    }

    #[test]
    fn probability_matches_three_quarters_point() {
        // z = l/4 + 3u/4 quantizes to the upper endpoint with probability 3/4
        let r = QuantizerRange::new(-2.0, 6.0).unwrap();
        let z = 0.25 * -2.0 + 0.75 * 6.0;
        let (p, _) = upper_probability(z, &r, ClampMode::Strict).unwrap();
        assert_abs_diff_eq!(p, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn induced_mean_identity() {
        let r = QuantizerRange::new(-3.5, 1.25).unwrap();
        for k in 0..=20 {
            let z = -3.5 + 4.75 * (k as f64) / 20.0;
            let (p, _) = upper_probability(z, &r, ClampMode::Strict).unwrap();
            let mean = p * r.upper() + (1.0 - p) * r.lower();
            assert_abs_diff_eq!(mean, z, epsilon = 8.0 * f64::EPSILON * 4.0);
        }
    }

    #[test]
    fn strict_mode_rejects_out_of_range() {
        let r = unit_range();
        assert!(matches!(
            upper_probability(1.5, &r, ClampMode::Strict),
            Err(Error::OutOfRange { .. })
        ));
        let (p, clamped) = upper_probability(1.5, &r, ClampMode::Clamp).unwrap();
        assert_eq!(p, 1.0);
        assert!(clamped);
    }

    #[test]
    fn non_finite_inputs_error() {
        let r = unit_range();
        assert!(upper_probability(f64::NAN, &r, ClampMode::Clamp).is_err());
        assert!(upper_probability(f64::INFINITY, &r, ClampMode::Clamp).is_err());
    }

    #[test]
    fn empirical_mean_is_unbiased() {
        // binomial standard error bound: |mean - z| < 5 width / sqrt(4 N)
        let r = QuantizerRange::new(-2.0, 2.0).unwrap();
        let z = 0.37;
        let n = 1_000_000u64;
        let key = StreamKey::new(99);
        let mut sum = 0.0;
        for i in 0..n {
            let u = key.unit_at(i, 0);
            let (p, _) = upper_probability(z, &r, ClampMode::Strict).unwrap();
            sum += if u < p { r.upper() } else { r.lower() };
        }
        let mean = sum / n as f64;
        let bound = 5.0 * r.width() / (4.0 * n as f64).sqrt();
        assert!((mean - z).abs() < bound, "mean {mean}, bound {bound}");
    }

    #[test]
    fn triplet_boundary_bits_are_deterministic() {
        let ranges = ResolvedRanges::from_rl(1.0, 2.0).unwrap();
        let streams = QuantizerStreams::new(3);
        let x = array![1.0];
        let (sample, clamps) =
            quantize_triplet(x.view(), 2.0, &ranges, &streams, 0, ClampMode::Strict).unwrap();
        assert_eq!(sample.x_bits, vec![true]);
        assert_eq!(sample.xsq_bits, vec![true]);
        assert!(sample.y_bit);
        assert_eq!(clamps, 0);
    }

    #[test]
    fn zero_input_square_bit_is_zero() {
        // x = 0 puts x^2 at the lower endpoint of [0, R^2]
        let ranges = ResolvedRanges::from_rl(1.0, 1.0).unwrap();
        let streams = QuantizerStreams::new(11);
        for i in 0..200 {
            let (sample, _) = quantize_triplet(
                array![0.0].view(),
                0.5,
                &ranges,
                &streams,
                i,
                ClampMode::Strict,
            )
            .unwrap();
            assert!(!sample.xsq_bits[0]);
        }
    }

    #[test]
    fn triplet_mean_unbiased_in_two_dims() {
        // Monte Carlo oracle: decoded mean of X-bits approximates x = (0, 0)
        let ranges = ResolvedRanges::from_rl(1.0, 1.0).unwrap();
        let streams = QuantizerStreams::new(7);
        let n = 1_000_000usize;
        let mut sums = [0.0f64; 2];
        let x = array![0.0, 0.0];
        for i in 0..n {
            let (sample, _) =
                quantize_triplet(x.view(), 0.0, &ranges, &streams, i as u64, ClampMode::Strict)
                    .unwrap();
            for j in 0..2 {
                sums[j] += if sample.x_bits[j] { 1.0 } else { -1.0 };
            }
        }
        // standard error of the decoded mean is R/sqrt(n)
        let bound = 4.0 / (n as f64).sqrt();
        for j in 0..2 {
            let mean = sums[j] / n as f64;
            assert!(mean.abs() < bound, "coordinate {j}: mean {mean}");
        }
    }

    #[test]
    fn fixed_policy_resolves_to_given_ranges() {
        let policy = RangePolicy::Fixed { r: 2.5, l: 5.0 };
        let ranges = policy.resolve(100, 3).unwrap();
        assert_eq!(ranges.x.lower(), -2.5);
        assert_eq!(ranges.x.upper(), 2.5);
        assert_eq!(ranges.xsq.lower(), 0.0);
        assert_eq!(ranges.xsq.upper(), 6.25);
        assert_eq!(ranges.y.lower(), -5.0);
        assert_eq!(ranges.y.upper(), 5.0);
    }

    #[test]
    fn subgaussian_policy_matches_formula() {
        let policy = RangePolicy::SubGaussianLogN {
            q: 3.0,
            c_k: 1.0,
            c_kbar: 1.0,
            c_keps: 1.0,
            sigma: 1.0,
            signal_norm: 1.0,
        };
        let ranges = policy.resolve(10_000, 10).unwrap();
        let expected_r = (8.0 * (1e5f64).ln()).sqrt();
        assert_abs_diff_eq!(ranges.r(), expected_r, epsilon = 1e-12);
        let expected_l = ((8.0f64).sqrt() + (8.0f64).sqrt()) * (1e4f64).ln().sqrt();
        assert_abs_diff_eq!(ranges.l(), expected_l, epsilon = 1e-12);
    }

    #[test]
    fn subgaussian_ranges_grow_with_n() {
        let policy = RangePolicy::SubGaussianLogN {
            q: 2.0,
            c_k: 1.0,
            c_kbar: 1.0,
            c_keps: 1.0,
            sigma: 0.0,
            signal_norm: 1.0,
        };
        let small = policy.resolve(10_000, 5).unwrap();
        let large = policy.resolve(1_000_000, 5).unwrap();
        assert!(small.r() < large.r());
        assert!(small.l() < large.l());
    }

    #[test]
    fn subgaussian_policy_rejects_tiny_n() {
        let policy = RangePolicy::SubGaussianLogN {
            q: 0.5,
            c_k: 1.0,
            c_kbar: 1.0,
            c_keps: 1.0,
            sigma: 0.0,
            signal_norm: 1.0,
        };
        // 8^(1/0.5) = 64, so n = 32 is too small
        assert!(policy.resolve(32, 2).is_err());
        assert!(policy.resolve(65, 2).is_ok());
    }

    #[test]
    fn empirical_preset_scales_response_range() {
        let policy = RangePolicy::<f64>::empirical_fixed(1.0, 1.0);
        match policy {
            RangePolicy::Fixed { r, l } => {
                assert_eq!(r, 2.5);
                assert_abs_diff_eq!(l, 2.5 * 2f64.sqrt(), epsilon = 1e-15);
            }
            _ => panic!("expected fixed policy"),
        }
    }

    #[test]
    fn dataset_prefix_matches_fresh_build() {
        let n = 40;
        let d = 3;
        let key = StreamKey::new(5).child(77);
        let mut rng = key.rng();
        let x = Array2::from_shape_fn((n, d), |_| {
            rand::Rng::gen_range(&mut rng, -1.0..1.0)
        });
        let y = Array1::from_shape_fn(n, |_| rand::Rng::gen_range(&mut rng, -2.0..2.0));
        let ranges = ResolvedRanges::from_rl(1.0, 2.0).unwrap();
        let full =
            QuantizedDataset::from_raw(x.view(), y.view(), ranges, 123, ClampMode::Clamp).unwrap();
        let sub = QuantizedDataset::from_raw(
            x.slice(ndarray::s![..25, ..]),
            y.slice(ndarray::s![..25]),
            ranges,
            123,
            ClampMode::Clamp,
        )
        .unwrap();
        let prefix = full.prefix(25);
        for i in 0..25 {
            assert_eq!(prefix.sample(i), sub.sample(i));
        }
    }

    #[test]
    fn dither_form_matches_bernoulli_form() {
        // Reference implementation: add Unif(-w/2, w/2), round to the nearer
        // endpoint. Frequencies must agree with the Bernoulli probabilities
        // within 4 binomial standard errors at 20 grid points.
        let r = QuantizerRange::new(-1.5, 2.5).unwrap();
        let width = r.width();
        let n = 200_000u64;
        let key = StreamKey::new(2024);
        for g in 0..20 {
            let z = r.lower() + width * (g as f64 + 0.5) / 20.0;
            let (p, _) = upper_probability(z, &r, ClampMode::Strict).unwrap();
            let mut upper_count = 0u64;
            for i in 0..n {
                let u = key.unit_at(i, g);
                let dithered = z + (u - 0.5) * width;
                let nearest_upper =
                    (dithered - r.upper()).abs() < (dithered - r.lower()).abs();
                upper_count += nearest_upper as u64;
            }
            let freq = upper_count as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
            assert!(
                (freq - p).abs() < 4.0 * se + 1e-9,
                "z {z}: dither freq {freq} vs p {p}"
            );
        }
    }
}
