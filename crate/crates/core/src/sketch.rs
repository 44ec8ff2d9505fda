//! Sketch-then-quantize pipeline: compress `n` samples down to `m` rows with
//! a random isotropic matrix, rescale, and feed the result to the quantizer.
//!
//! With entries of `S` drawn i.i.d. with variance `1/m`, the sketched rows
//! `(n/m)^{-1/2} (S X, S y)` are zero mean with covariance `X^T X / n`, so
//! downstream estimation treats them exactly like `m` fresh samples.

use ndarray::{concatenate, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::{ClampMode, QuantizedDataset, RangePolicy};
use crate::rng::{tags, StreamKey};
use crate::scalar::{s, Scalar};

/// Distribution of the sketching matrix entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SketchKind {
    /// I.i.d. Gaussian entries with mean 0 and variance `1/m`.
    GaussianIid,
    /// Achlioptas ternary entries: `{-1, 0, 1}` with probabilities
    /// `1/6, 2/3, 1/6`, scaled by `sqrt(3/m)`.
    TernaryAchlioptas,
    /// Pass-through (requires `m == n`); degenerate kind for pipeline checks.
    Identity,
}

/// Sketch specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    /// Number of sketched rows.
    pub m: usize,
    pub kind: SketchKind,
    pub seed: u64,
}

const ROW_BLOCK: usize = 32;

/// Fill a block of raw (unscaled) sketch rows. Entries are keyed per row, so
/// row values do not depend on the block partition or on `m`.
fn fill_block<T: Scalar>(
    mut block: ArrayViewMut2<'_, T>,
    first_row: usize,
    kind: SketchKind,
    key: StreamKey,
) {
    let n = block.ncols();
    for (local, mut row) in block.outer_iter_mut().enumerate() {
        let mut rng = key.child((first_row + local) as u64).rng();
        match kind {
            SketchKind::GaussianIid => {
                for k in 0..n {
                    row[k] = s::<T>(<StandardNormal as Distribution<f64>>::sample(
                        &StandardNormal,
                        &mut rng,
                    ));
                }
            }
            SketchKind::TernaryAchlioptas => {
                // one uniform per entry with thresholds at 1/6 and 5/6
                for k in 0..n {
                    let u: f64 = rng.gen();
                    row[k] = if u < 1.0 / 6.0 {
                        -T::one()
                    } else if u > 5.0 / 6.0 {
                        T::one()
                    } else {
                        T::zero()
                    };
                }
            }
            SketchKind::Identity => unreachable!("identity kind is handled without a matrix"),
        }
    }
}

/// Apply the sketch to a design matrix and response vector.
///
/// Returns `((n/m)^{-1/2} S X, (n/m)^{-1/2} S y)`. The raw entry value and
/// the two scale factors combine to `1/sqrt(n)` (Gaussian) or `sqrt(3/n)`
/// (ternary) per standard entry, independent of `m`; sketches of different
/// sizes under one seed therefore agree on their common rows.
pub fn sketch_data<'a, T: Scalar>(
    x: ArrayView2<'a, T>,
    y: ndarray::ArrayView1<'a, T>,
    cfg: &SketchConfig,
) -> Result<(Array2<T>, Array1<T>)> {
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if cfg.m == 0 || n == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.m > n {
        return Err(Error::SketchTooLarge { m: cfg.m, n });
    }
    if cfg.kind == SketchKind::Identity {
        if cfg.m != n {
            return Err(Error::InvalidConfig(
                "identity sketch requires m == n".into(),
            ));
        }
        return Ok((x.to_owned(), y.to_owned()));
    }

    let scale = match cfg.kind {
        SketchKind::GaussianIid => T::one() / s::<T>(n as f64).sqrt(),
        SketchKind::TernaryAchlioptas => (s::<T>(3.0) / s::<T>(n as f64)).sqrt(),
        SketchKind::Identity => unreachable!(),
    };
    let key = StreamKey::new(cfg.seed).child(tags::SKETCH);

    // [X | y] so one pass produces both sketched outputs
    let xy = concatenate(Axis(1), &[x, y.insert_axis(Axis(1))]).expect("matching row counts");

    let blocks: Vec<(usize, usize)> = (0..cfg.m)
        .step_by(ROW_BLOCK)
        .map(|start| (start, (start + ROW_BLOCK).min(cfg.m)))
        .collect();
    let results: Vec<Array2<T>> = blocks
        .par_iter()
        .map(|&(start, end)| {
            let rows = end - start;
            let mut block = Array2::zeros((rows, n));
            fill_block(block.view_mut(), start, cfg.kind, key);
            let mut out = block.dot(&xy);
            out.mapv_inplace(|v| v * scale);
            out
        })
        .collect();

    let mut xhat = Array2::zeros((cfg.m, d));
    let mut yhat = Array1::zeros(cfg.m);
    for (&(start, end), chunk) in blocks.iter().zip(&results) {
        for (local, i) in (start..end).enumerate() {
            for j in 0..d {
                xhat[(i, j)] = chunk[(local, j)];
            }
            yhat[i] = chunk[(local, d)];
        }
    }
    Ok((xhat, yhat))
}

/// Sketch, resolve ranges for the reduced sample count, and quantize.
///
/// The resulting dataset has `m` samples; its quantizer dither streams are
/// derived from the same seed as the sketch but under different tags.
pub fn sketch_then_quantize<'a, T: Scalar>(
    x: ArrayView2<'a, T>,
    y: ndarray::ArrayView1<'a, T>,
    cfg: &SketchConfig,
    policy: &RangePolicy<T>,
    mode: ClampMode,
) -> Result<QuantizedDataset<T>> {
    let (xhat, yhat) = sketch_data(x, y, cfg)?;
    let ranges = policy.resolve(cfg.m, x.ncols())?;
    QuantizedDataset::from_raw(xhat.view(), yhat.view(), ranges, cfg.seed, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::ResolvedRanges;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};

    fn small_design(n: usize, d: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = StreamKey::new(seed).rng();
        let x = Array2::from_shape_fn((n, d), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let y = Array1::from_shape_fn(n, |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        (x, y)
    }

    #[test]
    fn rejects_oversized_sketch() {
        let (x, y) = small_design(10, 2, 1);
        let cfg = SketchConfig {
            m: 11,
            kind: SketchKind::GaussianIid,
            seed: 0,
        };
        assert!(matches!(
            sketch_data(x.view(), y.view(), &cfg),
            Err(Error::SketchTooLarge { .. })
        ));
    }

    #[test]
    fn sketch_is_linear_for_matched_seeds() {
        let (x1, y1) = small_design(50, 3, 2);
        let (x2, y2) = small_design(50, 3, 3);
        let cfg = SketchConfig {
            m: 20,
            kind: SketchKind::GaussianIid,
            seed: 7,
        };
        let combo_x = &x1 * 2.0 + &x2 * -0.5;
        let combo_y = &y1 * 2.0 + &y2 * -0.5;
        let (sx, sy) = sketch_data(combo_x.view(), combo_y.view(), &cfg).unwrap();
        let (s1x, s1y) = sketch_data(x1.view(), y1.view(), &cfg).unwrap();
        let (s2x, s2y) = sketch_data(x2.view(), y2.view(), &cfg).unwrap();
        for i in 0..20 {
            for j in 0..3 {
                let expect = 2.0 * s1x[(i, j)] - 0.5 * s2x[(i, j)];
                assert!(
                    (sx[(i, j)] - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                    "entry ({i},{j})"
                );
            }
            let expect = 2.0 * s1y[i] - 0.5 * s2y[i];
            assert!((sy[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_linear_model_is_preserved() {
        let (x, _) = small_design(60, 3, 5);
        let beta = array![1.0, -2.0, 0.5];
        let y = x.dot(&beta);
        let cfg = SketchConfig {
            m: 25,
            kind: SketchKind::TernaryAchlioptas,
            seed: 9,
        };
        let (sx, sy) = sketch_data(x.view(), y.view(), &cfg).unwrap();
        let recon = sx.dot(&beta);
        for i in 0..25 {
            assert_abs_diff_eq!(recon[i], sy[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn ternary_zero_frequency_matches_two_thirds() {
        let n = 40_000usize;
        let key = StreamKey::new(33).child(tags::SKETCH);
        let mut zeros = 0u64;
        let mut total = 0u64;
        for row in 0..25usize {
            let mut rng = key.child(row as u64).rng();
            for _ in 0..n {
                let u: f64 = rng.gen();
                let v = if u < 1.0 / 6.0 {
                    -1
                } else if u > 5.0 / 6.0 {
                    1
                } else {
                    0
                };
                zeros += (v == 0) as u64;
                total += 1;
            }
        }
        let freq = zeros as f64 / total as f64;
        let p = 2.0 / 3.0;
        let se = (p * (1.0 - p) / total as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "freq {freq}");
    }

    #[test]
    fn column_norm_expectation_matches_oracle() {
        // Direct expectation: each sketched entry of a fixed column v has
        // variance ||v||^2 / n, so E||Xhat_col||^2 = m ||v||^2 / n.
        let n = 64;
        let m = 16;
        let mut x = Array2::zeros((n, 1));
        x[(5, 0)] = 2.0; // one-hot column scaled by 2
        let y = Array1::zeros(n);
        let sketches = 500;
        let mut total = 0.0;
        for seed in 0..sketches {
            let cfg = SketchConfig {
                m,
                kind: SketchKind::GaussianIid,
                seed,
            };
            let (sx, _) = sketch_data(x.view(), y.view(), &cfg).unwrap();
            total += sx.column(0).dot(&sx.column(0));
        }
        let mean = total / sketches as f64;
        let expected = m as f64 * 4.0 / n as f64;
        // ||col||^2 is chi^2_m scaled; se = expected * sqrt(2/m) / sqrt(reps)
        let se = expected * (2.0 / m as f64).sqrt() / (sketches as f64).sqrt();
        assert!(
            (mean - expected).abs() < 4.0 * se,
            "mean {mean}, expected {expected}"
        );
    }

    #[test]
    fn identity_kind_matches_plain_quantization() {
        let (x, y) = small_design(30, 2, 8);
        let cfg = SketchConfig {
            m: 30,
            kind: SketchKind::Identity,
            seed: 55,
        };
        let policy = RangePolicy::Fixed { r: 4.0, l: 4.0 };
        let sketched = sketch_then_quantize(x.view(), y.view(), &cfg, &policy, ClampMode::Clamp)
            .unwrap();
        let plain = QuantizedDataset::from_raw(
            x.view(),
            y.view(),
            ResolvedRanges::from_rl(4.0, 4.0).unwrap(),
            55,
            ClampMode::Clamp,
        )
        .unwrap();
        for i in 0..30 {
            assert_eq!(sketched.sample(i), plain.sample(i));
        }
    }

    #[test]
    fn sketches_of_different_sizes_share_common_rows() {
        let (x, y) = small_design(200, 2, 13);
        let small = SketchConfig {
            m: 20,
            kind: SketchKind::GaussianIid,
            seed: 4,
        };
        let large = SketchConfig {
            m: 60,
            kind: SketchKind::GaussianIid,
            seed: 4,
        };
        let (sx, sy) = sketch_data(x.view(), y.view(), &small).unwrap();
        let (lx, ly) = sketch_data(x.view(), y.view(), &large).unwrap();
        for i in 0..20 {
            for j in 0..2 {
                assert_eq!(sx[(i, j)], lx[(i, j)]);
            }
            assert_eq!(sy[i], ly[i]);
        }
    }
}
