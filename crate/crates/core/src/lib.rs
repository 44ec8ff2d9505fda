//! Linear regression from 1-bit dither-quantized data.
//!
//! The crate covers the full pipeline: a dithered scalar quantizer and a
//! bit-packed dataset container ([`quantize`], [`format`]), unbiased moment
//! estimation from the bits ([`moments`]), the plug-in least-squares
//! estimator with sandwich standard errors ([`regress`]), random sketching
//! ahead of quantization ([`sketch`]), an l1-penalized variant with debiased
//! confidence intervals ([`sparse`]), a one-dimensional likelihood and
//! Fisher-information toolbox ([`likelihood`]), and scenario drivers for
//! desk-scale simulation studies ([`simlab`]).
//!
//! Numeric code is generic over the scalar type through [`scalar::Scalar`];
//! the aliases below fix `f64`, which is what the command-line tools use.

pub mod bits;
pub mod error;
pub mod format;
pub mod likelihood;
pub mod linalg;
pub mod moments;
pub mod quad;
pub mod quantize;
pub mod regress;
pub mod rng;
pub mod scalar;
pub mod simlab;
pub mod sketch;
pub mod sparse;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` quantizer range.
pub type Range64 = quantize::QuantizerRange<f64>;
/// `f64` range triple.
pub type Ranges64 = quantize::ResolvedRanges<f64>;
/// `f64` range policy.
pub type RangePolicy64 = quantize::RangePolicy<f64>;
/// `f64` quantized dataset.
pub type Dataset64 = quantize::QuantizedDataset<f64>;
/// `f64` paired-scheme dataset.
pub type PairedDataset64 = quantize::PairedQuantizedDataset<f64>;
/// `f64` moment estimates.
pub type Moments64 = moments::MomentEstimates<f64>;
/// `f64` regression fit.
pub type Fit64 = regress::FitResult<f64>;
/// `f64` OLS fit.
pub type Ols64 = regress::OlsResult<f64>;
/// `f64` scalar likelihood model.
pub type ScalarModel64 = likelihood::ScalarModel<f64>;
