//! Scenario generators and experiment drivers for the desk-scale simulation
//! studies: MSE comparisons against full-precision OLS, sketch-size sweeps,
//! confidence-interval coverage (plain and debiased), the paired-vs-squared
//! scheme efficiency comparison, and the transmission-time model.
//!
//! Determinism contract: every replication derives its own stream from
//! `(master seed, group index, replication index)`, so a report depends only
//! on the configuration and seed, never on thread count or scheduling.
//! Replications are the unit of parallelism and are merged in index order.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{estimate_moments, estimate_moments_paired};
use crate::quantize::{ClampMode, PairedQuantizedDataset, QuantizedDataset, RangePolicy};
use crate::regress::{fit_ols, fit_quantized, solve_normal_equations};
use crate::rng::{mix64, tags, StreamKey};
use crate::scalar::{s, Scalar};
use crate::sketch::{sketch_then_quantize, SketchConfig, SketchKind};
use crate::sparse::{compute_debias_matrix_auto, debias, default_debias_mu, fit_lasso, LassoConfig};
use crate::stats::{log_log_slope, mean_sd_se, normal_quantile};

/// Predictor distribution of a scenario. All designs are centered with unit
/// or known variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignKind {
    /// I.i.d. standard normal entries.
    GaussianIid,
    /// I.i.d. uniform on `[-sqrt(3), sqrt(3)]` (unit variance).
    UniformScaled,
    /// I.i.d. signs.
    Rademacher,
    /// Independent coordinates `2 Beta(a, b) - 1` with `(a, b)` cycling
    /// through `(1,1), (2,2), (1,4), (1,4)`.
    BetaMix,
}

const BETA_MIX_PARAMS: [(f64, f64); 4] = [(1.0, 1.0), (2.0, 2.0), (1.0, 4.0), (1.0, 4.0)];

/// A data-generating configuration for one study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Scenario<T> {
    pub design: DesignKind,
    pub d: usize,
    pub beta_star: Vec<T>,
    pub sigma: T,
    pub n: usize,
    pub ranges: RangePolicy<T>,
    pub seed: u64,
}

impl<T: Scalar> Scenario<T> {
    pub fn beta_norm(&self) -> T {
        self.beta_star
            .iter()
            .fold(T::zero(), |acc, &b| acc + b * b)
            .sqrt()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut sc = self.clone();
        sc.seed = seed;
        sc
    }

    pub fn with_sigma(&self, sigma: T) -> Self {
        let mut sc = self.clone();
        sc.sigma = sigma;
        sc
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_star.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: self.beta_star.len(),
            });
        }
        if !self.sigma.is_finite() || self.sigma < T::zero() {
            return Err(Error::InvalidConfig("sigma must be finite and >= 0".into()));
        }
        if self.beta_star.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("beta_star must be finite".into()));
        }
        if self.n < 2 || self.d == 0 {
            return Err(Error::InvalidConfig("need n >= 2 and d >= 1".into()));
        }
        Ok(())
    }

    /// The ten-coordinate unit coefficient vector used by the estimation
    /// studies: sign-alternating pairs of `sqrt(.15), sqrt(.1), sqrt(.05)`.
    pub fn unit_beta_ten() -> Vec<T> {
        let mags: [f64; 5] = [0.15, 0.15, 0.1, 0.05, 0.05];
        let mut beta = Vec::with_capacity(10);
        for (i, &m) in mags.iter().enumerate() {
            let v = s::<T>(m.sqrt());
            beta.push(if i % 2 == 0 { v } else { -v });
            beta.push(if i % 2 == 0 { -v } else { v });
        }
        beta
    }

    /// The low-dimensional inference setup: four Beta-design coordinates,
    /// `beta* = (0.5, -sqrt(3/4), sqrt(3/4), -0.5)`, `sigma = sqrt(1/2)`,
    /// `R = 1`, and `L = sqrt(d) ||beta*|| + sigma sqrt(2 log n)`.
    pub fn beta_low_dim(n: usize, seed: u64) -> Self {
        let beta_star: Vec<T> = vec![
            s(0.5),
            s(-(0.75f64).sqrt()),
            s((0.75f64).sqrt()),
            s(-0.5),
        ];
        let sigma = s::<T>(0.5f64.sqrt());
        let norm = 2f64.sqrt();
        let l = 2.0 * norm + 0.5f64.sqrt() * (2.0 * (n as f64).ln()).sqrt();
        Scenario {
            design: DesignKind::BetaMix,
            d: 4,
            beta_star,
            sigma,
            n,
            ranges: RangePolicy::Fixed {
                r: T::one(),
                l: s(l),
            },
            seed,
        }
    }

    /// The moderate-dimensional sparse setup: the low-dimensional scenario
    /// plus 36 zero-coefficient coordinates cycling the same Beta designs.
    /// The response law is unchanged, so the response range stays at the
    /// low-dimensional choice.
    pub fn beta_moderate_dim(n: usize, seed: u64) -> Self {
        let mut sc = Self::beta_low_dim(n, seed);
        sc.d = 40;
        sc.beta_star.extend(std::iter::repeat(T::zero()).take(36));
        sc
    }
}

/// Draw the design matrix and response vector of a scenario.
pub fn generate_scenario<T: Scalar>(sc: &Scenario<T>) -> Result<(Array2<T>, Array1<T>)> {
    sc.validate()?;
    let root = StreamKey::new(sc.seed);
    let mut design_rng = root.child(tags::DESIGN).rng();
    let mut noise_rng = root.child(tags::NOISE).rng();

    let betas: Vec<Beta<f64>> = if sc.design == DesignKind::BetaMix {
        (0..sc.d)
            .map(|j| {
                let (a, b) = BETA_MIX_PARAMS[j % 4];
                Beta::new(a, b).expect("valid Beta parameters")
            })
            .collect()
    } else {
        Vec::new()
    };

    let sqrt3 = 3f64.sqrt();
    let mut x = Array2::zeros((sc.n, sc.d));
    for i in 0..sc.n {
        for j in 0..sc.d {
            let v = match sc.design {
                DesignKind::GaussianIid => {
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut design_rng)
                }
                DesignKind::UniformScaled => {
                    rand::Rng::gen_range(&mut design_rng, -sqrt3..sqrt3)
                }
                DesignKind::Rademacher => {
                    if rand::Rng::gen_bool(&mut design_rng, 0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
                DesignKind::BetaMix => 2.0 * betas[j].sample(&mut design_rng) - 1.0,
            };
            x[(i, j)] = s(v);
        }
    }
    let beta = Array1::from_vec(sc.beta_star.clone());
    let mut y = x.dot(&beta);
    for i in 0..sc.n {
        let eps: f64 =
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut noise_rng);
        y[i] += sc.sigma * s::<T>(eps);
    }
    Ok((x, y))
}

/// One replication's scalar outputs, keyed by metric name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub rep: u32,
    pub seed: u64,
    pub fields: BTreeMap<String, f64>,
}

/// Mean, sample SD, and standard error of the mean of one metric.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub count: usize,
}

/// Records plus aggregates for one grid point of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyGroup {
    pub label: String,
    pub records: Vec<Record>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

/// Sorted standardized errors paired with normal quantiles; the data behind
/// a Q-Q plot. Rendering is out of scope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QqSeries {
    pub group: String,
    pub coordinate: usize,
    pub standardized: Vec<f64>,
    pub theoretical: Vec<f64>,
}

/// Full output of a study run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub study: String,
    pub config: serde_json::Value,
    /// Fingerprint of the serialized configuration.
    pub config_digest: String,
    pub master_seed: u64,
    pub groups: Vec<StudyGroup>,
    /// Study-level summary statistics (slopes, ratios, failure counts).
    pub extras: BTreeMap<String, f64>,
    pub qq: Vec<QqSeries>,
}

fn digest(text: &str) -> String {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for chunk in text.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        h = mix64(h ^ u64::from_le_bytes(word));
    }
    format!("{h:016x}")
}

fn aggregate_records(records: &[Record]) -> BTreeMap<String, Aggregate> {
    let mut keys: Vec<&str> = Vec::new();
    for r in records {
        for k in r.fields.keys() {
            if !keys.contains(&k.as_str()) {
                keys.push(k);
            }
        }
    }
    let mut out = BTreeMap::new();
    for key in keys {
        let values: Vec<f64> = records
            .iter()
            .filter_map(|r| r.fields.get(key).copied())
            .collect();
        if values.is_empty() {
            continue;
        }
        let (mean, sd, se) = mean_sd_se(&values);
        out.insert(
            key.to_string(),
            Aggregate {
                mean,
                sd,
                se,
                count: values.len(),
            },
        );
    }
    out
}

impl ExperimentReport {
    fn new<C: Serialize>(study: &str, config: &C, master_seed: u64) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let digest = digest(&config.to_string());
        ExperimentReport {
            study: study.to_string(),
            config,
            config_digest: digest,
            master_seed,
            groups: Vec::new(),
            extras: BTreeMap::new(),
            qq: Vec::new(),
        }
    }

    fn push_group(&mut self, label: String, records: Vec<Record>) {
        let aggregates = aggregate_records(&records);
        self.groups.push(StudyGroup {
            label,
            records,
            aggregates,
        });
    }

    pub fn group(&self, label: &str) -> Option<&StudyGroup> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// Deterministic pretty JSON rendering.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-replication records as CSV: `group,rep,seed,<metrics...>` with
    /// the metric columns sorted by name.
    pub fn to_csv(&self) -> String {
        let mut columns: Vec<String> = Vec::new();
        for g in &self.groups {
            for r in &g.records {
                for k in r.fields.keys() {
                    if !columns.contains(k) {
                        columns.push(k.clone());
                    }
                }
            }
        }
        columns.sort();
        let mut out = String::from("group,rep,seed");
        for c in &columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for g in &self.groups {
            for r in &g.records {
                out.push_str(&format!("{},{},{}", g.label, r.rep, r.seed));
                for c in &columns {
                    out.push(',');
                    if let Some(v) = r.fields.get(c) {
                        out.push_str(&format!("{v}"));
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

fn rep_seed(master: u64, group: usize, rep: u32) -> u64 {
    StreamKey::new(master)
        .child(tags::REPLICATION)
        .child(group as u64)
        .child(rep as u64)
        .raw()
}

fn squared_error<T: Scalar>(estimate: &[T], truth: &[T]) -> f64 {
    estimate
        .iter()
        .zip(truth)
        .map(|(&e, &t)| {
            let d = (e - t).to_f64_lossy();
            d * d
        })
        .sum()
}

/// Range policy used by the estimation studies: the predictor bound matches
/// the design's support (2.5 for the unbounded Gaussian), the response bound
/// is `2.5 sqrt(sigma^2 + ||beta*||^2)`.
pub fn mse_study_ranges<T: Scalar>(design: DesignKind, sigma: T, beta_norm: T) -> RangePolicy<T> {
    let r = match design {
        DesignKind::GaussianIid => s::<T>(2.5),
        DesignKind::UniformScaled => s::<T>(3f64.sqrt()),
        DesignKind::Rademacher | DesignKind::BetaMix => T::one(),
    };
    RangePolicy::Fixed {
        r,
        l: s::<T>(2.5) * (sigma * sigma + beta_norm * beta_norm).sqrt(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct MseStudyConfig<T: Scalar> {
    scenario: Scenario<T>,
    sigma_grid: Vec<T>,
    reps: u32,
}

/// Estimation-error study: quantized fit versus plain OLS (raw and with the
/// 32x bit-budget adjustment) across a noise grid.
pub fn run_mse_study<T: Scalar>(
    scenario: &Scenario<T>,
    sigma_grid: &[T],
    reps: u32,
) -> Result<ExperimentReport> {
    scenario.validate()?;
    if reps < 2 {
        return Err(Error::InvalidConfig("need at least 2 replications".into()));
    }
    let config = MseStudyConfig {
        scenario: scenario.clone(),
        sigma_grid: sigma_grid.to_vec(),
        reps,
    };
    let mut report = ExperimentReport::new("mse", &config, scenario.seed);
    let beta_norm = scenario.beta_norm();

    for (g, &sigma) in sigma_grid.iter().enumerate() {
        let policy = mse_study_ranges(scenario.design, sigma, beta_norm);
        let records: Vec<Record> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let seed = rep_seed(scenario.seed, g, rep);
                let sc = scenario.with_sigma(sigma).with_seed(seed);
                let mut fields = BTreeMap::new();
                match run_mse_rep(&sc, &policy) {
                    Ok((mse_q, mse_o)) => {
                        fields.insert("mse_quantized".into(), mse_q);
                        fields.insert("mse_plain".into(), mse_o);
                        fields.insert("mse_plain_x32".into(), 32.0 * mse_o);
                    }
                    Err(_) => {
                        fields.insert("fit_failed".into(), 1.0);
                    }
                }
                Record { rep, seed, fields }
            })
            .collect();
        report.push_group(format!("sigma={sigma}"), records);
    }

    for (g, &sigma) in sigma_grid.iter().enumerate() {
        let group = &report.groups[g];
        if let (Some(q), Some(p)) = (
            group.aggregates.get("mse_quantized"),
            group.aggregates.get("mse_plain_x32"),
        ) {
            report
                .extras
                .insert(format!("gap_ratio/sigma={sigma}"), q.mean / p.mean);
        }
    }
    Ok(report)
}

fn run_mse_rep<T: Scalar>(sc: &Scenario<T>, policy: &RangePolicy<T>) -> Result<(f64, f64)> {
    let (x, y) = generate_scenario(sc)?;
    let ranges = policy.resolve(sc.n, sc.d)?;
    let ds = QuantizedDataset::from_raw(x.view(), y.view(), ranges, sc.seed, ClampMode::Clamp)?;
    let moments = estimate_moments(&ds)?;
    let (beta_q, _) = solve_normal_equations(&moments)?;
    let ols = fit_ols(x.view(), y.view())?;
    Ok((
        squared_error(beta_q.as_slice().unwrap(), &sc.beta_star),
        squared_error(&ols.beta_hat, &sc.beta_star),
    ))
}

#[derive(Debug, Clone, Serialize)]
struct SketchStudyConfig<T: Scalar> {
    scenario: Scenario<T>,
    m_grid: Vec<usize>,
    reps: u32,
    kind: SketchKind,
}

/// Sketch-size sweep: MSE of the sketch-then-quantize pipeline per `m`,
/// with the plain quantization-only MSE for reference and fitted log-log
/// slopes in the extras.
pub fn run_sketch_study<T: Scalar>(
    scenario: &Scenario<T>,
    m_grid: &[usize],
    reps: u32,
) -> Result<ExperimentReport> {
    scenario.validate()?;
    if m_grid.is_empty() || m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("m grid must be increasing".into()));
    }
    let m_max = *m_grid.last().unwrap();
    if m_max > scenario.n {
        return Err(Error::SketchTooLarge {
            m: m_max,
            n: scenario.n,
        });
    }
    let config = SketchStudyConfig {
        scenario: scenario.clone(),
        m_grid: m_grid.to_vec(),
        reps,
        kind: SketchKind::GaussianIid,
    };
    let mut report = ExperimentReport::new("sketch", &config, scenario.seed);
    // sketches of different sizes share a seed, so the largest one is
    // computed once and the rest are its prefixes (fixed-range policies
    // resolve identically for every m)
    let fixed_policy = matches!(scenario.ranges, RangePolicy::Fixed { .. });

    let per_rep: Vec<(u64, BTreeMap<String, f64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(scenario.seed, 0, rep);
            let sc = scenario.with_seed(seed);
            let mut fields = BTreeMap::new();
            if let Err(e) = run_sketch_rep(&sc, m_grid, fixed_policy, &mut fields) {
                fields.insert("fit_failed".into(), 1.0);
                fields.insert("error_kind".into(), error_code(&e));
            }
            (seed, fields)
        })
        .collect();

    for (g, &m) in m_grid.iter().enumerate() {
        let key = format!("mse_quantized@m={m:07}");
        let records: Vec<Record> = per_rep
            .iter()
            .enumerate()
            .map(|(rep, (seed, fields))| {
                let mut f = BTreeMap::new();
                if let Some(v) = fields.get(&key) {
                    f.insert("mse_quantized".into(), *v);
                }
                if let Some(v) = fields.get("fit_failed") {
                    f.insert("fit_failed".into(), *v);
                }
                if g == 0 {
                    if let Some(v) = fields.get("mse_quantization_only") {
                        f.insert("mse_quantization_only".into(), *v);
                    }
                }
                Record {
                    rep: rep as u32,
                    seed: *seed,
                    fields: f,
                }
            })
            .collect();
        report.push_group(format!("m={m}"), records);
    }

    let mut points: Vec<(f64, f64)> = Vec::new();
    for (g, &m) in m_grid.iter().enumerate() {
        if let Some(a) = report.groups[g].aggregates.get("mse_quantized") {
            points.push((m as f64, a.mean));
            report
                .extras
                .insert(format!("mean_mse/m={m}"), a.mean);
        }
    }
    if points.len() >= 2 {
        report
            .extras
            .insert("loglog_slope_all".into(), log_log_slope(&points));
    }
    if points.len() >= 3 {
        let top = &points[points.len() - 3..];
        report
            .extras
            .insert("loglog_slope_top3".into(), log_log_slope(top));
    }
    if let Some(a) = report.groups[0].aggregates.get("mse_quantization_only") {
        report.extras.insert("mse_quantization_only".into(), a.mean);
    }
    Ok(report)
}

fn error_code(e: &Error) -> f64 {
    match e {
        Error::NotPositiveDefinite { .. } => 1.0,
        Error::QuadratureNonConvergence { .. } => 2.0,
        Error::Infeasible { .. } => 3.0,
        _ => 9.0,
    }
}

fn run_sketch_rep<T: Scalar>(
    sc: &Scenario<T>,
    m_grid: &[usize],
    fixed_policy: bool,
    fields: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let (x, y) = generate_scenario(sc)?;
    let m_max = *m_grid.last().unwrap();

    // reference: quantization without sketching
    let full_ranges = sc.ranges.resolve(sc.n, sc.d)?;
    let full_ds =
        QuantizedDataset::from_raw(x.view(), y.view(), full_ranges, sc.seed, ClampMode::Clamp)?;
    let full_moments = estimate_moments(&full_ds)?;
    let (beta_full, _) = solve_normal_equations(&full_moments)?;
    fields.insert(
        "mse_quantization_only".into(),
        squared_error(beta_full.as_slice().unwrap(), &sc.beta_star),
    );

    let cfg_max = SketchConfig {
        m: m_max,
        kind: SketchKind::GaussianIid,
        seed: sc.seed,
    };
    let largest = sketch_then_quantize(x.view(), y.view(), &cfg_max, &sc.ranges, ClampMode::Clamp)?;
    for &m in m_grid {
        let ds = if fixed_policy {
            largest.prefix(m)
        } else {
            let cfg = SketchConfig {
                m,
                kind: SketchKind::GaussianIid,
                seed: sc.seed,
            };
            sketch_then_quantize(x.view(), y.view(), &cfg, &sc.ranges, ClampMode::Clamp)?
        };
        let moments = estimate_moments(&ds)?;
        let (beta, _) = solve_normal_equations(&moments)?;
        fields.insert(
            format!("mse_quantized@m={m:07}"),
            squared_error(beta.as_slice().unwrap(), &sc.beta_star),
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct CoverageStudyConfig<T: Scalar> {
    scenario: Scenario<T>,
    reps: u32,
    level: T,
    lasso: Option<LassoConfig<T>>,
    debias_mu: Option<T>,
}

/// Coverage study: per-coordinate empirical coverage, bias, and standardized
/// errors, for the plain plug-in fit or (with `lasso`) the penalized fit
/// followed by debiasing. Standardized errors are exported as Q-Q data.
pub fn run_coverage_study<T: Scalar>(
    scenario: &Scenario<T>,
    reps: u32,
    level: T,
    lasso: Option<LassoConfig<T>>,
    debias_mu: Option<T>,
) -> Result<ExperimentReport> {
    scenario.validate()?;
    if reps < 2 {
        return Err(Error::InvalidConfig("need at least 2 replications".into()));
    }
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::InvalidConfig("level must lie in (0,1)".into()));
    }
    let config = CoverageStudyConfig {
        scenario: scenario.clone(),
        reps,
        level,
        lasso,
        debias_mu,
    };
    let mut report = ExperimentReport::new("coverage", &config, scenario.seed);
    let d = scenario.d;

    let records: Vec<Record> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(scenario.seed, 0, rep);
            let sc = scenario.with_seed(seed);
            let mut fields = BTreeMap::new();
            let outcome = match &lasso {
                None => run_plain_coverage_rep(&sc, level, &mut fields),
                Some(cfg) => run_debias_coverage_rep(&sc, level, cfg, debias_mu, &mut fields),
            };
            if let Err(e) = outcome {
                fields.clear();
                fields.insert("fit_failed".into(), 1.0);
                fields.insert("error_kind".into(), error_code(&e));
            }
            Record { rep, seed, fields }
        })
        .collect();

    // Q-Q data per coordinate from the standardized errors
    for j in 0..d {
        let key = format!("std_err_{j:02}");
        let mut standardized: Vec<f64> = records
            .iter()
            .filter_map(|r| r.fields.get(&key).copied())
            .collect();
        if standardized.is_empty() {
            continue;
        }
        standardized.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let count = standardized.len();
        let theoretical: Vec<f64> = (0..count)
            .map(|i| normal_quantile((i as f64 + 0.5) / count as f64))
            .collect();
        report.qq.push(QqSeries {
            group: "all".into(),
            coordinate: j,
            standardized,
            theoretical,
        });
    }

    report.push_group("all".into(), records);
    let failed = report.groups[0]
        .aggregates
        .get("fit_failed")
        .map_or(0.0, |a| a.count as f64);
    report.extras.insert("failed_reps".into(), failed);
    for j in 0..d {
        if let Some(a) = report.groups[0].aggregates.get(&format!("covered_{j:02}")) {
            report
                .extras
                .insert(format!("coverage_{j:02}"), a.mean);
        }
        if let Some(a) = report.groups[0].aggregates.get(&format!("err_{j:02}")) {
            report.extras.insert(format!("bias_{j:02}"), a.mean);
            report.extras.insert(format!("sd_{j:02}"), a.sd);
        }
    }
    Ok(report)
}

fn record_coordinate_fields<T: Scalar>(
    fields: &mut BTreeMap<String, f64>,
    truth: &[T],
    estimate: &[T],
    se: &[T],
    ci: &[(T, T)],
) {
    for j in 0..truth.len() {
        let err = (estimate[j] - truth[j]).to_f64_lossy();
        let (lo, hi) = ci[j];
        let covered = lo <= truth[j] && truth[j] <= hi;
        fields.insert(format!("err_{j:02}"), err);
        fields.insert(format!("covered_{j:02}"), covered as u8 as f64);
        let se_j = se[j].to_f64_lossy();
        if se_j > 0.0 {
            fields.insert(format!("std_err_{j:02}"), err / se_j);
        }
    }
}

fn run_plain_coverage_rep<T: Scalar>(
    sc: &Scenario<T>,
    level: T,
    fields: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let (x, y) = generate_scenario(sc)?;
    let ranges = sc.ranges.resolve(sc.n, sc.d)?;
    let ds = QuantizedDataset::from_raw(x.view(), y.view(), ranges, sc.seed, ClampMode::Clamp)?;
    let fit = fit_quantized(&ds, level)?;
    record_coordinate_fields(fields, &sc.beta_star, &fit.beta_hat, &fit.std_errors, &fit.ci);
    fields.insert("mse".into(), squared_error(&fit.beta_hat, &sc.beta_star));
    Ok(())
}

fn run_debias_coverage_rep<T: Scalar>(
    sc: &Scenario<T>,
    level: T,
    lasso_cfg: &LassoConfig<T>,
    debias_mu: Option<T>,
    fields: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let (x, y) = generate_scenario(sc)?;
    let ranges = sc.ranges.resolve(sc.n, sc.d)?;
    let ds = QuantizedDataset::from_raw(x.view(), y.view(), ranges, sc.seed, ClampMode::Clamp)?;
    let moments = estimate_moments(&ds)?;
    let lasso_fit = fit_lasso(&moments, lasso_cfg)?;
    let mu0 = debias_mu.unwrap_or_else(|| default_debias_mu(sc.d, sc.n));
    let (m_matrix, mu_used) = compute_debias_matrix_auto(&moments, mu0)?;
    let result = debias(&moments, lasso_fit.beta.view(), &ds, &m_matrix, level)?;
    let se: Vec<T> = result.per_coord_var.iter().map(|&v| v.sqrt()).collect();
    record_coordinate_fields(fields, &sc.beta_star, &result.beta_db, &se, &result.ci);
    fields.insert("mse_lasso".into(), {
        let b: Vec<T> = lasso_fit.beta.to_vec();
        squared_error(&b, &sc.beta_star)
    });
    fields.insert("mu_used".into(), mu_used.to_f64_lossy());
    fields.insert(
        "inf_norm_residual".into(),
        result.inf_norm_residual.to_f64_lossy(),
    );
    fields.insert(
        "lasso_support_size".into(),
        lasso_fit.support().len() as f64,
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct AreStudyConfig<T: Scalar> {
    snr_grid: Vec<(T, T)>,
    n: usize,
    reps: u32,
    range_multiplier: T,
    seed: u64,
}

/// Efficiency comparison of the squared-value scheme against the paired
/// scheme for a single Gaussian predictor. Ranges are matched in standard
/// deviation units: `R = multiplier`, `L = multiplier sqrt(beta^2 + sigma^2)`.
pub fn run_are_study<T: Scalar>(
    snr_grid: &[(T, T)],
    n: usize,
    reps: u32,
    range_multiplier: T,
    seed: u64,
) -> Result<ExperimentReport> {
    if snr_grid.is_empty() {
        return Err(Error::InvalidConfig("empty SNR grid".into()));
    }
    if reps < 2 || n < 2 {
        return Err(Error::InvalidConfig("need reps >= 2 and n >= 2".into()));
    }
    let config = AreStudyConfig {
        snr_grid: snr_grid.to_vec(),
        n,
        reps,
        range_multiplier,
        seed,
    };
    let mut report = ExperimentReport::new("are", &config, seed);

    for (g, &(beta, sigma)) in snr_grid.iter().enumerate() {
        let r = range_multiplier;
        let l = range_multiplier * (beta * beta + sigma * sigma).sqrt();
        let records: Vec<Record> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = rep_seed(seed, g, rep);
                let sc = Scenario {
                    design: DesignKind::GaussianIid,
                    d: 1,
                    beta_star: vec![beta],
                    sigma,
                    n,
                    ranges: RangePolicy::Fixed { r, l },
                    seed: rep_seed,
                };
                let mut fields = BTreeMap::new();
                if let Err(e) = run_are_rep(&sc, &mut fields) {
                    fields.insert("fit_failed".into(), 1.0);
                    fields.insert("error_kind".into(), error_code(&e));
                }
                Record {
                    rep,
                    seed: rep_seed,
                    fields,
                }
            })
            .collect();
        report.push_group(format!("beta={beta},sigma={sigma}"), records);
    }

    let mut last_ratio = f64::NAN;
    for (g, &(beta, sigma)) in snr_grid.iter().enumerate() {
        let group = &report.groups[g];
        if let (Some(sq), Some(pr)) = (
            group.aggregates.get("beta_squared_scheme"),
            group.aggregates.get("beta_paired_scheme"),
        ) {
            let nvar_sq = n as f64 * sq.sd * sq.sd;
            let nvar_pr = n as f64 * pr.sd * pr.sd;
            let label = format!("beta={beta},sigma={sigma}");
            report
                .extras
                .insert(format!("nvar_squared/{label}"), nvar_sq);
            report
                .extras
                .insert(format!("nvar_paired/{label}"), nvar_pr);
            last_ratio = nvar_pr / nvar_sq;
            report
                .extras
                .insert(format!("are_ratio/{label}"), last_ratio);
        }
    }
    report
        .extras
        .insert("are_ratio_highest_snr".into(), last_ratio);
    Ok(report)
}

fn run_are_rep<T: Scalar>(sc: &Scenario<T>, fields: &mut BTreeMap<String, f64>) -> Result<()> {
    let (x, y) = generate_scenario(sc)?;
    let ranges = sc.ranges.resolve(sc.n, sc.d)?;
    let ds = QuantizedDataset::from_raw(x.view(), y.view(), ranges, sc.seed, ClampMode::Clamp)?;
    let pds =
        PairedQuantizedDataset::from_raw(x.view(), y.view(), ranges, sc.seed, ClampMode::Clamp)?;
    let m_sq = estimate_moments(&ds)?;
    let (beta_sq, _) = solve_normal_equations(&m_sq)?;
    fields.insert("beta_squared_scheme".into(), beta_sq[0].to_f64_lossy());

    // The paired-scheme estimator of the efficiency comparison treats the
    // two quantization passes symmetrically: the cross moment averages both
    // bit sets, the diagonal is their per-sample product.
    let m_pr = estimate_moments_paired(&pds)?;
    let n = pds.n();
    let mut cross2 = crate::stats::Kahan::new();
    for i in 0..n {
        cross2.add(pds.second_value(i, 0) * pds.y_value(i));
    }
    let xy_sym =
        (m_pr.sigma_xy_hat[0] + cross2.value() / s::<T>(n as f64)) / s::<T>(2.0);
    let denom = m_pr.sigma_hat[(0, 0)];
    if denom.abs() <= s(crate::regress::PD_TOLERANCE) {
        return Err(Error::NotPositiveDefinite {
            min_eig: denom.to_f64_lossy(),
        });
    }
    fields.insert(
        "beta_paired_scheme".into(),
        (xy_sym / denom).to_f64_lossy(),
    );
    Ok(())
}

/// Transmission scheme for the link-time model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransmissionScheme {
    /// 64-bit floats for all of `X` and `y`: `64 n (d+1)` bits.
    Full64,
    /// `2d+1` bits per sample plus a fixed header.
    Quantized { header_bits: u64 },
    /// Sketched to `m` rows before quantization.
    SketchQuantized { m: u64, header_bits: u64 },
}

/// Seconds needed to push a dataset through a link of the given rate.
pub fn transmission_model(
    n: u64,
    d: u64,
    link_bits_per_second: f64,
    scheme: TransmissionScheme,
) -> Result<f64> {
    if !(link_bits_per_second > 0.0) {
        return Err(Error::InvalidConfig("link rate must be positive".into()));
    }
    let bits = match scheme {
        TransmissionScheme::Full64 => 64.0 * n as f64 * (d + 1) as f64,
        TransmissionScheme::Quantized { header_bits } => {
            n as f64 * (2 * d + 1) as f64 + header_bits as f64
        }
        TransmissionScheme::SketchQuantized { m, header_bits } => {
            m as f64 * (2 * d + 1) as f64 + header_bits as f64
        }
    };
    Ok(bits / link_bits_per_second)
}

/// Run a closure on a dedicated rayon pool of the given size. Studies are
/// deterministic for any pool size; this exists so callers can pin thread
/// counts (CLI `--threads`, determinism checks).
pub fn with_threads<F, R>(threads: usize, f: F) -> R
where
    F: FnOnce() -> R + Send,
    R: Send,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian_scenario(n: usize, seed: u64) -> Scenario<f64> {
        let beta_star = vec![0.6, -0.8];
        Scenario {
            design: DesignKind::GaussianIid,
            d: 2,
            beta_star,
            sigma: 1.0,
            n,
            ranges: RangePolicy::empirical_fixed(1.0, 1.0),
            seed,
        }
    }

    #[test]
    fn zero_noise_gives_exact_linear_response() {
        let mut sc = gaussian_scenario(50, 3);
        sc.sigma = 0.0;
        let (x, y) = generate_scenario(&sc).unwrap();
        for i in 0..50 {
            let expect = 0.6 * x[(i, 0)] - 0.8 * x[(i, 1)];
            assert_abs_diff_eq!(y[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_design_has_unit_variance() {
        let sc = Scenario::<f64> {
            design: DesignKind::UniformScaled,
            d: 1,
            beta_star: vec![0.0],
            sigma: 0.0,
            n: 1_000_000,
            ranges: RangePolicy::Fixed { r: 2.0, l: 1.0 },
            seed: 9,
        };
        let (x, _) = generate_scenario(&sc).unwrap();
        let mean: f64 = x.column(0).sum() / 1e6;
        let var: f64 = x.column(0).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1e6;
        // variance of a unit-variance law; se of the sample variance is
        // roughly sqrt(4/5)/1000 here, so a 4 se band is about 0.004
        assert!((var - 1.0).abs() < 0.004, "var {var}");
    }

    #[test]
    fn beta_mix_third_coordinate_mean() {
        // 2 Beta(1,4) - 1 has mean 2/5 - 1 = -0.6
        let sc = Scenario::<f64> {
            design: DesignKind::BetaMix,
            d: 4,
            beta_star: vec![0.0; 4],
            sigma: 0.0,
            n: 400_000,
            ranges: RangePolicy::Fixed { r: 1.0, l: 1.0 },
            seed: 4,
        };
        let (x, _) = generate_scenario(&sc).unwrap();
        let mean: f64 = x.column(2).sum() / 4e5;
        // sd of 2 Beta(1,4) - 1 is 2 sqrt(4/(25*6)) = 0.327
        let se = 0.327 / (4e5f64).sqrt();
        assert!((mean + 0.6).abs() < 5.0 * se, "mean {mean}");
    }

    #[test]
    fn unit_beta_has_norm_one() {
        let beta = Scenario::<f64>::unit_beta_ten();
        assert_eq!(beta.len(), 10);
        let norm: f64 = beta.iter().map(|b| b * b).sum();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scenario_generation_is_deterministic() {
        let sc = gaussian_scenario(100, 77);
        let (x1, y1) = generate_scenario(&sc).unwrap();
        let (x2, y2) = generate_scenario(&sc).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn transmission_model_matches_arithmetic() {
        // 1e6 samples, d=10 at 0.5 Mbps
        let rate = 5e5;
        let full = transmission_model(1_000_000, 10, rate, TransmissionScheme::Full64).unwrap();
        assert_abs_diff_eq!(full, 1408.0, epsilon = 1e-9);
        let quant = transmission_model(
            1_000_000,
            10,
            rate,
            TransmissionScheme::Quantized { header_bits: 0 },
        )
        .unwrap();
        assert_abs_diff_eq!(quant, 42.0, epsilon = 1e-9);
        assert_abs_diff_eq!(full / quant, 704.0 / 21.0, epsilon = 1e-12);
        let sketched = transmission_model(
            1_000_000,
            10,
            rate,
            TransmissionScheme::SketchQuantized {
                m: 100_000,
                header_bits: 0,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(quant / sketched, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn quantized_to_full_ratio_is_free_of_n() {
        for &d in &[1u64, 5, 10, 33] {
            for &n in &[100u64, 10_000] {
                let full =
                    transmission_model(n, d, 1e6, TransmissionScheme::Full64).unwrap();
                let quant = transmission_model(
                    n,
                    d,
                    1e6,
                    TransmissionScheme::Quantized { header_bits: 0 },
                )
                .unwrap();
                let expect = (2 * d + 1) as f64 / (64 * (d + 1)) as f64;
                assert_abs_diff_eq!(quant / full, expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn reports_are_identical_across_thread_counts() {
        let sc = gaussian_scenario(400, 2024);
        let run = || run_mse_study(&sc, &[1.0, 2.0], 6).unwrap().to_json();
        let single = with_threads(1, run);
        let several = with_threads(8, run);
        let repeat = with_threads(8, run);
        assert_eq!(single, several);
        assert_eq!(several, repeat);
    }

    #[test]
    fn aggregates_average_the_records() {
        let sc = gaussian_scenario(500, 5);
        let report = run_mse_study(&sc, &[1.0], 8).unwrap();
        let group = &report.groups[0];
        let agg = group.aggregates.get("mse_quantized").unwrap();
        let values: Vec<f64> = group
            .records
            .iter()
            .filter_map(|r| r.fields.get("mse_quantized").copied())
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert_abs_diff_eq!(agg.mean, mean, epsilon = 1e-12);
        assert_abs_diff_eq!(
            agg.se,
            agg.sd / (values.len() as f64).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn csv_has_group_and_metric_columns() {
        let sc = gaussian_scenario(300, 6);
        let report = run_mse_study(&sc, &[1.0], 4).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("group,rep,seed"));
        assert!(header.contains("mse_quantized"));
        assert_eq!(lines.count(), 4);
    }
}
