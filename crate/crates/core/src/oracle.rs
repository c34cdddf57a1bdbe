//! Synthetic Gaussian systems with known O-information, and the check suite
//! that compares the estimator against them.
//!
//! Closed forms used by the checks:
//! - synergistic triplet `(X, Y, X + Y + e/2)`: `Omega = ln(0.36) / 2`
//! - redundant triplet `(X, X + e1/2, X + e2/2)`: `Omega = -ln(0.36) / 2`
//! - any pair: `Omega = 0` exactly
//! - independent variables: `Omega = 0`

use std::f64::consts::{E, PI};
use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gcmi::{
    copula_transform, copula_transform_with_target, correlation_model, gaussian_entropy, Column,
    CorrelationModel,
};
use crate::omega::omega;
use crate::search::{exhaustive_search, Objective, SearchOptions};

/// Analytic Omega of the synergistic triplet, `0.5 * ln(0.36)`.
pub fn synergy_triplet_omega() -> f64 {
    0.5 * 0.36f64.ln()
}

pub fn redundancy_triplet_omega() -> f64 {
    -synergy_triplet_omega()
}

pub const SYNERGY_TRIPLET_COV: [[f64; 3]; 3] = [[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.25]];
pub const REDUNDANCY_TRIPLET_COV: [[f64; 3]; 3] =
    [[1.0, 1.0, 1.0], [1.0, 1.25, 1.0], [1.0, 1.0, 1.25]];

/// Seeded generator; each check draws from its own stream.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

/// `(X, Y, X + Y + e/2)` with independent standard normal sources.
pub fn synergy_triplet(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let src = standard_normal(n, 3, rng);
    Array2::from_shape_fn((n, 3), |(r, c)| match c {
        0 | 1 => src[[r, c]],
        _ => src[[r, 0]] + src[[r, 1]] + 0.5 * src[[r, 2]],
    })
}

/// `(X, X + e1/2, X + e2/2)`.
pub fn redundancy_triplet(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let src = standard_normal(n, 3, rng);
    Array2::from_shape_fn((n, 3), |(r, c)| match c {
        0 => src[[r, 0]],
        _ => src[[r, 0]] + 0.5 * src[[r, c]],
    })
}

/// Independent variables with random pairwise mixing.
pub fn mixed_gaussian(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let src = standard_normal(n, d, rng);
    let mix = Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            1.0
        } else {
            rng.random_range(-0.8..0.8)
        }
    });
    src.dot(&mix)
}

/// Correlation model of `data` with its last column marked as the target.
pub fn model_with_last_as_target(data: &Array2<f64>) -> Result<CorrelationModel> {
    let mut cm = copula_transform(data.view())?;
    let last = cm.columns.len() - 1;
    cm.columns[last] = Column::Target;
    Ok(correlation_model(&cm))
}

pub const PLANTED_SYNERGY: [usize; 3] = [2, 5, 7];
pub const PLANTED_REDUNDANCY: [usize; 3] = [1, 3, 8];

/// Ten independent variables plus a target `x2 + x5 - x7 + 0.1 e`.
pub fn planted_synergy(n: usize, rng: &mut impl Rng) -> Result<CorrelationModel> {
    let mut data = standard_normal(n, 11, rng);
    for r in 0..n {
        let [a, b, c] = PLANTED_SYNERGY;
        data[[r, 10]] = data[[r, a]] + data[[r, b]] - data[[r, c]] + 0.1 * data[[r, 10]];
    }
    model_with_last_as_target(&data)
}

/// Ten variables where {1, 3, 8} are near copies of one source that also
/// drives the target; the rest are independent.
pub fn planted_redundancy(n: usize, rng: &mut impl Rng) -> Result<CorrelationModel> {
    let mut data = standard_normal(n, 11, rng);
    let source: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    for r in 0..n {
        for &c in &PLANTED_REDUNDANCY {
            data[[r, c]] = source[r] + 0.2 * data[[r, c]];
        }
        data[[r, 10]] = source[r] + 0.5 * data[[r, 10]];
    }
    model_with_last_as_target(&data)
}

/// Sample covariance with `1/(N-1)` normalization, row-major.
pub fn sample_covariance(data: &Array2<f64>) -> Vec<f64> {
    let (n, d) = data.dim();
    let means: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let s: f64 = (0..n)
                .map(|r| (data[[r, i]] - means[i]) * (data[[r, j]] - means[j]))
                .sum();
            cov[i * d + j] = s / (n - 1) as f64;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    cov
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub n: usize,
    pub seeds: usize,
    pub seed: u64,
    pub pair_subsets: usize,
    pub bias_trials: usize,
    pub bias_n: usize,
    pub planted_trials: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            n: 10_000,
            seeds: 30,
            seed: 0,
            pair_subsets: 200,
            bias_trials: 1000,
            bias_n: 200,
            planted_trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub measured: f64,
    pub expected: f64,
    /// What `measured` is compared against `expected` with.
    pub criterion: Criterion,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// `|measured - expected| <= tol`.
    Within(f64),
    /// `measured < expected`.
    Below,
    /// `measured >= expected`.
    AtLeast,
}

impl OracleCheck {
    fn new(name: &'static str, measured: f64, expected: f64, criterion: Criterion) -> Self {
        let passed = match criterion {
            Criterion::Within(tol) => (measured - expected).abs() <= tol,
            Criterion::Below => measured < expected,
            Criterion::AtLeast => measured >= expected,
        };
        OracleCheck {
            name,
            measured,
            expected,
            criterion,
            passed: passed && measured.is_finite(),
        }
    }
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let rule = match self.criterion {
            Criterion::Within(tol) => format!("|measured - expected| <= {tol}"),
            Criterion::Below => "measured < expected".to_string(),
            Criterion::AtLeast => "measured >= expected".to_string(),
        };
        write!(
            f,
            "{verdict} {:<22} measured {:>+.6e} expected {:>+.6e} ({rule})",
            self.name, self.measured, self.expected
        )
    }
}

/// Largest |Omega| over random pairs drawn from random mixed models.
pub fn check_pair_identity(opts: &OracleOptions) -> Result<OracleCheck> {
    let per_model = 10;
    let models = opts.pair_subsets.div_ceil(per_model);
    let worst = (0..models as u64)
        .into_par_iter()
        .map(|m| {
            let mut rng = rng_for(opts.seed.wrapping_add(m), 1);
            let d = rng.random_range(3..=8);
            let model = correlation_model(&copula_transform(mixed_gaussian(500, d, &mut rng).view())?);
            let mut worst = 0.0f64;
            for _ in 0..per_model {
                let a = rng.random_range(0..d);
                let b = (a + rng.random_range(1..d)) % d;
                worst = worst.max(omega(&model, &[a, b])?.value.abs());
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(OracleCheck::new("pair-identity", worst, 0.0, Criterion::Within(1e-9)))
}

fn triplet_mean(opts: &OracleOptions, stream: u64, gen: fn(usize, &mut ChaCha8Rng) -> Array2<f64>) -> Result<f64> {
    let values = (0..opts.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_for(opts.seed.wrapping_add(s), stream);
            let data = gen(opts.n, &mut rng);
            let model = correlation_model(&copula_transform(data.view())?);
            Ok(omega(&model, &[0, 1, 2])?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn check_synergy_triplet(opts: &OracleOptions) -> Result<OracleCheck> {
    let m = triplet_mean(opts, 2, synergy_triplet)?;
    Ok(OracleCheck::new("triplet-synergistic", m, synergy_triplet_omega(), Criterion::Within(0.05)))
}

pub fn check_redundancy_triplet(opts: &OracleOptions) -> Result<OracleCheck> {
    let m = triplet_mean(opts, 3, redundancy_triplet)?;
    Ok(OracleCheck::new(
        "triplet-redundant",
        m,
        redundancy_triplet_omega(),
        Criterion::Within(0.05),
    ))
}

/// Every neuron subset of size 2..=5 of five independent variables, joined
/// with an independent 10-class target; the largest seed-averaged |Omega|.
pub fn check_independence_null(opts: &OracleOptions) -> Result<OracleCheck> {
    let subsets: Vec<Vec<usize>> = (1u32..32)
        .filter(|m| m.count_ones() >= 2)
        .map(|m| (0..5).filter(|i| m & (1 << i) != 0).chain([5]).collect())
        .collect();
    let per_seed = (0..opts.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng_for(opts.seed.wrapping_add(s), 4);
            let feats = standard_normal(opts.n, 5, &mut rng);
            let labels: Vec<u8> = (0..opts.n).map(|_| rng.random_range(0..10u8)).collect();
            let model = correlation_model(&copula_transform_with_target(feats.view(), &labels)?);
            subsets
                .iter()
                .map(|sub| Ok(omega(&model, sub)?.value))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = (0..subsets.len())
        .map(|j| (per_seed.iter().map(|v| v[j]).sum::<f64>() / per_seed.len() as f64).abs())
        .fold(0.0, f64::max);
    Ok(OracleCheck::new("independence-null", worst, 0.0, Criterion::Within(0.05)))
}

/// Mean entropy errors `(corrected, uncorrected)` of the sample-covariance
/// estimator on a 5-dimensional identity Gaussian.
pub fn bias_errors(opts: &OracleOptions) -> Result<(f64, f64)> {
    let d = 5;
    let truth = 0.5 * d as f64 * (2.0 * PI * E).ln();
    let errs = (0..opts.bias_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(opts.seed.wrapping_add(t), 5);
            let cov = sample_covariance(&standard_normal(opts.bias_n, d, &mut rng));
            Ok((
                gaussian_entropy(&cov, d, opts.bias_n, true)? - truth,
                gaussian_entropy(&cov, d, opts.bias_n, false)? - truth,
            ))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let n = errs.len() as f64;
    Ok((
        errs.iter().map(|e| e.0).sum::<f64>() / n,
        errs.iter().map(|e| e.1).sum::<f64>() / n,
    ))
}

pub fn check_bias_correction(opts: &OracleOptions) -> Result<OracleCheck> {
    let (corrected, uncorrected) = bias_errors(opts)?;
    Ok(OracleCheck::new(
        "bias-correction",
        corrected.abs(),
        uncorrected.abs(),
        Criterion::Below,
    ))
}

/// Fraction of trials in which the k = 3 search returns the planted set.
pub fn planted_recovery_rate(opts: &OracleOptions, objective: Objective) -> Result<f64> {
    let (stream, planted) = match objective {
        Objective::Synergy => (6, PLANTED_SYNERGY),
        Objective::Redundancy => (7, PLANTED_REDUNDANCY),
    };
    let hits = (0..opts.planted_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(opts.seed.wrapping_add(t), stream);
            let model = match objective {
                Objective::Synergy => planted_synergy(opts.n, &mut rng)?,
                Objective::Redundancy => planted_redundancy(opts.n, &mut rng)?,
            };
            let best = exhaustive_search(&model, 10, 3, objective, &SearchOptions::default())?;
            Ok(best.neuron_indices == planted)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64)
}

pub fn check_planted_synergy(opts: &OracleOptions) -> Result<OracleCheck> {
    let rate = planted_recovery_rate(opts, Objective::Synergy)?;
    Ok(OracleCheck::new("planted-synergy", rate, 0.95, Criterion::AtLeast))
}

pub fn check_planted_redundancy(opts: &OracleOptions) -> Result<OracleCheck> {
    let rate = planted_recovery_rate(opts, Objective::Redundancy)?;
    Ok(OracleCheck::new("planted-redundancy", rate, 0.95, Criterion::AtLeast))
}

/// The full suite, in a fixed order.
pub fn run_suite(opts: &OracleOptions) -> Result<Vec<OracleCheck>> {
    if opts.n < 8 || opts.seeds == 0 {
        return Err(Error::InvalidConfig("oracle needs n >= 8 and at least one seed".into()));
    }
    Ok(vec![
        check_pair_identity(opts)?,
        check_synergy_triplet(opts)?,
        check_redundancy_triplet(opts)?,
        check_independence_null(opts)?,
        check_bias_correction(opts)?,
        check_planted_synergy(opts)?,
        check_planted_redundancy(opts)?,
    ])
}
