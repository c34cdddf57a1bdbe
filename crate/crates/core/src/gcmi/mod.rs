//! Gaussian-copula transform and closed-form Gaussian entropies.
//!
//! Every column is mapped through its empirical CDF (midranks over `N + 1`)
//! and the standard normal quantile. All subset entropies are then read off
//! one correlation matrix of the copula scores: a subset entropy is a
//! log-determinant of a principal submatrix, never a pass over the data.

mod linalg;
mod mi;
mod normal;

use std::f64::consts::{E, PI};

use ndarray::{Array2, ArrayView2};
use statrs::function::gamma::digamma;

pub use linalg::{cholesky_logdet, gather_principal};
pub use mi::{mi_anova, mi_mixture, MixtureOptions, DEFAULT_MIXTURE_DRAWS};
pub use normal::norm_quantile;

use crate::error::{Error, Result};

/// Where a copula column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Column {
    /// Feature column (neuron index within its layer, or synthetic variable).
    Feature(usize),
    /// Class labels.
    Target,
}

/// Copula-normal scores, one column per source variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaMatrix {
    pub values: Array2<f64>,
    pub columns: Vec<Column>,
}

impl CopulaMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }
}

/// Midranks (1-based) of `x`; tied values share the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Copula-normal scores of one column: `norm_quantile(rank / (N + 1))`.
///
/// Mirrored ranks map to exactly negated scores, so a column's scores sum to
/// zero up to rounding.
pub fn copnorm(x: &[f64], column: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { column });
    }
    let first = x[0];
    if x.iter().all(|&v| v == first) {
        return Err(Error::ConstantColumn { column });
    }
    let denom = (n + 1) as f64;
    Ok(midranks(x)
        .into_iter()
        .map(|r| {
            let mirror = denom - r;
            if r <= mirror {
                norm_quantile(r / denom)
            } else {
                -norm_quantile(mirror / denom)
            }
        })
        .collect())
}

/// Column-wise copula transform of an `N x d` data matrix.
pub fn copula_transform(data: ArrayView2<'_, f64>) -> Result<CopulaMatrix> {
    let (n, d) = data.dim();
    let mut values = Array2::zeros((n, d));
    for j in 0..d {
        let col: Vec<f64> = data.column(j).to_vec();
        let z = copnorm(&col, j)?;
        values.column_mut(j).assign(&ndarray::Array1::from(z));
    }
    Ok(CopulaMatrix {
        values,
        columns: (0..d).map(Column::Feature).collect(),
    })
}

/// Copula transform of the feature columns followed by the label column
/// (midranks over the tied class groups), which is appended last.
pub fn copula_transform_with_target(
    features: ArrayView2<'_, f64>,
    labels: &[u8],
) -> Result<CopulaMatrix> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            field: "label count",
            expected: features.nrows(),
            found: labels.len(),
        });
    }
    let d = features.ncols();
    let mut cm = copula_transform(features)?;
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let zy = copnorm(&y, d)?;
    let mut values = Array2::zeros((labels.len(), d + 1));
    values.slice_mut(ndarray::s![.., ..d]).assign(&cm.values);
    values.column_mut(d).assign(&ndarray::Array1::from(zy));
    cm.values = values;
    cm.columns.push(Column::Target);
    Ok(cm)
}

/// Estimator switches shared by every entropy evaluated from a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyOptions {
    pub bias_correct: bool,
    /// Added to the diagonal of every submatrix before factorization.
    pub jitter: Option<f64>,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        EntropyOptions {
            bias_correct: true,
            jitter: None,
        }
    }
}

/// Correlation matrix of copula scores plus the sample count behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    corr: Vec<f64>,
    dim: usize,
    n_samples: usize,
    columns: Vec<Column>,
    options: EntropyOptions,
}

impl CorrelationModel {
    /// Builds a model from an explicit correlation matrix (row-major, `dim x dim`).
    pub fn from_correlation(
        corr: Vec<f64>,
        dim: usize,
        n_samples: usize,
        columns: Vec<Column>,
    ) -> Result<Self> {
        if corr.len() != dim * dim || columns.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "correlation of {} entries and {} columns for dimension {dim}",
                corr.len(),
                columns.len()
            )));
        }
        for i in 0..dim {
            for j in 0..dim {
                let v = corr[i * dim + j];
                if (i == j && (v - 1.0).abs() > 1e-12)
                    || !(-1.0..=1.0).contains(&v)
                    || v != corr[j * dim + i]
                {
                    return Err(Error::ShapeMismatch(format!(
                        "not a correlation matrix at ({i}, {j}): {v}"
                    )));
                }
            }
        }
        Ok(CorrelationModel {
            corr,
            dim,
            n_samples,
            columns,
            options: EntropyOptions::default(),
        })
    }

    pub fn with_options(mut self, options: EntropyOptions) -> Self {
        self.options = options;
        self
    }

    pub fn options(&self) -> EntropyOptions {
        self.options
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Matrix position of the label column, if the model has one.
    pub fn target_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| *c == Column::Target)
    }

    /// Matrix positions of the feature columns, in column order.
    pub fn feature_indices(&self) -> Vec<usize> {
        (0..self.dim)
            .filter(|&i| self.columns[i] != Column::Target)
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.corr[i * self.dim + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.corr
    }
}

/// Sample correlation of the copula scores (`1/(N-1)` normalization, unit diagonal).
pub fn correlation_model(cm: &CopulaMatrix) -> CorrelationModel {
    let (n, d) = cm.values.dim();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let c = cm.values.column(j);
            let mean = c.sum() / n as f64;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let denom = (n.max(2) - 1) as f64;
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let s: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            cov[i * d + j] = s / denom;
            cov[j * d + i] = s / denom;
        }
    }
    let mut corr = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            corr[i * d + j] = if i == j {
                1.0
            } else {
                (cov[i * d + j] / (cov[i * d + i] * cov[j * d + j]).sqrt()).clamp(-1.0, 1.0)
            };
        }
    }
    CorrelationModel {
        corr,
        dim: d,
        n_samples: n,
        columns: cm.columns.clone(),
        options: EntropyOptions::default(),
    }
}

/// Entropy of a Gaussian fit, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub dimension: usize,
    pub bias_corrected: bool,
}

/// Amount subtracted from a sample-covariance log-determinant to remove its
/// small-sample bias: `sum_{i=1..d} digamma((N-i)/2) + d ln(2/(N-1))`.
pub fn logdet_bias(d: usize, n_samples: usize) -> Result<f64> {
    if n_samples <= d + 1 {
        return Err(Error::TooFewSamples {
            needed: d + 2,
            got: n_samples,
        });
    }
    let n = n_samples as f64;
    let psi: f64 = (1..=d).map(|i| digamma((n - i as f64) / 2.0)).sum();
    Ok(psi + d as f64 * (2.0 / (n - 1.0)).ln())
}

/// `(d/2) ln(2 pi e) + ln det / 2`, optionally bias-corrected for `n_samples`.
pub fn gaussian_entropy_from_logdet(
    logdet: f64,
    d: usize,
    n_samples: usize,
    bias_correct: bool,
) -> Result<f64> {
    let logdet = if bias_correct {
        logdet - logdet_bias(d, n_samples)?
    } else {
        logdet
    };
    Ok(0.5 * d as f64 * (2.0 * PI * E).ln() + 0.5 * logdet)
}

/// Entropy of a Gaussian with covariance `cov` (row-major `d x d`) estimated
/// from `n_samples` observations.
pub fn gaussian_entropy(cov: &[f64], d: usize, n_samples: usize, bias_correct: bool) -> Result<f64> {
    let mut a = cov.to_vec();
    let logdet = cholesky_logdet(&mut a, d).ok_or_else(|| Error::SingularSubmatrix {
        subset: (0..d).collect(),
    })?;
    gaussian_entropy_from_logdet(logdet, d, n_samples, bias_correct)
}

pub(crate) fn validate_subset(model: &CorrelationModel, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::InvalidSubset {
            subset: vec![],
            reason: "empty".into(),
        });
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= model.dim) {
        return Err(Error::InvalidSubset {
            subset: subset.to_vec(),
            reason: format!("index {bad} out of range for dimension {}", model.dim),
        });
    }
    for (a, &i) in subset.iter().enumerate() {
        if subset[..a].contains(&i) {
            return Err(Error::InvalidSubset {
                subset: subset.to_vec(),
                reason: format!("index {i} repeated"),
            });
        }
    }
    Ok(())
}

/// Entropy of the copula-Gaussian restricted to `subset`, without validation.
pub(crate) fn subset_entropy_unchecked(
    model: &CorrelationModel,
    subset: &[usize],
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    let k = subset.len();
    gather_principal(&model.corr, model.dim, subset, scratch);
    if let Some(eps) = model.options.jitter {
        for i in 0..k {
            scratch[i * k + i] += eps;
        }
    }
    let logdet = cholesky_logdet(scratch, k).ok_or_else(|| Error::SingularSubmatrix {
        subset: subset.to_vec(),
    })?;
    gaussian_entropy_from_logdet(logdet, k, model.n_samples, model.options.bias_correct)
}

/// Joint entropy of the columns in `subset`, from a Cholesky factorization of
/// the corresponding correlation submatrix. The subset is sorted first, so the
/// value does not depend on index order.
pub fn subset_entropy(model: &CorrelationModel, subset: &[usize]) -> Result<EntropyEstimate> {
    validate_subset(model, subset)?;
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    let mut scratch = Vec::new();
    Ok(EntropyEstimate {
        value: subset_entropy_unchecked(model, &sorted, &mut scratch)?,
        dimension: subset.len(),
        bias_corrected: model.options.bias_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    fn half_ln_2pie() -> f64 {
        0.5 * (2.0 * PI * E).ln()
    }

    #[test]
    fn quartile_column() {
        let cm = copula_transform(array![[3.0], [1.0], [2.0]].view()).unwrap();
        let z = cm.values.column(0).to_vec();
        assert!((z[0] - 0.6745).abs() < 1e-4);
        assert!((z[1] + 0.6745).abs() < 1e-4);
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn ties_get_midranks() {
        assert_eq!(midranks(&[1.0, 1.0, 2.0, 2.0]), vec![1.5, 1.5, 3.5, 3.5]);
        assert_eq!(midranks(&[5.0, 1.0, 5.0, 0.0, 5.0]), vec![4.0, 2.0, 4.0, 1.0, 4.0]);
    }

    #[test]
    fn constant_column_is_rejected() {
        let err = copula_transform(array![[1.0, 2.0], [3.0, 2.0], [0.0, 2.0]].view()).unwrap_err();
        assert!(matches!(err, Error::ConstantColumn { column: 1 }));
        assert!(matches!(
            copnorm(&[1.0, 2.0], 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn copula_columns_are_centered_and_near_unit_variance() {
        let data = normal_matrix(10_000, 3, 1).mapv(|v: f64| v.powi(3) + 2.0);
        let cm = copula_transform(data.view()).unwrap();
        for c in cm.values.columns() {
            let mean = c.sum() / c.len() as f64;
            let var = c.iter().map(|v| v * v).sum::<f64>() / (c.len() - 1) as f64;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn identical_columns_correlate_fully() {
        let x = normal_matrix(50, 1, 2);
        let mut data = Array2::zeros((50, 2));
        data.column_mut(0).assign(&x.column(0));
        data.column_mut(1).assign(&x.column(0));
        let m = correlation_model(&copula_transform(data.view()).unwrap());
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn single_column_model_is_unit() {
        let m = correlation_model(&copula_transform(normal_matrix(10, 1, 3).view()).unwrap());
        assert_eq!(m.matrix(), &[1.0]);
    }

    #[test]
    fn independent_columns_are_nearly_uncorrelated() {
        let m = correlation_model(&copula_transform(normal_matrix(10_000, 2, 4).view()).unwrap());
        assert!(m.get(0, 1).abs() < 0.05);
    }

    #[test]
    fn target_is_appended_last() {
        let feats = normal_matrix(40, 2, 5);
        let labels: Vec<u8> = (0..40).map(|i| (i % 10) as u8).collect();
        let cm = copula_transform_with_target(feats.view(), &labels).unwrap();
        assert_eq!(cm.columns, vec![Column::Feature(0), Column::Feature(1), Column::Target]);
        let m = correlation_model(&cm);
        assert_eq!(m.target_index(), Some(2));
        assert_eq!(m.feature_indices(), vec![0, 1]);
        // ten tied groups -> ten distinct scores
        let mut distinct: Vec<f64> = cm.values.column(2).to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn closed_form_entropies() {
        let m = CorrelationModel::from_correlation(
            vec![1.0, 0.5, 0.5, 1.0],
            2,
            1000,
            vec![Column::Feature(0), Column::Feature(1)],
        )
        .unwrap()
        .with_options(EntropyOptions {
            bias_correct: false,
            jitter: None,
        });
        let h1 = subset_entropy(&m, &[0]).unwrap();
        assert!((h1.value - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!((h1.value - 1.41894).abs() < 1e-5);
        let h2 = subset_entropy(&m, &[0, 1]).unwrap();
        let expected = (2.0 * PI * E).ln() + 0.5 * 0.75f64.ln();
        assert!((h2.value - expected).abs() < 1e-12);
        assert!((h2.value - 2.69404).abs() < 1e-5);
        assert_eq!(h2.dimension, 2);
        assert!(!h2.bias_corrected);
    }

    #[test]
    fn bias_term_matches_direct_formula() {
        // N = 7, d = 2: digamma(3) + digamma(2.5) + 2 ln(1/3)
        let psi3 = 1.5 - 0.577_215_664_901_532_9;
        let psi25 = 2.0 - 0.577_215_664_901_532_9 - 2.0 * 2f64.ln() + 2.0 / 3.0;
        let expected = psi3 + psi25 + 2.0 * (2.0f64 / 6.0).ln();
        assert!((logdet_bias(2, 7).unwrap() - expected).abs() < 1e-12);
        assert!(logdet_bias(3, 4).is_err());
    }

    #[test]
    fn subset_validation_and_singularity() {
        let m = CorrelationModel::from_correlation(
            vec![1.0, 1.0, 1.0, 1.0],
            2,
            100,
            vec![Column::Feature(0), Column::Feature(1)],
        )
        .unwrap();
        assert!(matches!(subset_entropy(&m, &[]), Err(Error::InvalidSubset { .. })));
        assert!(matches!(subset_entropy(&m, &[0, 0]), Err(Error::InvalidSubset { .. })));
        assert!(matches!(subset_entropy(&m, &[2]), Err(Error::InvalidSubset { .. })));
        assert!(matches!(
            subset_entropy(&m, &[0, 1]),
            Err(Error::SingularSubmatrix { .. })
        ));
        let jittered = m.with_options(EntropyOptions {
            bias_correct: true,
            jitter: Some(1e-10),
        });
        assert!(subset_entropy(&jittered, &[0, 1]).unwrap().value.is_finite());
    }

    #[test]
    fn subset_entropy_is_order_invariant() {
        let data = normal_matrix(500, 4, 6);
        let mut mixed = data.clone();
        for r in 0..500 {
            mixed[[r, 1]] += data[[r, 0]];
            mixed[[r, 3]] -= 0.5 * data[[r, 2]];
        }
        let m = correlation_model(&copula_transform(mixed.view()).unwrap());
        let a = subset_entropy(&m, &[0, 1, 3]).unwrap().value;
        let b = subset_entropy(&m, &[3, 0, 1]).unwrap().value;
        assert_eq!(a, b);
    }

    #[test]
    fn recovers_analytic_entropy_of_correlated_gaussian() {
        // Sigma = L L^T with unit diagonal: x1 = z1, x2 = 0.6 z1 + 0.8 z2
        let expected = 2.0 * half_ln_2pie() + 0.5 * (1.0f64 - 0.36).ln();
        let mut total = 0.0;
        for seed in 0..30 {
            let z = normal_matrix(10_000, 2, 100 + seed);
            let mut x = z.clone();
            for r in 0..10_000 {
                x[[r, 1]] = 0.6 * z[[r, 0]] + 0.8 * z[[r, 1]];
            }
            let m = correlation_model(&copula_transform(x.view()).unwrap());
            total += subset_entropy(&m, &[0, 1]).unwrap().value;
        }
        assert!((total / 30.0 - expected).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn copula_is_rank_invariant(seed in any::<u64>(), shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
            let data = normal_matrix(60, 2, seed);
            let warped = data.mapv(|v| (scale * v + shift).exp() + v.powi(3));
            let a = copula_transform(data.view()).unwrap();
            let b = copula_transform(warped.view()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn copula_column_means_vanish(seed in any::<u64>(), n in 3usize..400) {
            // distinct values: the midranks are mirror-symmetric
            let data = normal_matrix(n, 1, seed);
            let cm = copula_transform(data.view()).unwrap();
            let mean = cm.values.column(0).sum() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }
}
