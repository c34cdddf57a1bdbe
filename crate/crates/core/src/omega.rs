//! O-information of a variable subset:
//!
//! ```text
//! Omega(Z) = (n - 2) H(Z) + sum_j [ H(Z_j) - H(Z \ Z_j) ]
//! ```
//!
//! Positive values mean the subset is redundancy-dominated, negative values
//! synergy-dominated. Every entropy is a submatrix log-determinant of the
//! shared [`CorrelationModel`], so evaluating a subset never touches samples.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gcmi::{subset_entropy_unchecked, validate_subset, CorrelationModel};

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaValue {
    /// Nats.
    pub value: f64,
    /// Model column positions, ascending.
    pub subset: Vec<usize>,
    pub n: usize,
    pub includes_target: bool,
}

impl OmegaValue {
    pub fn is_redundant(&self) -> bool {
        self.value > 0.0
    }

    pub fn is_synergistic(&self) -> bool {
        self.value < 0.0
    }
}

/// Reusable buffers for repeated evaluations.
#[derive(Debug, Default)]
pub(crate) struct OmegaScratch {
    matrix: Vec<f64>,
    complement: Vec<usize>,
}

/// The subsets whose entropies make up Omega of `subset`: the full set, each
/// leave-one-out complement and each singleton.
pub fn entropy_plan(subset: &[usize]) -> Vec<Vec<usize>> {
    let mut plan = vec![subset.to_vec()];
    for j in 0..subset.len() {
        plan.push(
            subset
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &v)| v)
                .collect(),
        );
    }
    plan.extend(subset.iter().map(|&v| vec![v]));
    plan
}

/// Omega of an ascending, validated subset of size >= 2.
pub(crate) fn omega_sorted(
    model: &CorrelationModel,
    subset: &[usize],
    scratch: &mut OmegaScratch,
) -> Result<f64> {
    let n = subset.len();
    let joint = subset_entropy_unchecked(model, subset, &mut scratch.matrix)?;
    let mut total = (n as f64 - 2.0) * joint;
    for j in 0..n {
        scratch.complement.clear();
        scratch
            .complement
            .extend(subset.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &v)| v));
        let rest = subset_entropy_unchecked(model, &scratch.complement, &mut scratch.matrix)?;
        let single = subset_entropy_unchecked(model, &subset[j..j + 1], &mut scratch.matrix)?;
        total += single - rest;
    }
    Ok(total)
}

fn prepare(model: &CorrelationModel, subset: &[usize]) -> Result<Vec<usize>> {
    validate_subset(model, subset)?;
    if subset.len() < 2 {
        return Err(Error::InvalidSubset {
            subset: subset.to_vec(),
            reason: "O-information needs at least two variables".into(),
        });
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    Ok(sorted)
}

/// O-information of the model columns in `subset` (any order; the result is
/// computed on the sorted subset, so it is exactly order-invariant).
pub fn omega(model: &CorrelationModel, subset: &[usize]) -> Result<OmegaValue> {
    let sorted = prepare(model, subset)?;
    let value = omega_sorted(model, &sorted, &mut OmegaScratch::default())?;
    let target = model.target_index();
    Ok(OmegaValue {
        value,
        n: sorted.len(),
        includes_target: target.is_some_and(|t| sorted.contains(&t)),
        subset: sorted,
    })
}

/// Evaluates every subset independently; failures are reported per entry and
/// the output order matches the input.
pub fn omega_batch(model: &CorrelationModel, subsets: &[Vec<usize>]) -> Vec<Result<OmegaValue>> {
    subsets.par_iter().map(|s| omega(model, s)).collect()
}
