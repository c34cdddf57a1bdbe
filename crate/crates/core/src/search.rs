//! Extremal multiplet search.
//!
//! For each size `k` the search looks for the `k` neurons whose O-information
//! together with the target column is lowest (synergy) or highest (redundancy).
//! Sizes up to the exhaustive ceiling (6 by default) are searched over every
//! combination; beyond it the best multiplet is grown one neuron at a time.
//!
//! Exhaustive candidates are enumerated in lexicographic order and split into
//! fixed-size rank ranges that are evaluated in parallel. Each range keeps its
//! first strictly-best candidate and the ranges are reduced in rank order, so
//! the winner is the lexicographically smallest optimum regardless of how many
//! worker threads ran.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gcmi::{Column, CorrelationModel};
use crate::mlp::LayerId;
use crate::omega::{omega_sorted, OmegaScratch};

pub const DEFAULT_EXHAUSTIVE_CEILING: usize = 6;
const RANK_CHUNK: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Objective {
    /// Minimize Omega.
    Synergy,
    /// Maximize Omega.
    Redundancy,
}

impl Objective {
    pub const BOTH: [Objective; 2] = [Objective::Synergy, Objective::Redundancy];

    /// True when `a` is strictly preferable to `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::Synergy => a < b,
            Objective::Redundancy => a > b,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Synergy => "synergy",
            Objective::Redundancy => "redundancy",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synergy" => Ok(Objective::Synergy),
            "redundancy" => Ok(Objective::Redundancy),
            _ => Err(Error::InvalidConfig(format!("unknown objective {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Exhaustive,
    Greedy,
}

impl fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMethod::Exhaustive => "exhaustive",
            SearchMethod::Greedy => "greedy",
        })
    }
}

/// A set of neurons with the O-information of those neurons plus the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplet {
    pub layer: Option<LayerId>,
    /// Ascending neuron indices (feature numbers within the layer).
    pub neuron_indices: Vec<usize>,
    pub k: usize,
    pub omega: f64,
    pub objective: Objective,
    pub method: SearchMethod,
    pub candidates_evaluated: u64,
}

impl Multiplet {
    /// Model column positions evaluated for this multiplet, target included.
    pub fn model_subset(&self, space: &SearchSpace) -> Vec<usize> {
        space.subset_for(&self.neuron_indices)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchProfile {
    pub objective: Objective,
    /// One entry per `k` in `2..=k_max`, ascending.
    pub entries: Vec<Multiplet>,
}

impl SearchProfile {
    pub fn get(&self, k: usize) -> Option<&Multiplet> {
        self.entries.iter().find(|m| m.k == k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub exhaustive_ceiling: usize,
    pub layer: Option<LayerId>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            exhaustive_ceiling: DEFAULT_EXHAUSTIVE_CEILING,
            layer: None,
        }
    }
}

/// Maps neuron indices to model column positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    /// `positions[i]` is the model column of neuron `i`.
    positions: Vec<usize>,
    target: usize,
}

impl SearchSpace {
    /// Neurons `0..n_neurons` must be present as `Column::Feature` columns, and
    /// the model must carry a target column.
    pub fn new(model: &CorrelationModel, n_neurons: usize) -> Result<Self> {
        let target = model
            .target_index()
            .ok_or_else(|| Error::InvalidConfig("model has no target column".into()))?;
        let positions = (0..n_neurons)
            .map(|i| {
                model
                    .columns()
                    .iter()
                    .position(|c| *c == Column::Feature(i))
                    .ok_or_else(|| Error::InvalidConfig(format!("model has no column for neuron {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SearchSpace { positions, target })
    }

    pub fn n_neurons(&self) -> usize {
        self.positions.len()
    }

    pub fn subset_for(&self, neurons: &[usize]) -> Vec<usize> {
        let mut s: Vec<usize> = neurons.iter().map(|&i| self.positions[i]).collect();
        s.push(self.target);
        s.sort_unstable();
        s
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// The `rank`-th `k`-combination of `0..n` in lexicographic order.
pub fn unrank_combination(n: usize, k: usize, mut rank: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut x = 0;
    for i in 0..k {
        loop {
            let c = binomial(n - x - 1, k - i - 1);
            if rank < c {
                out.push(x);
                x += 1;
                break;
            }
            rank -= c;
            x += 1;
        }
    }
    out
}

/// Advances `comb` to the next lexicographic combination of `0..n`.
pub fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

struct Best {
    omega: f64,
    neurons: Vec<usize>,
}

fn keep_better(objective: Objective, current: Option<Best>, cand: Best) -> Option<Best> {
    match current {
        Some(b) if !objective.better(cand.omega, b.omega) => Some(b),
        _ => Some(cand),
    }
}

fn check_k(k: usize, n_neurons: usize, ceiling: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("multiplet size {k} is below 2")));
    }
    if k > ceiling {
        return Err(Error::KTooLarge { k, ceiling });
    }
    if k > n_neurons {
        return Err(Error::InvalidConfig(format!(
            "multiplet size {k} exceeds layer width {n_neurons}"
        )));
    }
    Ok(())
}

fn evaluate_range(
    model: &CorrelationModel,
    space: &SearchSpace,
    k: usize,
    objective: Objective,
    start: u64,
    end: u64,
) -> Result<Option<Best>> {
    let n = space.n_neurons();
    let mut comb = unrank_combination(n, k, start);
    let mut scratch = OmegaScratch::default();
    let mut best: Option<Best> = None;
    for rank in start..end {
        let subset = space.subset_for(&comb);
        let omega = omega_sorted(model, &subset, &mut scratch)?;
        if best.as_ref().is_none_or(|b| objective.better(omega, b.omega)) {
            best = Some(Best {
                omega,
                neurons: comb.clone(),
            });
        }
        if rank + 1 < end {
            next_combination(&mut comb, n);
        }
    }
    Ok(best)
}

/// Best `k`-neuron multiplet over all `C(n_neurons, k)` combinations.
pub fn exhaustive_search(
    model: &CorrelationModel,
    n_neurons: usize,
    k: usize,
    objective: Objective,
    options: &SearchOptions,
) -> Result<Multiplet> {
    check_k(k, n_neurons, options.exhaustive_ceiling)?;
    let space = SearchSpace::new(model, n_neurons)?;
    let total = binomial(n_neurons, k);
    let ranges: Vec<(u64, u64)> = (0..total.div_ceil(RANK_CHUNK))
        .map(|c| (c * RANK_CHUNK, ((c + 1) * RANK_CHUNK).min(total)))
        .collect();
    let partial: Vec<Result<Option<Best>>> = ranges
        .par_iter()
        .map(|&(s, e)| evaluate_range(model, &space, k, objective, s, e))
        .collect();
    let mut best = None;
    for r in partial {
        if let Some(b) = r? {
            best = keep_better(objective, best, b);
        }
    }
    let best = best.expect("at least one combination");
    Ok(Multiplet {
        layer: options.layer,
        neuron_indices: best.neurons,
        k,
        omega: best.omega,
        objective,
        method: SearchMethod::Exhaustive,
        candidates_evaluated: total,
    })
}

/// Best single-neuron extension of `base`; ties go to the smallest new index.
pub fn greedy_extend(
    model: &CorrelationModel,
    n_neurons: usize,
    base: &Multiplet,
    objective: Objective,
) -> Result<Multiplet> {
    if base.k < 2 {
        return Err(Error::InvalidConfig("greedy extension needs a base of size >= 2".into()));
    }
    let space = SearchSpace::new(model, n_neurons)?;
    let candidates: Vec<usize> = (0..n_neurons)
        .filter(|i| !base.neuron_indices.contains(i))
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoCandidates {
            k: base.k,
            width: n_neurons,
        });
    }
    let mut scratch = OmegaScratch::default();
    let mut best: Option<Best> = None;
    for &c in &candidates {
        let mut neurons = base.neuron_indices.clone();
        neurons.push(c);
        neurons.sort_unstable();
        let omega = omega_sorted(model, &space.subset_for(&neurons), &mut scratch)?;
        best = keep_better(objective, best, Best { omega, neurons });
    }
    let best = best.expect("non-empty candidates");
    Ok(Multiplet {
        layer: base.layer,
        neuron_indices: best.neurons,
        k: base.k + 1,
        omega: best.omega,
        objective,
        method: SearchMethod::Greedy,
        candidates_evaluated: candidates.len() as u64,
    })
}

/// Exhaustive entries for `k` up to the ceiling, then a greedy chain grown from
/// the ceiling-size winner up to `k_max`.
pub fn search_profile(
    model: &CorrelationModel,
    n_neurons: usize,
    k_max: usize,
    objective: Objective,
    options: &SearchOptions,
) -> Result<SearchProfile> {
    if k_max < 2 || k_max > n_neurons {
        return Err(Error::InvalidConfig(format!(
            "k_max {k_max} must lie in 2..={n_neurons}"
        )));
    }
    let mut entries = Vec::with_capacity(k_max - 1);
    let exhaustive_top = k_max.min(options.exhaustive_ceiling.max(2));
    for k in 2..=exhaustive_top {
        entries.push(exhaustive_search(model, n_neurons, k, objective, options)?);
    }
    for _ in exhaustive_top + 1..=k_max {
        let next = greedy_extend(model, n_neurons, entries.last().unwrap(), objective)?;
        entries.push(next);
    }
    Ok(SearchProfile { objective, entries })
}
