//! Copula mutual information between one continuous column and class labels.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{copnorm, gaussian_entropy_from_logdet};
use crate::error::{Error, Result};

pub const DEFAULT_MIXTURE_DRAWS: usize = 10_000;

/// Normal-consistent scale factor for the median absolute deviation.
const MAD_TO_SD: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixtureOptions {
    pub draws: usize,
    pub seed: u64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions {
            draws: DEFAULT_MIXTURE_DRAWS,
            seed: 0,
        }
    }
}

/// Sample indices per class; at least two classes of at least three samples.
fn class_groups(n: usize, labels: &[u8]) -> Result<BTreeMap<u8, Vec<usize>>> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            field: "label count",
            expected: n,
            found: labels.len(),
        });
    }
    let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::DegenerateClass {
            class: groups.keys().next().map_or(-1, |&c| i64::from(c)),
            reason: "at least two classes are required".into(),
        });
    }
    if let Some((&c, idx)) = groups.iter().find(|(_, idx)| idx.len() < 3) {
        return Err(Error::DegenerateClass {
            class: i64::from(c),
            reason: format!("{} samples, need at least 3", idx.len()),
        });
    }
    Ok(groups)
}

fn mean_var(x: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = x.clone().count() as f64;
    let mean = x.clone().sum::<f64>() / n;
    let ss: f64 = x.map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn entropy_1d(var: f64, n: usize) -> Result<f64> {
    gaussian_entropy_from_logdet(var.ln(), 1, n, true)
}

/// Gaussian-copula MI from a single Gaussian fit of the copula column against
/// class-conditional Gaussian fits (ANOVA-style decomposition), bias-corrected.
pub fn mi_anova(x: &[f64], labels: &[u8]) -> Result<f64> {
    let groups = class_groups(x.len(), labels)?;
    let z = copnorm(x, 0)?;
    let n = z.len();
    let (_, var) = mean_var(z.iter().copied());
    let h_marginal = entropy_1d(var, n)?;
    let mut h_cond = 0.0;
    for (&c, idx) in &groups {
        let (_, v) = mean_var(idx.iter().map(|&i| z[i]));
        if v.is_nan() || v <= 0.0 {
            return Err(Error::DegenerateClass {
                class: i64::from(c),
                reason: "zero variance".into(),
            });
        }
        h_cond += idx.len() as f64 / n as f64 * entropy_1d(v, idx.len())?;
    }
    Ok(h_marginal - h_cond)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(Debug, Clone, Copy)]
struct Component {
    weight: f64,
    mean: f64,
    var: f64,
}

fn mixture_log_density(components: &[Component], x: f64) -> f64 {
    let terms: Vec<f64> = components
        .iter()
        .map(|c| {
            c.weight.ln() - 0.5 * (2.0 * PI * c.var).ln() - 0.5 * (x - c.mean).powi(2) / c.var
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Gaussian-copula MI using a Gaussian mixture for the marginal.
///
/// Each class is copula-normalized on its own and rescaled to the robust
/// location (median) and scale (MAD) of its raw values; the class Gaussians
/// fitted to those scores give the bias-corrected conditional entropies and,
/// weighted by class frequency, the mixture whose entropy is estimated by
/// seeded Monte Carlo over `options.draws` samples.
pub fn mi_mixture(x: &[f64], labels: &[u8], options: MixtureOptions) -> Result<f64> {
    let groups = class_groups(x.len(), labels)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { column: 0 });
    }
    let n = x.len() as f64;
    let mut components = Vec::with_capacity(groups.len());
    let mut h_cond = 0.0;
    for (&c, idx) in &groups {
        let raw: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let degenerate = |reason: &str| Error::DegenerateClass {
            class: i64::from(c),
            reason: reason.into(),
        };
        let z = copnorm(&raw, 0).map_err(|_| degenerate("zero variance"))?;
        let mut sorted = raw.clone();
        sorted.sort_by(f64::total_cmp);
        let med = median(&sorted);
        let mut dev: Vec<f64> = raw.iter().map(|v| (v - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = median(&dev);
        if mad.is_nan() || mad <= 0.0 {
            return Err(degenerate("zero median absolute deviation"));
        }
        let scaled = z.iter().map(|v| v * MAD_TO_SD * mad + med);
        let (mean, var) = mean_var(scaled);
        let weight = idx.len() as f64 / n;
        h_cond += weight * entropy_1d(var, idx.len())?;
        components.push(Component { weight, mean, var });
    }

    let draws = options.draws.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut acc = 0.0;
    for _ in 0..draws {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut comp = components[components.len() - 1];
        for c in &components {
            cum += c.weight;
            if u < cum {
                comp = *c;
                break;
            }
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        acc -= mixture_log_density(&components, comp.mean + comp.var.sqrt() * eps);
    }
    let h_mix = acc / draws as f64;
    Ok(h_mix - h_cond)
}
