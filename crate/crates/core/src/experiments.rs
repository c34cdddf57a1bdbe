//! Multi-seed experiments: per-layer synergy/redundancy profiles and
//! retraining of the subnetworks picked by each neuron-selection method.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gcmi::{
    copula_transform_with_target, correlation_model, mi_anova, mi_mixture, CorrelationModel,
    EntropyOptions, MixtureOptions,
};
use crate::mlp::{
    evaluate, extract_preactivations, retrain_masked, ActivationMatrix, Checkpoint, FreezeMode,
    FreezePlan, LayerId, TrainConfig,
};
use crate::search::{search_profile, Objective, SearchOptions, SearchProfile};

pub const DEFAULT_RETRAIN_EPOCHS: usize = 20;

/// `2, 4, ..., 20`.
pub fn default_k_values() -> Vec<usize> {
    (1..=10).map(|i| 2 * i).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub seed: u64,
    pub layer: LayerId,
    pub k: usize,
    pub objective: Objective,
    pub omega_nats: f64,
    pub neuron_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    pub k_max: usize,
    pub objectives: Vec<Objective>,
    pub search: SearchOptions,
    pub entropy: EntropyOptions,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            k_max: 20,
            objectives: Objective::BOTH.to_vec(),
            search: SearchOptions::default(),
            entropy: EntropyOptions::default(),
        }
    }
}

/// Correlation model of one layer's pre-activations with the label appended.
pub fn layer_model(act: &ActivationMatrix, entropy: EntropyOptions) -> Result<CorrelationModel> {
    let cm = copula_transform_with_target(act.values.view(), &act.labels)?;
    Ok(correlation_model(&cm).with_options(entropy))
}

fn profile_for(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    layer: LayerId,
    objective: Objective,
    options: &ProfileOptions,
) -> Result<SearchProfile> {
    let act = extract_preactivations(checkpoint, dataset, layer)?;
    let model = layer_model(&act, options.entropy)?;
    let search = SearchOptions {
        layer: Some(layer),
        ..options.search
    };
    search_profile(&model, act.values.ncols(), options.k_max, objective, &search)
}

/// One row per (layer, k, objective), ordered by layer, then objective in
/// `options.objectives` order, then k.
pub fn layerwise_profile(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    options: &ProfileOptions,
) -> Result<Vec<ProfileRow>> {
    let mut rows = Vec::new();
    for layer in LayerId::ALL {
        let act = extract_preactivations(checkpoint, dataset, layer)?;
        let model = layer_model(&act, options.entropy)?;
        let search = SearchOptions {
            layer: Some(layer),
            ..options.search
        };
        for &objective in &options.objectives {
            let profile = search_profile(&model, act.values.ncols(), options.k_max, objective, &search)?;
            rows.extend(profile.entries.into_iter().map(|m| ProfileRow {
                seed: checkpoint.seed,
                layer,
                k: m.k,
                objective,
                omega_nats: m.omega,
                neuron_indices: m.neuron_indices,
            }));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MiEstimator {
    Mixture,
    Anova,
}

/// Neuron indices by descending MI with the label; ties go to the smaller index.
pub fn rank_neurons_mi(
    act: &ActivationMatrix,
    estimator: MiEstimator,
    mixture: MixtureOptions,
) -> Result<Vec<usize>> {
    let scores: Vec<f64> = (0..act.values.ncols())
        .into_par_iter()
        .map(|j| {
            let col = act.values.column(j).to_vec();
            match estimator {
                MiEstimator::Mixture => mi_mixture(&col, &act.labels, mixture),
                MiEstimator::Anova => mi_anova(&col, &act.labels),
            }
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SelectionMethod {
    Synergy,
    MiMixture,
    MiAnova,
    Random,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 4] = [
        SelectionMethod::Synergy,
        SelectionMethod::MiMixture,
        SelectionMethod::MiAnova,
        SelectionMethod::Random,
    ];
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Synergy => "synergy",
            SelectionMethod::MiMixture => "mi-mixture",
            SelectionMethod::MiAnova => "mi-anova",
            SelectionMethod::Random => "random",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synergy" => Ok(SelectionMethod::Synergy),
            "mi-mixture" | "mi_mixture" => Ok(SelectionMethod::MiMixture),
            "mi-anova" | "mi_anova" => Ok(SelectionMethod::MiAnova),
            "random" => Ok(SelectionMethod::Random),
            _ => Err(Error::InvalidConfig(format!("unknown selection method {s:?}"))),
        }
    }
}

/// Retained neurons per hidden layer for one (method, k).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionSpec {
    pub method: SelectionMethod,
    pub k: usize,
    /// Ascending indices, one list per hidden layer.
    pub per_layer: Vec<Vec<usize>>,
}

impl SelectionSpec {
    pub fn freeze_plan(&self, mode: FreezeMode) -> Result<FreezePlan> {
        FreezePlan::new(self.per_layer.clone(), mode)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionOptions {
    pub search: SearchOptions,
    pub entropy: EntropyOptions,
    pub mixture: MixtureOptions,
}

/// Caches per-layer analyses so a sweep over k computes each of them once.
pub struct Selector<'a> {
    checkpoint: &'a Checkpoint,
    dataset: &'a Dataset,
    options: SelectionOptions,
    synergy: BTreeMap<LayerId, SearchProfile>,
    rankings: BTreeMap<(LayerId, MiEstimator), Vec<usize>>,
}

impl<'a> Selector<'a> {
    /// `dataset` supplies the activations the selection is computed from.
    pub fn new(checkpoint: &'a Checkpoint, dataset: &'a Dataset, options: SelectionOptions) -> Self {
        Selector {
            checkpoint,
            dataset,
            options,
            synergy: BTreeMap::new(),
            rankings: BTreeMap::new(),
        }
    }

    fn width(&self, layer: LayerId) -> usize {
        self.checkpoint.config.hidden_width(layer)
    }

    fn synergy_profile(&mut self, layer: LayerId) -> Result<&SearchProfile> {
        if !self.synergy.contains_key(&layer) {
            let opts = ProfileOptions {
                k_max: self.width(layer),
                objectives: vec![Objective::Synergy],
                search: self.options.search,
                entropy: self.options.entropy,
            };
            let p = profile_for(self.checkpoint, self.dataset, layer, Objective::Synergy, &opts)?;
            self.synergy.insert(layer, p);
        }
        Ok(&self.synergy[&layer])
    }

    fn ranking(&mut self, layer: LayerId, estimator: MiEstimator) -> Result<&[usize]> {
        if !self.rankings.contains_key(&(layer, estimator)) {
            let act = extract_preactivations(self.checkpoint, self.dataset, layer)?;
            let r = rank_neurons_mi(&act, estimator, self.options.mixture)?;
            self.rankings.insert((layer, estimator), r);
        }
        Ok(&self.rankings[&(layer, estimator)])
    }

    pub fn select(&mut self, method: SelectionMethod, k: usize, selection_seed: u64) -> Result<SelectionSpec> {
        let mut per_layer = Vec::with_capacity(LayerId::ALL.len());
        for layer in LayerId::ALL {
            let width = self.width(layer);
            if k < 2 || k > width {
                return Err(Error::InvalidConfig(format!(
                    "selection size {k} must lie in 2..={width} for {layer}"
                )));
            }
            let mut chosen = match method {
                SelectionMethod::Synergy => self
                    .synergy_profile(layer)?
                    .get(k)
                    .expect("profile spans 2..=width")
                    .neuron_indices
                    .clone(),
                SelectionMethod::MiMixture => self.ranking(layer, MiEstimator::Mixture)?[..k].to_vec(),
                SelectionMethod::MiAnova => self.ranking(layer, MiEstimator::Anova)?[..k].to_vec(),
                SelectionMethod::Random => random_subset(width, k, selection_seed, layer),
            };
            chosen.sort_unstable();
            per_layer.push(chosen);
        }
        Ok(SelectionSpec { method, k, per_layer })
    }
}

/// Uniform `k`-subset of `0..width`; one ChaCha8 stream per layer.
fn random_subset(width: usize, k: usize, seed: u64, layer: LayerId) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer.index() as u64);
    let mut v = rand::seq::index::sample(&mut rng, width, k).into_vec();
    v.sort_unstable();
    v
}

pub fn select_neurons(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    method: SelectionMethod,
    k: usize,
    selection_seed: u64,
    options: SelectionOptions,
) -> Result<SelectionSpec> {
    Selector::new(checkpoint, dataset, options).select(method, k, selection_seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainRow {
    pub seed: u64,
    pub method: SelectionMethod,
    pub k: usize,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainOptions {
    pub methods: Vec<SelectionMethod>,
    pub k_values: Vec<usize>,
    /// `seed` is ignored; retraining shuffles with the checkpoint's own seed.
    pub train: TrainConfig,
    pub freeze_mode: FreezeMode,
    pub selection_seed: u64,
    /// Select from train-set activations instead of test-set ones.
    pub use_train_set: bool,
    pub selection: SelectionOptions,
}

impl Default for RetrainOptions {
    fn default() -> Self {
        RetrainOptions {
            methods: SelectionMethod::ALL.to_vec(),
            k_values: default_k_values(),
            train: TrainConfig {
                epochs: DEFAULT_RETRAIN_EPOCHS,
                ..TrainConfig::default()
            },
            freeze_mode: FreezeMode::Zero,
            selection_seed: 0,
            use_train_set: false,
            selection: SelectionOptions::default(),
        }
    }
}

/// Retrains one masked subnetwork per (method, k), in that nesting order.
pub fn lth_retrain_experiment(
    checkpoint: &Checkpoint,
    train_set: &Dataset,
    test_set: &Dataset,
    options: &RetrainOptions,
) -> Result<Vec<RetrainRow>> {
    let analysis = if options.use_train_set { train_set } else { test_set };
    let mut selector = Selector::new(checkpoint, analysis, options.selection.clone());
    let mut specs = Vec::new();
    for &method in &options.methods {
        for &k in &options.k_values {
            specs.push(selector.select(method, k, options.selection_seed)?);
        }
    }
    let cfg = TrainConfig {
        seed: checkpoint.seed,
        ..options.train
    };
    specs
        .par_iter()
        .map(|spec| {
            let plan = spec.freeze_plan(options.freeze_mode)?;
            let retrained = retrain_masked(checkpoint, &plan, train_set, test_set, &cfg)?;
            Ok(RetrainRow {
                seed: checkpoint.seed,
                method: spec.method,
                k: spec.k,
                test_accuracy: evaluate(&retrained, test_set)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKey {
    Seed,
    Layer,
    K,
    Objective,
    Method,
}

impl GroupKey {
    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Seed => "seed",
            GroupKey::Layer => "layer",
            GroupKey::K => "k",
            GroupKey::Objective => "objective",
            GroupKey::Method => "method",
        }
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seed" => Ok(GroupKey::Seed),
            "layer" => Ok(GroupKey::Layer),
            "k" => Ok(GroupKey::K),
            "objective" => Ok(GroupKey::Objective),
            "method" => Ok(GroupKey::Method),
            _ => Err(Error::InvalidConfig(format!("unknown group key {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyValue {
    Seed(u64),
    Layer(LayerId),
    K(usize),
    Objective(Objective),
    Method(SelectionMethod),
}

impl fmt::Display for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyValue::Seed(v) => write!(f, "{v}"),
            KeyValue::Layer(v) => write!(f, "{v}"),
            KeyValue::K(v) => write!(f, "{v}"),
            KeyValue::Objective(v) => write!(f, "{v}"),
            KeyValue::Method(v) => write!(f, "{v}"),
        }
    }
}

/// A row that can be grouped and averaged.
pub trait Measurement {
    fn key(&self, key: GroupKey) -> Option<KeyValue>;
    fn value(&self) -> f64;
}

impl Measurement for ProfileRow {
    fn key(&self, key: GroupKey) -> Option<KeyValue> {
        match key {
            GroupKey::Seed => Some(KeyValue::Seed(self.seed)),
            GroupKey::Layer => Some(KeyValue::Layer(self.layer)),
            GroupKey::K => Some(KeyValue::K(self.k)),
            GroupKey::Objective => Some(KeyValue::Objective(self.objective)),
            GroupKey::Method => None,
        }
    }

    fn value(&self) -> f64 {
        self.omega_nats
    }
}

impl Measurement for RetrainRow {
    fn key(&self, key: GroupKey) -> Option<KeyValue> {
        match key {
            GroupKey::Seed => Some(KeyValue::Seed(self.seed)),
            GroupKey::K => Some(KeyValue::K(self.k)),
            GroupKey::Method => Some(KeyValue::Method(self.method)),
            GroupKey::Layer | GroupKey::Objective => None,
        }
    }

    fn value(&self) -> f64 {
        self.test_accuracy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub keys: Vec<KeyValue>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single row.
    pub stddev: f64,
    pub count: usize,
}

/// Group means and sample standard deviations, ordered by key tuple. Values are
/// sorted inside each group before summation, so row order never changes the
/// output bits.
pub fn aggregate<R: Measurement>(rows: &[R], keys: &[GroupKey]) -> Result<Vec<AggregateRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: BTreeMap<Vec<KeyValue>, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = keys
            .iter()
            .map(|&k| {
                r.key(k)
                    .ok_or_else(|| Error::InvalidConfig(format!("rows have no {} column", k.name())))
            })
            .collect::<Result<Vec<_>>>()?;
        groups.entry(key).or_default().push(r.value());
    }
    Ok(groups
        .into_iter()
        .map(|(keys, mut values)| {
            values.sort_by(f64::total_cmp);
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stddev = if n > 1 {
                let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
                dev.sort_by(f64::total_cmp);
                (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                keys,
                mean,
                stddev,
                count: n,
            }
        })
        .collect())
}

pub const PROFILE_HEADER: [&str; 6] = ["seed", "layer", "k", "objective", "omega_nats", "neuron_indices"];
pub const RETRAIN_HEADER: [&str; 4] = ["seed", "method", "k", "test_accuracy"];

fn join_indices(idx: &[usize]) -> String {
    idx.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn csv_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "csv",
        reason: reason.into(),
    }
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| csv_err(format!("missing {name}")))?;
    raw.parse()
        .map_err(|_| csv_err(format!("bad {name} value {raw:?}")))
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(csv_err(format!(
            "header {:?} does not match {:?}",
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(())
}

pub fn write_profile_csv(out: impl Write, rows: &[ProfileRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROFILE_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.layer.to_string(),
            r.k.to_string(),
            r.objective.to_string(),
            r.omega_nats.to_string(),
            join_indices(&r.neuron_indices),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn read_profile_csv(input: impl Read) -> Result<Vec<ProfileRow>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &PROFILE_HEADER)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let indices = parse_field::<String>(&rec, 5, "neuron_indices")?;
            Ok(ProfileRow {
                seed: parse_field(&rec, 0, "seed")?,
                layer: parse_field(&rec, 1, "layer")?,
                k: parse_field(&rec, 2, "k")?,
                objective: parse_field(&rec, 3, "objective")?,
                omega_nats: parse_field(&rec, 4, "omega_nats")?,
                neuron_indices: indices
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| csv_err(format!("bad neuron index {s:?}"))))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn write_retrain_csv(out: impl Write, rows: &[RetrainRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RETRAIN_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.method.to_string(),
            r.k.to_string(),
            r.test_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn read_retrain_csv(input: impl Read) -> Result<Vec<RetrainRow>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &RETRAIN_HEADER)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let test_accuracy: f64 = parse_field(&rec, 3, "test_accuracy")?;
            if !(0.0..=1.0).contains(&test_accuracy) {
                return Err(csv_err(format!("test_accuracy {test_accuracy} outside [0, 1]")));
            }
            Ok(RetrainRow {
                seed: parse_field(&rec, 0, "seed")?,
                method: parse_field(&rec, 1, "method")?,
                k: parse_field(&rec, 2, "k")?,
                test_accuracy,
            })
        })
        .collect()
}

pub fn write_aggregate_csv(out: impl Write, keys: &[GroupKey], rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = keys.iter().map(|k| k.name()).collect();
    header.extend(["mean", "stddev", "count"]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.keys.iter().map(KeyValue::to_string).collect();
        rec.extend([r.mean.to_string(), r.stddev.to_string(), r.count.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_dataset;
    use crate::mlp::{init_network, NetworkConfig};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noisy_label_activations(n: usize, seed: u64) -> ActivationMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let mut values = Array2::from_shape_fn((n, 6), |_| StandardNormal.sample(&mut rng));
        for (r, &l) in labels.iter().enumerate() {
            // neuron 4 tracks the label closely, neuron 1 loosely
            values[[r, 4]] = f64::from(l) + 0.3 * values[[r, 4]];
            values[[r, 1]] = f64::from(l) + 4.0 * values[[r, 1]];
        }
        ActivationMatrix {
            values,
            labels,
            layer: LayerId::Fc1,
        }
    }

    #[test]
    fn mi_ranking_prefers_label_copies() {
        let act = noisy_label_activations(3000, 1);
        let mix = rank_neurons_mi(&act, MiEstimator::Mixture, MixtureOptions::default()).unwrap();
        let anova = rank_neurons_mi(&act, MiEstimator::Anova, MixtureOptions::default()).unwrap();
        assert_eq!(&mix[..2], &[4, 1]);
        assert_eq!(&anova[..2], &[4, 1]);
        let mut sorted = mix.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    }

    fn tiny_setup() -> (Checkpoint, Dataset) {
        let config = NetworkConfig::new(vec![12, 6, 6, 6, 10]).unwrap();
        let ck = init_network(&config, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let images = Array2::from_shape_fn((400, 12), |_| rng.random::<f32>());
        let labels = (0..400).map(|i| (i % 10) as u8).collect();
        (ck, make_dataset(images, labels, "tiny").unwrap())
    }

    #[test]
    fn profile_row_counts() {
        let (ck, ds) = tiny_setup();
        let opts = ProfileOptions {
            k_max: 6,
            ..ProfileOptions::default()
        };
        let rows = layerwise_profile(&ck, &ds, &opts).unwrap();
        assert_eq!(rows.len(), 3 * 5 * 2);
        let syn = layerwise_profile(
            &ck,
            &ds,
            &ProfileOptions {
                objectives: vec![Objective::Synergy],
                ..opts
            },
        )
        .unwrap();
        assert_eq!(syn.len(), 15);
        assert!(syn.iter().all(|r| r.seed == 3 && r.objective == Objective::Synergy));
    }

    #[test]
    fn selections() {
        let (ck, ds) = tiny_setup();
        let mut sel = Selector::new(&ck, &ds, SelectionOptions::default());
        let a = sel.select(SelectionMethod::Random, 3, 17).unwrap();
        let b = sel.select(SelectionMethod::Random, 3, 17).unwrap();
        assert_eq!(a, b);
        assert!(a.per_layer.iter().all(|l| l.len() == 3 && l.windows(2).all(|w| w[0] < w[1])));
        for m in SelectionMethod::ALL {
            let full = sel.select(m, 6, 5).unwrap();
            assert!(full.per_layer.iter().all(|l| *l == (0..6).collect::<Vec<_>>()));
        }
        assert!(sel.select(SelectionMethod::Synergy, 1, 0).is_err());
        assert!(sel.select(SelectionMethod::Synergy, 7, 0).is_err());

        let act = extract_preactivations(&ck, &ds, LayerId::Fc2).unwrap();
        let model = layer_model(&act, EntropyOptions::default()).unwrap();
        let exhaustive = crate::search::exhaustive_search(
            &model,
            6,
            4,
            Objective::Synergy,
            &SearchOptions::default(),
        )
        .unwrap();
        let syn = sel.select(SelectionMethod::Synergy, 4, 0).unwrap();
        assert_eq!(syn.per_layer[1], exhaustive.neuron_indices);
    }

    #[test]
    fn method_names_round_trip() {
        for m in SelectionMethod::ALL {
            assert_eq!(m.to_string().parse::<SelectionMethod>().unwrap(), m);
        }
        assert_eq!("mi_anova".parse::<SelectionMethod>().unwrap(), SelectionMethod::MiAnova);
    }

    #[test]
    fn single_row_aggregate() {
        let rows = vec![RetrainRow {
            seed: 0,
            method: SelectionMethod::Random,
            k: 4,
            test_accuracy: 0.8125,
        }];
        let agg = aggregate(&rows, &[GroupKey::Method, GroupKey::K]).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].mean, 0.8125);
        assert_eq!(agg[0].stddev, 0.0);
        assert_eq!(agg[0].count, 1);
        assert!(matches!(aggregate::<RetrainRow>(&[], &[GroupKey::K]), Err(Error::EmptyInput)));
        assert!(aggregate(&rows, &[GroupKey::Layer]).is_err());
    }

    #[test]
    fn twenty_seed_aggregate_counts() {
        let rows: Vec<RetrainRow> = (0..20u64)
            .flat_map(|seed| {
                SelectionMethod::ALL.into_iter().map(move |method| RetrainRow {
                    seed,
                    method,
                    k: 8,
                    test_accuracy: 0.5 + 0.01 * seed as f64,
                })
            })
            .collect();
        let agg = aggregate(&rows, &[GroupKey::Method, GroupKey::K]).unwrap();
        assert_eq!(agg.len(), rows.len() / 20);
        assert!(agg.iter().all(|a| a.count == 20));
        let expected_sd = (0..20).map(|s| (0.01 * s as f64 - 0.095).powi(2)).sum::<f64>() / 19.0;
        assert!((agg[0].stddev - expected_sd.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![
            ProfileRow {
                seed: 2,
                layer: LayerId::Fc3,
                k: 3,
                objective: Objective::Redundancy,
                omega_nats: 0.1 + 0.2,
                neuron_indices: vec![1, 5, 19],
            },
            ProfileRow {
                seed: 2,
                layer: LayerId::Fc1,
                k: 2,
                objective: Objective::Synergy,
                omega_nats: -1e-300,
                neuron_indices: vec![0, 7],
            },
        ];
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("seed,layer,k,objective,omega_nats,neuron_indices\n"));
        assert!(text.contains("1;5;19"));
        assert_eq!(read_profile_csv(buf.as_slice()).unwrap(), rows);

        let rt = vec![RetrainRow {
            seed: 1,
            method: SelectionMethod::MiMixture,
            k: 12,
            test_accuracy: 0.9731,
        }];
        let mut buf = Vec::new();
        write_retrain_csv(&mut buf, &rt).unwrap();
        assert!(buf.starts_with(b"seed,method,k,test_accuracy\n"));
        assert_eq!(read_retrain_csv(buf.as_slice()).unwrap(), rt);
        assert!(read_retrain_csv(&b"seed,method,k\n1,random,2\n"[..]).is_err());

        let agg = aggregate(&rt, &[GroupKey::Method]).unwrap();
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &[GroupKey::Method], &agg).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,mean,stddev,count\nmi-mixture,0.9731,0,1\n"
        );
    }

    proptest! {
        #[test]
        fn aggregate_ignores_row_order(values in prop::collection::vec(0.0f64..1.0, 1..40), perm_seed in any::<u64>()) {
            let rows: Vec<RetrainRow> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| RetrainRow {
                    seed: i as u64,
                    method: SelectionMethod::ALL[i % 4],
                    k: 2 + 2 * (i % 3),
                    test_accuracy: v,
                })
                .collect();
            let mut shuffled = rows.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let keys = [GroupKey::Method, GroupKey::K];
            prop_assert_eq!(aggregate(&rows, &keys).unwrap(), aggregate(&shuffled, &keys).unwrap());
        }
    }
}
