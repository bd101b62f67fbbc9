//! End-to-end experiments: generate (or load) a dataset, then for each
//! repetition split it, train every requested method, evaluate on the test
//! set and aggregate across repetitions.
//!
//! Repetition `r` splits with seed `derive_seed(seed, "split", r)`, trains
//! with `derive_seed(seed, "train", r)` and calibrates linear inversion with
//! `derive_seed(seed, "calibration", r)`. Everything except wall-clock
//! timings is a pure function of the configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ci::{train_ci, train_citl, CiModel, TrainConfig, TransferScope};
use crate::dataset::{generate, split_sizes, Dataset, Sample};
use crate::error::{Error, Result};
use crate::li::calibrate;
use crate::metrics::{improvement_rate, Distances, Metric};
use crate::mlp::{AdamConfig, Schedule};
use crate::presets::Preset;
use crate::rng::derive_seed;
use crate::sig17;
use crate::simulator::{NoiseModel, SimulatedDevice};
use crate::topology::{validate_partition, CouplingGraph, PartitionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Unmitigated,
    Li,
    Nn,
    Ci,
    Citl,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Unmitigated, Method::Li, Method::Nn, Method::Ci, Method::Citl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unmitigated => "unmitigated",
            Method::Li => "li",
            Method::Nn => "nn",
            Method::Ci => "ci",
            Method::Citl => "citl",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Unmitigated => "Unmitigated",
            Method::Li => "LI-QMEM",
            Method::Nn => "NN-QMEM",
            Method::Ci => "CI-QMEM",
            Method::Citl => "CITL-QMEM",
        }
    }

    /// Whether the method learns from training data (and so belongs in a
    /// training-size sweep).
    pub fn is_learned(self) -> bool {
        matches!(self, Method::Nn | Method::Ci | Method::Citl)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method `{s}` (expected one of: unmitigated, li, nn, ci, citl)"))
    }
}

/// Everything an experiment depends on. Missing keys in a config file take
/// these defaults; the epoch count defaults to the desk-scale 100 (use
/// [`ExperimentConfig::full_scale`] for 300).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Shipped device preset; individual files below override its parts.
    pub preset: Option<String>,
    pub noise: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    /// `(source leaf, target leaf)` designations for transfer learning.
    pub transfer: Option<Vec<(usize, usize)>>,
    /// Load this dataset instead of generating one.
    pub dataset: Option<PathBuf>,
    /// Cross-checked against the device when given.
    pub qubits: Option<usize>,
    pub samples: usize,
    pub shots: u64,
    /// Shots per calibration circuit; defaults to `shots`.
    pub calibration_shots: Option<u64>,
    pub train_fraction: f64,
    pub methods: Vec<Method>,
    /// Training-set sizes for learning curves.
    pub sweep: Vec<usize>,
    /// Methods to sweep; defaults to the learned methods in `methods`.
    pub sweep_methods: Option<Vec<Method>>,
    /// Repetitions to sweep; defaults to `repetitions`.
    pub sweep_repetitions: Option<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub transfer_scope: TransferScope,
    /// Directory for reports and partial artifacts.
    pub output: Option<PathBuf>,
    /// Also write the dataset into `output`.
    pub save_dataset: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Some(Preset::PaperLike7q.name().into()),
            noise: None,
            graph: None,
            partition: None,
            transfer: None,
            dataset: None,
            qubits: None,
            samples: 7500,
            shots: 32000,
            calibration_shots: None,
            train_fraction: 0.8,
            methods: Method::ALL.to_vec(),
            sweep: Vec::new(),
            sweep_methods: None,
            sweep_repetitions: None,
            repetitions: 5,
            seed: 0,
            epochs: 100,
            batch_size: 16,
            learning_rate: AdamConfig::default().lr,
            transfer_scope: TransferScope::default(),
            output: None,
            save_dataset: false,
        }
    }
}

/// Noise model, coupling graph, partition and transfer designations after
/// resolving presets and files.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub model: NoiseModel,
    pub graph: CouplingGraph,
    pub spec: PartitionSpec,
    pub transfer: Vec<(usize, usize)>,
}

impl Device {
    pub fn qubit_count(&self) -> usize {
        self.graph.qubit_count
    }
}

impl ExperimentConfig {
    /// Defaults with the full 300-epoch schedule.
    pub fn full_scale() -> Self {
        Self {
            epochs: Schedule::default().epochs,
            ..Self::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            schedule: Schedule {
                epochs: self.epochs,
                batch_size: self.batch_size,
            },
            transfer_scope: self.transfer_scope,
            ..TrainConfig::default()
        }
    }

    /// Hex SHA-256 of the configuration, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        c.save_dataset = false;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Loads presets and files and checks that they agree.
    pub fn resolve_device(&self) -> Result<Device> {
        let preset = match &self.preset {
            Some(name) => Some(name.parse::<Preset>().map_err(Error::Argument)?),
            None => None,
        };
        let missing = |what: &str| Error::Argument(format!("no preset and no {what} file given"));
        let model = match (&self.noise, preset) {
            (Some(p), _) => NoiseModel::load(p)?,
            (None, Some(p)) => p.noise(),
            (None, None) => return Err(missing("noise")),
        };
        let graph = match (&self.graph, preset) {
            (Some(p), _) => CouplingGraph::load(p)?,
            (None, Some(p)) => p.graph(),
            (None, None) => return Err(missing("graph")),
        };
        let spec = match (&self.partition, preset) {
            (Some(p), _) => PartitionSpec::load(p)?,
            (None, Some(p)) => p.partition(),
            (None, None) => PartitionSpec::trivial(graph.qubit_count),
        };
        let transfer = match (&self.transfer, preset) {
            (Some(t), _) => t.clone(),
            (None, Some(p)) if self.partition.is_none() => p.transfer(),
            _ => Vec::new(),
        };
        let n = graph.qubit_count;
        if model.qubit_count() != n || spec.qubit_count != n {
            return Err(Error::Argument(format!(
                "qubit counts disagree: noise {}, graph {n}, partition {}",
                model.qubit_count(),
                spec.qubit_count
            )));
        }
        if let Some(q) = self.qubits {
            if q != n {
                return Err(Error::Argument(format!("config asks for {q} qubits, device has {n}")));
            }
        }
        model.validate(&graph)?;
        let report = validate_partition(&graph, &spec)?;
        if !report.is_valid() {
            return Err(Error::Partition(format!(
                "partition does not separate its leaves: {:?}",
                report.violations
            )));
        }
        Ok(Device {
            model,
            graph,
            spec,
            transfer,
        })
    }

    pub fn validate(&self) -> Result<Device> {
        if self.repetitions == 0 {
            return Err(Error::Argument("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Argument("no methods requested".into()));
        }
        if self.epochs > 0 && self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        let device = self.resolve_device()?;
        if self.dataset.is_none() {
            let (train, _) = split_sizes(self.samples, self.train_fraction)?;
            if let Some(&s) = self.sweep.iter().find(|&&s| s == 0 || s > train) {
                return Err(Error::Argument(format!("sweep size {s} outside 1..={train}")));
            }
        }
        if self.methods.contains(&Method::Citl) && device.transfer.is_empty() {
            return Err(Error::Argument("CITL requested but no transfer designations".into()));
        }
        Ok(device)
    }

    fn sweep_methods(&self) -> Vec<Method> {
        self.sweep_methods
            .clone()
            .unwrap_or_else(|| self.methods.iter().copied().filter(|m| m.is_learned()).collect())
    }
}

/// Improvement rates in percent, one per metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub mse: f64,
    pub kld: f64,
    pub infidelity: f64,
}

impl Rates {
    pub fn between(unmitigated: &Distances, mitigated: &Distances) -> Result<Self> {
        Ok(Self {
            mse: improvement_rate(unmitigated.mse, mitigated.mse)?,
            kld: improvement_rate(unmitigated.kld, mitigated.kld)?,
            infidelity: improvement_rate(unmitigated.infidelity, mitigated.infidelity)?,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mse => self.mse,
            Metric::Kld => self.kld,
            Metric::Infidelity => self.infidelity,
        }
    }
}

/// One method in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Mean per-sample distances over the test set.
    pub distances: Distances,
    pub rates: Rates,
    pub trainable_params: Option<usize>,
    pub networks: Option<usize>,
    /// Trainable parameters of the transfer-target leaves.
    pub target_leaf_params: Option<usize>,
    /// Summed training time of the transfer-target leaves' networks.
    pub target_leaf_seconds: Option<f64>,
    /// Context slices that fell back to the default input at inference.
    pub fallbacks: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub index: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    /// Raw noisy test distributions against their ideals.
    pub unmitigated: Distances,
    pub results: Vec<MethodResult>,
}

impl RepetitionResult {
    pub fn get(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

/// Aggregates of one method over repetitions. Standard deviations use the
/// `n − 1` denominator (0 for a single repetition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: Distances,
    pub std: Distances,
    pub min: Distances,
    /// Mean of the per-repetition rates.
    pub rates_mean: Rates,
    pub rates_std: Rates,
    /// Rates recomputed from the mean distances.
    pub rates_of_mean: Rates,
    pub trainable_params: Option<usize>,
    pub networks: Option<usize>,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub train_size: usize,
    pub repetition: usize,
    pub distances: Distances,
}

/// Wall-clock figures, excluded from determinism comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub dataset_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub qubit_count: usize,
    pub noise_fingerprint: String,
    pub train_size: usize,
    pub test_size: usize,
    pub summaries: Vec<MethodSummary>,
    pub repetitions: Vec<RepetitionResult>,
    pub sweep: Vec<SweepPoint>,
    pub timings: Timings,
}

impl RunReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Mean, std and min of the distance of `method` at training size
    /// `size` across swept repetitions.
    pub fn sweep_stats(&self, method: Method, size: usize, metric: Metric) -> Option<(f64, f64, f64)> {
        let v: Vec<f64> = self
            .sweep
            .iter()
            .filter(|p| p.method == method && p.train_size == size)
            .map(|p| p.distances.get(metric))
            .collect();
        if v.is_empty() {
            return None;
        }
        let (m, s) = mean_std(&v);
        Some((m, s, v.iter().copied().fold(f64::INFINITY, f64::min)))
    }

    /// Hex SHA-256 over every reported number except timings.
    pub fn metrics_fingerprint(&self) -> String {
        let mut r = self.clone();
        r.timings = Timings::default();
        for rep in &mut r.repetitions {
            for m in &mut rep.results {
                m.seconds = 0.0;
                m.target_leaf_seconds = m.target_leaf_seconds.map(|_| 0.0);
            }
        }
        for s in &mut r.summaries {
            s.mean_seconds = 0.0;
        }
        r.config.output = None;
        r.config.save_dataset = false;
        let text = serde_json::to_string(&r).expect("report serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn stage<T>(name: &str, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name.into(),
            seed,
            message: e.to_string(),
        },
    })
}

fn evaluate(test: &[&Sample], outputs: &[crate::probdist::ProbDist]) -> Distances {
    Distances::mean_over(test.iter().zip(outputs).map(|(s, q)| (&s.ideal, q)))
}

struct Trained {
    model: CiModel,
    seconds: f64,
}

fn train_learned(
    method: Method,
    train: &[&Sample],
    device: &Device,
    config: &TrainConfig,
    shots: u64,
    seed: u64,
) -> Result<Trained> {
    let start = Instant::now();
    let model = match method {
        Method::Nn => train_ci(train, &PartitionSpec::trivial(device.qubit_count()), config, shots, seed)?,
        Method::Ci => train_ci(train, &device.spec, config, shots, seed)?,
        Method::Citl => train_citl(train, &device.spec, &device.transfer, config, shots, seed)?,
        _ => unreachable!("not a learned method"),
    };
    Ok(Trained {
        model,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn learned_result(
    method: Method,
    trained: &Trained,
    test: &[&Sample],
    device: &Device,
    unmitigated: &Distances,
) -> Result<MethodResult> {
    let noisy: Vec<_> = test.iter().map(|s| &s.noisy).collect();
    let (out, diag) = trained.model.mitigate_batch(&noisy)?;
    let distances = evaluate(test, &out);
    let targets: Vec<usize> = device.transfer.iter().map(|&(_, t)| t).collect();
    let with_targets = !targets.is_empty() && method != Method::Nn;
    Ok(MethodResult {
        method,
        distances,
        rates: Rates::between(unmitigated, &distances)?,
        trainable_params: Some(trained.model.trainable_param_count()),
        networks: Some(trained.model.network_count()),
        target_leaf_params: with_targets.then(|| {
            trained
                .model
                .leaf_nets
                .iter()
                .filter(|((l, _), _)| targets.contains(l))
                .map(|(_, t)| t.net.trainable_param_count())
                .sum()
        }),
        target_leaf_seconds: with_targets.then(|| trained.model.leaf_seconds(&targets)),
        fallbacks: diag.fallbacks,
        seconds: trained.seconds,
    })
}

/// Runs the whole experiment. Completed repetitions are written to
/// `output/partial/` as they finish.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let total = Instant::now();
    let device = stage("config", config.seed, config.validate())?;
    let n = device.qubit_count();
    let tc = config.train_config();

    let t = Instant::now();
    let dataset = match &config.dataset {
        Some(path) => stage("dataset", config.seed, Dataset::load_with_noise(path, &device.model))?,
        None => stage(
            "dataset",
            config.seed,
            generate(n, config.samples, config.shots, &device.model, &device.graph, config.seed),
        )?,
    };
    if dataset.qubit_count() != n {
        return Err(Error::Stage {
            stage: "dataset".into(),
            seed: config.seed,
            message: format!("dataset has {} qubits, device {n}", dataset.qubit_count()),
        });
    }
    let dataset_seconds = t.elapsed().as_secs_f64();
    log::info!("dataset ready: {} samples in {dataset_seconds:.1}s", dataset.len());
    if let Some(dir) = &config.output {
        std::fs::create_dir_all(dir.join("partial")).map_err(|e| Error::io(dir, e))?;
        if config.save_dataset {
            dataset.save(dir.join("dataset.jsonl"))?;
        }
    }
    let shots = dataset.meta.shots;
    let (train_size, test_size) = split_sizes(dataset.len(), config.train_fraction)?;
    if let Some(&s) = config.sweep.iter().find(|&&s| s == 0 || s > train_size) {
        return Err(Error::Argument(format!("sweep size {s} outside 1..={train_size}")));
    }
    let sweep_methods = config.sweep_methods();
    let sweep_reps = config.sweep_repetitions.unwrap_or(config.repetitions);

    let mut repetitions = Vec::with_capacity(config.repetitions);
    let mut sweep = Vec::new();
    for r in 0..config.repetitions {
        let split_seed = derive_seed(config.seed, "split", r as u64);
        let train_seed = derive_seed(config.seed, "train", r as u64);
        let split = stage("split", split_seed, dataset.split(config.train_fraction, split_seed))?;
        let test = &split.test;
        let unmitigated = Distances::mean_over(test.iter().map(|s| (&s.ideal, &s.noisy)));
        let mut results = Vec::new();
        for &method in &config.methods {
            log::info!("repetition {r}: {}", method.label());
            let result = match method {
                Method::Unmitigated => MethodResult {
                    method,
                    distances: unmitigated,
                    rates: Rates::default(),
                    trainable_params: None,
                    networks: None,
                    target_leaf_params: None,
                    target_leaf_seconds: None,
                    fallbacks: 0,
                    seconds: 0.0,
                },
                Method::Li => {
                    let cal_seed = derive_seed(config.seed, "calibration", r as u64);
                    let start = Instant::now();
                    let out = stage("li", cal_seed, (|| {
                        let dev = SimulatedDevice::new(device.model.clone(), device.graph.clone(), cal_seed, "calibration")?;
                        let inv = calibrate(&dev, n, config.calibration_shots.unwrap_or(shots))?.factorize()?;
                        test.iter().map(|s| inv.mitigate(&s.noisy)).collect::<Result<Vec<_>>>()
                    })())?;
                    let distances = evaluate(test, &out);
                    MethodResult {
                        method,
                        distances,
                        rates: stage("li", cal_seed, Rates::between(&unmitigated, &distances))?,
                        trainable_params: None,
                        networks: None,
                        target_leaf_params: None,
                        target_leaf_seconds: None,
                        fallbacks: 0,
                        seconds: start.elapsed().as_secs_f64(),
                    }
                }
                _ => {
                    let trained = stage(method.name(), train_seed, train_learned(method, &split.train, &device, &tc, shots, train_seed))?;
                    let res = stage(method.name(), train_seed, learned_result(method, &trained, test, &device, &unmitigated))?;
                    if r < sweep_reps && sweep_methods.contains(&method) && config.sweep.contains(&train_size) {
                        sweep.push(SweepPoint {
                            method,
                            train_size,
                            repetition: r,
                            distances: res.distances,
                        });
                    }
                    res
                }
            };
            results.push(result);
        }
        if r < sweep_reps {
            for &method in &sweep_methods {
                for &size in config.sweep.iter().filter(|&&s| s != train_size || !config.methods.contains(&method)) {
                    log::info!("repetition {r}: {} on {size} samples", method.label());
                    let trained = stage(
                        method.name(),
                        train_seed,
                        train_learned(method, &split.train[..size], &device, &tc, shots, train_seed),
                    )?;
                    let res = stage(method.name(), train_seed, learned_result(method, &trained, test, &device, &unmitigated))?;
                    sweep.push(SweepPoint {
                        method,
                        train_size: size,
                        repetition: r,
                        distances: res.distances,
                    });
                }
            }
        }
        let rep = RepetitionResult {
            index: r,
            split_seed,
            train_seed,
            unmitigated,
            results,
        };
        if let Some(dir) = &config.output {
            crate::topology::write_json(&dir.join("partial").join(format!("repetition-{r}.json")), &rep)?;
        }
        repetitions.push(rep);
    }
    sweep.sort_by_key(|s| (s.method, s.train_size, s.repetition));

    let summaries = config
        .methods
        .iter()
        .map(|&method| summarize(method, &repetitions))
        .collect::<Result<Vec<_>>>()?;

    Ok(RunReport {
        config_hash: config.hash(),
        config: config.clone(),
        qubit_count: n,
        noise_fingerprint: device.model.fingerprint(),
        train_size,
        test_size,
        summaries,
        repetitions,
        sweep,
        timings: Timings {
            dataset_seconds,
            total_seconds: total.elapsed().as_secs_f64(),
        },
    })
}

fn summarize(method: Method, reps: &[RepetitionResult]) -> Result<MethodSummary> {
    let rows: Vec<&MethodResult> = reps.iter().filter_map(|r| r.get(method)).collect();
    let unmit: Vec<Distances> = reps.iter().map(|r| r.unmitigated).collect();
    let stats = |f: &dyn Fn(&Distances) -> f64| -> (f64, f64, f64) {
        let v: Vec<f64> = rows.iter().map(|m| f(&m.distances)).collect();
        let (m, s) = mean_std(&v);
        (m, s, v.iter().copied().fold(f64::INFINITY, f64::min))
    };
    let (mse, kld, inf) = (stats(&|d| d.mse), stats(&|d| d.kld), stats(&|d| d.infidelity));
    let mean = Distances { mse: mse.0, kld: kld.0, infidelity: inf.0 };
    let rate_stats = |f: &dyn Fn(&Rates) -> f64| mean_std(&rows.iter().map(|m| f(&m.rates)).collect::<Vec<_>>());
    let (rm, rk, ri) = (rate_stats(&|r| r.mse), rate_stats(&|r| r.kld), rate_stats(&|r| r.infidelity));
    let unmit_mean = Distances {
        mse: unmit.iter().map(|d| d.mse).sum::<f64>() / unmit.len() as f64,
        kld: unmit.iter().map(|d| d.kld).sum::<f64>() / unmit.len() as f64,
        infidelity: unmit.iter().map(|d| d.infidelity).sum::<f64>() / unmit.len() as f64,
    };
    let rates_of_mean = if method == Method::Unmitigated {
        Rates::default()
    } else {
        Rates::between(&unmit_mean, &mean)?
    };
    Ok(MethodSummary {
        method,
        mean,
        std: Distances { mse: mse.1, kld: kld.1, infidelity: inf.1 },
        min: Distances { mse: mse.2, kld: kld.2, infidelity: inf.2 },
        rates_mean: Rates { mse: rm.0, kld: rk.0, infidelity: ri.0 },
        rates_std: Rates { mse: rm.1, kld: rk.1, infidelity: ri.1 },
        rates_of_mean,
        trainable_params: rows.first().and_then(|m| m.trainable_params),
        networks: rows.first().and_then(|m| m.networks),
        mean_seconds: rows.iter().map(|m| m.seconds).sum::<f64>() / rows.len().max(1) as f64,
    })
}

/// Report artifacts [`emit_report`] can write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    /// `results.csv`: one row per method × metric × repetition.
    Csv,
    /// `summary.txt`: human-readable table.
    Summary,
    /// `curve-<metric>.dat` plus `curves.gp`.
    Curves,
    /// `report.json`: the full report.
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [ReportFormat::Csv, ReportFormat::Summary, ReportFormat::Curves, ReportFormat::Json];
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "summary" => Ok(ReportFormat::Summary),
            "curves" => Ok(ReportFormat::Curves),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format `{s}` (expected csv, summary, curves, json)")),
        }
    }
}

pub const CSV_HEADER: &str = "method,metric,repetition,distance,rate";

pub fn csv(report: &RunReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for rep in &report.repetitions {
        for m in &rep.results {
            for metric in Metric::ALL {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    m.method.name(),
                    metric_key(metric),
                    rep.index,
                    sig17::format(m.distances.get(metric)),
                    sig17::format(m.rates.get(metric))
                );
            }
        }
    }
    s
}

fn metric_key(m: Metric) -> &'static str {
    match m {
        Metric::Mse => "mse",
        Metric::Kld => "kld",
        Metric::Infidelity => "if",
    }
}

/// Parsed CSV row: `(method, metric, repetition, distance, rate)`.
pub type CsvRow = (Method, Metric, usize, f64, f64);

pub fn parse_csv(text: &str) -> std::result::Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err("missing or unexpected header".into());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(format!("row {}: expected 5 fields", i + 2));
            }
            let metric = match f[1] {
                "mse" => Metric::Mse,
                "kld" => Metric::Kld,
                "if" => Metric::Infidelity,
                other => return Err(format!("row {}: unknown metric {other}", i + 2)),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 2));
            Ok((
                f[0].parse()?,
                metric,
                f[2].parse().map_err(|e| format!("row {}: {e}", i + 2))?,
                num(f[3])?,
                num(f[4])?,
            ))
        })
        .collect()
}

pub fn summary_table(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} qubits, {} train / {} test, {} repetition(s), config {}",
        report.qubit_count,
        report.train_size,
        report.test_size,
        report.repetitions.len(),
        &report.config_hash[..12]
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>6} {:>24} {:>24} {:>24} {:>9} {:>9} {:>9}",
        "method", "params", "nets", "D_MSE mean ± std", "D_KLD mean ± std", "D_IF mean ± std", "R_MSE %", "R_KLD %", "R_IF %"
    );
    for m in &report.summaries {
        let cell = |mean: f64, std: f64| format!("{mean:.4e} ± {std:.1e}");
        let _ = writeln!(
            s,
            "{:<12} {:>10} {:>6} {:>24} {:>24} {:>24} {:>9.2} {:>9.2} {:>9.2}",
            m.method.label(),
            m.trainable_params.map_or("-".into(), |p| p.to_string()),
            m.networks.map_or("-".into(), |p| p.to_string()),
            cell(m.mean.mse, m.std.mse),
            cell(m.mean.kld, m.std.kld),
            cell(m.mean.infidelity, m.std.infidelity),
            m.rates_of_mean.mse,
            m.rates_of_mean.kld,
            m.rates_of_mean.infidelity,
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "R columns are computed from the mean distances; per-repetition rates:");
    for m in &report.summaries {
        let _ = writeln!(
            s,
            "  {:<12} R_MSE {:.2} ± {:.2}, R_KLD {:.2} ± {:.2}, R_IF {:.2} ± {:.2}; min D_MSE {:.4e}",
            m.method.label(),
            m.rates_mean.mse,
            m.rates_std.mse,
            m.rates_mean.kld,
            m.rates_std.kld,
            m.rates_mean.infidelity,
            m.rates_std.infidelity,
            m.min.mse
        );
    }
    s
}

fn curve_data(report: &RunReport, metric: Metric) -> String {
    let mut methods: Vec<Method> = report.sweep.iter().map(|p| p.method).collect();
    methods.dedup();
    let mut sizes: Vec<usize> = report.sweep.iter().map(|p| p.train_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut s = String::from("# train_size");
    for m in &methods {
        let _ = write!(s, " {0}_mean {0}_std {0}_min", m.name());
    }
    for m in [Method::Unmitigated, Method::Li] {
        if report.summary(m).is_some() {
            let _ = write!(s, " {0}_mean {0}_min", m.name());
        }
    }
    s.push('\n');
    for &size in &sizes {
        let _ = write!(s, "{size}");
        for &m in &methods {
            match report.sweep_stats(m, size, metric) {
                Some((mean, std, min)) => {
                    let _ = write!(s, " {} {} {}", sig17::format(mean), sig17::format(std), sig17::format(min));
                }
                None => s.push_str(" NaN NaN NaN"),
            }
        }
        for m in [Method::Unmitigated, Method::Li] {
            if let Some(sm) = report.summary(m) {
                let _ = write!(s, " {} {}", sig17::format(sm.mean.get(metric)), sig17::format(sm.min.get(metric)));
            }
        }
        s.push('\n');
    }
    s
}

fn gnuplot_script(report: &RunReport) -> String {
    let mut methods: Vec<Method> = report.sweep.iter().map(|p| p.method).collect();
    methods.dedup();
    let mut s = String::from("set terminal pngcairo size 900,600\nset logscale y\nset xlabel 'training samples'\nset key top right\n");
    for metric in Metric::ALL {
        let key = metric_key(metric);
        let _ = writeln!(s, "set output 'curve-{key}.png'\nset ylabel '{}'", metric.name());
        let mut plots = Vec::new();
        for (i, m) in methods.iter().enumerate() {
            let col = 2 + 3 * i;
            plots.push(format!(
                "'curve-{key}.dat' using 1:{col}:{} with yerrorlines title '{}'",
                col + 1,
                m.label()
            ));
        }
        let mut col = 2 + 3 * methods.len();
        for m in [Method::Unmitigated, Method::Li] {
            if report.summary(m).is_some() {
                plots.push(format!("'curve-{key}.dat' using 1:{} with lines dashtype 2 title '{} (min)'", col + 1, m.label()));
                col += 2;
            }
        }
        if !plots.is_empty() {
            let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
        }
    }
    s
}

/// Writes the requested artifacts into `dir` and returns their paths.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            ReportFormat::Csv => put("results.csv".into(), csv(report))?,
            ReportFormat::Summary => put("summary.txt".into(), summary_table(report))?,
            ReportFormat::Json => put(
                "report.json".into(),
                serde_json::to_string_pretty(report).map_err(|e| Error::json(dir.join("report.json"), e))?,
            )?,
            ReportFormat::Curves => {
                if report.sweep.is_empty() {
                    continue;
                }
                for metric in Metric::ALL {
                    put(format!("curve-{}.dat", metric_key(metric)), curve_data(report, metric))?;
                }
                put("curves.gp".into(), gnuplot_script(report))?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            samples: 60,
            shots: 2000,
            repetitions: 2,
            epochs: 2,
            sweep: vec![12, 24],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn unmitigated_only_has_zero_rates() {
        let cfg = ExperimentConfig {
            methods: vec![Method::Unmitigated],
            sweep: Vec::new(),
            ..tiny()
        };
        let r = run_experiment(&cfg).unwrap();
        let s = r.summary(Method::Unmitigated).unwrap();
        assert_eq!(s.rates_mean, Rates::default());
        assert_eq!(s.rates_of_mean, Rates::default());
    }

    #[test]
    fn report_artifacts_round_trip() {
        let r = run_experiment(&tiny()).unwrap();
        assert_eq!(r.train_size, 48);
        assert_eq!(r.summaries.len(), 5);
        let rows = parse_csv(&csv(&r)).unwrap();
        assert_eq!(rows.len(), 5 * 3 * 2);
        for (method, metric, rep, d, rate) in rows {
            let m = r.repetitions[rep].get(method).unwrap();
            assert_eq!(m.distances.get(metric).to_bits(), d.to_bits());
            assert_eq!(m.rates.get(metric).to_bits(), rate.to_bits());
        }
        // CI and CITL and NN, two sizes, two repetitions
        assert_eq!(r.sweep.len(), 3 * 2 * 2);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, dir.path(), &ReportFormat::ALL).unwrap();
        assert_eq!(files.len(), 7);
        let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(summary.contains("22814"));
    }
}
