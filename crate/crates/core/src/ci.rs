//! Conditional-independence mitigation.
//!
//! A [`PartitionSpec`] splits the register into leaves, each conditioned on
//! a few context qubits. One network per (leaf, context assignment) maps the
//! noisy conditional of the leaf to its ideal conditional, and one network
//! per conditional qubit maps its noisy marginal to the ideal one. The
//! mitigated joint is the product of all network outputs (see
//! [`recombine`]).
//!
//! The full-joint network is the special case of the trivial partition: a
//! single leaf over every qubit with no context.
//!
//! Every network is seeded from `(seed, label, index)` streams and trained
//! on its own data, so results do not depend on training order or thread
//! count.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::mlp::{architecture, AdamConfig, AdamState, Mlp, MlpFile, Schedule, DEFAULT_HIDDEN_FACTOR, DEFAULT_HIDDEN_LAYERS};
use crate::probdist::{recombine, ProbDist, Slicer, TAU_COND};
use crate::rng;
use crate::topology::PartitionSpec;

pub const DEFAULT_TAU_SKIP_IDEAL: f64 = 1e-6;

/// Which layers of a transferred network stay trainable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferScope {
    /// Last hidden layer and output layer.
    #[default]
    LastHiddenAndOutput,
    /// Output layer only.
    OutputOnly,
}

impl TransferScope {
    fn trainable_tail(self) -> usize {
        match self {
            TransferScope::LastHiddenAndOutput => 2,
            TransferScope::OutputOnly => 1,
        }
    }
}

/// Network input used when a context slice of the noisy input has
/// (numerically) zero mass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    #[default]
    Uniform,
    /// The leaf's marginal, ignoring the context.
    LeafMarginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub schedule: Schedule,
    pub hidden_layers: usize,
    /// Hidden width is `hidden_factor · 2^k` for a `k`-qubit network.
    pub hidden_factor: usize,
    /// Minimum ideal context mass for a training pair.
    pub tau_skip_ideal: f64,
    /// Minimum noisy context mass for a training pair; `None` means
    /// `1 / shots` (or the conditioning threshold for exact data).
    pub tau_skip_noisy: Option<f64>,
    pub transfer_scope: TransferScope,
    pub fallback: Fallback,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            schedule: Schedule::default(),
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            hidden_factor: DEFAULT_HIDDEN_FACTOR,
            tau_skip_ideal: DEFAULT_TAU_SKIP_IDEAL,
            tau_skip_noisy: None,
            transfer_scope: TransferScope::default(),
            fallback: Fallback::default(),
        }
    }
}

impl TrainConfig {
    pub fn tau_noisy(&self, shots: u64) -> f64 {
        self.tau_skip_noisy.unwrap_or(if shots == 0 { TAU_COND } else { 1.0 / shots as f64 })
    }

    pub fn validate(&self, shots: u64) -> Result<()> {
        if self.tau_skip_ideal < TAU_COND || self.tau_noisy(shots) < TAU_COND {
            return Err(Error::Argument(format!(
                "skip thresholds must be at least {TAU_COND:e}"
            )));
        }
        if self.hidden_factor == 0 {
            return Err(Error::Argument("hidden factor must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self, qubits: usize) -> Vec<usize> {
        architecture(1 << qubits, self.hidden_layers, self.hidden_factor)
    }
}

/// Training pairs of one (leaf, assignment) slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlicePairs {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Samples dropped because a context mass fell below threshold.
    pub skipped: usize,
}

/// A leaf's distribution read from a slice row: conditionals for non-empty
/// contexts, the plain marginal row otherwise.
fn slice_row(rows: &crate::probdist::JointSlices, a: usize, tau: f64, has_context: bool) -> Option<Vec<f64>> {
    if has_context {
        rows.conditional(a, tau)
    } else {
        Some(rows.rows[a].clone())
    }
}

fn extract_leaf(
    samples: &[&Sample],
    spec: &PartitionSpec,
    leaf: usize,
    tau_ideal: f64,
    tau_noisy: f64,
) -> Result<Vec<SlicePairs>> {
    let l = spec
        .leaves
        .get(leaf)
        .ok_or_else(|| Error::Argument(format!("leaf {leaf} out of range")))?;
    let slicer = Slicer::new(spec.qubit_count, &l.qubits, &l.context)?;
    let has_context = !l.context.is_empty();
    let per_sample: Vec<(crate::probdist::JointSlices, crate::probdist::JointSlices)> = samples
        .par_iter()
        .map(|s| (slicer.slice(s.noisy.values()), slicer.slice(s.ideal.values())))
        .collect();
    let mut out = vec![SlicePairs::default(); 1 << l.context.len()];
    for (noisy, ideal) in &per_sample {
        for (a, pairs) in out.iter_mut().enumerate() {
            match (
                slice_row(noisy, a, tau_noisy, has_context),
                slice_row(ideal, a, tau_ideal, has_context),
            ) {
                (Some(x), Some(t)) => {
                    pairs.inputs.push(x);
                    pairs.targets.push(t);
                }
                _ => pairs.skipped += 1,
            }
        }
    }
    Ok(out)
}

/// `(noisy conditional, ideal conditional)` pairs of leaf `leaf` under
/// context assignment `assignment` (packed little-endian over the leaf's
/// context order). Qubits outside the leaf and its context are summed out.
pub fn extract_pairs(
    samples: &[&Sample],
    spec: &PartitionSpec,
    leaf: usize,
    assignment: usize,
    tau_ideal: f64,
    tau_noisy: f64,
) -> Result<SlicePairs> {
    let mut all = extract_leaf(samples, spec, leaf, tau_ideal, tau_noisy)?;
    if assignment >= all.len() {
        return Err(Error::Argument(format!("assignment {assignment} out of range for leaf {leaf}")));
    }
    Ok(all.swap_remove(assignment))
}

fn extract_marginal(samples: &[&Sample], width: usize, qubit: usize) -> Result<SlicePairs> {
    let slicer = Slicer::new(width, &[qubit], &[])?;
    let (inputs, targets) = samples
        .iter()
        .map(|s| {
            (
                slicer.slice(s.noisy.values()).rows.swap_remove(0),
                slicer.slice(s.ideal.values()).rows.swap_remove(0),
            )
        })
        .unzip();
    Ok(SlicePairs {
        inputs,
        targets,
        skipped: 0,
    })
}

/// Identifies a network inside a [`CiModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetKey {
    Leaf { leaf: usize, assignment: usize },
    Marginal { qubit: usize },
}

impl NetKey {
    fn stream_index(self) -> (&'static str, u64) {
        match self {
            NetKey::Leaf { leaf, assignment } => ("ci-leaf", ((leaf as u64) << 32) | assignment as u64),
            NetKey::Marginal { qubit } => ("ci-marginal", qubit as u64),
        }
    }
}

impl std::fmt::Display for NetKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NetKey::Leaf { leaf, assignment } => write!(f, "leaf {leaf} / assignment {assignment}"),
            NetKey::Marginal { qubit } => write!(f, "marginal of qubit {qubit}"),
        }
    }
}

/// How a network was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub pairs: usize,
    pub skipped: usize,
    /// Hex SHA-256 over the training inputs and targets.
    pub data_hash: String,
    /// Mean training loss of the last epoch.
    pub final_loss: Option<f64>,
    /// Leaf whose network initialized this one.
    pub transferred_from: Option<usize>,
    /// Informational only.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNet {
    pub net: Mlp,
    pub record: NetRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiModel {
    pub spec: PartitionSpec,
    pub leaf_nets: BTreeMap<(usize, usize), TrainedNet>,
    pub cond_nets: BTreeMap<usize, TrainedNet>,
    pub fallback: Fallback,
}

/// Counters from a batch of mitigations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MitigationDiagnostics {
    /// Context slices fed the fallback input.
    pub fallbacks: usize,
}

fn data_hash(pairs: &SlicePairs) -> String {
    let mut h = Sha256::new();
    for (x, t) in pairs.inputs.iter().zip(&pairs.targets) {
        for v in x.iter().chain(t) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn net_seeds(seed: u64, key: NetKey) -> (u64, u64) {
    let (label, index) = key.stream_index();
    (
        rng::derive_seed(seed, &format!("{label}-init"), index),
        rng::derive_seed(seed, &format!("{label}-shuffle"), index),
    )
}

fn fit(mut net: Mlp, pairs: &SlicePairs, config: &TrainConfig, shuffle_seed: u64) -> Result<(Mlp, Option<f64>)> {
    let mut state = AdamState::for_net(&net, config.adam);
    let trace = net.train(&pairs.inputs, &pairs.targets, &mut state, config.schedule, shuffle_seed)?;
    Ok((net, trace.last().copied()))
}

fn train_one(key: NetKey, pairs: &SlicePairs, qubits: usize, config: &TrainConfig, seed: u64) -> Result<TrainedNet> {
    if pairs.inputs.is_empty() {
        return Err(Error::Training(format!(
            "no training pairs for {key} ({} skipped)",
            pairs.skipped
        )));
    }
    let start = Instant::now();
    let (init_seed, shuffle_seed) = net_seeds(seed, key);
    let net = Mlp::init(&config.dims(qubits), init_seed)?;
    let (net, final_loss) = fit(net, pairs, config, shuffle_seed)?;
    log::debug!("trained {key} on {} pairs", pairs.inputs.len());
    Ok(TrainedNet {
        net,
        record: NetRecord {
            init_seed,
            shuffle_seed,
            pairs: pairs.inputs.len(),
            skipped: pairs.skipped,
            data_hash: data_hash(pairs),
            final_loss,
            transferred_from: None,
            seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Copies each source network into a fresh network for the target leaf and
/// freezes everything but the trainable tail selected by `scope`.
pub fn transfer(
    spec: &PartitionSpec,
    source_leaf: usize,
    source_nets: &[&Mlp],
    target_leaf: usize,
    scope: TransferScope,
) -> Result<Vec<Mlp>> {
    let get = |i: usize| {
        spec.leaves
            .get(i)
            .ok_or_else(|| Error::Transfer(format!("leaf {i} out of range")))
    };
    let (s, t) = (get(source_leaf)?, get(target_leaf)?);
    if s.qubits.len() != t.qubits.len() || s.context.len() != t.context.len() {
        return Err(Error::Transfer(format!(
            "leaf {source_leaf} ({} qubits, {} context) and leaf {target_leaf} ({} qubits, {} context) differ in shape",
            s.qubits.len(),
            s.context.len(),
            t.qubits.len(),
            t.context.len()
        )));
    }
    if source_nets.len() != 1 << s.context.len() {
        return Err(Error::Transfer(format!(
            "{} source networks for {} context assignments",
            source_nets.len(),
            1 << s.context.len()
        )));
    }
    let d = 1 << t.qubits.len();
    source_nets
        .iter()
        .map(|src| {
            if src.input_dim() != d || src.output_dim() != d {
                return Err(Error::Transfer(format!(
                    "source network is {}→{}, target leaf needs {d}→{d}",
                    src.input_dim(),
                    src.output_dim()
                )));
            }
            let mut net = (*src).clone();
            let layers = net.layers().len();
            let tail = scope.trainable_tail().min(layers);
            for l in 0..layers {
                net.set_frozen(l, l < layers - tail);
            }
            Ok(net)
        })
        .collect()
}

struct Job {
    key: NetKey,
    qubits: usize,
    pairs: SlicePairs,
}

fn collect_jobs(samples: &[&Sample], spec: &PartitionSpec, leaves: &[usize], config: &TrainConfig, shots: u64) -> Result<Vec<Job>> {
    let mut jobs = Vec::new();
    for &leaf in leaves {
        let slices = extract_leaf(samples, spec, leaf, config.tau_skip_ideal, config.tau_noisy(shots))?;
        for (assignment, pairs) in slices.into_iter().enumerate() {
            jobs.push(Job {
                key: NetKey::Leaf { leaf, assignment },
                qubits: spec.leaves[leaf].qubits.len(),
                pairs,
            });
        }
    }
    for &c in &spec.conditional_qubits {
        jobs.push(Job {
            key: NetKey::Marginal { qubit: c },
            qubits: 1,
            pairs: extract_marginal(samples, spec.qubit_count, c)?,
        });
    }
    Ok(jobs)
}

fn check_inputs(samples: &[&Sample], spec: &PartitionSpec, config: &TrainConfig, shots: u64) -> Result<()> {
    spec.check_structure()?;
    config.validate(shots)?;
    if samples.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.noisy.width() != spec.qubit_count) {
        return Err(Error::Argument(format!(
            "sample width {} does not match the {}-qubit partition",
            s.noisy.width(),
            spec.qubit_count
        )));
    }
    Ok(())
}

fn run_jobs(jobs: Vec<Job>, config: &TrainConfig, seed: u64) -> Result<Vec<(NetKey, TrainedNet)>> {
    jobs.into_par_iter()
        .map(|job| Ok((job.key, train_one(job.key, &job.pairs, job.qubits, config, seed)?)))
        .collect()
}

fn assemble(spec: &PartitionSpec, trained: Vec<(NetKey, TrainedNet)>, fallback: Fallback) -> CiModel {
    let mut model = CiModel {
        spec: spec.clone(),
        leaf_nets: BTreeMap::new(),
        cond_nets: BTreeMap::new(),
        fallback,
    };
    for (key, t) in trained {
        match key {
            NetKey::Leaf { leaf, assignment } => {
                model.leaf_nets.insert((leaf, assignment), t);
            }
            NetKey::Marginal { qubit } => {
                model.cond_nets.insert(qubit, t);
            }
        }
    }
    model
}

/// Trains every network of `spec` from scratch. `shots` selects the default
/// noisy skip threshold.
pub fn train_ci(samples: &[&Sample], spec: &PartitionSpec, config: &TrainConfig, shots: u64, seed: u64) -> Result<CiModel> {
    check_inputs(samples, spec, config, shots)?;
    let leaves: Vec<usize> = (0..spec.leaves.len()).collect();
    let jobs = collect_jobs(samples, spec, &leaves, config, shots)?;
    Ok(assemble(spec, run_jobs(jobs, config, seed)?, config.fallback))
}

/// Trains source leaves and conditional-qubit networks from scratch, then
/// initializes each target leaf from its designated source and fine-tunes
/// the trainable tail. `transfers` lists `(source leaf, target leaf)`.
pub fn train_citl(
    samples: &[&Sample],
    spec: &PartitionSpec,
    transfers: &[(usize, usize)],
    config: &TrainConfig,
    shots: u64,
    seed: u64,
) -> Result<CiModel> {
    check_inputs(samples, spec, config, shots)?;
    let mut targets = BTreeMap::new();
    for &(s, t) in transfers {
        if s >= spec.leaves.len() || t >= spec.leaves.len() {
            return Err(Error::Transfer(format!("transfer {s} → {t} names a missing leaf")));
        }
        if s == t || targets.insert(t, s).is_some() {
            return Err(Error::Transfer(format!("leaf {t} is designated more than once or as its own source")));
        }
    }
    if let Some(&(s, _)) = transfers.iter().find(|(s, _)| targets.contains_key(s)) {
        return Err(Error::Transfer(format!("source leaf {s} is itself a transfer target")));
    }

    let scratch: Vec<usize> = (0..spec.leaves.len()).filter(|l| !targets.contains_key(l)).collect();
    let jobs = collect_jobs(samples, spec, &scratch, config, shots)?;
    let mut model = assemble(spec, run_jobs(jobs, config, seed)?, config.fallback);

    let mut tuned = Vec::new();
    for (&target, &source) in &targets {
        let n_ctx = spec.leaves[source].context.len();
        let sources: Vec<&Mlp> = (0..1 << n_ctx).map(|a| &model.leaf_nets[&(source, a)].net).collect();
        let init = transfer(spec, source, &sources, target, config.transfer_scope)?;
        let slices = extract_leaf(samples, spec, target, config.tau_skip_ideal, config.tau_noisy(shots))?;
        for (assignment, (net, pairs)) in init.into_iter().zip(slices).enumerate() {
            tuned.push((target, assignment, source, net, pairs));
        }
    }
    let tuned: Vec<((usize, usize), TrainedNet)> = tuned
        .into_par_iter()
        .map(|(leaf, assignment, source, net, pairs)| {
            let key = NetKey::Leaf { leaf, assignment };
            if pairs.inputs.is_empty() {
                return Err(Error::Training(format!("no training pairs for {key} ({} skipped)", pairs.skipped)));
            }
            let start = Instant::now();
            let (_, shuffle_seed) = net_seeds(seed, key);
            let (net, final_loss) = fit(net, &pairs, config, shuffle_seed)?;
            Ok((
                (leaf, assignment),
                TrainedNet {
                    net,
                    record: NetRecord {
                        init_seed: model.leaf_nets[&(source, assignment)].record.init_seed,
                        shuffle_seed,
                        pairs: pairs.inputs.len(),
                        skipped: pairs.skipped,
                        data_hash: data_hash(&pairs),
                        final_loss,
                        transferred_from: Some(source),
                        seconds: start.elapsed().as_secs_f64(),
                    },
                },
            ))
        })
        .collect::<Result<_>>()?;
    model.leaf_nets.extend(tuned);
    Ok(model)
}

impl CiModel {
    /// Checks that every network the partition needs is present with the
    /// right input width.
    pub fn check_complete(&self) -> Result<()> {
        for (li, leaf) in self.spec.leaves.iter().enumerate() {
            let d = 1 << leaf.qubits.len();
            for a in 0..1usize << leaf.context.len() {
                let t = self
                    .leaf_nets
                    .get(&(li, a))
                    .ok_or_else(|| Error::IncompleteModel(format!("missing network for leaf {li}, assignment {a}")))?;
                if t.net.input_dim() != d || t.net.output_dim() != d {
                    return Err(Error::IncompleteModel(format!("network for leaf {li}, assignment {a} is not {d}→{d}")));
                }
            }
        }
        for &c in &self.spec.conditional_qubits {
            let t = self
                .cond_nets
                .get(&c)
                .ok_or_else(|| Error::IncompleteModel(format!("missing marginal network for qubit {c}")))?;
            if t.net.input_dim() != 2 || t.net.output_dim() != 2 {
                return Err(Error::IncompleteModel(format!("marginal network for qubit {c} is not 2→2")));
            }
        }
        let expected = crate::topology::network_count(&self.spec);
        if self.leaf_nets.len() + self.cond_nets.len() != expected {
            return Err(Error::IncompleteModel(format!(
                "{} networks present, partition needs {expected}",
                self.leaf_nets.len() + self.cond_nets.len()
            )));
        }
        Ok(())
    }

    pub fn network_count(&self) -> usize {
        self.leaf_nets.len() + self.cond_nets.len()
    }

    pub fn nets(&self) -> impl Iterator<Item = (NetKey, &TrainedNet)> {
        self.leaf_nets
            .iter()
            .map(|(&(leaf, assignment), t)| (NetKey::Leaf { leaf, assignment }, t))
            .chain(self.cond_nets.iter().map(|(&qubit, t)| (NetKey::Marginal { qubit }, t)))
    }

    pub fn param_count(&self) -> usize {
        self.nets().map(|(_, t)| t.net.param_count()).sum()
    }

    /// Parameters updated during training (frozen transferred layers
    /// excluded).
    pub fn trainable_param_count(&self) -> usize {
        self.nets().map(|(_, t)| t.net.trainable_param_count()).sum()
    }

    /// Summed per-network training time of the given leaves.
    pub fn leaf_seconds(&self, leaves: &[usize]) -> f64 {
        self.leaf_nets
            .iter()
            .filter(|((l, _), _)| leaves.contains(l))
            .map(|(_, t)| t.record.seconds)
            .sum()
    }

    pub fn mitigate(&self, noisy: &ProbDist) -> Result<ProbDist> {
        Ok(self.mitigate_batch(&[noisy])?.0.swap_remove(0))
    }

    /// Mitigates many distributions, running each network once over the
    /// whole batch.
    pub fn mitigate_batch(&self, noisy: &[&ProbDist]) -> Result<(Vec<ProbDist>, MitigationDiagnostics)> {
        self.check_complete()?;
        let n = self.spec.qubit_count;
        if let Some(p) = noisy.iter().find(|p| p.width() != n) {
            return Err(Error::Argument(format!(
                "distribution width {} does not match the {n}-qubit model",
                p.width()
            )));
        }
        let batch = noisy.len();
        if batch == 0 {
            return Ok((Vec::new(), MitigationDiagnostics::default()));
        }
        if self.spec.is_trivial() {
            let net = &self.leaf_nets[&(0, 0)].net;
            let x: Vec<f64> = noisy.iter().flat_map(|p| p.values().iter().copied()).collect();
            let out = net.forward_batch(&x, batch);
            let d = net.output_dim();
            let dists = out
                .chunks_exact(d)
                .map(|row| ProbDist::new(n, row.to_vec()))
                .collect::<Result<_>>()?;
            return Ok((dists, MitigationDiagnostics::default()));
        }

        let mut diagnostics = MitigationDiagnostics::default();
        // per sample: (leaf, assignment) → conditional, qubit → marginal
        let mut leaf_out: Vec<BTreeMap<(usize, usize), ProbDist>> = vec![BTreeMap::new(); batch];
        let mut cond_out: Vec<BTreeMap<usize, ProbDist>> = vec![BTreeMap::new(); batch];

        for (li, leaf) in self.spec.leaves.iter().enumerate() {
            let slicer = Slicer::new(n, &leaf.qubits, &leaf.context)?;
            let k = leaf.qubits.len();
            let d = 1usize << k;
            let has_context = !leaf.context.is_empty();
            let slices: Vec<_> = noisy.iter().map(|p| slicer.slice(p.values())).collect();
            for a in 0..1usize << leaf.context.len() {
                let mut x = Vec::with_capacity(batch * d);
                for s in &slices {
                    match slice_row(s, a, TAU_COND, has_context) {
                        Some(row) => x.extend(row),
                        None => {
                            diagnostics.fallbacks += 1;
                            match self.fallback {
                                Fallback::Uniform => x.extend(std::iter::repeat_n(1.0 / d as f64, d)),
                                Fallback::LeafMarginal => {
                                    let total: Vec<f64> = (0..d).map(|t| s.rows.iter().map(|r| r[t]).sum()).collect();
                                    x.extend(total);
                                }
                            }
                        }
                    }
                }
                let out = self.leaf_nets[&(li, a)].net.forward_batch(&x, batch);
                for (i, row) in out.chunks_exact(d).enumerate() {
                    leaf_out[i].insert((li, a), ProbDist::normalized(k, row.to_vec())?);
                }
            }
        }
        for &c in &self.spec.conditional_qubits {
            let slicer = Slicer::new(n, &[c], &[])?;
            let x: Vec<f64> = noisy.iter().flat_map(|p| slicer.slice(p.values()).rows.swap_remove(0)).collect();
            let out = self.cond_nets[&c].net.forward_batch(&x, batch);
            for (i, row) in out.chunks_exact(2).enumerate() {
                cond_out[i].insert(c, ProbDist::normalized(1, row.to_vec())?);
            }
        }
        if diagnostics.fallbacks > 0 {
            log::debug!("{} context slices used the fallback input", diagnostics.fallbacks);
        }
        let dists = leaf_out
            .iter()
            .zip(&cond_out)
            .map(|(l, c)| recombine(&self.spec, l, c))
            .collect::<Result<_>>()?;
        Ok((dists, diagnostics))
    }

    pub fn to_file(&self) -> CiModelFile {
        CiModelFile {
            format: CI_FORMAT.into(),
            version: CI_VERSION,
            spec: self.spec.clone(),
            fallback: self.fallback,
            networks: self
                .nets()
                .map(|(key, t)| NetEntry {
                    key,
                    record: t.record.clone(),
                    model: t.net.to_file(None),
                })
                .collect(),
        }
    }

    pub fn from_file(file: CiModelFile) -> Result<Self> {
        if file.version != CI_VERSION {
            return Err(Error::Argument(format!(
                "model bundle version {} (expected {CI_VERSION})",
                file.version
            )));
        }
        let mut leaf_nets = BTreeMap::new();
        let mut cond_nets = BTreeMap::new();
        for e in file.networks {
            let t = TrainedNet {
                net: Mlp::from_file(e.model)?,
                record: e.record,
            };
            let dup = match e.key {
                NetKey::Leaf { leaf, assignment } => leaf_nets.insert((leaf, assignment), t).is_some(),
                NetKey::Marginal { qubit } => cond_nets.insert(qubit, t).is_some(),
            };
            if dup {
                return Err(Error::IncompleteModel(format!("duplicate network for {}", e.key)));
            }
        }
        let model = CiModel {
            spec: file.spec,
            leaf_nets,
            cond_nets,
            fallback: file.fallback,
        };
        model.spec.check_structure()?;
        model.check_complete()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file()).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CiModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_file(file)
    }
}

/// Applies a trained model to one noisy distribution.
pub fn mitigate_ci(model: &CiModel, noisy: &ProbDist) -> Result<ProbDist> {
    model.mitigate(noisy)
}

pub const CI_FORMAT: &str = "qmem-ci-model";
pub const CI_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetEntry {
    pub key: NetKey,
    pub record: NetRecord,
    pub model: MlpFile,
}

/// Single-file bundle: partition, fallback policy and every network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiModelFile {
    pub format: String,
    pub version: u32,
    pub spec: PartitionSpec,
    pub fallback: Fallback,
    pub networks: Vec<NetEntry>,
}
