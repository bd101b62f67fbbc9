//! Synthetic stand-in for a noisy device: product-state preparation, ideal
//! outcome distributions, readout noise and finite-shot sampling.
//!
//! Readout noise has two stages. The linear stage flips each qubit's reading
//! with a probability set by its own true value plus additive cross-talk from
//! coupled neighbours whose *true* value is 1, so it is an exact column
//! stochastic matrix. The second stage distorts the whole vector as
//! `q_k ∝ p_k (1 + alpha p_k)`, which no matrix can represent.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probdist::{gather_bits, ProbDist};
use crate::rng;
use crate::topology::{write_json, CouplingGraph};

/// Per-qubit `R_y` rotation angles, each in `[0, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngleVector {
    thetas: Vec<f64>,
}

impl AngleVector {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if let Some(t) = thetas.iter().find(|t| !(0.0..=PI).contains(*t)) {
            return Err(Error::Argument(format!("angle {t} outside [0, π]")));
        }
        Ok(Self { thetas })
    }

    /// Angles preparing computational basis state `index`.
    pub fn basis_state(index: usize, qubit_count: usize) -> Self {
        Self {
            thetas: (0..qubit_count)
                .map(|i| if (index >> i) & 1 == 1 { PI } else { 0.0 })
                .collect(),
        }
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// `θ = arccos(z)`.
pub fn angle_from_z(z: f64) -> f64 {
    z.clamp(-1.0, 1.0).acos()
}

/// Angles whose states are uniform on the xz great circle of the Bloch
/// sphere: `z_i ~ U[-1, 1]`, `θ_i = arccos(z_i)`.
pub fn sample_angles<R: Rng + ?Sized>(qubit_count: usize, rng: &mut R) -> AngleVector {
    AngleVector {
        thetas: (0..qubit_count)
            .map(|_| angle_from_z(rng.random_range(-1.0..=1.0)))
            .collect(),
    }
}

fn prob_one(theta: f64) -> (f64, f64) {
    // exact at the poles so basis states are true point masses
    if theta == 0.0 {
        (1.0, 0.0)
    } else if theta == PI {
        (0.0, 1.0)
    } else {
        let c = (theta / 2.0).cos();
        let s = (theta / 2.0).sin();
        (c * c, s * s)
    }
}

/// Outcome distribution of the product state `⊗_i R_y(θ_i)|0⟩`.
pub fn ideal_dist(angles: &AngleVector) -> ProbDist {
    let mut values = vec![1.0];
    for &theta in &angles.thetas {
        let (p0, p1) = prob_one(theta);
        let mut next = Vec::with_capacity(values.len() * 2);
        next.extend(values.iter().map(|v| v * p0));
        next.extend(values.iter().map(|v| v * p1));
        values = next;
    }
    ProbDist::new(angles.len(), values).expect("product of normalized factors")
}

/// Additive increase of `to`'s flip probability while `from` is truly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crosstalk {
    pub from: usize,
    pub to: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// P(read 1 | true 0) per qubit.
    pub eps01: Vec<f64>,
    /// P(read 0 | true 1) per qubit.
    pub eps10: Vec<f64>,
    #[serde(default)]
    pub crosstalk: Vec<Crosstalk>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Counters surfaced by [`apply_noise`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NoiseDiagnostics {
    /// (qubit, neighbour configuration) pairs whose flip probability had to
    /// be clamped into `[0, 1]`.
    pub clamp_events: usize,
}

pub const DEFAULT_EPS_RANGE: (f64, f64) = (0.01, 0.05);
pub const DEFAULT_CROSSTALK: f64 = 0.01;

impl NoiseModel {
    pub fn identity(qubit_count: usize) -> Self {
        Self {
            eps01: vec![0.0; qubit_count],
            eps10: vec![0.0; qubit_count],
            crosstalk: Vec::new(),
            alpha: 0.0,
            seed: 0,
        }
    }

    /// Confusion rates only: per-qubit rates drawn from
    /// [`DEFAULT_EPS_RANGE`], no cross-talk, no distortion.
    pub fn linear_only(qubit_count: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "noise-preset", 0);
        let (lo, hi) = DEFAULT_EPS_RANGE;
        let mut eps01 = Vec::with_capacity(qubit_count);
        let mut eps10 = Vec::with_capacity(qubit_count);
        for _ in 0..qubit_count {
            eps01.push(r.random_range(lo..hi));
            eps10.push(r.random_range(lo..hi));
        }
        Self {
            eps01,
            eps10,
            crosstalk: Vec::new(),
            alpha: 0.0,
            seed,
        }
    }

    /// Confusion rates as in [`NoiseModel::linear_only`], cross-talk
    /// [`DEFAULT_CROSSTALK`] in both directions on every coupling, and the
    /// given distortion strength.
    pub fn device_like(graph: &CouplingGraph, seed: u64, alpha: f64) -> Self {
        let mut m = Self::linear_only(graph.qubit_count, seed);
        for &(a, b) in &graph.edges {
            m.crosstalk.push(Crosstalk {
                from: b,
                to: a,
                delta: DEFAULT_CROSSTALK,
            });
            m.crosstalk.push(Crosstalk {
                from: a,
                to: b,
                delta: DEFAULT_CROSSTALK,
            });
        }
        m.alpha = alpha;
        m
    }

    pub fn qubit_count(&self) -> usize {
        self.eps01.len()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("noise model serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self, graph: &CouplingGraph) -> Result<()> {
        let n = self.eps01.len();
        if self.eps10.len() != n {
            return Err(Error::NoiseModel(format!(
                "eps01 has {n} entries, eps10 has {}",
                self.eps10.len()
            )));
        }
        if graph.qubit_count != n {
            return Err(Error::NoiseModel(format!(
                "noise model covers {n} qubits, graph has {}",
                graph.qubit_count
            )));
        }
        for (i, (&a, &b)) in self.eps01.iter().zip(&self.eps10).enumerate() {
            if !(0.0..0.5).contains(&a) || !(0.0..0.5).contains(&b) {
                return Err(Error::NoiseModel(format!(
                    "confusion rates of qubit {i} ({a}, {b}) outside [0, 0.5)"
                )));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::NoiseModel(format!("alpha {} must be >= 0", self.alpha)));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut extra = vec![0.0; n];
        for c in &self.crosstalk {
            if !graph.has_edge(c.from, c.to) {
                return Err(Error::NoiseModel(format!(
                    "cross-talk {}<-{} is not a coupling-graph edge",
                    c.to, c.from
                )));
            }
            if !(c.delta >= 0.0 && c.delta.is_finite()) {
                return Err(Error::NoiseModel(format!(
                    "cross-talk {}<-{} has negative delta {}",
                    c.to, c.from, c.delta
                )));
            }
            if !seen.insert((c.to, c.from)) {
                return Err(Error::NoiseModel(format!(
                    "duplicate cross-talk entry {}<-{}",
                    c.to, c.from
                )));
            }
            extra[c.to] += c.delta;
        }
        for i in 0..n {
            let worst = self.eps01[i].max(self.eps10[i]) + extra[i];
            if worst > 1.0 {
                return Err(Error::NoiseModel(format!(
                    "qubit {i} flip probability reaches {worst} > 1"
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Flip-probability tables, one per qubit, indexed by
/// `true bit | (source configuration << 1)`.
struct FlipKernel {
    sources: Vec<Vec<usize>>,
    tables: Vec<Vec<f64>>,
    last_user: Vec<usize>,
    clamp_events: usize,
}

impl FlipKernel {
    fn new(model: &NoiseModel) -> Self {
        let n = model.qubit_count();
        let mut sources: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for c in &model.crosstalk {
            sources[c.to].push((c.from, c.delta));
        }
        let mut clamp_events = 0;
        let mut tables = Vec::with_capacity(n);
        for (i, src) in sources.iter_mut().enumerate() {
            src.sort_by_key(|s| s.0);
            let mut table = Vec::with_capacity(2 << src.len());
            for cfg in 0..1usize << src.len() {
                for t in 0..2 {
                    let base = if t == 0 { model.eps01[i] } else { model.eps10[i] };
                    let raw = base
                        + src
                            .iter()
                            .enumerate()
                            .filter(|(k, _)| (cfg >> k) & 1 == 1)
                            .map(|(_, s)| s.1)
                            .sum::<f64>();
                    if !(0.0..=1.0).contains(&raw) {
                        clamp_events += 1;
                    }
                    table.push(raw.clamp(0.0, 1.0));
                }
            }
            tables.push(table);
        }
        let sources: Vec<Vec<usize>> = sources
            .into_iter()
            .map(|s| s.into_iter().map(|x| x.0).collect())
            .collect();
        let mut last_user: Vec<usize> = (0..n).collect();
        for (k, src) in sources.iter().enumerate() {
            for &j in src {
                last_user[j] = last_user[j].max(k);
            }
        }
        Self {
            sources,
            tables,
            last_user,
            clamp_events,
        }
    }

    fn flip(&self, qubit: usize, true_index: usize) -> f64 {
        let t = (true_index >> qubit) & 1;
        let cfg = gather_bits(true_index, &self.sources[qubit]);
        self.tables[qubit][t | (cfg << 1)]
    }

    /// Read distribution for a single true bitstring: a product over qubits.
    fn column(&self, n: usize, true_index: usize) -> Vec<f64> {
        let mut out = vec![1.0];
        for i in 0..n {
            let f = self.flip(i, true_index);
            let (r0, r1) = if (true_index >> i) & 1 == 0 {
                (1.0 - f, f)
            } else {
                (f, 1.0 - f)
            };
            let mut next = Vec::with_capacity(out.len() * 2);
            next.extend(out.iter().map(|v| v * r0));
            next.extend(out.iter().map(|v| v * r1));
            out = next;
        }
        out
    }

    /// `Λ p` without materializing `Λ`: qubits are read out one at a time,
    /// keeping a true bit in the tensor until every qubit whose flip
    /// probability depends on it has been read.
    fn apply(&self, n: usize, p: &[f64]) -> Vec<f64> {
        #[derive(Clone, Copy, PartialEq)]
        enum Var {
            True(usize),
            Read,
        }
        let mut vars: Vec<Var> = (0..n).map(Var::True).collect();
        let mut data = p.to_vec();
        for i in 0..n {
            let pos = |vars: &[Var], q: usize| vars.iter().position(|&v| v == Var::True(q)).unwrap();
            let own = pos(&vars, i);
            let src_pos: Vec<usize> = self.sources[i].iter().map(|&j| pos(&vars, j)).collect();
            let m = vars.len();
            let half = 1usize << m;
            let table = &self.tables[i];
            let mut next = vec![0.0; half * 2];
            for (idx, &d) in data.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let t = (idx >> own) & 1;
                let cfg = gather_bits(idx, &src_pos);
                let f = table[t | (cfg << 1)];
                let (r0, r1) = if t == 0 { (1.0 - f, f) } else { (f, 1.0 - f) };
                next[idx] = d * r0;
                next[idx | half] = d * r1;
            }
            vars.push(Var::Read);
            data = next;
            // sum out true bits nobody later needs
            let mut b = 0;
            while b < vars.len() {
                match vars[b] {
                    Var::True(j) if self.last_user[j] <= i => {
                        data = sum_out(&data, b);
                        vars.remove(b);
                    }
                    _ => b += 1,
                }
            }
        }
        debug_assert!(vars.iter().all(|&v| v == Var::Read));
        data
    }
}

fn sum_out(data: &[f64], bit: usize) -> Vec<f64> {
    let low_mask = (1usize << bit) - 1;
    (0..data.len() / 2)
        .map(|idx| {
            let base = ((idx >> bit) << (bit + 1)) | (idx & low_mask);
            data[base] + data[base | (1 << bit)]
        })
        .collect()
}

/// Noisy readout distribution of `p`.
pub fn apply_noise(
    model: &NoiseModel,
    graph: &CouplingGraph,
    p: &ProbDist,
) -> Result<(ProbDist, NoiseDiagnostics)> {
    model.validate(graph)?;
    let n = model.qubit_count();
    if p.width() != n {
        return Err(Error::Argument(format!(
            "distribution width {} does not match the {n}-qubit noise model",
            p.width()
        )));
    }
    let kernel = FlipKernel::new(model);
    let diagnostics = NoiseDiagnostics {
        clamp_events: kernel.clamp_events,
    };
    if diagnostics.clamp_events > 0 {
        log::warn!(
            "noise model clamped {} flip probabilities into [0, 1]",
            diagnostics.clamp_events
        );
    }
    let mut q = match p.as_point_mass() {
        Some(t) => kernel.column(n, t),
        None => kernel.apply(n, p.values()),
    };
    if model.alpha > 0.0 {
        q.iter_mut().for_each(|v| *v *= 1.0 + model.alpha * *v);
        return Ok((ProbDist::normalized(n, q)?, diagnostics));
    }
    // clear the rounding residue of the linear stage so the output is a
    // normalized distribution; a no-op on the scale of 1e-16
    Ok((ProbDist::new(n, q)?, diagnostics))
}

/// Empirical frequencies of `shots` draws from `p`; `shots == 0` returns `p`.
pub fn sample_shots<R: Rng + ?Sized>(p: &ProbDist, shots: u64, rng: &mut R) -> ProbDist {
    if shots == 0 {
        return p.clone();
    }
    let values = p.values();
    let mut counts = vec![0u64; values.len()];
    let mut remaining = shots;
    let mut remaining_mass = 1.0f64;
    let last = values.len() - 1;
    for (k, &pk) in values.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == last {
            counts[k] = remaining;
            break;
        }
        let c = if pk <= 0.0 {
            0
        } else if remaining_mass <= pk {
            remaining
        } else {
            let ratio = (pk / remaining_mass).clamp(0.0, 1.0);
            Binomial::new(remaining, ratio)
                .expect("ratio in [0, 1]")
                .sample(rng)
        };
        counts[k] = c;
        remaining -= c;
        remaining_mass -= pk;
    }
    let total = shots as f64;
    let freqs = counts.iter().map(|&c| c as f64 / total).collect();
    ProbDist::normalized(p.width(), freqs).expect("shot counts sum to shots")
}

/// The linear stage as a dense `2^n × 2^n` column-stochastic matrix.
pub fn full_lambda(model: &NoiseModel, graph: &CouplingGraph, qubit_count: usize) -> Result<DMatrix<f64>> {
    model.validate(graph)?;
    if model.qubit_count() != qubit_count {
        return Err(Error::Argument(format!(
            "noise model covers {} qubits, requested {qubit_count}",
            model.qubit_count()
        )));
    }
    let kernel = FlipKernel::new(model);
    let dim = 1usize << qubit_count;
    let mut lambda = DMatrix::zeros(dim, dim);
    for t in 0..dim {
        let col = kernel.column(qubit_count, t);
        lambda.column_mut(t).copy_from_slice(&col);
    }
    Ok(lambda)
}

/// Something that prepares a product state and returns its measured
/// outcome frequencies.
pub trait Executor {
    fn qubit_count(&self) -> usize;

    /// Runs one circuit. `stream_index` selects the random stream used for
    /// shot sampling, so results do not depend on call order.
    fn execute(&self, angles: &AngleVector, shots: u64, stream_index: u64) -> Result<ProbDist>;
}

/// Noise model and coupling graph under a master seed.
#[derive(Debug, Clone)]
pub struct SimulatedDevice {
    pub model: NoiseModel,
    pub graph: CouplingGraph,
    pub seed: u64,
    /// Purpose label for shot-sampling streams.
    pub label: String,
}

impl SimulatedDevice {
    pub fn new(model: NoiseModel, graph: CouplingGraph, seed: u64, label: impl Into<String>) -> Result<Self> {
        model.validate(&graph)?;
        Ok(Self {
            model,
            graph,
            seed,
            label: label.into(),
        })
    }
}

impl Executor for SimulatedDevice {
    fn qubit_count(&self) -> usize {
        self.model.qubit_count()
    }

    fn execute(&self, angles: &AngleVector, shots: u64, stream_index: u64) -> Result<ProbDist> {
        let (noisy, _) = apply_noise(&self.model, &self.graph, &ideal_dist(angles))?;
        let mut r = rng::stream(self.seed, &self.label, stream_index);
        Ok(sample_shots(&noisy, shots, &mut r))
    }
}
