//! Probability distributions over qubit bitstrings.
//!
//! Bit ordering is little-endian throughout the crate: qubit `i` contributes
//! `2^i` to the index of a basis outcome. Every routine that reads or writes a
//! distribution goes through [`index_of`] / [`bits_of`] or [`gather_bits`], so
//! the convention lives in exactly one place.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::PartitionSpec;

/// Sum tolerance for a normalized distribution.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Conditioning on an event with less mass than this is an error.
pub const TAU_COND: f64 = 1e-9;

/// A measured outcome on `width` qubits; `bits[i]` is qubit `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    bits: Vec<u8>,
}

impl BitString {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Argument(format!("bit value {b} is not 0 or 1")));
        }
        Ok(Self { bits })
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, qubit: usize) -> u8 {
        self.bits[qubit]
    }
}

/// Index of a bitstring: `sum_i bits[i] * 2^i`.
pub fn index_of(bits: &BitString) -> usize {
    bits.bits
        .iter()
        .enumerate()
        .fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i))
}

/// Inverse of [`index_of`] for a fixed width.
pub fn bits_of(index: usize, width: usize) -> BitString {
    BitString {
        bits: (0..width).map(|i| ((index >> i) & 1) as u8).collect(),
    }
}

/// Packs the bits of `index` found at `positions` into a dense little-endian
/// index (`positions[0]` becomes bit 0).
#[inline]
pub fn gather_bits(index: usize, positions: &[usize]) -> usize {
    positions
        .iter()
        .enumerate()
        .fold(0usize, |acc, (k, &q)| acc | (((index >> q) & 1) << k))
}

/// A probability vector over the `2^width` basis outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbDist {
    width: usize,
    values: Vec<f64>,
}

impl ProbDist {
    /// Checked constructor: values must be finite, non-negative and sum to one
    /// within [`NORM_TOLERANCE`].
    pub fn new(width: usize, values: Vec<f64>) -> Result<Self> {
        check_len(width, values.len())?;
        check_entries(&values)?;
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "values sum to {total}, not 1"
            )));
        }
        Ok(Self { width, values })
    }

    /// Divides non-negative weights by their total.
    pub fn normalized(width: usize, mut values: Vec<f64>) -> Result<Self> {
        check_len(width, values.len())?;
        check_entries(&values)?;
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self { width, values })
    }

    pub fn uniform(width: usize) -> Self {
        let len = 1usize << width;
        Self {
            width,
            values: vec![1.0 / len as f64; len],
        }
    }

    pub fn point_mass(width: usize, index: usize) -> Self {
        let mut values = vec![0.0; 1usize << width];
        values[index] = 1.0;
        Self { width, values }
    }

    /// Infers the width from the vector length.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let width = width_for_len(values.len())?;
        Self::new(width, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn prob(&self, bits: &BitString) -> f64 {
        self.values[index_of(bits)]
    }

    /// Index of the single non-zero entry, if there is exactly one.
    pub fn as_point_mass(&self) -> Option<usize> {
        let mut found = None;
        for (k, &v) in self.values.iter().enumerate() {
            if v != 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(k);
            }
        }
        found
    }
}

fn check_len(width: usize, len: usize) -> Result<()> {
    if width >= usize::BITS as usize || len != 1usize << width {
        return Err(Error::InvalidDistribution(format!(
            "length {len} does not match width {width}"
        )));
    }
    Ok(())
}

fn check_entries(values: &[f64]) -> Result<()> {
    if let Some((k, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidDistribution(format!(
            "entry {k} is {v}; entries must be finite and non-negative"
        )));
    }
    Ok(())
}

pub(crate) fn width_for_len(len: usize) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::InvalidDistribution(format!(
            "length {len} is not a power of two"
        )));
    }
    Ok(len.trailing_zeros() as usize)
}

fn check_qubit_set(width: usize, qubits: &[usize], what: &str) -> Result<()> {
    if qubits.is_empty() {
        return Err(Error::Argument(format!("{what} is empty")));
    }
    for w in qubits.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Argument(format!(
                "{what} {qubits:?} is not strictly ascending"
            )));
        }
    }
    if let Some(&q) = qubits.iter().find(|&&q| q >= width) {
        return Err(Error::Argument(format!(
            "{what} contains qubit {q}, out of range for width {width}"
        )));
    }
    Ok(())
}

/// Distribution over the qubits in `keep` (ascending), summing out the rest.
pub fn marginalize(p: &ProbDist, keep: &[usize]) -> Result<ProbDist> {
    check_qubit_set(p.width, keep, "keep set")?;
    if keep.len() == p.width {
        return Ok(p.clone());
    }
    let mut out = vec![0.0; 1usize << keep.len()];
    for (k, &v) in p.values.iter().enumerate() {
        out[gather_bits(k, keep)] += v;
    }
    Ok(ProbDist {
        width: keep.len(),
        values: out,
    })
}

/// `p(target | given)`, marginalizing every qubit in neither set.
///
/// `target` must be ascending; `given` lists `(qubit, value)` pairs on qubits
/// disjoint from `target`.
pub fn condition(p: &ProbDist, target: &[usize], given: &[(usize, u8)]) -> Result<ProbDist> {
    check_qubit_set(p.width, target, "target set")?;
    for &(q, v) in given {
        if q >= p.width {
            return Err(Error::Argument(format!(
                "given qubit {q} out of range for width {}",
                p.width
            )));
        }
        if v > 1 {
            return Err(Error::Argument(format!("given value {v} is not 0 or 1")));
        }
        if target.contains(&q) {
            return Err(Error::Argument(format!(
                "qubit {q} is both a target and a given"
            )));
        }
    }
    let mut given_mask = 0usize;
    let mut given_bits = 0usize;
    for &(q, v) in given {
        if given_mask & (1 << q) != 0 {
            return Err(Error::Argument(format!("qubit {q} given twice")));
        }
        given_mask |= 1 << q;
        given_bits |= (v as usize) << q;
    }
    let mut out = vec![0.0; 1usize << target.len()];
    for (k, &v) in p.values.iter().enumerate() {
        if k & given_mask == given_bits {
            out[gather_bits(k, target)] += v;
        }
    }
    let mass: f64 = out.iter().sum();
    if mass < TAU_COND {
        return Err(Error::ZeroMassCondition {
            assignment: given.to_vec(),
            mass,
        });
    }
    out.iter_mut().for_each(|x| *x /= mass);
    Ok(ProbDist {
        width: target.len(),
        values: out,
    })
}

/// Precomputed projection of a `width`-qubit index space onto a target set
/// and a context set. One pass over a distribution yields the joint
/// `p(target, context)` as one row per context assignment, from which every
/// conditional slice follows by row normalization.
#[derive(Debug, Clone)]
pub struct Slicer {
    width: usize,
    target: Vec<usize>,
    context: Vec<usize>,
    // (target index, context index) for each full index
    map: Vec<(u32, u32)>,
}

/// Unnormalized rows of `p(target, context)`, one per context assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSlices {
    pub rows: Vec<Vec<f64>>,
}

impl JointSlices {
    pub fn mass(&self, assignment: usize) -> f64 {
        self.rows[assignment].iter().sum()
    }

    /// Row `assignment` normalized to a conditional, or `None` if its mass is
    /// below `tau`.
    pub fn conditional(&self, assignment: usize, tau: f64) -> Option<Vec<f64>> {
        let row = &self.rows[assignment];
        let mass: f64 = row.iter().sum();
        if mass < tau.max(f64::MIN_POSITIVE) {
            return None;
        }
        Some(row.iter().map(|x| x / mass).collect())
    }
}

impl Slicer {
    pub fn new(width: usize, target: &[usize], context: &[usize]) -> Result<Self> {
        check_qubit_set(width, target, "target set")?;
        if !context.is_empty() {
            check_qubit_set(width, context, "context set")?;
        }
        if let Some(q) = target.iter().find(|q| context.contains(q)) {
            return Err(Error::Argument(format!(
                "qubit {q} is in both target and context"
            )));
        }
        let map = (0..1usize << width)
            .map(|k| {
                (
                    gather_bits(k, target) as u32,
                    gather_bits(k, context) as u32,
                )
            })
            .collect();
        Ok(Self {
            width,
            target: target.to_vec(),
            context: context.to_vec(),
            map,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn context(&self) -> &[usize] {
        &self.context
    }

    pub fn slice(&self, values: &[f64]) -> JointSlices {
        debug_assert_eq!(values.len(), self.map.len());
        let mut rows = vec![vec![0.0; 1usize << self.target.len()]; 1usize << self.context.len()];
        for (&(t, c), &v) in self.map.iter().zip(values) {
            rows[c as usize][t as usize] += v;
        }
        JointSlices { rows }
    }
}

/// Joint distribution from leaf conditionals and conditional-qubit marginals:
///
/// `p(b) = prod_leaves p(leaf bits | context bits) * prod_c p(c bit)`.
///
/// `leaf_conditionals` is keyed by `(leaf index, context assignment index)`,
/// with the assignment packed little-endian over `leaf.context` order.
pub fn recombine(
    spec: &PartitionSpec,
    leaf_conditionals: &BTreeMap<(usize, usize), ProbDist>,
    cond_marginals: &BTreeMap<usize, ProbDist>,
) -> Result<ProbDist> {
    let width = spec.qubit_count;
    let mut tables: Vec<Vec<&[f64]>> = Vec::with_capacity(spec.leaves.len());
    for (li, leaf) in spec.leaves.iter().enumerate() {
        let mut per_assignment = Vec::with_capacity(1 << leaf.context.len());
        for a in 0..1usize << leaf.context.len() {
            let d = leaf_conditionals.get(&(li, a)).ok_or_else(|| {
                Error::IncompleteModel(format!("no conditional for leaf {li}, assignment {a}"))
            })?;
            if d.width() != leaf.qubits.len() {
                return Err(Error::IncompleteModel(format!(
                    "conditional for leaf {li}, assignment {a} has width {}, expected {}",
                    d.width(),
                    leaf.qubits.len()
                )));
            }
            per_assignment.push(d.values());
        }
        tables.push(per_assignment);
    }
    let mut marginals = Vec::with_capacity(spec.conditional_qubits.len());
    for &c in &spec.conditional_qubits {
        let d = cond_marginals.get(&c).ok_or_else(|| {
            Error::IncompleteModel(format!("no marginal for conditional qubit {c}"))
        })?;
        if d.width() != 1 {
            return Err(Error::IncompleteModel(format!(
                "marginal for conditional qubit {c} has width {}",
                d.width()
            )));
        }
        marginals.push((c, d.values()));
    }

    let mut out = Vec::with_capacity(1usize << width);
    for k in 0..1usize << width {
        let mut v = 1.0;
        for (leaf, table) in spec.leaves.iter().zip(&tables) {
            let a = gather_bits(k, &leaf.context);
            v *= table[a][gather_bits(k, &leaf.qubits)];
        }
        for &(c, m) in &marginals {
            v *= m[(k >> c) & 1];
        }
        out.push(v);
    }
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::InvalidDistribution(format!(
            "recombined joint sums to {total}"
        )));
    }
    Ok(ProbDist { width, values: out })
}
