//! Coupling graphs, conditional-independence partitions and separator checks.
//!
//! A [`PartitionSpec`] is the flattened form of a partition tree: the set of
//! conditional qubits plus one [`Leaf`] per terminal subsystem, each carrying
//! the conditional qubits on its path to the root (its context). Qubit sets
//! are ascending; context assignments are packed little-endian in context
//! order.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingGraph {
    pub qubit_count: usize,
    /// Unordered pairs, stored as `(low, high)`.
    pub edges: Vec<(usize, usize)>,
    /// Device labels for each qubit index, when the graph is a relabelled
    /// subset of a larger device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical_qubits: Option<Vec<usize>>,
}

impl CouplingGraph {
    pub fn new(qubit_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let g = Self {
            qubit_count,
            edges: edges.into_iter().collect(),
            physical_qubits: None,
        };
        g.normalized()
    }

    /// Checks endpoints and canonicalizes edge order.
    pub fn normalized(mut self) -> Result<Self> {
        for e in self.edges.iter_mut() {
            let (a, b) = *e;
            if a == b {
                return Err(Error::Partition(format!("self-loop on qubit {a}")));
            }
            if a >= self.qubit_count || b >= self.qubit_count {
                return Err(Error::Partition(format!(
                    "edge ({a}, {b}) out of range for {} qubits",
                    self.qubit_count
                )));
            }
            *e = (a.min(b), a.max(b));
        }
        self.edges.sort_unstable();
        self.edges.dedup();
        if let Some(p) = &self.physical_qubits {
            if p.len() != self.qubit_count {
                return Err(Error::Partition(format!(
                    "{} physical labels for {} qubits",
                    p.len(),
                    self.qubit_count
                )));
            }
        }
        Ok(self)
    }

    pub fn line(qubit_count: usize) -> Self {
        Self {
            qubit_count,
            edges: (1..qubit_count).map(|i| (i - 1, i)).collect(),
            physical_qubits: None,
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.qubit_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        g.normalized()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leaf {
    pub qubits: Vec<usize>,
    pub context: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub qubit_count: usize,
    pub conditional_qubits: Vec<usize>,
    pub leaves: Vec<Leaf>,
}

impl PartitionSpec {
    /// One leaf holding every qubit: the full-joint network.
    pub fn trivial(qubit_count: usize) -> Self {
        Self {
            qubit_count,
            conditional_qubits: Vec::new(),
            leaves: vec![Leaf {
                qubits: (0..qubit_count).collect(),
                context: Vec::new(),
            }],
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.conditional_qubits.is_empty()
            && self.leaves.len() == 1
            && self.leaves[0].context.is_empty()
    }

    /// Disjointness, coverage and context-subset checks.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.qubit_count;
        if n == 0 {
            return Err(Error::Partition("qubit_count is zero".into()));
        }
        if self.leaves.is_empty() {
            return Err(Error::Partition("no leaves".into()));
        }
        let mut owner: Vec<Option<String>> = vec![None; n];
        let mut claim = |q: usize, who: String| -> Result<()> {
            if q >= n {
                return Err(Error::Partition(format!(
                    "{who} names qubit {q}, out of range for {n} qubits"
                )));
            }
            if let Some(prev) = &owner[q] {
                return Err(Error::Partition(format!(
                    "qubit {q} claimed by both {prev} and {who}"
                )));
            }
            owner[q] = Some(who);
            Ok(())
        };
        ascending(&self.conditional_qubits, "conditional_qubits")?;
        for &c in &self.conditional_qubits {
            claim(c, "conditional_qubits".into())?;
        }
        for (i, leaf) in self.leaves.iter().enumerate() {
            if leaf.qubits.is_empty() {
                return Err(Error::Partition(format!("leaf {i} has no qubits")));
            }
            ascending(&leaf.qubits, &format!("leaf {i} qubits"))?;
            ascending(&leaf.context, &format!("leaf {i} context"))?;
            for &q in &leaf.qubits {
                claim(q, format!("leaf {i}"))?;
            }
            if let Some(c) = leaf
                .context
                .iter()
                .find(|c| !self.conditional_qubits.contains(c))
            {
                return Err(Error::Partition(format!(
                    "leaf {i} context qubit {c} is not a conditional qubit"
                )));
            }
        }
        if let Some(q) = owner.iter().position(|o| o.is_none()) {
            return Err(Error::Partition(format!("qubit {q} is not covered")));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        spec.check_structure()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

fn ascending(qubits: &[usize], what: &str) -> Result<()> {
    if qubits.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Partition(format!(
            "{what} {qubits:?} must be strictly ascending"
        )));
    }
    Ok(())
}

/// A leaf that is still connected to outside qubits once its context is
/// removed from the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparationViolation {
    pub leaf: usize,
    /// Path from a leaf qubit to the first reachable qubit outside the leaf.
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<SeparationViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every leaf is cut off from the rest of the device by its
/// context. Structural problems are returned as errors before any
/// connectivity check runs.
pub fn validate_partition(graph: &CouplingGraph, spec: &PartitionSpec) -> Result<ValidationReport> {
    if graph.qubit_count != spec.qubit_count {
        return Err(Error::Partition(format!(
            "graph has {} qubits, partition has {}",
            graph.qubit_count, spec.qubit_count
        )));
    }
    spec.check_structure()?;
    let adj = graph.adjacency();
    let n = graph.qubit_count;
    let mut report = ValidationReport::default();

    for (li, leaf) in spec.leaves.iter().enumerate() {
        let mut blocked = vec![false; n];
        leaf.context.iter().for_each(|&c| blocked[c] = true);
        let mut inside = vec![false; n];
        leaf.qubits.iter().for_each(|&q| inside[q] = true);

        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for &q in &leaf.qubits {
            seen[q] = true;
            queue.push_back(q);
        }
        let mut escape = None;
        'bfs: while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if seen[v] || blocked[v] {
                    continue;
                }
                seen[v] = true;
                parent[v] = Some(u);
                if !inside[v] {
                    escape = Some(v);
                    break 'bfs;
                }
                queue.push_back(v);
            }
        }
        if let Some(mut v) = escape {
            let mut path = vec![v];
            while let Some(p) = parent[v] {
                path.push(p);
                v = p;
            }
            path.reverse();
            report.violations.push(SeparationViolation { leaf: li, path });
        }
    }
    Ok(report)
}

/// Networks a CI model over `spec` needs: one per leaf and context
/// assignment, plus one per conditional qubit.
pub fn network_count(spec: &PartitionSpec) -> usize {
    spec.leaves
        .iter()
        .map(|l| 1usize << l.context.len())
        .sum::<usize>()
        + spec.conditional_qubits.len()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
