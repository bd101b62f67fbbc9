//! Shipped device layouts, partitions and noise models.
//!
//! `falcon-7q` is the seven-qubit H-shaped heavy-hex device. `falcon-13q` is
//! the thirteen-qubit window (device qubits 4 to 16) of the 27-qubit
//! heavy-hex device, relabelled to indices 0 to 12; the original labels are
//! kept in the graph file's `physical_qubits`.

use std::str::FromStr;

use crate::simulator::NoiseModel;
use crate::topology::{CouplingGraph, PartitionSpec};

const FALCON7_GRAPH: &str = include_str!("../presets/falcon-7q.graph.json");
const FALCON7_PARTITION: &str = include_str!("../presets/falcon-7q.partition.json");
const FALCON13_GRAPH: &str = include_str!("../presets/falcon-13q.graph.json");
const FALCON13_PARTITION: &str = include_str!("../presets/falcon-13q.partition.json");
const LINEAR_ONLY: &str = include_str!("../presets/linear-only.noise.json");
const PAPER_LIKE_7Q: &str = include_str!("../presets/paper-like-7q.noise.json");
const PAPER_LIKE_13Q: &str = include_str!("../presets/paper-like-13q.noise.json");

/// Distortion strength of the device-like noise presets.
pub const DEVICE_ALPHA: f64 = 0.1;
pub const SEED_7Q: u64 = 7;
pub const SEED_13Q: u64 = 13;

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> T {
    serde_json::from_str(text).expect("shipped preset parses")
}

pub fn falcon7_graph() -> CouplingGraph {
    parse::<CouplingGraph>(FALCON7_GRAPH)
        .normalized()
        .expect("shipped graph is valid")
}

pub fn falcon7_partition() -> PartitionSpec {
    parse(FALCON7_PARTITION)
}

pub fn falcon13_graph() -> CouplingGraph {
    parse::<CouplingGraph>(FALCON13_GRAPH)
        .normalized()
        .expect("shipped graph is valid")
}

pub fn falcon13_partition() -> PartitionSpec {
    parse(FALCON13_PARTITION)
}

/// Transfer designations `(source leaf, target leaf)` for the shipped
/// partitions.
pub fn falcon7_transfer() -> Vec<(usize, usize)> {
    vec![(0, 1)]
}

pub fn falcon13_transfer() -> Vec<(usize, usize)> {
    vec![(0, 2), (1, 3)]
}

/// A named bundle of noise model, coupling graph, partition and transfer
/// designations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Seven qubits, confusion rates only.
    LinearOnly,
    PaperLike7q,
    PaperLike13q,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::LinearOnly, Preset::PaperLike7q, Preset::PaperLike13q];

    pub fn name(self) -> &'static str {
        match self {
            Preset::LinearOnly => "linear-only",
            Preset::PaperLike7q => "paper-like-7q",
            Preset::PaperLike13q => "paper-like-13q",
        }
    }

    pub fn noise(self) -> NoiseModel {
        match self {
            Preset::LinearOnly => parse(LINEAR_ONLY),
            Preset::PaperLike7q => parse(PAPER_LIKE_7Q),
            Preset::PaperLike13q => parse(PAPER_LIKE_13Q),
        }
    }

    /// The construction rule each shipped noise file was produced by.
    pub fn build_noise(self) -> NoiseModel {
        match self {
            Preset::LinearOnly => NoiseModel::linear_only(7, SEED_7Q),
            Preset::PaperLike7q => NoiseModel::device_like(&falcon7_graph(), SEED_7Q, DEVICE_ALPHA),
            Preset::PaperLike13q => NoiseModel::device_like(&falcon13_graph(), SEED_13Q, DEVICE_ALPHA),
        }
    }

    pub fn graph(self) -> CouplingGraph {
        match self {
            Preset::LinearOnly | Preset::PaperLike7q => falcon7_graph(),
            Preset::PaperLike13q => falcon13_graph(),
        }
    }

    pub fn partition(self) -> PartitionSpec {
        match self {
            Preset::LinearOnly | Preset::PaperLike7q => falcon7_partition(),
            Preset::PaperLike13q => falcon13_partition(),
        }
    }

    pub fn transfer(self) -> Vec<(usize, usize)> {
        match self {
            Preset::LinearOnly | Preset::PaperLike7q => falcon7_transfer(),
            Preset::PaperLike13q => falcon13_transfer(),
        }
    }

    /// File stem used for the shipped JSON files.
    pub fn file_stem(self) -> &'static str {
        self.name()
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown preset `{s}` (expected one of: {})",
                    Preset::ALL.map(|p| p.name()).join(", ")
                )
            })
    }
}
