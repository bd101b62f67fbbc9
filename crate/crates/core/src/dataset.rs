//! Corpora of `(angles, ideal, noisy)` samples: generation, splitting and a
//! line-oriented JSON file format.
//!
//! File layout: the first line is a metadata object
//! (`{"format":"qmem-dataset","version":1,...}`), followed by one object per
//! sample (`{"thetas":[...],"ideal":[...],"noisy":[...]}`). Numbers carry 17
//! significant digits so a save/load round trip is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probdist::ProbDist;
use crate::rng;
use crate::sig17;
use crate::simulator::{apply_noise, ideal_dist, sample_angles, sample_shots, AngleVector, NoiseModel};
use crate::topology::CouplingGraph;

pub const FORMAT_NAME: &str = "qmem-dataset";
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance between a stored ideal and the one recomputed from its angles.
pub const IDEAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub thetas: AngleVector,
    pub ideal: ProbDist,
    pub noisy: ProbDist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub qubit_count: usize,
    pub sample_count: usize,
    /// 0 means exact noisy distributions.
    pub shots: u64,
    /// [`NoiseModel::fingerprint`] of the generating model.
    pub noise_fingerprint: String,
    pub master_seed: u64,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

/// Index-free view of a train/test partition.
#[derive(Debug, Clone)]
pub struct Split<'a> {
    pub train: Vec<&'a Sample>,
    pub test: Vec<&'a Sample>,
}

fn now_unix() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Draws `sample_count` random product states and their noisy readouts.
/// Sample `i` uses only the stream `(seed, "sample", i)`, so generation is
/// parallel and independent of thread count.
pub fn generate(
    qubit_count: usize,
    sample_count: usize,
    shots: u64,
    model: &NoiseModel,
    graph: &CouplingGraph,
    seed: u64,
) -> Result<Dataset> {
    if sample_count == 0 {
        return Err(Error::Argument("sample_count must be at least 1".into()));
    }
    model.validate(graph)?;
    if model.qubit_count() != qubit_count {
        return Err(Error::Argument(format!(
            "noise model covers {} qubits, dataset requested {qubit_count}",
            model.qubit_count()
        )));
    }
    let samples = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "sample", i as u64);
            let thetas = sample_angles(qubit_count, &mut r);
            let ideal = ideal_dist(&thetas);
            let (exact, _) = apply_noise(model, graph, &ideal)?;
            let noisy = sample_shots(&exact, shots, &mut r);
            Ok(Sample { thetas, ideal, noisy })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            qubit_count,
            sample_count,
            shots,
            noise_fingerprint: model.fingerprint(),
            master_seed: seed,
            created_unix: now_unix(),
        },
        samples,
    })
}

/// Sizes of a `train_fraction` split of `total`, rounded to nearest.
pub fn split_sizes(total: usize, train_fraction: f64) -> Result<(usize, usize)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let train = (total as f64 * train_fraction).round() as usize;
    let test = total - train.min(total);
    if train == 0 || test == 0 {
        return Err(Error::Argument(format!(
            "split of {total} samples at {train_fraction} leaves an empty side ({train}/{test})"
        )));
    }
    Ok((train, test))
}

impl Dataset {
    pub fn qubit_count(&self) -> usize {
        self.meta.qubit_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shuffles with the stream `(seed, "split", 0)` and cuts at the rounded
    /// training size.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Split<'_>> {
        let (train, _) = split_sizes(self.samples.len(), train_fraction)?;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng::stream(seed, "split", 0));
        let (a, b) = order.split_at(train);
        Ok(Split {
            train: a.iter().map(|&i| &self.samples[i]).collect(),
            test: b.iter().map(|&i| &self.samples[i]).collect(),
        })
    }

    /// Checks every sample against the metadata and recomputes each ideal
    /// from its angles.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.meta.qubit_count;
        if self.meta.sample_count != self.samples.len() {
            return Err(format!(
                "metadata declares {} samples, found {}",
                self.meta.sample_count,
                self.samples.len()
            ));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.thetas.len() != n || s.ideal.width() != n || s.noisy.width() != n {
                return Err(format!("sample {i} does not have width {n}"));
            }
            let recomputed = ideal_dist(&s.thetas);
            let worst = recomputed
                .values()
                .iter()
                .zip(s.ideal.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if worst > IDEAL_TOLERANCE {
                return Err(format!("sample {i}: stored ideal differs from its angles by {worst:e}"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            meta: self.meta.clone(),
        };
        let mut write_line = |text: String| -> Result<()> {
            w.write_all(text.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|e| Error::io(path, e))
        };
        write_line(serde_json::to_string(&header).map_err(|e| Error::json(path, e))?)?;
        for s in &self.samples {
            let line = SampleLineRef {
                thetas: s.thetas.thetas(),
                ideal: s.ideal.values(),
                noisy: s.noisy.values(),
            };
            write_line(serde_json::to_string(&line).map_err(|e| Error::json(path, e))?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let malformed = |line: usize, message: String| Error::MalformedLine {
            path: path.into(),
            line,
            message,
        };
        let first = lines
            .next()
            .ok_or_else(|| malformed(1, "missing metadata line".into()))?
            .map_err(|e| Error::io(path, e))?;
        let probe: VersionProbe = serde_json::from_str(&first).map_err(|e| malformed(1, e.to_string()))?;
        if probe.format != FORMAT_NAME {
            return Err(malformed(1, format!("not a dataset file (format `{}`)", probe.format)));
        }
        if probe.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: probe.version,
                expected: FORMAT_VERSION,
            });
        }
        let header: Header = serde_json::from_str(&first).map_err(|e| malformed(1, e.to_string()))?;
        let n = header.meta.qubit_count;
        let mut samples = Vec::with_capacity(header.meta.sample_count);
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: SampleLine = serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
            let invalid = |message: String| Error::Validation {
                path: path.into(),
                message: format!("line {lineno}: {message}"),
            };
            if s.thetas.len() != n || s.ideal.len() != 1 << n || s.noisy.len() != 1 << n {
                return Err(invalid(format!("vector lengths do not match qubit_count {n}")));
            }
            samples.push(Sample {
                thetas: AngleVector::new(s.thetas).map_err(|e| invalid(e.to_string()))?,
                ideal: ProbDist::new(n, s.ideal).map_err(|e| invalid(e.to_string()))?,
                noisy: ProbDist::new(n, s.noisy).map_err(|e| invalid(e.to_string()))?,
            });
        }
        let ds = Dataset {
            meta: header.meta,
            samples,
        };
        ds.validate().map_err(|message| Error::Validation {
            path: path.into(),
            message,
        })?;
        Ok(ds)
    }

    /// [`Dataset::load`] plus a check that the file was generated by `model`.
    pub fn load_with_noise(path: impl AsRef<Path>, model: &NoiseModel) -> Result<Self> {
        let path = path.as_ref();
        let ds = Self::load(path)?;
        let expected = model.fingerprint();
        if ds.meta.noise_fingerprint != expected {
            return Err(Error::HashMismatch {
                path: path.into(),
                found: ds.meta.noise_fingerprint,
                expected,
            });
        }
        Ok(ds)
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: DatasetMeta,
}

#[derive(Serialize)]
struct SampleLineRef<'a> {
    #[serde(serialize_with = "sig17::vec")]
    thetas: &'a [f64],
    #[serde(serialize_with = "sig17::vec")]
    ideal: &'a [f64],
    #[serde(serialize_with = "sig17::vec")]
    noisy: &'a [f64],
}

#[derive(Deserialize)]
struct SampleLine {
    thetas: Vec<f64>,
    ideal: Vec<f64>,
    noisy: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(shots: u64, seed: u64) -> Dataset {
        let g = CouplingGraph::line(3);
        generate(3, 40, shots, &NoiseModel::device_like(&g, 1, 0.1), &g, seed).unwrap()
    }

    #[test]
    fn identity_noise_without_shots_is_noiseless() {
        let g = CouplingGraph::line(3);
        let ds = generate(3, 20, 0, &NoiseModel::identity(3), &g, 5).unwrap();
        for s in &ds.samples {
            assert_eq!(s.noisy, s.ideal);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small(1000, 3);
        let b = small(1000, 3);
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.samples, small(1000, 4).samples);
    }

    #[test]
    fn split_sizes_round() {
        assert_eq!(split_sizes(7500, 0.8).unwrap(), (6000, 1500));
        assert_eq!(split_sizes(6000, 5950.0 / 6000.0).unwrap(), (5950, 50));
        assert!(split_sizes(3, 0.01).is_err());
        assert!(split_sizes(3, 0.99).is_err());
        assert!(split_sizes(10, 1.0).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let ds = small(0, 1);
        let a = ds.split(0.75, 9).unwrap();
        let b = ds.split(0.75, 9).unwrap();
        assert_eq!(a.train.len(), 30);
        assert_eq!(a.test.len(), 10);
        assert_eq!(a.train, b.train);
        let mut all: Vec<*const Sample> = a.train.iter().chain(&a.test).map(|s| *s as *const _).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 40);
    }

    #[test]
    fn save_load_round_trip() {
        let ds = small(500, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        ds.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);
    }
}
