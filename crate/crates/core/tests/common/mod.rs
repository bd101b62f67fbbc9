//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod dd;

use std::collections::BTreeMap;

use qmem_core::probdist::{marginalize, Slicer};
use qmem_core::rng::Stream;
use qmem_core::{PartitionSpec, ProbDist};
use rand::Rng;

use dd::Dd;

/// Random distribution with strictly positive entries.
pub fn random_dist(width: usize, r: &mut Stream) -> ProbDist {
    let raw: Vec<f64> = (0..1usize << width).map(|_| r.random::<f64>() + 1e-3).collect();
    ProbDist::normalized(width, raw).unwrap()
}

/// Random positive vector of length `len` summing to one.
pub fn random_table(len: usize, r: &mut Stream) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| r.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Bit `q` of `index`.
pub fn bit(index: usize, q: usize) -> usize {
    (index >> q) & 1
}

/// Packs the bits of `index` at `qubits` little-endian, by plain loops.
pub fn pack(index: usize, qubits: &[usize]) -> usize {
    let mut out = 0;
    for (k, &q) in qubits.iter().enumerate() {
        out += bit(index, q) << k;
    }
    out
}

/// Tables defining a joint that factorizes over `spec`.
pub struct CiTables {
    /// `leaf[l][assignment]` is `p(leaf bits | context = assignment)`.
    pub leaf: Vec<Vec<Vec<f64>>>,
    /// `p(c = 0), p(c = 1)` per conditional qubit, in `spec` order.
    pub cond: Vec<[f64; 2]>,
}

pub fn random_ci_tables(spec: &PartitionSpec, r: &mut Stream) -> CiTables {
    let leaf = spec
        .leaves
        .iter()
        .map(|l| {
            (0..1usize << l.context.len())
                .map(|_| random_table(1 << l.qubits.len(), r))
                .collect()
        })
        .collect();
    let cond = spec
        .conditional_qubits
        .iter()
        .map(|_| {
            let t = random_table(2, r);
            [t[0], t[1]]
        })
        .collect();
    CiTables { leaf, cond }
}

/// Builds the joint by multiplying the tables entry by entry.
pub fn ci_joint(spec: &PartitionSpec, t: &CiTables) -> ProbDist {
    let values = (0..1usize << spec.qubit_count)
        .map(|k| {
            let mut v = 1.0;
            for (li, l) in spec.leaves.iter().enumerate() {
                v *= t.leaf[li][pack(k, &l.context)][pack(k, &l.qubits)];
            }
            for (ci, &c) in spec.conditional_qubits.iter().enumerate() {
                v *= t.cond[ci][bit(k, c)];
            }
            v
        })
        .collect();
    ProbDist::new(spec.qubit_count, values).unwrap()
}

/// Leaf conditionals and conditional-qubit marginals read straight off `p`:
/// the factors a perfect network would output.
pub fn exact_factors(
    spec: &PartitionSpec,
    p: &ProbDist,
) -> (BTreeMap<(usize, usize), ProbDist>, BTreeMap<usize, ProbDist>) {
    let mut leaves = BTreeMap::new();
    for (li, l) in spec.leaves.iter().enumerate() {
        let slices = Slicer::new(spec.qubit_count, &l.qubits, &l.context).unwrap().slice(p.values());
        for a in 0..1usize << l.context.len() {
            let row = slices.conditional(a, 0.0).unwrap();
            leaves.insert((li, a), ProbDist::new(l.qubits.len(), row).unwrap());
        }
    }
    let cond = spec
        .conditional_qubits
        .iter()
        .map(|&c| (c, marginalize(p, &[c]).unwrap()))
        .collect();
    (leaves, cond)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mean loss of `net` over `pairs`, evaluated in double-double arithmetic
/// from layer `start` on. `acts[s]` is the input of layer `start` for pair
/// `s`; `perturb` adds `delta` to one weight (`Some(i)`) or bias (`None`)
/// of layer `start`.
fn dd_loss_from(
    net: &qmem_core::Mlp,
    start: usize,
    acts: &[Vec<Dd>],
    targets: &[&[f64]],
    perturb: (Option<usize>, usize, Dd),
) -> Dd {
    let layers = net.layers();
    let mut total = Dd::ZERO;
    for (a0, t) in acts.iter().zip(targets) {
        let mut a = a0.clone();
        for (k, layer) in layers.iter().enumerate().skip(start) {
            let mut z = vec![Dd::ZERO; layer.outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = Dd::from(layer.biases[o]);
                if k == start && perturb.0.is_none() && perturb.1 == o {
                    acc = acc + perturb.2;
                }
                for (i, ai) in a.iter().enumerate() {
                    let idx = o * layer.inputs + i;
                    let mut w = Dd::from(layer.weights[idx]);
                    if k == start && perturb.0 == Some(idx) {
                        w = w + perturb.2;
                    }
                    acc = acc + w * *ai;
                }
                *zo = acc;
            }
            a = if k + 1 == layers.len() { z } else { z.into_iter().map(dd_selu).collect() };
        }
        // log-softmax, floored like the library loss
        let m = a.iter().copied().fold(Dd::from(f64::NEG_INFINITY), |x, y| if y > x { y } else { x });
        let lse = a.iter().fold(Dd::ZERO, |s, v| s + (*v - m).exp()).ln();
        let floor = Dd::from(1e-12).ln();
        for (v, &ti) in a.iter().zip(t.iter()) {
            if ti != 0.0 {
                let lp = *v - m - lse;
                total = total - Dd::from(ti) * if lp < floor { floor } else { lp };
            }
        }
    }
    total / Dd::from(acts.len() as f64)
}

fn dd_selu(z: Dd) -> Dd {
    let lambda = Dd::from(qmem_core::mlp::SELU_LAMBDA);
    if z.hi > 0.0 {
        lambda * z
    } else {
        lambda * Dd::from(qmem_core::mlp::SELU_ALPHA) * (z.exp() - Dd::ONE)
    }
}

/// Inputs of every layer for each pair, in double-double.
fn dd_layer_inputs(net: &qmem_core::Mlp, x: &[f64]) -> Vec<Vec<Dd>> {
    let layers = net.layers();
    let mut out = vec![x.iter().map(|&v| Dd::from(v)).collect::<Vec<_>>()];
    for (k, layer) in layers.iter().enumerate().take(layers.len() - 1) {
        let a = &out[k];
        let z: Vec<Dd> = (0..layer.outputs)
            .map(|o| {
                a.iter().enumerate().fold(Dd::from(layer.biases[o]), |acc, (i, ai)| {
                    acc + Dd::from(layer.weights[o * layer.inputs + i]) * *ai
                })
            })
            .collect();
        out.push(z.into_iter().map(dd_selu).collect());
    }
    out
}

/// Worst relative disagreement between analytic gradients and central
/// differences (step `step`) of the mean loss, over every weight and bias.
/// The differences are taken in double-double arithmetic so that f64
/// round-off in the loss (about `1e-16 · loss / step`) does not swamp small
/// coordinates. Relative error is measured against
/// `max(|analytic|, |numeric|, floor)`.
pub fn worst_gradient_error(
    net: &qmem_core::Mlp,
    pairs: &[(&[f64], &[f64])],
    step: f64,
    floor: f64,
) -> f64 {
    let grads = net.gradients(pairs).unwrap();
    let per_pair: Vec<Vec<Vec<Dd>>> = pairs.iter().map(|(x, _)| dd_layer_inputs(net, x)).collect();
    let targets: Vec<&[f64]> = pairs.iter().map(|(_, t)| *t).collect();
    let h = Dd::from(step);
    let mut worst = 0.0f64;
    for (l, layer) in net.layers().iter().enumerate() {
        let acts: Vec<Vec<Dd>> = per_pair.iter().map(|p| p[l].clone()).collect();
        let numeric = |which: Option<usize>, bias: usize| {
            let up = dd_loss_from(net, l, &acts, &targets, (which, bias, h));
            let down = dd_loss_from(net, l, &acts, &targets, (which, bias, -h));
            ((up - down) / (h + h)).to_f64()
        };
        let mut check = |analytic: f64, numeric: f64| {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        };
        for i in 0..layer.weights.len() {
            check(grads.weights[l][i], numeric(Some(i), usize::MAX));
        }
        for o in 0..layer.biases.len() {
            check(grads.biases[l][o], numeric(None, o));
        }
    }
    worst
}

/// Random probability rows for gradient checks.
pub fn random_rows(count: usize, d: usize, r: &mut Stream) -> Vec<Vec<f64>> {
    (0..count).map(|_| random_table(d, r)).collect()
}
