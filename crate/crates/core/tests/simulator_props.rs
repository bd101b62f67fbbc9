mod common;

use common::{bit, max_abs_diff, random_dist};
use proptest::prelude::*;
use qmem_core::rng;
use qmem_core::simulator::{
    apply_noise, full_lambda, ideal_dist, sample_angles, sample_shots, Crosstalk, Executor, SimulatedDevice,
};
use qmem_core::{CouplingGraph, NoiseModel, ProbDist};
use rand::Rng;

fn random_model(g: &CouplingGraph, alpha: f64, r: &mut rng::Stream) -> NoiseModel {
    let n = g.qubit_count;
    let mut crosstalk = Vec::new();
    for &(a, b) in &g.edges {
        crosstalk.push(Crosstalk { from: a, to: b, delta: r.random_range(0.0..0.02) });
        crosstalk.push(Crosstalk { from: b, to: a, delta: r.random_range(0.0..0.02) });
    }
    NoiseModel {
        eps01: (0..n).map(|_| r.random_range(0.0..0.08)).collect(),
        eps10: (0..n).map(|_| r.random_range(0.0..0.08)).collect(),
        crosstalk,
        alpha,
        seed: 0,
    }
}

/// P(read | true) by enumerating every pair of strings.
fn brute_force_response(m: &NoiseModel, n: usize, read: usize, truth: usize) -> f64 {
    let mut prob = 1.0;
    for i in 0..n {
        let mut flip = if bit(truth, i) == 0 { m.eps01[i] } else { m.eps10[i] };
        for c in &m.crosstalk {
            if c.to == i && bit(truth, c.from) == 1 {
                flip += c.delta;
            }
        }
        prob *= if bit(read, i) == bit(truth, i) { 1.0 - flip } else { flip };
    }
    prob
}

fn brute_force_noise(m: &NoiseModel, n: usize, p: &ProbDist) -> Vec<f64> {
    let dim = 1 << n;
    let linear: Vec<f64> = (0..dim)
        .map(|read| (0..dim).map(|t| brute_force_response(m, n, read, t) * p.values()[t]).sum())
        .collect();
    let distorted: Vec<f64> = linear.iter().map(|v| v * (1.0 + m.alpha * v)).collect();
    let s: f64 = distorted.iter().sum();
    distorted.into_iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noise_matches_enumeration(seed in any::<u64>(), n in 1usize..6, alpha in 0.0f64..1.0) {
        let mut r = rng::stream(seed, "t", 0);
        let g = CouplingGraph::line(n);
        let m = random_model(&g, alpha, &mut r);
        let p = random_dist(n, &mut r);
        let (q, _) = apply_noise(&m, &g, &p).unwrap();
        prop_assert!(max_abs_diff(q.values(), &brute_force_noise(&m, n, &p)) < 1e-14);
    }

    #[test]
    fn response_columns_are_stochastic(seed in any::<u64>(), n in 1usize..7) {
        let mut r = rng::stream(seed, "t", 0);
        let g = CouplingGraph::line(n);
        let lambda = full_lambda(&random_model(&g, 0.0, &mut r), &g, n).unwrap();
        for col in lambda.column_iter() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
            prop_assert!(col.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn linear_stage_is_linear(seed in any::<u64>(), w in 0.0f64..1.0) {
        let mut r = rng::stream(seed, "t", 0);
        let g = CouplingGraph::line(4);
        let m = random_model(&g, 0.0, &mut r);
        let (a, b) = (random_dist(4, &mut r), random_dist(4, &mut r));
        let mix: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| w * x + (1.0 - w) * y).collect();
        let mix = ProbDist::normalized(4, mix).unwrap();
        let (qa, _) = apply_noise(&m, &g, &a).unwrap();
        let (qb, _) = apply_noise(&m, &g, &b).unwrap();
        let (qm, _) = apply_noise(&m, &g, &mix).unwrap();
        let expected: Vec<f64> = qa.values().iter().zip(qb.values()).map(|(x, y)| w * x + (1.0 - w) * y).collect();
        prop_assert!(max_abs_diff(qm.values(), &expected) < 1e-15);
    }
}

#[test]
fn distortion_is_not_linear() {
    let g = CouplingGraph::line(3);
    let mut m = random_model(&g, 0.5, &mut rng::stream(1, "t", 0));
    m.alpha = 0.5;
    let mut r = rng::stream(2, "t", 0);
    let (a, b) = (random_dist(3, &mut r), random_dist(3, &mut r));
    let mix: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
    let mix = ProbDist::new(3, mix).unwrap();
    let (qa, _) = apply_noise(&m, &g, &a).unwrap();
    let (qb, _) = apply_noise(&m, &g, &b).unwrap();
    let (qm, _) = apply_noise(&m, &g, &mix).unwrap();
    let avg: Vec<f64> = qa.values().iter().zip(qb.values()).map(|(x, y)| 0.5 * (x + y)).collect();
    assert!(max_abs_diff(qm.values(), &avg) > 1e-6);
}

#[test]
fn uniform_shots_concentrate() {
    // Hoeffding: P(|f - 0.25| > 0.005) <= 2 exp(-2 * 1e6 * 0.005^2) = 2e-22
    let f = sample_shots(&ProbDist::uniform(2), 1_000_000, &mut rng::stream(9, "t", 0));
    for v in f.values() {
        assert!((v - 0.25).abs() < 0.005);
    }
}

#[test]
fn deterministic_outcome_survives_sampling() {
    let p = ProbDist::point_mass(1, 0);
    assert_eq!(sample_shots(&p, 12345, &mut rng::stream(1, "t", 0)), p);
}

#[test]
fn shot_frequencies_are_multiples_of_one_over_shots() {
    let p = random_dist(3, &mut rng::stream(4, "t", 0));
    let f = sample_shots(&p, 1000, &mut rng::stream(5, "t", 0));
    for v in f.values() {
        assert!((v * 1000.0 - (v * 1000.0).round()).abs() < 1e-9);
    }
}

#[test]
fn device_execution_is_reproducible_per_stream() {
    let g = CouplingGraph::line(3);
    let dev = SimulatedDevice::new(NoiseModel::device_like(&g, 3, 0.1), g, 11, "exec").unwrap();
    let angles = sample_angles(3, &mut rng::stream(1, "t", 0));
    let a = dev.execute(&angles, 500, 7).unwrap();
    let b = dev.execute(&angles, 500, 7).unwrap();
    let c = dev.execute(&angles, 500, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let exact = dev.execute(&angles, 0, 7).unwrap();
    let (noisy, _) = apply_noise(&dev.model, &dev.graph, &ideal_dist(&angles)).unwrap();
    assert_eq!(exact, noisy);
}
