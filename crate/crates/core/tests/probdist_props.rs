mod common;

use common::{bit, ci_joint, exact_factors, max_abs_diff, random_ci_tables, random_dist};
use proptest::prelude::*;
use qmem_core::presets::{falcon13_partition, falcon7_partition};
use qmem_core::probdist::{bits_of, condition, index_of, marginalize, recombine, Slicer};
use qmem_core::rng;
use qmem_core::simulator::{ideal_dist, sample_angles};
use qmem_core::{Leaf, PartitionSpec, ProbDist};

proptest! {
    #[test]
    fn index_and_bits_are_inverse(width in 1usize..16, seed in any::<u64>()) {
        let k = (seed as usize) % (1 << width);
        let b = bits_of(k, width);
        prop_assert_eq!(index_of(&b), k);
        for q in 0..width {
            prop_assert_eq!(b.get(q) as usize, bit(k, q));
        }
    }

    #[test]
    fn marginal_matches_enumeration(seed in any::<u64>(), keep in 0usize..3) {
        let p = random_dist(3, &mut rng::stream(seed, "t", 0));
        let m = marginalize(&p, &[keep]).unwrap();
        let mut oracle = [0.0; 2];
        for k in 0..8 {
            oracle[bit(k, keep)] += p.values()[k];
        }
        prop_assert!(max_abs_diff(m.values(), &oracle) < 1e-15);
    }

    #[test]
    fn conditional_matches_ratio_of_sums(seed in any::<u64>(), given in 0u8..2) {
        let p = random_dist(3, &mut rng::stream(seed, "t", 0));
        let c = condition(&p, &[0, 2], &[(1, given)]).unwrap();
        let mut num = [0.0; 4];
        let mut den = 0.0;
        for k in 0..8 {
            if bit(k, 1) == given as usize {
                num[bit(k, 0) + 2 * bit(k, 2)] += p.values()[k];
                den += p.values()[k];
            }
        }
        let oracle: Vec<f64> = num.iter().map(|v| v / den).collect();
        prop_assert!(max_abs_diff(c.values(), &oracle) < 1e-14);
    }

    #[test]
    fn marginals_are_consistent(seed in any::<u64>()) {
        // summing out in two steps equals summing out at once
        let p = random_dist(5, &mut rng::stream(seed, "t", 0));
        let a = marginalize(&marginalize(&p, &[0, 2, 4]).unwrap(), &[1]).unwrap();
        let b = marginalize(&p, &[2]).unwrap();
        prop_assert!(max_abs_diff(a.values(), b.values()) < 1e-15);
    }
}

#[test]
fn product_state_conditionals_equal_marginals() {
    let mut r = rng::stream(3, "t", 0);
    for _ in 0..20 {
        let p = ideal_dist(&sample_angles(4, &mut r));
        let m = marginalize(&p, &[0, 3]).unwrap();
        for given in [[(1, 0), (2, 1)], [(1, 1), (2, 1)], [(1, 0), (2, 0)]] {
            let c = condition(&p, &[0, 3], &given).unwrap();
            assert!(max_abs_diff(c.values(), m.values()) < 1e-12);
        }
    }
}

#[test]
fn chain_product_state_recombines_to_itself() {
    let spec = PartitionSpec {
        qubit_count: 3,
        conditional_qubits: vec![1],
        leaves: vec![
            Leaf { qubits: vec![0], context: vec![1] },
            Leaf { qubits: vec![2], context: vec![1] },
        ],
    };
    let p = ideal_dist(&sample_angles(3, &mut rng::stream(4, "t", 0)));
    let (leaves, cond) = exact_factors(&spec, &p);
    let back = recombine(&spec, &leaves, &cond).unwrap();
    assert!(max_abs_diff(back.values(), p.values()) < 1e-15);
}

#[test]
fn random_ci_joints_recombine_exactly() {
    for (spec, count) in [(falcon7_partition(), 200), (falcon13_partition(), 10)] {
        let mut r = rng::stream(5, "ci-joint", spec.qubit_count as u64);
        for _ in 0..count {
            let tables = random_ci_tables(&spec, &mut r);
            let p = ci_joint(&spec, &tables);
            let (leaves, cond) = exact_factors(&spec, &p);
            // the extracted factors are the tables themselves
            for ((li, a), d) in &leaves {
                assert!(max_abs_diff(d.values(), &tables.leaf[*li][*a]) < 1e-12);
            }
            let back = recombine(&spec, &leaves, &cond).unwrap();
            assert!(max_abs_diff(back.values(), p.values()) < 1e-12);
        }
    }
}

#[test]
fn slicer_rows_match_joint_enumeration() {
    let p = random_dist(6, &mut rng::stream(6, "t", 0));
    let (target, context) = ([0, 4], [2, 5]);
    let slices = Slicer::new(6, &target, &context).unwrap().slice(p.values());
    let mut oracle = vec![vec![0.0; 4]; 4];
    for k in 0..64 {
        let t = bit(k, 0) + 2 * bit(k, 4);
        let c = bit(k, 2) + 2 * bit(k, 5);
        oracle[c][t] += p.values()[k];
    }
    for c in 0..4 {
        assert!(max_abs_diff(&slices.rows[c], &oracle[c]) < 1e-15);
    }
}

#[test]
fn uniform_factors_give_uniform_joint() {
    let spec = falcon7_partition();
    let (leaves, cond) = exact_factors(&spec, &ProbDist::uniform(7));
    let back = recombine(&spec, &leaves, &cond).unwrap();
    assert!(max_abs_diff(back.values(), ProbDist::uniform(7).values()) < 1e-15);
}
