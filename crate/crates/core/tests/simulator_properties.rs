use proptest::prelude::*;
use relaycap::protocol_simulator::{baseline_alternating, simulate, simulate_many, SimConfig, StateProcess};
use relaycap::{solve_from_capacities, Execution, JointStatePmf, PerStateCapacities};

fn rates(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..3.0], n)
}

fn instance() -> impl Strategy<Value = (PerStateCapacities, JointStatePmf)> {
    (1usize..=3, 1usize..=3)
        .prop_flat_map(|(n1, n2)| (rates(n1), rates(n2), prop::collection::vec(prop::collection::vec(0.01f64..1.0, n2), n1)))
        .prop_map(|(a, b, raw)| {
            let total: f64 = raw.iter().flatten().sum();
            (
                PerStateCapacities::from_rates(a, b).unwrap(),
                JointStatePmf::new(raw.into_iter().map(|r| r.into_iter().map(|v| v / total).collect()).collect()),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bookkeeping_invariants((caps, joint) in instance(), seed in any::<u64>(), eps in 0.0f64..0.2) {
        let rep = solve_from_capacities(caps.clone(), &joint).unwrap();
        let cfg = SimConfig { blocks: 5_000, epsilon: eps, seed, decimation: 1, ..Default::default() };
        let t = simulate(&caps, &joint, &rep.policy, &cfg).unwrap();
        prop_assert!(t.conserves_bits());
        prop_assert_eq!(t.relay_blocks + t.source_blocks, t.blocks);
        prop_assert!(t.buffer_limited_blocks <= t.relay_blocks);
        prop_assert_eq!(t.samples.len(), 5_000);
        let mut delivered = 0.0;
        for row in &t.samples {
            prop_assert!(row.queue_bits >= 0.0);
            delivered += row.delivered_bits;
        }
        prop_assert!((delivered - t.throughput_bits * 5_000.0).abs() <= 1e-6);
        let again = simulate(&caps, &joint, &rep.policy, &cfg).unwrap();
        prop_assert_eq!(t, again);

        let base = baseline_alternating(&caps, &joint, &cfg).unwrap();
        prop_assert!(base.conserves_bits());
    }
}

#[test]
fn throughput_never_beats_capacity() {
    let caps = PerStateCapacities::from_rates(vec![0.4, 1.7], vec![0.9, 0.0, 2.2]).unwrap();
    let joint = JointStatePmf::new(vec![vec![0.1, 0.2, 0.15], vec![0.25, 0.1, 0.2]]);
    let rep = solve_from_capacities(caps.clone(), &joint).unwrap();
    let cfg = SimConfig { blocks: 200_000, ..Default::default() };
    let seeds: Vec<u64> = (0..16).collect();
    let runs = simulate_many(&caps, &joint, &rep.policy, &cfg, &seeds, Execution::default()).unwrap();
    let tp: Vec<f64> = runs.iter().map(|t| t.throughput_bits).collect();
    let mean = tp.iter().sum::<f64>() / tp.len() as f64;
    let var = tp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (tp.len() - 1) as f64;
    let se = (var / tp.len() as f64).sqrt();
    assert!(mean <= rep.capacity_bits + 3.0 * se + 1e-12, "{mean} vs {}", rep.capacity_bits);
    for t in &runs {
        assert!(t.conserves_bits());
        assert!(t.throughput_bits <= rep.capacity_bits * 1.02);
    }
}

#[test]
fn simulate_many_modes_agree() {
    let caps = PerStateCapacities::from_rates(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
    let joint = JointStatePmf::uniform(2, 2);
    let rep = solve_from_capacities(caps.clone(), &joint).unwrap();
    let cfg = SimConfig { blocks: 20_000, ..Default::default() };
    let seeds = [3, 1, 4, 1, 5];
    let a = simulate_many(&caps, &joint, &rep.policy, &cfg, &seeds, Execution::Sequential).unwrap();
    let b = simulate_many(&caps, &joint, &rep.policy, &cfg, &seeds, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[1], a[3]);
}

#[test]
fn markov_states_reach_capacity() {
    // sticky chain over four state pairs with uniform stationary law
    let stay = 0.7;
    let move_p = (1.0 - stay) / 3.0;
    let transition: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|j| if i == j { stay } else { move_p }).collect())
        .collect();
    let caps = PerStateCapacities::from_rates(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
    let joint = JointStatePmf::uniform(2, 2);
    let rep = solve_from_capacities(caps.clone(), &joint).unwrap();
    let cfg = SimConfig {
        blocks: 400_000,
        epsilon: 0.01 * rep.capacity_bits,
        state_process: StateProcess::Markov { transition },
        ..Default::default()
    };
    let t = simulate(&caps, &joint, &rep.policy, &cfg).unwrap();
    assert!(t.throughput_bits >= 0.95 * rep.capacity_bits, "{}", t.throughput_bits);
    assert!(t.conserves_bits());
}
