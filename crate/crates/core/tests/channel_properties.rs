use proptest::prelude::*;
use relaycap::capacity_solver::per_state_capacities;
use relaycap::{
    blahut_arimoto, marginal_state_pmfs, solve_capacity, validate_spec, JointStatePmf, RelayChannelSpec,
    StateChannel, StateSpace,
};

fn stochastic_row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut r| {
        r[0] += 1e-3;
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
        r
    })
}

fn channel() -> impl Strategy<Value = StateChannel> {
    (1usize..=4, 1usize..=4)
        .prop_flat_map(|(nx, ny)| prop::collection::vec(stochastic_row(ny), nx))
        .prop_map(StateChannel::new)
}

fn spec() -> impl Strategy<Value = RelayChannelSpec> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(n1, n2)| {
        (
            prop::collection::vec(stochastic_row(n2), n1),
            prop::collection::vec(channel(), n1),
            prop::collection::vec(channel(), n2),
        )
            .prop_map(move |(rows, sr, rd)| {
                // rows are each normalised; scale to a joint pmf
                let joint = rows.into_iter().map(|r| r.into_iter().map(|v| v / n1 as f64).collect()).collect();
                RelayChannelSpec {
                    states: StateSpace::numbered(n1, n2),
                    joint_pmf: JointStatePmf::new(joint),
                    sr_channels: sr,
                    rd_channels: rd,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_specs_flow_downstream(spec in spec()) {
        prop_assume!(validate_spec(&spec).is_empty());
        let (m1, m2) = marginal_state_pmfs(&spec.joint_pmf);
        prop_assert!((m1.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!((m2.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(m1.iter().chain(&m2).all(|v| *v >= 0.0));
        let caps = per_state_capacities(&spec, 1e-10).unwrap();
        prop_assert!(caps.max_gap <= 1e-9);
        let rep = solve_capacity(&spec).unwrap();
        prop_assert!((rep.c1_bits - rep.c2_bits).abs() <= 1e-9);
    }

    #[test]
    fn capacity_is_deterministic(ch in channel()) {
        let a = blahut_arimoto(&ch, 1e-10, 10_000);
        let b = blahut_arimoto(&ch, 1e-10, 10_000);
        prop_assert_eq!(&a, &b);
        let ny = ch.output_size() as f64;
        let nx = ch.input_size() as f64;
        prop_assert!(a.capacity_bits <= nx.min(ny).log2() + 1e-9);
    }

    #[test]
    fn broken_rows_are_reported(spec in spec(), bump in 0.01f64..0.5) {
        let mut bad = spec.clone();
        bad.sr_channels[0].transition[0][0] += bump;
        let v = validate_spec(&bad);
        prop_assert!(v.iter().any(|x| x.path.starts_with("sr_channels[0]")));
        prop_assert!(solve_capacity(&bad).is_err());
    }
}
