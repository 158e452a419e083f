use std::f64::consts::LN_2;

use relaycap::fading_awgn::{discretize_rayleigh, solve_rho, FadingModel, QuadratureOptions, RateEvaluator};
use relaycap::protocol_simulator::{simulate_fading, SimConfig};
use relaycap::{solve_from_capacities, Execution};

/// `e^x E1(x)` by the power series; fine for x in (0, 3].
fn exp_e1(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..300 {
        term *= -x / k as f64;
        sum += -term / k as f64;
    }
    x.exp() * (-0.577_215_664_901_532_9 - x.ln() + sum)
}

/// `E[log2(1 + g)]` for exponential `g` with the given mean.
fn mean_rate(m: f64) -> f64 {
    exp_e1(1.0 / m) / LN_2
}

/// `E[max(log2(1+g1), log2(1+g2))]` for independent exponentials: the
/// survival function of the max is `e^{-x/m1} + e^{-x/m2} - e^{-x(1/m1+1/m2)}`.
fn mean_max_rate(m1: f64, m2: f64) -> f64 {
    let (c1, c2) = (1.0 / m1, 1.0 / m2);
    (exp_e1(c1) + exp_e1(c2) - exp_e1(c1 + c2)) / LN_2
}

const MEANS: [(f64, f64); 6] = [(10.0, 10.0), (20.0, 5.0), (5.0, 20.0), (1.0, 1.0), (1.0, 20.0), (3.0, 7.5)];

#[test]
fn g_is_non_decreasing_on_a_grid() {
    for (m1, m2) in MEANS {
        let ev = RateEvaluator::new(&FadingModel::rayleigh(m1, m2), QuadratureOptions::default()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=40 {
            let rho = (2f64).powf(-5.0 + 10.0 * k as f64 / 40.0);
            let r = ev.eval(rho);
            let g = r.c1_bits - r.c2_bits;
            assert!(g >= prev - 1e-12, "({m1},{m2}) rho={rho}: {g} < {prev}");
            prev = g;
        }
    }
}

#[test]
fn region_rates_bounded_by_mean_of_max() {
    for (m1, m2) in MEANS {
        let ev = RateEvaluator::new(&FadingModel::rayleigh(m1, m2), QuadratureOptions::default()).unwrap();
        let bound = mean_max_rate(m1, m2);
        for rho in [0.0, 0.05, 0.5, 1.0, 2.0, 20.0, 1e6] {
            let r = ev.eval(rho);
            assert!(r.c1_bits + r.c2_bits <= bound + 1e-7, "({m1},{m2}) rho={rho}");
        }
        // rho = 1 picks the better hop everywhere
        let r = ev.eval(1.0);
        assert!((r.c1_bits + r.c2_bits - bound).abs() <= 1e-7, "({m1},{m2})");
    }
}

#[test]
fn capacity_below_both_mean_rates() {
    for (m1, m2) in MEANS {
        let rep = solve_rho(&FadingModel::rayleigh(m1, m2), 1e-9, QuadratureOptions::default()).unwrap();
        assert!(rep.capacity_bits <= mean_rate(m1).min(mean_rate(m2)) + 1e-9);
        assert!((rep.c1_bits - rep.c2_bits).abs() <= 1e-8 * rep.capacity_bits);
        assert!(!rep.diagnostics.flagged);
    }
}

#[test]
fn weaker_relay_hop_gets_more_slots() {
    // relay iff b > rho a, so extra relay slots mean rho below 1
    let model = FadingModel::rayleigh(20.0, 5.0);
    let quad = solve_rho(&model, 1e-9, QuadratureOptions::default()).unwrap();
    assert!(quad.rho_opt < 1.0, "quadrature rho {}", quad.rho_opt);
    let opts = QuadratureOptions { force_monte_carlo: true, mc_samples: 2_000_000, seed: 11, ..Default::default() };
    let mc = solve_rho(&model, 1e-6, opts).unwrap();
    assert!(mc.rho_opt < 1.0, "monte carlo rho {}", mc.rho_opt);
    assert!((mc.rho_opt - quad.rho_opt).abs() < 0.02 * quad.rho_opt);
    assert!((mc.capacity_bits - quad.capacity_bits).abs() < 0.01);

    let cfg = SimConfig { blocks: 200_000, seed: 5, ..Default::default() };
    let t = simulate_fading(&model, quad.rho_opt, None, &cfg).unwrap();
    assert!(t.relay_blocks as f64 > 0.5 * t.blocks as f64);
    // mirrored means mirror the threshold
    let mirror = solve_rho(&FadingModel::rayleigh(5.0, 20.0), 1e-9, QuadratureOptions::default()).unwrap();
    assert!(mirror.rho_opt > 1.0);
    assert!((mirror.capacity_bits - quad.capacity_bits).abs() < 1e-7);
}

#[test]
fn discretization_converges() {
    for (m1, m2) in [(10.0, 10.0), (20.0, 5.0), (1.0, 20.0), (1.0, 1.0)] {
        let fading = solve_rho(&FadingModel::rayleigh(m1, m2), 1e-10, QuadratureOptions::default()).unwrap();
        let mut prev_gap = f64::INFINITY;
        for m in [25, 200] {
            let (caps, joint) = discretize_rayleigh(m1, m2, m).unwrap();
            let disc = solve_from_capacities(caps, &joint).unwrap();
            let gap = (disc.capacity_bits - fading.capacity_bits).abs() / fading.capacity_bits;
            assert!(gap <= prev_gap + 1e-12, "({m1},{m2}) m={m}: {gap}");
            prev_gap = gap;
        }
        assert!(prev_gap <= 0.01, "({m1},{m2}) gap {prev_gap}");
    }
}

#[test]
fn execution_modes_agree_bitwise() {
    let model = FadingModel::rayleigh(20.0, 5.0);
    let seq = QuadratureOptions { exec: Execution::Sequential, ..Default::default() };
    let par = QuadratureOptions { exec: Execution::Parallel, ..Default::default() };
    let a = RateEvaluator::new(&model, seq).unwrap().eval(1.3);
    let b = RateEvaluator::new(&model, par).unwrap().eval(1.3);
    assert_eq!(a, b);
    let mc = |exec| QuadratureOptions { force_monte_carlo: true, mc_samples: 200_000, exec, ..Default::default() };
    let a = RateEvaluator::new(&model, mc(Execution::Sequential)).unwrap().eval(0.7);
    let b = RateEvaluator::new(&model, mc(Execution::Parallel)).unwrap().eval(0.7);
    assert_eq!(a, b);
}
