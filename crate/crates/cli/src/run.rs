//! Mode dispatch: turns a [`RunConfig`] into a [`Report`], an optional
//! trace, and human-readable summary lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relaycap::capacity_solver::{per_state_capacities_with, BALANCE_TOL};
use relaycap::fading_awgn::{discretize_rayleigh, solve_rho, FadingModel, RateEvaluator};
use relaycap::protocol_simulator::{baseline_alternating, simulate, simulate_fading, SimConfig, StateProcess};
use relaycap::{brute_force_capacity, par, solve_from_capacities, CapacityReport, Execution, JointStatePmf, Threshold};
use serde_json::Value;

use crate::config::{ConfigError, ExampleName, ExampleSection, Mode, RunConfig};
use crate::instances::{self, OnOff};
use crate::report::{
    write_trace_csv, Check, Comparison, ExampleSummary, ExtF64, FadingSummary, OracleSummary, Report, SimSummary, Trace,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] relaycap::Error),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Result of a run before anything is written.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub trace: Option<Trace>,
    pub lines: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let mut out = Outcome { report: Report::new(cfg.mode, cfg.seed), trace: None, lines: Vec::new() };
    match cfg.mode {
        Mode::Capacity => run_capacity(cfg, &mut out)?,
        Mode::Simulate => run_simulate(cfg, &mut out)?,
        Mode::Fading => run_fading(cfg, &mut out)?,
        Mode::OracleCheck => run_oracle(cfg, &mut out)?,
        Mode::Example => run_example(cfg, cfg.example.as_ref().expect("checked at load"), &mut out)?,
    }
    let failed: Vec<&str> = out.report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    out.lines.push(if failed.is_empty() {
        format!("all {} checks passed", out.report.checks.len())
    } else {
        format!("FAILED checks: {}", failed.join(", "))
    });
    Ok(out)
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

fn fmt_rho(t: Threshold) -> String {
    ExtF64(t.as_f64()).to_string()
}

fn solve_spec(cfg: &RunConfig) -> Result<CapacityReport, RunError> {
    let spec = cfg.spec.as_ref().expect("checked at load");
    let caps = per_state_capacities_with(spec, cfg.solver.tol, cfg.solver.max_iter, Execution::default())?;
    Ok(solve_from_capacities(caps, &spec.joint_pmf)?)
}

fn capacity_checks(rep: &CapacityReport, joint: &JointStatePmf, ba_tol: Option<f64>, report: &mut Report) {
    let gap = (rep.c1_bits - rep.c2_bits).abs();
    report.check(Check::new("balance", gap <= BALANCE_TOL, format!("|C1 - C2| = {gap:e}")));
    let (sa, sb) = rep.per_state.full_attention(joint);
    let slack = 1e-12;
    report.check(Check::new(
        "upper_bounds",
        rep.capacity_bits <= sa + slack && rep.capacity_bits <= sb + slack,
        format!("C = {} <= min({sa}, {sb})", rep.capacity_bits),
    ));
    if let Some(tol) = ba_tol {
        let g = rep.per_state.max_gap;
        report.check(Check::new("per_state_convergence", g <= tol, format!("widest bound gap {g:e} (tol {tol:e})")));
    }
}

fn capacity_lines(rep: &CapacityReport, lines: &mut Vec<String>) {
    lines.push(format!("rho_opt = {}", fmt_rho(rep.rho_opt)));
    lines.push(format!("P_C = {:.6}", rep.coin_prob_opt));
    lines.push(format!("C1 = {:.6}, C2 = {:.6}", rep.c1_bits, rep.c2_bits));
    lines.push(format!("C = {:.6} bits/use", rep.capacity_bits));
}

fn run_capacity(cfg: &RunConfig, out: &mut Outcome) -> Result<(), RunError> {
    let rep = solve_spec(cfg)?;
    let joint = &cfg.spec.as_ref().expect("checked at load").joint_pmf;
    capacity_checks(&rep, joint, Some(cfg.solver.tol), &mut out.report);
    capacity_lines(&rep, &mut out.lines);
    out.report.capacity = Some(rep);
    Ok(())
}

fn sim_config(cfg: &RunConfig, epsilon: f64) -> SimConfig {
    let decimation = match (cfg.sim.decimation, &cfg.output.trace) {
        (Some(d), _) => d,
        (None, Some(_)) => 1,
        (None, None) => 0,
    };
    SimConfig {
        blocks: cfg.sim.blocks(),
        epsilon,
        seed: cfg.seed,
        state_process: cfg.sim.state_process.clone(),
        decimation,
    }
}

fn epsilon_for(cfg: &RunConfig, capacity: f64) -> f64 {
    match (cfg.sim.epsilon, cfg.sim.epsilon_rel) {
        (Some(e), _) => e,
        (None, Some(r)) => r * capacity,
        (None, None) => 0.0,
    }
}

/// Three standard deviations of the mean per-block arrival, whose
/// increments lie in `[0, max_rate]` with mean at most `capacity`.
fn noise_margin(max_rate: f64, capacity: f64, blocks: u64) -> f64 {
    if blocks == 0 {
        return 0.0;
    }
    3.0 * (max_rate * capacity / blocks as f64).sqrt()
}

fn simulation_checks(sim: &SimSummary, capacity: f64, max_rate: f64, iid: bool, report: &mut Report) {
    report.check(Check::new("conservation", sim.conserved, "arrived - delivered == final queue (exact units)"));
    if iid {
        let bound = capacity + noise_margin(max_rate, capacity, sim.blocks);
        report.check(Check::new(
            "throughput_within_capacity",
            sim.throughput_bits <= bound,
            format!("throughput {} <= {bound}", sim.throughput_bits),
        ));
    }
}

fn run_simulate(cfg: &RunConfig, out: &mut Outcome) -> Result<(), RunError> {
    let spec = cfg.spec.as_ref().expect("checked at load");
    let rep = solve_spec(cfg)?;
    capacity_checks(&rep, &spec.joint_pmf, Some(cfg.solver.tol), &mut out.report);
    let eps = epsilon_for(cfg, rep.capacity_bits);
    let sim_cfg = sim_config(cfg, eps);
    let trace = simulate(&rep.per_state, &spec.joint_pmf, &rep.policy, &sim_cfg)?;
    let sim = SimSummary::new(&trace, eps);
    let max_a = rep.per_state.a.iter().cloned().fold(0.0, f64::max);
    let iid = cfg.sim.state_process == StateProcess::Iid;
    simulation_checks(&sim, rep.capacity_bits, max_a, iid, &mut out.report);

    capacity_lines(&rep, &mut out.lines);
    out.lines.push(format!(
        "adaptive: throughput {:.6} over {} blocks (eps {:e}), buffer-limited fraction {:.3e}",
        sim.throughput_bits, sim.blocks, eps, sim.buffer_limited_fraction
    ));

    if cfg.sim.baseline {
        let base_cfg = SimConfig { decimation: 0, ..sim_cfg.clone() };
        let base = SimSummary::new(&baseline_alternating(&rep.per_state, &spec.joint_pmf, &base_cfg)?, eps);
        let margin = noise_margin(max_a, rep.capacity_bits, sim.blocks);
        out.report.check(Check::new(
            "baseline_not_better",
            base.throughput_bits <= sim.throughput_bits + margin,
            format!("alternating {} vs adaptive {}", base.throughput_bits, sim.throughput_bits),
        ));
        out.lines.push(format!("alternating baseline: throughput {:.6}", base.throughput_bits));
        out.report.baseline = Some(base);
    }
    if cfg.output.trace.is_some() {
        out.trace = Some(Trace {
            rows: trace.samples,
            labels: Some((spec.states.labels_s1.clone(), spec.states.labels_s2.clone())),
        });
    }
    out.report.simulation = Some(sim);
    out.report.capacity = Some(rep);
    Ok(())
}

fn run_fading(cfg: &RunConfig, out: &mut Outcome) -> Result<(), RunError> {
    let model = cfg.fading.model.as_ref().expect("checked at load");
    let opts = cfg.fading.quadrature(cfg.seed);
    let sol = solve_rho(model, cfg.fading.tol, opts)?;
    let (e1, e2) = RateEvaluator::new(model, opts)?.mean_rates();
    fading_checks(&sol, cfg.fading.tol, (e1, e2), &mut out.report);
    out.lines.push(format!("rho_opt = {:.6}", sol.rho_opt));
    out.lines.push(format!("C1 = {:.6}, C2 = {:.6}", sol.c1_bits, sol.c2_bits));
    out.lines.push(format!("C = {:.6} bits/use ({:?})", sol.capacity_bits, sol.diagnostics.method));

    if cfg.fading.simulate {
        let eps = epsilon_for(cfg, sol.capacity_bits);
        let sim_cfg = sim_config(cfg, eps);
        let trace = simulate_fading(model, sol.rho_opt, sol.coin_prob, &sim_cfg)?;
        let sim = SimSummary::new(&trace, eps);
        out.report.check(Check::new("conservation", sim.conserved, "arrived - delivered == final queue (exact units)"));
        out.lines.push(format!("simulated throughput {:.6} over {} blocks", sim.throughput_bits, sim.blocks));
        if cfg.output.trace.is_some() {
            out.trace = Some(Trace { rows: trace.samples, labels: None });
        }
        out.report.simulation = Some(sim);
    }
    out.report.fading = Some(FadingSummary { solution: sol, mean_rates_bits: [e1, e2] });
    Ok(())
}

fn fading_checks(sol: &relaycap::fading_awgn::FadingCapacityReport, tol: f64, means: (f64, f64), report: &mut Report) {
    let scale = sol.c1_bits.max(sol.c2_bits);
    let gap = (sol.c1_bits - sol.c2_bits).abs();
    report.check(Check::new("balance", gap <= tol * scale, format!("|C1 - C2| = {gap:e} (relative tol {tol:e})")));
    report.check(Check::new("interior_solution", sol.boundary.is_none(), format!("boundary: {:?}", sol.boundary)));
    report.check(Check::new(
        "integration_error",
        !sol.diagnostics.flagged,
        format!("estimated error {:e}", sol.diagnostics.est_error),
    ));
    // Monte Carlo mean rates are sample means, so compare on the same draws
    let bound = means.0.min(means.1);
    report.check(Check::new(
        "capacity_below_mean_rates",
        sol.capacity_bits <= bound + 1e-12,
        format!("C = {} <= {bound}", sol.capacity_bits),
    ));
}

fn run_oracle(cfg: &RunConfig, out: &mut Outcome) -> Result<(), RunError> {
    let o = &cfg.oracle;
    let results = par::map_range(Execution::default(), o.trials, |t| -> Result<(f64, f64), relaycap::Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64);
        let spec = instances::random_spec(&mut rng, o.max_states, o.max_symbols);
        let caps = per_state_capacities_with(&spec, cfg.solver.tol, cfg.solver.max_iter, Execution::Sequential)?;
        let oracle = brute_force_capacity(&caps, &spec.joint_pmf, o.grid);
        let rep = solve_from_capacities(caps, &spec.joint_pmf)?;
        Ok((rep.capacity_bits, oracle))
    });
    let mut failures = Vec::new();
    let mut below_oracle = Vec::new();
    let (mut worst_gap, mut worst_trial) = (0.0, 0);
    for (t, r) in results.into_iter().enumerate() {
        let (solver, oracle) = r?;
        let gap = (solver - oracle).abs();
        if gap > worst_gap {
            worst_gap = gap;
            worst_trial = t;
        }
        if gap > o.tol {
            failures.push(t);
        }
        // the oracle searches a subset of the policies the solver optimizes over
        if solver < oracle - 1e-9 {
            below_oracle.push(t);
        }
    }
    let summary = OracleSummary {
        trials: o.trials,
        within: o.trials - failures.len(),
        tol: o.tol,
        grid: o.grid,
        worst_gap,
        worst_trial,
        failures,
    };
    out.report.check(Check::new("oracle_agreement", summary.failures.is_empty(), summary.headline()));
    out.report.check(Check::new(
        "solver_dominates_grid",
        below_oracle.is_empty(),
        format!("trials below the grid optimum: {below_oracle:?}"),
    ));
    out.lines.push(summary.headline());
    out.lines.push(format!("worst gap {worst_gap:e} (trial {worst_trial})"));
    out.report.oracle = Some(summary);
    Ok(())
}

struct Params<'a> {
    map: &'a BTreeMap<String, Value>,
}

impl Params<'_> {
    fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        for k in self.map.keys() {
            if !known.contains(&k.as_str()) {
                return Err(ConfigError::Schema {
                    path: format!(".example.params.{k}"),
                    message: format!("unknown parameter; expected one of {}", known.join(", ")),
                });
            }
        }
        Ok(())
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => match v.as_f64() {
                Some(x) if x > 0.0 && x.is_finite() => Ok(x),
                _ => Err(ConfigError::Schema {
                    path: format!(".example.params.{key}"),
                    message: format!("expected a positive number, got {v}"),
                }),
            },
        }
    }

    fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.map.get(key) {
            None => Ok(false),
            Some(Value::Bool(b)) => Ok(*b),
            Some(v) => Err(ConfigError::Schema {
                path: format!(".example.params.{key}"),
                message: format!("expected true or false, got {v}"),
            }),
        }
    }
}

fn compare(
    rows: &mut Vec<Comparison>,
    lines: &mut Vec<String>,
    report: &mut Report,
    quantity: &str,
    expected: f64,
    computed: f64,
    tol: f64,
) {
    let ok = if expected.is_infinite() || expected == 0.0 {
        computed == expected || (expected == 0.0 && computed.abs() <= tol)
    } else {
        rel_err(computed, expected) <= tol
    };
    report.check(Check::new(
        &format!("{quantity}_matches"),
        ok,
        format!("computed {} expected {} (tol {tol:e})", ExtF64(computed), ExtF64(expected)),
    ));
    lines.push(format!("{quantity} = {} (expected {})", ExtF64(computed), ExtF64(expected)));
    rows.push(Comparison { quantity: quantity.into(), expected: Some(ExtF64(expected)), computed: ExtF64(computed) });
}

fn run_example(cfg: &RunConfig, ex: &ExampleSection, out: &mut Outcome) -> Result<(), RunError> {
    let p = Params { map: &ex.params };
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let report = &mut out.report;
    let name = match ex.name {
        ExampleName::Fixed => {
            p.check_known(&["A", "B"])?;
            let (a, b) = (p.positive("A", 1.0)?, p.positive("B", 1.0)?);
            let tol = ex.tol.unwrap_or(1e-9);
            let (caps, joint) = instances::fixed_instance(a, b);
            let want = instances::fixed_closed_form(a, b);
            let rep = solve_from_capacities(caps, &joint)?;
            capacity_checks(&rep, &joint, None, report);
            compare(&mut rows, &mut lines, report, "C", want.capacity, rep.capacity_bits, tol);
            compare(&mut rows, &mut lines, report, "P_C", want.coin_prob, rep.coin_prob_opt, tol);
            compare(&mut rows, &mut lines, report, "rho_opt", want.rho.as_f64(), rep.rho_opt.as_f64(), tol);
            report.capacity = Some(rep);
            "fixed"
        }
        ExampleName::Onoff => {
            p.check_known(&["A", "B", "case", "uniform", "joint"])?;
            let (a, b) = (p.positive("A", 1.0)?, p.positive("B", 1.0)?);
            let tol = ex.tol.unwrap_or(1e-9);
            let case = match ex.params.get("case") {
                None => None,
                Some(v) => match v.as_u64() {
                    Some(c @ 1..=3) => Some(c as u8),
                    _ => {
                        return Err(ConfigError::Schema {
                            path: ".example.params.case".into(),
                            message: format!("expected 1, 2 or 3, got {v}"),
                        }
                        .into())
                    }
                },
            };
            let joint = match ex.params.get("joint") {
                Some(v) => serde_json::from_value::<[[f64; 2]; 2]>(v.clone()).map_err(|e| ConfigError::Schema {
                    path: ".example.params.joint".into(),
                    message: e.to_string(),
                })?,
                None if p.flag("uniform")? => [[0.25; 2]; 2],
                None => OnOff::default_joint(case),
            };
            let inst = OnOff { a, b, joint };
            let pmf = inst.joint_pmf();
            if let Some(v) = relaycap::channel_model::validate_joint(&pmf).into_iter().next() {
                return Err(ConfigError::Schema { path: ".example.params.joint".into(), message: v.message }.into());
            }
            let class = inst.classify().number();
            if let Some(c) = case {
                report.check(Check::new("case_matches", c == class, format!("requested case {c}, instance is case {class}")));
            }
            lines.push(format!("case {class}"));
            let want = inst.closed_form();
            let rep = solve_from_capacities(inst.capacities(), &pmf)?;
            capacity_checks(&rep, &pmf, None, report);
            compare(&mut rows, &mut lines, report, "C", want.capacity, rep.capacity_bits, tol);
            compare(&mut rows, &mut lines, report, "P_C", want.coin_prob, rep.coin_prob_opt, tol);
            compare(&mut rows, &mut lines, report, "rho_opt", want.rho.as_f64(), rep.rho_opt.as_f64(), tol);
            report.capacity = Some(rep);
            "onoff"
        }
        ExampleName::Rayleigh => {
            p.check_known(&["mean", "mean1", "mean2"])?;
            let mean = p.positive("mean", 10.0)?;
            let (m1, m2) = (p.positive("mean1", mean)?, p.positive("mean2", mean)?);
            let tol = ex.tol.unwrap_or(1e-6);
            let model = FadingModel::rayleigh(m1, m2);
            let opts = cfg.fading.quadrature(cfg.seed);
            let sol = solve_rho(&model, cfg.fading.tol, opts)?;
            let means = RateEvaluator::new(&model, opts)?.mean_rates();
            fading_checks(&sol, tol, means, report);
            if m1 == m2 {
                compare(&mut rows, &mut lines, report, "C", instances::symmetric_rayleigh_capacity(m1), sol.capacity_bits, tol);
                let d = (sol.rho_opt - 1.0).abs();
                report.check(Check::new("rho_opt_matches", d <= 1e-3, format!("|rho_opt - 1| = {d:e}")));
                lines.push(format!("rho_opt = {:.6} (expected 1)", sol.rho_opt));
                rows.push(Comparison { quantity: "rho_opt".into(), expected: Some(ExtF64(1.0)), computed: ExtF64(sol.rho_opt) });
            } else {
                lines.push(format!("rho_opt = {:.6}", sol.rho_opt));
                lines.push(format!("C = {:.6}", sol.capacity_bits));
                rows.push(Comparison { quantity: "rho_opt".into(), expected: None, computed: ExtF64(sol.rho_opt) });
                rows.push(Comparison { quantity: "C".into(), expected: None, computed: ExtF64(sol.capacity_bits) });
            }
            // equiprobable-bin quantization onto a 200x200 discrete channel
            let (caps, joint) = discretize_rayleigh(m1, m2, 200)?;
            let disc = solve_from_capacities(caps, &joint)?;
            let r = rel_err(disc.capacity_bits, sol.capacity_bits);
            report.check(Check::new(
                "discretization_consistency",
                r <= 1e-2,
                format!("200x200 quantized C = {} (relative gap {r:e})", disc.capacity_bits),
            ));
            lines.push(format!("200x200 quantized C = {:.6}", disc.capacity_bits));
            rows.push(Comparison {
                quantity: "C_quantized_200".into(),
                expected: Some(ExtF64(sol.capacity_bits)),
                computed: ExtF64(disc.capacity_bits),
            });
            report.fading = Some(FadingSummary { solution: sol, mean_rates_bits: [means.0, means.1] });
            "rayleigh"
        }
    };
    report.example = Some(ExampleSummary { name: name.into(), params: ex.params.clone(), comparisons: rows });
    out.lines.extend(lines);
    Ok(())
}

/// Files written by a run; removed again if a later write fails.
#[derive(Default)]
struct Written(Vec<PathBuf>);

impl Written {
    fn write(&mut self, path: &Path, fill: impl FnOnce(&mut fs::File) -> io::Result<()>) -> Result<(), RunError> {
        let io_err = |source| RunError::Io { path: path.to_path_buf(), source };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        let res = fs::File::create(&tmp).and_then(|mut f| {
            fill(&mut f)?;
            f.sync_all()
        });
        if let Err(e) = res.and_then(|_| fs::rename(&tmp, path)) {
            let _ = fs::remove_file(&tmp);
            return Err(io_err(e));
        }
        self.0.push(path.to_path_buf());
        Ok(())
    }

    fn discard(self) {
        for p in self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

/// Writes the report (to `output.report`, or stdout) and the trace, then
/// the summary lines (to stdout, or stderr when stdout carries the report).
/// Returns the process exit code: 0 when every check passed, 1 otherwise.
pub fn emit(cfg: &RunConfig, outcome: &Outcome) -> Result<i32, RunError> {
    let mut written = Written::default();
    let res = (|| {
        if let Some(path) = &cfg.output.trace {
            let trace = outcome.trace.clone().unwrap_or(Trace { rows: Vec::new(), labels: None });
            written.write(path, |f| write_trace_csv(f, &trace).map_err(io::Error::other))?;
        }
        let json = outcome.report.to_json();
        match &cfg.output.report {
            Some(path) => {
                written.write(path, |f| f.write_all(json.as_bytes()))?;
                let mut stdout = io::stdout().lock();
                for l in &outcome.lines {
                    writeln!(stdout, "{l}").map_err(|source| RunError::Io { path: "<stdout>".into(), source })?;
                }
            }
            None => {
                io::stdout()
                    .lock()
                    .write_all(json.as_bytes())
                    .map_err(|source| RunError::Io { path: "<stdout>".into(), source })?;
                let mut stderr = io::stderr().lock();
                for l in &outcome.lines {
                    let _ = writeln!(stderr, "{l}");
                }
            }
        }
        Ok(())
    })();
    match res {
        Ok(()) => Ok(if outcome.report.passed { 0 } else { 1 }),
        Err(e) => {
            written.discard();
            Err(e)
        }
    }
}
