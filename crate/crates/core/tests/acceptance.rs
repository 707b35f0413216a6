//! Acceptance gate. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits non-zero if any fails.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use cmdp_hf::eval::{
    discounted_visitation, exact_value, finite_horizon_value, occupancy_measure,
    policy_from_occupancy,
};
use cmdp_hf::feedback::{
    feedback_bias_bound, inverse_lipschitz, pairwise_query, EvaluatorPanel, LinkFunction,
};
use cmdp_hf::harness::{run_experiment, AlgoConfig, RunConfig};
use cmdp_hf::log::IterateLog;
use cmdp_hf::npgpd::run_npgpd_with;
use cmdp_hf::oracles::{constrained_optimum, value_iteration};
use cmdp_hf::zpgpd::{run_zpgpd_with, sample_unit_sphere};
use cmdp_hf::{RngStream, Signal};
use common::*;
use rand::Rng;

const M_VALUES: [usize; 3] = [16, 64, 256];

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn record(&mut self, name: &str, pass: bool, started: Instant, detail: String) {
        let secs = started.elapsed().as_secs_f64();
        println!(
            "[{}] {name} ({secs:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failures.push(name.to_string());
        }
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn protocol(name: &str, m: usize) -> RunConfig {
    let mut cfg = RunConfig::load(&config_path(name)).expect("protocol config");
    cfg.algo.set_m_evaluators(m);
    cfg
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for x in xs {
        total += x;
        n += 1;
    }
    total / n as f64
}

/// `max ≤ 1.5 min`, counting two zeros as matched.
fn within_1_5(a: f64, b: f64) -> bool {
    let (lo, hi) = (a.min(b), a.max(b));
    hi <= 1.5 * lo || hi == 0.0
}

fn exact_solver(gate: &mut Gate) {
    let started = Instant::now();
    let mut rng = rng(101);
    let (mut bellman, mut pdl, mut occ, mut vi_res) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n_s = rng.random_range(2..=12);
        let n_a = rng.random_range(2..=5);
        let gamma = rng.random_range(0.5..0.99);
        let cmdp = random_cmdp(&mut rng, n_s, n_a, gamma, 1.0);
        let pi = random_policy(&mut rng, n_s, n_a);
        let pi2 = random_policy(&mut rng, n_s, n_a);

        let vr = exact_value(&cmdp, &pi, Signal::Reward).unwrap();
        bellman = bellman.max(bellman_residual(&cmdp, &pi, cmdp.reward(), &vr.v));

        let vi = value_iteration(&cmdp, (1.0, 0.0), 1e-10).unwrap();
        vi_res = vi_res.max(optimality_residual(&cmdp, cmdp.reward(), &vi.v));

        // V^{π2}(ρ) - V^{π}(ρ) = Σ_s d^{π2}(s) Σ_a π2(a|s) A^π(s,a) / (1-γ)
        let v2 = exact_value(&cmdp, &pi2, Signal::Reward).unwrap();
        let d2 = discounted_visitation(&cmdp, &pi2).unwrap();
        let mut rhs = 0.0;
        for s in 0..n_s {
            for a in 0..n_a {
                rhs += d2[s] * pi2.prob(s, a) * vr.adv[(s, a)];
            }
        }
        pdl = pdl.max((v2.v_rho - vr.v_rho - rhs / (1.0 - gamma)).abs());

        let q = occupancy_measure(&cmdp, &pi).unwrap();
        let back = policy_from_occupancy(&q).unwrap();
        occ = occ.max(back.table().max_abs_diff(pi.table()));
        occ = occ.max((q.dot(cmdp.reward()) - vr.v_rho).abs());
    }

    let mut grid_err = 0.0f64;
    let mut instances = 0;
    let steps = 2000;
    while instances < 20 {
        let cmdp = random_cmdp(&mut rng, 2, 2, 0.9, 0.1);
        let closed = TwoByTwo::new(&cmdp);
        let values: Vec<(f64, f64)> = (0..=steps)
            .flat_map(|i| (0..=steps).map(move |j| (i, j)))
            .map(|(i, j)| closed.values(i as f64 / steps as f64, j as f64 / steps as f64))
            .collect();
        let best_r = values
            .iter()
            .copied()
            .fold(
                (f64::NEG_INFINITY, 0.0),
                |acc, x| {
                    if x.0 > acc.0 {
                        x
                    } else {
                        acc
                    }
                },
            );
        let max_g = values.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        if max_g - best_r.1 < 1e-2 {
            continue;
        }
        // midway between the greedy utility and the best utility: binding
        let b = 0.5 * (best_r.1 + max_g);
        let grid_best = values
            .iter()
            .filter(|x| x.1 >= b)
            .map(|x| x.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let report = constrained_optimum(&cmdp.with_threshold(b).unwrap(), 1e-10).unwrap();
        grid_err = grid_err.max((report.v_star_constrained - grid_best).abs());
        instances += 1;
    }

    let pass = bellman < 1e-9 && vi_res < 1e-9 && pdl < 1e-8 && occ < 1e-8 && grid_err < 1e-3;
    gate.record(
        "exact-solver suite",
        pass && started.elapsed().as_secs() < 60,
        started,
        format!(
            "bellman {bellman:.1e}, vi residual {vi_res:.1e} (<1e-9); perf-diff {pdl:.1e}, occupancy {occ:.1e} (<1e-8); grid gap {grid_err:.1e} (<1e-3)"
        ),
    );
}

fn truncation_bias(gate: &mut Gate) {
    let started = Instant::now();
    let mut rng = rng(202);
    let mut worst_ratio = 0.0f64;
    let mut violations = 0;
    for _ in 0..50 {
        let n_s = rng.random_range(2..=10);
        let n_a = rng.random_range(2..=4);
        // keeps γ^80/(1-γ) far above f64 resolution of values near 1
        let gamma = rng.random_range(0.8..0.99);
        let cmdp = random_cmdp(&mut rng, n_s, n_a, gamma, 1.0);
        let pi = random_policy(&mut rng, n_s, n_a);
        let exact = exact_value(&cmdp, &pi, Signal::Reward).unwrap();
        for h in [1usize, 5, 20, 80] {
            let bound = gamma.powi(h as i32) / (1.0 - gamma);
            let vh = finite_horizon_value(&cmdp, &pi, Signal::Reward, h).unwrap();
            for (a, b) in vh.iter().zip(&exact.v) {
                let bias = (a - b).abs();
                if bias > bound {
                    violations += 1;
                }
                worst_ratio = worst_ratio.max(bias / bound);
            }
        }
    }
    gate.record(
        "truncation-bias bound",
        violations == 0 && started.elapsed().as_secs() < 30,
        started,
        format!("{violations} violations over 50 instances x 4 horizons; worst bias/bound {worst_ratio:.3}"),
    );
}

fn feedback_bias(gate: &mut Gate) {
    let started = Instant::now();
    let (delta, g_h, panels) = (0.8, 10.0, 10_000);
    let link = LinkFunction::BradleyTerry;
    let l = inverse_lipschitz(link, g_h);
    let mut devs = Vec::new();
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, &m) in M_VALUES.iter().enumerate() {
        let root = RngStream::new(303, i as u64);
        let scores: Vec<f64> = (0..panels)
            .map(|k| {
                let mut panel = EvaluatorPanel::new(m, root.derive(&[k as u64])).unwrap();
                pairwise_query(link, delta, 0.0, &mut panel, g_h).score
            })
            .collect();
        let mu = mean(scores.iter().copied());
        let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (panels - 1) as f64;
        let se = (var / panels as f64).sqrt();
        let dev = (mu - delta).abs();
        let allowed = feedback_bias_bound(l, m, g_h) + 3.0 * se;
        pass &= dev < allowed;
        devs.push(dev);
        detail.push(format!("M={m} dev {dev:.4} (allowed {allowed:.3e})"));
    }
    pass &= devs[2] < devs[0];
    gate.record(
        "feedback estimator bias",
        pass && started.elapsed().as_secs() < 120,
        started,
        format!(
            "{}; dev(256) < dev(16): {}",
            detail.join(", "),
            devs[2] < devs[0]
        ),
    );
}

/// Logs for every `(M, seed)` of one protocol, plus invariant tallies.
struct Sweep {
    logs: Vec<Vec<IterateLog>>,
    lambda_ok: bool,
    simplex_err: f64,
    accounting_ok: bool,
}

fn run_protocol(name: &str) -> Sweep {
    let mut sweep = Sweep {
        logs: Vec::new(),
        lambda_ok: true,
        simplex_err: 0.0,
        accounting_ok: true,
    };
    for &m in &M_VALUES {
        let cfg = protocol(name, m);
        let mut logs = Vec::new();
        for k in 0..cfg.n_seeds {
            let cmdp = cfg.environment(k).unwrap();
            let report = constrained_optimum(&cmdp, 1e-10).unwrap();
            let (n_s, n_a) = (cmdp.n_states() as u64, cmdp.n_actions() as u64);
            let log = match cfg.algo_for_seed(k) {
                AlgoConfig::Npgpd(c) => {
                    let (m, n, h) = (c.m_evaluators as u64, c.n_rounds as u64, c.horizon as u64);
                    let log = run_npgpd_with(&cmdp, &c, &report, |_| {}).unwrap();
                    let per_q = 2 * m * n * n_s * n_a + m * n;
                    let per_s = n * (h + 1) * (n_s * n_a + n_s) + n * (h + 1);
                    sweep.accounting_ok &= log.rows.iter().all(|r| {
                        let t = r.iter as u64 + 1;
                        r.cum_queries == t * per_q && r.cum_env_steps == t * per_s
                    });
                    log
                }
                AlgoConfig::Zpgpd(c) => {
                    let (m, n, h) = (c.m_evaluators as u64, c.n_pairs as u64, c.horizon as u64);
                    let mut worst = 0.0f64;
                    let log = run_zpgpd_with(&cmdp, &c, &report, |state| {
                        for row in state.theta.rows() {
                            let sum: f64 = row.iter().sum();
                            let neg = row.iter().copied().fold(0.0f64, |w, x| w.max(-x));
                            worst = worst.max((sum - 1.0).abs()).max(neg);
                        }
                    })
                    .unwrap();
                    sweep.simplex_err = sweep.simplex_err.max(worst);
                    sweep.accounting_ok &= log.rows.iter().all(|r| {
                        let t = r.iter as u64 + 1;
                        r.cum_queries == t * n * 3 * m && r.cum_env_steps == t * 2 * n * (h + 1)
                    });
                    log
                }
            };
            let cap = log.header.lambda_cap;
            sweep.lambda_ok &= log.rows.iter().all(|r| (0.0..=cap).contains(&r.lambda));
            logs.push(log);
        }
        sweep.logs.push(logs);
    }
    sweep
}

fn final_gap(logs: &[IterateLog]) -> f64 {
    mean(logs.iter().map(|l| l.final_row().unwrap().gap_running_avg))
}

fn final_violation(logs: &[IterateLog]) -> f64 {
    mean(
        logs.iter()
            .map(|l| l.final_row().unwrap().violation_running),
    )
}

/// Mean running gap of the first row whose cumulative env steps reach
/// `budget`.
fn gap_at_budget(logs: &[IterateLog], budget: u64) -> f64 {
    mean(logs.iter().map(|l| {
        l.rows
            .iter()
            .find(|r| r.cum_env_steps >= budget)
            .unwrap_or_else(|| l.final_row().unwrap())
            .gap_running_avg
    }))
}

fn npgpd_reproduction(gate: &mut Gate, sweep: &Sweep, started: Instant) {
    let gaps: Vec<f64> = sweep.logs.iter().map(|l| final_gap(l)).collect();
    let viols: Vec<f64> = sweep.logs.iter().map(|l| final_violation(l)).collect();
    let first = mean(sweep.logs[2].iter().map(|l| l.rows[0].gap_running_avg));
    let a = gaps[2] < 0.2 * first;
    let b = viols.iter().all(|&v| v < 0.02);
    let c = within_1_5(gaps[1], gaps[2]) && gaps[1] <= gaps[0] && gaps[2] <= gaps[0];
    gate.record(
        "NPGPD reproduction",
        a && b && c && started.elapsed().as_secs() < 1800,
        started,
        format!(
            "(a) {a}: M=256 gap {:.4} vs 0.2 x first {:.4}; (b) {b}: violations {:.4}/{:.4}/{:.4}; (c) {c}: gaps {:.4}/{:.4}/{:.4}",
            gaps[2], 0.2 * first, viols[0], viols[1], viols[2], gaps[0], gaps[1], gaps[2]
        ),
    );
}

fn zpgpd_reproduction(gate: &mut Gate, zo: &Sweep, npg: &Sweep, started: Instant) {
    let gaps: Vec<f64> = zo.logs.iter().map(|l| final_gap(l)).collect();
    let viols: Vec<f64> = zo.logs.iter().map(|l| final_violation(l)).collect();
    let a = gaps[0] > gaps[1] && gaps[1] > gaps[2];
    let mut b = true;
    let mut matched = Vec::new();
    for (i, logs) in zo.logs.iter().enumerate() {
        let budget = logs[0].final_row().unwrap().cum_env_steps;
        let npg_gap = gap_at_budget(&npg.logs[i], budget);
        b &= gaps[i] > npg_gap;
        matched.push(format!("{:.4}>{:.4}", gaps[i], npg_gap));
    }
    let c = within_1_5(viols[1], viols[2]);
    gate.record(
        "ZPGPD reproduction",
        a && b && c && started.elapsed().as_secs() < 7200,
        started,
        format!(
            "(a) {a}: gaps {:.4}/{:.4}/{:.4}; (b) {b}: at matched env steps {}; (c) {c}: violations M=64 {:.4}, M=256 {:.4}",
            gaps[0], gaps[1], gaps[2], matched.join(" "), viols[1], viols[2]
        ),
    );
}

fn invariants(gate: &mut Gate, npg: &Sweep, zo: &Sweep) {
    let started = Instant::now();
    let lambda_ok = npg.lambda_ok && zo.lambda_ok;
    let simplex_ok = zo.simplex_err <= 1e-10;
    let accounting_ok = npg.accounting_ok && zo.accounting_ok;

    let mut identical = true;
    for name in ["npgpd_protocol.json", "zpgpd_protocol.json"] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut files = Vec::new();
        for dir in &dirs {
            let mut cfg = protocol(name, 16);
            cfg.out_dir = dir.path().to_path_buf();
            files.push(run_experiment(&cfg).unwrap());
        }
        for (a, b) in files[0].iter().zip(&files[1]) {
            identical &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
            identical &= std::fs::read(a.with_extension("json")).unwrap()
                == std::fs::read(b.with_extension("json")).unwrap();
        }
        identical &= files[0].len() == 5;
    }
    gate.record(
        "invariant suite",
        lambda_ok && simplex_ok && accounting_ok && identical,
        started,
        format!(
            "lambda in [0, cap]: {lambda_ok}; simplex error {:.1e} (<=1e-10); query/step accounting exact: {accounting_ok}; byte-identical reruns: {identical}",
            zo.simplex_err
        ),
    );
}

fn smoothing_check(gate: &mut Gate) {
    let started = Instant::now();
    // one state, two actions; the finite-horizon value is linear in the
    // direct parameters: V(θ) = G(H) (θ₀ r₀ + θ₁ r₁), so L' = 0
    let (gamma, h, r) = (0.9f64, 80usize, [0.07, 0.02]);
    let g_h = (1.0 - gamma.powi(h as i32 + 1)) / (1.0 - gamma);
    let value = |t: &[f64]| g_h * (t[0] * r[0] + t[1] * r[1]);
    let theta = [0.5, 0.5];
    let grad = [g_h * r[0], g_h * r[1]];
    let (mu, d, draws, lipschitz) = (0.05, 2usize, 100_000usize, 0.0);

    let mut rng = RngStream::new(707, 0).rng();
    let mut sum = [0.0; 2];
    let mut sum_sq = [0.0; 2];
    for _ in 0..draws {
        let v = sample_unit_sphere(d, &mut rng).unwrap();
        let shifted = [theta[0] + mu * v[0], theta[1] + mu * v[1]];
        let diff = value(&shifted) - value(&theta);
        for i in 0..d {
            let est = d as f64 / mu * diff * v[i];
            sum[i] += est;
            sum_sq[i] += est * est;
        }
    }
    let n = draws as f64;
    let mut pass = true;
    let mut detail = Vec::new();
    for i in 0..d {
        let m = sum[i] / n;
        let se = ((sum_sq[i] / n - m * m) / n).sqrt();
        let allowed = mu * lipschitz * d as f64 / 2.0 + 3.0 * se;
        pass &= (m - grad[i]).abs() <= allowed;
        detail.push(format!(
            "coord {i}: {m:.5} vs {:.5} (allowed {allowed:.2e})",
            grad[i]
        ));
    }
    gate.record(
        "zeroth-order smoothing",
        pass && started.elapsed().as_secs() < 120,
        started,
        detail.join(", "),
    );
}

fn main() {
    let mut gate = Gate {
        failures: Vec::new(),
    };
    exact_solver(&mut gate);
    truncation_bias(&mut gate);
    feedback_bias(&mut gate);

    let started = Instant::now();
    let npg = run_protocol("npgpd_protocol.json");
    npgpd_reproduction(&mut gate, &npg, started);
    let started = Instant::now();
    let zo = run_protocol("zpgpd_protocol.json");
    zpgpd_reproduction(&mut gate, &zo, &npg, started);
    invariants(&mut gate, &npg, &zo);
    smoothing_check(&mut gate);

    if gate.failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", gate.failures.join(", "));
        std::process::exit(1);
    }
}
