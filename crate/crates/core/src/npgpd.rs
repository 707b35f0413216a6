//! Natural policy gradient primal-dual loop with softmax logits and
//! advantages estimated from pairwise panel feedback.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cmdp::Cmdp;
use crate::error::{Error, Result};
use crate::eval::{exact_value, rho_weighted};
use crate::exec::Execution;
use crate::feedback::{absolute_query, pairwise_query, EvaluatorPanel, LinkSet};
use crate::log::{Algo, IterateLog, LogBuilder, LogHeader};
use crate::oracles::{constrained_optimum, SolveReport};
use crate::policy::{make_policy, softmax_row, PolicyParams, PolicyTable};
use crate::rng::{Purpose, RngStream};
use crate::sampling::{both_returns, g_of_h, sample_trajectory, Init};
use crate::table::Table;

/// Tolerance handed to the constrained solver when a run computes its own
/// reference values.
pub const SOLVE_TOL: f64 = 1e-10;

pub(crate) fn default_n_rounds() -> usize {
    4
}
pub(crate) fn default_m() -> usize {
    64
}
pub(crate) fn default_horizon() -> usize {
    80
}
pub(crate) fn default_lambda_cap() -> f64 {
    5.0
}
fn default_npgpd_iterations() -> usize {
    300
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpgpdConfig {
    /// Primal step; `2 ln |A|` when unset.
    #[serde(default)]
    pub eta1: Option<f64>,
    /// Dual step; `(1-γ)/√T` when unset.
    #[serde(default)]
    pub eta2: Option<f64>,
    #[serde(default = "default_npgpd_iterations", alias = "big_t")]
    pub iterations: usize,
    #[serde(default = "default_n_rounds")]
    pub n_rounds: usize,
    #[serde(default = "default_m")]
    pub m_evaluators: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_lambda_cap")]
    pub lambda_cap: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    /// Write elapsed milliseconds into `wall_ms`; zero otherwise so that
    /// reruns stay byte-identical.
    #[serde(default)]
    pub record_wall_ms: bool,
    #[serde(default)]
    pub links: LinkSet,
}

impl Default for NpgpdConfig {
    fn default() -> Self {
        NpgpdConfig {
            eta1: None,
            eta2: None,
            iterations: default_npgpd_iterations(),
            n_rounds: default_n_rounds(),
            m_evaluators: default_m(),
            horizon: default_horizon(),
            lambda_cap: default_lambda_cap(),
            seed: 0,
            execution: Execution::default(),
            record_wall_ms: false,
            links: LinkSet::default(),
        }
    }
}

pub(crate) fn check_positive(name: &str, value: Option<f64>) -> Result<()> {
    match value {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::InvalidConfig(format!(
            "{name} must be positive and finite, got {x}"
        ))),
        _ => Ok(()),
    }
}

pub(crate) fn check_counts(counts: &[(&str, usize)], lambda_cap: f64) -> Result<()> {
    for &(name, n) in counts {
        if n == 0 {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
    }
    check_positive("lambda_cap", Some(lambda_cap))
}

impl NpgpdConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("eta1", self.eta1)?;
        check_positive("eta2", self.eta2)?;
        check_counts(
            &[
                ("iterations", self.iterations),
                ("n_rounds", self.n_rounds),
                ("m_evaluators", self.m_evaluators),
                ("horizon", self.horizon),
            ],
            self.lambda_cap,
        )
    }

    /// Step sizes after filling defaults, with the names of the defaulted
    /// fields.
    pub fn resolve_steps(&self, cmdp: &Cmdp) -> Steps {
        let mut defaults_used = Vec::new();
        let eta1 = self.eta1.unwrap_or_else(|| {
            defaults_used.push("eta1".to_string());
            2.0 * (cmdp.n_actions() as f64).ln()
        });
        let eta2 = self.eta2.unwrap_or_else(|| {
            defaults_used.push("eta2".to_string());
            (1.0 - cmdp.gamma()) / (self.iterations as f64).sqrt()
        });
        Steps {
            eta1,
            eta2,
            mu: None,
            defaults_used,
        }
    }
}

/// Resolved hyperparameters of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Steps {
    pub eta1: f64,
    pub eta2: f64,
    pub mu: Option<f64>,
    pub defaults_used: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NpgpdState {
    pub theta: Table,
    pub lam: f64,
    pub iter: usize,
}

impl NpgpdState {
    pub fn initial(cmdp: &Cmdp) -> Self {
        NpgpdState {
            theta: Table::zeros(cmdp.n_states(), cmdp.n_actions()),
            lam: 0.0,
            iter: 0,
        }
    }

    pub fn policy(&self) -> Result<PolicyTable> {
        make_policy(&PolicyParams::softmax(self.theta.clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageEstimate {
    pub reward: Table,
    pub utility: Table,
    pub queries: u64,
    pub env_steps: u64,
}

/// Panel-based advantage estimates for every state-action pair.
///
/// For each round `n` one comparator rollout per state is shared by all
/// actions at that state; each `(s, a, n)` cell owns its own forced-start
/// rollout and panel streams, so the result does not depend on `execution`.
pub fn estimate_advantages(
    cmdp: &Cmdp,
    pi: &PolicyTable,
    config: &NpgpdConfig,
    stream: RngStream,
) -> Result<AdvantageEstimate> {
    config.validate()?;
    let (n_s, n_a, n_r) = (cmdp.n_states(), cmdp.n_actions(), config.n_rounds);
    let h = config.horizon;
    let g_h = g_of_h(cmdp.gamma(), h)?;
    let exec = config.execution;

    let comparators = exec.try_map(n_s * n_r, |k| {
        let (s, n) = (k / n_r, k % n_r);
        let mut rng = stream
            .child(Purpose::Comparator, &[s as u64, n as u64])
            .rng();
        let traj = sample_trajectory(cmdp, pi, Init::State(s), h, &mut rng)?;
        Ok::<_, Error>(both_returns(&traj, cmdp))
    })?;

    let cells = exec.try_map(n_s * n_a, |k| {
        let (s, a) = (k / n_a, k % n_a);
        let (mut sum_r, mut sum_g, mut queries) = (0.0, 0.0, 0u64);
        for n in 0..n_r {
            let key = [s as u64, a as u64, n as u64];
            let mut rng = stream.child(Purpose::ForcedStart, &key).rng();
            let traj = sample_trajectory(cmdp, pi, Init::Pair(s, a), h, &mut rng)?;
            let (r1, g1) = both_returns(&traj, cmdp);
            let (r0, g0) = comparators[s * n_r + n];
            let mut panel_r = EvaluatorPanel::new(
                config.m_evaluators,
                stream.child(Purpose::RewardPanel, &key),
            )?;
            let mut panel_g = EvaluatorPanel::new(
                config.m_evaluators,
                stream.child(Purpose::UtilityPanel, &key),
            )?;
            sum_r += pairwise_query(config.links.reward, r1, r0, &mut panel_r, g_h).score;
            sum_g += pairwise_query(config.links.utility, g1, g0, &mut panel_g, g_h).score;
            queries += panel_r.queries() + panel_g.queries();
        }
        Ok::<_, Error>((sum_r / n_r as f64, sum_g / n_r as f64, queries))
    })?;

    let mut reward = Table::zeros(n_s, n_a);
    let mut utility = Table::zeros(n_s, n_a);
    let mut queries = 0;
    for (k, (r, g, q)) in cells.into_iter().enumerate() {
        reward[(k / n_a, k % n_a)] = r;
        utility[(k / n_a, k % n_a)] = g;
        queries += q;
    }
    let env_steps = (n_r * (h + 1) * (n_s * n_a + n_s)) as u64;
    Ok(AdvantageEstimate {
        reward,
        utility,
        queries,
        env_steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualSignal {
    pub h_c: f64,
    pub queries: u64,
    pub env_steps: u64,
}

/// Estimates `V_g(ρ) - b` from absolute panel feedback on `n_rounds`
/// rollouts started from `ρ`.
pub fn estimate_dual_signal(
    cmdp: &Cmdp,
    pi: &PolicyTable,
    config: &NpgpdConfig,
    stream: RngStream,
) -> Result<DualSignal> {
    config.validate()?;
    let (n_rounds, m, horizon) = (config.n_rounds, config.m_evaluators, config.horizon);
    let links = config.links;
    let exec = config.execution;
    let g_h = g_of_h(cmdp.gamma(), horizon)?;
    let scores = exec.try_map(n_rounds, |n| {
        let mut rng = stream.child(Purpose::DualRollout, &[n as u64]).rng();
        let traj = sample_trajectory(cmdp, pi, Init::FromDist, horizon, &mut rng)?;
        let (_, r_g) = both_returns(&traj, cmdp);
        let mut panel = EvaluatorPanel::new(m, stream.child(Purpose::DualPanel, &[n as u64]))?;
        let est = absolute_query(links.absolute, r_g, cmdp.threshold(), &mut panel, g_h);
        Ok::<_, Error>(est.score)
    })?;
    Ok(DualSignal {
        h_c: scores.iter().sum::<f64>() / n_rounds as f64,
        queries: (m * n_rounds) as u64,
        env_steps: (n_rounds * (horizon + 1)) as u64,
    })
}

/// `Â_r + λ Â_g`.
pub fn lagrangian_advantage(adv_r: &Table, adv_g: &Table, lambda: f64) -> Result<Table> {
    if adv_r.shape() != adv_g.shape() {
        return Err(Error::DimensionMismatch(
            "advantage tables differ in shape".into(),
        ));
    }
    let data = adv_r
        .as_slice()
        .iter()
        .zip(adv_g.as_slice())
        .map(|(r, g)| r + lambda * g)
        .collect();
    Table::from_flat(adv_r.n_rows(), adv_r.n_cols(), data)
}

/// Additive logit update `θ + η₁/(1-γ) (Â_r + λ Â_g)`.
pub fn npgpd_primal_step(
    theta: &Table,
    adv_r: &Table,
    adv_g: &Table,
    lambda: f64,
    eta1: f64,
    gamma: f64,
) -> Result<Table> {
    let adv = lagrangian_advantage(adv_r, adv_g, lambda)?;
    if adv.shape() != theta.shape() {
        return Err(Error::DimensionMismatch(
            "advantages do not match logits".into(),
        ));
    }
    let scale = eta1 / (1.0 - gamma);
    let data = theta
        .as_slice()
        .iter()
        .zip(adv.as_slice())
        .map(|(t, a)| t + scale * a)
        .collect();
    let out = Table::from_flat(theta.n_rows(), theta.n_cols(), data)?;
    if !out.all_finite() {
        return Err(Error::NonFinite("logits after primal step".into()));
    }
    Ok(out)
}

/// Closed form of the same step in policy space:
/// `π'(a|s) ∝ π(a|s) exp(scale · Â(s,a))`.
pub fn multiplicative_update(pi: &PolicyTable, adv: &Table, scale: f64) -> Result<PolicyTable> {
    if adv.shape() != pi.table().shape() {
        return Err(Error::DimensionMismatch(
            "advantages do not match policy".into(),
        ));
    }
    let mut out = Table::zeros(pi.n_states(), pi.n_actions());
    for s in 0..pi.n_states() {
        // log π + scale·Â, normalised through the stable softmax
        let logits: Vec<f64> = pi
            .row(s)
            .iter()
            .zip(adv.row(s))
            .map(|(p, a)| p.ln() + scale * a)
            .collect();
        softmax_row(&logits, out.row_mut(s));
    }
    PolicyTable::new(out)
}

/// `min(max(λ - η₂ ĥ_c, 0), cap)`.
pub fn npgpd_dual_step(lambda: f64, h_c: f64, eta2: f64, lambda_cap: f64) -> f64 {
    (lambda - eta2 * h_c).max(0.0).min(lambda_cap)
}

/// Counters produced by one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationStats {
    pub h_c: f64,
    pub queries: u64,
    pub env_steps: u64,
}

/// One full iteration from `state`, drawing randomness from the
/// per-iteration child of `root`.
pub fn npgpd_iteration(
    cmdp: &Cmdp,
    state: &NpgpdState,
    config: &NpgpdConfig,
    steps: &Steps,
    root: RngStream,
) -> Result<(NpgpdState, IterationStats)> {
    let stream = root.child(Purpose::Iteration, &[state.iter as u64]);
    let pi = state.policy()?;
    let dual = estimate_dual_signal(cmdp, &pi, config, stream.child(Purpose::Dual, &[]))?;
    let adv = estimate_advantages(cmdp, &pi, config, stream.child(Purpose::Advantage, &[]))?;
    let theta = npgpd_primal_step(
        &state.theta,
        &adv.reward,
        &adv.utility,
        state.lam,
        steps.eta1,
        cmdp.gamma(),
    )?;
    let lam = npgpd_dual_step(state.lam, dual.h_c, steps.eta2, config.lambda_cap);
    Ok((
        NpgpdState {
            theta,
            lam,
            iter: state.iter + 1,
        },
        IterationStats {
            h_c: dual.h_c,
            queries: adv.queries + dual.queries,
            env_steps: adv.env_steps + dual.env_steps,
        },
    ))
}

/// Exact `(V_r(ρ), V_g(ρ))` of `pi`, for logging only.
pub(crate) fn exact_pair(cmdp: &Cmdp, pi: &PolicyTable) -> Result<(f64, f64)> {
    let r = exact_value(cmdp, pi, crate::cmdp::Signal::Reward)?;
    let g = exact_value(cmdp, pi, crate::cmdp::Signal::Utility)?;
    Ok((rho_weighted(cmdp, &r.v), rho_weighted(cmdp, &g.v)))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn make_header(
    algo: Algo,
    seed: u64,
    m: usize,
    n: usize,
    h: usize,
    t: usize,
    lambda_cap: f64,
    cmdp: &Cmdp,
    steps: &Steps,
    report: &SolveReport,
) -> LogHeader {
    LogHeader {
        algo,
        seed,
        m,
        n,
        h,
        t,
        eta1: steps.eta1,
        eta2: steps.eta2,
        mu: steps.mu,
        lambda_cap,
        b: cmdp.threshold(),
        v_star_constrained: report.v_star_constrained,
        v_star_unconstrained: report.v_star_unconstrained,
        slater_slack: report.slater_slack,
        defaults_used: steps.defaults_used.clone(),
    }
}

pub(crate) fn elapsed_ms(start: &Instant, record: bool) -> u64 {
    if record {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Solves for reference values, then runs the loop.
pub fn run_npgpd(cmdp: &Cmdp, config: &NpgpdConfig) -> Result<IterateLog> {
    let report = constrained_optimum(cmdp, SOLVE_TOL)?;
    run_npgpd_with(cmdp, config, &report, |_| {})
}

/// Runs `T` iterations against precomputed reference values; `observe` sees
/// every state from the initial one onwards.
pub fn run_npgpd_with(
    cmdp: &Cmdp,
    config: &NpgpdConfig,
    report: &SolveReport,
    mut observe: impl FnMut(&NpgpdState),
) -> Result<IterateLog> {
    config.validate()?;
    if !(report.slater_slack > 0.0) {
        return Err(Error::Infeasible {
            slack: report.slater_slack,
        });
    }
    let steps = config.resolve_steps(cmdp);
    let header = make_header(
        Algo::Npgpd,
        config.seed,
        config.m_evaluators,
        config.n_rounds,
        config.horizon,
        config.iterations,
        config.lambda_cap,
        cmdp,
        &steps,
        report,
    );
    let mut log = LogBuilder::new(header);
    let root = RngStream::new(config.seed, 0);
    let start = Instant::now();
    let mut state = NpgpdState::initial(cmdp);
    observe(&state);
    let (mut queries, mut env_steps) = (0u64, 0u64);
    for _ in 0..config.iterations {
        let (v_r, v_g) = exact_pair(cmdp, &state.policy()?)?;
        let (next, stats) = npgpd_iteration(cmdp, &state, config, &steps, root)?;
        queries += stats.queries;
        env_steps += stats.env_steps;
        state = next;
        observe(&state);
        log.push(
            v_r,
            v_g,
            state.lam,
            queries,
            env_steps,
            elapsed_ms(&start, config.record_wall_ms),
        );
    }
    Ok(log.finish())
}
