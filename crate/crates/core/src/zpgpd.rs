//! Zeroth-order primal-dual loop over directly parameterised policies,
//! driven by one random sphere direction per iteration.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cmdp::Cmdp;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::feedback::{absolute_query, inverse_lipschitz, pairwise_query, EvaluatorPanel, LinkSet};
use crate::log::{Algo, IterateLog, LogBuilder};
use crate::npgpd::{
    check_counts, check_positive, default_horizon, default_lambda_cap, default_m, default_n_rounds,
    elapsed_ms, exact_pair, make_header, npgpd_dual_step, Steps, SOLVE_TOL,
};
use crate::oracles::{constrained_optimum, SolveReport};
use crate::policy::{make_policy, PolicyParams, PolicyTable};
use crate::rng::{Purpose, RngStream};
use crate::sampling::{both_returns, g_of_h, sample_index, sample_trajectory, Init};
use crate::table::Table;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRule {
    /// Use the configured `mu`.
    Explicit,
    /// Square root of the larger of the truncation and feedback bias terms.
    #[default]
    BiasBalanced,
}

fn default_zpgpd_iterations() -> usize {
    3000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZpgpdConfig {
    #[serde(default)]
    pub eta1: Option<f64>,
    #[serde(default)]
    pub eta2: Option<f64>,
    /// Perturbation radius; required when `mu_rule` is `explicit`.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub mu_rule: MuRule,
    #[serde(default = "default_zpgpd_iterations", alias = "big_t")]
    pub iterations: usize,
    #[serde(default = "default_n_rounds")]
    pub n_pairs: usize,
    #[serde(default = "default_m")]
    pub m_evaluators: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_lambda_cap")]
    pub lambda_cap: f64,
    /// Stand-in for `‖d_ρ^{π*}/ρ‖_∞` in the default dual step;
    /// `1/min ρ` when unset.
    #[serde(default)]
    pub visitation_proxy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub record_wall_ms: bool,
    #[serde(default)]
    pub links: LinkSet,
}

impl Default for ZpgpdConfig {
    fn default() -> Self {
        ZpgpdConfig {
            eta1: None,
            eta2: None,
            mu: None,
            mu_rule: MuRule::default(),
            iterations: default_zpgpd_iterations(),
            n_pairs: default_n_rounds(),
            m_evaluators: default_m(),
            horizon: default_horizon(),
            lambda_cap: default_lambda_cap(),
            visitation_proxy: None,
            seed: 0,
            execution: Execution::default(),
            record_wall_ms: false,
            links: LinkSet::default(),
        }
    }
}

impl ZpgpdConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("eta1", self.eta1)?;
        check_positive("eta2", self.eta2)?;
        check_positive("mu", self.mu)?;
        check_positive("visitation_proxy", self.visitation_proxy)?;
        match (self.mu_rule, self.mu) {
            (MuRule::Explicit, None) => {
                return Err(Error::InvalidConfig("mu_rule explicit needs mu".into()))
            }
            (MuRule::BiasBalanced, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "mu is set but mu_rule is bias_balanced; set mu_rule to explicit".into(),
                ))
            }
            _ => {}
        }
        check_counts(
            &[
                ("iterations", self.iterations),
                ("n_pairs", self.n_pairs),
                ("m_evaluators", self.m_evaluators),
                ("horizon", self.horizon),
            ],
            self.lambda_cap,
        )
    }

    /// Fills unset steps from the theory prescriptions. `slack` is the
    /// Slater margin those prescriptions are stated in.
    pub fn resolve_steps(&self, cmdp: &Cmdp, slack: f64) -> Result<Steps> {
        let mut defaults_used = Vec::new();
        let (eta1_def, eta2_def) = theory_steps(cmdp, slack, self.iterations, self.proxy(cmdp))?;
        let eta1 = self.eta1.unwrap_or_else(|| {
            defaults_used.push("eta1".to_string());
            eta1_def
        });
        let eta2 = self.eta2.unwrap_or_else(|| {
            defaults_used.push("eta2".to_string());
            eta2_def
        });
        let mu = match self.mu_rule {
            MuRule::Explicit => self.mu.expect("validated"),
            MuRule::BiasBalanced => {
                defaults_used.push("mu".to_string());
                let g_h = g_of_h(cmdp.gamma(), self.horizon)?;
                let l = inverse_lipschitz(self.links.reward, g_h)
                    .max(inverse_lipschitz(self.links.utility, g_h));
                mu_from_bias_terms(cmdp.gamma(), self.horizon, self.m_evaluators, l, g_h)
            }
        };
        Ok(Steps {
            eta1,
            eta2,
            mu: Some(mu),
            defaults_used,
        })
    }

    fn proxy(&self, cmdp: &Cmdp) -> f64 {
        self.visitation_proxy
            .unwrap_or_else(|| 1.0 / cmdp.rho().iter().copied().fold(f64::INFINITY, f64::min))
    }
}

/// `(η₁, η₂)` from the theory prescriptions for direct parameterisation.
pub fn theory_steps(cmdp: &Cmdp, slack: f64, iterations: usize, proxy: f64) -> Result<(f64, f64)> {
    if !(slack > 0.0) {
        return Err(Error::Infeasible { slack });
    }
    let one_m = 1.0 - cmdp.gamma();
    let n_a = cmdp.n_actions() as f64;
    let n_s = cmdp.n_states() as f64;
    let factor = 1.0 + 2.0 / slack;
    let eta1 = one_m.powi(4) / (2.0 * n_a * factor);
    let eta2 =
        8.0 * n_a * n_s * factor / (one_m.powi(4) * (iterations as f64).sqrt()) * proxy * proxy;
    Ok((eta1, eta2))
}

/// `√max{2γ^H/(1-γ), L√(2 ln M / M) + 2G(H)/M²}`.
pub fn mu_from_bias_terms(gamma: f64, horizon: usize, m: usize, lipschitz: f64, g_h: f64) -> f64 {
    let truncation = 2.0 * gamma.powi(horizon as i32) / (1.0 - gamma);
    let mf = m as f64;
    let feedback = lipschitz * (2.0 * mf.ln() / mf).sqrt() + 2.0 * g_h / (mf * mf);
    truncation.max(feedback).sqrt()
}

/// Uniform draw from the unit sphere in `d` dimensions.
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "sphere dimension must be at least 1".into(),
        ));
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
    }
}

/// Euclidean projection of `x` onto the probability simplex.
pub fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut out: Vec<f64> = x.iter().map(|&v| (v - tau).max(0.0)).collect();
    // absorb rounding so the row sums to one to machine precision
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Row-wise [`project_simplex`].
pub fn project_simplex_product(theta: &Table) -> Table {
    let mut out = theta.clone();
    for s in 0..theta.n_rows() {
        let row = project_simplex(theta.row(s));
        out.row_mut(s).copy_from_slice(&row);
    }
    out
}

/// Projected `θ + μ v`, with `v` laid out row-major like `θ`.
pub fn perturbed_params(theta: &Table, v: &[f64], mu: f64) -> Result<Table> {
    if v.len() != theta.as_slice().len() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} entries, parameters {}",
            v.len(),
            theta.as_slice().len()
        )));
    }
    let raw: Vec<f64> = theta
        .as_slice()
        .iter()
        .zip(v)
        .map(|(t, d)| t + mu * d)
        .collect();
    Ok(project_simplex_product(&Table::from_flat(
        theta.n_rows(),
        theta.n_cols(),
        raw,
    )?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub reward: Vec<f64>,
    pub utility: Vec<f64>,
    pub h_c: f64,
    pub queries: u64,
    pub env_steps: u64,
}

/// One-direction estimates of the reward and utility gradients plus the
/// dual signal, from `n_pairs` paired rollouts sharing a start state.
pub fn zpgpd_gradient_estimate(
    cmdp: &Cmdp,
    theta: &Table,
    v: &[f64],
    mu: f64,
    config: &ZpgpdConfig,
    stream: RngStream,
) -> Result<GradientEstimate> {
    let d = cmdp.dim();
    if theta.shape() != (cmdp.n_states(), cmdp.n_actions()) {
        return Err(Error::DimensionMismatch(
            "parameters do not match cmdp".into(),
        ));
    }
    let pi = make_policy(&PolicyParams::direct(theta.clone()))?;
    let pi_mu = make_policy(&PolicyParams::direct(perturbed_params(theta, v, mu)?))?;
    let (m, h, n_pairs) = (config.m_evaluators, config.horizon, config.n_pairs);
    let g_h = g_of_h(cmdp.gamma(), h)?;
    let links = config.links;

    let scores = config.execution.try_map(n_pairs, |n| {
        let key = [n as u64];
        let mut rng0 = stream.child(Purpose::BaseRollout, &key).rng();
        let s0 = sample_index(cmdp.rho(), &mut rng0);
        let base = sample_trajectory(cmdp, &pi, Init::State(s0), h, &mut rng0)?;
        let mut rng1 = stream.child(Purpose::PerturbedRollout, &key).rng();
        let pert = sample_trajectory(cmdp, &pi_mu, Init::State(s0), h, &mut rng1)?;
        let (r0, g0) = both_returns(&base, cmdp);
        let (r1, g1) = both_returns(&pert, cmdp);
        let mut panel_r = EvaluatorPanel::new(m, stream.child(Purpose::RewardPanel, &key))?;
        let mut panel_g = EvaluatorPanel::new(m, stream.child(Purpose::UtilityPanel, &key))?;
        let mut panel_c = EvaluatorPanel::new(m, stream.child(Purpose::DualPanel, &key))?;
        Ok::<_, Error>((
            pairwise_query(links.reward, r1, r0, &mut panel_r, g_h).score,
            pairwise_query(links.utility, g1, g0, &mut panel_g, g_h).score,
            absolute_query(links.absolute, g0, cmdp.threshold(), &mut panel_c, g_h).score,
        ))
    })?;

    let nf = n_pairs as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| scores.iter().map(f).sum::<f64>() / nf;
    let (sr, sg, sc) = (mean(|x| x.0), mean(|x| x.1), mean(|x| x.2));
    let scale = d as f64 / mu;
    Ok(GradientEstimate {
        reward: v.iter().map(|x| scale * sr * x).collect(),
        utility: v.iter().map(|x| scale * sg * x).collect(),
        h_c: sc,
        queries: (3 * m * n_pairs) as u64,
        env_steps: (2 * n_pairs * (h + 1)) as u64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZpgpdState {
    pub theta: Table,
    pub lam: f64,
    pub iter: usize,
}

impl ZpgpdState {
    pub fn initial(cmdp: &Cmdp) -> Self {
        ZpgpdState {
            theta: PolicyTable::uniform(cmdp.n_states(), cmdp.n_actions()).into_table(),
            lam: 0.0,
            iter: 0,
        }
    }

    pub fn policy(&self) -> Result<PolicyTable> {
        make_policy(&PolicyParams::direct(self.theta.clone()))
    }
}

/// `P_Θ(θ + η₁(ĥ_r + λ ĥ_g))`.
pub fn zpgpd_primal_step(
    theta: &Table,
    h_r: &[f64],
    h_g: &[f64],
    lambda: f64,
    eta1: f64,
) -> Result<Table> {
    let n = theta.as_slice().len();
    if h_r.len() != n || h_g.len() != n {
        return Err(Error::DimensionMismatch(
            "gradient does not match parameters".into(),
        ));
    }
    let raw: Vec<f64> = theta
        .as_slice()
        .iter()
        .zip(h_r.iter().zip(h_g))
        .map(|(t, (r, g))| t + eta1 * (r + lambda * g))
        .collect();
    let raw = Table::from_flat(theta.n_rows(), theta.n_cols(), raw)?;
    if !raw.all_finite() {
        return Err(Error::NonFinite("parameters after primal step".into()));
    }
    Ok(project_simplex_product(&raw))
}

pub fn zpgpd_iteration(
    cmdp: &Cmdp,
    state: &ZpgpdState,
    config: &ZpgpdConfig,
    steps: &Steps,
    root: RngStream,
) -> Result<(ZpgpdState, crate::npgpd::IterationStats)> {
    let stream = root.child(Purpose::Iteration, &[state.iter as u64]);
    let mu = steps
        .mu
        .ok_or_else(|| Error::InvalidConfig("missing perturbation radius".into()))?;
    let v = sample_unit_sphere(cmdp.dim(), &mut stream.child(Purpose::Sphere, &[]).rng())?;
    let est = zpgpd_gradient_estimate(
        cmdp,
        &state.theta,
        &v,
        mu,
        config,
        stream.child(Purpose::Gradient, &[]),
    )?;
    let theta = zpgpd_primal_step(
        &state.theta,
        &est.reward,
        &est.utility,
        state.lam,
        steps.eta1,
    )?;
    let lam = npgpd_dual_step(state.lam, est.h_c, steps.eta2, config.lambda_cap);
    Ok((
        ZpgpdState {
            theta,
            lam,
            iter: state.iter + 1,
        },
        crate::npgpd::IterationStats {
            h_c: est.h_c,
            queries: est.queries,
            env_steps: est.env_steps,
        },
    ))
}

pub fn run_zpgpd(cmdp: &Cmdp, config: &ZpgpdConfig) -> Result<IterateLog> {
    let report = constrained_optimum(cmdp, SOLVE_TOL)?;
    run_zpgpd_with(cmdp, config, &report, |_| {})
}

pub fn run_zpgpd_with(
    cmdp: &Cmdp,
    config: &ZpgpdConfig,
    report: &SolveReport,
    mut observe: impl FnMut(&ZpgpdState),
) -> Result<IterateLog> {
    config.validate()?;
    if !(report.slater_slack > 0.0) {
        return Err(Error::Infeasible {
            slack: report.slater_slack,
        });
    }
    let steps = config.resolve_steps(cmdp, report.slater_slack)?;
    let header = make_header(
        Algo::Zpgpd,
        config.seed,
        config.m_evaluators,
        config.n_pairs,
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
    let mut state = ZpgpdState::initial(cmdp);
    observe(&state);
    let (mut queries, mut env_steps) = (0u64, 0u64);
    for _ in 0..config.iterations {
        let (v_r, v_g) = exact_pair(cmdp, &state.policy()?)?;
        let (next, stats) = zpgpd_iteration(cmdp, &state, config, &steps, root)?;
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
