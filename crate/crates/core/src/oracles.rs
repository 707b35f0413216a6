//! Ground-truth baselines: value iteration, the constrained optimum by a
//! one-dimensional dual search, and the Slater slack.
//!
//! These values are used for logging and verification only; the learners
//! never read them.

use serde::{Deserialize, Serialize};

use crate::cmdp::Cmdp;
use crate::error::{Error, Result};
use crate::eval::exact_value_of;
use crate::policy::PolicyTable;
use crate::table::Table;

/// Inner value-iteration tolerance used by the dual search.
pub const INNER_TOL: f64 = 1e-9;
/// Golden-section iteration cap.
pub const MAX_GOLDEN_ITERS: usize = 200;
const MAX_VI_ITERS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ValueIteration {
    pub v: Vec<f64>,
    pub greedy: PolicyTable,
    pub iterations: usize,
    /// `‖T v − v‖_∞` of the returned `v`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub v_star_unconstrained: f64,
    pub v_star_constrained: f64,
    pub lambda_star: f64,
    pub slater_slack: f64,
    /// Right end of the dual search interval, `2 / ((1-γ) ξ̂)`.
    pub lambda_upper: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// One Bellman optimality backup; returns the new values and greedy actions
/// (lowest index on exact ties).
fn backup(cmdp: &Cmdp, payoff: &Table, v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let gamma = cmdp.gamma();
    let mut out = Vec::with_capacity(v.len());
    let mut actions = Vec::with_capacity(v.len());
    for s in 0..cmdp.n_states() {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0;
        for a in 0..cmdp.n_actions() {
            let next: f64 = cmdp
                .next_state_dist(s, a)
                .iter()
                .zip(v)
                .map(|(p, v)| p * v)
                .sum();
            let q = payoff[(s, a)] + gamma * next;
            if q > best {
                best = q;
                best_a = a;
            }
        }
        out.push(best);
        actions.push(best_a);
    }
    (out, actions)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Value iteration on the per-step payoff `w_r·r + w_g·g`.
///
/// Stops once successive iterates differ by less than `tol(1-γ)/(2γ)`, which
/// bounds the Bellman optimality residual of the result below `tol`.
pub fn value_iteration(cmdp: &Cmdp, weights: (f64, f64), tol: f64) -> Result<ValueIteration> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let payoff = cmdp.weighted_payoff(weights.0, weights.1);
    let gamma = cmdp.gamma();
    let stop = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut v = vec![0.0; cmdp.n_states()];
    for iterations in 1..=MAX_VI_ITERS {
        let (next, _) = backup(cmdp, &payoff, &v);
        let delta = sup_diff(&next, &v);
        v = next;
        if delta < stop {
            let (tv, actions) = backup(cmdp, &payoff, &v);
            return Ok(ValueIteration {
                residual: sup_diff(&tv, &v),
                greedy: PolicyTable::deterministic(&actions, cmdp.n_actions())?,
                v,
                iterations,
            });
        }
    }
    Err(Error::NonFinite("value iteration did not converge".into()))
}

/// Optimal `ρ`-weighted value of a payoff and a deterministic policy that
/// attains it. Value iteration locates the policy; policy-iteration sweeps on
/// exact evaluations then remove the residual, so the value is exact up to
/// linear-solve rounding.
fn optimal_value(cmdp: &Cmdp, weights: (f64, f64)) -> Result<(f64, PolicyTable, f64)> {
    let vi = value_iteration(cmdp, weights, INNER_TOL)?;
    let payoff = cmdp.weighted_payoff(weights.0, weights.1);
    let mut actions: Vec<usize> = (0..cmdp.n_states())
        .map(|s| vi.greedy.row(s).iter().position(|&p| p == 1.0).unwrap_or(0))
        .collect();
    let mut pi = vi.greedy;
    for _ in 0..(cmdp.n_states() * cmdp.n_actions() + 1) {
        let vb = exact_value_of(cmdp, &pi, &payoff)?;
        let mut changed = false;
        for s in 0..cmdp.n_states() {
            let current = vb.q[(s, actions[s])];
            let (best_a, best_q) = vb.q.row(s).iter().copied().enumerate().fold(
                (actions[s], current),
                |acc, (a, q)| if q > acc.1 + 1e-12 { (a, q) } else { acc },
            );
            if best_a != actions[s] && best_q > current + 1e-12 {
                actions[s] = best_a;
                changed = true;
            }
        }
        if !changed {
            return Ok((vb.v_rho, pi, vi.residual));
        }
        pi = PolicyTable::deterministic(&actions, cmdp.n_actions())?;
    }
    let vb = exact_value_of(cmdp, &pi, &payoff)?;
    Ok((vb.v_rho, pi, vi.residual))
}

/// `max_π V_g^π(ρ) − b`.
pub fn slater_slack(cmdp: &Cmdp) -> Result<f64> {
    Ok(optimal_value(cmdp, (0.0, 1.0))?.0 - cmdp.threshold())
}

/// Dual function `D(λ) = max_π V_r(ρ) + λ(V_g(ρ) − b)`.
pub fn dual_function(cmdp: &Cmdp, lambda: f64) -> Result<f64> {
    Ok(optimal_value(cmdp, (1.0, lambda))?.0 - lambda * cmdp.threshold())
}

/// Dual cap `2 / ((1-γ) ξ)` that provably contains the optimal multiplier.
pub fn theory_lambda_cap(gamma: f64, slack: f64) -> f64 {
    2.0 / ((1.0 - gamma) * slack)
}

/// Constrained optimum `max_π V_r(ρ) s.t. V_g(ρ) ≥ b` through strong
/// duality: golden-section minimisation of the convex, piecewise-linear
/// `D(λ)` on `[0, 2/((1-γ)ξ̂)]`.
pub fn constrained_optimum(cmdp: &Cmdp, tol: f64) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let slack = slater_slack(cmdp)?;
    if !(slack > 0.0) {
        return Err(Error::Infeasible { slack });
    }
    let (v_unc, _, _) = optimal_value(cmdp, (1.0, 0.0))?;
    let hi = theory_lambda_cap(cmdp.gamma(), slack);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = dual_function(cmdp, c)?;
    let mut fd = dual_function(cmdp, d)?;
    let mut iterations = 0;
    while b - a > tol && iterations < MAX_GOLDEN_ITERS {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = dual_function(cmdp, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = dual_function(cmdp, d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, dual_function(cmdp, mid)?);
    for lam in [0.0, hi, c, d] {
        let val = if lam == 0.0 {
            v_unc
        } else {
            dual_function(cmdp, lam)?
        };
        if val < best.1 {
            best = (lam, val);
        }
    }
    let (lambda_star, v_con) = best;
    let residual = value_iteration(cmdp, (1.0, lambda_star), INNER_TOL)?.residual;
    Ok(SolveReport {
        v_star_unconstrained: v_unc,
        v_star_constrained: v_con,
        lambda_star,
        slater_slack: slack,
        lambda_upper: hi,
        iterations,
        residual,
    })
}
