//! Exact policy evaluation by dense linear solves.

use nalgebra::{DMatrix, DVector};

use crate::cmdp::{Cmdp, Signal};
use crate::error::{Error, Result};
use crate::policy::PolicyTable;
use crate::table::Table;

const SOLVE_RESIDUAL: f64 = 1e-9;

/// State values, action values and advantages of one signal under a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueBundle {
    pub v: Vec<f64>,
    pub q: Table,
    pub adv: Table,
    /// `Σ_s ρ(s) v(s)`.
    pub v_rho: f64,
}

fn check_dims(cmdp: &Cmdp, pi: &PolicyTable) -> Result<()> {
    if pi.n_states() != cmdp.n_states() || pi.n_actions() != cmdp.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, cmdp is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            cmdp.n_states(),
            cmdp.n_actions()
        )));
    }
    Ok(())
}

/// `P_π[s][s'] = Σ_a π(a|s) P(s'|s,a)`.
pub fn policy_transition(cmdp: &Cmdp, pi: &PolicyTable) -> Result<Table> {
    check_dims(cmdp, pi)?;
    let n = cmdp.n_states();
    let mut p_pi = Table::zeros(n, n);
    for s in 0..n {
        let out = p_pi.row_mut(s);
        for (a, &w) in pi.row(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(cmdp.next_state_dist(s, a)) {
                *o += w * p;
            }
        }
    }
    Ok(p_pi)
}

/// `c_π[s] = Σ_a π(a|s) c(s,a)`.
fn expected_payoff(pi: &PolicyTable, payoff: &Table) -> Vec<f64> {
    (0..pi.n_states())
        .map(|s| {
            pi.row(s)
                .iter()
                .zip(payoff.row(s))
                .map(|(p, c)| p * c)
                .sum()
        })
        .collect()
}

/// Solves `(I - γ M) x = rhs` with `M` given row-major, refining once if the
/// residual is above tolerance.
fn solve_discounted(m: &Table, gamma: f64, transpose: bool, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = m.n_rows();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let mij = if transpose { m[(j, i)] } else { m[(i, j)] };
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * mij
    });
    let b = DVector::from_column_slice(rhs);
    let lu = a.clone().lu();
    let mut x = lu.solve(&b).ok_or(Error::Singular {
        residual: f64::INFINITY,
    })?;
    let mut residual = (&a * &x - &b).amax();
    if residual >= SOLVE_RESIDUAL || !residual.is_finite() {
        let r = &b - &a * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
        residual = (&a * &x - &b).amax();
    }
    if !(residual < SOLVE_RESIDUAL) {
        return Err(Error::Singular { residual });
    }
    Ok(x.iter().copied().collect())
}

/// Exact values for an arbitrary per-step payoff table.
pub fn exact_value_of(cmdp: &Cmdp, pi: &PolicyTable, payoff: &Table) -> Result<ValueBundle> {
    check_dims(cmdp, pi)?;
    if payoff.shape() != (cmdp.n_states(), cmdp.n_actions()) {
        return Err(Error::DimensionMismatch("payoff table shape".into()));
    }
    let gamma = cmdp.gamma();
    let p_pi = policy_transition(cmdp, pi)?;
    let c_pi = expected_payoff(pi, payoff);
    let v = solve_discounted(&p_pi, gamma, false, &c_pi)?;

    let (n_s, n_a) = payoff.shape();
    let q = Table::from_fn(n_s, n_a, |s, a| {
        let next: f64 = cmdp
            .next_state_dist(s, a)
            .iter()
            .zip(&v)
            .map(|(p, v)| p * v)
            .sum();
        payoff[(s, a)] + gamma * next
    });
    // Advantages are recentred on Σ_a π q so that Σ_a π·adv vanishes to
    // rounding even where the solve left a tiny residual.
    let mut adv = Table::zeros(n_s, n_a);
    for s in 0..n_s {
        let baseline: f64 = pi.row(s).iter().zip(q.row(s)).map(|(p, q)| p * q).sum();
        for (dst, &qa) in adv.row_mut(s).iter_mut().zip(q.row(s)) {
            *dst = qa - baseline;
        }
    }
    let v_rho = cmdp.rho().iter().zip(&v).map(|(r, v)| r * v).sum();
    Ok(ValueBundle { v, q, adv, v_rho })
}

/// Exact values of `signal` under `pi`: `v = (I - γP_π)^{-1} c_π`.
pub fn exact_value(cmdp: &Cmdp, pi: &PolicyTable, signal: Signal) -> Result<ValueBundle> {
    exact_value_of(cmdp, pi, cmdp.signal(signal))
}

/// Normalised discounted state visitation `d_ρ^π`, the solution of
/// `d = (1-γ)ρ + γ P_πᵀ d`.
pub fn discounted_visitation(cmdp: &Cmdp, pi: &PolicyTable) -> Result<Vec<f64>> {
    let p_pi = policy_transition(cmdp, pi)?;
    let gamma = cmdp.gamma();
    let rhs: Vec<f64> = cmdp.rho().iter().map(|r| (1.0 - gamma) * r).collect();
    solve_discounted(&p_pi, gamma, true, &rhs)
}

/// Unnormalised discounted state-action occupancy `q[s][a] = d(s)π(a|s)/(1-γ)`.
pub fn occupancy_measure(cmdp: &Cmdp, pi: &PolicyTable) -> Result<Table> {
    let d = discounted_visitation(cmdp, pi)?;
    let scale = 1.0 / (1.0 - cmdp.gamma());
    Ok(Table::from_fn(pi.n_states(), pi.n_actions(), |s, a| {
        d[s] * pi.prob(s, a) * scale
    }))
}

/// Recovers `π(a|s) = q[s][a] / Σ_a' q[s][a']`. States with no mass get the
/// uniform row.
pub fn policy_from_occupancy(q: &Table) -> Result<PolicyTable> {
    if let Some(x) = q.as_slice().iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidArgument(format!("occupancy entry {x}")));
    }
    let n_a = q.n_cols();
    let mut pi = Table::zeros(q.n_rows(), n_a);
    for s in 0..q.n_rows() {
        let mass: f64 = q.row(s).iter().sum();
        let row = pi.row_mut(s);
        if mass > 0.0 {
            for (p, &x) in row.iter_mut().zip(q.row(s)) {
                *p = x / mass;
            }
        } else {
            row.fill(1.0 / n_a as f64);
        }
    }
    PolicyTable::new(pi)
}

/// `V^{π,H}` for every start state by backward recursion over `H+1` steps:
/// the expected value of `Σ_{t=0}^{H} γ^t c(s_t, a_t)`.
pub fn finite_horizon_value(
    cmdp: &Cmdp,
    pi: &PolicyTable,
    signal: Signal,
    horizon: usize,
) -> Result<Vec<f64>> {
    let p_pi = policy_transition(cmdp, pi)?;
    let c_pi = expected_payoff(pi, cmdp.signal(signal));
    let gamma = cmdp.gamma();
    let mut v = c_pi.clone();
    for _ in 0..horizon {
        v = (0..v.len())
            .map(|s| c_pi[s] + gamma * p_pi.row(s).iter().zip(&v).map(|(p, v)| p * v).sum::<f64>())
            .collect();
    }
    Ok(v)
}

/// `Σ_s ρ(s) v(s)`.
pub fn rho_weighted(cmdp: &Cmdp, v: &[f64]) -> f64 {
    cmdp.rho().iter().zip(v).map(|(r, v)| r * v).sum()
}
