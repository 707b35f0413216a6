//! Seeded finite-horizon rollouts.

use rand::Rng;

use crate::cmdp::{Cmdp, Signal};
use crate::error::{Error, Result};
use crate::policy::PolicyTable;

/// `G(H) = (1 - γ^{H+1}) / (1 - γ)`, the largest possible `H`-horizon
/// discounted return of a `[0, 1]` signal.
pub fn g_of_h(gamma: f64, horizon: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} outside (0, 1)"
        )));
    }
    let exp = i32::try_from(horizon.saturating_add(1)).unwrap_or(i32::MAX);
    Ok((1.0 - gamma.powi(exp)) / (1.0 - gamma))
}

/// How the first step of a rollout is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `s_0 = s`, `a_0 ~ π(·|s)`.
    State(usize),
    /// `s_0 = s`, `a_0 = a` forced.
    Pair(usize, usize),
    /// `s_0 ~ ρ`.
    FromDist,
}

/// `H+1` recorded state-action pairs `(s_t, a_t)`, `t = 0..=H`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    steps: Vec<(usize, usize)>,
    horizon: usize,
}

impl Trajectory {
    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Inverse-CDF draw from a probability vector. Falls back to the last index
/// with positive mass when rounding leaves `u` above the cumulative sum.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Rolls out `pi` from `init` for `horizon` transitions, recording
/// `horizon + 1` pairs.
pub fn sample_trajectory<R: Rng + ?Sized>(
    cmdp: &Cmdp,
    pi: &PolicyTable,
    init: Init,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let n_s = cmdp.n_states();
    if pi.n_states() != n_s || pi.n_actions() != cmdp.n_actions() {
        return Err(Error::DimensionMismatch(
            "policy does not match cmdp".into(),
        ));
    }
    let (mut s, forced) = match init {
        Init::State(s) => (s, None),
        Init::Pair(s, a) => {
            if a >= cmdp.n_actions() {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            (s, Some(a))
        }
        Init::FromDist => (sample_index(cmdp.rho(), rng), None),
    };
    if s >= n_s {
        return Err(Error::InvalidArgument(format!("state {s} out of range")));
    }

    let mut steps = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let a = match forced {
            Some(a) if t == 0 => a,
            _ => sample_index(pi.row(s), rng),
        };
        steps.push((s, a));
        if t < horizon {
            s = sample_index(cmdp.next_state_dist(s, a), rng);
        }
    }
    Ok(Trajectory { steps, horizon })
}

/// `R^H(τ) = Σ_{t=0}^{H} γ^t c(s_t, a_t)`.
pub fn discounted_return(traj: &Trajectory, cmdp: &Cmdp, signal: Signal) -> f64 {
    let c = cmdp.signal(signal);
    let gamma = cmdp.gamma();
    let mut discount = 1.0;
    let mut total = 0.0;
    for &(s, a) in &traj.steps {
        total += discount * c[(s, a)];
        discount *= gamma;
    }
    total
}

/// Reward and utility returns of one trajectory.
pub(crate) fn both_returns(traj: &Trajectory, cmdp: &Cmdp) -> (f64, f64) {
    (
        discounted_return(traj, cmdp, Signal::Reward),
        discounted_return(traj, cmdp, Signal::Utility),
    )
}
