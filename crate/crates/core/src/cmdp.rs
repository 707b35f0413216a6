//! Finite constrained MDP `(S, A, P, r, g, b, γ, ρ)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::table::Table;

const PROB_TOL: f64 = 1e-12;

/// Which per-step signal a value or return refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Helpfulness.
    Reward,
    /// Harmlessness.
    Utility,
}

/// A validated constrained MDP. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Cmdp {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, flattened row-major.
    transition: Vec<f64>,
    reward: Table,
    utility: Table,
    b: f64,
    gamma: f64,
    rho: Vec<f64>,
}

/// On-disk layout of a [`Cmdp`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CmdpDoc {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    b: f64,
    rho: Vec<f64>,
    reward: Vec<Vec<f64>>,
    utility: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidCmdp(format!("{what} has invalid entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidCmdp(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl Cmdp {
    /// Builds a CMDP from a `[s][a][s']` transition tensor (flattened
    /// row-major), `[s][a]` reward and utility tables, threshold, discount
    /// and initial distribution.
    pub fn new(
        transition: Vec<f64>,
        reward: Table,
        utility: Table,
        b: f64,
        gamma: f64,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let (n_states, n_actions) = reward.shape();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidCmdp(
                "need at least one state and action".into(),
            ));
        }
        if utility.shape() != reward.shape() {
            return Err(Error::DimensionMismatch(format!(
                "reward is {:?} but utility is {:?}",
                reward.shape(),
                utility.shape()
            )));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if rho.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "rho has {} entries, expected {n_states}",
                rho.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidCmdp(format!("gamma {gamma} outside (0, 1)")));
        }
        if !b.is_finite() {
            return Err(Error::InvalidCmdp(format!("threshold {b} is not finite")));
        }
        for (name, table) in [("reward", &reward), ("utility", &utility)] {
            if let Some(x) = table
                .as_slice()
                .iter()
                .find(|x| !(**x >= 0.0 && **x <= 1.0))
            {
                return Err(Error::InvalidCmdp(format!(
                    "{name} entry {x} outside [0, 1]"
                )));
            }
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let start = (s * n_actions + a) * n_states;
                check_distribution(
                    &format!("P(.|{s},{a})"),
                    &transition[start..start + n_states],
                )?;
            }
        }
        check_distribution("rho", &rho)?;
        Ok(Cmdp {
            n_states,
            n_actions,
            transition,
            reward,
            utility,
            b,
            gamma,
            rho,
        })
    }

    /// Convenience constructor from nested `P[s][a][s']` rows.
    pub fn from_nested(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        utility: Vec<Vec<f64>>,
        b: f64,
        gamma: f64,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let reward = Table::from_rows(reward)?;
        let (n_states, n_actions) = reward.shape();
        if transition.len() != n_states
            || transition
                .iter()
                .any(|rows| rows.len() != n_actions || rows.iter().any(|r| r.len() != n_states))
        {
            return Err(Error::DimensionMismatch(format!(
                "transition must be {n_states}x{n_actions}x{n_states}"
            )));
        }
        let flat = transition.into_iter().flatten().flatten().collect();
        Cmdp::new(flat, reward, Table::from_rows(utility)?, b, gamma, rho)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `d = |S||A|`, the number of policy parameters.
    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn threshold(&self) -> f64 {
        self.b
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn reward(&self) -> &Table {
        &self.reward
    }

    pub fn utility(&self) -> &Table {
        &self.utility
    }

    pub fn signal(&self, signal: Signal) -> &Table {
        match signal {
            Signal::Reward => &self.reward,
            Signal::Utility => &self.utility,
        }
    }

    /// `w_r·r + w_g·g` as a fresh table.
    pub fn weighted_payoff(&self, w_r: f64, w_g: f64) -> Table {
        Table::from_fn(self.n_states, self.n_actions, |s, a| {
            w_r * self.reward[(s, a)] + w_g * self.utility[(s, a)]
        })
    }

    /// Next-state distribution `P(·|s, a)`.
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn transition_flat(&self) -> &[f64] {
        &self.transition
    }

    /// Same environment with a different threshold.
    pub fn with_threshold(&self, b: f64) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::InvalidCmdp(format!("threshold {b} is not finite")));
        }
        Ok(Cmdp { b, ..self.clone() })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CmdpDoc {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            b: self.b,
            rho: self.rho.clone(),
            reward: self.reward.to_rows(),
            utility: self.utility.to_rows(),
            transition: (0..self.n_states)
                .map(|s| {
                    (0..self.n_actions)
                        .map(|a| self.next_state_dist(s, a).to_vec())
                        .collect()
                })
                .collect(),
        };
        format::to_json(&doc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CmdpDoc = format::from_json(text)?;
        Cmdp::from_doc(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Cmdp::from_doc(format::read_json(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_atomic(path, &self.to_json()?)
    }

    fn from_doc(doc: CmdpDoc) -> Result<Self> {
        let cmdp = Cmdp::from_nested(
            doc.transition,
            doc.reward,
            doc.utility,
            doc.b,
            doc.gamma,
            doc.rho,
        )?;
        if cmdp.n_states != doc.n_states || cmdp.n_actions != doc.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "declared {}x{} but tables are {}x{}",
                doc.n_states, doc.n_actions, cmdp.n_states, cmdp.n_actions
            )));
        }
        Ok(cmdp)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        let ok = fixtures::two_state_cycle(0.5);
        let r = ok.reward().clone();
        let g = ok.utility().clone();
        let p = ok.transition_flat().to_vec();

        assert!(Cmdp::new(p.clone(), r.clone(), g.clone(), 0.0, 1.0, vec![1.0, 0.0]).is_err());
        assert!(Cmdp::new(p.clone(), r.clone(), g.clone(), 0.0, 0.5, vec![0.6, 0.6]).is_err());
        let mut bad_p = p.clone();
        bad_p[0] = 0.5;
        assert!(Cmdp::new(bad_p, r.clone(), g.clone(), 0.0, 0.5, vec![1.0, 0.0]).is_err());
        let bad_r = r.map(|x| x * 2.0);
        assert!(Cmdp::new(p.clone(), bad_r, g.clone(), 0.0, 0.5, vec![1.0, 0.0]).is_err());
        assert!(Cmdp::new(p[..3].to_vec(), r, g, 0.0, 0.5, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let cmdp = Cmdp::from_nested(
            vec![
                vec![vec![0.1, 0.9], vec![1.0 / 3.0, 2.0 / 3.0]],
                vec![vec![0.5, 0.5], vec![0.7, 0.30000000000000004]],
            ],
            vec![vec![0.1, 0.2], vec![0.3, 1.0 / 7.0]],
            vec![vec![0.0, 1.0], vec![0.25, 0.75]],
            0.55,
            0.9,
            vec![0.5, 0.5],
        )
        .unwrap();
        let text = cmdp.to_json().unwrap();
        assert_eq!(Cmdp::from_json(&text).unwrap(), cmdp);
        assert!(text.starts_with("{\"n_states\":2,\"n_actions\":2,\"gamma\":9.0000000000000002e-1"));
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let cmdp = fixtures::single(1.0, 0.0, 0.9);
        let text = cmdp
            .to_json()
            .unwrap()
            .replace("\"b\":", "\"extra\":1,\"b\":");
        let err = Cmdp::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }
}
