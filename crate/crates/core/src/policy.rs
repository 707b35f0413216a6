//! Direct and softmax policy parameterizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

const ROW_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// `θ[s]` is itself a probability vector.
    Direct,
    /// `θ[s]` are unconstrained logits.
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub kind: PolicyKind,
    pub theta: Table,
}

impl PolicyParams {
    pub fn softmax(theta: Table) -> Self {
        PolicyParams {
            kind: PolicyKind::Softmax,
            theta,
        }
    }

    pub fn direct(theta: Table) -> Self {
        PolicyParams {
            kind: PolicyKind::Direct,
            theta,
        }
    }
}

/// Stochastic policy `π[s][a]`; every row is a probability vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyTable(Table);

fn check_row(s: usize, row: &[f64]) -> Result<()> {
    if let Some(x) = row.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidPolicy(format!("row {s} has entry {x}")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
    }
    Ok(())
}

impl PolicyTable {
    pub fn new(pi: Table) -> Result<Self> {
        if pi.n_cols() == 0 {
            return Err(Error::InvalidPolicy("policy has no actions".into()));
        }
        for (s, row) in pi.rows().enumerate() {
            check_row(s, row)?;
        }
        Ok(PolicyTable(pi))
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicyTable(Table::filled(n_states, n_actions, 1.0 / n_actions as f64))
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::InvalidPolicy(format!("action {a} out of range")));
        }
        Ok(PolicyTable(Table::from_fn(
            actions.len(),
            n_actions,
            |s, a| {
                if actions[s] == a {
                    1.0
                } else {
                    0.0
                }
            },
        )))
    }

    pub fn n_states(&self) -> usize {
        self.0.n_rows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.n_cols()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    pub fn table(&self) -> &Table {
        &self.0
    }

    pub fn into_table(self) -> Table {
        self.0
    }
}

/// Numerically stable softmax of one row of logits.
pub fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Converts parameters into the policy they represent.
pub fn make_policy(params: &PolicyParams) -> Result<PolicyTable> {
    let theta = &params.theta;
    if theta.n_rows() == 0 || theta.n_cols() == 0 {
        return Err(Error::InvalidPolicy("empty parameter table".into()));
    }
    match params.kind {
        PolicyKind::Softmax => {
            if !theta.all_finite() {
                return Err(Error::NonFinite("softmax logits".into()));
            }
            let mut pi = Table::zeros(theta.n_rows(), theta.n_cols());
            for s in 0..theta.n_rows() {
                softmax_row(theta.row(s), pi.row_mut(s));
            }
            Ok(PolicyTable(pi))
        }
        PolicyKind::Direct => PolicyTable::new(theta.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_uniform() {
        let pi = make_policy(&PolicyParams::softmax(Table::zeros(3, 4))).unwrap();
        for s in 0..3 {
            assert_eq!(pi.row(s), &[0.25; 4]);
        }
    }

    #[test]
    fn softmax_two_to_one() {
        let theta = Table::from_rows(vec![vec![2f64.ln(), 0.0]]).unwrap();
        let pi = make_policy(&PolicyParams::softmax(theta)).unwrap();
        assert!((pi.prob(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((pi.prob(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let theta = Table::from_rows(vec![vec![1e6, 1e6 - 1.0, -1e6]]).unwrap();
        let pi = make_policy(&PolicyParams::softmax(theta)).unwrap();
        let e = std::f64::consts::E;
        assert!((pi.prob(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert_eq!(pi.prob(0, 2), 0.0);
    }

    #[test]
    fn direct_is_identity() {
        let theta = Table::from_rows(vec![vec![0.3, 0.7]]).unwrap();
        let pi = make_policy(&PolicyParams::direct(theta.clone())).unwrap();
        assert_eq!(pi.table(), &theta);
    }

    #[test]
    fn rejects_invalid() {
        let nan = Table::from_rows(vec![vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(
            make_policy(&PolicyParams::softmax(nan)),
            Err(Error::NonFinite(_))
        ));
        let off = Table::from_rows(vec![vec![0.3, 0.6]]).unwrap();
        assert!(make_policy(&PolicyParams::direct(off)).is_err());
        let neg = Table::from_rows(vec![vec![1.2, -0.2]]).unwrap();
        assert!(make_policy(&PolicyParams::direct(neg)).is_err());
    }
}
