#![allow(dead_code)]

use cmdp_hf::{Cmdp, PolicyTable, Table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance built without the crate's generator: transition rows are
/// normalised uniforms, signals are `U[0,1] * scale`, `ρ` is random.
pub fn random_cmdp(rng: &mut ChaCha8Rng, n_s: usize, n_a: usize, gamma: f64, scale: f64) -> Cmdp {
    let mut transition = Vec::with_capacity(n_s * n_a * n_s);
    for _ in 0..n_s * n_a {
        let row: Vec<f64> = (0..n_s).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        transition.extend(row.iter().map(|x| x / total));
    }
    let reward = Table::from_fn(n_s, n_a, |_, _| rng.random::<f64>() * scale);
    let utility = Table::from_fn(n_s, n_a, |_, _| rng.random::<f64>() * scale);
    let rho = normalised(rng, n_s);
    Cmdp::new(transition, reward, utility, 0.0, gamma, rho).unwrap()
}

pub fn normalised(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

pub fn random_policy(rng: &mut ChaCha8Rng, n_s: usize, n_a: usize) -> PolicyTable {
    let rows = (0..n_s).map(|_| normalised(rng, n_a)).collect();
    PolicyTable::new(Table::from_rows(rows).unwrap()).unwrap()
}

/// `max_s |c_π(s) + γ Σ P_π(s'|s) v(s') - v(s)|`, straight from the
/// definition.
pub fn bellman_residual(cmdp: &Cmdp, pi: &PolicyTable, c: &Table, v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..cmdp.n_states() {
        let mut rhs = 0.0;
        for a in 0..cmdp.n_actions() {
            let next: f64 = cmdp
                .next_state_dist(s, a)
                .iter()
                .zip(v)
                .map(|(p, x)| p * x)
                .sum();
            rhs += pi.prob(s, a) * (c[(s, a)] + cmdp.gamma() * next);
        }
        worst = worst.max((rhs - v[s]).abs());
    }
    worst
}

/// Bellman optimality residual for payoff `c`.
pub fn optimality_residual(cmdp: &Cmdp, c: &Table, v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..cmdp.n_states() {
        let best = (0..cmdp.n_actions())
            .map(|a| {
                let next: f64 = cmdp
                    .next_state_dist(s, a)
                    .iter()
                    .zip(v)
                    .map(|(p, x)| p * x)
                    .sum();
                c[(s, a)] + cmdp.gamma() * next
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((best - v[s]).abs());
    }
    worst
}

/// Closed-form `(V_r(ρ), V_g(ρ))` on a 2-state 2-action instance where
/// `p0`, `p1` are the probabilities of action 0 in each state.
pub struct TwoByTwo {
    p: [[[f64; 2]; 2]; 2],
    r: [[f64; 2]; 2],
    g: [[f64; 2]; 2],
    rho: [f64; 2],
    gamma: f64,
}

impl TwoByTwo {
    pub fn new(cmdp: &Cmdp) -> Self {
        assert_eq!((cmdp.n_states(), cmdp.n_actions()), (2, 2));
        let mut p = [[[0.0; 2]; 2]; 2];
        let mut r = [[0.0; 2]; 2];
        let mut g = [[0.0; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                let row = cmdp.next_state_dist(s, a);
                p[s][a] = [row[0], row[1]];
                r[s][a] = cmdp.reward()[(s, a)];
                g[s][a] = cmdp.utility()[(s, a)];
            }
        }
        TwoByTwo {
            p,
            r,
            g,
            rho: [cmdp.rho()[0], cmdp.rho()[1]],
            gamma: cmdp.gamma(),
        }
    }

    pub fn values(&self, p0: f64, p1: f64) -> (f64, f64) {
        let w = [[p0, 1.0 - p0], [p1, 1.0 - p1]];
        let mut m = [[0.0; 2]; 2];
        let mut cr = [0.0; 2];
        let mut cg = [0.0; 2];
        for s in 0..2 {
            for a in 0..2 {
                cr[s] += w[s][a] * self.r[s][a];
                cg[s] += w[s][a] * self.g[s][a];
                for t in 0..2 {
                    m[s][t] += w[s][a] * self.p[s][a][t];
                }
            }
        }
        // (I - γP) v = c by Cramer's rule
        let a11 = 1.0 - self.gamma * m[0][0];
        let a12 = -self.gamma * m[0][1];
        let a21 = -self.gamma * m[1][0];
        let a22 = 1.0 - self.gamma * m[1][1];
        let det = a11 * a22 - a12 * a21;
        let solve = |c: [f64; 2]| {
            let v0 = (c[0] * a22 - a12 * c[1]) / det;
            let v1 = (a11 * c[1] - a21 * c[0]) / det;
            self.rho[0] * v0 + self.rho[1] * v1
        };
        (solve(cr), solve(cg))
    }
}
