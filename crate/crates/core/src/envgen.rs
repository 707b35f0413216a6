//! Random environment protocol: Dirichlet transition kernels, uniform
//! per-step signals rescaled by `(1-γ)`, uniform initial distribution.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::cmdp::Cmdp;
use crate::error::{Error, Result};
use crate::oracles::slater_slack;
use crate::rng::{Purpose, RngStream};
use crate::table::Table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub dirichlet_alpha: f64,
    pub b: f64,
    pub seed: u64,
    pub min_slack: f64,
    pub max_regen: u32,
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec {
            n_states: 10,
            n_actions: 4,
            gamma: 0.9,
            dirichlet_alpha: 5.0,
            b: 0.55,
            seed: 0,
            min_slack: 0.02,
            max_regen: 50,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::InvalidConfig(
                "n_states and n_actions must be positive".into(),
            ));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dirichlet_alpha {} must be positive",
                self.dirichlet_alpha
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        if !(self.min_slack >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_slack {} is negative",
                self.min_slack
            )));
        }
        if self.max_regen == 0 {
            return Err(Error::InvalidConfig("max_regen must be at least 1".into()));
        }
        Ok(())
    }
}

/// One Dirichlet(`alpha`) draw: normalised Gamma(`αᵢ`, 1) variates.
pub fn dirichlet_sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidArgument("empty concentration vector".into()));
    }
    let gammas = alpha
        .iter()
        .map(|&a| {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "concentration {a} must be positive"
                )));
            }
            Gamma::new(a, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // all-underflow is only possible for tiny α; redraw
        if total > 0.0 && total.is_finite() {
            let mut out: Vec<f64> = draws.iter().map(|x| x / total).collect();
            // push the rounding residue into the largest entry
            let residue = 1.0 - out.iter().sum::<f64>();
            if let Some(max) = out.iter_mut().max_by(|a, b| a.total_cmp(b)) {
                *max += residue;
            }
            return Ok(out);
        }
    }
}

fn draw_instance(spec: &EnvSpec, stream: RngStream) -> Result<Cmdp> {
    let (n_s, n_a) = (spec.n_states, spec.n_actions);
    let mut rng = stream.rng();
    let alpha = vec![spec.dirichlet_alpha; n_s];
    let mut transition = Vec::with_capacity(n_s * n_a * n_s);
    for _ in 0..n_s * n_a {
        transition.extend(dirichlet_sample(&alpha, &mut rng)?);
    }
    let scale = 1.0 - spec.gamma;
    let reward = Table::from_fn(n_s, n_a, |_, _| rng.random::<f64>() * scale);
    let utility = Table::from_fn(n_s, n_a, |_, _| rng.random::<f64>() * scale);
    let rho = vec![1.0 / n_s as f64; n_s];
    Cmdp::new(transition, reward, utility, spec.b, spec.gamma, rho)
}

/// Draws instances until one has Slater slack at least `min_slack`.
/// Attempt `k` uses its own stream, so the result depends only on the spec.
pub fn generate_cmdp(spec: &EnvSpec) -> Result<Cmdp> {
    spec.validate()?;
    let root = RngStream::new(spec.seed, 0);
    let mut last_slack = f64::NEG_INFINITY;
    for attempt in 0..spec.max_regen {
        let cmdp = draw_instance(spec, root.child(Purpose::Environment, &[attempt as u64]))?;
        last_slack = slater_slack(&cmdp)?;
        if last_slack >= spec.min_slack {
            return Ok(cmdp);
        }
    }
    Err(Error::RegenerationExhausted {
        attempts: spec.max_regen,
        slack: last_slack,
        required: spec.min_slack,
    })
}
