//! Link functions and simulated evaluator panels.
//!
//! Every query is answered by a panel of `m` simulated evaluators who each
//! cast one Bernoulli vote on the same trajectory (or trajectory pair). The
//! vote frequency is clipped into the link's achievable range on
//! `[-G(H), G(H)]` and inverted, giving an estimate of the latent score
//! (a return difference, or a return minus the threshold).

use libm::erfc;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamRng};

/// Monotone map from a latent score to a preference probability with
/// `forward(0) = 1/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkFunction {
    /// Logistic preference between two trajectories.
    #[default]
    BradleyTerry,
    /// Logistic judgement of a single trajectory against the threshold.
    LogisticAbsolute,
    /// Standard normal CDF.
    Probit,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Lower-tail normal quantile for `p ∈ (0, 1/2]`: Acklam's rational
/// approximation followed by one Halley step against `erfc`.
fn normal_quantile_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p <= 0.5 {
        normal_quantile_lower(p)
    } else {
        -normal_quantile_lower(1.0 - p)
    }
}

impl LinkFunction {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            LinkFunction::BradleyTerry | LinkFunction::LogisticAbsolute => logistic(x),
            LinkFunction::Probit => normal_cdf(x),
        }
    }

    /// Inverse link; `±∞` at `p = 0` or `1`.
    pub fn inverse(self, p: f64) -> f64 {
        match self {
            LinkFunction::BradleyTerry | LinkFunction::LogisticAbsolute => {
                if p <= 0.0 {
                    f64::NEG_INFINITY
                } else if p >= 1.0 {
                    f64::INFINITY
                } else {
                    (p / (1.0 - p)).ln()
                }
            }
            LinkFunction::Probit => normal_quantile(p),
        }
    }

    /// `dσ/dx`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            LinkFunction::BradleyTerry | LinkFunction::LogisticAbsolute => {
                let p = logistic(x);
                p * (1.0 - p)
            }
            LinkFunction::Probit => normal_pdf(x),
        }
    }
}

/// Logistic link `1 / (1 + e^{-x})`.
pub fn bt_forward(x: f64) -> f64 {
    logistic(x)
}

/// Clamps `p` into `[σ(-g_h), σ(g_h)]`.
pub fn clip_probability(p: f64, link: LinkFunction, g_h: f64) -> f64 {
    p.max(link.forward(-g_h)).min(link.forward(g_h))
}

/// Lipschitz constant of `σ^{-1}` on the clipped range `[σ(-g_h), σ(g_h)]`.
///
/// Both shipped link shapes have derivatives that decrease in `|x|`, so the
/// supremum of `1/σ'(σ^{-1}(p))` sits at the endpoints.
pub fn inverse_lipschitz(link: LinkFunction, g_h: f64) -> f64 {
    let g = g_h.abs();
    1.0 / link.derivative(g).min(link.derivative(-g))
}

/// Clipped empirical probability and its inversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEstimate {
    pub p_hat: f64,
    pub score: f64,
    pub raw_count: usize,
}

impl FeedbackEstimate {
    /// Builds the estimate from `positive` votes out of `m`.
    ///
    /// The inversion is clamped to `[-g_h, g_h]`; this only bites when the
    /// clipped probability is not representable (a probit tail beyond
    /// `f64` resolution) or by an ulp of rounding.
    pub fn from_votes(link: LinkFunction, positive: usize, m: usize, g_h: f64) -> Self {
        let p_hat = clip_probability(positive as f64 / m as f64, link, g_h);
        let score = link.inverse(p_hat).clamp(-g_h, g_h);
        FeedbackEstimate {
            p_hat,
            score,
            raw_count: positive,
        }
    }
}

/// `m` simulated evaluators sharing one random stream.
#[derive(Clone, Debug)]
pub struct EvaluatorPanel {
    m: usize,
    rng: StreamRng,
    queries: u64,
}

impl EvaluatorPanel {
    pub fn new(m: usize, stream: RngStream) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "panel needs at least one evaluator".into(),
            ));
        }
        Ok(EvaluatorPanel {
            m,
            rng: stream.rng(),
            queries: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// One-bit answers issued so far.
    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// Casts `m` independent Bernoulli(`p`) votes, returning the positives.
    fn vote(&mut self, p: f64) -> usize {
        self.queries += self.m as u64;
        (0..self.m).filter(|_| self.rng.random::<f64>() < p).count()
    }
}

/// Asks the panel whether the trajectory with return `r1` beats the one with
/// return `r0`; the score estimates `r1 - r0`.
pub fn pairwise_query(
    link: LinkFunction,
    r1: f64,
    r0: f64,
    panel: &mut EvaluatorPanel,
    g_h: f64,
) -> FeedbackEstimate {
    let positive = panel.vote(link.forward(r1 - r0));
    FeedbackEstimate::from_votes(link, positive, panel.m, g_h)
}

/// Asks the panel whether a trajectory with utility return `r_g` is
/// harmless; the score estimates `r_g - b`.
pub fn absolute_query(
    link_c: LinkFunction,
    r_g: f64,
    b: f64,
    panel: &mut EvaluatorPanel,
    g_h: f64,
) -> FeedbackEstimate {
    let positive = panel.vote(link_c.forward(r_g - b));
    FeedbackEstimate::from_votes(link_c, positive, panel.m, g_h)
}

/// Link functions for the three feedback channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSet {
    #[serde(default)]
    pub reward: LinkFunction,
    #[serde(default)]
    pub utility: LinkFunction,
    #[serde(default = "default_absolute")]
    pub absolute: LinkFunction,
}

fn default_absolute() -> LinkFunction {
    LinkFunction::LogisticAbsolute
}

impl Default for LinkSet {
    fn default() -> Self {
        LinkSet {
            reward: LinkFunction::BradleyTerry,
            utility: LinkFunction::BradleyTerry,
            absolute: LinkFunction::LogisticAbsolute,
        }
    }
}

/// Half-width of the expected absolute error of one clipped inverse-link
/// estimate: `L√(2 ln M / M) + 2G(H)/M²`.
pub fn feedback_bias_bound(lipschitz: f64, m: usize, g_h: f64) -> f64 {
    let m = m as f64;
    lipschitz * (2.0 * m.ln() / m).sqrt() + 2.0 * g_h / (m * m)
}
