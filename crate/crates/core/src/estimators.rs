//! Monte-Carlo estimators of the value functions and their gradients, and
//! the almost-sure bounds that drive every concentration argument.
//!
//! Sign convention: V_0 is the *minimized* objective, the expected
//! discounted sum of −R0. Both estimators below negate R0 internally, so
//! every caller can treat `q = 0` quantities as "the function we descend".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmdp::{CmdpSpec, Episode, StochasticPolicy};
use crate::error::{Error, Result};

/// A state-dependent offset b(s) with a declared bound |b(s)| ≤ B̂.
pub trait StateBaseline: Sync {
    fn value(&self, state: &[f64]) -> f64;
    fn bound(&self) -> f64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroBaseline;

impl StateBaseline for ZeroBaseline {
    fn value(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn bound(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantBaseline(pub f64);

impl StateBaseline for ConstantBaseline {
    fn value(&self, _: &[f64]) -> f64 {
        self.0
    }
    fn bound(&self) -> f64 {
        self.0.abs()
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[inline]
fn signed_reward(q: usize, r0: f64, r1: f64) -> f64 {
    if q == 0 {
        -r0
    } else {
        r1
    }
}

fn check_q(q: usize) -> Result<()> {
    if q > 1 {
        return Err(Error::Argument(format!("value index must be 0 or 1, got {q}")));
    }
    Ok(())
}

/// Signed discounted return of one episode, Σ_t γ^t (∓R_q).
pub fn episode_return(episode: &Episode, q: usize, gamma: f64) -> f64 {
    let mut acc = CompensatedSum::default();
    let mut disc = 1.0;
    for tr in &episode.transitions {
        acc.add(disc * signed_reward(q, tr.r0, tr.r1));
        disc *= gamma;
    }
    acc.value()
}

/// Pairwise sum of an ordered slice; the tree shape depends only on the length.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

fn pairwise_sum_vecs(xs: &[Vec<f64>]) -> Vec<f64> {
    match xs.len() {
        0 => Vec::new(),
        1 => xs[0].clone(),
        n => {
            let mut left = pairwise_sum_vecs(&xs[..n / 2]);
            let right = pairwise_sum_vecs(&xs[n / 2..]);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

fn check_uniform(episodes: &[Episode]) -> Result<usize> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::Argument("estimators need at least one episode".into()))?;
    let len = first.len();
    if len == 0 || episodes.iter().any(|e| e.len() != len) {
        return Err(Error::Argument("episodes must share a common nonzero length".into()));
    }
    Ok(len)
}

/// V̂_q = ((−1)^{q+1}/N) Σ_n Σ_t γ^t R_q.
pub fn value_estimate(episodes: &[Episode], q: usize, gamma: f64) -> Result<f64> {
    check_q(q)?;
    check_uniform(episodes)?;
    let returns: Vec<f64> = episodes.iter().map(|e| episode_return(e, q, gamma)).collect();
    Ok(pairwise_sum(&returns) / episodes.len() as f64)
}

/// Single-episode gradient terms for both q = 0 and q = 1:
/// Σ_t γ^t ∇log π(a_t|s_t) · (G_t − (T − t + 1) b(s_t)), with G_t the signed
/// reward-to-go from a single backward pass.
pub fn episode_gradients<P: StochasticPolicy + ?Sized>(
    episode: &Episode,
    gamma: f64,
    policy: &P,
    theta: &[f64],
    baseline: &dyn StateBaseline,
) -> Result<[Vec<f64>; 2]> {
    let len = episode.len();
    let mut to_go = vec![[0.0f64; 2]; len + 1];
    for t in (0..len).rev() {
        let tr = &episode.transitions[t];
        for q in 0..2 {
            to_go[t][q] = signed_reward(q, tr.r0, tr.r1) + gamma * to_go[t + 1][q];
        }
    }
    let d = policy.param_dim();
    let mut acc = vec![[CompensatedSum::default(); 2]; d];
    let mut disc = 1.0;
    for (t, tr) in episode.transitions.iter().enumerate() {
        let b = baseline.value(&tr.state);
        if b.abs() > baseline.bound() {
            return Err(Error::BaselineBound { value: b.abs(), bound: baseline.bound() });
        }
        let score = policy.score(theta, &tr.state, &tr.action)?;
        let copies = (len - t) as f64;
        let weights = [disc * (to_go[t][0] - copies * b), disc * (to_go[t][1] - copies * b)];
        for (j, g) in score.iter().enumerate() {
            if *g != 0.0 {
                acc[j][0].add(g * weights[0]);
                acc[j][1].add(g * weights[1]);
            }
        }
        disc *= gamma;
    }
    Ok([
        acc.iter().map(|a| a[0].value()).collect(),
        acc.iter().map(|a| a[1].value()).collect(),
    ])
}

/// ∇V̂_q averaged over the episodes.
pub fn gradient_estimate<P: StochasticPolicy + ?Sized>(
    episodes: &[Episode],
    q: usize,
    gamma: f64,
    policy: &P,
    theta: &[f64],
    baseline: &dyn StateBaseline,
) -> Result<Vec<f64>> {
    check_q(q)?;
    check_uniform(episodes)?;
    let per: Vec<Vec<f64>> = episodes
        .par_iter()
        .map(|e| episode_gradients(e, gamma, policy, theta, baseline).map(|[g0, g1]| if q == 0 { g0 } else { g1 }))
        .collect::<Result<_>>()?;
    let n = episodes.len() as f64;
    Ok(pairwise_sum_vecs(&per).into_iter().map(|x| x / n).collect())
}

/// σ̃_q and σ̄_q for q = 0, 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceConstants {
    pub sigma_tilde: [f64; 2],
    pub sigma_bar: [f64; 2],
}

/// Σ_{t=0}^{T} γ^t.
pub fn geometric_sum(gamma: f64, horizon: usize) -> f64 {
    (1.0 - gamma.powi(horizon as i32 + 1)) / (1.0 - gamma)
}

/// Σ_{t=0}^{T} t γ^t.
pub fn weighted_geometric_sum(gamma: f64, horizon: usize) -> f64 {
    let t = horizon as f64;
    gamma * (1.0 - (t + 1.0) * gamma.powi(horizon as i32) + t * gamma.powi(horizon as i32 + 1))
        / (1.0 - gamma).powi(2)
}

/// σ̃ = B (1 − γ^{T+1})/(1 − γ).
pub fn sigma_tilde(reward_bound: f64, gamma: f64, horizon: usize) -> f64 {
    reward_bound * geometric_sum(gamma, horizon)
}

/// σ̄ = B̃ Σ_t γ^t Σ_{t′≥t} (B γ^{t′−t} + B̂), in closed form.
pub fn sigma_bar(reward_bound: f64, grad_bound: f64, baseline_bound: f64, gamma: f64, horizon: usize) -> f64 {
    let s0 = geometric_sum(gamma, horizon);
    let s1 = weighted_geometric_sum(gamma, horizon);
    let t1 = (horizon + 1) as f64;
    let reward_part = (s0 - t1 * gamma.powi(horizon as i32 + 1)) / (1.0 - gamma);
    let baseline_part = t1 * s0 - s1;
    grad_bound * (reward_bound * reward_part + baseline_bound * baseline_part)
}

/// The O(T²) double sum defining σ̄, kept as a cross-check.
pub fn sigma_bar_direct(reward_bound: f64, grad_bound: f64, baseline_bound: f64, gamma: f64, horizon: usize) -> f64 {
    let mut outer = 0.0;
    for t in 0..=horizon {
        let mut inner = 0.0;
        for tp in t..=horizon {
            inner += reward_bound * gamma.powi((tp - t) as i32) + baseline_bound;
        }
        outer += gamma.powi(t as i32) * inner;
    }
    grad_bound * outer
}

pub fn variance_constants(spec: &CmdpSpec, grad_bound: f64, baseline_bound: f64) -> VarianceConstants {
    let (b0, b1) = spec.reward_bounds;
    let (g, t) = (spec.gamma, spec.horizon);
    VarianceConstants {
        sigma_tilde: [sigma_tilde(b0, g, t), sigma_tilde(b1, g, t)],
        sigma_bar: [
            sigma_bar(b0, grad_bound, baseline_bound, g, t),
            sigma_bar(b1, grad_bound, baseline_bound, g, t),
        ],
    }
}

/// Hoeffding lower bound 1 − d·exp(−Nε²/(2dσ²)), floored at zero.
/// Use `d = 1` for a value estimate and the parameter dimension for a
/// gradient (union bound over coordinates).
pub fn hoeffding_probability(n: u64, eps: f64, sigma: f64, d: usize) -> f64 {
    let d = d as f64;
    (1.0 - d * (-(n as f64) * eps * eps / (2.0 * d * sigma * sigma)).exp()).max(0.0)
}

/// Everything one update step needs from a batch of episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateBundle {
    /// V̂_0, the minimized objective (negated return).
    pub v0_hat: f64,
    pub v1_hat: f64,
    pub grad_v0_hat: Vec<f64>,
    pub grad_v1_hat: Vec<f64>,
    pub episodes_used: usize,
    pub sigma_tilde: [f64; 2],
    pub sigma_bar: [f64; 2],
    pub baseline_bound: f64,
}

/// Per-episode sufficient statistics; bundles are reductions of these, so a
/// batch can grow without recomputing earlier episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTerms {
    pub returns: [f64; 2],
    pub grads: [Vec<f64>; 2],
}

pub fn episode_terms<P: StochasticPolicy + ?Sized>(
    episodes: &[Episode],
    gamma: f64,
    policy: &P,
    theta: &[f64],
    baseline: &dyn StateBaseline,
) -> Result<Vec<EpisodeTerms>> {
    check_uniform(episodes)?;
    episodes
        .par_iter()
        .map(|e| {
            Ok(EpisodeTerms {
                returns: [episode_return(e, 0, gamma), episode_return(e, 1, gamma)],
                grads: episode_gradients(e, gamma, policy, theta, baseline)?,
            })
        })
        .collect()
}

/// Reduces per-episode terms in index order. Every single-episode term is
/// checked against its almost-sure bound (σ̃_q for returns, σ̄_q per gradient
/// coordinate); a violation means the reward or score bounds were wrong.
pub fn reduce_terms(terms: &[EpisodeTerms], constants: VarianceConstants, baseline_bound: f64) -> Result<EstimateBundle> {
    if terms.is_empty() {
        return Err(Error::Argument("estimators need at least one episode".into()));
    }
    for (n, t) in terms.iter().enumerate() {
        for q in 0..2 {
            let rt = constants.sigma_tilde[q] * (1.0 + 1e-9);
            let rb = constants.sigma_bar[q] * (1.0 + 1e-9);
            if t.returns[q].abs() > rt || t.grads[q].iter().any(|g| g.abs() > rb) {
                return Err(Error::EnvironmentContract(format!(
                    "episode {n}: single-episode estimate exceeds its almost-sure bound (q={q})"
                )));
            }
        }
    }
    let n = terms.len() as f64;
    let mean = |q: usize| pairwise_sum(&terms.iter().map(|t| t.returns[q]).collect::<Vec<_>>()) / n;
    let grad = |q: usize| {
        let per: Vec<Vec<f64>> = terms.iter().map(|t| t.grads[q].clone()).collect();
        pairwise_sum_vecs(&per).into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    Ok(EstimateBundle {
        v0_hat: mean(0),
        v1_hat: mean(1),
        grad_v0_hat: grad(0),
        grad_v1_hat: grad(1),
        episodes_used: terms.len(),
        sigma_tilde: constants.sigma_tilde,
        sigma_bar: constants.sigma_bar,
        baseline_bound,
    })
}

/// Builds the full bundle for `theta` from episodes generated under it.
pub fn estimate<P: StochasticPolicy + ?Sized>(
    episodes: &[Episode],
    spec: &CmdpSpec,
    policy: &P,
    theta: &[f64],
    baseline: &dyn StateBaseline,
) -> Result<EstimateBundle> {
    let constants = variance_constants(spec, policy.constants().grad_bound, baseline.bound());
    let terms = episode_terms(episodes, spec.gamma, policy, theta, baseline)?;
    reduce_terms(&terms, constants, baseline.bound())
}
