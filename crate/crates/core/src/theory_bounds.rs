//! Certificate arithmetic: gradient Lipschitz constants of the value
//! functions, per-step sample-size bounds for safety, the finite-horizon
//! union bound, the convergence constants, and the adaptive episode loop.

use serde::{Deserialize, Serialize};

use crate::cmdp::{rollout_range, CmdpSpec, Environment, StochasticPolicy};
use crate::error::{Error, Result};
use crate::estimators::{
    episode_terms, geometric_sum, reduce_terms, variance_constants, weighted_geometric_sum, EpisodeTerms,
    EstimateBundle, StateBaseline,
};
use crate::sgf_update::UpdateResult;

/// Lipschitz constant of ∇V_q from the bounds B_q (reward), L (score
/// Lipschitz) and B̃ (score magnitude).
///
/// Evaluates Σ_{t,τ=0}^{T} γ^{t+τ} [B_q L + B_q B̃² (t+τ+1)] in closed form:
/// B_q L S₀² + B_q B̃² (2 S₀ S₁ + S₀²) with S₀ = Σγ^t, S₁ = Σ t γ^t.
pub fn lipschitz_value_grad(b_q: f64, l: f64, b_tilde: f64, gamma: f64, horizon: usize) -> f64 {
    let s0 = geometric_sum(gamma, horizon);
    let s1 = weighted_geometric_sum(gamma, horizon);
    b_q * l * s0 * s0 + b_q * b_tilde * b_tilde * (2.0 * s0 * s1 + s0 * s0)
}

/// The three-term expression as usually quoted, with (1 − γ^T)/(1 − γ) sums
/// and a single S₁ cross term. It understates the double sum it is meant to
/// close (see [`lipschitz_value_grad`]); kept for comparison only.
pub fn lipschitz_value_grad_as_printed(b_q: f64, l: f64, b_tilde: f64, gamma: f64, horizon: usize) -> f64 {
    let t = horizon as f64;
    let g = (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma);
    let w = gamma * (1.0 - (t + 1.0) * gamma.powi(horizon as i32) + t * gamma.powi(horizon as i32 + 1))
        / (1.0 - gamma).powi(2);
    b_q * l * g * g + 2.0 * b_q * b_tilde * b_tilde * w + b_q * b_tilde * b_tilde * g * g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBundle {
    pub l0: f64,
    pub l1: f64,
    pub b0: f64,
    pub b1: f64,
    pub policy_l: f64,
    pub b_tilde: f64,
    pub gamma: f64,
    pub horizon: usize,
}

impl LipschitzBundle {
    pub fn new(spec: &CmdpSpec, policy_l: f64, b_tilde: f64) -> Self {
        let (b0, b1) = spec.reward_bounds;
        let (gamma, horizon) = (spec.gamma, spec.horizon);
        LipschitzBundle {
            l0: lipschitz_value_grad(b0, policy_l, b_tilde, gamma, horizon),
            l1: lipschitz_value_grad(b1, policy_l, b_tilde, gamma, horizon),
            b0,
            b1,
            policy_l,
            b_tilde,
            gamma,
            horizon,
        }
    }

    /// min{1/α, 1/L0, 1/L1}; step sizes at or above this void the theory.
    pub fn step_size_limit(&self, alpha: f64) -> f64 {
        (1.0 / alpha).min(1.0 / self.l0).min(1.0 / self.l1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificateCase {
    V1hatNonpos,
    V1hatPos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyCertificate {
    pub m_hat: f64,
    pub nu: Option<f64>,
    /// `None` is the unbounded sentinel: no finite N certifies this step.
    pub required_n: Option<u64>,
    pub delta: f64,
    pub case: CertificateCase,
    pub satisfied: bool,
    pub n_used: u64,
}

impl SafetyCertificate {
    /// Integer for the metrics file; `-1` stands for the unbounded sentinel.
    pub fn required_n_field(&self) -> i64 {
        self.required_n.map_or(-1, |n| i64::try_from(n).unwrap_or(i64::MAX))
    }
}

/// ⌈x⌉ + 1 with x = max(−2σ̃²ln δ/b², −2dσ̄²ln(δ/d)/b²). Any N at or above
/// this exceeds x strictly.
pub fn required_episodes(bound: f64, sigma_tilde1: f64, sigma_bar1: f64, d: usize, delta: f64) -> Option<u64> {
    if !(bound > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return None;
    }
    let df = d as f64;
    let value = -2.0 * sigma_tilde1 * sigma_tilde1 * delta.ln() / (bound * bound);
    let grad = -2.0 * df * sigma_bar1 * sigma_bar1 * (delta / df).ln() / (bound * bound);
    let x = value.max(grad).max(0.0);
    if !x.is_finite() || x >= 9.0e18 {
        return None;
    }
    Some(x.ceil() as u64 + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub step_norm: f64,
    pub alpha_h: f64,
    pub h: f64,
    pub l1: f64,
    pub sigma_tilde1: f64,
    pub sigma_bar1: f64,
    pub d: usize,
    pub delta: f64,
    pub n_used: u64,
}

impl CertificateInputs {
    fn check(&self) -> Result<()> {
        if !(self.alpha_h > 0.0 && self.alpha_h < 1.0) {
            return Err(Error::Argument(format!("α·h = {} must lie in (0, 1)", self.alpha_h)));
        }
        if !(self.h > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Argument("need h > 0 and δ in (0, 1)".into()));
        }
        if self.h * self.l1 >= 1.0 {
            log::warn!("h·L1 = {} ≥ 1; the safety certificate does not apply", self.h * self.l1);
        }
        Ok(())
    }
}

/// Sample-size certificate for an estimated-safe iterate (V̂₁ ≤ 0).
pub fn safety_sample_bound(v1_hat: f64, inp: &CertificateInputs) -> Result<SafetyCertificate> {
    inp.check()?;
    if v1_hat > 0.0 {
        return Err(Error::Argument("safety_sample_bound needs v1_hat ≤ 0".into()));
    }
    let s = inp.step_norm;
    let m_hat = ((1.0 - inp.alpha_h) * v1_hat.abs() + 0.5 * (1.0 / inp.h - inp.l1) * s * s) / (1.0 + s);
    let required_n = required_episodes(m_hat, inp.sigma_tilde1, inp.sigma_bar1, inp.d, inp.delta);
    Ok(SafetyCertificate {
        m_hat,
        nu: None,
        required_n,
        delta: inp.delta,
        case: CertificateCase::V1hatNonpos,
        satisfied: required_n.is_some_and(|r| inp.n_used >= r),
        n_used: inp.n_used,
    })
}

/// Largest admissible ν for an estimated-unsafe iterate; may be ≤ 0.
pub fn nu_supremum(v1_hat: f64, inp: &CertificateInputs) -> f64 {
    let s = inp.step_norm;
    (0.5 * (1.0 / inp.h - inp.l1) * s * s - (1.0 - inp.alpha_h) * v1_hat) / (1.0 + s)
}

/// Sample-size certificate for an estimated-unsafe iterate (V̂₁ ≥ 0),
/// using ν at half its supremum.
pub fn unsafe_case_bound(v1_hat: f64, inp: &CertificateInputs) -> Result<SafetyCertificate> {
    inp.check()?;
    if v1_hat < 0.0 {
        return Err(Error::Argument("unsafe_case_bound needs v1_hat ≥ 0".into()));
    }
    let nu_star = nu_supremum(v1_hat, inp);
    let (nu, required_n) = if nu_star > 0.0 {
        let nu = 0.5 * nu_star;
        (Some(nu), required_episodes(nu, inp.sigma_tilde1, inp.sigma_bar1, inp.d, inp.delta))
    } else {
        (None, None)
    };
    Ok(SafetyCertificate {
        m_hat: nu_star,
        nu,
        required_n,
        delta: inp.delta,
        case: CertificateCase::V1hatPos,
        satisfied: required_n.is_some_and(|r| inp.n_used >= r),
        n_used: inp.n_used,
    })
}

/// Picks the case from the sign of V̂₁.
pub fn certify(v1_hat: f64, inp: &CertificateInputs) -> Result<SafetyCertificate> {
    if v1_hat <= 0.0 {
        safety_sample_bound(v1_hat, inp)
    } else {
        unsafe_case_bound(v1_hat, inp)
    }
}

/// 1 − 2Hδ lower bound on every one of H+1 iterates being safe.
pub fn horizon_safety(certificates: &[SafetyCertificate], horizon: usize) -> f64 {
    if let Some((i, _)) = certificates.iter().enumerate().find(|(_, c)| !c.satisfied) {
        log::warn!("certificate {i} not satisfied; no horizon guarantee");
        return 0.0;
    }
    let delta = certificates.iter().map(|c| c.delta).fold(0.0, f64::max);
    (1.0 - 2.0 * horizon as f64 * delta).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub initial_n: usize,
    pub n_max: usize,
    pub growth_factor: f64,
    pub delta: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { initial_n: 50, n_max: 1 << 20, growth_factor: 2.0, delta: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptiveOutcome {
    pub bundle: EstimateBundle,
    pub update: UpdateResult,
    pub certificate: SafetyCertificate,
    /// False when N_max was reached without a satisfied certificate.
    pub attained: bool,
    pub rounds: usize,
}

/// Fixed problem data for the adaptive loop.
pub struct AdaptiveProblem<'a, E: Environment + ?Sized, P: StochasticPolicy + ?Sized> {
    pub env: &'a E,
    pub policy: &'a P,
    pub baseline: &'a dyn StateBaseline,
    pub master_seed: u64,
    pub iteration: u64,
    pub alpha: f64,
    pub h: f64,
    pub l1: f64,
}

/// Grows N until the step's certificate holds or N_max is reached.
///
/// Episodes keep their per-index seeds, so each round only simulates the
/// new indices and the earlier ones are reused bit for bit. `step` maps an
/// estimate to the proposed update.
pub fn adaptive_episode_count<E, P, F>(
    prob: &AdaptiveProblem<'_, E, P>,
    theta: &[f64],
    cfg: &AdaptiveConfig,
    step: F,
) -> Result<AdaptiveOutcome>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
    F: Fn(&EstimateBundle) -> Result<UpdateResult>,
{
    if !(cfg.growth_factor > 1.0) {
        return Err(Error::Argument("growth factor must exceed 1".into()));
    }
    if cfg.initial_n == 0 || cfg.n_max < cfg.initial_n {
        return Err(Error::Argument("need 1 ≤ initial_n ≤ n_max".into()));
    }
    let spec = prob.env.spec();
    let constants = variance_constants(spec, prob.policy.constants().grad_bound, prob.baseline.bound());
    let mut terms: Vec<EpisodeTerms> = Vec::new();
    let mut n = cfg.initial_n;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let have = terms.len();
        let eps = rollout_range(prob.env, prob.policy, theta, prob.master_seed, prob.iteration, have..n)?;
        terms.extend(episode_terms(&eps, spec.gamma, prob.policy, theta, prob.baseline)?);
        let bundle = reduce_terms(&terms, constants, prob.baseline.bound())?;
        let update = step(&bundle)?;
        let inputs = CertificateInputs {
            step_norm: update.step_norm,
            alpha_h: prob.alpha * prob.h,
            h: prob.h,
            l1: prob.l1,
            sigma_tilde1: bundle.sigma_tilde[1],
            sigma_bar1: bundle.sigma_bar[1],
            d: theta.len(),
            delta: cfg.delta,
            n_used: n as u64,
        };
        let mut certificate = certify(bundle.v1_hat, &inputs)?;
        // A zero step from an estimated-boundary point leaves V₁ unchanged.
        if update.step_norm == 0.0 && bundle.v1_hat == 0.0 {
            certificate.required_n = Some(0);
            certificate.satisfied = true;
        }
        if certificate.satisfied || n >= cfg.n_max {
            let attained = certificate.satisfied;
            if !attained {
                log::warn!(
                    "iteration {}: certificate unattained at N_max = {} (required {:?})",
                    prob.iteration,
                    cfg.n_max,
                    certificate.required_n
                );
            }
            return Ok(AdaptiveOutcome { bundle, update, certificate, attained, rounds });
        }
        let target = certificate
            .required_n
            .map_or(cfg.n_max, |r| usize::try_from(r).unwrap_or(usize::MAX));
        // Jump straight to the current requirement when it is farther than one
        // growth step; the requirement itself moves with the estimates.
        let grown = (cfg.growth_factor * n as f64).ceil() as usize;
        n = grown.max(target.min(cfg.n_max)).min(cfg.n_max);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInputs {
    pub sigma_tilde: [f64; 2],
    pub sigma_bar: [f64; 2],
    pub d: usize,
    pub alpha: f64,
    pub h: f64,
    pub l0: f64,
    pub eta_a: f64,
    pub eta_a_hat: f64,
    /// Appears in K_Δ but is not defined by the theory; must be supplied.
    pub eta_delta_hat: Option<f64>,
    /// Defaults to 2η_A, mirroring η̂_B = 2η̂_A.
    pub eta_b: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    pub m0: f64,
    pub m1: f64,
    pub m_a: f64,
    pub m_b: f64,
    pub m_c: f64,
    pub m_delta: f64,
    pub eta_b: f64,
    pub eta_b_hat: f64,
    pub m_u: f64,
    pub k_a: f64,
    pub k_b: f64,
    pub k_c: f64,
    pub k_delta: f64,
    pub k_u: f64,
    pub m_p: f64,
    pub m_p_bar: f64,
    pub k_p: f64,
    pub inputs: ConvergenceInputs,
}

pub fn convergence_constants(inp: &ConvergenceInputs) -> Result<ConvergenceConstants> {
    if !(inp.eta_a > 0.0 && inp.eta_a_hat > 0.0) {
        return Err(Error::Argument("η_A and η̂_A must be positive".into()));
    }
    let eta_delta_hat = match inp.eta_delta_hat {
        Some(x) if x > 0.0 => x,
        _ => return Err(Error::Argument("η̂_Δ must be supplied and positive".into())),
    };
    if !(inp.h > 0.0) || inp.h * inp.l0 >= 2.0 {
        return Err(Error::Argument(format!("need 0 < h < 2/L0 (h = {}, L0 = {})", inp.h, inp.l0)));
    }
    let sd = (inp.d as f64).sqrt();
    let m0 = sd * inp.sigma_bar[0];
    let m1 = sd * inp.sigma_bar[1];
    let m_a = m1 * m1 + 2.0 * inp.alpha * inp.sigma_tilde[1];
    let m_b = 2.0 * m_a;
    let m_c = 2.0 * m1 * m0 + 2.0 * inp.alpha * m1;
    let m_delta = 4.0 * (m1 + m0).powi(2) * m_a;
    let eta_b_hat = 2.0 * inp.eta_a_hat;
    let eta_b = inp.eta_b.unwrap_or(2.0 * inp.eta_a);
    let m_u = (m_b + m_delta.sqrt()) / (2.0 * inp.eta_a);
    let k_a = 2.0 * m1;
    let k_b = 4.0 * m1;
    let k_c = 2.0 * m1 + 4.0 * m0;
    let k_delta = (k_b + 2.0 * m_b * k_b + 4.0 * k_a * m_c + 4.0 * m_a * k_c) / eta_delta_hat;
    let k_u = (k_a * (m_b + m_delta.sqrt()) / (2.0 * inp.eta_a * inp.eta_a_hat) + (k_delta + k_b) / (2.0 * inp.eta_a))
        .max(2.0 * k_c / eta_b)
        .max(2.0 * k_c / eta_b_hat);
    let m_p = inp.h * (m0 + m_u * m1);
    let m_p_bar = 2.0 * m_p / (1.0 / inp.h - inp.l0 / 2.0);
    let k_p = 1.0 + k_u * inp.sigma_bar[1] + m_u + k_u;
    Ok(ConvergenceConstants {
        m0,
        m1,
        m_a,
        m_b,
        m_c,
        m_delta,
        eta_b,
        eta_b_hat,
        m_u,
        k_a,
        k_b,
        k_c,
        k_delta,
        k_u,
        m_p,
        m_p_bar,
        k_p,
        inputs: *inp,
    })
}

impl ConvergenceConstants {
    /// Largest ε with √(M̄_p ε) + h K_p ε ≤ ε*.
    pub fn epsilon_for(&self, eps_star: f64) -> f64 {
        let (a, b) = (self.inputs.h * self.k_p, self.m_p_bar.sqrt());
        // Positive root of a s² + b s − ε* in s = √ε, cancellation-free.
        let s = 2.0 * eps_star / (b + (b * b + 4.0 * a * eps_star).sqrt());
        s * s
    }

    /// Smallest iteration count k ≥ 2σ̃₀/(M_p ε).
    pub fn min_iterations(&self, eps: f64) -> u64 {
        (2.0 * self.inputs.sigma_tilde[0] / (self.m_p * eps)).ceil() as u64
    }

    /// The lower bound max{dσ̄₁², dσ̄₀², σ̃₁²}/ε that N_i must exceed.
    pub fn episode_lower_bound(&self, eps: f64) -> f64 {
        let d = self.inputs.d as f64;
        let sb = self.inputs.sigma_bar;
        (d * sb[1] * sb[1]).max(d * sb[0] * sb[0]).max(self.inputs.sigma_tilde[1].powi(2)) / eps
    }
}
