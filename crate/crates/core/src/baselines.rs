//! Comparison updates driven by the same estimates as RL-SGF: projected
//! primal-dual gradient steps and a first-order CPO step with H = I.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateBundle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualState {
    pub lambda: f64,
    pub eta_theta: f64,
    pub eta_lambda: f64,
}

impl PrimalDualState {
    pub fn new(lambda: f64, eta_theta: f64, eta_lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !(eta_theta > 0.0) || !(eta_lambda > 0.0) {
            return Err(Error::Argument("need λ ≥ 0 and positive step sizes".into()));
        }
        Ok(PrimalDualState { lambda, eta_theta, eta_lambda })
    }
}

/// θ′ = θ − η_θ(g₀ + λg₁), λ′ = max(0, λ + η_λ v₁).
pub fn primal_dual_step(theta: &[f64], est: &EstimateBundle, state: PrimalDualState) -> (Vec<f64>, PrimalDualState) {
    let next = theta
        .iter()
        .zip(est.grad_v0_hat.iter().zip(&est.grad_v1_hat))
        .map(|(t, (g0, g1))| t - state.eta_theta * (g0 + state.lambda * g1))
        .collect();
    let lambda = (state.lambda + state.eta_lambda * est.v1_hat).max(0.0);
    (next, PrimalDualState { lambda, ..state })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpoConfig {
    /// δ_cpo in ½‖Δ‖² ≤ δ_cpo.
    pub trust_radius: f64,
}

impl Default for CpoConfig {
    fn default() -> Self {
        CpoConfig { trust_radius: 0.15 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CpoCase {
    /// Constraint slack at the pure descent step.
    Descent,
    /// Both the trust region and the linearized constraint bind.
    Boundary,
    /// Constraint unreachable inside the region: step along −g₁.
    Recovery,
    /// g₁ = 0 with v₁ > 0: nothing can reduce the violation.
    NoOp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpoResult {
    pub delta: Vec<f64>,
    pub case: CpoCase,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// min g₀ᵀΔ s.t. c + g₁ᵀΔ ≤ 0, ‖Δ‖ ≤ R = √(2δ_cpo).
///
/// With a linear objective the minimizer sits on the sphere, either at
/// −R ĝ₀ or where the constraint hyperplane cuts the sphere. When the
/// hyperplane misses the ball the step is the standard recovery move.
pub fn cpo_direction(c: f64, g0: &[f64], g1: &[f64], cfg: &CpoConfig) -> Result<CpoResult> {
    if !(cfg.trust_radius > 0.0) {
        return Err(Error::Argument("trust radius must be positive".into()));
    }
    if g0.len() != g1.len() {
        return Err(Error::Argument("gradient dimensions differ".into()));
    }
    let r = (2.0 * cfg.trust_radius).sqrt();
    let n1 = norm(g1);
    let n0 = norm(g0);
    let d = g0.len();
    if n1 == 0.0 {
        if c > 0.0 {
            log::warn!("CPO: constraint violated with zero constraint gradient; no step");
            return Ok(CpoResult { delta: vec![0.0; d], case: CpoCase::NoOp });
        }
        let delta = if n0 > 0.0 { g0.iter().map(|g| -r * g / n0).collect() } else { vec![0.0; d] };
        return Ok(CpoResult { delta, case: CpoCase::Descent });
    }
    if c - r * n1 > 0.0 {
        return Ok(CpoResult { delta: g1.iter().map(|g| -r * g / n1).collect(), case: CpoCase::Recovery });
    }
    if n0 == 0.0 {
        // Objective flat: reduce the constraint as far as the region allows.
        return Ok(CpoResult { delta: g1.iter().map(|g| -r * g / n1).collect(), case: CpoCase::Boundary });
    }
    let descent: Vec<f64> = g0.iter().map(|g| -r * g / n0).collect();
    if c + dot(g1, &descent) <= 0.0 {
        return Ok(CpoResult { delta: descent, case: CpoCase::Descent });
    }
    // Minimize g₀ᵀΔ over {g₁ᵀΔ = −c, ‖Δ‖ = R}: Δ = t ĝ₁ − √(R² − t²) ê,
    // ê the unit part of g₀ orthogonal to g₁.
    let t = -c / n1;
    let proj = dot(g0, g1) / (n1 * n1);
    let perp: Vec<f64> = g0.iter().zip(g1).map(|(a, b)| a - proj * b).collect();
    let np = norm(&perp);
    let s = (r * r - t * t).max(0.0).sqrt();
    let delta = g1
        .iter()
        .zip(&perp)
        .map(|(b, p)| t * b / n1 - if np > 0.0 { s * p / np } else { 0.0 })
        .collect();
    Ok(CpoResult { delta, case: CpoCase::Boundary })
}

pub fn cpo_step(theta: &[f64], est: &EstimateBundle, cfg: &CpoConfig) -> Result<(Vec<f64>, CpoCase)> {
    let r = cpo_direction(est.v1_hat, &est.grad_v0_hat, &est.grad_v1_hat, cfg)?;
    Ok((theta.iter().zip(&r.delta).map(|(t, d)| t + d).collect(), r.case))
}
