//! The safe-gradient-flow policy update.
//!
//! Given a value v₁ of the safety functional and gradients g₀, g₁, the next
//! iterate solves
//!
//! ```text
//! min_y  g₀ᵀ(y − θ) + ‖y − θ‖²/(2h)
//! s.t.   αh·v₁ + g₁ᵀ(y − θ) + ‖y − θ‖²/(2h) ≤ 0
//! ```
//!
//! whose solution is θ − h(g₀ + u·g₁)/(1 + u) for the dual multiplier u ≥ 0
//! obtained from a scalar quadratic. The same map serves the exact update
//! (true values) and the estimated one (Monte-Carlo values).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateBundle;
use crate::policy_rbf::PolicyParams;

/// Degeneracy tolerance on A for branch selection.
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateInputs {
    pub theta: Vec<f64>,
    pub v1: f64,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
    pub alpha: f64,
    pub h: f64,
}

impl UpdateInputs {
    fn validate(&self) -> Result<()> {
        let d = self.theta.len();
        if self.g0.len() != d || self.g1.len() != d {
            return Err(Error::Argument(format!(
                "dimension mismatch: theta {d}, g0 {}, g1 {}",
                self.g0.len(),
                self.g1.len()
            )));
        }
        if !(self.alpha > 0.0) || !(self.h > 0.0) {
            return Err(Error::Argument("alpha and h must be positive".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.v1.is_finite() || !finite(&self.theta) || !finite(&self.g0) || !finite(&self.g1) {
            return Err(Error::Argument("non-finite update input".into()));
        }
        Ok(())
    }

    /// αh·v₁ + g₁ᵀ(y − θ) + ‖y − θ‖²/(2h), the QCQP constraint at y.
    pub fn constraint_at(&self, y: &[f64]) -> f64 {
        let mut lin = 0.0;
        let mut sq = 0.0;
        for j in 0..y.len() {
            let dy = y[j] - self.theta[j];
            lin += self.g1[j] * dy;
            sq += dy * dy;
        }
        self.alpha * self.h * self.v1 + lin + sq / (2.0 * self.h)
    }

    /// g₀ᵀ(y − θ) + ‖y − θ‖²/(2h), the QCQP objective at y.
    pub fn objective_at(&self, y: &[f64]) -> f64 {
        let mut lin = 0.0;
        let mut sq = 0.0;
        for j in 0..y.len() {
            let dy = y[j] - self.theta[j];
            lin += self.g0[j] * dy;
            sq += dy * dy;
        }
        lin + sq / (2.0 * self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Branch {
    /// Constraint inactive: plain gradient step on the objective.
    APosCNonneg,
    /// Constraint active: step blended by the dual root.
    APosCNeg,
    /// Degenerate A = 0: step along −g₁ (multiplier at +∞).
    AZero,
    /// Not produced by the closed form: the estimated problem was infeasible
    /// and the caller fell back to [`recovery_step`].
    Recovery,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::APosCNonneg => "A_POS_C_NONNEG",
            Branch::APosCNeg => "A_POS_C_NEG",
            Branch::AZero => "A_ZERO",
            Branch::Recovery => "RECOVERY",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantities {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateResult {
    pub theta_next: Vec<f64>,
    /// Dual multiplier; `f64::INFINITY` in the degenerate A = 0, C < 0 case.
    pub u_hat: f64,
    pub branch: Branch,
    pub step_norm: f64,
    pub quantities: Quantities,
    /// Slater margin (h/2)·A, the constraint slack at y = θ − h·g₁.
    pub slater_margin: f64,
    pub slater_ok: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A, B, C, Δ of the dual quadratic A u² + B u + C = 0.
pub fn quantities(input: &UpdateInputs) -> Quantities {
    let g1g1 = dot(&input.g1, &input.g1);
    let g0g0 = dot(&input.g0, &input.g0);
    let g1g0 = dot(&input.g1, &input.g0);
    let diff: f64 = input.g1.iter().zip(&input.g0).map(|(a, b)| (a - b).powi(2)).sum();
    let a = g1g1 - 2.0 * input.alpha * input.v1;
    Quantities {
        a,
        b: 2.0 * a,
        c: 2.0 * g1g0 - g0g0 - 2.0 * input.alpha * input.v1,
        delta: 4.0 * diff * a,
    }
}

/// Closed-form solution of the per-step QCQP.
pub fn closed_form_update(input: &UpdateInputs, tol: f64) -> Result<UpdateResult> {
    input.validate()?;
    let q = quantities(input);
    if q.a < -tol {
        return Err(Error::Infeasible { a: q.a, tol });
    }
    let h = input.h;
    let (branch, u_hat, theta_next): (Branch, f64, Vec<f64>) = if q.a.abs() <= tol {
        let next = input.theta.iter().zip(&input.g1).map(|(t, g)| t - h * g).collect();
        let u = if q.c < 0.0 { f64::INFINITY } else { 0.0 };
        (Branch::AZero, u, next)
    } else if q.c >= 0.0 {
        let next = input.theta.iter().zip(&input.g0).map(|(t, g)| t - h * g).collect();
        (Branch::APosCNonneg, 0.0, next)
    } else {
        // Larger root; −2C/(B + √Δ) avoids cancellation when |C| ≪ B.
        let u = -2.0 * q.c / (q.b + q.delta.max(0.0).sqrt());
        let next = input
            .theta
            .iter()
            .zip(input.g0.iter().zip(&input.g1))
            .map(|(t, (g0, g1))| t - h * (g0 + u * g1) / (1.0 + u))
            .collect();
        (Branch::APosCNeg, u, next)
    };
    let step_norm = theta_next
        .iter()
        .zip(&input.theta)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    if theta_next.iter().any(|x: &f64| !x.is_finite()) {
        return Err(Error::NonFinite("update produced a non-finite parameter".into()));
    }
    let slater_margin = 0.5 * h * q.a;
    Ok(UpdateResult {
        theta_next,
        u_hat,
        branch,
        step_norm,
        quantities: q,
        slater_margin,
        slater_ok: slater_margin > 0.0,
    })
}

/// θ − h·g₁, the minimizer of the constraint function. Used when the
/// estimated problem has an empty feasible set.
pub fn recovery_step(input: &UpdateInputs) -> Result<UpdateResult> {
    input.validate()?;
    let q = quantities(input);
    let theta_next: Vec<f64> = input.theta.iter().zip(&input.g1).map(|(t, g)| t - input.h * g).collect();
    let step_norm = input.h * dot(&input.g1, &input.g1).sqrt();
    Ok(UpdateResult {
        theta_next,
        u_hat: f64::INFINITY,
        branch: Branch::Recovery,
        step_norm,
        quantities: q,
        slater_margin: 0.5 * input.h * q.a,
        slater_ok: false,
    })
}

/// One RL-SGF step from a batch estimate.
pub fn rl_sgf_step(params: &PolicyParams, est: &EstimateBundle, alpha: f64, h: f64) -> Result<UpdateResult> {
    step_from_estimate(&params.theta, est, alpha, h)
}

/// Same as [`rl_sgf_step`] for any parameter vector.
pub fn step_from_estimate(theta: &[f64], est: &EstimateBundle, alpha: f64, h: f64) -> Result<UpdateResult> {
    let input = UpdateInputs {
        theta: theta.to_vec(),
        v1: est.v1_hat,
        g0: est.grad_v0_hat.clone(),
        g1: est.grad_v1_hat.clone(),
        alpha,
        h,
    };
    closed_form_update(&input, DEFAULT_TOL)
}

/// Numerical reference solver for the per-step QCQP.
///
/// Minimizes the negated dual ℓ(u) = h‖g₀ + u g₁‖²/(2(1+u)) − uαh·v₁ over
/// u ≥ 0 by bracketing and bisecting on ℓ′, then maps u back through the
/// Lagrangian minimizer. Independent of the closed-form root.
pub mod oracle {
    use super::*;

    #[derive(Clone, Debug)]
    pub struct OracleSolution {
        pub y: Vec<f64>,
        pub u: f64,
        /// Primal objective minus dual value at the returned pair.
        pub duality_gap: f64,
    }

    fn dual_slope(input: &UpdateInputs, u: f64) -> f64 {
        let d = input.theta.len();
        let mut num_dot = 0.0;
        let mut num_sq = 0.0;
        for j in 0..d {
            let m = input.g0[j] + u * input.g1[j];
            num_dot += input.g1[j] * m;
            num_sq += m * m;
        }
        let num = 2.0 * num_dot * (1.0 + u) - num_sq;
        0.5 * input.h * num / ((1.0 + u) * (1.0 + u)) - input.alpha * input.h * input.v1
    }

    fn dual_value(input: &UpdateInputs, u: f64) -> f64 {
        let y = minimizer(input, u);
        input.objective_at(&y) + u * input.constraint_at(&y)
    }

    fn minimizer(input: &UpdateInputs, u: f64) -> Vec<f64> {
        if u.is_infinite() {
            return input.theta.iter().zip(&input.g1).map(|(t, g)| t - input.h * g).collect();
        }
        input
            .theta
            .iter()
            .zip(input.g0.iter().zip(&input.g1))
            .map(|(t, (g0, g1))| t - input.h * (g0 + u * g1) / (1.0 + u))
            .collect()
    }

    pub fn qcqp_oracle(input: &UpdateInputs) -> Result<OracleSolution> {
        input.validate()?;
        let g1g1: f64 = input.g1.iter().map(|x| x * x).sum();
        // Feasible set nonempty iff the ball constraint has nonnegative radius.
        let feas = g1g1 - 2.0 * input.alpha * input.v1;
        if feas < -DEFAULT_TOL {
            return Err(Error::Infeasible { a: feas, tol: DEFAULT_TOL });
        }
        let u = if dual_slope(input, 0.0) >= 0.0 {
            0.0
        } else {
            let mut hi = 1.0;
            while dual_slope(input, hi) < 0.0 && hi < 1e30 {
                hi *= 2.0;
            }
            if dual_slope(input, hi) < 0.0 {
                f64::INFINITY
            } else {
                let mut lo = 0.0;
                for _ in 0..400 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if dual_slope(input, mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        let y = minimizer(input, u);
        let duality_gap = if u.is_finite() {
            input.objective_at(&y) - dual_value(input, u)
        } else {
            0.0
        };
        Ok(OracleSolution { y, u, duality_gap })
    }
}
