//! Two-state, two-action CMDP small enough to enumerate every episode.
//!
//! States and actions are encoded as single-element vectors holding 0.0 or
//! 1.0. The policy picks action 1 in state s with probability
//! sigmoid(θ_s), so d = 2. Exact values and gradients come from summing over
//! all 2^(2(T+1)+1) state/action paths weighted by their probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{ActionBox, CmdpSpec, Environment, Episode, PolicyConstants, StochasticPolicy, Transition};
use crate::error::{Error, Result};
use crate::rng::EpisodeRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub spec: CmdpSpec,
    /// P(s₀ = 1).
    pub initial_p1: f64,
    /// `p_next1[s][a]` = P(s′ = 1 | s, a).
    pub p_next1: [[f64; 2]; 2],
    /// `r0[s][a][s′]`.
    pub r0: [[[f64; 2]; 2]; 2],
    pub r1: [[[f64; 2]; 2]; 2],
}

impl TabularMdp {
    /// The reference instance: state 1 is risky (positive R1), action 1
    /// pushes toward it and also earns more task reward.
    pub fn reference(horizon: usize, gamma: f64) -> Self {
        TabularMdp {
            spec: CmdpSpec {
                state_dim: 1,
                action_dim: 1,
                action_box: ActionBox::new(vec![0.0], vec![1.0]).expect("static box"),
                horizon,
                gamma,
                reward_bounds: (1.0, 1.0),
            },
            initial_p1: 0.3,
            p_next1: [[0.2, 0.6], [0.3, 0.8]],
            r0: [[[0.1, 0.3], [0.5, 0.9]], [[0.2, 0.4], [0.6, 0.8]]],
            r1: [[[-0.4, -0.1], [-0.3, 0.3]], [[-0.2, 0.4], [-0.1, 0.6]]],
        }
    }

    fn idx(x: &[f64]) -> usize {
        usize::from(x[0] >= 0.5)
    }

    /// Enumerates every episode with its probability under θ.
    pub fn enumerate(&self, policy: &TabularPolicy, theta: &[f64]) -> Vec<(f64, Episode)> {
        let len = self.spec.episode_len();
        let mut out = Vec::with_capacity(1 << (2 * len + 1));
        for s0 in 0..2usize {
            let p0 = if s0 == 1 { self.initial_p1 } else { 1.0 - self.initial_p1 };
            self.extend(policy, theta, vec![], s0, p0, len, &mut out);
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn extend(
        &self,
        policy: &TabularPolicy,
        theta: &[f64],
        prefix: Vec<Transition>,
        s: usize,
        prob: f64,
        remaining: usize,
        out: &mut Vec<(f64, Episode)>,
    ) {
        if remaining == 0 {
            let index = out.len();
            out.push((prob, Episode { transitions: prefix, seed: 0, index }));
            return;
        }
        for a in 0..2usize {
            let pa = policy.prob(theta, s, a);
            for s_next in 0..2usize {
                let p1 = self.p_next1[s][a];
                let ps = if s_next == 1 { p1 } else { 1.0 - p1 };
                let mut path = prefix.clone();
                path.push(Transition {
                    state: vec![s as f64],
                    action: vec![a as f64],
                    next_state: vec![s_next as f64],
                    r0: self.r0[s][a][s_next],
                    r1: self.r1[s][a][s_next],
                });
                self.extend(policy, theta, path, s_next, prob * pa * ps, remaining - 1, out);
            }
        }
    }

    /// Exact V_q(θ); V_0 carries the minus sign of the minimized objective.
    pub fn exact_value(&self, policy: &TabularPolicy, theta: &[f64], q: usize) -> f64 {
        let sign = if q == 0 { -1.0 } else { 1.0 };
        let gamma = self.spec.gamma;
        self.enumerate(policy, theta)
            .iter()
            .map(|(p, ep)| {
                let ret: f64 = ep
                    .transitions
                    .iter()
                    .enumerate()
                    .map(|(t, tr)| gamma.powi(t as i32) * if q == 0 { tr.r0 } else { tr.r1 })
                    .sum();
                p * sign * ret
            })
            .sum()
    }

    /// Central-difference gradient of the exact value.
    pub fn fd_gradient(&self, policy: &TabularPolicy, theta: &[f64], q: usize, step: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|j| {
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[j] += step;
                tm[j] -= step;
                (self.exact_value(policy, &tp, q) - self.exact_value(policy, &tm, q)) / (2.0 * step)
            })
            .collect()
    }
}

impl Environment for TabularMdp {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut EpisodeRng) -> Vec<f64> {
        vec![f64::from(u8::from(rng.random::<f64>() < self.initial_p1))]
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut EpisodeRng) -> Vec<f64> {
        let p1 = self.p_next1[Self::idx(state)][Self::idx(action)];
        vec![f64::from(u8::from(rng.random::<f64>() < p1))]
    }

    fn rewards(&self, state: &[f64], action: &[f64], next: &[f64]) -> (f64, f64) {
        let (s, a, n) = (Self::idx(state), Self::idx(action), Self::idx(next));
        (self.r0[s][a][n], self.r1[s][a][n])
    }
}

/// π(1|s) = sigmoid(θ_s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl TabularPolicy {
    pub fn prob(&self, theta: &[f64], s: usize, a: usize) -> f64 {
        let p1 = sigmoid(theta[s]);
        if a == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    fn check_action(action: &[f64]) -> Result<usize> {
        match action.first() {
            Some(&x) if x == 0.0 || x == 1.0 => Ok(x as usize),
            _ => Err(Error::OutsideActionBox { action: action.to_vec() }),
        }
    }
}

impl StochasticPolicy for TabularPolicy {
    fn param_dim(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn sample_action(&self, theta: &[f64], state: &[f64], rng: &mut EpisodeRng) -> Vec<f64> {
        let p1 = sigmoid(theta[TabularMdp::idx(state)]);
        vec![f64::from(u8::from(rng.random::<f64>() < p1))]
    }

    fn log_density(&self, theta: &[f64], state: &[f64], action: &[f64]) -> Result<f64> {
        let a = Self::check_action(action)?;
        Ok(self.prob(theta, TabularMdp::idx(state), a).ln())
    }

    fn score(&self, theta: &[f64], state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let a = Self::check_action(action)?;
        let s = TabularMdp::idx(state);
        let mut g = vec![0.0; 2];
        g[s] = a as f64 - sigmoid(theta[s]);
        Ok(g)
    }

    /// |a − σ(θ)| < 1 and the Hessian −σ(1−σ) is at most 1/4 in magnitude.
    fn constants(&self) -> PolicyConstants {
        PolicyConstants { lipschitz_l: 0.25, grad_bound: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn enumeration_probabilities_sum_to_one() {
        let mdp = TabularMdp::reference(2, 0.9);
        let eps = mdp.enumerate(&TabularPolicy, &[0.3, -0.7]);
        assert_eq!(eps.len(), 1 << 7);
        let total: f64 = eps.iter().map(|(p, _)| p).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
        for (_, ep) in &eps {
            ep.check_shape(2).unwrap();
        }
    }

    #[test]
    fn rewards_respect_bounds() {
        let mdp = TabularMdp::reference(1, 0.5);
        for s in 0..2 {
            for a in 0..2 {
                for n in 0..2 {
                    assert!(mdp.r0[s][a][n].abs() < mdp.spec.reward_bounds.0);
                    assert!(mdp.r1[s][a][n].abs() < mdp.spec.reward_bounds.1);
                }
            }
        }
    }

    #[test]
    fn score_matches_log_density_derivative() {
        let theta = [0.4, -1.1];
        for s in 0..2 {
            for a in 0..2 {
                let g = TabularPolicy.score(&theta, &[s as f64], &[a as f64]).unwrap();
                for j in 0..2 {
                    let mut tp = theta;
                    let mut tm = theta;
                    tp[j] += 1e-6;
                    tm[j] -= 1e-6;
                    let fd = (TabularPolicy.log_density(&tp, &[s as f64], &[a as f64]).unwrap()
                        - TabularPolicy.log_density(&tm, &[s as f64], &[a as f64]).unwrap())
                        / 2e-6;
                    assert_relative_eq!(fd, g[j], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn safety_value_changes_sign_over_parameters() {
        let mdp = TabularMdp::reference(2, 0.9);
        assert!(mdp.exact_value(&TabularPolicy, &[-3.0, -3.0], 1) < 0.0);
        assert!(mdp.exact_value(&TabularPolicy, &[3.0, 3.0], 1) > 0.0);
    }
}
