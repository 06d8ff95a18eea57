//! Constrained MDP abstraction, episode rollout and batch generation.
//!
//! Environments and policies are stateless: every call receives the state,
//! action and RNG it needs, so a single instance can be shared by all rollout
//! workers.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{episode_seed, seeded_rng, EpisodeRng};

/// Per-dimension closed interval bounds on actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Config(format!(
                "action box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Config(format!("degenerate action box {lo:?}..{hi:?}")));
        }
        Ok(ActionBox { lo, hi })
    }

    pub fn symmetric(halfwidth: f64, dim: usize) -> Self {
        ActionBox { lo: vec![-halfwidth; dim], hi: vec![halfwidth; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self, k: usize) -> f64 {
        0.5 * (self.lo[k] + self.hi[k])
    }

    pub fn halfwidth(&self, k: usize) -> f64 {
        0.5 * (self.hi[k] - self.lo[k])
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim()
            && a.iter().enumerate().all(|(k, &x)| x >= self.lo[k] && x <= self.hi[k])
    }
}

/// Static description of a CMDP instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmdpSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_box: ActionBox,
    /// Episodes hold `horizon + 1` transitions, t = 0..=horizon.
    pub horizon: usize,
    pub gamma: f64,
    /// Strict bounds |R0| < b0, |R1| < b1.
    pub reward_bounds: (f64, f64),
}

impl CmdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("discount must lie in (0,1), got {}", self.gamma)));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let (b0, b1) = self.reward_bounds;
        if !(b0 > 0.0 && b1 > 0.0) {
            return Err(Error::Config(format!("reward bounds must be positive, got ({b0}, {b1})")));
        }
        if self.action_box.dim() != self.action_dim {
            return Err(Error::Config(format!(
                "action box has {} dims, action_dim is {}",
                self.action_box.dim(),
                self.action_dim
            )));
        }
        Ok(())
    }

    pub fn episode_len(&self) -> usize {
        self.horizon + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub r0: f64,
    pub r1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub seed: u64,
    pub index: usize,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks chaining `next_state[t] == state[t+1]` and the length.
    pub fn check_shape(&self, horizon: usize) -> Result<()> {
        if self.transitions.len() != horizon + 1 {
            return Err(Error::Argument(format!(
                "episode {} has {} transitions, expected {}",
                self.index,
                self.transitions.len(),
                horizon + 1
            )));
        }
        for w in self.transitions.windows(2) {
            if w[0].next_state != w[1].state {
                return Err(Error::Argument(format!("episode {} is not chained", self.index)));
            }
        }
        Ok(())
    }
}

/// Dynamics, rewards and initial-state distribution of a CMDP.
pub trait Environment: Sync {
    fn spec(&self) -> &CmdpSpec;

    /// Draws s₀ ~ η.
    fn initial_state(&self, rng: &mut EpisodeRng) -> Vec<f64>;

    fn step(&self, state: &[f64], action: &[f64], rng: &mut EpisodeRng) -> Vec<f64>;

    /// (R0, R1) for the transition (s, a, s′).
    fn rewards(&self, state: &[f64], action: &[f64], next_state: &[f64]) -> (f64, f64);
}

/// Certified regularity constants of the policy family:
/// `lipschitz_l` bounds the Lipschitz constant of θ ↦ ∇ log π_θ(a|s) and
/// `grad_bound` bounds every |∂ log π_θ(a|s) / ∂θ_i|.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConstants {
    pub lipschitz_l: f64,
    pub grad_bound: f64,
}

/// A differentiable stochastic policy family π_θ(a|s).
pub trait StochasticPolicy: Sync {
    fn param_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    fn sample_action(&self, theta: &[f64], state: &[f64], rng: &mut EpisodeRng) -> Vec<f64>;

    fn log_density(&self, theta: &[f64], state: &[f64], action: &[f64]) -> Result<f64>;

    /// ∇_θ log π_θ(a|s).
    fn score(&self, theta: &[f64], state: &[f64], action: &[f64]) -> Result<Vec<f64>>;

    fn constants(&self) -> PolicyConstants;
}

fn check_compatible<E, P>(env: &E, policy: &P, theta: &[f64]) -> Result<()>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let spec = env.spec();
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(Error::Config(format!(
            "policy maps {}-dim states to {}-dim actions; environment has {} and {}",
            policy.state_dim(),
            policy.action_dim(),
            spec.state_dim,
            spec.action_dim
        )));
    }
    if theta.len() != policy.param_dim() {
        return Err(Error::Config(format!(
            "parameter vector has length {}, policy expects {}",
            theta.len(),
            policy.param_dim()
        )));
    }
    Ok(())
}

fn check_rewards(spec: &CmdpSpec, r0: f64, r1: f64) -> Result<()> {
    let (b0, b1) = spec.reward_bounds;
    if r0.abs() < b0 && r1.abs() < b1 {
        return Ok(());
    }
    let msg = format!("rewards ({r0}, {r1}) violate bounds ({b0}, {b1})");
    if cfg!(debug_assertions) {
        Err(Error::EnvironmentContract(msg))
    } else {
        log::warn!("{msg}");
        Ok(())
    }
}

/// Generates one episode of `horizon + 1` transitions from the given seed.
pub fn rollout<E, P>(env: &E, policy: &P, theta: &[f64], seed: u64, index: usize) -> Result<Episode>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    check_compatible(env, policy, theta)?;
    let spec = env.spec();
    let mut rng = seeded_rng(seed);
    let mut state = env.initial_state(&mut rng);
    if state.len() != spec.state_dim {
        return Err(Error::EnvironmentContract(format!(
            "initial state has dimension {}, expected {}",
            state.len(),
            spec.state_dim
        )));
    }
    let mut transitions = Vec::with_capacity(spec.episode_len());
    for _ in 0..spec.episode_len() {
        let action = policy.sample_action(theta, &state, &mut rng);
        let next_state = env.step(&state, &action, &mut rng);
        let (r0, r1) = env.rewards(&state, &action, &next_state);
        check_rewards(spec, r0, r1)?;
        transitions.push(Transition { state, action, next_state: next_state.clone(), r0, r1 });
        state = next_state;
    }
    Ok(Episode { transitions, seed, index })
}

/// Episodes `indices` of iteration `iteration`, ordered by index.
///
/// Episode n always uses seed `episode_seed(master_seed, iteration, n)`, so a
/// range can be extended later without changing earlier episodes.
pub fn rollout_range<E, P>(
    env: &E,
    policy: &P,
    theta: &[f64],
    master_seed: u64,
    iteration: u64,
    indices: std::ops::Range<usize>,
) -> Result<Vec<Episode>>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    check_compatible(env, policy, theta)?;
    indices
        .into_par_iter()
        .map(|n| {
            rollout(env, policy, theta, episode_seed(master_seed, iteration, n as u64), n)
                .map_err(|e| Error::Episode { index: n, source: Box::new(e) })
        })
        .collect()
}

pub fn rollout_batch<E, P>(
    env: &E,
    policy: &P,
    theta: &[f64],
    master_seed: u64,
    iteration: u64,
    n: usize,
) -> Result<Vec<Episode>>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    if n == 0 {
        return Err(Error::Argument("episode count must be at least 1".into()));
    }
    rollout_range(env, policy, theta, master_seed, iteration, 0..n)
}

/// Writes one JSON object per line (see `docs/formats.md`).
pub fn write_episodes_jsonl<W: Write>(mut w: W, episodes: &[Episode]) -> Result<()> {
    for ep in episodes {
        serde_json::to_writer(&mut w, ep)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episodes_jsonl<R: BufRead>(r: R) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Random walk on the line with zero rewards.
    struct ZeroEnv(CmdpSpec);

    impl Environment for ZeroEnv {
        fn spec(&self) -> &CmdpSpec {
            &self.0
        }
        fn initial_state(&self, rng: &mut EpisodeRng) -> Vec<f64> {
            vec![rng.random::<f64>()]
        }
        fn step(&self, s: &[f64], a: &[f64], _rng: &mut EpisodeRng) -> Vec<f64> {
            vec![s[0] + a[0]]
        }
        fn rewards(&self, _: &[f64], _: &[f64], _: &[f64]) -> (f64, f64) {
            (0.0, 0.0)
        }
    }

    struct UniformPolicy;

    impl StochasticPolicy for UniformPolicy {
        fn param_dim(&self) -> usize {
            1
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn sample_action(&self, _: &[f64], _: &[f64], rng: &mut EpisodeRng) -> Vec<f64> {
            vec![rng.random::<f64>() - 0.5]
        }
        fn log_density(&self, _: &[f64], _: &[f64], _: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
        fn score(&self, _: &[f64], _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0])
        }
        fn constants(&self) -> PolicyConstants {
            PolicyConstants { lipschitz_l: 1.0, grad_bound: 1.0 }
        }
    }

    fn zero_env(horizon: usize) -> ZeroEnv {
        ZeroEnv(CmdpSpec {
            state_dim: 1,
            action_dim: 1,
            action_box: ActionBox::symmetric(0.5, 1),
            horizon,
            gamma: 0.9,
            reward_bounds: (1.0, 1.0),
        })
    }

    #[test]
    fn zero_reward_episode() {
        let ep = rollout(&zero_env(4), &UniformPolicy, &[0.0], 7, 0).unwrap();
        assert_eq!(ep.len(), 5);
        assert!(ep.transitions.iter().all(|t| t.r0 == 0.0 && t.r1 == 0.0));
        ep.check_shape(4).unwrap();
    }

    #[test]
    fn rollout_is_deterministic() {
        let env = zero_env(10);
        let a = rollout(&env, &UniformPolicy, &[0.0], 99, 3).unwrap();
        let b = rollout(&env, &UniformPolicy, &[0.0], 99, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_of_one_matches_single_rollout() {
        let env = zero_env(3);
        let batch = rollout_batch(&env, &UniformPolicy, &[0.0], 5, 2, 1).unwrap();
        let single = rollout(&env, &UniformPolicy, &[0.0], episode_seed(5, 2, 0), 0).unwrap();
        assert_eq!(batch, vec![single]);
    }

    #[test]
    fn batch_independent_of_worker_count() {
        let env = zero_env(6);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| rollout_batch(&env, &UniformPolicy, &[0.0], 11, 4, 37).unwrap())
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn range_extension_keeps_prefix() {
        let env = zero_env(3);
        let all = rollout_batch(&env, &UniformPolicy, &[0.0], 1, 1, 10).unwrap();
        let head = rollout_range(&env, &UniformPolicy, &[0.0], 1, 1, 0..4).unwrap();
        let tail = rollout_range(&env, &UniformPolicy, &[0.0], 1, 1, 4..10).unwrap();
        assert_eq!(&all[..4], &head[..]);
        assert_eq!(&all[4..], &tail[..]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut env = zero_env(2);
        env.0.state_dim = 2;
        assert!(matches!(rollout(&env, &UniformPolicy, &[0.0], 0, 0), Err(Error::Config(_))));
        let env = zero_env(2);
        assert!(matches!(rollout(&env, &UniformPolicy, &[0.0, 1.0], 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn spec_validation() {
        let mut spec = zero_env(2).0;
        spec.validate().unwrap();
        spec.gamma = 1.0;
        assert!(spec.validate().is_err());
        spec.gamma = 0.5;
        spec.horizon = 0;
        assert!(spec.validate().is_err());
        spec.horizon = 1;
        spec.reward_bounds = (0.0, 1.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let env = zero_env(3);
        let eps = rollout_batch(&env, &UniformPolicy, &[0.0], 3, 0, 4).unwrap();
        let mut buf = Vec::new();
        write_episodes_jsonl(&mut buf, &eps).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 4);
        let back = read_episodes_jsonl(&buf[..]).unwrap();
        assert_eq!(back, eps);
    }
}
