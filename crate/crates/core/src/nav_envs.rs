//! Planar navigation with obstacles: single-integrator and
//! differential-drive dynamics, distance-shaped safety reward, and the
//! repulsive initial policy.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cmdp::{ActionBox, CmdpSpec, Environment};
use crate::error::{Error, Result};
use crate::policy_rbf::{PolicyParams, RbfPolicy};
use crate::rng::{seeded_rng, EpisodeRng};

/// Slack added to the |R0| ≤ 10 bound so the strict inequality holds.
pub const R0_BOUND_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Circle { center: [f64; 2], radius: f64 },
    Rect { min: [f64; 2], max: [f64; 2] },
}

impl Shape {
    /// Distance to the closed shape; zero inside or on it.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Shape::Circle { center, radius } => {
                ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).max(0.0)
            }
            Shape::Rect { min, max } => {
                let dx = (min[0] - p[0]).max(0.0).max(p[0] - max[0]);
                let dy = (min[1] - p[1]).max(0.0).max(p[1] - max[1]);
                dx.hypot(dy)
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Circle { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= *radius,
            Shape::Rect { min, max } => p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1],
        }
    }

    /// Circle center or rectangle centroid.
    pub fn center(&self) -> [f64; 2] {
        match self {
            Shape::Circle { center, .. } => *center,
            Shape::Rect { min, max } => [0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1])],
        }
    }

    fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Shape::Circle { center, radius } => {
                ([center[0] - radius, center[1] - radius], [center[0] + radius, center[1] + radius])
            }
            Shape::Rect { min, max } => (*min, *max),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Circle { radius, center } => *radius > 0.0 && center.iter().all(|x| x.is_finite()),
            Shape::Rect { min, max } => min[0] < max[0] && min[1] < max[1],
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate obstacle {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleSet {
    pub obstacles: Vec<Shape>,
    pub workspace_lo: [f64; 2],
    pub workspace_hi: [f64; 2],
}

fn default_ws_lo() -> [f64; 2] {
    [0.0, 0.0]
}

fn default_ws_hi() -> [f64; 2] {
    [10.0, 10.0]
}

impl Default for ObstacleSet {
    fn default() -> Self {
        ObstacleSet {
            obstacles: vec![
                Shape::Circle { center: [3.0, 3.0], radius: 1.0 },
                Shape::Circle { center: [7.0, 5.0], radius: 1.0 },
                Shape::Circle { center: [5.0, 8.0], radius: 0.8 },
                Shape::Rect { min: [1.5, 6.0], max: [2.5, 8.0] },
                Shape::Rect { min: [6.0, 1.5], max: [8.5, 2.5] },
            ],
            workspace_lo: default_ws_lo(),
            workspace_hi: default_ws_hi(),
        }
    }
}

impl ObstacleSet {
    /// Distance from `p` to the nearest obstacle; `+∞` with no obstacles.
    pub fn d_min(&self, p: [f64; 2]) -> f64 {
        self.obstacles.iter().map(|o| o.distance(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn in_workspace(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] >= self.workspace_lo[k] && p[k] <= self.workspace_hi[k])
    }

    /// Membership in the safe set: inside the (closed) workspace and outside
    /// every (closed) obstacle.
    pub fn in_safe_set(&self, p: [f64; 2]) -> bool {
        self.in_workspace(p) && !self.obstacles.iter().any(|o| o.contains(p))
    }

    /// Checks shapes, containment in the workspace, and that the safe set is
    /// nonempty and connected on a 200×200 cell grid.
    pub fn validate(&self) -> Result<()> {
        if !(0..2).all(|k| self.workspace_lo[k] < self.workspace_hi[k]) {
            return Err(Error::Config("empty workspace".into()));
        }
        for o in &self.obstacles {
            o.validate()?;
            let (lo, hi) = o.bounding_box();
            if !self.in_workspace(lo) || !self.in_workspace(hi) {
                return Err(Error::Config(format!("obstacle {o:?} leaves the workspace")));
            }
        }
        let n = 200;
        let cell = |i: usize, j: usize| {
            [
                self.workspace_lo[0] + (i as f64 + 0.5) * (self.workspace_hi[0] - self.workspace_lo[0]) / n as f64,
                self.workspace_lo[1] + (j as f64 + 0.5) * (self.workspace_hi[1] - self.workspace_lo[1]) / n as f64,
            ]
        };
        let free: Vec<bool> = (0..n * n).map(|k| self.in_safe_set(cell(k / n, k % n))).collect();
        let Some(start) = free.iter().position(|&f| f) else {
            return Err(Error::Config("safe set is empty".into()));
        };
        let mut seen = vec![false; n * n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            let (i, j) = (k / n, k % n);
            let mut push = |ii: usize, jj: usize| {
                let kk = ii * n + jj;
                if free[kk] && !seen[kk] {
                    seen[kk] = true;
                    stack.push(kk);
                }
            };
            if i > 0 {
                push(i - 1, j);
            }
            if i + 1 < n {
                push(i + 1, j);
            }
            if j > 0 {
                push(i, j - 1);
            }
            if j + 1 < n {
                push(i, j + 1);
            }
        }
        if free.iter().zip(&seen).any(|(&f, &s)| f && !s) {
            return Err(Error::Config("safe set is not connected".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavRewardConfig {
    pub target: [f64; 2],
    pub beta: f64,
    pub reward_floor: f64,
}

impl Default for NavRewardConfig {
    fn default() -> Self {
        NavRewardConfig { target: [8.0, 8.0], beta: 0.01, reward_floor: -10.0 }
    }
}

impl NavRewardConfig {
    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("β = {} must lie in (0, 1)", self.beta)));
        }
        if !(self.reward_floor < 0.0) {
            return Err(Error::Config("reward floor must be negative".into()));
        }
        Ok(())
    }
}

pub fn reward_r0(p: [f64; 2], cfg: &NavRewardConfig) -> f64 {
    (-(p[0] - cfg.target[0]).hypot(p[1] - cfg.target[1])).max(cfg.reward_floor)
}

pub fn reward_r1(p: [f64; 2], cfg: &NavRewardConfig, obs: &ObstacleSet) -> f64 {
    if obs.in_safe_set(p) {
        let d = obs.d_min(p);
        // exp_m1 keeps the sign exact for tiny d.
        cfg.beta * (-d).exp_m1()
    } else {
        1.0 - cfg.beta
    }
}

pub fn step_single_integrator(s: [f64; 2], a: [f64; 2]) -> [f64; 2] {
    [s[0] + 0.1 * a[0], s[1] + 0.1 * a[1]]
}

/// Maps an angle to [−π, π).
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

/// State (x, y, heading), action (v, ω).
pub fn step_diff_drive(s: [f64; 3], a: [f64; 2]) -> [f64; 3] {
    [
        s[0] + 0.2 * a[0] * s[2].cos(),
        s[1] + 0.2 * a[0] * s[2].sin(),
        wrap_angle(s[2] + 0.2 * a[1]),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    SingleIntegrator,
    DiffDrive,
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            Dynamics::SingleIntegrator => 2,
            Dynamics::DiffDrive => 3,
        }
    }

    pub fn action_box(&self) -> ActionBox {
        match self {
            Dynamics::SingleIntegrator => ActionBox::symmetric(5.0, 2),
            Dynamics::DiffDrive => {
                let w = 20.0 * PI / 180.0;
                ActionBox::new(vec![0.0, -w], vec![5.0, w]).expect("static box")
            }
        }
    }
}

/// Initial-state distribution: pick an anchor uniformly, then a point
/// uniformly in the disk of `radius` around it, redrawn until it is in C.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartRegion {
    pub anchors: Vec<[f64; 2]>,
    pub radius: f64,
}

impl Default for StartRegion {
    fn default() -> Self {
        StartRegion { anchors: vec![[1.0, 1.0], [5.0, 5.0], [9.0, 1.0], [1.0, 9.0]], radius: 0.25 }
    }
}

const START_REDRAWS: usize = 64;

impl StartRegion {
    fn validate(&self, obs: &ObstacleSet) -> Result<()> {
        if self.anchors.is_empty() || !(self.radius >= 0.0) {
            return Err(Error::Config("start region needs anchors and a nonnegative radius".into()));
        }
        if let Some(a) = self.anchors.iter().find(|a| !obs.in_safe_set(**a)) {
            return Err(Error::Config(format!("start anchor {a:?} is not in the safe set")));
        }
        Ok(())
    }

    pub fn sample(&self, obs: &ObstacleSet, rng: &mut EpisodeRng) -> [f64; 2] {
        let anchor = self.anchors[rng.random_range(0..self.anchors.len())];
        for _ in 0..START_REDRAWS {
            let r = self.radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            let p = [anchor[0] + r * phi.cos(), anchor[1] + r * phi.sin()];
            if obs.in_safe_set(p) {
                return p;
            }
        }
        anchor
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavEnv {
    pub dynamics: Dynamics,
    pub obstacles: ObstacleSet,
    pub rewards: NavRewardConfig,
    pub start: StartRegion,
    spec: CmdpSpec,
}

impl NavEnv {
    pub fn new(
        dynamics: Dynamics,
        obstacles: ObstacleSet,
        rewards: NavRewardConfig,
        start: StartRegion,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self> {
        obstacles.validate()?;
        rewards.validate()?;
        start.validate(&obstacles)?;
        let spec = CmdpSpec {
            state_dim: dynamics.state_dim(),
            action_dim: 2,
            action_box: dynamics.action_box(),
            horizon,
            gamma,
            reward_bounds: (-rewards.reward_floor + R0_BOUND_MARGIN, 1.0),
        };
        spec.validate()?;
        Ok(NavEnv { dynamics, obstacles, rewards, start, spec })
    }

    /// Default layout with T = 50 and γ = 0.98.
    pub fn default_for(dynamics: Dynamics) -> Self {
        NavEnv::new(
            dynamics,
            ObstacleSet::default(),
            NavRewardConfig::default(),
            StartRegion::default(),
            50,
            0.98,
        )
        .expect("default layout is valid")
    }
}

impl Environment for NavEnv {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn initial_state(&self, rng: &mut EpisodeRng) -> Vec<f64> {
        let p = self.start.sample(&self.obstacles, rng);
        match self.dynamics {
            Dynamics::SingleIntegrator => p.to_vec(),
            Dynamics::DiffDrive => vec![p[0], p[1], wrap_angle(-PI + 2.0 * PI * rng.random::<f64>())],
        }
    }

    fn step(&self, state: &[f64], action: &[f64], _rng: &mut EpisodeRng) -> Vec<f64> {
        match self.dynamics {
            Dynamics::SingleIntegrator => step_single_integrator([state[0], state[1]], [action[0], action[1]]).to_vec(),
            Dynamics::DiffDrive => {
                step_diff_drive([state[0], state[1], state[2]], [action[0], action[1]]).to_vec()
            }
        }
    }

    /// Both rewards depend on the current position only.
    fn rewards(&self, state: &[f64], _action: &[f64], _next: &[f64]) -> (f64, f64) {
        let p = [state[0], state[1]];
        (reward_r0(p, &self.rewards), reward_r1(p, &self.rewards, &self.obstacles))
    }
}

/// Settings of the repulsive initial field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepulsionConfig {
    pub rho: f64,
    pub f_max: f64,
    /// Also repel from the four workspace walls (inward normal, same
    /// profile). Leaving the workspace is as unsafe as entering an obstacle.
    pub walls: bool,
}

impl Default for RepulsionConfig {
    fn default() -> Self {
        RepulsionConfig { rho: 1.5, f_max: 1.0, walls: true }
    }
}

/// θ₁ with (θ₁)_i = Σ_j f_max(1 − d(c_i, O_j)/ρ) v_j^i over obstacles within
/// ρ of center c_i, v_j^i the unit vector from the obstacle center to c_i.
///
/// Only the position part of each center is used; the policy must have a
/// 2-dimensional action (one parameter pair per center).
pub fn safe_initial_params(obs: &ObstacleSet, policy: &RbfPolicy, rep: &RepulsionConfig) -> Result<PolicyParams> {
    if !(rep.rho > 0.0) || !(rep.f_max > 0.0) {
        return Err(Error::Config("ρ and f_max must be positive".into()));
    }
    if policy.action_dim() != 2 {
        return Err(Error::Config("repulsive initialization needs a 2-dimensional action".into()));
    }
    let mut theta = vec![0.0; policy.dim()];
    for (i, c) in policy.centers.iter().enumerate() {
        let c = [c[0], c[1]];
        let mut q = [0.0, 0.0];
        for o in &obs.obstacles {
            let d = o.distance(c);
            if d >= rep.rho {
                continue;
            }
            let qc = o.center();
            let n = (c[0] - qc[0]).hypot(c[1] - qc[1]);
            if n == 0.0 {
                log::warn!("center {c:?} coincides with obstacle center; no repulsion term");
                continue;
            }
            let mag = rep.f_max * (1.0 - d / rep.rho);
            q[0] += mag * (c[0] - qc[0]) / n;
            q[1] += mag * (c[1] - qc[1]) / n;
        }
        if rep.walls {
            let walls = [
                (c[0] - obs.workspace_lo[0], [1.0, 0.0]),
                (obs.workspace_hi[0] - c[0], [-1.0, 0.0]),
                (c[1] - obs.workspace_lo[1], [0.0, 1.0]),
                (obs.workspace_hi[1] - c[1], [0.0, -1.0]),
            ];
            for (d, normal) in walls {
                let d = d.max(0.0);
                if d < rep.rho {
                    let mag = rep.f_max * (1.0 - d / rep.rho);
                    q[0] += mag * normal[0];
                    q[1] += mag * normal[1];
                }
            }
        }
        theta[2 * i] = q[0];
        theta[2 * i + 1] = q[1];
    }
    PolicyParams::new(policy.clone(), theta)
}

/// θ with i.i.d. N(0, scale²) entries from a fixed seed.
pub fn random_initial_params(policy: &RbfPolicy, scale: f64, seed: u64) -> Result<PolicyParams> {
    let mut rng = seeded_rng(seed);
    let theta = (0..policy.dim()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    PolicyParams::new(policy.clone(), theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_integrator_examples() {
        assert_eq!(step_single_integrator([0.0, 0.0], [0.0, 0.0]), [0.0, 0.0]);
        let s = step_single_integrator([1.0, 1.0], [5.0, 5.0]);
        assert_relative_eq!(s[0], 1.5);
        let s = step_single_integrator([9.8, 9.8], [5.0, 5.0]);
        assert_relative_eq!(s[0], 10.3);
        let cfg = NavRewardConfig::default();
        assert_relative_eq!(reward_r1(s, &cfg, &ObstacleSet::default()), 0.99);
    }

    #[test]
    fn diff_drive_examples() {
        let s = step_diff_drive([1.0, 2.0, 0.3], [0.0, 0.2]);
        assert_eq!(&s[..2], &[1.0, 2.0]);
        assert_relative_eq!(s[2], 0.34, epsilon = 1e-15);
        let s = step_diff_drive([1.0, 2.0, 0.0], [5.0, 0.0]);
        assert_relative_eq!(s[0], 2.0);
        assert_relative_eq!(s[1], 2.0);
        let s = step_diff_drive([0.0, 0.0, PI - 1e-3], [0.0, 0.3]);
        assert!(s[2] < -PI + 0.1 && s[2] >= -PI);
        assert_eq!(wrap_angle(PI), -PI);
    }

    #[test]
    fn d_min_examples() {
        let c = Shape::Circle { center: [5.0, 5.0], radius: 1.0 };
        assert_relative_eq!(c.distance([5.0, 8.0]), 2.0);
        assert_eq!(c.distance([6.0, 5.0]), 0.0);
        let r = Shape::Rect { min: [1.0, 1.0], max: [2.0, 3.0] };
        assert_eq!(r.distance([1.5, 2.0]), 0.0);
        assert_relative_eq!(r.distance([5.0, 7.0]), 5.0);
    }

    #[test]
    fn reward_examples_and_sign_structure() {
        let cfg = NavRewardConfig::default();
        let obs = ObstacleSet::default();
        assert_eq!(reward_r0([8.0, 8.0], &cfg), 0.0);
        assert_eq!(reward_r0([0.0, 0.0], &cfg), -10.0);
        assert!(reward_r1([5.0, 5.0], &cfg, &obs) < 0.0);
        // Closed obstacles: the boundary point is outside C.
        assert_relative_eq!(reward_r1([4.0, 3.0], &cfg, &obs), 0.99);
        assert_relative_eq!(reward_r1([3.0, 3.0], &cfg, &obs), 0.99);
        // Inclusive workspace boundary.
        assert!(reward_r1([0.0, 5.0], &cfg, &obs) < 0.0);
    }

    #[test]
    fn default_layout_is_valid() {
        let obs = ObstacleSet::default();
        assert_eq!(obs.obstacles.len(), 5);
        obs.validate().unwrap();
        let blocked = ObstacleSet {
            obstacles: vec![Shape::Rect { min: [0.0, 4.0], max: [10.0, 5.0] }],
            ..ObstacleSet::default()
        };
        assert!(blocked.validate().is_err());
    }

    #[test]
    fn starts_are_safe() {
        let env = NavEnv::default_for(Dynamics::DiffDrive);
        let mut rng = seeded_rng(3);
        for _ in 0..2000 {
            let s = env.initial_state(&mut rng);
            assert!(env.obstacles.in_safe_set([s[0], s[1]]));
            assert!((-PI..PI).contains(&s[2]));
        }
    }

    #[test]
    fn repulsion_examples() {
        let obs = ObstacleSet { obstacles: vec![Shape::Circle { center: [5.0, 5.0], radius: 1.0 }], ..ObstacleSet::default() };
        let rep = RepulsionConfig { rho: 1.5, f_max: 1.0, walls: false };
        let policy = RbfPolicy::new(2, vec![vec![5.0, 9.0], vec![6.0, 5.0]], 0.25, 0.5, ActionBox::symmetric(5.0, 2)).unwrap();
        let p = safe_initial_params(&obs, &policy, &rep).unwrap();
        assert_eq!(&p.theta[..2], &[0.0, 0.0]);
        assert_relative_eq!(p.theta[2], 1.0);
        assert_relative_eq!(p.theta[3], 0.0);
    }
}
