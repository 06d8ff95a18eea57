//! Run configuration, read from TOML. Every field has a default so a file
//! only needs the keys it changes; `docs/formats.md` lists the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{CpoConfig, PrimalDualState};
use crate::error::{Error, Result};
use crate::nav_envs::{Dynamics, NavRewardConfig, ObstacleSet, RepulsionConfig, StartRegion};
use crate::policy_rbf::RbfDistance;
use crate::theory_bounds::AdaptiveConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    #[default]
    RlSgf,
    PrimalDual,
    Cpo,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::RlSgf => "rl-sgf",
            Algo::PrimalDual => "primal-dual",
            Algo::Cpo => "cpo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rl-sgf" => Ok(Algo::RlSgf),
            "primal-dual" => Ok(Algo::PrimalDual),
            "cpo" => Ok(Algo::Cpo),
            _ => Err(Error::Config(format!("unknown algorithm '{s}' (rl-sgf, primal-dual, cpo)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    #[default]
    SingleIntegrator,
    DiffDrive,
    TabularTest,
}

impl EnvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::SingleIntegrator => "single-integrator",
            EnvKind::DiffDrive => "diff-drive",
            EnvKind::TabularTest => "tabular-test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single-integrator" => Ok(EnvKind::SingleIntegrator),
            "diff-drive" => Ok(EnvKind::DiffDrive),
            "tabular-test" => Ok(EnvKind::TabularTest),
            _ => Err(Error::Config(format!(
                "unknown environment '{s}' (single-integrator, diff-drive, tabular-test)"
            ))),
        }
    }

    pub fn dynamics(&self) -> Option<Dynamics> {
        match self {
            EnvKind::SingleIntegrator => Some(Dynamics::SingleIntegrator),
            EnvKind::DiffDrive => Some(Dynamics::DiffDrive),
            EnvKind::TabularTest => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Repulsive field away from obstacles (and walls, if enabled).
    #[default]
    Repulsive,
    /// i.i.d. normal entries with standard deviation `init_scale`.
    Random,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Cells per state coordinate; centers sit at cell midpoints.
    pub divisions: Vec<usize>,
    pub rbf_width: f64,
    pub cov_scale: f64,
    pub distance: RbfDistance,
    pub normalizer_gradient: bool,
    pub init: InitKind,
    pub init_scale: f64,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            divisions: vec![20, 20],
            rbf_width: 0.25,
            cov_scale: 0.5,
            distance: RbfDistance::Position,
            normalizer_gradient: true,
            init: InitKind::Repulsive,
            init_scale: 1.0,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub eta_theta: f64,
    pub eta_lambda: f64,
    pub lambda0: f64,
    pub cpo_delta: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { eta_theta: 0.001, eta_lambda: 0.001, lambda0: 0.0, cpo_delta: 0.15 }
    }
}

impl BaselineConfig {
    pub fn primal_dual_state(&self) -> Result<PrimalDualState> {
        PrimalDualState::new(self.lambda0, self.eta_theta, self.eta_lambda)
    }

    pub fn cpo(&self) -> CpoConfig {
        CpoConfig { trust_radius: self.cpo_delta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSettings {
    pub enabled: bool,
    pub n_max: usize,
    pub growth_factor: f64,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        AdaptiveSettings { enabled: false, n_max: 1 << 14, growth_factor: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algo: Algo,
    pub env: EnvKind,
    pub seed: u64,
    /// K.
    pub iterations: usize,
    /// N, or the starting N when the adaptive loop is on.
    pub episodes: usize,
    pub alpha: f64,
    pub h: f64,
    pub horizon: usize,
    pub gamma: f64,
    /// Confidence parameter of the per-step certificate.
    pub delta: f64,
    pub strict_safety: bool,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Record wall-clock milliseconds; off by default so metrics files are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
    pub adaptive: AdaptiveSettings,
    pub policy: PolicyConfig,
    pub repulsion: RepulsionConfig,
    pub rewards: NavRewardConfig,
    pub obstacles: ObstacleSet,
    pub start: StartRegion,
    pub baselines: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algo: Algo::RlSgf,
            env: EnvKind::SingleIntegrator,
            seed: 0,
            iterations: 1500,
            episodes: 100,
            alpha: 1.0,
            h: 0.5,
            horizon: 50,
            gamma: 0.98,
            delta: 0.1,
            strict_safety: false,
            checkpoint_every: 100,
            record_wall_time: false,
            adaptive: AdaptiveSettings::default(),
            policy: PolicyConfig::default(),
            repulsion: RepulsionConfig::default(),
            rewards: NavRewardConfig::default(),
            obstacles: ObstacleSet::default(),
            start: StartRegion::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.episodes < 1 {
            return Err(Error::Config("need at least one iteration and one episode".into()));
        }
        if !(self.alpha > 0.0) || !(self.h > 0.0) {
            return Err(Error::Config("α and h must be positive".into()));
        }
        if self.algo == Algo::RlSgf && self.alpha * self.h >= 1.0 {
            return Err(Error::Config(format!("α·h = {} must be below 1", self.alpha * self.h)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("δ must lie in (0, 1)".into()));
        }
        if self.adaptive.enabled && (self.adaptive.n_max < self.episodes || !(self.adaptive.growth_factor > 1.0)) {
            return Err(Error::Config("adaptive loop needs n_max ≥ episodes and growth factor > 1".into()));
        }
        if let Some(dyn_) = self.env.dynamics() {
            if self.policy.divisions.len() != dyn_.state_dim() {
                return Err(Error::Config(format!(
                    "policy.divisions has {} entries; {} needs {}",
                    self.policy.divisions.len(),
                    self.env.as_str(),
                    dyn_.state_dim()
                )));
            }
        }
        match self.algo {
            Algo::PrimalDual => {
                self.baselines.primal_dual_state()?;
            }
            Algo::Cpo if !(self.baselines.cpo_delta > 0.0) => {
                return Err(Error::Config("cpo_delta must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn adaptive_config(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            initial_n: self.episodes,
            n_max: self.adaptive.n_max,
            growth_factor: self.adaptive.growth_factor,
            delta: self.delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("algo = \"cpo\"\niterations = 7\n[baselines]\ncpo_delta = 0.2\n").unwrap();
        assert_eq!(cfg.algo, Algo::Cpo);
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.baselines.cpo_delta, 0.2);
        assert_eq!(cfg.episodes, 100);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("iterations = 0").is_err());
        assert!(RunConfig::from_toml("alpha = 4.0\nh = 0.5").is_err());
        assert!(RunConfig::from_toml("typo_key = 1").is_err());
        assert!(RunConfig::from_toml("env = \"diff-drive\"").is_err());
    }
}
