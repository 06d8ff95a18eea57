use std::path::Path;

use rlsgf::cmdp::{ActionBox, CmdpSpec, Environment};
use rlsgf::error::{Error, Result};
use rlsgf::harness::{read_metrics, resume, train, train_generic, Algo, EnvKind, InitKind, RunConfig, TrainOptions};
use rlsgf::rng::EpisodeRng;
use rlsgf::tabular::TabularPolicy;

fn tabular(algo: Algo, k: usize) -> RunConfig {
    let mut cfg = RunConfig {
        algo,
        env: EnvKind::TabularTest,
        seed: 3,
        iterations: k,
        episodes: 20,
        alpha: 1.0,
        h: 0.5,
        horizon: 4,
        gamma: 0.9,
        checkpoint_every: 2,
        ..RunConfig::default()
    };
    cfg.policy.init = InitKind::Random;
    cfg
}

fn opts(dir: &Path) -> TrainOptions {
    TrainOptions { out_dir: dir.to_path_buf(), workers: Some(1), stop_after: None }
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn resume_matches_uninterrupted_run() {
    for algo in [Algo::RlSgf, Algo::PrimalDual, Algo::Cpo] {
        let cfg = tabular(algo, 7);
        let straight = tempfile::tempdir().unwrap();
        train(&cfg, &opts(straight.path())).unwrap();

        let split = tempfile::tempdir().unwrap();
        let partial = train(&cfg, &TrainOptions { stop_after: Some(3), ..opts(split.path()) }).unwrap();
        assert_eq!(partial.iterations_completed, 3);
        assert_eq!(read_metrics(&split.path().join("metrics.csv")).unwrap().len(), 3);
        let done = resume(&opts(split.path())).unwrap();
        assert_eq!(done.iterations_completed, 7);

        for f in ["metrics.csv", "theta_final.json", "checkpoint.json"] {
            assert_eq!(read(straight.path(), f), read(split.path(), f), "{} differs for {}", f, algo.as_str());
        }
    }
}

#[test]
fn resume_discards_rows_past_the_checkpoint() {
    let cfg = tabular(Algo::RlSgf, 6);
    let straight = tempfile::tempdir().unwrap();
    train(&cfg, &opts(straight.path())).unwrap();

    // Crash after iteration 5 with the last checkpoint at 4.
    let split = tempfile::tempdir().unwrap();
    train(&cfg, &TrainOptions { stop_after: Some(5), ..opts(split.path()) }).unwrap();
    let straight4 = tempfile::tempdir().unwrap();
    train(&cfg, &TrainOptions { stop_after: Some(4), ..opts(straight4.path()) }).unwrap();
    std::fs::copy(straight4.path().join("checkpoint.json"), split.path().join("checkpoint.json")).unwrap();
    resume(&opts(split.path())).unwrap();
    assert_eq!(read(straight.path(), "metrics.csv"), read(split.path(), "metrics.csv"));
}

#[test]
fn metrics_columns_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    train(&tabular(Algo::PrimalDual, 4), &opts(dir.path())).unwrap();
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    let header = read(dir.path(), "metrics.csv").lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "iteration,v0_hat,v1_hat,step_norm,u_hat,branch,N_used,cert_required_N,cert_satisfied,lambda,wall_ms,seed"
    );
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.iteration, i + 1);
        assert_eq!(r.branch, "PD");
        assert!(r.lambda.unwrap() >= 0.0);
        assert!(r.u_hat.is_none() && r.cert_satisfied.is_none());
        assert_eq!(r.wall_ms, 0);
        assert_eq!(r.seed, 3);
    }

    let dir = tempfile::tempdir().unwrap();
    train(&tabular(Algo::Cpo, 4), &opts(dir.path())).unwrap();
    for r in read_metrics(&dir.path().join("metrics.csv")).unwrap() {
        assert!(r.branch.starts_with("CPO_"), "{}", r.branch);
        assert!(r.lambda.is_none());
    }

    let dir = tempfile::tempdir().unwrap();
    train(&tabular(Algo::RlSgf, 4), &opts(dir.path())).unwrap();
    for r in read_metrics(&dir.path().join("metrics.csv")).unwrap() {
        assert!(["A_ZERO", "A_POS_C_NONNEG", "A_POS_C_NEG", "RECOVERY"].contains(&r.branch.as_str()));
        assert!(r.u_hat.unwrap() >= 0.0);
        assert!(r.cert_satisfied.is_some() && r.cert_required_n.is_some());
        assert_eq!(r.n_used, 20);
    }
}

#[test]
fn tabular_rejects_repulsive_init() {
    let mut cfg = tabular(Algo::RlSgf, 2);
    cfg.policy.init = InitKind::Repulsive;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(train(&cfg, &opts(dir.path())), Err(Error::Config(_))));
}

/// Every reward is zero, so V̂0 = V̂1 = 0 and both gradients vanish.
struct ZeroEnv {
    spec: CmdpSpec,
}

impl ZeroEnv {
    fn new() -> Self {
        ZeroEnv {
            spec: CmdpSpec {
                state_dim: 1,
                action_dim: 1,
                action_box: ActionBox::new(vec![0.0], vec![1.0]).unwrap(),
                horizon: 3,
                gamma: 0.9,
                reward_bounds: (1.0, 1.0),
            },
        }
    }
}

impl Environment for ZeroEnv {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn initial_state(&self, _rng: &mut EpisodeRng) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&self, _state: &[f64], action: &[f64], _rng: &mut EpisodeRng) -> Vec<f64> {
        action.to_vec()
    }

    fn rewards(&self, _state: &[f64], _action: &[f64], _next_state: &[f64]) -> (f64, f64) {
        (0.0, 0.0)
    }
}

#[test]
fn zero_reward_environment_leaves_theta_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { iterations: 1, episodes: 5, ..tabular(Algo::RlSgf, 1) };
    let theta0 = vec![0.4, -1.3];
    let save = |theta: &[f64], path: &Path| -> Result<()> {
        std::fs::write(path, serde_json::to_string(theta).unwrap())?;
        Ok(())
    };
    let summary = train_generic(&ZeroEnv::new(), &TabularPolicy, theta0.clone(), &cfg, &opts(dir.path()), None, &save)
        .unwrap();
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.v0_hat, r.v1_hat, r.step_norm), (0.0, 0.0, 0.0));
    assert_eq!(r.branch, "A_ZERO");
    let line = read(dir.path(), "metrics.csv").lines().nth(1).unwrap().to_string();
    assert!(line.starts_with("1,0.0,0.0,0.0,"), "{line}");
    let theta: Vec<f64> = serde_json::from_str(&read(dir.path(), "theta_final.json")).unwrap();
    assert_eq!(theta, theta0);
    assert_eq!(summary.stats.percent_safe, 100.0);
}

#[test]
fn strict_safety_aborts_but_keeps_partial_results() {
    let mut cfg = RunConfig {
        env: EnvKind::SingleIntegrator,
        iterations: 5,
        episodes: 2,
        horizon: 5,
        strict_safety: true,
        ..RunConfig::default()
    };
    cfg.policy.divisions = vec![3, 3];
    let dir = tempfile::tempdir().unwrap();
    let err = train(&cfg, &opts(dir.path())).unwrap_err();
    assert!(matches!(err, Error::CertificateUnattainable(_)), "{err}");
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].cert_satisfied, Some(false));
    assert!(dir.path().join("theta_final.json").exists());
    assert!(read(dir.path(), "checkpoint.json").contains("\"iteration\":0"));
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn worker_count_does_not_change_output() {
    let cfg = tabular(Algo::RlSgf, 3);
    let mut outs = Vec::new();
    for w in [Some(1), Some(3)] {
        let dir = tempfile::tempdir().unwrap();
        train(&cfg, &TrainOptions { workers: w, ..opts(dir.path()) }).unwrap();
        outs.push((read(dir.path(), "metrics.csv"), read(dir.path(), "theta_final.json")));
    }
    assert_eq!(outs[0], outs[1]);
}
