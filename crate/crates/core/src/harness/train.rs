//! The training loop: sample N episodes at θ_i, estimate, step, log.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Algo, EnvKind, InitKind, RunConfig};
use super::metrics::{MetricsRow, MetricsWriter, METRICS_SCHEMA_VERSION};
use super::summary::{summarize_rows, RunStats};
use crate::baselines::{cpo_step, primal_dual_step, CpoCase, PrimalDualState};
use crate::cmdp::{rollout_batch, Environment, StochasticPolicy};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimateBundle, ZeroBaseline};
use crate::nav_envs::{random_initial_params, safe_initial_params, NavEnv};
use crate::policy_rbf::{PolicyParams, RbfPolicy};
use crate::sgf_update::{closed_form_update, recovery_step, UpdateInputs, UpdateResult, DEFAULT_TOL};
use crate::tabular::{TabularMdp, TabularPolicy};
use crate::theory_bounds::{
    adaptive_episode_count, certify, AdaptiveProblem, CertificateInputs, LipschitzBundle, SafetyCertificate,
};

/// Environment variable overriding the rollout worker count.
pub const WORKERS_ENV: &str = "RLSGF_WORKERS";

pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}='{v}' is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    /// Stop after this iteration even if K is larger (used to test resume).
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Last completed iteration; the next one is `iteration + 1`.
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunInfo {
    pub metrics_schema: u32,
    pub algo: String,
    pub env: String,
    pub seed: u64,
    pub param_dim: usize,
    pub l0: f64,
    pub l1: f64,
    pub step_size_limit: f64,
    pub version: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub final_theta_path: PathBuf,
    pub iterations_completed: usize,
    pub stats: RunStats,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const THETA_FILE: &str = "theta_final.json";
pub const INFO_FILE: &str = "run_info.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(f),
        None => f(),
    }
}

/// Policy on the grid described by the config, over the workspace (and
/// [−π, π] for the heading).
pub fn build_rbf_policy(cfg: &RunConfig, env: &NavEnv) -> Result<RbfPolicy> {
    let ws = &env.obstacles;
    let mut lo = vec![ws.workspace_lo[0], ws.workspace_lo[1]];
    let mut hi = vec![ws.workspace_hi[0], ws.workspace_hi[1]];
    if env.spec().state_dim == 3 {
        lo.push(-PI);
        hi.push(PI);
    }
    let pc = &cfg.policy;
    let mut p = RbfPolicy::on_grid(
        &lo,
        &hi,
        &pc.divisions,
        pc.rbf_width,
        pc.cov_scale,
        env.spec().action_box.clone(),
        pc.distance,
    )?;
    p.normalizer_gradient = pc.normalizer_gradient;
    Ok(p)
}

pub fn build_nav_env(cfg: &RunConfig) -> Result<NavEnv> {
    let dynamics = cfg
        .env
        .dynamics()
        .ok_or_else(|| Error::Config(format!("{} is not a navigation environment", cfg.env.as_str())))?;
    NavEnv::new(
        dynamics,
        cfg.obstacles.clone(),
        cfg.rewards.clone(),
        cfg.start.clone(),
        cfg.horizon,
        cfg.gamma,
    )
}

pub fn initial_params(cfg: &RunConfig, env: &NavEnv, policy: &RbfPolicy) -> Result<PolicyParams> {
    match cfg.policy.init {
        InitKind::Repulsive => safe_initial_params(&env.obstacles, policy, &cfg.repulsion),
        InitKind::Random => random_initial_params(policy, cfg.policy.init_scale, cfg.policy.init_seed),
        InitKind::Zeros => Ok(PolicyParams::zeros(policy.clone())),
    }
}

/// Fresh run of the configured environment and algorithm.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    write_atomic(&opts.out_dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    dispatch(cfg, opts, None)
}

/// Continues the run in `opts.out_dir` from its last checkpoint.
pub fn resume(opts: &TrainOptions) -> Result<RunSummary> {
    let cfg = RunConfig::load(&opts.out_dir.join(CONFIG_FILE))?;
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(opts.out_dir.join(CHECKPOINT_FILE))?)?;
    dispatch(&cfg, opts, Some(ckpt))
}

fn dispatch(cfg: &RunConfig, opts: &TrainOptions, ckpt: Option<Checkpoint>) -> Result<RunSummary> {
    with_pool(opts.workers, || match cfg.env {
        EnvKind::TabularTest => {
            let env = TabularMdp::reference(cfg.horizon, cfg.gamma);
            let theta0 = match cfg.policy.init {
                InitKind::Zeros => vec![0.0; 2],
                InitKind::Random => {
                    use rand::Rng;
                    let mut rng = crate::rng::seeded_rng(cfg.policy.init_seed);
                    (0..2).map(|_| cfg.policy.init_scale * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
                }
                InitKind::Repulsive => {
                    return Err(Error::Config("tabular-test supports init = \"zeros\" or \"random\"".into()))
                }
            };
            let save = |theta: &[f64], path: &Path| -> Result<()> {
                write_atomic(path, &serde_json::to_string_pretty(&serde_json::json!({ "theta": theta }))?)
            };
            train_generic(&env, &TabularPolicy, theta0, cfg, opts, ckpt, &save)
        }
        _ => {
            let env = build_nav_env(cfg)?;
            let policy = build_rbf_policy(cfg, &env)?;
            let theta0 = if ckpt.is_some() { vec![0.0; policy.dim()] } else { initial_params(cfg, &env, &policy)?.theta };
            let save = |theta: &[f64], path: &Path| -> Result<()> {
                PolicyParams::new(policy.clone(), theta.to_vec())?.save(path)
            };
            train_generic(&env, &policy, theta0, cfg, opts, ckpt, &save)
        }
    })
}

enum StepOutcome {
    Sgf { update: UpdateResult, cert: SafetyCertificate, attained: bool },
    PrimalDual { next: Vec<f64>, state: PrimalDualState },
    Cpo { next: Vec<f64>, case: CpoCase },
}

fn sgf_update_or_recover(theta: &[f64], est: &EstimateBundle, alpha: f64, h: f64) -> Result<UpdateResult> {
    let input = UpdateInputs {
        theta: theta.to_vec(),
        v1: est.v1_hat,
        g0: est.grad_v0_hat.clone(),
        g1: est.grad_v1_hat.clone(),
        alpha,
        h,
    };
    match closed_form_update(&input, DEFAULT_TOL) {
        Err(Error::Infeasible { a, .. }) => {
            log::warn!("estimated update infeasible (A = {a:e}); taking the recovery step");
            recovery_step(&input)
        }
        other => other,
    }
}

fn cpo_branch(case: CpoCase) -> &'static str {
    match case {
        CpoCase::Descent => "CPO_DESCENT",
        CpoCase::Boundary => "CPO_BOUNDARY",
        CpoCase::Recovery => "CPO_RECOVERY",
        CpoCase::NoOp => "CPO_NOOP",
    }
}

/// Runs (or resumes) the loop for any environment and policy.
#[allow(clippy::too_many_arguments)]
pub fn train_generic<E, P>(
    env: &E,
    policy: &P,
    theta0: Vec<f64>,
    cfg: &RunConfig,
    opts: &TrainOptions,
    ckpt: Option<Checkpoint>,
    save_theta: &dyn Fn(&[f64], &Path) -> Result<()>,
) -> Result<RunSummary>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let out = &opts.out_dir;
    let spec = env.spec().clone();
    let constants = policy.constants();
    let lips = LipschitzBundle::new(&spec, constants.lipschitz_l, constants.grad_bound);
    let limit = lips.step_size_limit(cfg.alpha);
    if cfg.algo == Algo::RlSgf && cfg.h >= limit {
        log::warn!(
            "h = {} is not below min(1/α, 1/L0, 1/L1) = {limit:e}; certificates will not be satisfied",
            cfg.h
        );
    }
    let info = RunInfo {
        metrics_schema: METRICS_SCHEMA_VERSION,
        algo: cfg.algo.as_str().into(),
        env: cfg.env.as_str().into(),
        seed: cfg.seed,
        param_dim: policy.param_dim(),
        l0: lips.l0,
        l1: lips.l1,
        step_size_limit: limit,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_atomic(&out.join(INFO_FILE), &serde_json::to_string_pretty(&info)?)?;

    let metrics_path = out.join(METRICS_FILE);
    let (mut theta, mut pd_state, start, mut writer) = match ckpt {
        Some(c) => {
            if c.theta.len() != policy.param_dim() {
                return Err(Error::Config("checkpoint parameter count does not match the policy".into()));
            }
            let mut st = cfg.baselines.primal_dual_state().ok();
            if let (Some(s), Some(l)) = (st.as_mut(), c.lambda) {
                s.lambda = l;
            }
            (c.theta, st, c.iteration + 1, MetricsWriter::reopen(&metrics_path, c.iteration)?)
        }
        None => (theta0, cfg.baselines.primal_dual_state().ok(), 1, MetricsWriter::create(&metrics_path)?),
    };
    if theta.len() != policy.param_dim() {
        return Err(Error::Config("initial parameter count does not match the policy".into()));
    }
    let save_ckpt = |iteration: usize, theta: &[f64], pd: &Option<PrimalDualState>| -> Result<()> {
        let c = Checkpoint {
            iteration,
            theta: theta.to_vec(),
            lambda: if cfg.algo == Algo::PrimalDual { pd.map(|s| s.lambda) } else { None },
        };
        write_atomic(&out.join(CHECKPOINT_FILE), &serde_json::to_string(&c)?)
    };

    let baseline = ZeroBaseline;
    let last = opts.stop_after.map_or(cfg.iterations, |s| s.min(cfg.iterations));
    let mut completed = start - 1;
    let mut abort: Option<Error> = None;
    for i in start..=last {
        let t0 = Instant::now();
        let (bundle, outcome) = match cfg.algo {
            Algo::RlSgf if cfg.adaptive.enabled => {
                let prob = AdaptiveProblem {
                    env,
                    policy,
                    baseline: &baseline,
                    master_seed: cfg.seed,
                    iteration: i as u64,
                    alpha: cfg.alpha,
                    h: cfg.h,
                    l1: lips.l1,
                };
                let o = adaptive_episode_count(&prob, &theta, &cfg.adaptive_config(), |b| {
                    sgf_update_or_recover(&theta, b, cfg.alpha, cfg.h)
                })?;
                (o.bundle, StepOutcome::Sgf { update: o.update, cert: o.certificate, attained: o.attained })
            }
            algo => {
                let eps = rollout_batch(env, policy, &theta, cfg.seed, i as u64, cfg.episodes)?;
                let bundle = estimate(&eps, &spec, policy, &theta, &baseline)?;
                let outcome = match algo {
                    Algo::RlSgf => {
                        let update = sgf_update_or_recover(&theta, &bundle, cfg.alpha, cfg.h)?;
                        let cert = certify(
                            bundle.v1_hat,
                            &CertificateInputs {
                                step_norm: update.step_norm,
                                alpha_h: cfg.alpha * cfg.h,
                                h: cfg.h,
                                l1: lips.l1,
                                sigma_tilde1: bundle.sigma_tilde[1],
                                sigma_bar1: bundle.sigma_bar[1],
                                d: theta.len(),
                                delta: cfg.delta,
                                n_used: bundle.episodes_used as u64,
                            },
                        )?;
                        let attained = cert.satisfied;
                        StepOutcome::Sgf { update, cert, attained }
                    }
                    Algo::PrimalDual => {
                        let st = pd_state.ok_or_else(|| Error::Config("invalid primal-dual settings".into()))?;
                        let (next, state) = primal_dual_step(&theta, &bundle, st);
                        StepOutcome::PrimalDual { next, state }
                    }
                    Algo::Cpo => {
                        let (next, case) = cpo_step(&theta, &bundle, &cfg.baselines.cpo())?;
                        StepOutcome::Cpo { next, case }
                    }
                };
                (bundle, outcome)
            }
        };

        let (next, row_tail): (Vec<f64>, (Option<f64>, String, Option<i64>, Option<bool>, Option<f64>)) = match &outcome {
            StepOutcome::Sgf { update, cert, .. } => (
                update.theta_next.clone(),
                (
                    Some(update.u_hat),
                    update.branch.as_str().to_string(),
                    Some(cert.required_n_field()),
                    Some(cert.satisfied),
                    None,
                ),
            ),
            StepOutcome::PrimalDual { next, state } => {
                (next.clone(), (None, "PD".into(), None, None, Some(state.lambda)))
            }
            StepOutcome::Cpo { next, case } => (next.clone(), (None, cpo_branch(*case).into(), None, None, None)),
        };
        let step_norm = next.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let wall_ms = if cfg.record_wall_time { t0.elapsed().as_millis() as u64 } else { 0 };
        let row = MetricsRow {
            iteration: i,
            // 0 − x rather than −x so a zero return prints as 0, not −0.
            v0_hat: 0.0 - bundle.v0_hat,
            v1_hat: bundle.v1_hat,
            step_norm,
            u_hat: row_tail.0,
            branch: row_tail.1,
            n_used: bundle.episodes_used,
            cert_required_n: row_tail.2,
            cert_satisfied: row_tail.3,
            lambda: row_tail.4,
            wall_ms,
            seed: cfg.seed,
        };

        if next.iter().any(|x| !x.is_finite()) || !bundle.v0_hat.is_finite() || !bundle.v1_hat.is_finite() {
            let dump = serde_json::json!({
                "iteration": i,
                "theta": theta,
                "bundle": bundle,
                "row": super::metrics::row_to_string(&row)?,
            });
            write_atomic(&out.join(DIAGNOSTIC_FILE), &serde_json::to_string_pretty(&dump)?)?;
            abort = Some(Error::NonFinite(format!(
                "iteration {i} produced a non-finite value; see {}",
                out.join(DIAGNOSTIC_FILE).display()
            )));
            break;
        }
        writer.append(&row)?;

        if let StepOutcome::Sgf { attained: false, cert, .. } = &outcome {
            if cfg.strict_safety {
                abort = Some(Error::CertificateUnattainable(format!(
                    "iteration {i}: N = {} but the certificate needs {}",
                    bundle.episodes_used,
                    cert.required_n.map_or("more than any finite N".to_string(), |r| r.to_string())
                )));
                break;
            }
            log::debug!("iteration {i}: certificate not satisfied (required {:?})", cert.required_n);
        }
        if let StepOutcome::PrimalDual { state, .. } = outcome {
            pd_state = Some(state);
        }
        theta = next;
        completed = i;
        if cfg.checkpoint_every > 0 && i % cfg.checkpoint_every == 0 {
            save_ckpt(i, &theta, &pd_state)?;
        }
    }
    drop(writer);
    save_ckpt(completed, &theta, &pd_state)?;
    let theta_path = out.join(THETA_FILE);
    save_theta(&theta, &theta_path)?;
    if let Some(e) = abort {
        return Err(e);
    }
    let rows = super::metrics::read_metrics(&metrics_path)?;
    let stats = summarize_rows(&rows);
    let summary =
        RunSummary { out_dir: out.clone(), final_theta_path: theta_path, iterations_completed: completed, stats };
    write_atomic(&out.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
