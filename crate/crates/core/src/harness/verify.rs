//! Self-checks behind `rlsgf verify`: the closed-form step against the
//! numerical oracle, the anytime property and KKT convergence on the
//! analytic problems, and estimator unbiasedness on the tabular CMDP.
//!
//! `mutate_v0_sign` flips the sign of the objective gradient inside the
//! code under test (never inside the references), so a working harness must
//! report failures with it set.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::analytic_testbed::{builtin_problems, kkt_residual, run_exact_iteration, AnalyticProblem};
use crate::error::Result;
use crate::estimators::{episode_gradients, value_estimate, ZeroBaseline};
use crate::rng::{seeded_rng, EpisodeRng};
use crate::sgf_update::oracle::qcqp_oracle;
use crate::sgf_update::{closed_form_update, Branch, UpdateInputs, UpdateResult, DEFAULT_TOL};
use crate::tabular::{TabularMdp, TabularPolicy};

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// QCQP instances compared with the oracle.
    pub instances: usize,
    /// Safe starting points per analytic problem.
    pub starts: usize,
    /// Multiplies every tolerance.
    pub tol_scale: f64,
    pub mutate_v0_sign: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, instances: 1000, starts: 10_000, tol_scale: 1.0, mutate_v0_sign: false }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Largest error seen, in the suite's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub first_failure: Option<String>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let tag = if s.passed() { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{tag} {:<12} cases={:<6} worst={:.3e} tol={:.1e} ({:.2}s)",
                s.name, s.cases, s.worst, s.tolerance, s.seconds
            )?;
            if let Some(msg) = &s.first_failure {
                writeln!(f, "     first failure: {msg}")?;
            }
        }
        Ok(())
    }
}

struct Tracker {
    name: &'static str,
    cases: usize,
    worst: f64,
    tolerance: f64,
    first_failure: Option<String>,
    start: Instant,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tracker { name, cases: 0, worst: 0.0, tolerance, first_failure: None, start: Instant::now() }
    }

    fn record(&mut self, err: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        let bad = !(err <= self.tolerance);
        if err > self.worst || err.is_nan() {
            self.worst = err;
        }
        if bad && self.first_failure.is_none() {
            self.first_failure = Some(format!("{} (error {err:.3e})", describe()));
        }
    }

    fn fail(&mut self, msg: String) {
        self.cases += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(msg);
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            cases: self.cases,
            worst: self.worst,
            tolerance: self.tolerance,
            first_failure: self.first_failure,
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn uniform_vec(rng: &mut EpisodeRng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-r..r)).collect()
}

/// Random instance aimed at branch `k % 4`: inactive constraint, active
/// constraint, zero constraint gradient on the boundary, or unconstrained
/// draw. Always satisfies v1 ≤ 0.
pub fn qcqp_instance(rng: &mut EpisodeRng, k: usize) -> UpdateInputs {
    let d = rng.random_range(1..=50);
    let theta = uniform_vec(rng, d, 3.0);
    let g0 = uniform_vec(rng, d, 2.0);
    let mut g1 = uniform_vec(rng, d, 2.0);
    let alpha: f64 = rng.random_range(0.1..3.0);
    let h = rng.random_range(0.05..0.9) / alpha.max(1.0);
    let dot: f64 = g0.iter().zip(&g1).map(|(a, b)| a * b).sum();
    let g0sq: f64 = g0.iter().map(|x| x * x).sum();
    let v1 = match k % 4 {
        // C ≥ 0 needs −2αv1 ≥ ‖g0‖² − 2g1ᵀg0.
        0 => -((g0sq - 2.0 * dot).max(0.0) + rng.random_range(0.0..2.0)) / (2.0 * alpha),
        1 => {
            // Boundary start with g1 opposing g0 keeps C < 0.
            if dot > 0.0 {
                g1.iter_mut().for_each(|x| *x = -*x);
            }
            -rng.random_range(0.0..1e-3)
        }
        2 => {
            g1.iter_mut().for_each(|x| *x = 0.0);
            0.0
        }
        _ => rng.random_range(-2.0..0.0),
    };
    UpdateInputs { theta, v1, g0, g1, alpha, h }
}

fn mutated(inp: &UpdateInputs, on: bool) -> UpdateInputs {
    let mut m = inp.clone();
    if on {
        m.g0.iter_mut().for_each(|x| *x = -*x);
    }
    m
}

fn oracle_error(inp: &UpdateInputs, mutate: bool) -> f64 {
    match (closed_form_update(&mutated(inp, mutate), DEFAULT_TOL), qcqp_oracle(inp)) {
        (Ok(r), Ok(o)) => max_abs_diff(&r.theta_next, &o.y).max(inp.constraint_at(&r.theta_next).max(0.0)),
        _ => f64::INFINITY,
    }
}

/// Shrinks a failing instance: fewest leading coordinates, then θ = 0,
/// keeping only changes under which it still fails.
fn minimize_instance(inp: &UpdateInputs, fails: impl Fn(&UpdateInputs) -> bool) -> UpdateInputs {
    let mut best = inp.clone();
    for d in 1..inp.theta.len() {
        let cut = UpdateInputs {
            theta: inp.theta[..d].to_vec(),
            g0: inp.g0[..d].to_vec(),
            g1: inp.g1[..d].to_vec(),
            ..inp.clone()
        };
        if fails(&cut) {
            best = cut;
            break;
        }
    }
    let zeroed = UpdateInputs { theta: vec![0.0; best.theta.len()], ..best.clone() };
    if fails(&zeroed) {
        best = zeroed;
    }
    best
}

pub fn oracle_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut t = Tracker::new("qcqp-oracle", 1e-8 * opts.tol_scale);
    let mut rng = seeded_rng(opts.seed ^ 0x51);
    let mut seen = [false; 3];
    for k in 0..opts.instances {
        let inp = qcqp_instance(&mut rng, k);
        let under_test = closed_form_update(&mutated(&inp, opts.mutate_v0_sign), DEFAULT_TOL);
        match (under_test, qcqp_oracle(&inp)) {
            (Ok(r), Ok(_)) => {
                match r.branch {
                    Branch::APosCNonneg => seen[0] = true,
                    Branch::APosCNeg => seen[1] = true,
                    Branch::AZero => seen[2] = true,
                    Branch::Recovery => {}
                }
                let err = oracle_error(&inp, opts.mutate_v0_sign);
                t.record(err, || {
                    let small = minimize_instance(&inp, |i| oracle_error(i, opts.mutate_v0_sign) > 1e-8 * opts.tol_scale);
                    format!("instance {k} (branch {}), minimized to {small:?}", r.branch.as_str())
                });
            }
            (a, b) => t.fail(format!("instance {k}: closed form {:?}, oracle {:?}", a.err(), b.err())),
        }
    }
    if opts.instances >= 4 && !seen.iter().all(|&s| s) {
        t.fail(format!("branches not all exercised: {seen:?}"));
    }
    t.finish()
}

fn step(p: &AnalyticProblem, x: &[f64], alpha: f64, h: f64, mutate: bool) -> Result<UpdateResult> {
    let inp = UpdateInputs { theta: x.to_vec(), v1: (p.v1)(x), g0: (p.grad_v0)(x), g1: (p.grad_v1)(x), alpha, h };
    closed_form_update(&mutated(&inp, mutate), DEFAULT_TOL)
}

/// Largest positive V1 over `steps` exact iterations from each safe start.
pub fn anytime_suite(opts: &VerifyOptions, steps: usize) -> SuiteReport {
    let mut t = Tracker::new("anytime", 1e-12 * opts.tol_scale);
    let mut rng = seeded_rng(opts.seed ^ 0xA7);
    for p in builtin_problems() {
        for s in 0..opts.starts {
            let alpha: f64 = [0.5, 1.0, 2.0][s % 3];
            let h = 0.9 * (1.0 / alpha).min(1.0 / p.l0).min(1.0 / p.l1);
            let mut x = p.sample_safe_start(&mut rng);
            let mut worst = 0.0f64;
            for _ in 0..steps {
                match step(&p, &x, alpha, h, opts.mutate_v0_sign) {
                    Ok(r) => x = r.theta_next,
                    Err(e) => {
                        t.fail(format!("{} start {s}: {e}", p.name));
                        break;
                    }
                }
                worst = worst.max((p.v1)(&x));
            }
            t.record(worst.max(0.0), || format!("{} start {s}, α = {alpha}, h = {h}", p.name));
        }
    }
    t.finish()
}

/// Exact iteration on P1 must reach its KKT point; a vanishing step and a
/// vanishing KKT residual must occur together. Since the step is about h
/// times the residual, the two directions use different cutoffs: a step
/// below 1e-9 must come with a residual below 1e-6, and a residual below
/// 1e-9 with a step below 1e-9.
pub fn kkt_suite(opts: &VerifyOptions, runs: usize) -> SuiteReport {
    let mut t = Tracker::new("kkt", 1e-6 * opts.tol_scale);
    let problems = builtin_problems();
    let p = &problems[0];
    let (x_star, u_star) = p.kkt_points[0].clone();
    let mut rng = seeded_rng(opts.seed ^ 0x33);
    let (alpha, h) = (1.0, 0.4);
    for run in 0..runs {
        let x0 = p.sample_safe_start(&mut rng);
        let mut x = x0.clone();
        let mut last: Option<(UpdateResult, Vec<f64>)> = None;
        for _ in 0..2000 {
            match step(p, &x, alpha, h, opts.mutate_v0_sign) {
                Ok(r) => {
                    let next = r.theta_next.clone();
                    let small = r.step_norm < 1e-9;
                    let u = if r.u_hat.is_finite() { r.u_hat } else { 0.0 };
                    let res = kkt_residual(p, &x, u);
                    if small && res >= 1e-6 * opts.tol_scale {
                        t.fail(format!("run {run}: step {:.1e} but KKT residual {res:.1e} at {x:?}", r.step_norm));
                    }
                    if res < 1e-9 && r.step_norm >= 1e-9 * opts.tol_scale.max(1.0) {
                        t.fail(format!("run {run}: KKT residual {res:.1e} but step {:.1e}", r.step_norm));
                    }
                    last = Some((r, x));
                    if small {
                        break;
                    }
                    x = next;
                }
                Err(e) => {
                    t.fail(format!("run {run}: {e}"));
                    break;
                }
            }
        }
        if let Some((r, x)) = last {
            let u = if r.u_hat.is_finite() { r.u_hat } else { 0.0 };
            let err = kkt_residual(p, &x, u).max(max_abs_diff(&x, &x_star)).max((u - u_star).abs());
            t.record(err, || format!("run {run} from {x0:?} ended at {x:?} with û = {u}"));
        }
    }
    // The library driver must agree with the loop above.
    if !opts.mutate_v0_sign {
        match run_exact_iteration(p, &[0.0, 0.0], 1.0, 0.1, 2000, 1e-9) {
            Ok(tr) if tr.converged => {
                for r in &tr.rows {
                    let bad = (r.step_norm < 1e-9 && r.kkt_residual >= 1e-6 * opts.tol_scale)
                        || (r.kkt_residual < 1e-9 && r.step_norm >= 1e-9);
                    if bad {
                        t.fail(format!("driver row {}: step {:.1e}, residual {:.1e}", r.k, r.step_norm, r.kkt_residual));
                    }
                }
                let last = tr.rows.last().map_or(f64::NAN, |r| r.kkt_residual);
                t.record(last.max(max_abs_diff(&tr.final_x, &x_star)), || {
                    format!("driver from the origin ended at {:?} after {} steps", tr.final_x, tr.rows.len())
                })
            }
            Ok(_) => t.fail("driver did not converge from the origin".into()),
            Err(e) => t.fail(format!("driver: {e}")),
        }
    }
    t.finish()
}

/// Probability-weighted single-episode estimates over every episode of the
/// tabular CMDP, against the exact value and its finite-difference gradient.
pub fn estimator_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut t = Tracker::new("estimators", 1e-7 * opts.tol_scale);
    let mdp = TabularMdp::reference(3, 0.9);
    let policy = TabularPolicy;
    let thetas = [vec![0.0, 0.0], vec![-1.0, 0.5], vec![0.3, -0.7], vec![2.0, 1.5]];
    for theta in &thetas {
        let mut v = [0.0f64; 2];
        let mut g = [vec![0.0; 2], vec![0.0; 2]];
        let mut mass = 0.0;
        for (p, ep) in mdp.enumerate(&policy, theta) {
            mass += p;
            let grads = match episode_gradients(&ep, mdp.spec.gamma, &policy, theta, &ZeroBaseline) {
                Ok(x) => x,
                Err(e) => {
                    t.fail(format!("θ = {theta:?}: {e}"));
                    continue;
                }
            };
            for q in 0..2 {
                let mut vq = value_estimate(std::slice::from_ref(&ep), q, mdp.spec.gamma).unwrap_or(f64::NAN);
                let mut gq = grads[q].clone();
                if q == 0 && opts.mutate_v0_sign {
                    vq = -vq;
                    gq.iter_mut().for_each(|x| *x = -*x);
                }
                v[q] += p * vq;
                for (a, b) in g[q].iter_mut().zip(&gq) {
                    *a += p * b;
                }
            }
        }
        t.record((mass - 1.0).abs(), || format!("θ = {theta:?}: probabilities sum to {mass}"));
        for q in 0..2 {
            let exact = mdp.exact_value(&policy, theta, q);
            t.record((v[q] - exact).abs(), || format!("θ = {theta:?}: E[V̂{q}] = {} vs {exact}", v[q]));
            let fd = mdp.fd_gradient(&policy, theta, q, 1e-5);
            t.record(max_abs_diff(&g[q], &fd), || format!("θ = {theta:?}: E[∇V̂{q}] = {:?} vs {fd:?}", g[q]));
        }
    }
    t.finish()
}

pub fn run_all(opts: &VerifyOptions) -> VerifyReport {
    VerifyReport {
        suites: vec![oracle_suite(opts), anytime_suite(opts, 20), kkt_suite(opts, 20), estimator_suite(opts)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions { instances: 200, starts: 100, ..Default::default() }
    }

    #[test]
    fn all_suites_pass() {
        let r = run_all(&small());
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn loosened_tolerances_still_pass() {
        assert!(run_all(&VerifyOptions { tol_scale: 1e6, ..small() }).passed());
    }

    #[test]
    fn failures_are_minimized() {
        let r = oracle_suite(&VerifyOptions { mutate_v0_sign: true, ..small() });
        let msg = r.first_failure.unwrap();
        assert!(msg.contains("theta: [0.0]"), "{msg}");
    }

    #[test]
    fn sign_mutation_is_caught() {
        let r = run_all(&VerifyOptions { mutate_v0_sign: true, ..small() });
        for s in &r.suites {
            if s.name != "anytime" {
                assert!(!s.passed(), "{} missed the mutation\n{r}", s.name);
            }
        }
    }
}
