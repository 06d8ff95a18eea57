use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use rlsgf::analytic_testbed::builtin_problems;
use rlsgf::baselines::{cpo_direction, CpoCase, CpoConfig};
use rlsgf::cmdp::{rollout_batch, Environment};
use rlsgf::estimators::{estimate, ZeroBaseline};
use rlsgf::nav_envs::{ObstacleSet, Shape};
use rlsgf::rng::seeded_rng;
use rlsgf::sgf_update::{closed_form_update, step_from_estimate, Branch, UpdateInputs, DEFAULT_TOL};
use rlsgf::tabular::{TabularMdp, TabularPolicy};
use rlsgf::theory_bounds::{adaptive_episode_count, required_episodes, AdaptiveConfig, AdaptiveProblem, LipschitzBundle};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// With h < 1/L0 and h ≤ 1/L1 the smoothness upper bounds give
/// V0(x⁺) ≤ V0(x) − (1/h − L0)‖Δ‖²/2 and V1(x⁺) ≤ (1 − αh)V1(x).
#[test]
fn descent_and_anytime_inequalities() {
    let mut rng = seeded_rng(11);
    for p in builtin_problems() {
        let alpha = 1.0;
        let h = 0.9 * (1.0 / p.l1).min(if p.l0 > 0.0 { 1.0 / p.l0 } else { f64::INFINITY });
        for _ in 0..2000 {
            let x = p.sample_safe_start(&mut rng);
            let r = p.update(&x, alpha, h).unwrap();
            let step = dist(&x, &r.theta_next);
            let (v0, v0n) = ((p.v0)(&x), (p.v0)(&r.theta_next));
            let (v1, v1n) = ((p.v1)(&x), (p.v1)(&r.theta_next));
            let slack = 1e-12 * (1.0 + v0.abs());
            assert!(v0n <= v0 - (1.0 / h - p.l0) * step * step / 2.0 + slack, "{}: {v0} -> {v0n}", p.name);
            assert!(v1n <= (1.0 - alpha * h) * v1 + 1e-12, "{}: {v1} -> {v1n}", p.name);
        }
    }
}

/// Past 1/L1 the model underestimates the curvature of V1 and boundary
/// starts can leave the safe set.
#[test]
fn step_above_limit_can_violate() {
    let p1 = builtin_problems().into_iter().find(|p| p.name == "P1").unwrap();
    let (alpha, h) = (0.5, 1.5);
    assert!(h > 1.0 / p1.l1);
    let violations = (0..64)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 64.0;
            let x = [a.cos(), a.sin()];
            (p1.v1)(&p1.update(&x, alpha, h).unwrap().theta_next)
        })
        .filter(|&v| v > 1e-6)
        .count();
    assert!(violations > 0);
}

/// Brute force over a polar grid of the trust region.
#[test]
fn cpo_matches_grid_search() {
    let cfg = CpoConfig { trust_radius: 0.5 };
    let r = (2.0 * cfg.trust_radius).sqrt();
    let mut rng = seeded_rng(5);
    let mut cases = [0usize; 4];
    for _ in 0..300 {
        let g0 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let g1 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let c = rng.random_range(-1.5..1.5);
        let res = cpo_direction(c, &g0, &g1, &cfg).unwrap();
        assert!(dist(&res.delta, &[0.0, 0.0]) <= r * (1.0 + 1e-12));
        let lin = |d: &[f64], g: &[f64; 2]| d[0] * g[0] + d[1] * g[1];
        match res.case {
            CpoCase::Recovery => {
                cases[2] += 1;
                // Infeasible region: the step minimizes the linearized constraint.
                let best = -r * (g1[0].hypot(g1[1]));
                assert!((lin(&res.delta, &g1) - best).abs() < 1e-9);
                continue;
            }
            CpoCase::NoOp => {
                cases[3] += 1;
                continue;
            }
            CpoCase::Descent => cases[0] += 1,
            CpoCase::Boundary => cases[1] += 1,
        }
        assert!(c + lin(&res.delta, &g1) <= 1e-9);
        let mut best = f64::INFINITY;
        let (nr, na) = (400, 2000);
        for i in 0..=nr {
            let rad = r * i as f64 / nr as f64;
            for j in 0..na {
                let a = 2.0 * PI * j as f64 / na as f64;
                let d = [rad * a.cos(), rad * a.sin()];
                if c + lin(&d, &g1) <= 0.0 {
                    best = best.min(lin(&d, &g0));
                }
            }
        }
        let got = lin(&res.delta, &g0);
        let scale = g0[0].hypot(g0[1]) * r;
        assert!(got <= best + 1e-9, "solver {got} worse than grid {best}");
        assert!(best - got <= 5e-3 * scale, "grid {best} vs solver {got}");
    }
    assert!(cases[0] > 0 && cases[1] > 0 && cases[2] > 0, "{cases:?}");
}

/// d_min against the nearest of many points sampled on each obstacle.
#[test]
fn d_min_matches_sampled_boundaries() {
    let obs = ObstacleSet::default();
    let mut pts = Vec::new();
    for s in &obs.obstacles {
        match s {
            Shape::Circle { center, radius } => {
                for k in 0..20_000 {
                    let a = 2.0 * PI * k as f64 / 20_000.0;
                    pts.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
                }
            }
            Shape::Rect { min, max } => {
                for k in 0..=5_000 {
                    let t = k as f64 / 5_000.0;
                    let x = min[0] + t * (max[0] - min[0]);
                    let y = min[1] + t * (max[1] - min[1]);
                    pts.extend([[x, min[1]], [x, max[1]], [min[0], y], [max[0], y]]);
                }
            }
        }
    }
    let mut rng = seeded_rng(2);
    for _ in 0..300 {
        let p = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
        let got = obs.d_min(p);
        if !obs.in_safe_set(p) {
            assert_eq!(got, 0.0);
            continue;
        }
        let brute = pts.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])).fold(f64::INFINITY, f64::min);
        assert!(got <= brute + 1e-12);
        assert!(brute - got < 1e-3, "p = {p:?}: {got} vs {brute}");
    }
}

/// The adaptive loop's final estimate equals a fresh batch of the same size.
#[test]
fn adaptive_reuses_episode_prefix() {
    let env = TabularMdp::reference(3, 0.9);
    let theta = [0.2, -0.5];
    let lips = LipschitzBundle::new(env.spec(), 0.25, 1.0);
    let prob = AdaptiveProblem {
        env: &env,
        policy: &TabularPolicy,
        baseline: &ZeroBaseline,
        master_seed: 9,
        iteration: 4,
        alpha: 1.0,
        h: 0.01,
        l1: lips.l1,
    };
    let cfg = AdaptiveConfig { initial_n: 8, n_max: 1 << 12, growth_factor: 2.0, delta: 0.2 };
    let out = adaptive_episode_count(&prob, &theta, &cfg, |b| step_from_estimate(&theta, b, 1.0, 0.01)).unwrap();
    assert!(out.rounds > 1);
    let n = out.bundle.episodes_used;
    let eps = rollout_batch(&env, &TabularPolicy, &theta, 9, 4, n).unwrap();
    let fresh = estimate(&eps, env.spec(), &TabularPolicy, &theta, &ZeroBaseline).unwrap();
    assert_eq!(fresh, out.bundle);
}

#[test]
fn required_episodes_inverts_the_tail_bound() {
    let mut rng = seeded_rng(8);
    for _ in 0..1000 {
        let b = rng.random_range(1e-3..2.0);
        let st = rng.random_range(0.1..50.0);
        let sb = rng.random_range(0.1..50.0);
        let d = rng.random_range(1..2000);
        let delta = rng.random_range(1e-4..0.9);
        let df = d as f64;
        let tails = |n: f64| {
            ((-n * b * b / (2.0 * st * st)).exp(), df * (-n * b * b / (2.0 * df * sb * sb)).exp())
        };
        let Some(req) = required_episodes(b, st, sb, d, delta) else { continue };
        let (t1, t2) = tails(req as f64);
        assert!(t1 < delta && t2 < delta);
        if req >= 3 {
            let (t1, t2) = tails((req - 2) as f64);
            assert!(t1 >= delta || t2 >= delta);
        }
    }
    assert_eq!(required_episodes(0.0, 1.0, 1.0, 3, 0.1), None);
    assert_eq!(required_episodes(1.0, 1.0, 1.0, 3, 1.0), None);
}

fn inputs() -> impl Strategy<Value = UpdateInputs> {
    (1usize..12).prop_flat_map(|d| {
        (
            prop::collection::vec(-5.0..5.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
            -3.0..=0.0f64,
            0.05..3.0f64,
            0.01..1.0f64,
            any::<bool>(),
        )
            .prop_map(|(theta, g0, mut g1, v1, alpha, frac, zero_g1)| {
                if zero_g1 {
                    g1.iter_mut().for_each(|x| *x = 0.0);
                }
                let h = frac / alpha;
                UpdateInputs { theta, v1, g0, g1, alpha, h }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    /// From a safe point the step is feasible and no worse than staying put.
    #[test]
    fn closed_form_step_is_feasible(inp in inputs()) {
        let r = closed_form_update(&inp, DEFAULT_TOL).unwrap();
        let scale = 1.0 + inp.g0.iter().chain(&inp.g1).map(|x| x * x).sum::<f64>() * inp.h;
        prop_assert!(inp.constraint_at(&r.theta_next) <= 1e-10 * scale);
        prop_assert!(inp.objective_at(&r.theta_next) <= 1e-10 * scale);
        prop_assert!(r.u_hat >= 0.0);
        prop_assert!(r.branch != Branch::Recovery);
        prop_assert!((r.step_norm - dist(&r.theta_next, &inp.theta)).abs() <= 1e-12 * (1.0 + r.step_norm));
    }
}
