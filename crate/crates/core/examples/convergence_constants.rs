//! Convergence constants for the default single-integrator run with
//! h = 0.5/L0, all η's = 1 and ε* = 1e-3, printed as `name,value` CSV.

use rlsgf::cmdp::{Environment, StochasticPolicy};
use rlsgf::estimators::variance_constants;
use rlsgf::harness::train::{build_nav_env, build_rbf_policy};
use rlsgf::harness::RunConfig;
use rlsgf::theory_bounds::{convergence_constants, ConvergenceInputs, LipschitzBundle};

fn main() -> rlsgf::Result<()> {
    let cfg = RunConfig::default();
    let env = build_nav_env(&cfg)?;
    let policy = build_rbf_policy(&cfg, &env)?;
    let pc = policy.constants();
    let spec = env.spec();
    let lips = LipschitzBundle::new(spec, pc.lipschitz_l, pc.grad_bound);
    let vc = variance_constants(spec, pc.grad_bound, 0.0);
    let inp = ConvergenceInputs {
        sigma_tilde: vc.sigma_tilde,
        sigma_bar: vc.sigma_bar,
        d: policy.param_dim(),
        alpha: cfg.alpha,
        h: 0.5 / lips.l0,
        l0: lips.l0,
        eta_a: 1.0,
        eta_a_hat: 1.0,
        eta_delta_hat: Some(1.0),
        eta_b: None,
    };
    let c = convergence_constants(&inp)?;
    let eps = c.epsilon_for(1e-3);
    let rows = [
        ("B0", spec.reward_bounds.0),
        ("B1", spec.reward_bounds.1),
        ("B_tilde", pc.grad_bound),
        ("L_policy", pc.lipschitz_l),
        ("L0", lips.l0),
        ("sigma_tilde0", inp.sigma_tilde[0]),
        ("sigma_tilde1", inp.sigma_tilde[1]),
        ("sigma_bar0", inp.sigma_bar[0]),
        ("sigma_bar1", inp.sigma_bar[1]),
        ("M_A", c.m_a),
        ("M_p", c.m_p),
        ("M_p_bar", c.m_p_bar),
        ("K_p", c.k_p),
        ("epsilon", eps),
    ];
    println!("d,{}", inp.d);
    for (k, v) in rows {
        println!("{k},{v:e}");
    }
    Ok(())
}
