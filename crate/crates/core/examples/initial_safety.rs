//! Monte-Carlo estimate of V̂_1 for the repulsive initial policy.

use rlsgf::cmdp::rollout_batch;
use rlsgf::estimators::value_estimate;
use rlsgf::nav_envs::{safe_initial_params, Dynamics, NavEnv, RepulsionConfig};
use rlsgf::policy_rbf::{RbfDistance, RbfPolicy};

fn main() {
    let env = NavEnv::default_for(Dynamics::SingleIntegrator);
    let policy = RbfPolicy::on_grid(&[0.0, 0.0], &[10.0, 10.0], &[20, 20], 0.25, 0.5, env.dynamics.action_box(), RbfDistance::Position).unwrap();
    for walls in [false, true] {
        let rep = RepulsionConfig { walls, ..RepulsionConfig::default() };
        let p = safe_initial_params(&env.obstacles, &policy, &rep).unwrap();
        for seed in 0..3 {
            let eps = rollout_batch(&env, &policy, &p.theta, seed, 0, 400).unwrap();
            let unsafe_eps = eps.iter().filter(|e| e.transitions.iter().any(|t| t.r1 > 0.0)).count();
            println!(
                "walls={walls} seed={seed} V1={:.4} V0={:.3} episodes_leaving_C={unsafe_eps}",
                value_estimate(&eps, 1, 0.98).unwrap(),
                value_estimate(&eps, 0, 0.98).unwrap()
            );
        }
    }
}
