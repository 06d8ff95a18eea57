//! Smooth two-dimensional constrained problems with exact values and
//! gradients, used to exercise the update map without sampling noise.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::EpisodeRng;
use crate::sgf_update::{closed_form_update, Branch, UpdateInputs, UpdateResult, DEFAULT_TOL};

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

pub struct AnalyticProblem {
    pub name: &'static str,
    pub dim: usize,
    pub v0: ScalarFn,
    pub grad_v0: GradFn,
    pub v1: ScalarFn,
    pub grad_v1: GradFn,
    pub l0: f64,
    pub l1: f64,
    /// Known KKT pairs (x, u).
    pub kkt_points: Vec<(Vec<f64>, f64)>,
    /// Box from which safe starting points are drawn by rejection.
    pub start_box: (Vec<f64>, Vec<f64>),
}

impl std::fmt::Debug for AnalyticProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticProblem").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

fn central_difference(f: &ScalarFn, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[j] += step;
            m[j] -= step;
            (f(&p) - f(&m)) / (2.0 * step)
        })
        .collect()
}

impl AnalyticProblem {
    /// Compares both gradients against central differences at `points`;
    /// the error is relative to max(1, ‖∇f‖∞).
    pub fn check_gradients(&self, points: &[Vec<f64>], tol: f64) -> Result<()> {
        for x in points {
            for (f, g, which) in [(&self.v0, &self.grad_v0, "V0"), (&self.v1, &self.grad_v1, "V1")] {
                let exact = g(x);
                let fd = central_difference(f, x, 1e-5);
                let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let err = exact.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if err > tol * scale {
                    return Err(Error::Config(format!(
                        "{}: ∇{which} disagrees with finite differences at {x:?} (err {err:e})",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rejection sample from `start_box` conditioned on V1 ≤ 0.
    pub fn sample_safe_start(&self, rng: &mut EpisodeRng) -> Vec<f64> {
        let (lo, hi) = &self.start_box;
        loop {
            let x: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
            if (self.v1)(&x) <= 0.0 {
                return x;
            }
        }
    }

    /// The exact update p(x).
    pub fn update(&self, x: &[f64], alpha: f64, h: f64) -> Result<UpdateResult> {
        closed_form_update(
            &UpdateInputs {
                theta: x.to_vec(),
                v1: (self.v1)(x),
                g0: (self.grad_v0)(x),
                g1: (self.grad_v1)(x),
                alpha,
                h,
            },
            DEFAULT_TOL,
        )
    }
}

fn p1() -> AnalyticProblem {
    AnalyticProblem {
        name: "P1",
        dim: 2,
        v0: Box::new(|x| (x[0] - 2.0).powi(2) + x[1] * x[1]),
        grad_v0: Box::new(|x| vec![2.0 * (x[0] - 2.0), 2.0 * x[1]]),
        v1: Box::new(|x| x[0] * x[0] + x[1] * x[1] - 1.0),
        grad_v1: Box::new(|x| vec![2.0 * x[0], 2.0 * x[1]]),
        l0: 2.0,
        l1: 2.0,
        kkt_points: vec![(vec![1.0, 0.0], 1.0)],
        start_box: (vec![-1.0, -1.0], vec![1.0, 1.0]),
    }
}

/// ln(e^{x₁} + e^{x₂} + e^{−x₁} + e^{−x₂}), evaluated with the max shifted out.
fn lse4(x: &[f64]) -> (f64, [f64; 4]) {
    let z = [x[0], x[1], -x[0], -x[1]];
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), [e[0] / s, e[1] / s, e[2] / s, e[3] / s])
}

fn p2() -> AnalyticProblem {
    AnalyticProblem {
        name: "P2",
        dim: 2,
        v0: Box::new(|x| x[0] + 0.5 * x[1]),
        grad_v0: Box::new(|_| vec![1.0, 0.5]),
        v1: Box::new(|x| lse4(x).0 - 2.0),
        grad_v1: Box::new(|x| {
            let p = lse4(x).1;
            vec![p[0] - p[2], p[1] - p[3]]
        }),
        l0: 0.0,
        // Hessian Aᵀ(diag p − ppᵀ)A ⪯ diag(p₁+p₃, p₂+p₄) ⪯ I.
        l1: 1.0,
        kkt_points: vec![],
        start_box: (vec![-2.0, -2.0], vec![2.0, 2.0]),
    }
}

fn p3() -> AnalyticProblem {
    let pi = std::f64::consts::PI;
    AnalyticProblem {
        name: "P3",
        dim: 2,
        v0: Box::new(|x| x[0].cos() + 0.5 * x[1] * x[1]),
        grad_v0: Box::new(|x| vec![-x[0].sin(), x[1]]),
        v1: Box::new(|x| x[0] * x[0] + x[1] * x[1] - 16.0),
        grad_v1: Box::new(|x| vec![2.0 * x[0], 2.0 * x[1]]),
        l0: 1.0,
        l1: 2.0,
        kkt_points: vec![(vec![pi, 0.0], 0.0), (vec![-pi, 0.0], 0.0), (vec![0.0, 0.0], 0.0)],
        start_box: (vec![-4.0, -4.0], vec![4.0, 4.0]),
    }
}

/// P1 (quadratic over the unit ball), P2 (linear over a smoothed box) and
/// P3 (nonconvex objective with two local minima inside a ball).
pub fn builtin_problems() -> Vec<AnalyticProblem> {
    let probes: Vec<Vec<f64>> =
        vec![vec![0.3, -0.4], vec![-0.9, 0.1], vec![1.7, 2.2], vec![0.0, 0.0], vec![-2.5, 0.6]];
    let problems = vec![p1(), p2(), p3()];
    for p in &problems {
        p.check_gradients(&probes, 1e-6).expect("built-in gradients are exact");
    }
    problems
}

/// max(‖∇V0 + u∇V1‖, |u·V1|, max(0, V1)).
pub fn kkt_residual(problem: &AnalyticProblem, x: &[f64], u: f64) -> f64 {
    let g0 = (problem.grad_v0)(x);
    let g1 = (problem.grad_v1)(x);
    let v1 = (problem.v1)(x);
    let stat = g0.iter().zip(&g1).map(|(a, b)| (a + u * b).powi(2)).sum::<f64>().sqrt();
    stat.max((u * v1).abs()).max(v1.max(0.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub x: Vec<f64>,
    pub v0: f64,
    pub v1: f64,
    pub step_norm: f64,
    pub u_hat: f64,
    pub branch: Branch,
    /// KKT residual of (x_k, û_k).
    pub kkt_residual: f64,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub final_x: Vec<f64>,
}

impl Trace {
    /// Columns k, x1..xd, v0, v1, step_norm, u_hat, branch, kkt_residual.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.final_x.len();
        let mut header = vec!["k".to_string()];
        header.extend((1..=d).map(|j| format!("x{j}")));
        header.extend(["v0", "v1", "step_norm", "u_hat", "branch", "kkt_residual"].map(String::from));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.k.to_string()];
            rec.extend(r.x.iter().map(|v| format!("{v:e}")));
            rec.extend([r.v0, r.v1, r.step_norm, r.u_hat].iter().map(|v| format!("{v:e}")));
            rec.push(r.branch.as_str().to_string());
            rec.push(format!("{:e}", r.kkt_residual));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Iterates x_{k+1} = p(x_k) until ‖p(x_k) − x_k‖ ≤ ε* or `max_iter` steps.
/// Row k describes x_k and the step taken from it.
pub fn run_exact_iteration(
    problem: &AnalyticProblem,
    x0: &[f64],
    alpha: f64,
    h: f64,
    max_iter: usize,
    eps_star: f64,
) -> Result<Trace> {
    if x0.len() != problem.dim {
        return Err(Error::Argument(format!("start has dimension {}, expected {}", x0.len(), problem.dim)));
    }
    let v1_0 = (problem.v1)(x0);
    if v1_0 > 0.0 {
        return Err(Error::Argument(format!("start is infeasible: V1 = {v1_0}")));
    }
    let limit = (1.0 / alpha).min(1.0 / problem.l0).min(1.0 / problem.l1);
    if h >= limit {
        log::warn!("{}: h = {h} is not below min(1/α, 1/L0, 1/L1) = {limit}", problem.name);
    }
    let mut x = x0.to_vec();
    let mut rows = Vec::new();
    let mut converged = false;
    for k in 0..max_iter {
        let r = problem.update(&x, alpha, h)?;
        let u = if r.u_hat.is_finite() { r.u_hat } else { 0.0 };
        rows.push(TraceRow {
            k,
            x: x.clone(),
            v0: (problem.v0)(&x),
            v1: (problem.v1)(&x),
            step_norm: r.step_norm,
            u_hat: r.u_hat,
            branch: r.branch,
            kkt_residual: kkt_residual(problem, &x, u),
        });
        if r.step_norm <= eps_star {
            converged = true;
            break;
        }
        x = r.theta_next;
    }
    Ok(Trace { rows, converged, final_x: x })
}
