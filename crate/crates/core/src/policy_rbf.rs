//! Truncated-Gaussian policy with a tanh-weighted RBF mean.
//!
//! The mean is
//!
//! ```text
//! μ_θ(s)_k = center_k + halfwidth_k · Σ_i tanh(θ_{i,k}) · exp(−‖s − c_i‖² / (2σ²))
//! ```
//!
//! and actions are drawn from N(μ_θ(s), scale·I) restricted to the action
//! box, independently per dimension. Parameters are laid out center-major:
//! `theta[i * action_dim + k]` is θ_{i,k}.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{ActionBox, PolicyConstants, StochasticPolicy};
use crate::error::{Error, Result};
use crate::rng::EpisodeRng;
use crate::truncnorm::TruncatedNormal;

/// Sup of |tanh''|, attained at tanh(x)² = 1/3.
const TANH_SECOND_DERIV_MAX: f64 = 0.769_800_358_919_501;

/// Which state coordinates enter the RBF distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RbfDistance {
    /// First two coordinates only (the planar position).
    #[default]
    Position,
    FullState,
}

/// Regular product-grid layout of the centers, used to bound feature sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    /// Grid pitch along each distance coordinate.
    pub spacing: Vec<f64>,
    /// Number of centers sharing each distance-coordinate location
    /// (orientation layers when the distance ignores heading).
    pub multiplicity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfPolicy {
    pub state_dim: usize,
    /// Centers in full state coordinates.
    pub centers: Vec<Vec<f64>>,
    pub rbf_width: f64,
    /// Σ = cov_scale · I.
    pub cov_scale: f64,
    pub action_box: ActionBox,
    #[serde(default)]
    pub distance: RbfDistance,
    /// Include the log-normalizer gradient in the score.
    #[serde(default = "default_true")]
    pub normalizer_gradient: bool,
    #[serde(default)]
    pub grid: Option<GridLayout>,
}

fn default_true() -> bool {
    true
}

/// Cell centers of a product grid over `[lo_d, hi_d]` with `divisions[d]` cells.
pub fn grid_centers(lo: &[f64], hi: &[f64], divisions: &[usize]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for d in 0..lo.len() {
        let pitch = (hi[d] - lo[d]) / divisions[d] as f64;
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..divisions[d]).map(move |j| {
                    let mut p = prefix.clone();
                    p.push(lo[d] + (j as f64 + 0.5) * pitch);
                    p
                })
            })
            .collect();
    }
    out
}

impl RbfPolicy {
    pub fn new(
        state_dim: usize,
        centers: Vec<Vec<f64>>,
        rbf_width: f64,
        cov_scale: f64,
        action_box: ActionBox,
    ) -> Result<Self> {
        let p = RbfPolicy {
            state_dim,
            centers,
            rbf_width,
            cov_scale,
            action_box,
            distance: RbfDistance::Position,
            normalizer_gradient: true,
            grid: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Policy on a product grid over `[lo, hi]` with the given divisions per
    /// state coordinate.
    pub fn on_grid(
        lo: &[f64],
        hi: &[f64],
        divisions: &[usize],
        rbf_width: f64,
        cov_scale: f64,
        action_box: ActionBox,
        distance: RbfDistance,
    ) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != divisions.len() {
            return Err(Error::Config("grid bounds and divisions disagree in length".into()));
        }
        let state_dim = lo.len();
        let pitch: Vec<f64> =
            (0..state_dim).map(|d| (hi[d] - lo[d]) / divisions[d] as f64).collect();
        let used = match distance {
            RbfDistance::Position => 2.min(state_dim),
            RbfDistance::FullState => state_dim,
        };
        let multiplicity = divisions[used..].iter().product::<usize>().max(1);
        let mut p = RbfPolicy::new(
            state_dim,
            grid_centers(lo, hi, divisions),
            rbf_width,
            cov_scale,
            action_box,
        )?;
        p.distance = distance;
        p.grid = Some(GridLayout { spacing: pitch[..used].to_vec(), multiplicity });
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rbf_width > 0.0) || !(self.cov_scale > 0.0) {
            return Err(Error::Config("rbf width and covariance scale must be positive".into()));
        }
        if self.centers.is_empty() {
            return Err(Error::Config("policy needs at least one center".into()));
        }
        if self.centers.iter().any(|c| c.len() != self.state_dim) {
            return Err(Error::Config("every center must have state dimension".into()));
        }
        if self.distance == RbfDistance::Position && self.state_dim < 2 {
            return Err(Error::Config("position distance needs at least 2 state dims".into()));
        }
        Ok(())
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_box.dim()
    }

    pub fn dim(&self) -> usize {
        self.n_centers() * self.action_dim()
    }

    fn sd(&self) -> f64 {
        self.cov_scale.sqrt()
    }

    fn distance_dims(&self) -> usize {
        match self.distance {
            RbfDistance::Position => 2,
            RbfDistance::FullState => self.state_dim,
        }
    }

    /// RBF feature weights exp(−‖s − c_i‖²/(2σ²)), one per center.
    pub fn features(&self, state: &[f64]) -> Vec<f64> {
        let dims = self.distance_dims();
        let inv = 1.0 / (2.0 * self.rbf_width * self.rbf_width);
        self.centers
            .iter()
            .map(|c| {
                let d2: f64 = (0..dims).map(|j| (state[j] - c[j]).powi(2)).sum();
                (-d2 * inv).exp()
            })
            .collect()
    }

    /// Σ_i tanh(θ_{i,k}) w_i(s), before the affine map onto the box.
    fn raw_mean(&self, theta: &[f64], features: &[f64]) -> Vec<f64> {
        let m = self.action_dim();
        let mut out = vec![0.0; m];
        for (i, &w) in features.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += theta[i * m + k].tanh() * w;
            }
        }
        out
    }

    fn map_to_box(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(k, &r)| self.action_box.center(k) + self.action_box.halfwidth(k) * r)
            .collect()
    }

    pub fn mean(&self, theta: &[f64], state: &[f64]) -> Vec<f64> {
        self.map_to_box(&self.raw_mean(theta, &self.features(state)))
    }

    fn marginals(&self, mean: &[f64]) -> Vec<TruncatedNormal> {
        let sd = self.sd();
        mean.iter()
            .enumerate()
            .map(|(k, &mu)| {
                TruncatedNormal::new(mu, sd, self.action_box.lo[k], self.action_box.hi[k])
            })
            .collect()
    }

    /// Upper bound on sup_s Σ_i exp(−‖s − c_i‖² / (2 w²)).
    ///
    /// On a regular grid the sum is dominated by the full-lattice theta
    /// series, which peaks at a lattice point; otherwise N_c.
    pub fn feature_sum_bound(&self, width: f64) -> f64 {
        let Some(grid) = &self.grid else {
            return self.n_centers() as f64;
        };
        let per_axis = |pitch: f64| {
            let mut s = 1.0;
            for n in 1.. {
                let t = 2.0 * (-(n as f64 * pitch).powi(2) / (2.0 * width * width)).exp();
                s += t;
                if t < 1e-17 * s {
                    break;
                }
            }
            s
        };
        let lattice: f64 = grid.spacing.iter().map(|&p| per_axis(p)).product();
        (grid.multiplicity as f64 * lattice).min(self.n_centers() as f64)
    }

    /// Certified (L, B̃).
    ///
    /// With the normalizer gradient the μ-score is (a − E[a])/scale, both
    /// terms inside the box, so |score| ≤ width/scale independently of the
    /// mean and of N_c. Its μ-derivative is −Var[a]/scale², bounded by
    /// min(1/scale, width²/(4 scale²)).
    pub fn certify_constants(&self) -> PolicyConstants {
        let s2 = self.cov_scale;
        let feat_sum = self.feature_sum_bound(self.rbf_width);
        let feat_sq_sum = self.feature_sum_bound(self.rbf_width / std::f64::consts::SQRT_2);
        let mut grad_bound: f64 = 0.0;
        let mut lipschitz: f64 = 0.0;
        for k in 0..self.action_dim() {
            let hw = self.action_box.halfwidth(k);
            let width = self.action_box.width(k);
            let (score_max, curvature) = if self.normalizer_gradient {
                (width / s2, (1.0 / s2).min(width * width / (4.0 * s2 * s2)))
            } else {
                (hw * (1.0 + feat_sum) / s2, 1.0 / s2)
            };
            grad_bound = grad_bound.max(hw * score_max);
            lipschitz = lipschitz
                .max(hw * hw * curvature * feat_sq_sum + hw * score_max * TANH_SECOND_DERIV_MAX);
        }
        PolicyConstants { lipschitz_l: lipschitz, grad_bound }
    }
}

impl StochasticPolicy for RbfPolicy {
    fn param_dim(&self) -> usize {
        self.dim()
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_box.dim()
    }

    fn sample_action(&self, theta: &[f64], state: &[f64], rng: &mut EpisodeRng) -> Vec<f64> {
        self.marginals(&self.mean(theta, state))
            .iter()
            .map(|tn| tn.quantile(rng.random::<f64>()))
            .collect()
    }

    fn log_density(&self, theta: &[f64], state: &[f64], action: &[f64]) -> Result<f64> {
        if !self.action_box.contains(action) {
            return Err(Error::OutsideActionBox { action: action.to_vec() });
        }
        Ok(self
            .marginals(&self.mean(theta, state))
            .iter()
            .zip(action)
            .map(|(tn, &a)| tn.ln_pdf(a))
            .sum())
    }

    fn score(&self, theta: &[f64], state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if !self.action_box.contains(action) {
            return Err(Error::OutsideActionBox { action: action.to_vec() });
        }
        let m = self.action_dim();
        let features = self.features(state);
        let mean = self.map_to_box(&self.raw_mean(theta, &features));
        let dmu: Vec<f64> = self
            .marginals(&mean)
            .iter()
            .zip(action)
            .enumerate()
            .map(|(k, (tn, &a))| {
                let d = if self.normalizer_gradient {
                    tn.d_ln_pdf_d_mu(a)
                } else {
                    tn.d_ln_pdf_d_mu_untruncated(a)
                };
                d * self.action_box.halfwidth(k)
            })
            .collect();
        let mut grad = vec![0.0; self.dim()];
        for (i, &w) in features.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for k in 0..m {
                let t = theta[i * m + k].tanh();
                grad[i * m + k] = dmu[k] * (1.0 - t * t) * w;
            }
        }
        Ok(grad)
    }

    fn constants(&self) -> PolicyConstants {
        self.certify_constants()
    }
}

/// A policy together with its parameter vector; the checkpoint unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub d: usize,
    pub n_centers: usize,
    pub policy: RbfPolicy,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(policy: RbfPolicy, theta: Vec<f64>) -> Result<Self> {
        let p = PolicyParams { d: policy.dim(), n_centers: policy.n_centers(), policy, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(policy: RbfPolicy) -> Self {
        let theta = vec![0.0; policy.dim()];
        PolicyParams { d: policy.dim(), n_centers: policy.n_centers(), policy, theta }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.d != self.policy.dim()
            || self.n_centers != self.policy.n_centers()
            || self.theta.len() != self.d
        {
            return Err(Error::Config(format!(
                "checkpoint declares d={} N_c={} but holds {} parameters for {} centers",
                self.d,
                self.n_centers,
                self.theta.len(),
                self.policy.n_centers()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: PolicyParams = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single_center(scale: f64) -> RbfPolicy {
        RbfPolicy::new(2, vec![vec![0.0, 0.0]], 1.0, scale, ActionBox::symmetric(5.0, 2)).unwrap()
    }

    fn small_grid() -> RbfPolicy {
        RbfPolicy::on_grid(
            &[0.0, 0.0],
            &[2.0, 2.0],
            &[3, 3],
            0.6,
            0.5,
            ActionBox::new(vec![0.0, -0.4], vec![5.0, 0.4]).unwrap(),
            RbfDistance::Position,
        )
        .unwrap()
    }

    #[test]
    fn zero_theta_gives_box_center() {
        let p = small_grid();
        let theta = vec![0.0; p.dim()];
        for s in [[0.1, 0.3], [1.9, 0.2], [55.0, -3.0]] {
            let mu = p.mean(&theta, &s);
            assert_relative_eq!(mu[0], 2.5, epsilon = 1e-15);
            assert_relative_eq!(mu[1], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_center_mean() {
        let p = single_center(0.5);
        let w: f64 = 0.8;
        let mu = p.mean(&[w, 0.0], &[0.0, 0.0]);
        assert_relative_eq!(mu[0], 5.0 * w.tanh(), epsilon = 1e-14);
        assert_eq!(mu[1], 0.0);
    }

    #[test]
    fn far_state_gives_box_center() {
        let p = single_center(0.5);
        let mu = p.mean(&[3.0, -2.0], &[1e3, 1e3]);
        assert_eq!(mu, vec![0.0, 0.0]);
    }

    #[test]
    fn samples_stay_in_box_and_repeat() {
        let p = small_grid();
        let theta: Vec<f64> = (0..p.dim()).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let mut r1 = seeded_rng(5);
        let mut r2 = seeded_rng(5);
        for _ in 0..1000 {
            let a = p.sample_action(&theta, &[0.5, 1.5], &mut r1);
            assert!(p.action_box.contains(&a));
            assert_eq!(a, p.sample_action(&theta, &[0.5, 1.5], &mut r2));
        }
    }

    #[test]
    fn tiny_covariance_collapses_to_mean() {
        let p = single_center(1e-12);
        let mut rng = seeded_rng(1);
        let a = p.sample_action(&[0.5, -0.3], &[0.0, 0.0], &mut rng);
        let mu = p.mean(&[0.5, -0.3], &[0.0, 0.0]);
        assert!((a[0] - mu[0]).abs() < 1e-4 && (a[1] - mu[1]).abs() < 1e-4);
    }

    #[test]
    fn empirical_mean_matches_truncated_moment() {
        // Wide box: the truncated mean is essentially μ.
        let p = RbfPolicy::new(2, vec![vec![0.0, 0.0]], 1.0, 0.5, ActionBox::symmetric(50.0, 2))
            .unwrap();
        let theta = [0.01, -0.02];
        let mu = p.mean(&theta, &[0.2, 0.1]);
        let n = 100_000;
        let mut rng = seeded_rng(17);
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let a = p.sample_action(&theta, &[0.2, 0.1], &mut rng);
            acc[0] += a[0];
            acc[1] += a[1];
        }
        let se = (0.5f64 / n as f64).sqrt();
        for k in 0..2 {
            assert!((acc[k] / n as f64 - mu[k]).abs() < 3.0 * se, "dim {k}");
        }
    }

    #[test]
    fn score_matches_untruncated_for_wide_box() {
        let p = RbfPolicy::new(2, vec![vec![0.0, 0.0], vec![1.0, 0.0]], 1.0, 0.5, ActionBox::symmetric(60.0, 2))
            .unwrap();
        let theta = [0.3, -0.2, 0.1, 0.4];
        let s = [0.4, 0.2];
        let a = [3.0, -2.0];
        let g = p.score(&theta, &s, &a).unwrap();
        let mu = p.mean(&theta, &s);
        let w = p.features(&s);
        for i in 0..2 {
            for k in 0..2 {
                let t = theta[i * 2 + k].tanh();
                let expect = (a[k] - mu[k]) / 0.5 * 60.0 * (1.0 - t * t) * w[i];
                assert_relative_eq!(g[i * 2 + k], expect, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn symmetric_truncation_at_mean_gives_zero_score() {
        let p = single_center(0.5);
        let a = p.mean(&[0.0, 0.0], &[0.0, 0.0]);
        let g = p.score(&[0.0, 0.0], &[0.0, 0.0], &a).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn score_outside_box_is_domain_error() {
        let p = single_center(0.5);
        assert!(matches!(
            p.score(&[0.0, 0.0], &[0.0, 0.0], &[6.0, 0.0]),
            Err(Error::OutsideActionBox { .. })
        ));
    }

    #[test]
    fn score_matches_central_differences() {
        let p = small_grid();
        let mut rng = seeded_rng(2024);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s = [rng.random_range(-0.5..2.5), rng.random_range(-0.5..2.5)];
            let a = p.sample_action(&theta, &s, &mut rng);
            let g = p.score(&theta, &s, &a).unwrap();
            let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-3);
            for j in 0..p.dim() {
                let h = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (p.log_density(&tp, &s, &a).unwrap() - p.log_density(&tm, &s, &a).unwrap())
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * scale, "j={j} fd={fd} score={}", g[j]);
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // Composite Simpson on the 2D box.
        let p = small_grid();
        let theta: Vec<f64> = (0..p.dim()).map(|i| 1.5 - 0.4 * i as f64).collect();
        let s = [0.7, 1.2];
        let n = 1000;
        let (lo, hi) = (&p.action_box.lo, &p.action_box.hi);
        let hx = (hi[0] - lo[0]) / n as f64;
        let hy = (hi[1] - lo[1]) / n as f64;
        let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let a = [lo[0] + i as f64 * hx, lo[1] + j as f64 * hy];
                total += w(i) * w(j) * p.log_density(&theta, &s, &a).unwrap().exp();
            }
        }
        total *= hx * hy / 9.0;
        assert!((total - 1.0).abs() < 1e-6, "total = {total}");
    }

    #[test]
    fn density_positive_in_box() {
        let p = single_center(0.5);
        for a in [[-5.0, -5.0], [5.0, 5.0], [0.0, 4.99]] {
            assert!(p.log_density(&[9.0, -9.0], &[0.0, 0.0], &a).unwrap().is_finite());
        }
    }

    #[test]
    fn certified_grad_bound_dominates_random_search() {
        let p = single_center(0.5);
        let c = p.certify_constants();
        assert_relative_eq!(c.grad_bound, 100.0);
        let mut rng = seeded_rng(3);
        let mut worst: f64 = 0.0;
        for _ in 0..1_000_000 {
            let theta = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            for g in p.score(&theta, &s, &a).unwrap() {
                worst = worst.max(g.abs());
            }
        }
        assert!(worst <= c.grad_bound, "worst {worst}");
    }

    #[test]
    fn wider_box_never_decreases_grad_bound() {
        let mut prev = 0.0;
        for hw in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let p = RbfPolicy::new(2, vec![vec![0.0, 0.0]], 1.0, 0.5, ActionBox::symmetric(hw, 2))
                .unwrap();
            let b = p.certify_constants().grad_bound;
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn doubling_centers_keeps_grad_bound() {
        let one = single_center(0.5);
        let mut two = one.clone();
        two.centers.push(vec![7.0, -3.0]);
        assert_eq!(one.certify_constants().grad_bound, two.certify_constants().grad_bound);
        let big = RbfPolicy::on_grid(&[0.0, 0.0], &[10.0, 10.0], &[20, 20], 0.25, 0.5,
            ActionBox::symmetric(5.0, 2), RbfDistance::Position).unwrap();
        let bigger = RbfPolicy::on_grid(&[0.0, 0.0], &[10.0, 10.0], &[40, 20], 0.25, 0.5,
            ActionBox::symmetric(5.0, 2), RbfDistance::Position).unwrap();
        assert_eq!(big.certify_constants().grad_bound, bigger.certify_constants().grad_bound);
    }

    #[test]
    fn lipschitz_bound_dominates_finite_difference_hessian() {
        let p = small_grid();
        let l = p.certify_constants().lipschitz_l;
        let mut rng = seeded_rng(8);
        for _ in 0..200 {
            let theta: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dir: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let a = p.sample_action(&theta, &s, &mut rng);
            let step = 1e-4;
            let moved: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d / norm).collect();
            let g0 = p.score(&theta, &s, &a).unwrap();
            let g1 = p.score(&moved, &s, &a).unwrap();
            let diff = g0.iter().zip(&g1).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(diff / step <= l * (1.0 + 1e-6), "ratio {} > L {l}", diff / step);
        }
    }

    #[test]
    fn lattice_feature_bound_dominates_sampled_sums() {
        let p = RbfPolicy::on_grid(&[0.0, 0.0], &[10.0, 10.0], &[20, 20], 0.25, 0.5,
            ActionBox::symmetric(5.0, 2), RbfDistance::Position).unwrap();
        let bound = p.feature_sum_bound(p.rbf_width);
        let mut rng = seeded_rng(4);
        for _ in 0..5000 {
            let s = [rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0)];
            assert!(p.features(&s).iter().sum::<f64>() <= bound);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = small_grid();
        let theta: Vec<f64> = (0..p.dim()).map(|i| (i as f64).sqrt() / 3.0 - 0.1).collect();
        let params = PolicyParams::new(p, theta).unwrap();
        let back = PolicyParams::from_json(&params.to_json().unwrap()).unwrap();
        assert_eq!(back, params);
        for (a, b) in back.theta.iter().zip(&params.theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn inconsistent_checkpoint_rejected() {
        let mut params = PolicyParams::zeros(single_center(0.5));
        params.theta.push(1.0);
        assert!(PolicyParams::from_json(&params.to_json().unwrap()).is_err());
    }

    #[test]
    fn full_state_distance_uses_heading() {
        let mut p = RbfPolicy::new(3, vec![vec![0.0, 0.0, 0.0]], 1.0, 0.5,
            ActionBox::symmetric(1.0, 2)).unwrap();
        let pos = p.features(&[0.0, 0.0, 2.0])[0];
        p.distance = RbfDistance::FullState;
        let full = p.features(&[0.0, 0.0, 2.0])[0];
        assert_eq!(pos, 1.0);
        assert_relative_eq!(full, (-2.0f64).exp(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn mean_is_lipschitz_in_each_parameter(
            base in proptest::collection::vec(-3.0f64..3.0, 18),
            j in 0usize..18,
            delta in -2.0f64..2.0,
            sx in 0.0f64..2.0,
            sy in 0.0f64..2.0,
        ) {
            let p = small_grid();
            let s = [sx, sy];
            let mut moved = base.clone();
            moved[j] += delta;
            let a = p.mean(&base, &s);
            let b = p.mean(&moved, &s);
            let (i, k) = (j / 2, j % 2);
            let w = p.features(&s)[i];
            let hw = p.action_box.halfwidth(k);
            prop_assert!((a[k] - b[k]).abs() <= hw * w * delta.abs() + 1e-12);
            prop_assert_eq!(a[1 - k], b[1 - k]);
        }
    }
}
