//! Randomized verification of the power-method gradients.
//!
//! Each trial draws a random positive column-stochastic matrix and compares
//! the analytic gradient against central finite differences and against the
//! unrolled gradient. A second, clustered matrix with a real spectrum and a
//! controlled gap checks that `‖γᵀ J_αᵏ‖` decays geometrically at rate
//! `|λ₂|/λ₁`.

use serde::{Deserialize, Serialize};

use crate::adjacency::AdjacencyMatrix;
use crate::eigencentrality::{power_method, PowerConfig};
use crate::error::Result;
use crate::numerics::{column_softmax, dot, finite_diff_grad, l2_norm, relative_error, Matrix, Rng};
use crate::powergrad::{analytic_grad_a, grad_wrt_init_z, spectral_diag, unrolled_grad_a};

pub const FD_THRESHOLD: f64 = 1e-5;
pub const UNROLL_THRESHOLD: f64 = 1e-8;
pub const INIT_GRAD_THRESHOLD: f64 = 1e-8;
pub const MAX_GAP_RATIO: f64 = 0.9;
pub const RATIO_TOLERANCE: f64 = 0.10;
pub const MIN_R2: f64 = 0.99;
/// Curve values below this fraction of the step-1 norm are left out of the
/// decay fit.
pub const DECAY_FLOOR: f64 = 1e-250;
/// Series depth cap for the finite-difference comparison; the series stops
/// earlier once its terms vanish.
pub const FULL_SERIES_DEPTH: usize = 100_000;

/// Column softmax of `N(0, scale²)` scores: strictly positive and
/// column-stochastic.
pub fn random_stochastic(n: usize, scale: f64, rng: &mut Rng) -> AdjacencyMatrix {
    AdjacencyMatrix::new(column_softmax(&rng.normal_matrix(n, n, scale))).expect("softmax output is positive")
}

/// `K · diag(1/colsum K)` for a symmetric positive `K` with two nearly
/// constant blocks. Similar to a symmetric matrix, so its spectrum is real;
/// the between-block coupling sets `λ₂` and the small within-block jitter
/// keeps `λ₃, …` far below it. Redraws until `|λ₂|/λ₁ ≤ max_ratio`.
pub fn clustered_stochastic(n: usize, max_ratio: f64, rng: &mut Rng) -> Result<(AdjacencyMatrix, f64)> {
    loop {
        let split = if n > 1 { 1 + rng.below(n - 1) } else { 1 };
        let coupling = rng.uniform_range(0.05, 0.6);
        let noise = 0.1;
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let base = if (i < split) == (j < split) { 1.0 } else { coupling };
                let v = base * (noise * rng.normal()).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let sums = k.col_sums();
        let a = AdjacencyMatrix::new(Matrix::from_fn(n, n, |i, j| k[(i, j)] / sums[j]))?;
        let ratio = spectral_diag(&a)?.lambda2_over_lambda1;
        if ratio <= max_ratio {
            return Ok((a, ratio));
        }
    }
}

/// `α` after a long fixed-length run, smooth in the matrix entries.
pub fn smooth_alpha(m: &Matrix) -> Vec<f64> {
    let a = AdjacencyMatrix::new(m.clone()).expect("probe stays positive");
    power_method(&a, &PowerConfig::fixed_steps(1000)).expect("finite").alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub ratio: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least-squares fit of `ln curve[k] ≈ a + k ln r` over `k ≥ start`, stopping
/// once the curve falls below `floor · curve[start]`. `None` with fewer than
/// three usable points.
pub fn geometric_fit(curve: &[f64], start: usize, floor: f64) -> Option<GeometricFit> {
    let c0 = *curve.get(start)?;
    if !(c0 > 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .enumerate()
        .skip(start)
        .take_while(|(_, &c)| c > floor * c0)
        .map(|(k, &c)| (k as f64, c.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Some(GeometricFit {
        ratio: slope.exp(),
        r2,
        points: pts.len(),
    })
}

/// Geometric fit over the second half of the curve above the floor, past the
/// faster transients of the lower modes.
pub fn decay_fit(curve: &[f64]) -> Option<GeometricFit> {
    let c1 = *curve.get(1)?;
    let usable = 1 + curve[1..].iter().take_while(|&&c| c > DECAY_FLOOR * c1).count();
    let start = usable.div_ceil(2);
    geometric_fit(&curve[..usable], start, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub n: usize,
    pub lambda2_over_lambda1: f64,
    pub final_norm: f64,
    pub fit: Option<GeometricFit>,
    pub curve: Vec<f64>,
}

impl DecayReport {
    pub fn ratio_error(&self) -> f64 {
        match self.fit {
            Some(f) if self.lambda2_over_lambda1 > 0.0 => {
                (f.ratio - self.lambda2_over_lambda1).abs() / self.lambda2_over_lambda1
            }
            _ => f64::INFINITY,
        }
    }

    pub fn passes(&self) -> bool {
        self.final_norm <= INIT_GRAD_THRESHOLD
            && self.ratio_error() <= RATIO_TOLERANCE
            && self.fit.is_some_and(|f| f.r2 >= MIN_R2)
    }
}

/// `∂L/∂z` decay on one clustered instance of size `n`.
pub fn decay_trial(n: usize, rng: &mut Rng) -> Result<DecayReport> {
    let (a, ratio) = clustered_stochastic(n, MAX_GAP_RATIO, rng)?;
    let gamma = rng.normal_vec(n, 1.0);
    let (gz, curve) = grad_wrt_init_z(&a, &PowerConfig::default(), &gamma)?;
    Ok(DecayReport {
        n,
        lambda2_over_lambda1: ratio,
        final_norm: l2_norm(&gz),
        fit: decay_fit(&curve),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub n: usize,
    /// Relative Frobenius error, analytic vs finite differences.
    pub fd_rel_err: f64,
    /// Max absolute difference, analytic (depth 20) vs unrolled (20 steps).
    pub unrolled_abs_err: f64,
    pub decay: DecayReport,
}

impl Trial {
    pub fn passes(&self) -> bool {
        self.fd_rel_err <= FD_THRESHOLD && self.unrolled_abs_err <= UNROLL_THRESHOLD && self.decay.passes()
    }
}

/// One trial; sizes are drawn from `2..=n_max`.
pub fn run_trial(seed: u64, trial: usize, n_max: usize) -> Result<Trial> {
    let mut rng = Rng::derive(seed, &[trial as u64]);
    let n = 2 + rng.below(n_max.max(2) - 1);
    let a = random_stochastic(n, 1.0, &mut rng);
    let gamma = rng.normal_vec(n, 1.0);

    let cfg = PowerConfig::default();
    let eig = power_method(&a, &cfg)?;
    let analytic = analytic_grad_a(&a, &eig, &gamma, FULL_SERIES_DEPTH)?;
    let fd = finite_diff_grad(|m| dot(&gamma, &smooth_alpha(m)), a.matrix(), 1e-6);
    let fd_rel_err = relative_error(analytic.data(), fd.data(), 1e-12);

    let un = unrolled_grad_a(&a, &cfg, &gamma)?;
    let an20 = analytic_grad_a(&a, &un.eig, &gamma, cfg.grad_steps)?;
    let unrolled_abs_err = un.grad.sub(&an20).max_abs();

    let decay = decay_trial(n, &mut rng)?;
    Ok(Trial {
        trial,
        n,
        fd_rel_err,
        unrolled_abs_err,
        decay,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub max_fd_rel_err: f64,
    pub max_unrolled_abs_err: f64,
    pub max_init_grad_norm: f64,
    pub max_ratio_err: f64,
    pub min_r2: f64,
    pub passed: bool,
}

pub fn summarize(trials: &[Trial]) -> Summary {
    let fold = |f: &dyn Fn(&Trial) -> f64| trials.iter().map(f).fold(0.0, f64::max);
    Summary {
        trials: trials.len(),
        max_fd_rel_err: fold(&|t| t.fd_rel_err),
        max_unrolled_abs_err: fold(&|t| t.unrolled_abs_err),
        max_init_grad_norm: fold(&|t| t.decay.final_norm),
        max_ratio_err: fold(&|t| t.decay.ratio_error()),
        min_r2: trials
            .iter()
            .map(|t| t.decay.fit.map_or(f64::NEG_INFINITY, |f| f.r2))
            .fold(f64::INFINITY, f64::min),
        passed: trials.iter().all(Trial::passes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_fit_recovers_rate() {
        let curve: Vec<f64> = (0..60).map(|k| 3.0 * 0.7f64.powi(k)).collect();
        let f = geometric_fit(&curve, 1, 1e-10).unwrap();
        assert!((f.ratio - 0.7).abs() < 1e-12);
        assert!(f.r2 > 1.0 - 1e-12);
        assert!(geometric_fit(&[1.0, 0.0, 0.0], 0, 1e-10).is_none());
    }

    #[test]
    fn clustered_instances_have_bounded_gap() {
        let mut rng = Rng::new(1);
        for n in 2..10 {
            let (a, r) = clustered_stochastic(n, 0.9, &mut rng).unwrap();
            assert!(r <= 0.9);
            assert!(a.stochastic_defect() < 1e-12);
        }
    }

    #[test]
    fn default_trials_pass() {
        let trials: Vec<Trial> = (0..10).map(|t| run_trial(7, t, 8).unwrap()).collect();
        let s = summarize(&trials);
        assert!(s.passed, "{s:?}");
    }
}
