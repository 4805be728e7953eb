//! Dominant eigenpair of a strictly positive matrix by the power method.
//!
//! The iteration is the classic normalized one:
//!
//! ```text
//! y = z
//! repeat
//!     α = y / ‖y‖₂
//!     y = A α
//!     θ = αᵀ y
//! until ‖y − θ α‖₂ ≤ ε |θ|
//! ```
//!
//! No per-step state is kept; the gradient phase lives in [`crate::powergrad`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adjacency::AdjacencyMatrix;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, Rng};

/// Starting vector of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerInit {
    /// `z = (1, …, 1)`. Deterministic, and never orthogonal to the Perron vector.
    #[default]
    AllOnes,
    /// `z_i ~ U(0.5, 1.5)` from the given seed.
    SeededPositiveUniform(u64),
}

impl PowerInit {
    pub fn vector(&self, n: usize) -> Vec<f64> {
        match *self {
            PowerInit::AllOnes => vec![1.0; n],
            PowerInit::SeededPositiveUniform(seed) => {
                let mut rng = Rng::new(seed);
                (0..n).map(|_| rng.uniform_range(0.5, 1.5)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    /// Relative stop tolerance on the eigen-residual.
    pub epsilon: f64,
    /// Iteration cap of the convergence phase.
    pub max_converge_steps: usize,
    /// Length of the gradient phase (extra recorded steps, or series depth).
    pub grad_steps: usize,
    pub init: PowerInit,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            epsilon: 1e-10,
            max_converge_steps: 200,
            grad_steps: 20,
            init: PowerInit::AllOnes,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("power epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_converge_steps == 0 {
            return Err(Error::InvalidConfig("max_converge_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// A configuration that effectively never stops early: the iterate is
    /// driven to machine precision over a fixed number of steps. Used where
    /// the forward map must be smooth in `A` (finite-difference oracles).
    pub fn fixed_steps(steps: usize) -> Self {
        PowerConfig {
            epsilon: f64::MIN_POSITIVE,
            max_converge_steps: steps,
            ..PowerConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    /// Unit 2-norm, all-positive dominant eigenvector.
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub steps_taken: usize,
    pub converged: bool,
}

impl EigenPair {
    /// `‖A α − λ α‖₂`.
    pub fn residual(&self, a: &AdjacencyMatrix) -> f64 {
        let y = a.matrix().mul_vec(&self.alpha);
        l2_norm(&y.iter().zip(&self.alpha).map(|(yi, ai)| yi - self.lambda * ai).collect::<Vec<_>>())
    }
}

/// Runs the power method on a strictly positive matrix.
///
/// Returns the last normalized iterate `α` and `λ = θ` from that step. When
/// `max_converge_steps` runs out the current iterate is returned with
/// `converged = false`.
pub fn power_method(a: &AdjacencyMatrix, cfg: &PowerConfig) -> Result<EigenPair> {
    cfg.validate()?;
    let m = a.matrix();
    let n = a.n();
    let mut y = cfg.init.vector(n);
    let mut alpha = vec![0.0; n];
    let mut theta = 0.0;
    let mut steps = 0;
    let mut converged = false;
    while steps < cfg.max_converge_steps {
        let norm = l2_norm(&y);
        for (ai, yi) in alpha.iter_mut().zip(&y) {
            *ai = yi / norm;
        }
        y = m.mul_vec(&alpha);
        theta = dot(&alpha, &y);
        steps += 1;
        let resid = y
            .iter()
            .zip(&alpha)
            .map(|(yi, ai)| (yi - theta * ai).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid <= cfg.epsilon * theta.abs() {
            converged = true;
            break;
        }
    }
    if !alpha.iter().all(|v| v.is_finite()) || !theta.is_finite() {
        return Err(Error::Divergence("power method produced a non-finite iterate".into()));
    }
    Ok(EigenPair {
        alpha,
        lambda: theta,
        steps_taken: steps,
        converged,
    })
}

/// Distribution of power-method step counts over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeHistogram {
    /// Step count → number of matrices that stopped after that many steps.
    pub counts: BTreeMap<usize, usize>,
    pub total: usize,
    pub unconverged: usize,
    pub max_converge_steps: usize,
    pub epsilon: f64,
}

impl ConvergeHistogram {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a EigenPair>, cfg: &PowerConfig) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        let mut unconverged = 0;
        for p in pairs {
            *counts.entry(p.steps_taken).or_insert(0) += 1;
            total += 1;
            if !p.converged {
                unconverged += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(ConvergeHistogram {
            counts,
            total,
            unconverged,
            max_converge_steps: cfg.max_converge_steps,
            epsilon: cfg.epsilon,
        })
    }

    /// Smallest step count `s` such that at least `q` of the mass is at or
    /// below `s`.
    pub fn quantile(&self, q: f64) -> usize {
        let need = (q * self.total as f64).ceil().max(1.0) as usize;
        let mut seen = 0;
        for (&steps, &c) in &self.counts {
            seen += c;
            if seen >= need {
                return steps;
            }
        }
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn median(&self) -> usize {
        self.quantile(0.5)
    }

    /// Fraction of matrices that converged in strictly fewer than `steps`.
    pub fn fraction_converged_below(&self, steps: usize) -> f64 {
        // An unconverged run always reports `max_converge_steps`, so it is
        // excluded whenever `steps <= max_converge_steps`.
        let below: usize = self.counts.range(..steps).map(|(_, c)| c).sum();
        let below = if steps > self.max_converge_steps { below - self.unconverged } else { below };
        below as f64 / self.total as f64
    }
}

/// Runs the power method over a batch and histograms the step counts.
/// Matrices are processed in parallel; the result does not depend on the
/// thread count.
pub fn converge_stats(batch: &[AdjacencyMatrix], cfg: &PowerConfig) -> Result<ConvergeHistogram> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::EmptySequence);
    }
    let pairs = batch
        .par_iter()
        .map(|a| power_method(a, cfg))
        .collect::<Result<Vec<_>>>()?;
    ConvergeHistogram::from_pairs(&pairs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{column_softmax, Matrix};
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn adj(rows: &[&[f64]]) -> AdjacencyMatrix {
        AdjacencyMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn random_stochastic(n: usize, rng: &mut Rng) -> AdjacencyMatrix {
        AdjacencyMatrix::new(column_softmax(&rng.normal_matrix(n, n, 1.0))).unwrap()
    }

    #[test]
    fn uniform_two_by_two() {
        let a = adj(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let e = power_method(&a, &PowerConfig::default()).unwrap();
        assert!((e.alpha[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((e.alpha[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((e.lambda - 1.0).abs() < 1e-15);
        assert_eq!(e.steps_taken, 1);
        assert!(e.converged);
    }

    #[test]
    fn closed_form_two_by_two() {
        // (A − I)v = 0 gives v ∝ (2, 1).
        let a = adj(&[&[0.9, 0.2], &[0.1, 0.8]]);
        let e = power_method(&a, &PowerConfig::default()).unwrap();
        assert!(e.converged);
        assert!((e.alpha[0] - 2.0 / 5f64.sqrt()).abs() < 1e-9);
        assert!((e.alpha[1] - 1.0 / 5f64.sqrt()).abs() < 1e-9);
        assert!((e.lambda - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_case() {
        let a = adj(&[&[1.0]]);
        let e = power_method(&a, &PowerConfig::default()).unwrap();
        assert_eq!(e.alpha, vec![1.0]);
        assert_eq!(e.lambda, 1.0);
    }

    #[test]
    fn rejects_non_positive_matrix() {
        assert!(matches!(
            AdjacencyMatrix::new(Matrix::from_rows(&[[0.5, 0.0], [0.5, 1.0]]).unwrap()),
            Err(Error::NotPositive { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let a = adj(&[&[1.0]]);
        let cfg = PowerConfig { epsilon: 0.0, ..Default::default() };
        assert!(power_method(&a, &cfg).is_err());
        let cfg = PowerConfig { max_converge_steps: 0, ..Default::default() };
        assert!(power_method(&a, &cfg).is_err());
    }

    #[test]
    fn exhausted_budget_is_flagged_not_fatal() {
        let mut rng = Rng::new(3);
        let a = random_stochastic(10, &mut rng);
        let cfg = PowerConfig { max_converge_steps: 2, ..Default::default() };
        let e = power_method(&a, &cfg).unwrap();
        assert!(!e.converged);
        assert_eq!(e.steps_taken, 2);
        assert!((l2_norm(&e.alpha) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_init_reaches_same_vector() {
        let mut rng = Rng::new(4);
        let a = random_stochastic(8, &mut rng);
        let e1 = power_method(&a, &PowerConfig::default()).unwrap();
        let cfg = PowerConfig { init: PowerInit::SeededPositiveUniform(99), ..Default::default() };
        let e2 = power_method(&a, &cfg).unwrap();
        for (x, y) in e1.alpha.iter().zip(&e2.alpha) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_with_all_ones() {
        let mut rng = Rng::new(5);
        let a = random_stochastic(17, &mut rng);
        let e1 = power_method(&a, &PowerConfig::default()).unwrap();
        let e2 = power_method(&a, &PowerConfig::default()).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn scale_covariance() {
        let mut rng = Rng::new(6);
        let a = random_stochastic(9, &mut rng);
        let e = power_method(&a, &PowerConfig::default()).unwrap();
        for c in [0.5, 2.0] {
            let ec = power_method(&a.scaled(c), &PowerConfig::default()).unwrap();
            for (x, y) in e.alpha.iter().zip(&ec.alpha) {
                assert!((x - y).abs() < 1e-14);
            }
            assert!((ec.lambda - c * e.lambda).abs() < 1e-14);
        }
    }

    #[test]
    fn geometric_error_decay() {
        // Iterate error against a long reference shrinks by about λ₂/λ₁ per
        // step. The 2×2 closed form has λ₂/λ₁ = 0.7.
        let a = adj(&[&[0.9, 0.2], &[0.1, 0.8]]);
        let reference = power_method(&a, &PowerConfig::fixed_steps(10_000)).unwrap();
        let errs: Vec<f64> = (5..25)
            .map(|k| {
                let e = power_method(&a, &PowerConfig::fixed_steps(k)).unwrap();
                l2_norm(&crate::numerics::sub(&e.alpha, &reference.alpha))
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio - 0.7).abs() < 0.01, "ratio {ratio}");
        }
    }

    #[test]
    fn histogram_of_uniform_matrix() {
        let a = adj(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let h = converge_stats(&[a], &PowerConfig::default()).unwrap();
        assert_eq!(h.counts.get(&1), Some(&1));
        assert_eq!(h.total, 1);
        assert_eq!(h.median(), 1);
        assert!(converge_stats(&[], &PowerConfig::default()).is_err());
    }

    #[test]
    fn histogram_random_batch() {
        let mut rng = Rng::new(7);
        let batch: Vec<_> = (0..1000).map(|_| random_stochastic(10, &mut rng)).collect();
        let h = converge_stats(&batch, &PowerConfig::default()).unwrap();
        assert_eq!(h.counts.values().sum::<usize>(), 1000);
        assert!(h.fraction_converged_below(200) > 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn stochastic_eigenpair_invariants(n in 2usize..64, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random_stochastic(n, &mut rng);
            let cfg = PowerConfig::default();
            let e = power_method(&a, &cfg).unwrap();
            prop_assert!(e.converged);
            prop_assert!((l2_norm(&e.alpha) - 1.0).abs() < 1e-12);
            prop_assert!(e.alpha.iter().all(|v| *v > 0.0));
            prop_assert!(e.residual(&a) <= cfg.epsilon * e.lambda.abs());
            prop_assert!((e.lambda - 1.0).abs() < 1e-8);
        }
    }
}
