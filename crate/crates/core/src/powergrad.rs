//! Gradients through the power method.
//!
//! At a converged eigenpair `(α, λ)` of `A`, one normalized power step
//! `α' = Aα / ‖Aα‖₂` has Jacobians
//!
//! ```text
//! J_α = (A − ααᵀA) / λ                                  (n × n)
//! ∂α_p/∂A_qr = (𝟙[p = q] α_r − α_p α_q α_r) / λ         (n × n × n, J_A)
//! ```
//!
//! and the loss gradient with respect to `A` is the series
//! `∂L/∂A = Σ_k γᵀ J_αᵏ J_A` with `γ = ∂L/∂α`. The series is summed in
//! reverse mode: a running cotangent `c_{k+1} = J_αᵀ c_k` starting at `γ`.
//! `J_A` is only ever contracted with a cotangent, so memory stays `O(n²)`
//! whatever the truncation depth.
//!
//! [`unrolled_grad_a`] is the alternative that records a short window of
//! real iterates after convergence and backpropagates through them.

use serde::{Deserialize, Serialize};

use crate::adjacency::AdjacencyMatrix;
use crate::eigencentrality::{power_method, EigenPair, PowerConfig};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, l2_norm, Matrix, Rng};

/// Incremental terms below this norm stop the series early.
pub const SERIES_TOLERANCE: f64 = 1e-12;

/// Default truncation depth of the gradient series.
pub const DEFAULT_TRUNC_K: usize = 20;

/// `J_α = (A − ααᵀA) / λ`.
pub fn jac_wrt_alpha(a: &AdjacencyMatrix, eig: &EigenPair) -> Result<Matrix> {
    check_lambda(eig)?;
    let m = a.matrix();
    // αᵀA as a row vector.
    let at_alpha = m.mul_vec_t(&eig.alpha);
    let mut j = m.clone();
    j.add_outer(-1.0, &eig.alpha, &at_alpha);
    j.scale(1.0 / eig.lambda);
    Ok(j)
}

/// Contracts a cotangent on `α` with `J_A`:
/// `G_qr = (c_q α_r − (c·α) α_q α_r) / λ`.
pub fn jac_wrt_a_apply(cotangent: &[f64], eig: &EigenPair) -> Result<Matrix> {
    check_lambda(eig)?;
    let n = eig.alpha.len();
    if cotangent.len() != n {
        return Err(Error::dims("jac_wrt_a_apply", n, cotangent.len()));
    }
    let ca = dot(cotangent, &eig.alpha);
    let left: Vec<f64> = cotangent
        .iter()
        .zip(&eig.alpha)
        .map(|(c, a)| (c - ca * a) / eig.lambda)
        .collect();
    let mut g = Matrix::zeros(n, n);
    g.add_outer(1.0, &left, &eig.alpha);
    Ok(g)
}

fn check_lambda(eig: &EigenPair) -> Result<()> {
    if !(eig.lambda > 0.0) {
        return Err(Error::Divergence(format!("dominant eigenvalue must be positive, got {}", eig.lambda)));
    }
    Ok(())
}

/// Reverse-mode state of the gradient series.
#[derive(Debug, Clone)]
pub struct BackwardState {
    pub gamma: Vec<f64>,
    pub jac_alpha: Matrix,
    pub trunc_k: usize,
    /// `(J_αᵀ)ᵏ γ` for the current `k`.
    pub running_cotangent: Vec<f64>,
    /// Index `k` of `running_cotangent`.
    pub k: usize,
}

impl BackwardState {
    pub fn new(a: &AdjacencyMatrix, eig: &EigenPair, gamma: &[f64], trunc_k: usize) -> Result<Self> {
        if gamma.len() != a.n() {
            return Err(Error::dims("BackwardState::new", a.n(), gamma.len()));
        }
        Ok(BackwardState {
            gamma: gamma.to_vec(),
            jac_alpha: jac_wrt_alpha(a, eig)?,
            trunc_k,
            running_cotangent: gamma.to_vec(),
            k: 0,
        })
    }

    /// Advances `c ← J_αᵀ c`.
    pub fn step(&mut self) {
        self.running_cotangent = self.jac_alpha.mul_vec_t(&self.running_cotangent);
        self.k += 1;
    }

    /// Sums `(J_αᵀ)ᵏ γ` for `k = 0..=trunc_k`, stopping early once a term
    /// falls below [`SERIES_TOLERANCE`]. Returns the summed cotangent and the
    /// number of terms used.
    pub fn summed_cotangent(mut self) -> (Vec<f64>, usize) {
        let mut acc = self.running_cotangent.clone();
        let mut terms = 1;
        while self.k < self.trunc_k {
            self.step();
            if l2_norm(&self.running_cotangent) < SERIES_TOLERANCE {
                break;
            }
            axpy(1.0, &self.running_cotangent, &mut acc);
            terms += 1;
        }
        (acc, terms)
    }
}

/// `∂L/∂A = Σ_{k=0}^{trunc_k} γᵀ J_αᵏ J_A`.
///
/// `J_A` is linear in the cotangent, so the cotangents are summed first and
/// contracted once.
pub fn analytic_grad_a(a: &AdjacencyMatrix, eig: &EigenPair, gamma: &[f64], trunc_k: usize) -> Result<Matrix> {
    let (summed, _) = BackwardState::new(a, eig, gamma, trunc_k)?.summed_cotangent();
    jac_wrt_a_apply(&summed, eig)
}

/// Partial sums `S_0, S_1, …, S_trunc_k` of the gradient series, without the
/// early stop. Diagnostic only: stores every partial sum.
pub fn series_partial_sums(
    a: &AdjacencyMatrix,
    eig: &EigenPair,
    gamma: &[f64],
    trunc_k: usize,
) -> Result<Vec<Matrix>> {
    let mut state = BackwardState::new(a, eig, gamma, trunc_k)?;
    let mut acc = jac_wrt_a_apply(&state.running_cotangent, eig)?;
    let mut sums = vec![acc.clone()];
    while state.k < trunc_k {
        state.step();
        acc.axpy(1.0, &jac_wrt_a_apply(&state.running_cotangent, eig)?);
        sums.push(acc.clone());
    }
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledGrad {
    pub grad: Matrix,
    /// `false` when the convergence phase ran out of steps; the window then
    /// does not start at a fixed point and the gradient is approximate.
    pub converged: bool,
    pub eig: EigenPair,
}

/// Gradient by explicit unrolling.
///
/// Runs the convergence phase without recording, treats its final input
/// iterate as a constant, then records the final convergence step plus
/// `cfg.grad_steps` extra steps and backpropagates exactly through that
/// window. With `grad_steps = 0` only the final step is differentiated,
/// which gives the `k = 0` series term.
pub fn unrolled_grad_a(a: &AdjacencyMatrix, cfg: &PowerConfig, gamma: &[f64]) -> Result<UnrolledGrad> {
    let n = a.n();
    if gamma.len() != n {
        return Err(Error::dims("unrolled_grad_a", n, gamma.len()));
    }
    let eig = power_method(a, cfg)?;
    let m = a.matrix();

    // iterates[0] is the (stop-gradient) input of the window; iterates[t] is
    // the output of step t.
    let window = cfg.grad_steps + 1;
    let mut iterates = Vec::with_capacity(window + 1);
    let mut norms = Vec::with_capacity(window);
    iterates.push(eig.alpha.clone());
    for t in 0..window {
        let y = m.mul_vec(&iterates[t]);
        let s = l2_norm(&y);
        norms.push(s);
        iterates.push(y.iter().map(|v| v / s).collect());
    }

    let mut grad = Matrix::zeros(n, n);
    let mut g = gamma.to_vec();
    for t in (0..window).rev() {
        let out = &iterates[t + 1];
        let go = dot(out, &g);
        // Backward of y ↦ y/‖y‖₂.
        let dy: Vec<f64> = g.iter().zip(out).map(|(gi, oi)| (gi - go * oi) / norms[t]).collect();
        grad.add_outer(1.0, &dy, &iterates[t]);
        g = m.mul_vec_t(&dy);
    }

    Ok(UnrolledGrad {
        grad,
        converged: eig.converged,
        eig,
    })
}

/// `∂L/∂z = γᵀ J_αᴺ` with `N = cfg.max_converge_steps`, evaluated at the
/// converged eigenpair. Also returns `‖γᵀ J_αᵏ‖₂` for `k = 0..=N`.
pub fn grad_wrt_init_z(a: &AdjacencyMatrix, cfg: &PowerConfig, gamma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let eig = power_method(a, cfg)?;
    let mut state = BackwardState::new(a, &eig, gamma, cfg.max_converge_steps)?;
    let mut curve = Vec::with_capacity(cfg.max_converge_steps + 1);
    curve.push(l2_norm(&state.running_cotangent));
    for _ in 0..cfg.max_converge_steps {
        state.step();
        curve.push(l2_norm(&state.running_cotangent));
    }
    Ok((state.running_cotangent, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDiagnostics {
    /// `|λ₂| / λ₁`, the spectral radius of `J_α`.
    pub lambda2_over_lambda1: f64,
    /// Left Perron vector, scaled so `wᵀα = 1`.
    pub left_eigvec_w: Vec<f64>,
    /// Perron coefficient `c₁ = wᵀz` of the power-method start vector in the
    /// eigenbasis expansion `z = c₁α + Σ_{i≥2} c_i u_i`.
    pub init_perron_coefficient: f64,
    /// `‖z − c₁α‖₂`, the mass of the start vector outside the Perron direction.
    pub init_residual_norm: f64,
}

/// Estimates the spectral quantities governing convergence.
///
/// `λ₂/λ₁` comes from normalized power iteration on `J_α` (whose spectrum is
/// `{0} ∪ {λ_i/λ₁ : i ≥ 2}`), averaging the log growth over the second half
/// of the run so complex or sign-alternating subdominant pairs still give
/// their modulus. `w` comes from the power method on `Aᵀ`.
pub fn spectral_diag(a: &AdjacencyMatrix) -> Result<SpectralDiagnostics> {
    const ITERS: usize = 4000;
    let cfg = PowerConfig {
        epsilon: 1e-14,
        max_converge_steps: 100_000,
        ..PowerConfig::default()
    };
    let eig = power_method(a, &cfg)?;
    let j = jac_wrt_alpha(a, &eig)?;
    let n = a.n();

    let scale = j.frobenius_norm().max(1.0);
    let mut rng = Rng::new(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let v_norm = l2_norm(&v);
    v.iter_mut().for_each(|x| *x /= v_norm);
    let mut log_sum = 0.0;
    let mut counted = 0;
    let mut ratio = 0.0;
    for it in 0..ITERS {
        let w = j.mul_vec(&v);
        let g = l2_norm(&w);
        if g < 1e-13 * scale {
            // Nilpotent up to rounding: J_α = 0, i.e. a rank-one A.
            ratio = 0.0;
            counted = 0;
            break;
        }
        if it >= ITERS / 2 {
            log_sum += g.ln();
            counted += 1;
        }
        v = w.iter().map(|x| x / g).collect();
    }
    if counted > 0 {
        ratio = (log_sum / counted as f64).exp();
    }

    let at = AdjacencyMatrix::new(a.matrix().transpose())?;
    let left = power_method(&at, &cfg)?;
    let wa = dot(&left.alpha, &eig.alpha);
    let w: Vec<f64> = left.alpha.iter().map(|x| x / wa).collect();

    let z = cfg.init.vector(n);
    let c1 = dot(&w, &z);
    let rest: Vec<f64> = z.iter().zip(&eig.alpha).map(|(zi, ai)| zi - c1 * ai).collect();

    Ok(SpectralDiagnostics {
        lambda2_over_lambda1: ratio,
        left_eigvec_w: w,
        init_perron_coefficient: c1,
        init_residual_norm: l2_norm(&rest),
    })
}
