//! Sequence aggregation: eigen-centrality attention and the usual baselines.
//!
//! Every weighted strategy produces [`AggregationWeights`] summing to one and
//! the summary `h̄ = Σ_i w_i h_i`. Max pooling is the one unweighted strategy.
//! `h` is always `d × n` with one column per valid position.

use serde::{Deserialize, Serialize};

use crate::adjacency::AdjacencyMatrix;
use crate::eigencentrality::{power_method, EigenPair, PowerConfig};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, softmax, softmax_backward, Matrix, Rng};
use crate::powergrad::analytic_grad_a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Eigen,
    SelfAttn,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub weights: Vec<f64>,
    pub kind: WeightKind,
}

impl AggregationWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttentionParams {
    pub q: Vec<f64>,
}

impl SelfAttentionParams {
    /// `q ~ N(0, 1/d)`.
    pub fn random(d: usize, rng: &mut Rng) -> Self {
        SelfAttentionParams {
            q: rng.normal_vec(d, (1.0 / d as f64).sqrt()),
        }
    }
}

fn require_columns(h: &Matrix) -> Result<()> {
    if h.cols() == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

/// `h̄ = Σ_i w_i h_i`.
pub fn aggregate(h: &Matrix, w: &AggregationWeights) -> Result<Vec<f64>> {
    if w.len() != h.cols() {
        return Err(Error::dims("aggregate", h.cols(), w.len()));
    }
    require_columns(h)?;
    Ok(h.mul_vec(&w.weights))
}

/// Eigen-centrality weights: the Perron vector of `a`, rescaled from unit
/// 2-norm to unit sum. The eigenpair is returned for the backward pass.
pub fn eigen_weights(a: &AdjacencyMatrix, cfg: &PowerConfig) -> Result<(AggregationWeights, EigenPair)> {
    let eig = power_method(a, cfg)?;
    let s: f64 = eig.alpha.iter().sum();
    let weights = eig.alpha.iter().map(|x| x / s).collect();
    Ok((
        AggregationWeights {
            weights,
            kind: WeightKind::Eigen,
        },
        eig,
    ))
}

/// Softmax over `qᵀh_i`.
pub fn self_attention_weights(params: &SelfAttentionParams, h: &Matrix) -> Result<AggregationWeights> {
    if params.q.len() != h.rows() {
        return Err(Error::dims("self_attention_weights", h.rows(), params.q.len()));
    }
    require_columns(h)?;
    let logits = h.mul_vec_t(&params.q);
    Ok(AggregationWeights {
        weights: softmax(&logits),
        kind: WeightKind::SelfAttn,
    })
}

pub fn average_weights(n: usize) -> AggregationWeights {
    AggregationWeights {
        weights: vec![1.0 / n as f64; n],
        kind: WeightKind::Average,
    }
}

pub fn average_pool(h: &Matrix) -> Result<Vec<f64>> {
    require_columns(h)?;
    aggregate(h, &average_weights(h.cols()))
}

/// Per-dimension maximum, plus the winning column per dimension (lowest
/// index on ties) for the backward pass.
pub fn max_pool(h: &Matrix) -> Result<(Vec<f64>, Vec<usize>)> {
    require_columns(h)?;
    let mut out = Vec::with_capacity(h.rows());
    let mut argmax = Vec::with_capacity(h.rows());
    for r in 0..h.rows() {
        let row = h.row(r);
        let mut best = 0;
        for (i, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = i;
            }
        }
        out.push(row[best]);
        argmax.push(best);
    }
    Ok((out, argmax))
}

/// Routes the cotangent of each dimension to its argmax column.
pub fn max_pool_backward(argmax: &[usize], n: usize, cotangent: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(argmax.len(), n);
    for (r, (&i, &c)) in argmax.iter().zip(cotangent).enumerate() {
        g[(r, i)] = c;
    }
    g
}

/// Backward of [`aggregate`] w.r.t. `h`: `cotangent · wᵀ`.
pub fn aggregate_backward_h(w: &AggregationWeights, cotangent: &[f64]) -> Matrix {
    let mut g = Matrix::zeros(cotangent.len(), w.len());
    g.add_outer(1.0, cotangent, &w.weights);
    g
}

/// Cotangent on the weights: `g_i = h_i · cotangent`.
pub fn aggregate_backward_weights(h: &Matrix, cotangent: &[f64]) -> Vec<f64> {
    h.mul_vec_t(cotangent)
}

/// Backward of [`self_attention_weights`] + [`aggregate`]: returns the
/// gradient w.r.t. `h` and w.r.t. `q`.
pub fn self_attention_backward(
    params: &SelfAttentionParams,
    h: &Matrix,
    w: &AggregationWeights,
    cotangent: &[f64],
) -> (Matrix, Vec<f64>) {
    let mut grad_h = aggregate_backward_h(w, cotangent);
    let g = aggregate_backward_weights(h, cotangent);
    let dlogit = softmax_backward(&w.weights, &g);
    let mut grad_q = vec![0.0; h.rows()];
    for (i, &dl) in dlogit.iter().enumerate() {
        if dl != 0.0 {
            let hi = h.col(i);
            axpy(dl, &hi, &mut grad_q);
            grad_h.add_to_col(i, &crate::numerics::scaled(&params.q, dl));
        }
    }
    (grad_h, grad_q)
}

/// Backward of eigen-centrality aggregation.
///
/// Returns the direct gradient w.r.t. `h` (through the weighted sum only) and
/// `∂L/∂A` through the eigenvector. The sum-normalization `w = α / Σα` is
/// differentiated before handing `γ = ∂L/∂α` to the gradient series.
pub fn eigen_aggregate_backward(
    h: &Matrix,
    a: &AdjacencyMatrix,
    eig: &EigenPair,
    cotangent: &[f64],
    trunc_k: usize,
) -> Result<(Matrix, Matrix)> {
    if h.rows() != cotangent.len() {
        return Err(Error::dims("eigen_aggregate_backward", h.rows(), cotangent.len()));
    }
    if h.cols() != a.n() || eig.alpha.len() != a.n() {
        return Err(Error::dims("eigen_aggregate_backward", a.n(), h.cols()));
    }
    let s: f64 = eig.alpha.iter().sum();
    let w = AggregationWeights {
        weights: eig.alpha.iter().map(|x| x / s).collect(),
        kind: WeightKind::Eigen,
    };
    let grad_h = aggregate_backward_h(&w, cotangent);
    let g = aggregate_backward_weights(h, cotangent);
    let gw = dot(&g, &w.weights);
    let gamma: Vec<f64> = g.iter().map(|gi| (gi - gw) / s).collect();
    let grad_a = analytic_grad_a(a, eig, &gamma, trunc_k)?;
    Ok((grad_h, grad_a))
}
