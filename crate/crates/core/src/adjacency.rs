//! Learned word-graph adjacency.
//!
//! A two-layer connectivity network scores every ordered pair of hidden
//! states, `s_ij = w2 · act(W1 [h_i; h_j] + b1) + b2`, and a column-wise
//! softmax turns the scores into a strictly positive, column-stochastic
//! matrix. Self-pairs are included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, column_softmax, dot, Matrix, Rng};

/// Hidden-layer activation of the connectivity network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerActivation {
    #[default]
    Tanh,
    /// No nonlinearity. With the `h_j` half of `w1` zeroed the scorer is then
    /// a linear function of `h_i` alone.
    Linear,
}

impl ScorerActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            ScorerActivation::Tanh => z.tanh(),
            ScorerActivation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, t: f64) -> f64 {
        match self {
            ScorerActivation::Tanh => 1.0 - t * t,
            ScorerActivation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityScorer {
    /// `hidden_units × 2d`; the first `d` columns act on `h_i`, the rest on `h_j`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    #[serde(default)]
    pub activation: ScorerActivation,
}

/// Gradients of a [`ConnectivityScorer`], same layout as the scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ConnectivityScorer {
    pub const DEFAULT_HIDDEN_CLASSIFICATION: usize = 50;
    pub const DEFAULT_HIDDEN_NLI: usize = 30;

    pub fn zeros(input_dim: usize, hidden_units: usize) -> Self {
        assert!(hidden_units >= 1, "connectivity network needs at least one hidden unit");
        ConnectivityScorer {
            w1: Matrix::zeros(hidden_units, 2 * input_dim),
            b1: vec![0.0; hidden_units],
            w2: vec![0.0; hidden_units],
            b2: 0.0,
            activation: ScorerActivation::Tanh,
        }
    }

    /// Gaussian initialization scaled by fan-in.
    pub fn random(input_dim: usize, hidden_units: usize, rng: &mut Rng) -> Self {
        let mut s = Self::zeros(input_dim, hidden_units);
        s.w1 = rng.normal_matrix(hidden_units, 2 * input_dim, (1.0 / (2 * input_dim) as f64).sqrt());
        s.w2 = rng.normal_vec(hidden_units, (1.0 / hidden_units as f64).sqrt());
        s
    }

    pub fn hidden_units(&self) -> usize {
        self.w1.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols() / 2
    }

    fn check_input(&self, h: &Matrix) -> Result<()> {
        if h.rows() != self.input_dim() {
            return Err(Error::dims("raw_scores", self.input_dim(), h.rows()));
        }
        Ok(())
    }

    /// Per-node halves of the first layer: `W1[:, :d] h_i + b1` and
    /// `W1[:, d:] h_j`, each `n × hidden_units` (row per node).
    fn projections(&self, h: &Matrix) -> (Matrix, Matrix) {
        let d = self.input_dim();
        let hu = self.hidden_units();
        let n = h.cols();
        let mut left = Matrix::zeros(n, hu);
        let mut right = Matrix::zeros(n, hu);
        for i in 0..n {
            let hi = h.col(i);
            for u in 0..hu {
                let w = self.w1.row(u);
                left[(i, u)] = dot(&w[..d], &hi) + self.b1[u];
                right[(i, u)] = dot(&w[d..], &hi);
            }
        }
        (left, right)
    }
}

/// Pairwise connectivity scores; entry `(i, j)` scores the pair `(h_i, h_j)`.
pub fn raw_scores(scorer: &ConnectivityScorer, h: &Matrix) -> Result<Matrix> {
    scorer.check_input(h)?;
    let n = h.cols();
    let hu = scorer.hidden_units();
    let (left, right) = scorer.projections(h);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let li = left.row(i);
        for j in 0..n {
            let rj = right.row(j);
            let mut s = scorer.b2;
            for u in 0..hu {
                s += scorer.w2[u] * scorer.activation.apply(li[u] + rj[u]);
            }
            out[(i, j)] = s;
        }
    }
    Ok(out)
}

/// Exact backward of [`raw_scores`]: gradients w.r.t. the scorer and w.r.t.
/// every column of `h` (accumulated over both pair roles).
pub fn raw_scores_backward(
    scorer: &ConnectivityScorer,
    h: &Matrix,
    cotangent: &Matrix,
) -> Result<(ScorerGrads, Matrix)> {
    scorer.check_input(h)?;
    let n = h.cols();
    if cotangent.shape() != (n, n) {
        return Err(Error::dims(
            "raw_scores_backward",
            format!("{n}x{n}"),
            format!("{}x{}", cotangent.rows(), cotangent.cols()),
        ));
    }
    let d = scorer.input_dim();
    let hu = scorer.hidden_units();
    let (left, right) = scorer.projections(h);

    let mut g_w2 = vec![0.0; hu];
    let mut g_b2 = 0.0;
    // Pre-activation cotangents summed over the partner index.
    let mut dz_left = Matrix::zeros(n, hu);
    let mut dz_right = Matrix::zeros(n, hu);
    let mut dz = vec![0.0; hu];
    for i in 0..n {
        let li = left.row(i);
        for j in 0..n {
            let c = cotangent[(i, j)];
            if c == 0.0 {
                continue;
            }
            g_b2 += c;
            let rj = right.row(j);
            for u in 0..hu {
                let t = scorer.activation.apply(li[u] + rj[u]);
                g_w2[u] += c * t;
                dz[u] = c * scorer.w2[u] * scorer.activation.grad_from_output(t);
            }
            axpy(1.0, &dz, dz_left.row_mut(i));
            axpy(1.0, &dz, dz_right.row_mut(j));
        }
    }

    let mut g_w1 = Matrix::zeros(hu, 2 * d);
    let mut g_b1 = vec![0.0; hu];
    let mut g_h = Matrix::zeros(d, n);
    for i in 0..n {
        let hi = h.col(i);
        let dl = dz_left.row(i);
        let dr = dz_right.row(i);
        axpy(1.0, dl, &mut g_b1);
        let mut gh = vec![0.0; d];
        for u in 0..hu {
            let row = g_w1.row_mut(u);
            axpy(dl[u], &hi, &mut row[..d]);
            axpy(dr[u], &hi, &mut row[d..]);
            let w = scorer.w1.row(u);
            axpy(dl[u], &w[..d], &mut gh);
            axpy(dr[u], &w[d..], &mut gh);
        }
        g_h.set_col(i, &gh);
    }

    Ok((
        ScorerGrads {
            w1: g_w1,
            b1: g_b1,
            w2: g_w2,
            b2: g_b2,
        },
        g_h,
    ))
}

/// Strictly positive, column-stochastic relation matrix over the valid
/// positions of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    a: Matrix,
}

impl AdjacencyMatrix {
    /// Wraps a matrix, checking it is square, finite and strictly positive.
    /// Column sums are not checked: the power-method code works for any
    /// positive matrix.
    pub fn new(a: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("AdjacencyMatrix::new", "square matrix", format!("{}x{}", a.rows(), a.cols())));
        }
        if a.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                let v = a[(r, c)];
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NotPositive { row: r, col: c, value: v });
                }
            }
        }
        Ok(AdjacencyMatrix { a })
    }

    /// Column-softmax of arbitrary finite scores. Non-finite scores are a
    /// divergence.
    pub fn from_scores(scores: &Matrix) -> Result<Self> {
        if !scores.is_finite() {
            return Err(Error::Divergence("non-finite connectivity scores".into()));
        }
        Self::new(column_softmax(scores))
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn into_matrix(self) -> Matrix {
        self.a
    }

    /// Largest deviation of a column sum from one.
    pub fn stochastic_defect(&self) -> f64 {
        self.a.col_sums().iter().fold(0.0, |m, s| m.max((s - 1.0).abs()))
    }

    #[cfg(test)]
    pub(crate) fn scaled(&self, c: f64) -> Self {
        AdjacencyMatrix { a: self.a.scaled(c) }
    }
}

/// Indices of the `true` entries of a mask.
pub fn valid_positions(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Builds the adjacency over the valid positions of `h`. Padded columns are
/// cut out before scoring, so the result is `n_valid × n_valid`.
pub fn build_adjacency(scorer: &ConnectivityScorer, h: &Matrix, mask: &[bool]) -> Result<AdjacencyMatrix> {
    if mask.len() != h.cols() {
        return Err(Error::dims("build_adjacency", h.cols(), mask.len()));
    }
    let valid = valid_positions(mask);
    if valid.is_empty() {
        return Err(Error::EmptySequence);
    }
    let hv = if valid.len() == h.cols() { h.clone() } else { h.select_cols(&valid) };
    AdjacencyMatrix::from_scores(&raw_scores(scorer, &hv)?)
}
