//! Dense linear algebra, softmax and random-number utilities.
//!
//! Everything is `f64`. Matrices are row-major; column operations use strided
//! access. Vectors are plain `Vec<f64>` / `&[f64]`.

use std::fmt;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(cols: &[C]) -> Result<Self> {
        let rows = cols.first().map_or(0, |c| c.as_ref().len());
        let mut m = Matrix::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::dims("Matrix::from_columns", rows, c.len()));
            }
            m.set_col(j, c);
        }
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn set_col(&mut self, c: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, v) in values.iter().enumerate() {
            self.data[r * self.cols + c] = *v;
        }
    }

    /// Adds `values` into column `c`.
    pub fn add_to_col(&mut self, c: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, v) in values.iter().enumerate() {
            self.data[r * self.cols + c] += *v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dims("matvec", self.cols, v.len()));
        }
        Ok(self.mul_vec(v))
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::dims("matvec_t", self.rows, v.len()));
        }
        Ok(self.mul_vec_t(v))
    }

    pub(crate) fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    pub(crate) fn mul_vec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                axpy(vr, self.row(r), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dims("matmul", self.cols, other.rows));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self += alpha · x yᵀ`.
    pub fn add_outer(&mut self, alpha: f64, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            let s = alpha * xr;
            if s != 0.0 {
                axpy(s, y, self.row_mut(r));
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut m = self.clone();
        m.axpy(-1.0, other);
        m
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn frobenius_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in 0..self.rows {
            axpy(1.0, self.row(r), &mut s);
        }
        s
    }

    /// Submatrix with the given row and column indices, in order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |r, c| self[(rows[r], cols[c])])
    }

    /// Submatrix keeping only the listed columns.
    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |r, c| self[(r, cols[c])])
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    m.matvec(v)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Numerically stable softmax of a vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Vector-Jacobian product of softmax: given `y = softmax(x)` and `dL/dy`,
/// returns `dL/dx`.
pub fn softmax_backward(y: &[f64], grad_y: &[f64]) -> Vec<f64> {
    let s = dot(y, grad_y);
    y.iter().zip(grad_y).map(|(yi, gi)| yi * (gi - s)).collect()
}

/// Softmax applied independently to every column.
pub fn column_softmax(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(rows, cols);
    for c in 0..cols {
        out.set_col(c, &softmax(&m.col(c)));
    }
    out
}

/// Backward of [`column_softmax`] given its output `y` and the cotangent on it.
pub fn column_softmax_backward(y: &Matrix, grad_y: &Matrix) -> Matrix {
    let (rows, cols) = y.shape();
    let mut out = Matrix::zeros(rows, cols);
    for c in 0..cols {
        out.set_col(c, &softmax_backward(&y.col(c), &grad_y.col(c)));
    }
    out
}

/// Central finite-difference gradient of a scalar function of a matrix:
/// `(f(m + h·E_ij) − f(m − h·E_ij)) / 2h` for every entry.
pub fn finite_diff_grad<F>(mut f: F, m: &Matrix, h: f64) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = m.clone();
    let mut grad = Matrix::zeros(m.rows(), m.cols());
    for k in 0..m.data.len() {
        let orig = probe.data[k];
        probe.data[k] = orig + h;
        let plus = f(&probe);
        probe.data[k] = orig - h;
        let minus = f(&probe);
        probe.data[k] = orig;
        grad.data[k] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative Frobenius error `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute
/// error when both norms fall below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = l2_norm(&sub(a, b));
    let scale = l2_norm(a).max(l2_norm(b));
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

/// Serializable position of an [`Rng`] stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position in the ChaCha stream, as a decimal string (u128).
    pub word_pos: String,
}

/// Seeded, platform-independent random number generator (ChaCha8).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator derived from a seed and a path of indices
    /// (e.g. `[epoch, example]`). Same inputs give the same stream.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut s = seed;
        for &p in path {
            s = splitmix64(s ^ splitmix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        Rng::new(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position {:?}", state.word_pos)))?;
        let mut rng = Rng::new(state.seed);
        rng.inner.set_word_pos(pos);
        Ok(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.normal()).collect()
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| std * self.normal())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform_range(lo, hi))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(Matrix::identity(2).matvec(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let half = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(half.matvec(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn matvec_rejects_bad_shape() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matvec(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[1.0, 1.0, 1.0, 1.0]), 2.0);
    }

    #[test]
    fn column_softmax_examples() {
        let u = column_softmax(&Matrix::zeros(2, 2));
        assert_eq!(u, Matrix::filled(2, 2, 0.5));

        let c = column_softmax(&Matrix::from_vec(2, 1, vec![0.0, 3f64.ln()]).unwrap());
        assert!((c[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((c[(1, 0)] - 0.75).abs() < 1e-15);

        let big = column_softmax(&Matrix::from_vec(2, 1, vec![1000.0, 1000.0]).unwrap());
        assert_eq!(big.col(0), vec![0.5, 0.5]);
    }

    #[test]
    fn finite_diff_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let g = finite_diff_grad(|x| x.data().iter().sum(), &a, 1e-4);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let g = finite_diff_grad(|x| x.data().iter().map(|v| v * v).sum(), &a, 1e-4);
        let want = [2.0, 4.0, 6.0, 8.0];
        for (v, w) in g.data().iter().zip(want) {
            assert!((v - w).abs() < 1e-8);
        }
    }

    #[test]
    fn column_softmax_backward_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let x = rng.normal_matrix(4, 3, 1.0);
        let w = rng.normal_matrix(4, 3, 1.0);
        let loss = |x: &Matrix| dot(column_softmax(x).data(), w.data());
        let fd = finite_diff_grad(loss, &x, 1e-6);
        let an = column_softmax_backward(&column_softmax(&x), &w);
        assert!(relative_error(an.data(), fd.data(), 1e-12) < 1e-8);
    }

    #[test]
    fn rng_reproducible_and_resumable() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);

        let state = a.state();
        let next = a.uniform();
        let mut c = Rng::from_state(&state).unwrap();
        assert_eq!(c.uniform().to_bits(), next.to_bits());

        let d1 = Rng::derive(1, &[2, 3]).next_u64();
        let d2 = Rng::derive(1, &[2, 3]).next_u64();
        let d3 = Rng::derive(1, &[3, 2]).next_u64();
        assert_eq!(d1, d2);
        assert_ne!(d1, d3);
    }

    #[test]
    fn rng_known_stream_is_platform_stable() {
        // Frozen from an earlier run; a change here breaks checkpoint resumes.
        let mut r = Rng::new(2019);
        assert_eq!(r.next_u64(), 14479826534343574225);
        assert_eq!(r.next_u64(), 12019391666661555088);
    }

    proptest! {
        #[test]
        fn column_softmax_columns_sum_to_one(
            vals in proptest::collection::vec(-50.0f64..50.0, 12),
            shift in -100.0f64..100.0,
        ) {
            let x = Matrix::from_vec(4, 3, vals).unwrap();
            let y = column_softmax(&x);
            for s in y.col_sums() {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            prop_assert!(y.data().iter().all(|v| *v > 0.0));
            let mut shifted = x.clone();
            for r in 0..4 {
                shifted[(r, 1)] += shift;
            }
            let y2 = column_softmax(&shifted);
            for (a, b) in y.data().iter().zip(y2.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn rotation_preserves_norm(theta in -10.0f64..10.0, x in -1e3f64..1e3, y in -1e3f64..1e3) {
            let q = Matrix::from_rows(&[[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]).unwrap();
            let v = [x, y];
            let r = q.matvec(&v).unwrap();
            prop_assert!((l2_norm(&r) - l2_norm(&v)).abs() <= 1e-12 * (1.0 + l2_norm(&v)));
        }
    }
}
