//! Fusion encoders: a linear projection and a bidirectional Elman network.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use crate::adjacency::valid_positions;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    IdentityProjection,
    #[default]
    BidirectionalElman,
}

/// Hidden states with one column per input position; masked columns are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub h: Matrix,
    pub valid_mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ElmanIds {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum EncoderParams {
    Projection { w: ParamId },
    BiElman { fwd: ElmanIds, bwd: ElmanIds },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionEncoder {
    pub kind: EncoderKind,
    pub input_dim: usize,
    /// Output size for the projection, per-direction size for the Elman net.
    pub hidden: usize,
    params: EncoderParams,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    x: Matrix,
    /// Forward and backward direction states, `hidden × n` each.
    states: Option<(Matrix, Matrix)>,
}

impl FusionEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: EncoderKind,
        input_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("encoder sizes must be positive".into()));
        }
        let in_std = 1.0 / (input_dim as f64).sqrt();
        let params = match kind {
            EncoderKind::IdentityProjection => EncoderParams::Projection {
                w: store.add(format!("{prefix}.w"), rng.normal_matrix(hidden, input_dim, in_std))?,
            },
            EncoderKind::BidirectionalElman => {
                let rec_std = 0.5 / (hidden as f64).sqrt();
                let mut dir = |name: &str| -> Result<ElmanIds> {
                    Ok(ElmanIds {
                        w: store.add(format!("{prefix}.{name}.w"), rng.normal_matrix(hidden, input_dim, in_std))?,
                        u: store.add(format!("{prefix}.{name}.u"), rng.normal_matrix(hidden, hidden, rec_std))?,
                        b: store.add(format!("{prefix}.{name}.b"), Matrix::zeros(hidden, 1))?,
                    })
                };
                let fwd = dir("fwd")?;
                let bwd = dir("bwd")?;
                EncoderParams::BiElman { fwd, bwd }
            }
        };
        Ok(FusionEncoder {
            kind,
            input_dim,
            hidden,
            params,
        })
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::IdentityProjection => self.hidden,
            EncoderKind::BidirectionalElman => 2 * self.hidden,
        }
    }

    /// Ids of the projection weight, if this is a projection encoder.
    pub fn projection_weight(&self) -> Option<ParamId> {
        match self.params {
            EncoderParams::Projection { w } => Some(w),
            EncoderParams::BiElman { .. } => None,
        }
    }

    /// Encodes `x` (`input_dim × n`, no padding).
    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<(Matrix, EncoderCache)> {
        if x.rows() != self.input_dim {
            return Err(Error::dims("FusionEncoder::forward", self.input_dim, x.rows()));
        }
        match self.params {
            EncoderParams::Projection { w } => {
                let h = store.value(w).matmul(x)?;
                Ok((h, EncoderCache { x: x.clone(), states: None }))
            }
            EncoderParams::BiElman { fwd, bwd } => {
                let n = x.cols();
                let hf = run_direction(store, fwd, x, (0..n).collect());
                let hb = run_direction(store, bwd, x, (0..n).rev().collect());
                let mut h = Matrix::zeros(2 * self.hidden, n);
                for t in 0..n {
                    for r in 0..self.hidden {
                        h[(r, t)] = hf[(r, t)];
                        h[(self.hidden + r, t)] = hb[(r, t)];
                    }
                }
                Ok((
                    h,
                    EncoderCache {
                        x: x.clone(),
                        states: Some((hf, hb)),
                    },
                ))
            }
        }
    }

    /// Exact backward (through time for the Elman net); returns `∂L/∂x`.
    pub fn backward(&self, store: &ParamStore, cache: &EncoderCache, cotangent: &Matrix, grads: &mut Gradients) -> Matrix {
        match self.params {
            EncoderParams::Projection { w } => {
                let wv = store.value(w);
                let mut dx = Matrix::zeros(self.input_dim, cache.x.cols());
                let g = grads.dense_mut(w);
                for t in 0..cache.x.cols() {
                    let c = cotangent.col(t);
                    let xt = cache.x.col(t);
                    g.add_outer(1.0, &c, &xt);
                    dx.set_col(t, &wv.mul_vec_t(&c));
                }
                dx
            }
            EncoderParams::BiElman { fwd, bwd } => {
                let (hf, hb) = cache.states.as_ref().expect("Elman cache holds states");
                let n = cache.x.cols();
                let hd = self.hidden;
                let mut cf = Matrix::zeros(hd, n);
                let mut cb = Matrix::zeros(hd, n);
                for t in 0..n {
                    for r in 0..hd {
                        cf[(r, t)] = cotangent[(r, t)];
                        cb[(r, t)] = cotangent[(hd + r, t)];
                    }
                }
                let mut dx = Matrix::zeros(self.input_dim, n);
                bptt(store, fwd, &cache.x, hf, &cf, (0..n).collect(), grads, &mut dx);
                bptt(store, bwd, &cache.x, hb, &cb, (0..n).rev().collect(), grads, &mut dx);
                dx
            }
        }
    }

    /// Masked entry point: pads are excised before encoding and come back as
    /// zero columns.
    pub fn fuse(&self, store: &ParamStore, x: &Matrix, mask: &[bool]) -> Result<HiddenStates> {
        if mask.len() != x.cols() {
            return Err(Error::dims("fuse", x.cols(), mask.len()));
        }
        let keep = valid_positions(mask);
        let (hv, _) = self.forward(store, &x.select_cols(&keep))?;
        let mut h = Matrix::zeros(self.output_dim(), x.cols());
        for (k, &c) in keep.iter().enumerate() {
            h.set_col(c, &hv.col(k));
        }
        Ok(HiddenStates {
            h,
            valid_mask: mask.to_vec(),
        })
    }
}

/// `h_t = tanh(W x_t + U h_prev + b)` visiting positions in `order`.
fn run_direction(store: &ParamStore, ids: ElmanIds, x: &Matrix, order: Vec<usize>) -> Matrix {
    let w = store.value(ids.w);
    let u = store.value(ids.u);
    let b = store.value(ids.b).data();
    let hd = w.rows();
    let mut h = Matrix::zeros(hd, x.cols());
    let mut prev = vec![0.0; hd];
    for t in order {
        let mut z = w.mul_vec(&x.col(t));
        let rec = u.mul_vec(&prev);
        for r in 0..hd {
            z[r] = (z[r] + rec[r] + b[r]).tanh();
        }
        h.set_col(t, &z);
        prev = z;
    }
    h
}

#[allow(clippy::too_many_arguments)]
fn bptt(
    store: &ParamStore,
    ids: ElmanIds,
    x: &Matrix,
    h: &Matrix,
    cot: &Matrix,
    order: Vec<usize>,
    grads: &mut Gradients,
    dx: &mut Matrix,
) {
    let w = store.value(ids.w);
    let u = store.value(ids.u);
    let hd = w.rows();
    let mut gw = Matrix::zeros(w.rows(), w.cols());
    let mut gu = Matrix::zeros(hd, hd);
    let mut gb = vec![0.0; hd];
    let mut carry = vec![0.0; hd];
    for k in (0..order.len()).rev() {
        let t = order[k];
        let ht = h.col(t);
        let dz: Vec<f64> = (0..hd).map(|r| (cot[(r, t)] + carry[r]) * (1.0 - ht[r] * ht[r])).collect();
        gw.add_outer(1.0, &dz, &x.col(t));
        if k > 0 {
            gu.add_outer(1.0, &dz, &h.col(order[k - 1]));
        }
        for (g, d) in gb.iter_mut().zip(&dz) {
            *g += d;
        }
        dx.add_to_col(t, &w.mul_vec_t(&dz));
        carry = u.mul_vec_t(&dz);
    }
    grads.add_dense(ids.w, 1.0, &gw);
    grads.add_dense(ids.u, 1.0, &gu);
    grads.add_vec(ids.b, &gb);
}
