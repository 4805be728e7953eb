//! Feed-forward classifier: one tanh hidden layer, dropout, softmax output.

use serde::{Deserialize, Serialize};

use super::dropout_mask;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    x: Vec<f64>,
    hidden: Vec<f64>,
    mask: Option<Vec<f64>>,
}

impl ClassifierHead {
    pub fn new(
        store: &mut ParamStore,
        input_dim: usize,
        hidden: usize,
        classes: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::InvalidConfig(
                "classifier needs positive sizes and at least two classes".into(),
            ));
        }
        Ok(ClassifierHead {
            input_dim,
            hidden,
            classes,
            dropout_rate,
            w1: store.add("head.w1", rng.normal_matrix(hidden, input_dim, 1.0 / (input_dim as f64).sqrt()))?,
            b1: store.add("head.b1", Matrix::zeros(hidden, 1))?,
            w2: store.add("head.w2", rng.normal_matrix(classes, hidden, 1.0 / (hidden as f64).sqrt()))?,
            b2: store.add("head.b2", Matrix::zeros(classes, 1))?,
        })
    }

    /// Class probabilities. Dropout on the hidden layer only when `rng` is given.
    pub fn forward(&self, store: &ParamStore, x: &[f64], rng: Option<&mut Rng>) -> Result<(Vec<f64>, HeadCache)> {
        if x.len() != self.input_dim {
            return Err(Error::dims("ClassifierHead::forward", self.input_dim, x.len()));
        }
        let mut z = store.value(self.w1).mul_vec(x);
        for (zi, b) in z.iter_mut().zip(store.value(self.b1).data()) {
            *zi = (*zi + b).tanh();
        }
        let hidden = z;
        let mask = rng.and_then(|r| dropout_mask(self.hidden, self.dropout_rate, r));
        let dropped: Vec<f64> = match &mask {
            Some(m) => hidden.iter().zip(m).map(|(h, k)| h * k).collect(),
            None => hidden.clone(),
        };
        let mut logits = store.value(self.w2).mul_vec(&dropped);
        for (l, b) in logits.iter_mut().zip(store.value(self.b2).data()) {
            *l += b;
        }
        Ok((
            softmax(&logits),
            HeadCache {
                x: x.to_vec(),
                hidden,
                mask,
            },
        ))
    }

    /// Backward from `∂L/∂logits`; returns `∂L/∂x`.
    pub fn backward(&self, store: &ParamStore, cache: &HeadCache, dlogits: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let dropped: Vec<f64> = match &cache.mask {
            Some(m) => cache.hidden.iter().zip(m).map(|(h, k)| h * k).collect(),
            None => cache.hidden.clone(),
        };
        grads.dense_mut(self.w2).add_outer(1.0, dlogits, &dropped);
        grads.add_vec(self.b2, dlogits);
        let mut dh = store.value(self.w2).mul_vec_t(dlogits);
        if let Some(m) = &cache.mask {
            for (d, k) in dh.iter_mut().zip(m) {
                *d *= k;
            }
        }
        let dz: Vec<f64> = dh.iter().zip(&cache.hidden).map(|(d, h)| d * (1.0 - h * h)).collect();
        grads.dense_mut(self.w1).add_outer(1.0, &dz, &cache.x);
        grads.add_vec(self.b1, &dz);
        store.value(self.w1).mul_vec_t(&dz)
    }
}
