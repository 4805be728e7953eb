//! Named parameter arrays with gradient and Adam moment buffers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub m: Matrix,
    pub v: Matrix,
    /// Rows held fixed by the optimizer (the embedding pad row).
    pub frozen_rows: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name}")));
        }
        let (r, c) = value.shape();
        self.params.push(Param {
            name,
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            frozen_rows: Vec::new(),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let p = &mut self.params[id.0];
        if !p.frozen_rows.contains(&row) {
            p.frozen_rows.push(row);
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `scale · g` into the stored gradient buffers.
    pub fn accumulate(&mut self, g: &Gradients, scale: f64) {
        for (p, slot) in self.params.iter_mut().zip(&g.slots) {
            match slot {
                GradSlot::Empty => {}
                GradSlot::Dense(m) => p.grad.axpy(scale, m),
                GradSlot::Rows(rows) => {
                    for (&r, vals) in rows {
                        for (dst, src) in p.grad.row_mut(r).iter_mut().zip(vals) {
                            *dst += scale * src;
                        }
                    }
                }
            }
        }
        for p in &mut self.params {
            for &r in &p.frozen_rows {
                p.grad.row_mut(r).fill(0.0);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Order-sensitive digest of every parameter value, bit-exact.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for b in p.name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
            for x in p.value.data() {
                h = (h ^ x.to_bits()).wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
enum GradSlot {
    Empty,
    Dense(Matrix),
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Per-example gradient buffer aligned with a [`ParamStore`]. Embedding
/// gradients are kept sparse by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<GradSlot>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn for_store(store: &ParamStore) -> Self {
        Gradients {
            slots: vec![GradSlot::Empty; store.len()],
            shapes: store.params.iter().map(|p| p.value.shape()).collect(),
        }
    }

    pub fn dense_mut(&mut self, id: ParamId) -> &mut Matrix {
        let (r, c) = self.shapes[id.0];
        let slot = &mut self.slots[id.0];
        if !matches!(slot, GradSlot::Dense(_)) {
            *slot = GradSlot::Dense(Matrix::zeros(r, c));
        }
        match slot {
            GradSlot::Dense(m) => m,
            _ => unreachable!(),
        }
    }

    pub fn add_dense(&mut self, id: ParamId, alpha: f64, g: &Matrix) {
        self.dense_mut(id).axpy(alpha, g);
    }

    pub fn add_vec(&mut self, id: ParamId, g: &[f64]) {
        for (d, s) in self.dense_mut(id).data_mut().iter_mut().zip(g) {
            *d += s;
        }
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let cols = self.shapes[id.0].1;
        let slot = &mut self.slots[id.0];
        if matches!(slot, GradSlot::Empty) {
            *slot = GradSlot::Rows(BTreeMap::new());
        }
        match slot {
            GradSlot::Rows(rows) => {
                let dst = rows.entry(row).or_insert_with(|| vec![0.0; cols]);
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
            GradSlot::Dense(m) => {
                for (d, s) in m.row_mut(row).iter_mut().zip(g) {
                    *d += s;
                }
            }
            GradSlot::Empty => unreachable!(),
        }
    }

    /// Dense copy of one slot, zeros where nothing was written.
    pub fn to_dense(&self, id: ParamId) -> Matrix {
        let (r, c) = self.shapes[id.0];
        match &self.slots[id.0] {
            GradSlot::Empty => Matrix::zeros(r, c),
            GradSlot::Dense(m) => m.clone(),
            GradSlot::Rows(rows) => {
                let mut m = Matrix::zeros(r, c);
                for (&i, vals) in rows {
                    m.row_mut(i).copy_from_slice(vals);
                }
                m
            }
        }
    }

    /// Rows of a sparse slot that received gradient.
    pub fn touched_rows(&self, id: ParamId) -> Vec<usize> {
        match &self.slots[id.0] {
            GradSlot::Rows(rows) => rows.keys().copied().collect(),
            GradSlot::Dense(m) => (0..m.rows()).filter(|&r| m.row(r).iter().any(|x| *x != 0.0)).collect(),
            GradSlot::Empty => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("w", Matrix::zeros(2, 2)).unwrap();
        assert!(s.add("w", Matrix::zeros(1, 1)).is_err());
        assert_eq!(s.find("w"), Some(ParamId(0)));
    }

    #[test]
    fn accumulate_respects_frozen_rows() {
        let mut s = ParamStore::new();
        let e = s.add("emb", Matrix::zeros(3, 2)).unwrap();
        s.freeze_row(e, 0);
        let mut g = Gradients::for_store(&s);
        g.add_row(e, 0, &[1.0, 1.0]);
        g.add_row(e, 2, &[2.0, 3.0]);
        g.add_row(e, 2, &[1.0, 0.0]);
        s.accumulate(&g, 0.5);
        assert_eq!(s.param(e).grad.data(), &[0.0, 0.0, 0.0, 0.0, 1.5, 1.5]);
        assert_eq!(g.touched_rows(e), vec![0, 2]);
    }

    #[test]
    fn checksum_detects_changes() {
        let mut s = ParamStore::new();
        let w = s.add("w", Matrix::filled(2, 2, 1.0)).unwrap();
        let c = s.checksum();
        s.value_mut(w)[(1, 1)] = 1.0 + f64::EPSILON;
        assert_ne!(c, s.checksum());
    }
}
