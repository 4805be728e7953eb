//! Adam with L2 weight decay, exponential learning-rate decay and global-norm
//! clipping.

use super::config::TrainConfig;
use crate::model::ParamStore;

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.params_mut() {
            p.grad.scale(s);
        }
    }
    norm
}

/// One Adam update using the gradients held in `store`. `step` is the
/// 1-based update count; the learning rate is taken at `step − 1` so the
/// first update uses the initial rate. Returns that learning rate.
pub fn adam_step(store: &mut ParamStore, cfg: &TrainConfig, step: u64) -> f64 {
    let t = step.max(1);
    let lr = cfg.learning_rate(t - 1);
    let (b1, b2, eps, wd) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.regularization_rate);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for p in store.params_mut() {
        let cols = p.value.cols();
        let frozen = &p.frozen_rows;
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..value.len() {
            if !frozen.is_empty() && frozen.contains(&(i / cols)) {
                continue;
            }
            let g = grad[i] + wd * value[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            value[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    lr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn scalar_store(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("x", Matrix::filled(1, 1, value)).unwrap();
        s.params_mut()[id.index()].grad = Matrix::filled(1, 1, grad);
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig {
            initial_learning_rate: 0.1,
            regularization_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut s = scalar_store(0.0, 1.0);
        adam_step(&mut s, &cfg, 1);
        let x = s.params()[0].value[(0, 0)];
        assert!((x + 0.1).abs() < 1e-8, "{x}");
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = TrainConfig {
            regularization_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut s = scalar_store(1.25, 0.0);
        for t in 1..=5 {
            adam_step(&mut s, &cfg, t);
        }
        assert_eq!(s.params()[0].value[(0, 0)], 1.25);
    }

    #[test]
    fn weight_decay_shrinks_and_frozen_rows_hold() {
        let cfg = TrainConfig {
            regularization_rate: 1e-2,
            ..TrainConfig::default()
        };
        let mut s = ParamStore::new();
        let id = s.add("e", Matrix::filled(2, 1, 1.0)).unwrap();
        s.freeze_row(id, 0);
        adam_step(&mut s, &cfg, 1);
        let v = &s.params()[0].value;
        assert_eq!(v[(0, 0)], 1.0);
        assert!(v[(1, 0)] < 1.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = scalar_store(0.0, 30.0);
        assert_eq!(clip_gradients(&mut s, 5.0), 30.0);
        assert!((s.grad_norm() - 5.0).abs() < 1e-12);
        let mut small = scalar_store(0.0, 1.0);
        clip_gradients(&mut small, 5.0);
        assert_eq!(small.grad_norm(), 1.0);
    }
}
