use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{ParamStore, ParamTensor};
use super::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction and coupled L2 weight decay
/// (`grad += weight_decay * param` before the moment updates).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub step_count: u64,
    pub m: BTreeMap<String, ParamTensor<T>>,
    pub v: BTreeMap<String, ParamTensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamHyper) -> Self {
        let zeros: BTreeMap<_, _> = store
            .params()
            .map(|(p, t)| (p.clone(), ParamTensor::zeros(&t.shape)))
            .collect();
        Self {
            hyper,
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.hyper.lr = lr;
    }

    /// Applies one update. All gradients are checked before any parameter
    /// changes, so a non-finite gradient leaves the store untouched.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<String, Vec<T>>,
    ) -> Result<()> {
        for (path, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{path}`")));
            }
            let p = store.param(path)?;
            if p.data.len() != g.len() {
                return Err(Error::shape("adam_step", format!("gradient of `{path}`")));
            }
        }
        self.step_count += 1;
        let h = self.hyper;
        let t = self.step_count as i32;
        let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
        let bc1 = T::of(1.0 - h.beta1.powi(t));
        let bc2 = T::of(1.0 - h.beta2.powi(t));
        let (lr, eps, wd) = (T::of(h.lr), T::of(h.eps), T::of(h.weight_decay));
        for (path, g) in grads {
            let p = store.param_mut(path)?;
            let m = self
                .m
                .entry(path.clone())
                .or_insert_with(|| ParamTensor::zeros(&p.shape));
            let v = self
                .v
                .entry(path.clone())
                .or_insert_with(|| ParamTensor::zeros(&p.shape));
            for i in 0..g.len() {
                let gi = g[i] + wd * p.data[i];
                m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Init, ParamDecl};

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::initialize(&[ParamDecl::param("w", &[1], Init::Zeros)], 0).unwrap();
        s.param_mut("w").unwrap().data[0] = v;
        s
    }

    fn grads(v: f64) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("w".to_string(), vec![v])])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(0.0);
        let mut adam = AdamState::new(
            &store,
            AdamHyper {
                lr: 0.1,
                ..AdamHyper::default()
            },
        );
        adam.step(&mut store, &grads(1.0)).unwrap();
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((store.param("w").unwrap().data[0] - expect).abs() < 1e-15);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut store = scalar_store(0.7);
        let mut adam = AdamState::new(&store, AdamHyper::default());
        for _ in 0..5 {
            adam.step(&mut store, &grads(0.0)).unwrap();
        }
        assert_eq!(store.param("w").unwrap().data[0], 0.7);
    }

    #[test]
    fn weight_decay_shrinks_toward_zero() {
        let mut store = scalar_store(2.0);
        let h = AdamHyper {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamHyper::default()
        };
        let mut adam = AdamState::new(&store, h);
        adam.step(&mut store, &grads(0.0)).unwrap();
        // g' = 0.2, m_hat = 0.2, v_hat = 0.04 -> step = lr * 0.2 / (0.2 + eps)
        let expect = 2.0 - 0.01 * 0.2 / (0.2 + 1e-8);
        let got = store.param("w").unwrap().data[0];
        assert!((got - expect).abs() < 1e-12);
        assert!(got < 2.0 && got > 0.0);
    }

    #[test]
    fn non_finite_gradient_names_the_path() {
        let mut store = scalar_store(1.0);
        let mut adam = AdamState::new(&store, AdamHyper::default());
        let err = adam.step(&mut store, &grads(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(store.param("w").unwrap().data[0], 1.0);
        assert_eq!(adam.step_count, 0);
    }
}
