use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

use super::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn cast<U: Real>(&self) -> ParamTensor<U> {
        ParamTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Param,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamDecl {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub kind: Kind,
}

impl ParamDecl {
    pub fn param(path: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            path: path.into(),
            shape: shape.to_vec(),
            init,
            kind: Kind::Param,
        }
    }

    pub fn buffer(path: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            path: path.into(),
            shape: shape.to_vec(),
            init,
            kind: Kind::Buffer,
        }
    }
}

/// Named learnable parameters plus non-trainable buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, ParamTensor<T>>,
    buffers: BTreeMap<String, ParamTensor<T>>,
    pub rng_seed: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn empty(rng_seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            rng_seed,
        }
    }

    /// Each tensor draws from its own stream keyed by its path, so two
    /// models sharing a path get identical initial values for it.
    pub fn initialize(decls: &[ParamDecl], rng_seed: u64) -> Result<Self> {
        let mut store = Self::empty(rng_seed);
        for d in decls {
            let n: usize = d.shape.iter().product();
            let data = match d.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::Glorot { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                    let mut rng = seed::rng(rng_seed, &format!("init/{}", d.path));
                    (0..n)
                        .map(|_| T::of(rng.random_range(-bound..bound)))
                        .collect()
                }
            };
            let t = ParamTensor {
                shape: d.shape.clone(),
                data,
            };
            let map = match d.kind {
                Kind::Param => &mut store.params,
                Kind::Buffer => &mut store.buffers,
            };
            if map.insert(d.path.clone(), t).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter path `{}`",
                    d.path
                )));
            }
        }
        Ok(store)
    }

    pub fn param(&self, path: &str) -> Result<&ParamTensor<T>> {
        self.params
            .get(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn param_mut(&mut self, path: &str) -> Result<&mut ParamTensor<T>> {
        self.params
            .get_mut(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn buffer(&self, path: &str) -> Result<&ParamTensor<T>> {
        self.buffers
            .get(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn buffer_mut(&mut self, path: &str) -> Result<&mut ParamTensor<T>> {
        self.buffers
            .get_mut(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn insert_param(&mut self, path: impl Into<String>, t: ParamTensor<T>) {
        self.params.insert(path.into(), t);
    }

    pub fn insert_buffer(&mut self, path: impl Into<String>, t: ParamTensor<T>) {
        self.buffers.insert(path.into(), t);
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &ParamTensor<T>)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor<T>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &ParamTensor<T>)> {
        self.buffers.iter()
    }

    pub fn param_paths(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            rng_seed: self.rng_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_path_keyed_and_bounded() {
        let a = vec![
            ParamDecl::param(
                "enc.w",
                &[4, 3],
                Init::Glorot {
                    fan_in: 4,
                    fan_out: 3,
                },
            ),
            ParamDecl::param("enc.b", &[3], Init::Zeros),
            ParamDecl::buffer("enc.bn.var", &[3], Init::Ones),
        ];
        let b = vec![
            ParamDecl::param(
                "other",
                &[2],
                Init::Glorot {
                    fan_in: 1,
                    fan_out: 1,
                },
            ),
            a[0].clone(),
        ];
        let sa = ParamStore::<f32>::initialize(&a, 11).unwrap();
        let sb = ParamStore::<f32>::initialize(&b, 11).unwrap();
        assert_eq!(sa.param("enc.w").unwrap(), sb.param("enc.w").unwrap());
        let bound = (6.0f32 / 7.0).sqrt();
        assert!(sa
            .param("enc.w")
            .unwrap()
            .data
            .iter()
            .all(|v| v.abs() <= bound));
        assert!(sa.param("enc.b").unwrap().data.iter().all(|&v| v == 0.0));
        assert_eq!(sa.buffer("enc.bn.var").unwrap().data, vec![1.0; 3]);
        assert!(sa.param("enc.bn.var").is_err());
    }

    #[test]
    fn duplicate_paths_rejected() {
        let d = ParamDecl::param("x", &[1], Init::Zeros);
        assert!(ParamStore::<f32>::initialize(&[d.clone(), d], 0).is_err());
    }
}
