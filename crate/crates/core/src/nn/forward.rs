use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::graph::{BatchNormMode, BatchStats, Gradients, Graph, Var};
use super::params::{Init, ParamDecl, ParamStore};
use super::real::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh graph bound lazily to parameters of a store.
pub struct Forward<'s, T: Real> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: BTreeMap<String, Var>,
    mode: Mode,
    track_grads: bool,
    bn_updates: Vec<(String, BatchStats<T>)>,
}

impl<'s, T: Real> Forward<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode, track_grads: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: BTreeMap::new(),
            mode,
            track_grads,
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn has_param(&self, path: &str) -> bool {
        self.store.param(path).is_ok()
    }

    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(path) {
            return Ok(v);
        }
        let t = self.store.param(path)?;
        let v = self
            .graph
            .leaf(t.data.clone(), &t.shape, self.track_grads)?;
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, data: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.graph.constant(data, shape)
    }

    pub fn dense(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.graph.dense(x, w, b)
    }

    /// Dense map without bias.
    pub fn linear(&mut self, path: &str, x: Var) -> Result<Var> {
        let w = self.param(path)?;
        let shape = self.graph.shape(x).to_vec();
        let d_in = *shape.last().unwrap_or(&0);
        let rows = shape.iter().product::<usize>() / d_in.max(1);
        let flat = self.graph.reshape(x, &[rows, d_in])?;
        let y = self.graph.matmul(flat, w)?;
        let mut out = shape;
        *out.last_mut().unwrap() = self.graph.shape(w)[1];
        self.graph.reshape(y, &out)
    }

    pub fn conv(&mut self, prefix: &str, x: Var, dilation: usize) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.graph.conv1d(x, w, b, dilation)
    }

    pub fn conv_transpose(
        &mut self,
        prefix: &str,
        x: Var,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.graph.conv_transpose1d(x, w, b, stride, dilation)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let eps = T::of(BN_EPS);
        match self.mode {
            Mode::Train => {
                let (y, stats) =
                    self.graph
                        .batch_norm(x, gamma, beta, BatchNormMode::Train { eps })?;
                if let Some(s) = stats {
                    self.bn_updates.push((prefix.to_string(), s));
                }
                Ok(y)
            }
            Mode::Eval => {
                let rm = &self.store.buffer(&format!("{prefix}.running_mean"))?.data;
                let rv = &self.store.buffer(&format!("{prefix}.running_var"))?.data;
                let mode = BatchNormMode::Eval {
                    running_mean: rm,
                    running_var: rv,
                    eps,
                };
                Ok(self.graph.batch_norm(x, gamma, beta, mode)?.0)
            }
        }
    }

    /// Gradients of every bound parameter, keyed by path.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Vec<T>> {
        self.bound
            .iter()
            .map(|(p, &v)| {
                let g = grads
                    .get(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); self.graph.value(v).len()]);
                (p.clone(), g)
            })
            .collect()
    }

    pub fn bound_paths(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }

    pub fn take_bn_updates(&mut self) -> Vec<(String, BatchStats<T>)> {
        std::mem::take(&mut self.bn_updates)
    }
}

/// Exponential moving average of batch statistics into running buffers.
/// The running variance uses the unbiased batch estimate.
pub fn apply_bn_updates<T: Real>(
    store: &mut ParamStore<T>,
    updates: &[(String, BatchStats<T>)],
) -> Result<()> {
    let m = T::of(BN_MOMENTUM);
    for (prefix, s) in updates {
        let unbias = if s.count > 1 {
            T::of(s.count as f64 / (s.count - 1) as f64)
        } else {
            T::one()
        };
        let rm = store.buffer_mut(&format!("{prefix}.running_mean"))?;
        if rm.data.len() != s.mean.len() {
            return Err(Error::shape("apply_bn_updates", prefix.clone()));
        }
        for (r, &b) in rm.data.iter_mut().zip(&s.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        let rv = store.buffer_mut(&format!("{prefix}.running_var"))?;
        for (r, &b) in rv.data.iter_mut().zip(&s.var) {
            *r = (T::one() - m) * *r + m * b * unbias;
        }
    }
    Ok(())
}

pub fn declare_dense(out: &mut Vec<ParamDecl>, prefix: &str, d_in: usize, d_out: usize) {
    out.push(ParamDecl::param(
        format!("{prefix}.weight"),
        &[d_in, d_out],
        Init::Glorot {
            fan_in: d_in,
            fan_out: d_out,
        },
    ));
    out.push(ParamDecl::param(
        format!("{prefix}.bias"),
        &[d_out],
        Init::Zeros,
    ));
}

pub fn declare_linear(out: &mut Vec<ParamDecl>, path: &str, d_in: usize, d_out: usize) {
    out.push(ParamDecl::param(
        path,
        &[d_in, d_out],
        Init::Glorot {
            fan_in: d_in,
            fan_out: d_out,
        },
    ));
}

pub fn declare_conv(
    out: &mut Vec<ParamDecl>,
    prefix: &str,
    kernel: usize,
    c_in: usize,
    c_out: usize,
) {
    out.push(ParamDecl::param(
        format!("{prefix}.weight"),
        &[kernel, c_out, c_in],
        Init::Glorot {
            fan_in: kernel * c_in,
            fan_out: kernel * c_out,
        },
    ));
    out.push(ParamDecl::param(
        format!("{prefix}.bias"),
        &[c_out],
        Init::Zeros,
    ));
}

pub fn declare_batch_norm(out: &mut Vec<ParamDecl>, prefix: &str, d: usize) {
    out.push(ParamDecl::param(
        format!("{prefix}.gamma"),
        &[d],
        Init::Ones,
    ));
    out.push(ParamDecl::param(
        format!("{prefix}.beta"),
        &[d],
        Init::Zeros,
    ));
    out.push(ParamDecl::buffer(
        format!("{prefix}.running_mean"),
        &[d],
        Init::Zeros,
    ));
    out.push(ParamDecl::buffer(
        format!("{prefix}.running_var"),
        &[d],
        Init::Ones,
    ));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_ema() {
        let mut decls = Vec::new();
        declare_batch_norm(&mut decls, "bn", 1);
        let mut store = ParamStore::<f64>::initialize(&decls, 0).unwrap();
        let mut f = Forward::new(&store, Mode::Train, true);
        let x = f.input(vec![1.0, 3.0], &[2, 1]).unwrap();
        f.batch_norm("bn", x).unwrap();
        let ups = f.take_bn_updates();
        apply_bn_updates(&mut store, &ups).unwrap();
        // mean 2, biased var 1, unbiased 2
        assert!((store.buffer("bn.running_mean").unwrap().data[0] - 0.2).abs() < 1e-12);
        assert!((store.buffer("bn.running_var").unwrap().data[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn params_bind_once() {
        let mut decls = Vec::new();
        declare_dense(&mut decls, "d", 2, 3);
        let store = ParamStore::<f64>::initialize(&decls, 1).unwrap();
        let mut f = Forward::new(&store, Mode::Eval, false);
        let a = f.param("d.weight").unwrap();
        let b = f.param("d.weight").unwrap();
        assert_eq!(a, b);
        assert!(f.param("missing").is_err());
    }
}
