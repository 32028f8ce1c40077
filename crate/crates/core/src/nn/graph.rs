//! Dynamic computation graph with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to run its vector-Jacobian product. [`Graph::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order because a node can only reference nodes created before it.
//!
//! Sequence tensors use the `(batch, time, channel)` layout, row-major.

use crate::error::{Error, Result};

use super::real::Real;

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        n: usize,
        k: usize,
        m: usize,
    },
    AddBias(Var, Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        dilation: usize,
    },
    ConvTranspose1d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        dilation: usize,
    },
    Gelu(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    Sum(Var),
    Reshape(Var),
    Gather {
        input: Var,
        index: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        blocks: Vec<usize>,
    },
    Bmm {
        a: Var,
        b: Var,
        groups: usize,
        n: usize,
        k: usize,
        m: usize,
        trans_b: bool,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch norm, used by the
/// caller to update running averages.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (1/N) batch variance.
    pub var: Vec<T>,
    pub count: usize,
}

pub enum BatchNormMode<'a, T> {
    Train {
        eps: T,
    },
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
        eps: T,
    },
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every leaf that requires them.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().unwrap_or(&1);
    let rows = if last == 0 { 0 } else { numel(shape) / last };
    (rows, last)
}

fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::shape(
            op,
            format!("expected (batch, time, channel), got {shape:?}"),
        )),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First element of a node; meant for scalar results.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if value.len() != numel(shape) {
            return Err(Error::shape(
                "leaf",
                format!("{} values for shape {shape:?}", value.len()),
            ));
        }
        Ok(self.push(value, shape.to_vec(), Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf(value, shape, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        node: Op<T>,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, shape, node, rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, node: Op<T>) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(value, shape, node, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, T::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x <= T::zero()) {
            return Err(Error::InvalidArgument("log of a nonpositive value".into()));
        }
        Ok(self.map(a, T::ln, Op::Log(a)))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, T::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.map(a, |x| x.max(lo).min(hi), Op::Clamp { input: a, lo, hi })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(vec![s], vec![1], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(value, shape.to_vec(), Op::Reshape(a), rg))
    }

    /// `out[i] = input[index[i]]`; the backward pass scatter-adds.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n = self.value(a).len();
        if index.len() != numel(shape) || index.iter().any(|&i| i >= n) {
            return Err(Error::shape("gather", format!("bad index for {shape:?}")));
        }
        let src = self.value(a);
        let value = index.iter().map(|&i| src[i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(value, shape.to_vec(), Op::Gather { input: a, index }, rg))
    }

    /// Keep time steps `start..start + len` of a `(batch, time, channel)` tensor.
    pub fn slice_time(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (b, t, c) = seq_dims("slice_time", self.shape(a))?;
        if start + len > t {
            return Err(Error::shape("slice_time", format!("{start}+{len} > {t}")));
        }
        let mut index = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            for ti in start..start + len {
                let base = (bi * t + ti) * c;
                index.extend(base..base + c);
            }
        }
        self.gather(a, index, &[b, len, c])
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let outer: usize = base[..axis].iter().product();
        let mut blocks = Vec::with_capacity(inputs.len());
        let mut axis_total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?}")));
            }
            axis_total += s[axis];
            blocks.push(s[axis..].iter().product::<usize>());
        }
        let mut value = Vec::with_capacity(outer * blocks.iter().sum::<usize>());
        for o in 0..outer {
            for (&v, &blk) in inputs.iter().zip(&blocks) {
                value.extend_from_slice(&self.value(v)[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            shape,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                blocks,
            },
            rg,
        ))
    }

    /// `(n, k) x (k, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (n, k, m) = match (sa, sb) {
            ([n, k], [k2, m]) if k == k2 => (*n, *k, *m),
            _ => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![T::zero(); n * m];
        matmul_into(self.value(a), self.value(b), &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, vec![n, m], Op::MatMul { a, b, n, k, m }, rg))
    }

    /// Adds a bias vector along the last dimension.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = rows_of(self.shape(x));
        if self.shape(bias) != [d] {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias);
        let value = self
            .value(x)
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, shape, Op::AddBias(x, bias), rg))
    }

    /// Dense layer on the last dimension: `x W + b`, any leading shape.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, d_in) = rows_of(&shape);
        let d_out = match self.shape(w) {
            [di, d_out] if *di == d_in => *d_out,
            s => {
                return Err(Error::shape(
                    "dense",
                    format!("input {shape:?}, weight {s:?}"),
                ))
            }
        };
        let flat = if shape.len() == 2 {
            x
        } else {
            self.reshape(x, &[rows, d_in])?
        };
        let y = self.matmul(flat, w)?;
        let y = self.add_bias(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().unwrap() = d_out;
            self.reshape(y, &out_shape)
        }
    }

    /// Batched matmul over `groups`: `(G, n, k) x (G, k, m)`, or with
    /// `trans_b` the right operand is `(G, m, k)` and used transposed.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (g, n, k, m) = match (&sa[..], &sb[..]) {
            ([g, n, k], [g2, x, y]) if g == g2 => {
                let (k2, m) = if trans_b { (*y, *x) } else { (*x, *y) };
                if *k != k2 {
                    return Err(Error::shape("bmm", format!("{sa:?} x {sb:?}")));
                }
                (*g, *n, *k, m)
            }
            _ => return Err(Error::shape("bmm", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![T::zero(); g * n * m];
        let (av, bv) = (self.value(a), self.value(b));
        for gi in 0..g {
            let ab = &av[gi * n * k..(gi + 1) * n * k];
            let bb = &bv[gi * k * m..(gi + 1) * k * m];
            let ob = &mut out[gi * n * m..(gi + 1) * n * m];
            if trans_b {
                for i in 0..n {
                    for j in 0..m {
                        ob[i * m + j] = dot(&ab[i * k..(i + 1) * k], &bb[j * k..(j + 1) * k]);
                    }
                }
            } else {
                matmul_into(ab, bb, ob, n, k, m);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            out,
            vec![g, n, m],
            Op::Bmm {
                a,
                b,
                groups: g,
                n,
                k,
                m,
                trans_b,
            },
            rg,
        ))
    }

    /// Dilated causal convolution over time.
    ///
    /// `input` is `(B, T, C_in)`, `weight` is `(K, C_out, C_in)`, and
    /// `out[t, o] = b[o] + sum_k sum_i W[k, o, i] * x[t - d*k, i]` with
    /// zeros at negative time.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (b, t, cin) = seq_dims("conv1d", self.shape(input))?;
        let (kk, cout) = match *self.shape(weight) {
            [kk, cout, ci] if ci == cin && kk >= 1 => (kk, cout),
            ref s => {
                return Err(Error::shape(
                    "conv1d",
                    format!("weight {s:?} for {cin} input channels"),
                ))
            }
        };
        if self.shape(bias) != [cout] || dilation == 0 {
            return Err(Error::shape("conv1d", "bias length or dilation"));
        }
        let (x, w, bv) = (self.value(input), self.value(weight), self.value(bias));
        let mut out = vec![T::zero(); b * t * cout];
        for bi in 0..b {
            for ti in 0..t {
                let o_row = &mut out[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                o_row.copy_from_slice(bv);
                for k in 0..kk {
                    let shift = dilation * k;
                    if shift > ti {
                        break;
                    }
                    let xr = &x[(bi * t + ti - shift) * cin..(bi * t + ti - shift + 1) * cin];
                    let wk = &w[k * cout * cin..(k + 1) * cout * cin];
                    for (o, ov) in o_row.iter_mut().enumerate() {
                        *ov += dot(&wk[o * cin..(o + 1) * cin], xr);
                    }
                }
            }
        }
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            out,
            vec![b, t, cout],
            Op::Conv1d {
                input,
                weight,
                bias,
                dilation,
            },
            rg,
        ))
    }

    /// Fractionally strided (transposed) convolution: the input is spread
    /// to positions `t * stride` and convolved causally with the dilated
    /// kernel. Output length is `T * stride`; contributions past the end are
    /// dropped.
    pub fn conv_transpose1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        let (b, t, cin) = seq_dims("conv_transpose1d", self.shape(input))?;
        let (kk, cout) = match *self.shape(weight) {
            [kk, cout, ci] if ci == cin && kk >= 1 => (kk, cout),
            ref s => {
                return Err(Error::shape(
                    "conv_transpose1d",
                    format!("weight {s:?} for {cin} input channels"),
                ))
            }
        };
        if self.shape(bias) != [cout] || stride == 0 || dilation == 0 {
            return Err(Error::shape(
                "conv_transpose1d",
                "bias length, stride or dilation",
            ));
        }
        let tout = t * stride;
        let (x, w, bv) = (self.value(input), self.value(weight), self.value(bias));
        let mut out = vec![T::zero(); b * tout * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(bv);
        }
        for bi in 0..b {
            for ti in 0..t {
                let xr = &x[(bi * t + ti) * cin..(bi * t + ti + 1) * cin];
                for k in 0..kk {
                    let to = ti * stride + k * dilation;
                    if to >= tout {
                        break;
                    }
                    let wk = &w[k * cout * cin..(k + 1) * cout * cin];
                    let o_row = &mut out[(bi * tout + to) * cout..(bi * tout + to + 1) * cout];
                    for (o, ov) in o_row.iter_mut().enumerate() {
                        *ov += dot(&wk[o * cin..(o + 1) * cin], xr);
                    }
                }
            }
        }
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            out,
            vec![b, tout, cout],
            Op::ConvTranspose1d {
                input,
                weight,
                bias,
                stride,
                dilation,
            },
            rg,
        ))
    }

    /// Batch normalization over all leading dimensions, features on the
    /// last axis. Returns the batch statistics in training mode.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, d) = rows_of(self.shape(input));
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("batch_norm", "gamma/beta length"));
        }
        let x = self.value(input);
        let (mean, var, eps, batch_stats) = match mode {
            BatchNormMode::Train { eps } => {
                if n < 2 {
                    return Err(Error::InvalidArgument(
                        "batch_norm in train mode needs at least 2 rows".into(),
                    ));
                }
                let nf = T::of(n as f64);
                let mut mean = vec![T::zero(); d];
                for row in x.chunks(d) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nf);
                let mut var = vec![T::zero(); d];
                for row in x.chunks(d) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= nf);
                (mean, var, eps, true)
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != d || running_var.len() != d {
                    return Err(Error::shape("batch_norm", "running stats length"));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(d) {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(h * g[j] + bt[j]);
            }
        }
        let shape = self.shape(input).to_vec();
        let rg = self.rg(&[input, gamma, beta]);
        let v = self.push(
            out,
            shape,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        let stats = batch_stats.then(|| BatchStats {
            mean,
            var,
            count: n,
        });
        Ok((v, stats))
    }

    /// Non-overlapping max pooling over time; a short final window is kept.
    /// Ties route the gradient to the first maximal index.
    pub fn max_pool_time(&mut self, input: Var, window: usize) -> Result<Var> {
        let (b, t, c) = seq_dims("max_pool_time", self.shape(input))?;
        if window == 0 || t == 0 {
            return Err(Error::shape(
                "max_pool_time",
                "window and length must be positive",
            ));
        }
        let tout = t.div_ceil(window);
        let x = self.value(input);
        let mut out = Vec::with_capacity(b * tout * c);
        let mut argmax = Vec::with_capacity(b * tout * c);
        for bi in 0..b {
            for to in 0..tout {
                let lo = to * window;
                let hi = (lo + window).min(t);
                for ci in 0..c {
                    let mut best = (bi * t + lo) * c + ci;
                    for ti in lo + 1..hi {
                        let idx = (bi * t + ti) * c + ci;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(out, vec![b, tout, c], Op::MaxPool { input, argmax }, rg))
    }

    /// Max over the whole time axis: `(B, T, C) -> (B, C)`.
    pub fn max_over_time(&mut self, input: Var) -> Result<Var> {
        let (b, t, c) = seq_dims("max_over_time", self.shape(input))?;
        let pooled = self.max_pool_time(input, t)?;
        self.reshape(pooled, &[b, c])
    }

    /// Softmax over the last dimension, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (_, d) = rows_of(self.shape(a));
        let mut out = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).chunks(d) {
            softmax_row(row, &mut out);
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(out, shape, Op::Softmax(a), rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root has shape {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }

    fn backprop(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(grads, v) {
                        add_into(ga, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gy), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gy * o;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, &gy), &o) in gb.iter_mut().zip(g).zip(av) {
                        *x += gy * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::MatMul { a, b, n, k, m } => {
                let (n, k, m) = (*n, *k, *m);
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    // ga[i, p] += sum_j g[i, j] b[p, j]
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] += dot(gr, &bv[p * m..(p + 1) * m]);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // gb[p, j] += sum_i a[i, p] g[i, j]
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            axpy(&mut gb[p * m..(p + 1) * m], av[i * k + p], gr);
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(gx) = self.acc(grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let d = gb.len();
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                dilation,
            } => {
                let (b, t, cin) = (
                    self.shape(*input)[0],
                    self.shape(*input)[1],
                    self.shape(*input)[2],
                );
                let (kk, cout) = (self.shape(*weight)[0], self.shape(*weight)[1]);
                let (x, w) = (self.value(*input), self.value(*weight));
                if let Some(gx) = self.acc(grads, *input) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let gr = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                            for k in 0..kk {
                                let shift = dilation * k;
                                if shift > ti {
                                    break;
                                }
                                let base = (bi * t + ti - shift) * cin;
                                let gxr = &mut gx[base..base + cin];
                                let wk = &w[k * cout * cin..(k + 1) * cout * cin];
                                for (o, &gv) in gr.iter().enumerate() {
                                    axpy(gxr, gv, &wk[o * cin..(o + 1) * cin]);
                                }
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *weight) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let gr = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                            for k in 0..kk {
                                let shift = dilation * k;
                                if shift > ti {
                                    break;
                                }
                                let xr = &x
                                    [(bi * t + ti - shift) * cin..(bi * t + ti - shift + 1) * cin];
                                let gwk = &mut gw[k * cout * cin..(k + 1) * cout * cin];
                                for (o, &gv) in gr.iter().enumerate() {
                                    axpy(&mut gwk[o * cin..(o + 1) * cin], gv, xr);
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks(cout) {
                        add_into(gb, row);
                    }
                }
            }
            Op::ConvTranspose1d {
                input,
                weight,
                bias,
                stride,
                dilation,
            } => {
                let (b, t, cin) = (
                    self.shape(*input)[0],
                    self.shape(*input)[1],
                    self.shape(*input)[2],
                );
                let (kk, cout) = (self.shape(*weight)[0], self.shape(*weight)[1]);
                let tout = t * stride;
                let (x, w) = (self.value(*input), self.value(*weight));
                if let Some(gx) = self.acc(grads, *input) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let gxr = &mut gx[(bi * t + ti) * cin..(bi * t + ti + 1) * cin];
                            for k in 0..kk {
                                let to = ti * stride + k * dilation;
                                if to >= tout {
                                    break;
                                }
                                let gr = &g[(bi * tout + to) * cout..(bi * tout + to + 1) * cout];
                                let wk = &w[k * cout * cin..(k + 1) * cout * cin];
                                for (o, &gv) in gr.iter().enumerate() {
                                    axpy(gxr, gv, &wk[o * cin..(o + 1) * cin]);
                                }
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *weight) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let xr = &x[(bi * t + ti) * cin..(bi * t + ti + 1) * cin];
                            for k in 0..kk {
                                let to = ti * stride + k * dilation;
                                if to >= tout {
                                    break;
                                }
                                let gr = &g[(bi * tout + to) * cout..(bi * tout + to + 1) * cout];
                                let gwk = &mut gw[k * cout * cin..(k + 1) * cout * cin];
                                for (o, &gv) in gr.iter().enumerate() {
                                    axpy(&mut gwk[o * cin..(o + 1) * cin], gv, xr);
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks(cout) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gi, &gy), &xv) in ga.iter_mut().zip(g).zip(x) {
                        *gi += gy * gelu_grad(xv);
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = inv_std.len();
                let n = xhat.len() / d;
                let gam = self.value(*gamma);
                let mut sum_g = vec![T::zero(); d];
                let mut sum_gx = vec![T::zero(); d];
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * hr[j];
                    }
                }
                if let Some(gx) = self.acc(grads, *input) {
                    let nf = T::of(n as f64);
                    for ((gxr, gr), hr) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            let scale = gam[j] * inv_std[j];
                            if *batch_stats {
                                gxr[j] += scale * (gr[j] - sum_g[j] / nf - hr[j] * sum_gx[j] / nf);
                            } else {
                                gxr[j] += scale * gr[j];
                            }
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    add_into(gg, &sum_gx);
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    add_into(gb, &sum_g);
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(gx) = self.acc(grads, *input) {
                    for (&idx, &gy) in argmax.iter().zip(g) {
                        gx[idx] += gy;
                    }
                }
            }
            Op::Softmax(a) => {
                let d = *node.shape.last().unwrap();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gar, gr), yr) in
                        ga.chunks_mut(d).zip(g.chunks(d)).zip(node.value.chunks(d))
                    {
                        let s = dot(gr, yr);
                        for j in 0..d {
                            gar[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *x += gy * y;
                    }
                }
            }
            Op::Log(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(av) {
                        *x += gy / v;
                    }
                }
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(av) {
                        // subgradient 0 at the kink
                        if v > T::zero() {
                            *x += gy;
                        } else if v < T::zero() {
                            *x -= gy;
                        }
                    }
                }
            }
            Op::Square(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(av) {
                        *x += gy * (v + v);
                    }
                }
            }
            Op::Clamp { input, lo, hi } => {
                let av = self.value(*input);
                if let Some(ga) = self.acc(grads, *input) {
                    for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v >= *lo && v <= *hi {
                            *x += gy;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Gather { input, index } => {
                if let Some(ga) = self.acc(grads, *input) {
                    for (&i, &gy) in index.iter().zip(g) {
                        ga[i] += gy;
                    }
                }
            }
            Op::Concat {
                inputs,
                outer,
                blocks,
            } => {
                let total: usize = blocks.iter().sum();
                let mut offset = 0;
                for (&v, &blk) in inputs.iter().zip(blocks) {
                    if let Some(gv) = self.acc(grads, v) {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + blk];
                            add_into(&mut gv[o * blk..(o + 1) * blk], src);
                        }
                    }
                    offset += blk;
                }
            }
            Op::Bmm {
                a,
                b,
                groups,
                n,
                k,
                m,
                trans_b,
            } => {
                let (n, k, m) = (*n, *k, *m);
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for gi in 0..*groups {
                        let gg = &g[gi * n * m..(gi + 1) * n * m];
                        let bb = &bv[gi * k * m..(gi + 1) * k * m];
                        let gab = &mut ga[gi * n * k..(gi + 1) * n * k];
                        for i in 0..n {
                            let gr = &gg[i * m..(i + 1) * m];
                            if *trans_b {
                                // b is (m, k): ga[i, :] += sum_j g[i, j] b[j, :]
                                for (j, &gv) in gr.iter().enumerate() {
                                    axpy(&mut gab[i * k..(i + 1) * k], gv, &bb[j * k..(j + 1) * k]);
                                }
                            } else {
                                for p in 0..k {
                                    gab[i * k + p] += dot(gr, &bb[p * m..(p + 1) * m]);
                                }
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for gi in 0..*groups {
                        let gg = &g[gi * n * m..(gi + 1) * n * m];
                        let ab = &av[gi * n * k..(gi + 1) * n * k];
                        let gbb = &mut gb[gi * k * m..(gi + 1) * k * m];
                        for i in 0..n {
                            let gr = &gg[i * m..(i + 1) * m];
                            let ar = &ab[i * k..(i + 1) * k];
                            if *trans_b {
                                // gb[j, :] += g[i, j] a[i, :]
                                for (j, &gv) in gr.iter().enumerate() {
                                    axpy(&mut gbb[j * k..(j + 1) * k], gv, ar);
                                }
                            } else {
                                for (p, &ap) in ar.iter().enumerate() {
                                    axpy(&mut gbb[p * m..(p + 1) * m], ap, gr);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn add_into<T: Real>(y: &mut [T], x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(orow, av, &b[p * m..(p + 1) * m]);
            }
        }
    }
}

pub(crate) fn softmax_row<T: Real>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut total = T::zero();
    for &v in row {
        let e = (v - max).exp();
        total += e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|e| *e /= total);
}

/// Standard normal CDF.
pub fn normal_cdf<T: Real>(x: T) -> T {
    T::of(0.5) * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf())
}

/// `x * Phi(x)`, exact erf form.
pub fn gelu<T: Real>(x: T) -> T {
    x * normal_cdf(x)
}

fn gelu_grad<T: Real>(x: T) -> T {
    let pdf = (T::of(-0.5) * x * x).exp() / T::of((2.0 * std::f64::consts::PI).sqrt());
    normal_cdf(x) + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g64() -> Graph<f64> {
        Graph::new()
    }

    #[test]
    fn dense_identity_and_hand_product() {
        let mut g = g64();
        let x = g.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
        let eye = g.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let zero = g.constant(vec![0.0, 0.0], &[2]).unwrap();
        let y = g.dense(x, eye, zero).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0]);

        let w = g.constant(vec![1.0, 1.0], &[2, 1]).unwrap();
        let b = g.leaf(vec![0.5], &[1], true).unwrap();
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y), &[3.5]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap(), &[1.0]);
    }

    #[test]
    fn dilated_conv_hand_example() {
        let mut g = g64();
        let x = g
            .constant(vec![1.0, 2.0, 3.0, 4.0, 5.0], &[1, 5, 1])
            .unwrap();
        let w = g.constant(vec![1.0, 1.0], &[2, 1, 1]).unwrap();
        let b = g.constant(vec![0.0], &[1]).unwrap();
        let y = g.conv1d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_kernel_one_is_pointwise_dense() {
        let mut g = g64();
        let xs = vec![0.3, -1.0, 2.0, 0.5, 1.5, -0.7];
        let x = g.constant(xs.clone(), &[1, 3, 2]).unwrap();
        // weight (1, out=1, in=2)
        let w = g.constant(vec![2.0, -1.0], &[1, 1, 2]).unwrap();
        let b = g.constant(vec![0.25], &[1]).unwrap();
        let y = g.conv1d(x, w, b, 4).unwrap();
        let expect: Vec<f64> = xs.chunks(2).map(|r| 2.0 * r[0] - r[1] + 0.25).collect();
        assert_eq!(g.value(y), expect.as_slice());
    }

    #[test]
    fn transposed_conv_spreads_to_even_positions() {
        let mut g = g64();
        let x = g.constant(vec![3.0, -2.0], &[1, 2, 1]).unwrap();
        let w = g.constant(vec![1.0], &[1, 1, 1]).unwrap();
        let b = g.constant(vec![0.0], &[1]).unwrap();
        let y = g.conv_transpose1d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y), &[3.0, 0.0, -2.0, 0.0]);
        let y1 = g.conv_transpose1d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y1), &[3.0, -2.0]);
    }

    #[test]
    fn pool_then_upsample_restores_length() {
        let mut g = g64();
        let x = g
            .constant((0..12).map(f64::from).collect(), &[1, 6, 2])
            .unwrap();
        let p = g.max_pool_time(x, 2).unwrap();
        let w = g.constant(vec![1.0, 0.0, 0.0, 1.0], &[1, 2, 2]).unwrap();
        let b = g.constant(vec![0.0; 2], &[2]).unwrap();
        let u = g.conv_transpose1d(p, w, b, 2, 1).unwrap();
        assert_eq!(g.shape(u), &[1, 6, 2]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-6);
        assert!((gelu(1.0f64) - 0.841_344_746).abs() < 1e-6);
    }

    #[test]
    fn batch_norm_modes() {
        let mut g = g64();
        let x = g
            .constant(vec![1.0, 4.0, 3.0, 8.0, 5.0, 0.0], &[3, 2])
            .unwrap();
        let gamma = g.constant(vec![1.0, 1.0], &[2]).unwrap();
        let beta = g.constant(vec![0.0, 0.0], &[2]).unwrap();
        let (y, stats) = g
            .batch_norm(x, gamma, beta, BatchNormMode::Train { eps: 1e-12 })
            .unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![3.0, 4.0]);
        let col0: Vec<f64> = g.value(y).chunks(2).map(|r| r[0]).collect();
        let m: f64 = col0.iter().sum::<f64>() / 3.0;
        let v: f64 = col0.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);

        let x = g.constant(vec![3.0], &[1, 1]).unwrap();
        let gamma = g.constant(vec![1.0], &[1]).unwrap();
        let beta = g.constant(vec![0.0], &[1]).unwrap();
        let mode = BatchNormMode::Eval {
            running_mean: &[1.0],
            running_var: &[4.0],
            eps: 1e-5,
        };
        let (y, stats) = g.batch_norm(x, gamma, beta, mode).unwrap();
        assert!(stats.is_none());
        assert!((g.value(y)[0] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);

        let err = g.batch_norm(x, gamma, beta, BatchNormMode::Train { eps: 1e-5 });
        assert!(err.is_err());
    }

    #[test]
    fn batch_norm_affine() {
        let mut g = g64();
        let x = g.constant(vec![-1.0, 1.0, -1.0, 1.0], &[4, 1]).unwrap();
        let gamma = g.constant(vec![2.0], &[1]).unwrap();
        let beta = g.constant(vec![3.0], &[1]).unwrap();
        let (y, _) = g
            .batch_norm(x, gamma, beta, BatchNormMode::Train { eps: 0.0 })
            .unwrap();
        assert_eq!(g.value(y), &[1.0, 5.0, 1.0, 5.0]);
    }

    #[test]
    fn max_pool_values_and_tie_rule() {
        let mut g = g64();
        let x = g.leaf(vec![1.0, 3.0, 2.0, 0.0], &[1, 4, 1], true).unwrap();
        let p = g.max_pool_time(x, 2).unwrap();
        assert_eq!(g.value(p), &[3.0, 2.0]);
        let id = g.max_pool_time(x, 1).unwrap();
        assert_eq!(g.value(id), g.value(x));

        let t = g.leaf(vec![2.0, 2.0], &[1, 2, 1], true).unwrap();
        let p = g.max_pool_time(t, 2).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(t).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn max_pool_keeps_short_tail() {
        let mut g = g64();
        let x = g
            .constant(vec![1.0, 5.0, 2.0, 7.0, 4.0], &[1, 5, 1])
            .unwrap();
        let p = g.max_pool_time(x, 2).unwrap();
        assert_eq!(g.value(p), &[5.0, 7.0, 4.0]);
    }

    #[test]
    fn softmax_reference_rows() {
        let mut g = g64();
        let x = g
            .constant(
                vec![0.0, 0.0, 0.0, 1f64.ln(), 2f64.ln(), 3f64.ln()],
                &[2, 3],
            )
            .unwrap();
        let y = g.softmax(x);
        let v = g.value(y);
        for p in &v[..3] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        for (p, e) in v[3..].iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_along_time_and_channel() {
        let mut g = g64();
        let a = g.constant(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
        let b = g.constant(vec![5.0, 6.0], &[1, 1, 2]).unwrap();
        let t = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(t), &[1, 3, 2]);
        assert_eq!(g.value(t), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = g.constant(vec![9.0, 8.0], &[1, 2, 1]).unwrap();
        let ch = g.concat(&[a, c], 2).unwrap();
        assert_eq!(g.value(ch), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        assert!(g.concat(&[a, c], 1).is_err());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = g64();
        let a = g.constant(vec![1.0; 6], &[2, 3]).unwrap();
        let b = g.constant(vec![1.0; 6], &[2, 3]).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
        let w = g.constant(vec![1.0; 4], &[2, 2]).unwrap();
        let bias = g.constant(vec![0.0; 2], &[2]).unwrap();
        assert!(g.dense(a, w, bias).is_err());
        let x = g.constant(vec![1.0; 6], &[1, 3, 2]).unwrap();
        let cw = g.constant(vec![1.0; 3], &[1, 1, 3]).unwrap();
        let cb = g.constant(vec![0.0], &[1]).unwrap();
        assert!(g.conv1d(x, cw, cb, 1).is_err());
    }
}
