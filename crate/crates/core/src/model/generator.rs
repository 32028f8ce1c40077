use crate::data::GaitWindow;
use crate::error::{Error, Result};
use crate::nn::{Forward, Mode, ParamStore, Real, Var};

use super::{AuxVae, Fusion, LOG_SIGMA_MAX, LOG_SIGMA_MIN};

/// Graph handles produced by [`AuxVae::encode`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    /// `(B, k)`.
    pub mu: Var,
    /// Clamped log standard deviation, `(B, k)`.
    pub log_sigma: Var,
    pub sigma: Var,
    /// Score tensors `(B * P, T', T0')` and `(B * P, T0', T')`.
    pub attention: Option<(Var, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub mu_z: Vec<f64>,
    pub sigma_z: Vec<f64>,
}

/// Attention scores of one encoded batch, `scores[b][p]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub num_heads: usize,
    pub len: usize,
    pub aux_len: usize,
    /// `[batch][head]`, each `len x aux_len`.
    pub primary: Vec<Vec<Vec<f64>>>,
    /// `[batch][head]`, each `aux_len x len`.
    pub aux: Vec<Vec<Vec<f64>>>,
}

impl AttentionTrace {
    fn split<T: Real>(
        values: &[T],
        batch: usize,
        heads: usize,
        n: usize,
        m: usize,
    ) -> Vec<Vec<Vec<f64>>> {
        (0..batch)
            .map(|b| {
                (0..heads)
                    .map(|p| {
                        let base = (b * heads + p) * n * m;
                        values[base..base + n * m].iter().map(|v| v.f64()).collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest `|row sum - 1|` over every score matrix.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (mats, width) in [(&self.primary, self.aux_len), (&self.aux, self.len)] {
            for m in mats.iter().flatten() {
                for row in m.chunks(width) {
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
        worst
    }
}

/// `(B, T, H * d) -> (B * H, T, d)`.
fn split_heads<T: Real>(f: &mut Forward<T>, x: Var, heads: usize) -> Result<Var> {
    let (b, t, hd) = match *f.graph.shape(x) {
        [b, t, hd] if hd % heads == 0 => (b, t, hd),
        ref s => {
            return Err(Error::shape(
                "split_heads",
                format!("{s:?} into {heads} heads"),
            ))
        }
    };
    let d = hd / heads;
    let mut index = Vec::with_capacity(b * t * hd);
    for bi in 0..b {
        for p in 0..heads {
            for ti in 0..t {
                let base = (bi * t + ti) * hd + p * d;
                index.extend(base..base + d);
            }
        }
    }
    f.graph.gather(x, index, &[b * heads, t, d])
}

/// `(B * H, T, d) -> (B, T, H * d)`.
fn merge_heads<T: Real>(f: &mut Forward<T>, x: Var, heads: usize) -> Result<Var> {
    let (bh, t, d) = match *f.graph.shape(x) {
        [bh, t, d] if bh % heads == 0 => (bh, t, d),
        ref s => {
            return Err(Error::shape(
                "merge_heads",
                format!("{s:?} from {heads} heads"),
            ))
        }
    };
    let b = bh / heads;
    let mut index = Vec::with_capacity(bh * t * d);
    for bi in 0..b {
        for ti in 0..t {
            for p in 0..heads {
                let base = ((bi * heads + p) * t + ti) * d;
                index.extend(base..base + d);
            }
        }
    }
    f.graph.gather(x, index, &[b, t, heads * d])
}

impl AuxVae {
    fn check_seq<T: Real>(&self, f: &Forward<T>, x: Var, what: &str) -> Result<(usize, usize)> {
        match *f.graph.shape(x) {
            [b, t, c] if c == self.config.num_channels && b > 0 && t > 0 => Ok((b, t)),
            ref s => Err(Error::shape(
                "encode",
                format!(
                    "{what} has shape {s:?}, expected (batch, time, {})",
                    self.config.num_channels
                ),
            )),
        }
    }

    /// Stack of conv -> GELU -> batch norm -> max-pool blocks.
    fn tcn<T: Real>(&self, f: &mut Forward<T>, prefix: &str, x: Var) -> Result<Var> {
        let e = &self.config.encoder;
        let mut h = x;
        for (u, d) in e.dilations().into_iter().enumerate() {
            h = f.conv(&format!("{prefix}.block{u}.conv"), h, d)?;
            h = f.graph.gelu(h);
            h = f.batch_norm(&format!("{prefix}.block{u}.bn"), h)?;
            h = f.graph.max_pool_time(h, e.pool_window)?;
        }
        Ok(h)
    }

    /// One attention direction: `query_src` attends to `key_src`.
    fn attend<T: Real>(
        &self,
        f: &mut Forward<T>,
        dir: &str,
        query_src: Var,
        key_src: Var,
    ) -> Result<(Var, Var)> {
        let e = &self.config.encoder;
        let p = format!("encoder.attn.{dir}");
        let q = f.linear(&format!("{p}.query"), query_src)?;
        let k = f.linear(&format!("{p}.key"), key_src)?;
        let v = f.linear(&format!("{p}.value"), key_src)?;
        let q = split_heads(f, q, e.num_heads)?;
        let k = split_heads(f, k, e.num_heads)?;
        let v = split_heads(f, v, e.num_heads)?;
        let scores = f.graph.bmm(q, k, true)?;
        let scores = f.graph.scale(scores, T::of(1.0 / (e.d_k as f64).sqrt()));
        let a = f.graph.softmax(scores);
        let attended = f.graph.bmm(a, v, false)?;
        let merged = merge_heads(f, attended, e.num_heads)?;
        let out = f.linear(&format!("{p}.out"), merged)?;
        Ok((out, a))
    }

    /// Bidirectional cross-attention between `h (B, T', d_h)` and
    /// `h_aux (B, T0', d_h)`. Returns the time-concatenated fused sequence
    /// `(B, T' + T0', P * d_v)` and both score tensors.
    pub fn cross_attend<T: Real>(
        &self,
        f: &mut Forward<T>,
        h: Var,
        h_aux: Var,
    ) -> Result<(Var, Var, Var)> {
        let d_h = self.config.encoder.attn_dim;
        let (sh, sa) = (f.graph.shape(h).to_vec(), f.graph.shape(h_aux).to_vec());
        if sh.len() != 3 || sa.len() != 3 || sh[0] != sa[0] || sh[2] != d_h || sa[2] != d_h {
            return Err(Error::shape(
                "cross_attend",
                format!("{sh:?} and {sa:?} with d_h = {d_h}"),
            ));
        }
        let (h_tilde, a) = self.attend(f, "primary", h, h_aux)?;
        let (h_aux_tilde, a_aux) = self.attend(f, "aux", h_aux, h)?;
        let fused = f.graph.concat(&[h_tilde, h_aux_tilde], 1)?;
        Ok((fused, a, a_aux))
    }

    /// Posterior parameters for a batch of loaded windows `x (B, T, C)` and
    /// baselines `x_aux (B, T0, C)`. The baseline is ignored without
    /// auxiliary fusion.
    pub fn encode<T: Real>(&self, f: &mut Forward<T>, x: Var, x_aux: Var) -> Result<EncoderVars> {
        let (b, t) = self.check_seq(f, x, "x")?;
        let (b_aux, t_aux) = self.check_seq(f, x_aux, "x_aux")?;
        if b != b_aux {
            return Err(Error::shape("encode", format!("batch {b} vs {b_aux}")));
        }
        let mut attention = None;
        let pooled = match self.config.fusion {
            Fusion::None => {
                let h = self.tcn(f, "encoder.tcn_x", x)?;
                let h = f.dense("encoder.proj_x", h)?;
                f.graph.max_over_time(h)?
            }
            Fusion::Concat => {
                if t != t_aux {
                    return Err(Error::shape(
                        "encode",
                        format!("concat fusion needs equal lengths, got {t} and {t_aux}"),
                    ));
                }
                let stacked = f.graph.concat(&[x, x_aux], 2)?;
                let h = self.tcn(f, "encoder.tcn_x", stacked)?;
                let h = f.dense("encoder.proj_x", h)?;
                f.graph.max_over_time(h)?
            }
            Fusion::CrossAttention => {
                let h = self.tcn(f, "encoder.tcn_x", x)?;
                let h = f.dense("encoder.proj_x", h)?;
                let h_aux = self.tcn(f, "encoder.tcn_aux", x_aux)?;
                let h_aux = f.dense("encoder.proj_aux", h_aux)?;
                let (fused, a, a_aux) = self.cross_attend(f, h, h_aux)?;
                attention = Some((a, a_aux));
                f.graph.max_over_time(fused)?
            }
        };
        let mu = f.dense("encoder.mu", pooled)?;
        let raw = f.dense("encoder.log_sigma", pooled)?;
        let log_sigma = f
            .graph
            .clamp(raw, T::of(LOG_SIGMA_MIN), T::of(LOG_SIGMA_MAX));
        let sigma = f.graph.exp(log_sigma);
        Ok(EncoderVars {
            mu,
            log_sigma,
            sigma,
            attention,
        })
    }

    /// Mean reconstruction `(B, T, C)` of the loaded window from `z (B, k)`
    /// and the baseline `x_aux (B, T0, C)`.
    pub fn decode<T: Real>(&self, f: &mut Forward<T>, z: Var, x_aux: Var) -> Result<Var> {
        let c = &self.config;
        let k = c.encoder.latent_dim;
        let b = match *f.graph.shape(z) {
            [b, kk] if kk == k => b,
            ref s => {
                return Err(Error::shape(
                    "decode",
                    format!("z has shape {s:?}, expected (batch, {k})"),
                ))
            }
        };
        let seed_in = if c.uses_aux_input() {
            let (b_aux, _) = self.check_seq(f, x_aux, "x_aux")?;
            if b_aux != b {
                return Err(Error::shape("decode", format!("batch {b} vs {b_aux}")));
            }
            let ctx = self.tcn(f, "decoder.context", x_aux)?;
            let ctx = f.graph.max_over_time(ctx)?;
            f.graph.concat(&[z, ctx], 1)?
        } else {
            z
        };
        let width = self.last_width();
        let seed_len = c.decoder_seed_len();
        let seed = f.dense("decoder.seed", seed_in)?;
        let mut h = f.graph.reshape(seed, &[b, seed_len, width])?;
        for j in 0..self.decoder_widths().len() {
            h = f.conv_transpose(
                &format!("decoder.block{j}.deconv"),
                h,
                c.encoder.pool_window,
                1,
            )?;
            h = f.graph.gelu(h);
            h = f.batch_norm(&format!("decoder.block{j}.bn"), h)?;
        }
        let h = f.graph.slice_time(h, 0, c.window_len)?;
        f.dense("decoder.out", h)
    }

    pub fn attention_trace<T: Real>(
        &self,
        f: &Forward<T>,
        vars: &EncoderVars,
    ) -> Option<AttentionTrace> {
        let (a, a_aux) = vars.attention?;
        let heads = self.config.encoder.num_heads;
        let s = f.graph.shape(a);
        let (bh, n, m) = (s[0], s[1], s[2]);
        let batch = bh / heads;
        Some(AttentionTrace {
            num_heads: heads,
            len: n,
            aux_len: m,
            primary: AttentionTrace::split(f.graph.value(a), batch, heads, n, m),
            aux: AttentionTrace::split(f.graph.value(a_aux), batch, heads, m, n),
        })
    }

    /// Encodes one pair of windows.
    pub fn encode_window<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &GaitWindow,
        x_aux: &GaitWindow,
        mode: Mode,
    ) -> Result<(EncoderOutput, Option<AttentionTrace>)> {
        if x.num_channels() != x_aux.num_channels() {
            return Err(Error::shape(
                "encode",
                format!(
                    "{} loaded channels vs {} baseline channels",
                    x.num_channels(),
                    x_aux.num_channels()
                ),
            ));
        }
        let mut f = Forward::new(store, mode, false);
        let xv = f.input(to_real(x), &[1, x.time_steps(), x.num_channels()])?;
        let av = f.input(
            to_real(x_aux),
            &[1, x_aux.time_steps(), x_aux.num_channels()],
        )?;
        let vars = self.encode(&mut f, xv, av)?;
        let trace = self.attention_trace(&f, &vars);
        let out = EncoderOutput {
            mu_z: f.graph.value(vars.mu).iter().map(|v| v.f64()).collect(),
            sigma_z: f.graph.value(vars.sigma).iter().map(|v| v.f64()).collect(),
        };
        Ok((out, trace))
    }

    /// Decodes one latent vector against one baseline window.
    pub fn decode_window<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &[f64],
        x_aux: &GaitWindow,
        mode: Mode,
    ) -> Result<GaitWindow> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("z must be finite".into()));
        }
        let mut f = Forward::new(store, mode, false);
        let zv = f.input(z.iter().map(|&v| T::of(v)).collect(), &[1, z.len()])?;
        let av = f.input(
            to_real(x_aux),
            &[1, x_aux.time_steps(), x_aux.num_channels()],
        )?;
        let out = self.decode(&mut f, zv, av)?;
        let values = f.graph.value(out).iter().map(|v| v.f64()).collect();
        GaitWindow::new(values, self.config.window_len, self.config.num_channels)
    }
}

pub(crate) fn to_real<T: Real>(w: &GaitWindow) -> Vec<T> {
    w.values().iter().map(|&v| T::of(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::ParamTensor;
    use crate::seed;
    use rand::Rng;

    fn micro(fusion: Fusion) -> AuxVae {
        let mut cfg = ModelConfig::new(3, 16, 12, 2);
        cfg.encoder.tcn_channels = vec![5, 4];
        cfg.encoder.attn_dim = 6;
        cfg.encoder.num_heads = 2;
        cfg.encoder.d_k = 3;
        cfg.encoder.d_v = 3;
        cfg.encoder.latent_dim = 4;
        cfg.head_hidden = 5;
        cfg.fusion = fusion;
        if fusion == Fusion::Concat {
            cfg.baseline_len = 16;
        }
        AuxVae::new(cfg).unwrap()
    }

    fn window(t: usize, c: usize, seed_v: u64) -> GaitWindow {
        let mut rng = seed::rng(seed_v, "w");
        GaitWindow::new(
            (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            t,
            c,
        )
        .unwrap()
    }

    #[test]
    fn shapes_and_attention_rows() {
        let m = micro(Fusion::CrossAttention);
        let store = m.init_params::<f64>(1).unwrap();
        let (x, a) = (window(16, 3, 1), window(12, 3, 2));
        for mode in [Mode::Train, Mode::Eval] {
            let (out, trace) = m.encode_window(&store, &x, &a, mode).unwrap();
            assert_eq!(out.mu_z.len(), 4);
            assert!(out.sigma_z.iter().all(|s| *s > 0.0));
            let trace = trace.unwrap();
            assert_eq!((trace.len, trace.aux_len), (4, 3));
            assert!(trace.max_row_sum_error() < 1e-12);
        }
        let xh = m
            .decode_window(&store, &[0.1, 0.2, 0.3, 0.4], &a, Mode::Eval)
            .unwrap();
        assert_eq!((xh.time_steps(), xh.num_channels()), (16, 3));
    }

    #[test]
    fn default_shapes() {
        let m = AuxVae::new(ModelConfig::new(72, 800, 800, 4)).unwrap();
        let store = m.init_params::<f32>(0).unwrap();
        let mut f = Forward::new(&store, Mode::Eval, false);
        let x = f.input(vec![0.1; 800 * 72], &[1, 800, 72]).unwrap();
        let a = f.input(vec![0.2; 800 * 72], &[1, 800, 72]).unwrap();
        let e = m.encode(&mut f, x, a).unwrap();
        let (att, _) = e.attention.unwrap();
        assert_eq!(f.graph.shape(att), &[4, 200, 200]);
        assert_eq!(f.graph.shape(e.mu), &[1, 128]);
        let out = m.decode(&mut f, e.mu, a).unwrap();
        assert_eq!(f.graph.shape(out), &[1, 800, 72]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let m = micro(Fusion::CrossAttention);
        let store = m.init_params::<f64>(1).unwrap();
        assert!(m
            .encode_window(&store, &window(16, 3, 1), &window(12, 2, 2), Mode::Eval)
            .is_err());
    }

    #[test]
    fn zero_value_projection_gives_bias_mu() {
        let m = micro(Fusion::CrossAttention);
        let mut store = m.init_params::<f64>(3).unwrap();
        for dir in ["primary", "aux"] {
            let p = store
                .param_mut(&format!("encoder.attn.{dir}.value"))
                .unwrap();
            *p = ParamTensor::zeros(&p.shape.clone());
        }
        store.param_mut("encoder.mu.bias").unwrap().data = vec![0.5, -1.0, 2.0, 0.25];
        let (out, _) = m
            .encode_window(&store, &window(16, 3, 4), &window(12, 3, 5), Mode::Eval)
            .unwrap();
        assert_eq!(out.mu_z, vec![0.5, -1.0, 2.0, 0.25]);
    }

    #[test]
    fn single_aux_step_attends_fully() {
        let mut cfg = micro(Fusion::CrossAttention).config().clone();
        cfg.baseline_len = 4;
        let m = AuxVae::new(cfg).unwrap();
        let store = m.init_params::<f64>(2).unwrap();
        // 4 baseline steps pool down to 1
        let (_, trace) = m
            .encode_window(&store, &window(16, 3, 1), &window(4, 3, 2), Mode::Eval)
            .unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.aux_len, 1);
        assert!(trace.primary.iter().flatten().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn decoder_depends_on_z_and_baseline() {
        let m = micro(Fusion::CrossAttention);
        let store = m.init_params::<f64>(7).unwrap();
        let a = window(12, 3, 9);
        let r1 = m.decode_window(&store, &[0.0; 4], &a, Mode::Eval).unwrap();
        let r2 = m
            .decode_window(&store, &[1.0, 0.0, 0.0, 0.0], &a, Mode::Eval)
            .unwrap();
        assert_ne!(r1, r2);
        let doubled = GaitWindow::new(a.values().iter().map(|v| 2.0 * v).collect(), 12, 3).unwrap();
        let r3 = m
            .decode_window(&store, &[0.0; 4], &doubled, Mode::Eval)
            .unwrap();
        assert_ne!(r1, r3);
    }

    #[test]
    fn eval_encoding_is_deterministic() {
        let m = micro(Fusion::Concat);
        let store = m.init_params::<f32>(1).unwrap();
        let (x, a) = (window(16, 3, 1), window(16, 3, 2));
        let first = m.encode_window(&store, &x, &a, Mode::Eval).unwrap();
        assert_eq!(first, m.encode_window(&store, &x, &a, Mode::Eval).unwrap());
        assert!(first.1.is_none());
    }
}
