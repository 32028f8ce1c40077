//! The AuxVAE network: a dual-stream TCN encoder with bidirectional
//! cross-attention, a baseline-conditioned decoder, and two predictor heads.
//!
//! Every tensor flowing through the model is batched. Sequences are
//! `(batch, time, channel)` and vectors are `(batch, dim)`.

mod generator;
mod predictor;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::forward::{declare_batch_norm, declare_conv, declare_dense, declare_linear};
use crate::nn::{Init, ParamDecl, ParamStore, Real};

pub use generator::{AttentionTrace, EncoderOutput, EncoderVars};
pub use predictor::{LoadPrediction, StyleDistribution};

/// Bounds applied to the log standard deviation head.
pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 7.0;

pub const TARGET_MEAN: &str = "regressor.target_mean";
pub const TARGET_STD: &str = "regressor.target_std";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Output width of each TCN block; block `u` uses dilation `2^u`.
    pub tcn_channels: Vec<usize>,
    pub kernel_size: usize,
    pub attn_dim: usize,
    pub num_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub latent_dim: usize,
    pub pool_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            tcn_channels: vec![256, 128],
            kernel_size: 3,
            attn_dim: 64,
            num_heads: 4,
            d_k: 16,
            d_v: 16,
            latent_dim: 128,
            pool_window: 2,
        }
    }
}

impl EncoderConfig {
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.tcn_channels.len()).map(|u| 1 << u).collect()
    }

    /// Sequence length after every TCN block has pooled.
    pub fn pooled_len(&self, t: usize) -> usize {
        (0..self.tcn_channels.len()).fold(t, |len, _| len.div_ceil(self.pool_window))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("model.encoder.{field}"),
                reason: reason.into(),
            })
        };
        if self.tcn_channels.is_empty() || self.tcn_channels.contains(&0) {
            return fail("tcn_channels", "needs at least one positive width");
        }
        if self.kernel_size == 0 {
            return fail("kernel_size", "must be positive");
        }
        if self.pool_window == 0 {
            return fail("pool_window", "must be positive");
        }
        for (name, v) in [
            ("attn_dim", self.attn_dim),
            ("num_heads", self.num_heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return fail(name, "must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// No auxiliary stream anywhere in the model.
    None,
    /// Loaded and baseline windows stacked along channels into one stream.
    Concat,
    CrossAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_channels: usize,
    pub window_len: usize,
    pub baseline_len: usize,
    pub num_styles: usize,
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub fusion: Fusion,
    pub use_aux_output: bool,
}

impl ModelConfig {
    pub fn new(
        num_channels: usize,
        window_len: usize,
        baseline_len: usize,
        num_styles: usize,
    ) -> Self {
        Self {
            num_channels,
            window_len,
            baseline_len,
            num_styles,
            encoder: EncoderConfig::default(),
            head_hidden: 64,
            fusion: Fusion::CrossAttention,
            use_aux_output: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let fail = |field: &str, reason: String| {
            Err(Error::Config {
                field: format!("model.{field}"),
                reason,
            })
        };
        if self.num_channels == 0 {
            return fail("num_channels", "must be positive".into());
        }
        if self.window_len < 2 || self.baseline_len < 2 {
            return fail("window_len", "windows need at least 2 samples".into());
        }
        if self.num_styles < 2 {
            return fail("num_styles", "need at least 2 styles".into());
        }
        if self.head_hidden == 0 {
            return fail("head_hidden", "must be positive".into());
        }
        if self.fusion == Fusion::Concat && self.window_len != self.baseline_len {
            return fail(
                "fusion",
                format!(
                    "concat fusion needs equal lengths, got {} and {}",
                    self.window_len, self.baseline_len
                ),
            );
        }
        Ok(())
    }

    pub fn uses_aux_input(&self) -> bool {
        self.fusion != Fusion::None
    }

    /// Seed length of the decoder before upsampling.
    pub fn decoder_seed_len(&self) -> usize {
        let up = self
            .encoder
            .pool_window
            .pow(self.encoder.tcn_channels.len() as u32);
        self.window_len.div_ceil(up)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// A validated model configuration with its parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxVae {
    config: ModelConfig,
}

fn declare_tcn(out: &mut Vec<ParamDecl>, prefix: &str, enc: &EncoderConfig, c_in: usize) {
    let mut width = c_in;
    for (u, &c) in enc.tcn_channels.iter().enumerate() {
        declare_conv(
            out,
            &format!("{prefix}.block{u}.conv"),
            enc.kernel_size,
            width,
            c,
        );
        declare_batch_norm(out, &format!("{prefix}.block{u}.bn"), c);
        width = c;
    }
}

impl AuxVae {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn last_width(&self) -> usize {
        *self
            .config
            .encoder
            .tcn_channels
            .last()
            .expect("validated nonempty")
    }

    /// Width of the vector feeding the latent heads.
    fn pooled_dim(&self) -> usize {
        let e = &self.config.encoder;
        match self.config.fusion {
            Fusion::CrossAttention => e.num_heads * e.d_v,
            Fusion::None | Fusion::Concat => e.attn_dim,
        }
    }

    pub fn declarations(&self) -> Vec<ParamDecl> {
        let c = &self.config;
        let e = &c.encoder;
        let mut d = Vec::new();
        let x_in = if c.fusion == Fusion::Concat {
            2 * c.num_channels
        } else {
            c.num_channels
        };
        declare_tcn(&mut d, "encoder.tcn_x", e, x_in);
        declare_dense(&mut d, "encoder.proj_x", self.last_width(), e.attn_dim);
        if c.fusion == Fusion::CrossAttention {
            declare_tcn(&mut d, "encoder.tcn_aux", e, c.num_channels);
            declare_dense(&mut d, "encoder.proj_aux", self.last_width(), e.attn_dim);
            let hv = e.num_heads * e.d_v;
            for dir in ["primary", "aux"] {
                let p = format!("encoder.attn.{dir}");
                declare_linear(
                    &mut d,
                    &format!("{p}.query"),
                    e.attn_dim,
                    e.num_heads * e.d_k,
                );
                declare_linear(&mut d, &format!("{p}.key"), e.attn_dim, e.num_heads * e.d_k);
                declare_linear(&mut d, &format!("{p}.value"), e.attn_dim, hv);
                declare_linear(&mut d, &format!("{p}.out"), hv, hv);
            }
        }
        declare_dense(&mut d, "encoder.mu", self.pooled_dim(), e.latent_dim);
        declare_dense(&mut d, "encoder.log_sigma", self.pooled_dim(), e.latent_dim);

        let mut seed_in = e.latent_dim;
        if c.uses_aux_input() {
            declare_tcn(&mut d, "decoder.context", e, c.num_channels);
            seed_in += self.last_width();
        }
        declare_dense(
            &mut d,
            "decoder.seed",
            seed_in,
            c.decoder_seed_len() * self.last_width(),
        );
        let mut width = self.last_width();
        for (j, c_out) in self.decoder_widths().into_iter().enumerate() {
            declare_conv(
                &mut d,
                &format!("decoder.block{j}.deconv"),
                e.kernel_size,
                width,
                c_out,
            );
            declare_batch_norm(&mut d, &format!("decoder.block{j}.bn"), c_out);
            width = c_out;
        }
        declare_dense(&mut d, "decoder.out", width, c.num_channels);

        if c.use_aux_output {
            declare_dense(&mut d, "classifier.hidden", e.latent_dim, c.head_hidden);
            declare_dense(&mut d, "classifier.out", c.head_hidden, c.num_styles);
        }
        let reg_in = e.latent_dim + if c.use_aux_output { c.num_styles } else { 0 };
        declare_dense(&mut d, "regressor.hidden", reg_in, c.head_hidden);
        declare_dense(&mut d, "regressor.out", c.head_hidden, 1);
        d.push(ParamDecl::buffer(TARGET_MEAN, &[1], Init::Zeros));
        d.push(ParamDecl::buffer(TARGET_STD, &[1], Init::Ones));
        d
    }

    /// Output widths of the decoder's upsampling blocks: the encoder widths
    /// in reverse order.
    fn decoder_widths(&self) -> Vec<usize> {
        self.config
            .encoder
            .tcn_channels
            .iter()
            .rev()
            .copied()
            .collect()
    }

    /// Fresh parameters; every tensor draws from a stream keyed by its path,
    /// so variants sharing a path share its initial value.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        ParamStore::initialize(&self.declarations(), seed)
    }

    /// Checks that `store` holds exactly this model's tensors.
    pub fn check_store<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        for d in self.declarations() {
            let t = match d.kind {
                crate::nn::Kind::Param => store.param(&d.path)?,
                crate::nn::Kind::Buffer => store.buffer(&d.path)?,
            };
            if t.shape != d.shape {
                return Err(Error::shape(
                    "check_store",
                    format!("{} has shape {:?}, expected {:?}", d.path, t.shape, d.shape),
                ));
            }
        }
        let declared = self.declarations().len();
        let held = store.params().count() + store.buffers().count();
        if held != declared {
            return Err(Error::Checkpoint(format!(
                "store holds {held} tensors, model declares {declared}"
            )));
        }
        Ok(())
    }

    /// Sets the affine map from the regressor output to pounds.
    pub fn set_target_scaling<T: Real>(
        store: &mut ParamStore<T>,
        mean: f64,
        std: f64,
    ) -> Result<()> {
        if !(std > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "target scaling needs finite mean and positive std, got {mean}, {std}"
            )));
        }
        store.buffer_mut(TARGET_MEAN)?.data[0] = T::of(mean);
        store.buffer_mut(TARGET_STD)?.data[0] = T::of(std);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(cfg: ModelConfig) -> std::collections::BTreeSet<String> {
        AuxVae::new(cfg)
            .unwrap()
            .declarations()
            .into_iter()
            .map(|d| d.path)
            .collect()
    }

    #[test]
    fn default_pooling_arithmetic() {
        let cfg = ModelConfig::new(72, 800, 800, 4);
        assert_eq!(cfg.encoder.pooled_len(800), 200);
        assert_eq!(cfg.decoder_seed_len(), 200);
        assert_eq!(cfg.encoder.dilations(), vec![1, 2]);
    }

    #[test]
    fn variant_namespaces() {
        let mut cfg = ModelConfig::new(3, 16, 16, 2);
        let full = paths(cfg.clone());
        assert!(full.iter().any(|p| p.starts_with("encoder.attn.aux")));
        assert!(full.iter().any(|p| p.starts_with("classifier.")));
        cfg.fusion = Fusion::None;
        cfg.use_aux_output = false;
        let bare = paths(cfg);
        assert!(!bare
            .iter()
            .any(|p| p.starts_with("classifier.") || p.contains("attn") || p.contains("aux")));
        assert!(!bare.iter().any(|p| p.starts_with("decoder.context")));
    }

    #[test]
    fn concat_needs_equal_lengths() {
        let mut cfg = ModelConfig::new(3, 16, 20, 2);
        assert!(AuxVae::new(cfg.clone()).is_ok());
        cfg.fusion = Fusion::Concat;
        assert!(AuxVae::new(cfg).is_err());
    }

    #[test]
    fn hash_tracks_fields() {
        let a = ModelConfig::new(3, 16, 16, 2);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.encoder.latent_dim = 5;
        assert_ne!(a.hash(), b.hash());
    }
}
