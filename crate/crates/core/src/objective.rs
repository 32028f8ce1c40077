//! The β-weighted training loss: reconstruction MSE, style cross-entropy,
//! load MAE and the KL regularizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CarryStyle, GaitWindow};
use crate::error::{Error, Result};
use crate::model::AuxVae;
use crate::nn::loss::{
    cross_entropy, gaussian_kl_to_standard, mae, mse, reparameterize, standard_normal,
};
use crate::nn::{Forward, Real, Var};

/// One normalized training or evaluation item.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: GaitWindow,
    pub x_aux: GaitWindow,
    pub load_lbs: f64,
    pub style: CarryStyle,
    pub participant_id: String,
    pub trial_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub recon: f64,
    pub style: f64,
    pub load: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            style: 1.0,
            load: 1.0,
            kl: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_mse: f64,
    pub style_ce: f64,
    pub load_mae: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

/// Linear KL warmup from 0 to 1 over the first `warmup_frac` of training.
pub fn beta_schedule(epoch: usize, total_epochs: usize, warmup_frac: f64) -> f64 {
    let end = warmup_frac * total_epochs as f64;
    if end <= 0.0 {
        return 1.0;
    }
    (epoch as f64 / end).clamp(0.0, 1.0)
}

/// Batch tensors `(B, T, C)` for the loaded and baseline windows.
pub fn batch_inputs<T: Real>(f: &mut Forward<T>, batch: &[&Example]) -> Result<(Var, Var)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (t, t0, c) = (
        first.x.time_steps(),
        first.x_aux.time_steps(),
        first.x.num_channels(),
    );
    let mut x = Vec::with_capacity(batch.len() * t * c);
    let mut a = Vec::with_capacity(batch.len() * t0 * c);
    for e in batch {
        if e.x.time_steps() != t
            || e.x_aux.time_steps() != t0
            || e.x.num_channels() != c
            || e.x_aux.num_channels() != c
        {
            return Err(Error::shape(
                "batch",
                format!("trial {} differs in shape", e.trial_id),
            ));
        }
        x.extend(e.x.values().iter().map(|&v| T::of(v)));
        a.extend(e.x_aux.values().iter().map(|&v| T::of(v)));
    }
    let xv = f.input(x, &[batch.len(), t, c])?;
    let av = f.input(a, &[batch.len(), t0, c])?;
    Ok((xv, av))
}

fn finite<T: Real>(f: &Forward<T>, v: Var, term: &str) -> Result<f64> {
    let x = f.graph.scalar(v).f64();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{term} is {x}")))
    }
}

/// Builds the loss of one mini-batch on `f`'s graph and returns the scalar
/// to differentiate together with its terms. Each datum draws one latent
/// sample; the regressor sees the true style.
pub fn elbo_loss<T: Real, R: Rng + ?Sized>(
    model: &AuxVae,
    f: &mut Forward<T>,
    batch: &[&Example],
    beta: f64,
    weights: LossWeights,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    let (x, x_aux) = batch_inputs(f, batch)?;
    let b = batch.len();
    let cfg = model.config();
    let k = cfg.encoder.latent_dim;
    let enc = model.encode(f, x, x_aux)?;
    let eps = standard_normal::<T, R>(rng, b * k);
    let z = reparameterize(&mut f.graph, enc.mu, enc.sigma, eps)?;

    let recon = model.decode(f, z, x_aux)?;
    let recon_mse = mse(&mut f.graph, recon, x)?;

    let targets: Vec<T> = batch.iter().map(|e| T::of(e.load_lbs)).collect();
    let y = f.input(targets, &[b, 1])?;
    let (style_ce, y_hat) = if cfg.use_aux_output {
        let onehot: Vec<T> = batch
            .iter()
            .flat_map(|e| e.style.one_hot())
            .map(T::of)
            .collect();
        if onehot.len() != b * cfg.num_styles {
            return Err(Error::shape(
                "elbo_loss",
                "style count differs from the model",
            ));
        }
        let onehot = f.input(onehot, &[b, cfg.num_styles])?;
        let probs = model.classify_style(f, z)?;
        if f.graph.value(probs).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "style_ce: style probabilities are not finite".into(),
            ));
        }
        let ce = cross_entropy(&mut f.graph, probs, onehot)?;
        (Some(ce), model.regress_load(f, z, Some(onehot))?)
    } else {
        (None, model.regress_load(f, z, None)?)
    };
    let load_mae = mae(&mut f.graph, y_hat, y)?;
    let kl_sum = gaussian_kl_to_standard(&mut f.graph, enc.mu, enc.sigma)?;
    let kl = f.graph.scale(kl_sum, T::of(1.0 / b as f64));

    let mut parts = vec![
        f.graph.scale(recon_mse, T::of(weights.recon)),
        f.graph.scale(load_mae, T::of(weights.load)),
        f.graph.scale(kl, T::of(beta * weights.kl)),
    ];
    if let Some(ce) = style_ce {
        parts.push(f.graph.scale(ce, T::of(weights.style)));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = f.graph.add(total, p)?;
    }

    let breakdown = LossBreakdown {
        recon_mse: finite(f, recon_mse, "recon_mse")?,
        style_ce: match style_ce {
            Some(ce) => finite(f, ce, "style_ce")?,
            None => 0.0,
        },
        load_mae: finite(f, load_mae, "load_mae")?,
        kl: finite(f, kl, "kl")?,
        beta,
        total: finite(f, total, "total")?,
    };
    Ok((total, breakdown))
}
