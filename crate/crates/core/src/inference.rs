//! Style-marginalized load prediction and evaluation metrics.
//!
//! For latent samples `z_1..z_S` the prediction is
//! `(1/S) sum_s sum_l pi_l(z_s) * mu_y(z_s, e_l)`; the true carrying style is
//! never an input.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{resample_to_length, GaitWindow};
use crate::error::{Error, Result};
use crate::model::{AuxVae, StyleDistribution};
use crate::nn::loss::standard_normal;
use crate::nn::{Forward, Mode, ParamStore, Real};
use crate::objective::Example;
use crate::seed;

/// Trials encoded per forward pass.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub num_latent_samples: usize,
    /// Use `z = mu_z` as the single sample.
    pub deterministic_latent: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            num_latent_samples: 16,
            deterministic_latent: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_latent_samples == 0 {
            return Err(Error::Config {
                field: "inference.num_latent_samples".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        if self.deterministic_latent {
            1
        } else {
            self.num_latent_samples
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub load_lbs: f64,
    /// Latent-sample mean of the style probabilities; absent for variants
    /// without the style head.
    pub style: Option<StyleDistribution>,
}

/// `(1/S) sum_s sum_l probs[s][l] * mus[s][l]`.
pub fn marginalize(probs: &[Vec<f64>], mus: &[Vec<f64>]) -> Result<f64> {
    if probs.is_empty() || probs.len() != mus.len() {
        return Err(Error::InvalidArgument(
            "marginalize needs one probability row per sample".into(),
        ));
    }
    let mut acc = 0.0;
    for (p, m) in probs.iter().zip(mus) {
        if p.len() != m.len() {
            return Err(Error::shape(
                "marginalize",
                format!("{} probabilities for {} means", p.len(), m.len()),
            ));
        }
        acc += p.iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc / probs.len() as f64)
}

/// Predictions for `(loaded, baseline)` pairs; `seeds[i]` drives the
/// latent samples of pair `i`.
pub fn predict_batch<T: Real>(
    model: &AuxVae,
    store: &ParamStore<T>,
    pairs: &[(&GaitWindow, &GaitWindow)],
    seeds: &[u64],
    icfg: &InferenceConfig,
) -> Result<Vec<Prediction>> {
    icfg.validate()?;
    if pairs.len() != seeds.len() {
        return Err(Error::InvalidArgument(
            "one seed per trial is required".into(),
        ));
    }
    model.check_store(store)?;
    let chunks: Vec<usize> = (0..pairs.len()).step_by(CHUNK).collect();
    let out: Vec<Vec<Prediction>> = chunks
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(pairs.len());
            predict_chunk(model, store, &pairs[start..end], &seeds[start..end], icfg)
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

fn predict_chunk<T: Real>(
    model: &AuxVae,
    store: &ParamStore<T>,
    pairs: &[(&GaitWindow, &GaitWindow)],
    seeds: &[u64],
    icfg: &InferenceConfig,
) -> Result<Vec<Prediction>> {
    let cfg = model.config();
    let (b, k, l, s) = (
        pairs.len(),
        cfg.encoder.latent_dim,
        cfg.num_styles,
        icfg.samples(),
    );
    let (t, t0, c) = (
        pairs[0].0.time_steps(),
        pairs[0].1.time_steps(),
        pairs[0].0.num_channels(),
    );
    let mut x = Vec::with_capacity(b * t * c);
    let mut a = Vec::with_capacity(b * t0 * c);
    for (xw, aw) in pairs {
        if xw.time_steps() != t
            || aw.time_steps() != t0
            || xw.num_channels() != c
            || aw.num_channels() != c
        {
            return Err(Error::shape("predict", "trials differ in shape"));
        }
        x.extend(xw.values().iter().map(|&v| T::of(v)));
        a.extend(aw.values().iter().map(|&v| T::of(v)));
    }
    let mut f = Forward::new(store, Mode::Eval, false);
    let xv = f.input(x, &[b, t, c])?;
    let av = f.input(a, &[b, t0, c])?;
    let enc = model.encode(&mut f, xv, av)?;
    let mu = f.graph.value(enc.mu).to_vec();
    let sigma = f.graph.value(enc.sigma).to_vec();

    // z rows ordered (trial, sample)
    let mut z = Vec::with_capacity(b * s * k);
    for (i, &sd) in seeds.iter().enumerate() {
        let mut rng = seed::rng(sd, "latent");
        let (m, sg) = (&mu[i * k..(i + 1) * k], &sigma[i * k..(i + 1) * k]);
        for _ in 0..s {
            if icfg.deterministic_latent {
                z.extend_from_slice(m);
            } else {
                let eps = standard_normal::<T, _>(&mut rng, k);
                z.extend((0..k).map(|j| m[j] + sg[j] * eps[j]));
            }
        }
    }

    let mut g = Forward::new(store, Mode::Eval, false);
    if !cfg.use_aux_output {
        let zv = g.input(z, &[b * s, k])?;
        let y = model.regress_load(&mut g, zv, None)?;
        let y = g.graph.value(y);
        return Ok((0..b)
            .map(|i| Prediction {
                load_lbs: y[i * s..(i + 1) * s].iter().map(|v| v.f64()).sum::<f64>() / s as f64,
                style: None,
            })
            .collect());
    }
    let zv = g.input(z.clone(), &[b * s, k])?;
    let probs = model.classify_style(&mut g, zv)?;
    let probs: Vec<f64> = g.graph.value(probs).iter().map(|v| v.f64()).collect();
    // every z paired with every style, rows ordered (trial, sample, style)
    let mut zr = Vec::with_capacity(b * s * l * k);
    let mut er = Vec::with_capacity(b * s * l * l);
    for row in z.chunks(k) {
        for style in 0..l {
            zr.extend_from_slice(row);
            er.extend((0..l).map(|j| if j == style { T::one() } else { T::zero() }));
        }
    }
    let zv = g.input(zr, &[b * s * l, k])?;
    let ev = g.input(er, &[b * s * l, l])?;
    let mus = model.regress_load(&mut g, zv, Some(ev))?;
    let mus: Vec<f64> = g.graph.value(mus).iter().map(|v| v.f64()).collect();

    (0..b)
        .map(|i| {
            let p: Vec<Vec<f64>> = (0..s)
                .map(|j| probs[(i * s + j) * l..(i * s + j + 1) * l].to_vec())
                .collect();
            let m: Vec<Vec<f64>> = (0..s)
                .map(|j| mus[(i * s + j) * l..(i * s + j + 1) * l].to_vec())
                .collect();
            let mut mean = vec![0.0; l];
            for row in &p {
                mean.iter_mut()
                    .zip(row)
                    .for_each(|(a, v)| *a += v / s as f64);
            }
            Ok(Prediction {
                load_lbs: marginalize(&p, &m)?,
                style: Some(StyleDistribution { probs: mean }),
            })
        })
        .collect()
}

/// Prediction for one raw (unnormalized) pair of any length, resampled to
/// the model's lengths and normalized with the checkpoint's statistics.
pub fn predict_raw(
    ckpt: &Checkpoint,
    x: &GaitWindow,
    x_aux: &GaitWindow,
    icfg: &InferenceConfig,
    seed: u64,
) -> Result<Prediction> {
    let m = &ckpt.model;
    let prep = |w: &GaitWindow, len: usize| -> Result<GaitWindow> {
        if w.num_channels() != m.num_channels {
            return Err(Error::shape(
                "predict_raw",
                format!(
                    "{} channels, model has {}",
                    w.num_channels(),
                    m.num_channels
                ),
            ));
        }
        if w.time_steps() == len {
            ckpt.normalization.apply(w)
        } else {
            ckpt.normalization.apply(&resample_to_length(w, len)?)
        }
    };
    let model = AuxVae::new(m.clone())?;
    predict_load(
        &model,
        &ckpt.store,
        &prep(x, m.window_len)?,
        &prep(x_aux, m.baseline_len)?,
        icfg,
        seed,
    )
}

/// Prediction for one normalized pair.
pub fn predict_load<T: Real>(
    model: &AuxVae,
    store: &ParamStore<T>,
    x: &GaitWindow,
    x_aux: &GaitWindow,
    icfg: &InferenceConfig,
    seed: u64,
) -> Result<Prediction> {
    Ok(predict_batch(model, store, &[(x, x_aux)], &[seed], icfg)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPrediction {
    pub participant_id: String,
    pub trial_id: String,
    pub true_load: f64,
    pub predicted_load: f64,
    pub true_style: usize,
    pub predicted_style: Option<usize>,
    pub style_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_lbs: f64,
    /// Absent for variants without the style head.
    pub style_accuracy: Option<f64>,
    pub predictions: Vec<TrialPrediction>,
}

/// Per-trial latent seed, independent of trial order.
pub fn trial_seed(seed: u64, participant_id: &str, trial_id: &str) -> u64 {
    seed::derive(seed, &format!("inference/{participant_id}/{trial_id}"))
}

pub fn evaluate<T: Real>(
    model: &AuxVae,
    store: &ParamStore<T>,
    test: &[Example],
    icfg: &InferenceConfig,
    seed: u64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one trial".into(),
        ));
    }
    let pairs: Vec<(&GaitWindow, &GaitWindow)> = test.iter().map(|e| (&e.x, &e.x_aux)).collect();
    let seeds: Vec<u64> = test
        .iter()
        .map(|e| trial_seed(seed, &e.participant_id, &e.trial_id))
        .collect();
    let preds = predict_batch(model, store, &pairs, &seeds, icfg)?;
    let predictions: Vec<TrialPrediction> = test
        .iter()
        .zip(preds)
        .map(|(e, p)| TrialPrediction {
            participant_id: e.participant_id.clone(),
            trial_id: e.trial_id.clone(),
            true_load: e.load_lbs,
            predicted_load: p.load_lbs,
            true_style: e.style.index(),
            predicted_style: p.style.as_ref().map(StyleDistribution::argmax),
            style_probs: p.style.map(|s| s.probs).unwrap_or_default(),
        })
        .collect();
    Ok(summarize(predictions))
}

/// Metrics over per-trial predictions.
pub fn summarize(predictions: Vec<TrialPrediction>) -> EvalReport {
    let n = predictions.len().max(1) as f64;
    let mae_lbs = predictions
        .iter()
        .map(|p| (p.predicted_load - p.true_load).abs())
        .sum::<f64>()
        / n;
    let style_accuracy =
        if predictions.iter().all(|p| p.predicted_style.is_some()) && !predictions.is_empty() {
            Some(
                predictions
                    .iter()
                    .filter(|p| p.predicted_style == Some(p.true_style))
                    .count() as f64
                    / n,
            )
        } else {
            None
        };
    EvalReport {
        mae_lbs,
        style_accuracy,
        predictions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Fusion, ModelConfig};
    use crate::nn::ParamTensor;
    use rand::Rng;

    #[test]
    fn hand_marginalization() {
        assert_eq!(
            marginalize(&[vec![0.75, 0.25]], &[vec![20.0, 40.0]]).unwrap(),
            25.0
        );
        let y = marginalize(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![10.0, 0.0], vec![0.0, 30.0]],
        )
        .unwrap();
        assert_eq!(y, 20.0);
        assert!(marginalize(&[], &[]).is_err());
    }

    fn pred(t: f64, p: f64, s: usize, ps: Option<usize>) -> TrialPrediction {
        TrialPrediction {
            participant_id: "p".into(),
            trial_id: "t".into(),
            true_load: t,
            predicted_load: p,
            true_style: s,
            predicted_style: ps,
            style_probs: vec![],
        }
    }

    #[test]
    fn metric_examples() {
        let r = summarize(vec![
            pred(10.0, 14.0, 0, Some(0)),
            pred(20.0, 8.0, 1, Some(0)),
        ]);
        assert_eq!(r.mae_lbs, 8.0);
        assert_eq!(r.style_accuracy, Some(0.5));
        let r = summarize(vec![pred(10.0, 10.0, 1, Some(1))]);
        assert_eq!((r.mae_lbs, r.style_accuracy), (0.0, Some(1.0)));
        assert_eq!(
            summarize(vec![pred(1.0, 2.0, 0, None)]).style_accuracy,
            None
        );
    }

    fn micro(aux_out: bool) -> AuxVae {
        let mut cfg = ModelConfig::new(3, 16, 16, 2);
        cfg.encoder.tcn_channels = vec![4, 4];
        cfg.encoder.attn_dim = 4;
        cfg.encoder.num_heads = 2;
        cfg.encoder.d_k = 2;
        cfg.encoder.d_v = 2;
        cfg.encoder.latent_dim = 4;
        cfg.head_hidden = 4;
        cfg.use_aux_output = aux_out;
        if !aux_out {
            cfg.fusion = Fusion::None;
        }
        AuxVae::new(cfg).unwrap()
    }

    fn window(seed_v: u64) -> GaitWindow {
        let mut rng = seed::rng(seed_v, "w");
        GaitWindow::new(
            (0..48).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16,
            3,
        )
        .unwrap()
    }

    #[test]
    fn batch_matches_single_and_is_deterministic() {
        for aux in [true, false] {
            let m = micro(aux);
            let store = m.init_params::<f64>(3).unwrap();
            let ws: Vec<GaitWindow> = (0..5).map(window).collect();
            let pairs: Vec<_> = (0..4).map(|i| (&ws[i], &ws[i + 1])).collect();
            let seeds = [1, 2, 3, 4];
            let icfg = InferenceConfig::default();
            let all = predict_batch(&m, &store, &pairs, &seeds, &icfg).unwrap();
            for (i, p) in all.iter().enumerate() {
                let single =
                    predict_load(&m, &store, pairs[i].0, pairs[i].1, &icfg, seeds[i]).unwrap();
                assert!((single.load_lbs - p.load_lbs).abs() < 1e-12);
            }
            let det = InferenceConfig {
                deterministic_latent: true,
                ..icfg
            };
            let a = predict_load(&m, &store, &ws[0], &ws[1], &det, 1).unwrap();
            let b = predict_load(&m, &store, &ws[0], &ws[1], &det, 2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forced_one_hot_collapses_to_conditional_mean() {
        let m = micro(true);
        let mut store = m.init_params::<f64>(4).unwrap();
        let w = store.param_mut("classifier.out.weight").unwrap();
        *w = ParamTensor::zeros(&w.shape.clone());
        store.param_mut("classifier.out.bias").unwrap().data = vec![-1000.0, 1000.0];
        let (x, a) = (window(1), window(2));
        let icfg = InferenceConfig {
            num_latent_samples: 1,
            deterministic_latent: true,
        };
        let p = predict_load(&m, &store, &x, &a, &icfg, 0).unwrap();
        let (enc, _) = m.encode_window(&store, &x, &a, Mode::Eval).unwrap();
        let direct = m
            .regress_load_vec(&store, &enc.mu_z, Some(&[0.0, 1.0]))
            .unwrap()
            .mu_y;
        assert!((p.load_lbs - direct).abs() < 1e-12);
        assert_eq!(p.style.unwrap().argmax(), 1);
    }
}
