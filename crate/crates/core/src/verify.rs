//! Finite-difference verification suite over the substrate ops and the
//! full training loss, at micro shapes in 64-bit precision.

use rand::Rng;
use serde::Serialize;

use crate::data::{CarryStyle, GaitWindow};
use crate::error::Result;
use crate::model::{AuxVae, Fusion, ModelConfig};
use crate::nn::graph::BatchNormMode;
use crate::nn::loss::{cross_entropy, gaussian_kl_to_standard, mae, mse};
use crate::nn::{
    grad_check, grad_check_fn, Forward, GradCheckOptions, GradCheckReport, Graph, Mode, Var,
};
use crate::objective::{elbo_loss, Example, LossWeights};
use crate::seed;

/// Micro model: `T = 16`, 3 channels, `k = 4`, 2 styles.
pub fn micro_config(fusion: Fusion, use_aux_output: bool) -> ModelConfig {
    let mut cfg = ModelConfig::new(3, 16, 16, 2);
    cfg.encoder.tcn_channels = vec![4, 4];
    cfg.encoder.attn_dim = 4;
    cfg.encoder.num_heads = 2;
    cfg.encoder.d_k = 2;
    cfg.encoder.d_v = 2;
    cfg.encoder.latent_dim = 4;
    cfg.head_hidden = 5;
    cfg.fusion = fusion;
    cfg.use_aux_output = use_aux_output;
    cfg
}

pub fn micro_examples(n: usize, seed_v: u64) -> Vec<Example> {
    let mut rng = seed::rng(seed_v, "verify/examples");
    (0..n)
        .map(|i| {
            let mut w = || {
                GaitWindow::new(
                    (0..48).map(|_| rng.random_range(-1.5..1.5)).collect(),
                    16,
                    3,
                )
                .expect("16 x 3")
            };
            Example {
                x: w(),
                x_aux: w(),
                load_lbs: rng.random_range(10.0..50.0),
                style: CarryStyle::new(i % 2, 2).expect("two styles"),
                participant_id: format!("p{i}"),
                trial_id: format!("t{i}"),
            }
        })
        .collect()
}

/// Grad check of the total loss with respect to every parameter. The
/// latent noise is fixed so the loss is a deterministic function of the
/// parameters.
pub fn elbo_grad_check(
    cfg: ModelConfig,
    seed_v: u64,
    beta: f64,
    coords_per_tensor: usize,
) -> Result<GradCheckReport> {
    let model = AuxVae::new(cfg)?;
    let store = model.init_params::<f64>(seed_v)?;
    let examples = micro_examples(2, seed_v);
    let batch: Vec<&Example> = examples.iter().collect();
    let eval = |s: &crate::nn::ParamStore<f64>| {
        let mut f = Forward::new(s, Mode::Train, true);
        let mut rng = seed::rng(seed_v, "verify/latent");
        let (loss, parts) = elbo_loss(
            &model,
            &mut f,
            &batch,
            beta,
            LossWeights::default(),
            &mut rng,
        )?;
        let grads = f.graph.backward(loss)?;
        Ok((parts.total, f.param_grads(&grads)))
    };
    grad_check(
        &store,
        eval,
        GradCheckOptions {
            coords_per_tensor,
            seed: seed_v,
            ..GradCheckOptions::default()
        },
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn random(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn positive_probs(rng: &mut impl Rng, rows: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| v / s));
    }
    out
}

type Build = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn weighted_sum(g: &mut Graph<f64>, y: Var, salt: u64) -> Result<Var> {
    // a random projection keeps every output coordinate in play
    let mut rng = seed::rng(salt, "verify/projection");
    let shape = g.shape(y).to_vec();
    let w = g.constant(random(&mut rng, g.value(y).len()), &shape)?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Every differentiable op, then the full loss for each model variant.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<SuiteEntry>> {
    let ops: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        (
            "matmul_bias",
            vec![vec![3, 4], vec![4, 2], vec![2]],
            |g, v| {
                let y = g.dense(v[0], v[1], v[2])?;
                weighted_sum(g, y, 1)
            },
        ),
        ("bmm_trans", vec![vec![2, 3, 4], vec![2, 5, 4]], |g, v| {
            let y = g.bmm(v[0], v[1], true)?;
            weighted_sum(g, y, 2)
        }),
        (
            "conv1d_dilated",
            vec![vec![2, 9, 3], vec![3, 4, 3], vec![4]],
            |g, v| {
                let y = g.conv1d(v[0], v[1], v[2], 2)?;
                weighted_sum(g, y, 3)
            },
        ),
        (
            "conv_transpose1d",
            vec![vec![2, 5, 3], vec![3, 2, 3], vec![2]],
            |g, v| {
                let y = g.conv_transpose1d(v[0], v[1], v[2], 2, 1)?;
                weighted_sum(g, y, 4)
            },
        ),
        ("gelu", vec![vec![4, 5]], |g, v| {
            let y = g.gelu(v[0]);
            weighted_sum(g, y, 5)
        }),
        (
            "batch_norm_train",
            vec![vec![2, 5, 3], vec![3], vec![3]],
            |g, v| {
                let (y, _) = g.batch_norm(v[0], v[1], v[2], BatchNormMode::Train { eps: 1e-5 })?;
                weighted_sum(g, y, 6)
            },
        ),
        ("max_pool", vec![vec![2, 7, 3]], |g, v| {
            let y = g.max_pool_time(v[0], 2)?;
            weighted_sum(g, y, 7)
        }),
        ("softmax", vec![vec![3, 5]], |g, v| {
            let y = g.softmax(v[0]);
            weighted_sum(g, y, 8)
        }),
        ("mse", vec![vec![3, 4], vec![3, 4]], |g, v| {
            mse(g, v[0], v[1])
        }),
        ("mae", vec![vec![3, 4], vec![3, 4]], |g, v| {
            mae(g, v[0], v[1])
        }),
        ("kl", vec![vec![6], vec![6]], |g, v| {
            let s = g.exp(v[1]);
            gaussian_kl_to_standard(g, v[0], s)
        }),
        (
            "concat_gather",
            vec![vec![2, 3, 2], vec![2, 4, 2]],
            |g, v| {
                let c = g.concat(&[v[0], v[1]], 1)?;
                let s = g.slice_time(c, 2, 4)?;
                weighted_sum(g, s, 9)
            },
        ),
    ];
    let mut out = Vec::new();
    for &s in seeds {
        let mut rng = seed::rng(s, "verify/inputs");
        for (name, shapes, build) in &ops {
            let inputs: Vec<(Vec<f64>, Vec<usize>)> = shapes
                .iter()
                .map(|sh| (random(&mut rng, sh.iter().product()), sh.clone()))
                .collect();
            let report = grad_check_fn(
                &inputs,
                build,
                GradCheckOptions {
                    seed: s,
                    ..GradCheckOptions::default()
                },
            )?;
            out.push(SuiteEntry {
                name: name.to_string(),
                seed: s,
                report,
            });
        }
        let probs = positive_probs(&mut rng, 3, 4);
        let onehot: Vec<f64> = (0..12)
            .map(|i| if i % 4 == (i / 4) % 4 { 1.0 } else { 0.0 })
            .collect();
        let report = grad_check_fn(
            &[(probs, vec![3, 4])],
            |g, v| {
                let t = g.constant(onehot.clone(), &[3, 4])?;
                cross_entropy(g, v[0], t)
            },
            GradCheckOptions {
                seed: s,
                ..GradCheckOptions::default()
            },
        )?;
        out.push(SuiteEntry {
            name: "cross_entropy".into(),
            seed: s,
            report,
        });
        for (name, fusion, aux) in [
            ("elbo_cross_attention", Fusion::CrossAttention, true),
            ("elbo_concat", Fusion::Concat, true),
            ("elbo_no_aux", Fusion::None, false),
        ] {
            out.push(SuiteEntry {
                name: name.into(),
                seed: s,
                report: elbo_grad_check(micro_config(fusion, aux), s, 0.7, 8)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_loss_gradients_match_differences() {
        let r = elbo_grad_check(micro_config(Fusion::CrossAttention, true), 3, 1.0, 6).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn suite_passes_for_one_seed() {
        for e in run_suite(&[11]).unwrap() {
            assert!(e.report.passed, "{} {:?}", e.name, e.report);
        }
    }
}
