use rand::Rng;

use auxvae::model::{AuxVae, Fusion};
use auxvae::nn::loss::{reparameterize, standard_normal};
use auxvae::nn::{Forward, Graph, Mode};
use auxvae::objective::{elbo_loss, Example, LossWeights};
use auxvae::seed;
use auxvae::verify::{micro_config, micro_examples};

/// Straight-line recomputation of every loss term for a batch of one, from
/// the public encode/decode/head entry points and closed-form formulas.
#[test]
fn loss_terms_match_straight_line_oracle() {
    for (fusion, aux_out) in [
        (Fusion::CrossAttention, true),
        (Fusion::Concat, true),
        (Fusion::None, false),
    ] {
        let model = AuxVae::new(micro_config(fusion, aux_out)).unwrap();
        let store = model.init_params::<f64>(17).unwrap();
        for e in micro_examples(3, 4) {
            let beta = 0.4;
            let mut f = Forward::new(&store, Mode::Train, false);
            let mut rng = seed::rng(1, "oracle");
            let (_, got) = elbo_loss(
                &model,
                &mut f,
                &[&e],
                beta,
                LossWeights::default(),
                &mut rng,
            )
            .unwrap();

            let (enc, _) = model
                .encode_window(&store, &e.x, &e.x_aux, Mode::Train)
                .unwrap();
            let mut rng = seed::rng(1, "oracle");
            let eps: Vec<f64> = standard_normal(&mut rng, enc.mu_z.len());
            let z: Vec<f64> = enc
                .mu_z
                .iter()
                .zip(&enc.sigma_z)
                .zip(&eps)
                .map(|((m, s), e)| m + s * e)
                .collect();
            let recon = model
                .decode_window(&store, &z, &e.x_aux, Mode::Train)
                .unwrap();
            let n = recon.values().len() as f64;
            let mse = recon
                .values()
                .iter()
                .zip(e.x.values())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n;
            let kl: f64 = enc
                .mu_z
                .iter()
                .zip(&enc.sigma_z)
                .map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
                .sum();
            let onehot = e.style.one_hot();
            let (ce, y) = if aux_out {
                let p = model.classify_style_vec(&store, &z).unwrap();
                let ce = -p.probs[e.style.index()].ln();
                (
                    ce,
                    model
                        .regress_load_vec(&store, &z, Some(&onehot))
                        .unwrap()
                        .mu_y,
                )
            } else {
                (0.0, model.regress_load_vec(&store, &z, None).unwrap().mu_y)
            };
            let mae = (y - e.load_lbs).abs();
            let total = mse + ce + mae + beta * kl;
            for (name, a, b) in [
                ("mse", got.recon_mse, mse),
                ("ce", got.style_ce, ce),
                ("mae", got.load_mae, mae),
                ("kl", got.kl, kl),
                ("total", got.total, total),
            ] {
                assert!(
                    (a - b).abs() <= 1e-10 * (1.0 + b.abs()),
                    "{fusion:?} {name}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn batch_kl_is_mean_of_single_item_kl() {
    // with running statistics each posterior ignores its batch mates
    let model = AuxVae::new(micro_config(Fusion::CrossAttention, true)).unwrap();
    let store = model.init_params::<f64>(2).unwrap();
    let ex = micro_examples(4, 9);
    let refs: Vec<&Example> = ex.iter().collect();
    let mut f = Forward::new(&store, Mode::Eval, false);
    let mut rng = seed::rng(0, "b");
    let (_, got) = elbo_loss(&model, &mut f, &refs, 1.0, LossWeights::default(), &mut rng).unwrap();
    let kl: f64 = ex
        .iter()
        .map(|e| {
            let (enc, _) = model
                .encode_window(&store, &e.x, &e.x_aux, Mode::Eval)
                .unwrap();
            enc.mu_z
                .iter()
                .zip(&enc.sigma_z)
                .map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / ex.len() as f64;
    assert!((got.kl - kl).abs() < 1e-10, "{} vs {kl}", got.kl);
}

/// The reparameterized gradient of `E[z^2]` is unbiased: its Monte-Carlo
/// mean approaches `(2 mu, 2 sigma)`.
#[test]
fn reparameterized_gradients_are_unbiased() {
    let mut rng = seed::rng(3, "unbiased");
    let n = 20_000;
    for _ in 0..5 {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.2..2.0);
        let mut g = Graph::<f64>::new();
        let m = g.leaf(vec![mu; n], &[n], true).unwrap();
        let s = g.leaf(vec![sigma; n], &[n], true).unwrap();
        let eps: Vec<f64> = standard_normal(&mut rng, n);
        let z = reparameterize(&mut g, m, s, eps).unwrap();
        let sq = g.square(z);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        for (v, want) in [(m, 2.0 * mu), (s, 2.0 * sigma)] {
            let gs = grads.get(v).unwrap();
            let mean = gs.iter().sum::<f64>() / n as f64;
            let var = gs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            assert!((mean - want).abs() < 4.0 * se, "{mean} vs {want} (se {se})");
        }
    }
}
