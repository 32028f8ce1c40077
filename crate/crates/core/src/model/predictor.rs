use crate::error::{Error, Result};
use crate::nn::{Forward, ParamStore, Real, Var};

use super::{AuxVae, TARGET_MEAN, TARGET_STD};

/// Carrying-style probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleDistribution {
    pub probs: Vec<f64>,
}

impl StyleDistribution {
    /// Index of the largest probability; the first one wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadPrediction {
    pub mu_y: f64,
}

impl AuxVae {
    /// Style probabilities `(B, L)` from `z (B, k)`.
    pub fn classify_style<T: Real>(&self, f: &mut Forward<T>, z: Var) -> Result<Var> {
        if !self.config.use_aux_output {
            return Err(Error::InvalidArgument(
                "this variant has no style classifier".into(),
            ));
        }
        let h = f.dense("classifier.hidden", z)?;
        let h = f.graph.gelu(h);
        let logits = f.dense("classifier.out", h)?;
        Ok(f.graph.softmax(logits))
    }

    /// Load mean `(B, 1)` in pounds from `z (B, k)` and a style
    /// distribution `(B, L)`; variants without the style output take `None`.
    pub fn regress_load<T: Real>(
        &self,
        f: &mut Forward<T>,
        z: Var,
        style: Option<Var>,
    ) -> Result<Var> {
        let input = match (self.config.use_aux_output, style) {
            (true, Some(s)) => {
                let (zs, ss) = (f.graph.shape(z).to_vec(), f.graph.shape(s).to_vec());
                if ss.len() != 2
                    || zs.len() != 2
                    || ss[0] != zs[0]
                    || ss[1] != self.config.num_styles
                {
                    return Err(Error::shape(
                        "regress_load",
                        format!(
                            "z {zs:?} with style {ss:?}, expected {} styles",
                            self.config.num_styles
                        ),
                    ));
                }
                f.graph.concat(&[z, s], 1)?
            }
            (false, None) => z,
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "regressor needs a style distribution".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "this variant's regressor takes z only".into(),
                ))
            }
        };
        let h = f.dense("regressor.hidden", input)?;
        let h = f.graph.gelu(h);
        let out = f.dense("regressor.out", h)?;
        let store = f.store();
        let std = store.buffer(TARGET_STD)?.data[0];
        let mean = store.buffer(TARGET_MEAN)?.data[0];
        let scaled = f.graph.scale(out, std);
        Ok(f.graph.add_scalar(scaled, mean))
    }

    /// Style distribution for a single latent vector.
    pub fn classify_style_vec<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &[f64],
    ) -> Result<StyleDistribution> {
        let mut f = Forward::new(store, crate::nn::Mode::Eval, false);
        let zv = f.input(z.iter().map(|&v| T::of(v)).collect(), &[1, z.len()])?;
        let p = self.classify_style(&mut f, zv)?;
        Ok(StyleDistribution {
            probs: f.graph.value(p).iter().map(|v| v.f64()).collect(),
        })
    }

    /// Load mean for a single latent vector and style distribution.
    pub fn regress_load_vec<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &[f64],
        style: Option<&[f64]>,
    ) -> Result<LoadPrediction> {
        let mut f = Forward::new(store, crate::nn::Mode::Eval, false);
        let zv = f.input(z.iter().map(|&v| T::of(v)).collect(), &[1, z.len()])?;
        let sv = match style {
            Some(s) => Some(f.input(s.iter().map(|&v| T::of(v)).collect(), &[1, s.len()])?),
            None => None,
        };
        let y = self.regress_load(&mut f, zv, sv)?;
        Ok(LoadPrediction {
            mu_y: f.graph.scalar(y).f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::ParamTensor;
    use crate::seed;
    use rand::Rng;

    fn micro() -> AuxVae {
        let mut cfg = ModelConfig::new(3, 16, 16, 4);
        cfg.encoder.tcn_channels = vec![4];
        cfg.encoder.attn_dim = 4;
        cfg.encoder.num_heads = 2;
        cfg.encoder.d_k = 2;
        cfg.encoder.d_v = 2;
        cfg.encoder.latent_dim = 4;
        cfg.head_hidden = 6;
        AuxVae::new(cfg).unwrap()
    }

    fn zero(store: &mut ParamStore<f64>, path: &str) {
        let p = store.param_mut(path).unwrap();
        *p = ParamTensor::zeros(&p.shape.clone());
    }

    #[test]
    fn zero_final_layer_is_uniform() {
        let m = micro();
        let mut store = m.init_params::<f64>(1).unwrap();
        zero(&mut store, "classifier.out.weight");
        let p = m
            .classify_style_vec(&store, &[0.3, -2.0, 1.0, 4.0])
            .unwrap();
        assert_eq!(p.probs, vec![0.25; 4]);
    }

    #[test]
    fn probabilities_normalized() {
        let m = micro();
        let store = m.init_params::<f64>(2).unwrap();
        let mut rng = seed::rng(0, "z");
        for _ in 0..1000 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = m.classify_style_vec(&store, &z).unwrap();
            assert!(p.probs.iter().all(|&v| v > 0.0));
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn log_logits_give_linear_probabilities() {
        // identity hidden path is not available, so drive the logits through the bias
        let m = micro();
        let mut store = m.init_params::<f64>(3).unwrap();
        zero(&mut store, "classifier.out.weight");
        store.param_mut("classifier.out.bias").unwrap().data =
            (1..=4).map(|i| (i as f64).ln()).collect();
        let p = m.classify_style_vec(&store, &[1.0; 4]).unwrap();
        for (a, b) in p.probs.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn regressor_bias_and_style_sensitivity() {
        let m = micro();
        let mut store = m.init_params::<f64>(4).unwrap();
        let z = [0.5, -0.5, 1.0, 0.0];
        let e0 = [1.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 0.0, 1.0, 0.0];
        let a = m.regress_load_vec(&store, &z, Some(&e0)).unwrap();
        let b = m.regress_load_vec(&store, &z, Some(&e2)).unwrap();
        assert_ne!(a, b);
        zero(&mut store, "regressor.out.weight");
        store.param_mut("regressor.out.bias").unwrap().data = vec![7.5];
        assert_eq!(m.regress_load_vec(&store, &z, Some(&e0)).unwrap().mu_y, 7.5);
        AuxVae::set_target_scaling(&mut store, 20.0, 2.0).unwrap();
        assert_eq!(
            m.regress_load_vec(&store, &z, Some(&e0)).unwrap().mu_y,
            35.0
        );
        assert!(m.regress_load_vec(&store, &z, Some(&[1.0, 0.0])).is_err());
        assert!(m.regress_load_vec(&store, &z, None).is_err());
    }

    #[test]
    fn argmax_first_tie() {
        let d = StyleDistribution {
            probs: vec![0.4, 0.1, 0.4, 0.1],
        };
        assert_eq!(d.argmax(), 0);
    }
}
