//! Model variants with and without the baseline stream and the style head,
//! trained on identical folds and seeds for paired comparison.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::model::{Fusion, ModelConfig};
use crate::training::{run_lopo, Aggregate, FoldFailure, LopoOptions, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSetting {
    pub name: String,
    pub use_aux_input: bool,
    pub fusion: Fusion,
    pub use_aux_output: bool,
}

impl AblationSetting {
    pub fn new(name: &str, use_aux_input: bool, fusion: Fusion, use_aux_output: bool) -> Self {
        Self {
            name: name.into(),
            use_aux_input,
            fusion,
            use_aux_output,
        }
    }

    /// Settings 1 to 5: no auxiliary data, style head only, concatenated
    /// baseline, cross-attended baseline without the style head, and the
    /// full model.
    pub fn registered() -> Vec<Self> {
        vec![
            Self::new("setting1", false, Fusion::None, false),
            Self::new("setting2", false, Fusion::None, true),
            Self::new("setting3", true, Fusion::Concat, true),
            Self::new("setting4", true, Fusion::CrossAttention, false),
            Self::new("setting5", true, Fusion::CrossAttention, true),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_aux_input == (self.fusion == Fusion::None) {
            return Err(Error::Config {
                field: format!("ablation.{}.fusion", self.name),
                reason: "fusion must be none exactly when the auxiliary input is unused".into(),
            });
        }
        Ok(())
    }
}

/// The model configuration realizing `setting` on top of `base`.
pub fn build_variant(setting: &AblationSetting, base: &ModelConfig) -> Result<ModelConfig> {
    setting.validate()?;
    let mut cfg = base.clone();
    cfg.fusion = setting.fusion;
    cfg.use_aux_output = setting.use_aux_output;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMae {
    pub fold_id: String,
    pub repeat: usize,
    pub seed: u64,
    pub mae_lbs: f64,
    pub style_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub aggregate: Aggregate,
    pub runs: Vec<RunMae>,
    pub failures: Vec<FoldFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting.name == name)
    }
}

/// One leave-one-participant-out experiment per setting, all sharing
/// `train.seed`.
pub fn run_ablation(
    data: &Dataset,
    settings: &[AblationSetting],
    base: &ModelConfig,
    train: &TrainConfig,
    icfg: &InferenceConfig,
    opts: &LopoOptions,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(settings.len());
    for s in settings {
        let cfg = build_variant(s, base)?;
        let mut o = opts.clone();
        o.checkpoint_root = opts.checkpoint_root.as_ref().map(|r| r.join(&s.name));
        let res = run_lopo(data, &cfg, train, icfg, &o)?;
        rows.push(AblationRow {
            setting: s.clone(),
            aggregate: res.aggregate,
            runs: res
                .runs
                .iter()
                .map(|r| RunMae {
                    fold_id: r.fold_id.clone(),
                    repeat: r.repeat,
                    seed: r.report.seed,
                    mae_lbs: r.eval.mae_lbs,
                    style_accuracy: r.eval.style_accuracy,
                })
                .collect(),
            failures: res.failures,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AuxVae;
    use std::collections::BTreeSet;

    fn paths(cfg: &ModelConfig) -> BTreeSet<String> {
        AuxVae::new(cfg.clone())
            .unwrap()
            .declarations()
            .into_iter()
            .map(|d| d.path)
            .collect()
    }

    #[test]
    fn registered_settings_are_valid_and_structured() {
        let base = ModelConfig::new(4, 32, 32, 4);
        let s = AblationSetting::registered();
        assert_eq!(s.len(), 5);
        let full = build_variant(&s[4], &base).unwrap();
        assert_eq!(paths(&full), paths(&base));
        let bare = paths(&build_variant(&s[0], &base).unwrap());
        assert!(!bare
            .iter()
            .any(|p| p.starts_with("classifier.") || p.contains(".attn.")));
        let concat = AuxVae::new(build_variant(&s[2], &base).unwrap()).unwrap();
        let w = concat
            .declarations()
            .into_iter()
            .find(|d| d.path == "encoder.tcn_x.block0.conv.weight")
            .unwrap();
        assert_eq!(w.shape[2], 8);
        let no_head = paths(&build_variant(&s[3], &base).unwrap());
        assert!(!no_head.iter().any(|p| p.starts_with("classifier.")));
        assert!(no_head.iter().any(|p| p.contains(".attn.")));
    }

    #[test]
    fn invalid_settings_rejected() {
        let base = ModelConfig::new(4, 32, 24, 4);
        assert!(
            build_variant(&AblationSetting::new("x", true, Fusion::None, true), &base).is_err()
        );
        assert!(build_variant(
            &AblationSetting::new("x", false, Fusion::Concat, true),
            &base
        )
        .is_err());
        assert!(build_variant(
            &AblationSetting::new("x", true, Fusion::Concat, true),
            &base
        )
        .is_err());
    }
}
