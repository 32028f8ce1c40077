//! Run configuration and the batch commands behind the `auxvae` binary.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::{run_ablation, AblationSetting, AblationTable};
use crate::checkpoint::load_checkpoint;
use crate::data::{
    lopo_splits, read_dataset, read_window_file, write_dataset, Dataset, GaitWindow, Provenance,
};
use crate::error::{Error, Result};
use crate::inference::{predict_raw, InferenceConfig};
use crate::model::{EncoderConfig, Fusion, ModelConfig};
use crate::synth::{synth_dataset, SynthConfig};
use crate::training::{
    evaluate_fold, fold_checkpoint_dir, run_lopo, run_seed, FoldRun, LopoOptions, TrainConfig,
};
use crate::verify::{run_suite, SuiteEntry};
use crate::{seed, VERSION};

pub const OUTPUT_DIR_ENV: &str = "AUXVAE_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            output_dir: "runs".into(),
            checkpoint_dir: None,
        }
    }
}

impl Paths {
    pub fn checkpoints(&self) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoints"))
    }
}

/// Model settings that do not come from the dataset. Channel and style
/// counts are read from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub window_len: usize,
    pub baseline_len: usize,
    pub head_hidden: usize,
    pub fusion: Fusion,
    pub use_aux_output: bool,
    pub encoder: EncoderConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 800, 800, 1);
        Self {
            window_len: m.window_len,
            baseline_len: m.baseline_len,
            head_hidden: m.head_hidden,
            fusion: m.fusion,
            use_aux_output: m.use_aux_output,
            encoder: m.encoder,
        }
    }
}

impl ModelSection {
    pub fn for_data(&self, num_channels: usize, num_styles: usize) -> Result<ModelConfig> {
        let mut cfg =
            ModelConfig::new(num_channels, self.window_len, self.baseline_len, num_styles);
        cfg.head_hidden = self.head_hidden;
        cfg.fusion = self.fusion;
        cfg.use_aux_output = self.use_aux_output;
        cfg.encoder = self.encoder.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub settings: Vec<AblationSetting>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            settings: AblationSetting::registered(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random stream. Component seeds are derived from it.
    pub seed: u64,
    /// Restrict training to the first `n` folds.
    pub folds: Option<usize>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub ablation: AblationSection,
}

/// Command-line overrides. Nothing else can be changed outside the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: e
                .span()
                .map(|s| format!("{}..{}", s.start, s.end))
                .unwrap_or_default(),
            reason: e.message().to_string(),
        })?;
        if cfg.synth.seed != 0 || cfg.train.seed != 0 {
            return Err(Error::Config {
                field: if cfg.synth.seed != 0 {
                    "synth.seed"
                } else {
                    "train.seed"
                }
                .into(),
                reason: "set the top-level seed instead".into(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => Ok(Self::default()),
        }
    }

    /// Applies overrides, then the output-directory environment variable
    /// when no override names one, and derives the component seeds.
    pub fn resolve(mut self, o: &Overrides, env_output_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &o.data_dir {
            self.paths.data_dir = d.clone();
        }
        if let Some(d) = o.output_dir.clone().or(env_output_dir) {
            self.paths.output_dir = d;
        }
        if let Some(d) = &o.checkpoint_dir {
            self.paths.checkpoint_dir = Some(d.clone());
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(f) = o.folds {
            self.folds = Some(f);
        }
        if let Some(e) = o.epochs {
            self.train.max_epochs = e;
        }
        self.synth.seed = seed::derive(self.seed, "synth");
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.inference.validate()?;
        // channel and style counts come from the data
        self.model.for_data(1, 2)?;
        for s in &self.ablation.settings {
            s.validate()?;
        }
        if self.folds == Some(0) {
            return Err(Error::Config {
                field: "folds".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Hex SHA-256 over everything except the paths.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        hex::encode(Sha256::digest(
            serde_json::to_vec(&c).expect("config serializes"),
        ))
    }

    pub fn header(&self) -> String {
        format!(
            "# auxvae {VERSION} config_hash={} seed={}",
            self.hash(),
            self.seed
        )
    }

    fn lopo_options(&self, checkpoint_root: Option<PathBuf>) -> LopoOptions {
        LopoOptions {
            max_folds: self.folds,
            checkpoint_root,
            run_config_hash: Some(self.hash()),
        }
    }
}

/// A CSV file whose first line is the run header comment.
pub fn write_csv(
    path: &Path,
    header_comment: &str,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    writeln!(buf, "{header_comment}").map_err(|e| Error::io(path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct Stamp<'a, T: Serialize> {
    code_version: &'a str,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn stamped<T: Serialize>(cfg: &RunConfig, body: T) -> Stamp<'static, T> {
    Stamp {
        code_version: VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        body,
    }
}

/// Writes the synthetic dataset to the data directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Dataset> {
    let ds = synth_dataset(&cfg.synth)?;
    let provenance = Provenance {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        code_version: VERSION.into(),
    };
    write_dataset(&cfg.paths.data_dir, &ds, Some(provenance))?;
    Ok(ds)
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, ModelConfig)> {
    let (ds, meta) = read_dataset(&cfg.paths.data_dir)?;
    let model = cfg.model.for_data(meta.num_channels, meta.num_styles)?;
    Ok((ds, model))
}

pub const METRICS_COLUMNS: [&str; 10] = [
    "fold",
    "repeat",
    "epoch",
    "lr",
    "beta",
    "recon_mse",
    "style_ce",
    "load_mae",
    "kl",
    "total",
];
pub const FOLD_COLUMNS: [&str; 7] = [
    "fold",
    "repeat",
    "seed",
    "status",
    "mae_lbs",
    "style_accuracy",
    "error",
];
pub const PREDICTION_COLUMNS: [&str; 7] = [
    "fold",
    "repeat",
    "trial",
    "true_load",
    "predicted_load",
    "true_style",
    "predicted_style",
];

fn metrics_rows(runs: &[FoldRun]) -> Vec<Vec<String>> {
    runs.iter()
        .flat_map(|r| {
            r.report.epochs.iter().map(move |e| {
                vec![
                    r.fold_id.clone(),
                    r.repeat.to_string(),
                    e.epoch.to_string(),
                    e.lr.to_string(),
                    e.loss.beta.to_string(),
                    e.loss.recon_mse.to_string(),
                    e.loss.style_ce.to_string(),
                    e.loss.load_mae.to_string(),
                    e.loss.kl.to_string(),
                    e.loss.total.to_string(),
                ]
            })
        })
        .collect()
}

fn prediction_rows(
    fold: &str,
    repeat: usize,
    eval: &crate::inference::EvalReport,
) -> Vec<Vec<String>> {
    eval.predictions
        .iter()
        .map(|p| {
            vec![
                fold.to_string(),
                repeat.to_string(),
                p.trial_id.clone(),
                p.true_load.to_string(),
                p.predicted_load.to_string(),
                p.true_style.to_string(),
                p.predicted_style.map(|s| s.to_string()).unwrap_or_default(),
            ]
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub runs: Vec<FoldRun>,
    pub failures: usize,
}

/// Trains every fold x repeat of the configured variant and writes
/// `metrics.csv`, `folds.csv`, `predictions.csv` and `summary.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (data, model) = load_data(cfg)?;
    let res = run_lopo(
        &data,
        &model,
        &cfg.train,
        &cfg.inference,
        &cfg.lopo_options(Some(cfg.paths.checkpoints())),
    )?;
    let out = &cfg.paths.output_dir;
    let head = cfg.header();
    write_csv(
        &out.join("metrics.csv"),
        &head,
        &METRICS_COLUMNS,
        &metrics_rows(&res.runs),
    )?;
    let mut fold_rows: Vec<Vec<String>> = res
        .runs
        .iter()
        .map(|r| {
            vec![
                r.fold_id.clone(),
                r.repeat.to_string(),
                r.report.seed.to_string(),
                "ok".into(),
                r.eval.mae_lbs.to_string(),
                opt(r.eval.style_accuracy),
                String::new(),
            ]
        })
        .collect();
    fold_rows.extend(res.failures.iter().map(|f| {
        vec![
            f.fold_id.clone(),
            f.repeat.to_string(),
            run_seed(cfg.seed, &f.fold_id, f.repeat).to_string(),
            "aborted".into(),
            String::new(),
            String::new(),
            f.error.clone(),
        ]
    }));
    write_csv(&out.join("folds.csv"), &head, &FOLD_COLUMNS, &fold_rows)?;
    let preds: Vec<Vec<String>> = res
        .runs
        .iter()
        .flat_map(|r| prediction_rows(&r.fold_id, r.repeat, &r.eval))
        .collect();
    write_csv(
        &out.join("predictions.csv"),
        &head,
        &PREDICTION_COLUMNS,
        &preds,
    )?;
    #[derive(Serialize)]
    struct Summary<'a> {
        model_config_hash: String,
        aggregate: &'a crate::training::Aggregate,
        failures: &'a [crate::training::FoldFailure],
    }
    write_json(
        &out.join("summary.json"),
        &stamped(
            cfg,
            Summary {
                model_config_hash: model.hash(),
                aggregate: &res.aggregate,
                failures: &res.failures,
            },
        ),
    )?;
    Ok(TrainOutcome {
        failures: res.failures.len(),
        runs: res.runs,
    })
}

/// Re-evaluates the saved fold checkpoints on their held-out participants
/// and writes `evaluation.csv` and `evaluation_predictions.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<(String, usize, crate::inference::EvalReport)>> {
    let (data, model) = load_data(cfg)?;
    let root = cfg.paths.checkpoints();
    let mut folds = lopo_splits(&data.participants)?;
    if let Some(n) = cfg.folds {
        folds.truncate(n);
    }
    let expected = cfg.hash();
    let mut out = Vec::new();
    for repeat in 0..cfg.train.repeats {
        for fold in &folds {
            let dir = fold_checkpoint_dir(&root, &fold.held_out_participant, repeat);
            let ckpt = load_checkpoint(&dir, Some(&model))?;
            let found = ckpt.run_config_hash.clone().unwrap_or_default();
            if found != expected {
                return Err(Error::HashMismatch {
                    expected: expected.clone(),
                    found,
                });
            }
            let eval_seed = seed::derive(ckpt.seed, "eval");
            let report = evaluate_fold(&data, fold, &ckpt, &cfg.inference, eval_seed)?;
            out.push((fold.held_out_participant.clone(), repeat, report));
        }
    }
    let head = cfg.header();
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|(f, r, e)| {
            vec![
                f.clone(),
                r.to_string(),
                e.mae_lbs.to_string(),
                opt(e.style_accuracy),
            ]
        })
        .collect();
    write_csv(
        &cfg.paths.output_dir.join("evaluation.csv"),
        &head,
        &["fold", "repeat", "mae_lbs", "style_accuracy"],
        &rows,
    )?;
    let preds: Vec<Vec<String>> = out
        .iter()
        .flat_map(|(f, r, e)| prediction_rows(f, *r, e))
        .collect();
    write_csv(
        &cfg.paths.output_dir.join("evaluation_predictions.csv"),
        &head,
        &PREDICTION_COLUMNS,
        &preds,
    )?;
    Ok(out)
}

pub const ABLATION_COLUMNS: [&str; 10] = [
    "setting",
    "use_aux_input",
    "fusion",
    "use_aux_output",
    "runs",
    "failures",
    "accuracy_mean",
    "accuracy_std",
    "mae_mean",
    "mae_std",
];

fn fusion_name(f: Fusion) -> &'static str {
    match f {
        Fusion::None => "none",
        Fusion::Concat => "concat",
        Fusion::CrossAttention => "cross_attention",
    }
}

/// Runs every configured setting on the same folds and seeds and writes
/// `ablation.csv` (one row per setting) and `ablation_runs.csv`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationTable> {
    let (data, model) = load_data(cfg)?;
    let table = run_ablation(
        &data,
        &cfg.ablation.settings,
        &model,
        &cfg.train,
        &cfg.inference,
        &cfg.lopo_options(Some(cfg.paths.checkpoints().join("ablation"))),
    )?;
    let head = cfg.header();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.setting.name.clone(),
                r.setting.use_aux_input.to_string(),
                fusion_name(r.setting.fusion).into(),
                r.setting.use_aux_output.to_string(),
                r.aggregate.runs.to_string(),
                r.failures.len().to_string(),
                opt(r.aggregate.accuracy_mean),
                opt(r.aggregate.accuracy_std),
                r.aggregate.mae_mean.to_string(),
                r.aggregate.mae_std.to_string(),
            ]
        })
        .collect();
    write_csv(
        &cfg.paths.output_dir.join("ablation.csv"),
        &head,
        &ABLATION_COLUMNS,
        &rows,
    )?;
    let runs: Vec<Vec<String>> = table
        .rows
        .iter()
        .flat_map(|r| {
            r.runs.iter().map(move |m| {
                vec![
                    r.setting.name.clone(),
                    m.fold_id.clone(),
                    m.repeat.to_string(),
                    m.seed.to_string(),
                    m.mae_lbs.to_string(),
                    opt(m.style_accuracy),
                ]
            })
        })
        .collect();
    write_csv(
        &cfg.paths.output_dir.join("ablation_runs.csv"),
        &head,
        &[
            "setting",
            "fold",
            "repeat",
            "seed",
            "mae_lbs",
            "style_accuracy",
        ],
        &runs,
    )?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictRow {
    pub load_lbs: f64,
    pub predicted_style: Option<usize>,
    pub style_probs: Vec<f64>,
}

fn read_raw(path: &Path, num_channels: usize) -> Result<GaitWindow> {
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    if len == 0 || len % (4 * num_channels) != 0 {
        return Err(Error::Data(format!(
            "{} is not a whole number of {num_channels}-channel f32 rows",
            path.display()
        )));
    }
    read_window_file(path, len / (4 * num_channels), num_channels)
}

/// Load estimate for one raw trial window and its baseline, using the
/// checkpoint's normalization. Writes a one-row CSV to `out` when given.
pub fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    trial: &Path,
    baseline: &Path,
    out: Option<&Path>,
) -> Result<PredictRow> {
    let ckpt = load_checkpoint(checkpoint, None)?;
    let m = &ckpt.model;
    let expected = cfg.model.for_data(m.num_channels, m.num_styles)?;
    if expected.hash() != m.hash() {
        return Err(Error::HashMismatch {
            expected: expected.hash(),
            found: m.hash(),
        });
    }
    let x = read_raw(trial, m.num_channels)?;
    let x_aux = read_raw(baseline, m.num_channels)?;
    let p = predict_raw(
        &ckpt,
        &x,
        &x_aux,
        &cfg.inference,
        seed::derive(cfg.seed, "predict"),
    )?;
    let row = PredictRow {
        load_lbs: p.load_lbs,
        predicted_style: p.style.as_ref().map(|s| s.argmax()),
        style_probs: p.style.map(|s| s.probs).unwrap_or_default(),
    };
    if let Some(path) = out {
        let probs = row
            .style_probs
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        write_csv(
            path,
            &cfg.header(),
            &["load_lbs", "predicted_style", "style_probs"],
            &[vec![
                row.load_lbs.to_string(),
                row.predicted_style
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                probs,
            ]],
        )?;
    }
    Ok(row)
}

/// Finite-difference suite over `num_seeds` seeds derived from the run
/// seed; writes `grad_check.csv`.
pub fn cmd_grad_check(cfg: &RunConfig, num_seeds: usize) -> Result<Vec<SuiteEntry>> {
    let seeds: Vec<u64> = (0..num_seeds)
        .map(|i| seed::derive(cfg.seed, &format!("grad_check/{i}")))
        .collect();
    let entries = run_suite(&seeds)?;
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                e.seed.to_string(),
                e.report.checked.to_string(),
                e.report.kinks.to_string(),
                e.report.max_rel_err.to_string(),
                e.report.passed.to_string(),
            ]
        })
        .collect();
    write_csv(
        &cfg.paths.output_dir.join("grad_check.csv"),
        &cfg.header(),
        &[
            "check",
            "seed",
            "coordinates",
            "kinks",
            "max_rel_error",
            "passed",
        ],
        &rows,
    )?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_rejected_with_location() {
        let err = RunConfig::from_toml("seed = 1\n[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(RunConfig::from_toml("[synth]\nseed = 3\n").is_err());
        assert!(RunConfig::from_toml("[model.encoder]\nlatent_dim = 8\n").is_ok());
    }

    #[test]
    fn hash_ignores_paths_but_not_seed() {
        let a = RunConfig::default()
            .resolve(&Overrides::default(), None)
            .unwrap();
        let b = RunConfig::default()
            .resolve(
                &Overrides {
                    output_dir: Some("elsewhere".into()),
                    ..Overrides::default()
                },
                None,
            )
            .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::default()
            .resolve(
                &Overrides {
                    seed: Some(4),
                    ..Overrides::default()
                },
                None,
            )
            .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn override_precedence() {
        let o = Overrides {
            epochs: Some(7),
            folds: Some(2),
            ..Overrides::default()
        };
        let c = RunConfig::default()
            .resolve(&o, Some("from_env".into()))
            .unwrap();
        assert_eq!(c.paths.output_dir, PathBuf::from("from_env"));
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.folds, Some(2));
        let o = Overrides {
            output_dir: Some("flag".into()),
            ..Overrides::default()
        };
        let c = RunConfig::default()
            .resolve(&o, Some("from_env".into()))
            .unwrap();
        assert_eq!(c.paths.output_dir, PathBuf::from("flag"));
    }

    #[test]
    fn csv_has_comment_then_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(
            &p,
            "# auxvae test",
            &["a", "b"],
            &[vec!["1".into(), "2".into()]],
        )
        .unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "# auxvae test\na,b\n1,2\n");
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }
}
