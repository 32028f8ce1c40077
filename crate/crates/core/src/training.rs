//! Mini-batch Adam training per leave-one-participant-out fold.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::{
    fit_normalization, lopo_splits, resample_to_length, Dataset, FoldSplit, NormalizationStats,
    ParticipantRecord,
};
use crate::error::{Error, Result};
use crate::inference::{evaluate, EvalReport, InferenceConfig};
use crate::model::{AuxVae, ModelConfig};
use crate::nn::forward::apply_bn_updates;
use crate::nn::{AdamHyper, AdamState, Forward, Mode};
use crate::objective::{beta_schedule, elbo_loss, Example, LossBreakdown, LossWeights};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub repeats: usize,
    pub warmup_frac: f64,
    pub loss_weights: LossWeights,
    /// Fit the regressor's output affine map to the training loads.
    pub scale_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 500,
            lr_decay: 0.1,
            lr_step: 100,
            weight_decay: 1e-4,
            seed: 0,
            repeats: 10,
            warmup_frac: 0.5,
            loss_weights: LossWeights::default(),
            scale_targets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("train.{field}"),
                reason: reason.into(),
            })
        };
        if !(self.lr > 0.0) {
            return fail("lr", "must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs", "must be positive");
        }
        if !(self.lr_decay > 0.0) {
            return fail("lr_decay", "must be positive");
        }
        if self.lr_step == 0 {
            return fail("lr_step", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay", "must be nonnegative");
        }
        if self.repeats == 0 {
            return fail("repeats", "must be positive");
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac <= 1.0) {
            return fail("warmup_frac", "must lie in (0, 1]");
        }
        let w = self.loss_weights;
        if [w.recon, w.style, w.load].iter().any(|v| !(*v >= 0.0)) {
            return fail("loss_weights", "must be nonnegative");
        }
        Ok(())
    }

    /// `lr * lr_decay^floor(epoch / lr_step)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Participant ids seen by the training side of one fold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub held_out: BTreeSet<String>,
    pub batch_participants: BTreeSet<String>,
    pub normalization_participants: BTreeSet<String>,
}

impl LeakageAudit {
    /// Held-out ids found in a training batch or in the normalization pool.
    pub fn violations(&self) -> usize {
        self.held_out
            .iter()
            .filter(|id| {
                self.batch_participants.contains(*id)
                    || self.normalization_participants.contains(*id)
            })
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub fold_id: String,
    pub repeat: usize,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<PathBuf>,
    pub audit: LeakageAudit,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory receiving the final (or last good) checkpoint.
    pub checkpoint_dir: Option<PathBuf>,
    pub run_config_hash: Option<String>,
    /// Continue from this state; its epoch count sets the first epoch.
    pub resume: Option<Checkpoint>,
    /// Return after this many completed epochs, keeping the schedule of the
    /// full run.
    pub stop_after: Option<usize>,
}

/// Windows resampled to the model's lengths and normalized.
pub fn prepare_examples(
    records: &[&ParticipantRecord],
    norm: &NormalizationStats,
    cfg: &ModelConfig,
) -> Result<Vec<Example>> {
    let fit = |w: &crate::data::GaitWindow, len: usize| -> Result<crate::data::GaitWindow> {
        let w = if w.time_steps() == len {
            w.clone()
        } else {
            resample_to_length(w, len)?
        };
        norm.apply(&w)
    };
    let mut out = Vec::new();
    for r in records {
        let x_aux = fit(&r.baseline_gait, cfg.baseline_len)?;
        for t in &r.trials {
            out.push(Example {
                x: fit(&t.loaded_gait, cfg.window_len)?,
                x_aux: x_aux.clone(),
                load_lbs: t.load_lbs,
                style: t.style,
                participant_id: r.participant_id.clone(),
                trial_id: t.trial_id.clone(),
            });
        }
    }
    Ok(out)
}

fn select<'a>(data: &'a Dataset, ids: &BTreeSet<String>) -> Vec<&'a ParticipantRecord> {
    data.participants
        .iter()
        .filter(|p| ids.contains(&p.participant_id))
        .collect()
}

/// Seed of one fold x repeat run. It does not depend on the model variant,
/// so ablation settings share data order, latent noise and initial values.
pub fn run_seed(seed: u64, fold_id: &str, repeat: usize) -> u64 {
    seed::derive(seed, &format!("repeat/{repeat}/fold/{fold_id}"))
}

fn population_stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains one model on the fold's training participants.
pub fn train_fold(
    data: &Dataset,
    fold: &FoldSplit,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    repeat: usize,
    opts: &TrainOptions,
) -> Result<(TrainReport, Checkpoint)> {
    cfg.validate()?;
    let model = AuxVae::new(model_cfg.clone())?;
    let started = Instant::now();
    let fold_id = fold.held_out_participant.clone();
    let rs = run_seed(cfg.seed, &fold_id, repeat);

    let train_ids: BTreeSet<String> = fold.train_ids.difference(&fold.test_ids).cloned().collect();
    let records = select(data, &train_ids);
    let owned: Vec<ParticipantRecord> = records.iter().map(|r| (*r).clone()).collect();
    let mut audit = LeakageAudit {
        held_out: fold.test_ids.clone(),
        normalization_participants: owned.iter().map(|r| r.participant_id.clone()).collect(),
        ..LeakageAudit::default()
    };
    let norm = match &opts.resume {
        Some(c) => c.normalization.clone(),
        None => fit_normalization(&owned)?,
    };
    let examples = prepare_examples(&records, &norm, model_cfg)?;
    if examples.is_empty() {
        return Err(Error::Data(format!(
            "fold {fold_id} has no training trials"
        )));
    }

    let (mut store, mut adam, first_epoch) = match &opts.resume {
        Some(c) => {
            if c.model.hash() != model_cfg.hash() {
                return Err(Error::HashMismatch {
                    expected: model_cfg.hash(),
                    found: c.model.hash(),
                });
            }
            (c.store.clone(), c.adam.clone(), c.epochs_completed)
        }
        None => {
            let mut store = model.init_params::<f32>(seed::derive(rs, "init"))?;
            if cfg.scale_targets {
                let loads: Vec<f64> = examples.iter().map(|e| e.load_lbs).collect();
                let (m, s) = population_stats(&loads);
                AuxVae::set_target_scaling(&mut store, m, if s > 0.0 { s } else { 1.0 })?;
            }
            let adam = AdamState::new(
                &store,
                AdamHyper {
                    lr: cfg.lr,
                    weight_decay: cfg.weight_decay,
                    ..AdamHyper::default()
                },
            );
            (store, adam, 0)
        }
    };

    let snapshot =
        |store: &crate::nn::ParamStore<f32>, adam: &AdamState<f32>, epochs: usize| Checkpoint {
            model: model_cfg.clone(),
            store: store.clone(),
            adam: adam.clone(),
            normalization: norm.clone(),
            seed: rs,
            epochs_completed: epochs,
            run_config_hash: opts.run_config_hash.clone(),
        };

    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let last = opts
        .stop_after
        .map_or(cfg.max_epochs, |s| s.min(cfg.max_epochs));
    for epoch in first_epoch..last {
        let before = (store.clone(), adam.clone());
        let lr = cfg.lr_at(epoch);
        adam.set_lr(lr);
        let beta = beta_schedule(epoch, cfg.max_epochs, cfg.warmup_frac);
        order.sort_unstable();
        order.shuffle(&mut seed::rng(rs, &format!("shuffle/{epoch}")));
        let mut latent_rng = seed::rng(rs, &format!("latent/{epoch}"));
        let mut acc = LossBreakdown::default();
        let step = |batch: &[&Example],
                    store: &mut crate::nn::ParamStore<f32>,
                    adam: &mut AdamState<f32>,
                    rng: &mut rand_chacha::ChaCha8Rng|
         -> Result<LossBreakdown> {
            let mut f = Forward::new(&*store, Mode::Train, true);
            let (loss, parts) = elbo_loss(&model, &mut f, batch, beta, cfg.loss_weights, rng)?;
            let grads = f.graph.backward(loss)?;
            let grads = f.param_grads(&grads);
            let updates = f.take_bn_updates();
            adam.step(store, &grads)?;
            apply_bn_updates(store, &updates)?;
            Ok(parts)
        };
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            audit
                .batch_participants
                .extend(batch.iter().map(|e| e.participant_id.clone()));
            match step(&batch, &mut store, &mut adam, &mut latent_rng) {
                Ok(parts) => {
                    let w = batch.len() as f64 / examples.len() as f64;
                    acc.recon_mse += w * parts.recon_mse;
                    acc.style_ce += w * parts.style_ce;
                    acc.load_mae += w * parts.load_mae;
                    acc.kl += w * parts.kl;
                    acc.total += w * parts.total;
                }
                Err(Error::NonFinite(detail)) => {
                    let (good_store, good_adam) = before;
                    let mut detail = format!("fold {fold_id} repeat {repeat}: {detail}");
                    if let Some(dir) = &opts.checkpoint_dir {
                        save_checkpoint(dir, &snapshot(&good_store, &good_adam, epoch))?;
                        detail.push_str(&format!("; last good checkpoint at {}", dir.display()));
                    }
                    return Err(Error::Diverged { epoch, detail });
                }
                Err(e) => return Err(e),
            }
        }
        acc.beta = beta;
        epochs.push(EpochRecord {
            epoch,
            lr,
            loss: acc,
        });
    }

    let ckpt = snapshot(&store, &adam, last.max(first_epoch));
    if let Some(dir) = &opts.checkpoint_dir {
        save_checkpoint(dir, &ckpt)?;
    }
    let report = TrainReport {
        fold_id,
        repeat,
        seed: rs,
        epochs,
        wall_time_secs: started.elapsed().as_secs_f64(),
        checkpoint: opts.checkpoint_dir.clone(),
        audit,
    };
    Ok((report, ckpt))
}

/// Normalized examples of the fold's held-out participants, using the
/// checkpoint's training statistics.
pub fn test_examples(data: &Dataset, fold: &FoldSplit, ckpt: &Checkpoint) -> Result<Vec<Example>> {
    prepare_examples(
        &select(data, &fold.test_ids),
        &ckpt.normalization,
        &ckpt.model,
    )
}

/// Evaluation of a trained fold on its held-out participant.
pub fn evaluate_fold(
    data: &Dataset,
    fold: &FoldSplit,
    ckpt: &Checkpoint,
    icfg: &InferenceConfig,
    seed: u64,
) -> Result<EvalReport> {
    let model = AuxVae::new(ckpt.model.clone())?;
    evaluate(
        &model,
        &ckpt.store,
        &test_examples(data, fold, ckpt)?,
        icfg,
        seed,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold_id: String,
    pub repeat: usize,
    pub report: TrainReport,
    pub eval: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold_id: String,
    pub repeat: usize,
    pub error: String,
}

/// Mean and sample standard deviation, one equal-weight entry per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn aggregate(runs: &[FoldRun]) -> Aggregate {
    let maes: Vec<f64> = runs.iter().map(|r| r.eval.mae_lbs).collect();
    let (mae_mean, mae_std) = mean_std(&maes);
    let accs: Option<Vec<f64>> = runs.iter().map(|r| r.eval.style_accuracy).collect();
    let (accuracy_mean, accuracy_std) = match accs {
        Some(a) if !a.is_empty() => {
            let (m, s) = mean_std(&a);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    Aggregate {
        runs: runs.len(),
        mae_mean,
        mae_std,
        accuracy_mean,
        accuracy_std,
    }
}

#[derive(Clone, Debug, Default)]
pub struct LopoOptions {
    /// Use only the first `n` folds.
    pub max_folds: Option<usize>,
    /// Checkpoints go to `<root>/fold_<id>/repeat_<r>`.
    pub checkpoint_root: Option<PathBuf>,
    pub run_config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LopoResult {
    pub runs: Vec<FoldRun>,
    pub failures: Vec<FoldFailure>,
    pub aggregate: Aggregate,
}

pub fn fold_checkpoint_dir(root: &std::path::Path, fold_id: &str, repeat: usize) -> PathBuf {
    root.join(format!("fold_{fold_id}"))
        .join(format!("repeat_{repeat}"))
}

/// Every fold x repeat, trained and evaluated independently. A failing run
/// is recorded and its siblings continue.
pub fn run_lopo(
    data: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    icfg: &InferenceConfig,
    opts: &LopoOptions,
) -> Result<LopoResult> {
    cfg.validate()?;
    icfg.validate()?;
    let mut folds = lopo_splits(&data.participants)?;
    if let Some(n) = opts.max_folds {
        folds.truncate(n.max(1));
    }
    let jobs: Vec<(FoldSplit, usize)> = (0..cfg.repeats)
        .flat_map(|r| folds.iter().map(move |f| (f.clone(), r)))
        .collect();
    let results: Vec<std::result::Result<FoldRun, FoldFailure>> = jobs
        .par_iter()
        .map(|(fold, repeat)| {
            let fold_id = fold.held_out_participant.clone();
            let topts = TrainOptions {
                checkpoint_dir: opts
                    .checkpoint_root
                    .as_ref()
                    .map(|root| fold_checkpoint_dir(root, &fold_id, *repeat)),
                run_config_hash: opts.run_config_hash.clone(),
                ..TrainOptions::default()
            };
            let run = || -> Result<FoldRun> {
                let (report, ckpt) = train_fold(data, fold, model_cfg, cfg, *repeat, &topts)?;
                let eval =
                    evaluate_fold(data, fold, &ckpt, icfg, seed::derive(report.seed, "eval"))?;
                Ok(FoldRun {
                    fold_id: fold_id.clone(),
                    repeat: *repeat,
                    report,
                    eval,
                })
            };
            run().map_err(|e| FoldFailure {
                fold_id: fold_id.clone(),
                repeat: *repeat,
                error: e.to_string(),
            })
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(f) => failures.push(f),
        }
    }
    let aggregate = aggregate(&runs);
    Ok(LopoResult {
        runs,
        failures,
        aggregate,
    })
}
