//! The two-stage training recipe: inherited k-fold cross-validation
//! (parameters and optimizer moments carry from fold to fold instead of
//! restarting) followed by a whole-pool fine-tune at a lower learning
//! rate, then held-out evaluation reported in dB.

use crate::checkpoint::{load_checkpoint, CheckpointError};
use crate::data::{
    dataset_fingerprint, fit_normalizer, normalize_geometry, split, DataError, Dataset,
    GeometrySample, MetalKind, Spectrum, SPECTRUM_POINTS,
};
use crate::model::{
    init_params, loss_and_grad, predict, ModelConfig, ModelError, ModelParams, LOSS_BETA,
};
use crate::numeric::{derive_seed, loss_db, smooth_l1, DenseMatrix, Rng};
use crate::optim::AdamState;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;
use std::path::PathBuf;
use std::time::Instant;

/// Hard ceiling on total training epochs per run (k folds + fine-tune).
pub const MAX_EPOCH_BUDGET: usize = 1100;
/// Stage-1 learning rate when nothing else is requested.
pub const DEFAULT_STAGE1_LR: f64 = 5e-4;
/// Gentler stage-1 rate substituted on silver transfer runs.
pub const AG_TRANSFER_STAGE1_LR: f64 = 3e-4;
/// Linear losses below this are clamped before the dB conversion, so a
/// perfect fit reports -300 dB instead of -inf.
pub const EVAL_LOSS_FLOOR: f64 = 1e-30;

// salt for the weight-init stream, distinct from (fold, epoch) streams
const INIT_STREAM_SALT: u64 = 0x494E_4954;

#[derive(Debug)]
pub enum TrainError {
    Config { detail: String },
    EmptySet { what: &'static str },
    Data(DataError),
    Model(ModelError),
    Checkpoint(CheckpointError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Config { detail } => write!(f, "bad training config: {detail}"),
            TrainError::EmptySet { what } => write!(f, "{what} is empty"),
            TrainError::Data(e) => write!(f, "data: {e}"),
            TrainError::Model(e) => write!(f, "model: {e}"),
            TrainError::Checkpoint(e) => write!(f, "checkpoint: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}

/// How the run's starting parameters come to be.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    Fresh,
    FromCheckpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub folds: usize,
    pub epochs_per_fold: usize,
    pub stage1_lr: f64,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 10,
            epochs_per_fold: 100,
            stage1_lr: DEFAULT_STAGE1_LR,
            finetune_lr: 1e-4,
            finetune_epochs: 100,
            batch_size: 128,
            seed: 0,
            init: InitSpec::Fresh,
        }
    }
}

impl TrainConfig {
    /// Total epochs the run will execute: folds * epochs_per_fold plus
    /// the fine-tune stage.
    pub fn epoch_budget(&self) -> usize {
        self.folds * self.epochs_per_fold + self.finetune_epochs
    }

    /// Structural validity. The [`MAX_EPOCH_BUDGET`] ceiling is policy,
    /// enforced by callers that haven't been told to exceed it.
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.folds < 2 {
            return Err(TrainError::Config {
                detail: format!("folds = {}, need at least 2", self.folds),
            });
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config {
                detail: "batch_size must be at least 1".into(),
            });
        }
        for (name, lr) in [
            ("stage1_lr", self.stage1_lr),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(TrainError::Config {
                    detail: format!("{name} = {lr}, must be finite and nonnegative"),
                });
            }
        }
        Ok(())
    }
}

/// Everything a finished run reports. Serialized alongside the
/// checkpoint so results can be audited without re-running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub metal: MetalKind,
    pub per_fold_val_db: Vec<f64>,
    pub initial_train_db: f64,
    pub stage1_final_train_db: f64,
    pub finetune_train_db: f64,
    pub test_db: f64,
    pub epochs_run: usize,
    pub wall_time_seconds: f64,
    pub dataset_fingerprint: String,
}

/// Hooks into the training loop. Fold indices run 0..folds for stage 1;
/// the fine-tune stage reports as fold index == folds.
pub trait TrainObserver {
    fn fold_started(&mut self, _fold: usize, _params: &ModelParams) {}
    fn fold_finished(&mut self, _fold: usize, _val_db: f64, _params: &ModelParams) {}
    fn batch_trained(&mut self, _fold: usize, _epoch: usize, _indices: &[usize], _loss: f64) {}
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Samples staged as matrices: normalized inputs and target spectra.
pub struct TrainSet {
    x: DenseMatrix,
    re: DenseMatrix,
    im: DenseMatrix,
}

impl TrainSet {
    pub fn prepare(
        samples: &[(GeometrySample, Spectrum)],
        norm_stats: &[(f64, f64)],
    ) -> Result<TrainSet, TrainError> {
        if samples.is_empty() {
            return Err(TrainError::EmptySet { what: "sample set" });
        }
        let n = samples.len();
        let mut x = DenseMatrix::new(n, 4);
        let mut re = DenseMatrix::new(n, SPECTRUM_POINTS);
        let mut im = DenseMatrix::new(n, SPECTRUM_POINTS);
        for (i, (g, s)) in samples.iter().enumerate() {
            x.row_mut(i)
                .copy_from_slice(&normalize_geometry(g, norm_stats));
            re.row_mut(i).copy_from_slice(s.re());
            im.row_mut(i).copy_from_slice(s.im());
        }
        Ok(TrainSet { x, re, im })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gathers the listed rows into batch matrices.
    fn batch_of(&self, idx: &[usize]) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
        let mut x = DenseMatrix::new(idx.len(), self.x.cols());
        let mut re = DenseMatrix::new(idx.len(), self.re.cols());
        let mut im = DenseMatrix::new(idx.len(), self.im.cols());
        for (out, &i) in idx.iter().enumerate() {
            x.row_mut(out).copy_from_slice(self.x.row(i));
            re.row_mut(out).copy_from_slice(self.re.row(i));
            im.row_mut(out).copy_from_slice(self.im.row(i));
        }
        (x, re, im)
    }
}

/// Contiguous fold boundaries; the first `n % k` folds take the extra
/// sample, e.g. 5952 into 10 gives [596, 596, 595 x 8].
pub fn fold_ranges(n: usize, k: usize) -> Vec<Range<usize>> {
    let base = n / k;
    let rem = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < rem);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Mean combined loss of the rows `range` of `set`, in dB.
fn evaluate_rows(
    params: &ModelParams,
    set: &TrainSet,
    rows: Range<usize>,
) -> Result<f64, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptySet {
            what: "evaluation set",
        });
    }
    const CHUNK: usize = 512;
    let n = rows.len();
    let mut total = 0.0;
    let mut at = rows.start;
    while at < rows.end {
        let hi = (at + CHUNK).min(rows.end);
        let idx: Vec<usize> = (at..hi).collect();
        let (x, re_t, im_t) = set.batch_of(&idx);
        let (re_p, im_p) = predict(params, &x)?;
        for r in 0..idx.len() {
            let lre = smooth_l1(re_p.row(r), re_t.row(r), LOSS_BETA).expect("rows match");
            let lim = smooth_l1(im_p.row(r), im_t.row(r), LOSS_BETA).expect("rows match");
            total += 0.5 * (lre + lim);
        }
        at = hi;
    }
    let mean = (total / n as f64).max(EVAL_LOSS_FLOOR);
    Ok(loss_db(mean).expect("mean is positive"))
}

/// Held-out evaluation: mean combined loss over the prepared set, in dB.
pub fn evaluate_set(params: &ModelParams, set: &TrainSet) -> Result<f64, TrainError> {
    evaluate_rows(params, set, 0..set.len())
}

/// Convenience wrapper that normalizes with the model's own stats.
pub fn evaluate(
    params: &ModelParams,
    samples: &[(GeometrySample, Spectrum)],
) -> Result<f64, TrainError> {
    let set = TrainSet::prepare(samples, &params.norm_stats)?;
    evaluate_set(params, &set)
}

/// Runs `epochs` epochs of minibatch Adam over `train_idx`. Each epoch
/// reshuffles from the canonical index order with a stream derived from
/// (seed, stream_index, epoch), so any epoch is reproducible alone.
#[allow(clippy::too_many_arguments)]
fn train_epochs(
    params: &mut ModelParams,
    opt: &mut AdamState,
    set: &TrainSet,
    train_idx: &[usize],
    stream_index: usize,
    epochs: usize,
    lr: f64,
    config: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<(), TrainError> {
    let mut order = train_idx.to_vec();
    for epoch in 0..epochs {
        order.copy_from_slice(train_idx);
        let seed = derive_seed(config.seed, &[stream_index as u64, epoch as u64]);
        Rng::new(seed).shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let (x, re_t, im_t) = set.batch_of(chunk);
            let (loss, grads) = loss_and_grad(params, &x, &re_t, &im_t)?;
            opt.step(&mut params.tensors, &grads, lr)?;
            obs.batch_trained(stream_index, epoch, chunk, loss);
        }
    }
    Ok(())
}

/// Stage 1: k contiguous folds over the (already shuffled) pool. Fold i
/// trains on everything but fold i, starting from whatever parameters
/// and optimizer moments fold i-1 left behind, then records the dB loss
/// on held-out fold i. Returns the per-fold validation curve.
pub fn kfold_train(
    params: &mut ModelParams,
    opt: &mut AdamState,
    pool: &TrainSet,
    config: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<Vec<f64>, TrainError> {
    config.validate()?;
    if config.folds > pool.len() {
        return Err(TrainError::Config {
            detail: format!("{} folds over a pool of {}", config.folds, pool.len()),
        });
    }
    let ranges = fold_ranges(pool.len(), config.folds);
    let mut per_fold = Vec::with_capacity(config.folds);
    for (fold, val) in ranges.iter().enumerate() {
        obs.fold_started(fold, params);
        let train_idx: Vec<usize> = (0..val.start).chain(val.end..pool.len()).collect();
        train_epochs(
            params,
            opt,
            pool,
            &train_idx,
            fold,
            config.epochs_per_fold,
            config.stage1_lr,
            config,
            obs,
        )?;
        let val_db = evaluate_rows(params, pool, val.clone())?;
        per_fold.push(val_db);
        obs.fold_finished(fold, val_db, params);
    }
    Ok(per_fold)
}

/// Stage 2: trains on the whole pool at the fine-tune rate, optimizer
/// state continuing from stage 1. Shuffle streams use fold index ==
/// config.folds so they never collide with a stage-1 epoch.
pub fn finetune(
    params: &mut ModelParams,
    opt: &mut AdamState,
    pool: &TrainSet,
    config: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<(), TrainError> {
    config.validate()?;
    if pool.is_empty() {
        return Err(TrainError::EmptySet {
            what: "training pool",
        });
    }
    let all: Vec<usize> = (0..pool.len()).collect();
    train_epochs(
        params,
        opt,
        pool,
        &all,
        config.folds,
        config.finetune_epochs,
        config.finetune_lr,
        config,
        obs,
    )
}

/// A finished run: final parameters, optimizer state (so the checkpoint
/// can resume), lifetime epoch count for provenance, and the report.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub epochs_total: u64,
    pub report: RunReport,
}

/// The whole pipeline over a full dataset: seeded split, normalizer fit
/// on the pool, fresh or checkpoint init, k-fold stage, fine-tune stage,
/// and evaluation of pool and test sets.
///
/// Transfer runs (init from checkpoint) reset the optimizer, refit the
/// normalizer on the target pool, and on silver substitute the gentler
/// stage-1 rate unless the caller chose a non-default rate explicitly.
pub fn run_training(
    dataset: &Dataset,
    config: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let t0 = Instant::now();
    let (pool, test) = split(dataset, config.seed)?;
    let stats = fit_normalizer(&pool)?;

    let mut effective = config.clone();
    let (mut params, prior_epochs) = match &config.init {
        InitSpec::Fresh => {
            let seed = derive_seed(config.seed, &[INIT_STREAM_SALT]);
            (init_params(&ModelConfig::default(), seed)?, 0u64)
        }
        InitSpec::FromCheckpoint(path) => {
            let (p, meta, _) = load_checkpoint(path)?;
            if dataset.metal == MetalKind::Ag && config.stage1_lr == DEFAULT_STAGE1_LR {
                effective.stage1_lr = AG_TRANSFER_STAGE1_LR;
            }
            (p, meta.epochs_total)
        }
    };
    params.norm_stats = stats.clone();
    let mut opt = AdamState::new(&params.config);

    let pool_set = TrainSet::prepare(&pool, &stats)?;
    let test_set = TrainSet::prepare(&test, &stats)?;

    let initial_train_db = evaluate_set(&params, &pool_set)?;
    let per_fold_val_db = kfold_train(&mut params, &mut opt, &pool_set, &effective, obs)?;
    let stage1_final_train_db = evaluate_set(&params, &pool_set)?;
    finetune(&mut params, &mut opt, &pool_set, &effective, obs)?;
    let finetune_train_db = evaluate_set(&params, &pool_set)?;
    let test_db = evaluate_set(&params, &test_set)?;

    let epochs_run = effective.epoch_budget();
    let report = RunReport {
        config: effective,
        metal: dataset.metal,
        per_fold_val_db,
        initial_train_db,
        stage1_final_train_db,
        finetune_train_db,
        test_db,
        epochs_run,
        wall_time_seconds: t0.elapsed().as_secs_f64(),
        dataset_fingerprint: dataset_fingerprint(dataset),
    };
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        epochs_total: prior_epochs + epochs_run as u64,
        report,
    })
}

/// Warm-started run: load `source` weights, retrain on `dataset`.
pub fn transfer(
    source: &std::path::Path,
    dataset: &Dataset,
    config: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    let mut cfg = config.clone();
    cfg.init = InitSpec::FromCheckpoint(source.to_path_buf());
    run_training(dataset, &cfg, obs)
}
