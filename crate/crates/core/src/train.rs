//! Training loop: SGD with momentum, step-halving learning rate, per-epoch
//! evaluation, CSV logs and checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError, TrainState};
use crate::data::{AugmentConfig, DataError, Dataset};
use crate::metrics::{confusion, top1_accuracy, DEFAULT_POSITIVE};
use crate::model::{Model, ModelError};
use crate::ops::{softmax_rows, Mode};
use crate::param::sgd_step;
use crate::tape::Tape;
use crate::tensor::{Float, TensorError};

pub const LOG_FILE: &str = "log.csv";
pub const BATCH_LOG_FILE: &str = "batches.csv";
pub const LOG_HEADER: &str = "epoch,lr,train_loss,train_ce,train_loss_wt,val_acc,val_recall";
const BATCH_LOG_HEADER: &str = "epoch,batch,loss,ce,loss_wt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite value at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type TrainResult<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_half_period: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub augment: AugmentConfig,
    /// Write `epoch_<e>.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr0: 1e-3,
            momentum: 0.9,
            lr_half_period: 10,
            seed: 0,
            shuffle: true,
            augment: AugmentConfig::default(),
            checkpoint_every: 10,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> TrainResult<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(TrainError::Config("lr0 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config("momentum must lie in [0, 1)".into()));
        }
        if self.lr_half_period == 0 {
            return Err(TrainError::Config("lr_half_period must be at least 1".into()));
        }
        self.augment.validate()?;
        Ok(())
    }

    pub fn log_path(&self) -> PathBuf {
        self.out_dir.join(LOG_FILE)
    }
}

/// `lr0 * 0.5^floor(epoch / period)`.
pub fn lr_schedule(epoch: usize, lr0: f64, period: usize) -> f64 {
    let halvings = (epoch / period.max(1)).min(i32::MAX as usize) as i32;
    lr0 * 0.5f64.powi(halvings)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_ce: f64,
    pub train_loss_wt: f64,
    pub val_acc: f64,
    pub val_recall: f64,
}

impl EpochLog {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.train_ce, self.train_loss_wt, self.val_acc, self.val_recall
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        let n = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            epoch: f[0].parse().ok()?,
            lr: n(1)?,
            train_loss: n(2)?,
            train_ce: n(3)?,
            train_loss_wt: n(4)?,
            val_acc: n(5)?,
            val_recall: n(6)?,
        })
    }
}

/// Reads every row of a training log.
pub fn read_log(path: &Path) -> TrainResult<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().skip(1).filter_map(EpochLog::parse).collect())
}

/// Predictions of a model over a whole split.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub pred: Vec<usize>,
    /// Row-major `[N, classes]`.
    pub proba: Vec<f64>,
    pub classes: usize,
}

impl Predictions {
    pub fn accuracy(&self) -> f64 {
        top1_accuracy(&self.pred, &self.labels).unwrap_or(f64::NAN)
    }

    /// One-vs-rest recall of the default positive class; NaN when absent.
    pub fn recall(&self) -> f64 {
        confusion(&self.pred, &self.labels, DEFAULT_POSITIVE)
            .and_then(|cm| cm.recall())
            .unwrap_or(f64::NAN)
    }
}

/// Eval-mode forward over `data` in manifest order.
pub fn predict<T: Float>(model: &mut Model<T>, data: &Dataset, batch_size: usize) -> TrainResult<Predictions> {
    let classes = model.config().num_classes;
    let order: Vec<usize> = (0..data.len()).collect();
    let mut out = Predictions {
        labels: Vec::with_capacity(data.len()),
        pred: Vec::with_capacity(data.len()),
        proba: Vec::with_capacity(data.len() * classes),
        classes,
    };
    for batch in data.batches(&order, batch_size, None) {
        let batch = batch?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch.images.cast::<T>(), Mode::Eval)?;
        let p = softmax_rows(tape.value(fwd.logits)).map_err(ModelError::from)?;
        for row in p.data().chunks(classes) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            out.pred.push(best);
            out.proba.extend(row.iter().map(|v| v.as_f64()));
        }
        out.labels.extend_from_slice(&batch.labels);
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Opens a log for appending, writing the header to new files and dropping
/// rows at or after `from_epoch` so a resumed run continues the sequence.
fn open_log(path: &Path, header: &str, from_epoch: usize) -> TrainResult<std::fs::File> {
    let existing = std::fs::read_to_string(path).unwrap_or_default();
    let mut kept = String::new();
    if existing.starts_with(header) {
        kept.push_str(header);
        kept.push('\n');
        for line in existing.lines().skip(1) {
            let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
            if epoch.is_some_and(|e| e < from_epoch) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    } else {
        kept = format!("{header}\n");
    }
    std::fs::write(path, kept).map_err(io_err(path))?;
    OpenOptions::new().append(true).open(path).map_err(io_err(path))
}

fn non_finite(epoch: usize, batch: usize) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::Tensor(TensorError::NonFinite { op }) => TrainError::NonFinite {
            epoch,
            batch,
            detail: format!("{op} produced a non-finite value"),
        },
        other => TrainError::Model(other),
    }
}

/// Trains from `start` (completed epochs) up to `cfg.epochs`. `val` is the
/// split evaluated after every epoch.
pub fn train<T: Float>(
    model: &mut Model<T>,
    train_set: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    start: TrainState,
) -> TrainResult<(TrainState, Vec<EpochLog>)> {
    cfg.validate()?;
    let mut state = start;
    let mut logs = Vec::new();
    if state.epoch >= cfg.epochs {
        return Ok((state, logs));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let log_path = cfg.log_path();
    let batch_log_path = cfg.out_dir.join(BATCH_LOG_FILE);
    let mut log = open_log(&log_path, LOG_HEADER, state.epoch)?;
    let mut batch_log = open_log(&batch_log_path, BATCH_LOG_HEADER, state.epoch)?;
    let augmentation = (!cfg.augment.is_identity()).then_some(&cfg.augment);

    for epoch in state.epoch..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr0, cfg.lr_half_period);
        let order = train_set.epoch_order(cfg.seed, epoch, cfg.shuffle);
        let (mut sum_loss, mut sum_ce, mut sum_wt) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (b, batch) in train_set
            .batches(&order, cfg.batch_size, augmentation.map(|a| (a, cfg.seed, epoch)))
            .enumerate()
        {
            let batch = batch?;
            debug_assert!(model.store.grads_are_zero());
            let bad = non_finite(epoch, b);
            let mut tape = Tape::new();
            let fwd = model
                .forward(&mut tape, &batch.images.cast::<T>(), Mode::Train)
                .map_err(&bad)?;
            let parts = model.loss(&mut tape, &fwd, &batch.labels).map_err(&bad)?;
            let loss = tape.value(parts.total).item().as_f64();
            let ce = tape.value(parts.ce).item().as_f64();
            let wt = parts.wt.map_or(0.0, |w| tape.value(w).item().as_f64());
            tape.backward(parts.total, &mut model.store)
                .map_err(|e| bad(ModelError::Tensor(e)))?;
            sgd_step(&mut model.store, lr, cfg.momentum).map_err(|e| bad(ModelError::Tensor(e)))?;
            model.store.zero_grad();
            if model.store.params().iter().any(|p| !p.tensor.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    detail: "parameters diverged after the update".into(),
                });
            }
            writeln!(batch_log, "{epoch},{b},{loss},{ce},{wt}").map_err(io_err(&batch_log_path))?;
            sum_loss += loss;
            sum_ce += ce;
            sum_wt += wt;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let preds = predict(model, val, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: sum_loss / n,
            train_ce: sum_ce / n,
            train_loss_wt: sum_wt / n,
            val_acc: preds.accuracy(),
            val_recall: preds.recall(),
        };
        writeln!(log, "{}", entry.csv_row()).map_err(io_err(&log_path))?;
        logs.push(entry);

        let improved = entry.val_acc > state.best_val_acc;
        state = TrainState {
            epoch: epoch + 1,
            best_val_acc: if improved { entry.val_acc } else { state.best_val_acc },
        };
        let ck = Checkpoint::capture(model, state);
        if improved {
            ck.save(&cfg.out_dir.join("best.ckpt"))?;
        }
        if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
            ck.save(&cfg.out_dir.join(format!("epoch_{}.ckpt", state.epoch)))?;
        }
        ck.save(&cfg.out_dir.join("last.ckpt"))?;
    }
    Ok((state, logs))
}

/// Initial state of a fresh run.
pub fn fresh_state() -> TrainState {
    TrainState {
        epoch: 0,
        best_val_acc: f64::NEG_INFINITY,
    }
}
