//! Mini-batch training with validation-loss early stopping.

mod checkpoint;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architectures::{ArchitectureError, ArchitectureSpec};
use crate::corpus::{Label, Source};
use crate::nn::{bce_loss, Mode, Network, NnError, Optimizer, OptimizerConfig, Tensor};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

/// Offsets added to the run seed so each stochastic component has its own stream.
pub const SHUFFLE_SEED_OFFSET: u64 = 1;
pub const DROPOUT_SEED_OFFSET: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("non-finite loss at epoch {epoch}; last good checkpoint kept")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Architecture(#[from] ArchitectureError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub dropout_rate: f64,
    pub min_delta: f64,
    pub seed: u64,
    pub max_len: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_epochs: 2000,
            patience: 100,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            dropout_rate: 0.2,
            min_delta: 0.0,
            seed: 0,
            max_len: 200,
            checkpoint_dir: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// One vectorized, labeled document.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub input: Tensor,
    pub label: Label,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience counter over validation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub stalled: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stalled: 0,
        }
    }

    /// Records `val_loss` for `epoch` (1-based). An improvement is a loss
    /// strictly below `best - min_delta`.
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_loss - self.min_delta {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.stalled = 0;
        } else {
            self.stalled += 1;
        }
        if self.stalled >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Network,
    pub last: Network,
    pub spec: ArchitectureSpec,
    pub history: TrainingHistory,
}

/// Mean BCE and accuracy of `net` over `samples` in inference mode.
pub fn loss_and_accuracy(net: &Network, samples: &[Sample]) -> Result<(f64, f64), NnError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let p = net.predict_sr(&s.input)?;
        let y = s.label.target();
        loss += bce_loss(p, y);
        correct += usize::from((p >= 0.5) == (y == 1.0));
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains `network` (built from `spec`) with validation in inference mode.
pub fn train(
    network: Network,
    spec: &ArchitectureSpec,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    train_with_validator(network, spec, train_set, config, |net, _| {
        Ok(loss_and_accuracy(net, val_set)?)
    })
}

/// Like [`train`], but the validation loss and accuracy of each epoch come
/// from `validate(network, epoch)`.
pub fn train_with_validator<F>(
    mut network: Network,
    spec: &ArchitectureSpec,
    train_set: &[Sample],
    config: &TrainingConfig,
    mut validate: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&Network, usize) -> Result<(f64, f64), TrainError>,
{
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    let input_shape = train_set[0].input.shape().to_vec();
    if let Some(bad) = train_set.iter().find(|s| s.input.shape() != input_shape.as_slice()) {
        return Err(TrainError::Nn(NnError::Shape(format!(
            "sample {} has shape {:?}, expected {input_shape:?}",
            bad.id,
            bad.input.shape()
        ))));
    }
    if network.output_shape(&input_shape)? != [2] {
        return Err(TrainError::Nn(NnError::Shape("network must output 2 class probabilities".into())));
    }

    let mut spec = spec.clone();
    spec.dropout_rate = config.dropout_rate;
    network.set_dropout_rate(config.dropout_rate)?;

    let mut optimizer = Optimizer::new(config.optimizer)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SHUFFLE_SEED_OFFSET));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(DROPOUT_SEED_OFFSET));
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut history = TrainingHistory::default();
    let mut best = network.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let ckpt_dir = config.checkpoint_dir.as_deref();
    if let Some(dir) = ckpt_dir {
        fs::create_dir_all(dir)?;
    }

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&Tensor> = batch.iter().map(|&i| &train_set[i].input).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| train_set[i].label.target()).collect();
            let step = match network.batch_gradients(&inputs, &targets, Mode::Train, &mut dropout_rng) {
                Err(NnError::NonFinite(_)) => return Err(TrainError::NonFiniteLoss { epoch }),
                other => other?,
            };
            if !step.loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            loss_sum += step.loss * batch.len() as f64;
            correct += step
                .probabilities
                .iter()
                .zip(&targets)
                .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
                .count();
            optimizer.step(&mut network.params_mut(), &step.gradients)?;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_acc) = match validate(&network, epoch) {
            Err(TrainError::Nn(NnError::NonFinite(_))) => return Err(TrainError::NonFiniteLoss { epoch }),
            other => other?,
        };
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        });
        let decision = stopper.update(epoch, val_loss);
        history.best_epoch = stopper.best_epoch;
        history.stopped_epoch = epoch;
        if stopper.improved_at(epoch) {
            best = network.clone();
            if let Some(dir) = ckpt_dir {
                save_checkpoint(&best, &spec, &history, dir.join("best.ckpt"))?;
            }
        }
        if let Some(dir) = ckpt_dir {
            save_checkpoint(&network, &spec, &history, dir.join("final.ckpt"))?;
        }
        log::debug!(
            "epoch {epoch}: train_loss {:.6} val_loss {val_loss:.6} val_acc {val_acc:.4}",
            loss_sum / n
        );
        if decision == StopDecision::Stop {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    if let Some(dir) = ckpt_dir {
        write_atomic(&dir.join("history.csv"), history.to_csv().as_bytes())?;
    }
    Ok(TrainOutcome {
        best,
        last: network,
        spec,
        history,
    })
}

/// Writes through a temporary file in the same directory, then renames.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}
