use std::fmt;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::{backward_into, forward, ModelConfig, ModelParams, Mode, SequenceInstance, Variant};
use crate::numeric::Rng;
use crate::preprocessing::stratified_split;
use crate::risk::{argmax_label, RiskLevel};

use super::adam::{adam_step, AdamState};
use super::loss::cross_entropy_loss;

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_EPOCHS_LSTM: usize = 20;
pub const DEFAULT_EPOCHS_ATTENTION: usize = 50;
pub const DEFAULT_PATIENCE: usize = 5;
pub const DEFAULT_MIN_DELTA: f64 = 1e-6;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

/// Sequences per gradient work item. Partial sums are formed per chunk and
/// added in chunk order, so results do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum decrease in validation loss that counts as an improvement.
    pub min_delta: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: match variant {
                Variant::Lstm => DEFAULT_EPOCHS_LSTM,
                Variant::LstmAttention => DEFAULT_EPOCHS_ATTENTION,
            },
            patience: DEFAULT_PATIENCE,
            min_delta: DEFAULT_MIN_DELTA,
            dropout: crate::model::params::DEFAULT_DROPOUT,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::arg("batch size, epochs and patience must all be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
    /// Training terms whose target probability hit the log floor.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Diverged(String),
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::MaxEpochs => f.write_str("max_epochs"),
            StopReason::EarlyStop => f.write_str("early_stop"),
            StopReason::Diverged(why) => write!(f, "diverged: {why}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// 1-based epoch whose parameters were kept; 0 if none completed.
    pub best_epoch: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_acc,seconds";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{:.3}",
                e.epoch,
                fmt_f64(e.train_loss),
                fmt_f64(e.val_loss),
                fmt_f64(e.val_acc),
                e.seconds
            )?;
        }
        Ok(())
    }

    /// Equality ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.stop_reason == other.stop_reason
            && self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.val_acc.to_bits() == b.val_acc.to_bits()
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> Decision {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.wait = 0;
            Decision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                Decision::Stop
            } else {
                Decision::Continue
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Carves a stratified validation subset out of the training sequences.
pub fn validation_split(
    sequences: &[SequenceInstance],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SequenceInstance>, Vec<SequenceInstance>)> {
    let labels = labels_of(sequences)?;
    let (train, val) = stratified_split(&labels, 1.0 - fraction, seed)?;
    let mut train = train;
    let mut val = val;
    // Keep source order inside each part; shuffling happens per epoch.
    train.sort_unstable();
    val.sort_unstable();
    Ok((
        train.into_iter().map(|i| sequences[i].clone()).collect(),
        val.into_iter().map(|i| sequences[i].clone()).collect(),
    ))
}

fn labels_of(sequences: &[SequenceInstance]) -> Result<Vec<RiskLevel>> {
    sequences
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::arg(format!("sequence {}@{} has no label", s.worker_id, s.window_start)))
        })
        .collect()
}

/// Mean infer-mode loss and accuracy.
pub fn evaluate_loss(params: &ModelParams, sequences: &[SequenceInstance]) -> Result<(f64, f64)> {
    let labels = labels_of(sequences)?;
    let per: Vec<(f64, bool)> = sequences
        .par_iter()
        .zip(labels.par_iter())
        .map(|(s, &y)| {
            let tr = forward(params, &s.inputs, Mode::Infer)?;
            let loss = cross_entropy_loss(&tr.probabilities, y).value;
            Ok((loss, argmax_label(&tr.probabilities) == y))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

struct BatchResult {
    grads: ModelParams,
    loss: f64,
    clamped: usize,
}

fn batch_gradient(
    params: &ModelParams,
    batch: &[(&SequenceInstance, RiskLevel)],
    dropout_rng: &Rng,
) -> Result<BatchResult> {
    let parts: Vec<BatchResult> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            let mut clamped = 0;
            for (k, (s, y)) in chunk.iter().enumerate() {
                let mut rng = dropout_rng.child((ci * CHUNK + k) as u64);
                let tr = forward(params, &s.inputs, Mode::Train(&mut rng))?;
                let l = cross_entropy_loss(&tr.probabilities, *y);
                loss += l.value;
                clamped += usize::from(l.clamped);
                backward_into(params, &tr, *y, &mut grads)?;
            }
            Ok(BatchResult { grads, loss, clamped })
        })
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let mut total = it.next().expect("non-empty batch");
    for p in it {
        total.grads.add_scaled(1.0, &p.grads);
        total.loss += p.loss;
        total.clamped += p.clamped;
    }
    total.grads.scale(1.0 / batch.len() as f64);
    Ok(total)
}

pub fn train(
    model: ModelConfig,
    train_set: &[SequenceInstance],
    validation: &[SequenceInstance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, train_set, validation, cfg, |_| {})
}

/// Mini-batch Adam with early stopping on validation loss. The returned
/// parameters are those of the best validation epoch. A non-finite loss or
/// gradient ends training with [`StopReason::Diverged`] and the best
/// parameters seen so far (the initial ones if no epoch completed).
pub fn train_with_progress(
    mut model: ModelConfig,
    train_set: &[SequenceInstance],
    validation: &[SequenceInstance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::InsufficientData(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train_set.len(),
            validation.len()
        )));
    }
    model.dropout = cfg.dropout;
    let train_labels = labels_of(train_set)?;
    labels_of(validation)?;
    if let Some(s) = train_set.iter().chain(validation).find(|s| s.inputs.cols() != model.input_dim) {
        return Err(Error::shape(format!(
            "sequence {}@{} has {} features, model expects {}",
            s.worker_id,
            s.window_start,
            s.inputs.cols(),
            model.input_dim
        )));
    }

    let root = Rng::new(cfg.seed);
    let mut params = ModelParams::init(model, &mut root.child(0))?;
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    let shuffle_root = root.child(1);
    let dropout_root = root.child(2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.sort_unstable();
        shuffle_root.child(epoch as u64).shuffle(&mut order);
        let epoch_rng = dropout_root.child(epoch as u64);

        let mut loss_sum = 0.0;
        let mut clamped = 0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&SequenceInstance, RiskLevel)> = idx.iter().map(|&i| (&train_set[i], train_labels[i])).collect();
            let r = match batch_gradient(&params, &batch, &epoch_rng.child(bi as u64)) {
                Ok(r) => r,
                Err(Error::State(msg)) => {
                    stop_reason = StopReason::Diverged(format!("{msg} in epoch {epoch}, batch {bi}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !r.loss.is_finite() {
                stop_reason = StopReason::Diverged(format!("non-finite training loss in epoch {epoch}, batch {bi}"));
                break 'epochs;
            }
            match adam_step(&mut params, &r.grads, &mut adam, cfg.learning_rate) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { param, index }) => {
                    stop_reason = StopReason::Diverged(format!(
                        "non-finite gradient at {param}[{index}] in epoch {epoch}, batch {bi}"
                    ));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            loss_sum += r.loss;
            clamped += r.clamped;
        }

        let (val_loss, val_acc) = match evaluate_loss(&params, validation) {
            Ok(v) => v,
            Err(Error::State(msg)) => {
                stop_reason = StopReason::Diverged(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        if !val_loss.is_finite() {
            stop_reason = StopReason::Diverged(format!("non-finite validation loss in epoch {epoch}"));
            break;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
            clamped,
        };
        on_epoch(&record);
        epochs.push(record);
        match stopper.update(epoch, val_loss) {
            Decision::Improved => best = params.clone(),
            Decision::Continue => {}
            Decision::Stop => {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best,
        log: TrainLog {
            epochs,
            stop_reason,
            best_epoch: stopper.best_epoch,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    /// Three classes separated by the sign and size of the first feature.
    fn separable(n: usize, seed: u64) -> Vec<SequenceInstance> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let label = RiskLevel::from_index(i % 3).unwrap();
                let centre = [-1.0, 0.0, 1.0][label.index()];
                let inputs = Matrix::from_fn(4, 3, |_, c| if c == 0 { centre + 0.1 * rng.normal() } else { rng.normal() * 0.3 });
                SequenceInstance {
                    worker_id: format!("w{}", i % 5),
                    window_start: i as i64 * 60,
                    inputs,
                    label: Some(label),
                }
            })
            .collect()
    }

    fn small_cfg(variant: Variant) -> (ModelConfig, TrainConfig) {
        let model = ModelConfig::new(variant, 3).with_hidden(8);
        let mut cfg = TrainConfig::for_variant(variant);
        cfg.learning_rate = 0.01;
        cfg.batch_size = 16;
        cfg.max_epochs = 6;
        cfg.seed = 3;
        (model, cfg)
    }

    #[test]
    fn defaults_follow_the_regimen() {
        let l = TrainConfig::for_variant(Variant::Lstm);
        assert_eq!((l.learning_rate, l.batch_size, l.max_epochs, l.dropout), (0.001, 64, 20, 0.3));
        assert_eq!(TrainConfig::for_variant(Variant::LstmAttention).max_epochs, 50);
        assert_eq!(l.patience, 5);
    }

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(3, 1e-6);
        let d: Vec<Decision> = [1.0, 0.9, 0.91, 0.92, 0.93]
            .iter()
            .enumerate()
            .map(|(i, &v)| s.update(i + 1, v))
            .collect();
        assert_eq!(
            d,
            vec![Decision::Improved, Decision::Improved, Decision::Continue, Decision::Continue, Decision::Stop]
        );
        assert_eq!(s.best_epoch, 2);
        let mut s = EarlyStopping::new(2, 1e-6);
        s.update(1, 1.0);
        assert_eq!(s.update(2, 1.0 - 1e-7), Decision::Continue);
    }

    #[test]
    fn loss_decreases_and_run_is_deterministic() {
        let data = separable(240, 1);
        let (tr, val) = validation_split(&data, 0.1, 9).unwrap();
        assert_eq!(val.len(), 24);
        for variant in [Variant::Lstm, Variant::LstmAttention] {
            let (m, c) = small_cfg(variant);
            let a = train(m, &tr, &val, &c).unwrap();
            let b = train(m, &tr, &val, &c).unwrap();
            assert!(a.log.same_trajectory(&b.log));
            assert_eq!(a.params, b.params);
            let e = &a.log.epochs;
            assert!(e[4].train_loss < e[0].train_loss, "{variant}: {e:?}");
            let best = e.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
            let (restored, _) = evaluate_loss(&a.params, &val).unwrap();
            assert_eq!(restored, best);
            assert!(a.log.epochs.last().unwrap().val_acc > 0.9);
        }
    }

    #[test]
    fn validation_loss_is_repeatable() {
        let data = separable(30, 2);
        let p = ModelParams::init(ModelConfig::new(Variant::LstmAttention, 3).with_hidden(4), &mut Rng::new(0)).unwrap();
        assert_eq!(evaluate_loss(&p, &data).unwrap(), evaluate_loss(&p, &data).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = separable(30, 2);
        let (m, mut c) = small_cfg(Variant::Lstm);
        assert!(matches!(train(m, &data, &[], &c), Err(Error::InsufficientData(_))));
        let mut wrong = m;
        wrong.input_dim = 7;
        assert!(matches!(train(wrong, &data, &data, &c), Err(Error::Shape(_))));
        c.batch_size = 0;
        assert!(train(m, &data, &data, &c).is_err());
    }

    #[test]
    fn divergence_returns_best_parameters() {
        let mut data = separable(60, 4);
        let (m, c) = small_cfg(Variant::Lstm);
        let val = data.clone();
        data[7].inputs.set(2, 0, f64::NAN);
        let out = train(m, &data, &val, &c).unwrap();
        assert!(matches!(out.log.stop_reason, StopReason::Diverged(_)), "{:?}", out.log.stop_reason);
        assert!(out.params.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn trainlog_csv_layout() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.0,
                val_loss: 0.5,
                val_acc: 0.75,
                seconds: 1.25,
                clamped: 0,
            }],
            stop_reason: StopReason::MaxEpochs,
            best_epoch: 1,
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_loss,val_loss,val_acc,seconds");
        assert!(lines.next().unwrap().starts_with("1,1.0000000000000000e0,"));
    }
}
