use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState, DEFAULT_LEARNING_RATE};
use super::loss::{bce_loss, sigmoid};
use super::model::DetectorModel;
use super::tensor::Tensor4;
use crate::data::{Batches, FeatureSource};
use crate::error::{Error, Result};
use crate::eval::{accuracy, average_precision, ScoredSet};

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    /// Epoch interval for the checkpoint callback.
    pub checkpoint_every: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 20,
            seed: 1337,
            lr: DEFAULT_LEARNING_RATE,
            checkpoint_every: 1,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_ap: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy.
    pub model: DetectorModel<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

/// History as CSV with columns `epoch,train_loss,val_acc,val_ap`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc,val_ap\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{:.4},{:.4}\n",
            r.epoch, r.train_loss, r.val_acc, r.val_ap
        ));
    }
    out
}

/// Fake-class probabilities for every sample of `source`, in index order.
pub fn predict(model: &DetectorModel<f32>, source: &dyn FeatureSource, batch_size: usize) -> Result<Vec<f64>> {
    let order: Vec<usize> = (0..source.len()).collect();
    let mut probs = Vec::with_capacity(source.len());
    for batch in Batches::in_order(source, order, batch_size.max(1), 0) {
        let batch = batch?;
        probs.extend(model.forward_f64(&batch.features)?.into_iter().map(sigmoid));
    }
    Ok(probs)
}

fn class_counts(source: &dyn FeatureSource) -> (usize, usize) {
    let fakes = (0..source.len()).filter(|&i| source.label(i) == 1).count();
    (source.len() - fakes, fakes)
}

fn validate(model: &DetectorModel<f32>, val: &dyn FeatureSource, batch_size: usize) -> Result<(f64, f64, f64)> {
    let mut logits = Vec::with_capacity(val.len());
    let mut labels = Vec::with_capacity(val.len());
    for batch in Batches::in_order(val, (0..val.len()).collect(), batch_size, 0) {
        let batch = batch?;
        logits.extend(model.forward_f64(&batch.features)?);
        labels.extend(batch.labels);
    }
    let loss = bce_loss(&logits, &labels)?.loss;
    let set = ScoredSet::new(logits.iter().map(|&z| sigmoid(z)).collect(), labels, "validation")?;
    let acc = accuracy(&set, 0.5)?;
    let ap = average_precision(&set).unwrap_or(f64::NAN);
    Ok((loss, acc, ap))
}

/// Minimizes mean BCE with Adam.
///
/// Each epoch visits the training samples in an order seeded by
/// `(seed, epoch)`. After every epoch the validation split is scored and
/// `on_epoch` is called with the record and current weights. The returned
/// model is the one with the highest validation accuracy, ties broken by
/// lower validation loss, then by the earlier epoch.
pub fn train<F>(
    config: &TrainConfig,
    train_set: &dyn FeatureSource,
    val_set: &dyn FeatureSource,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &DetectorModel<f32>) -> Result<()>,
{
    config.validate()?;
    for (name, set) in [("training", train_set), ("validation", val_set)] {
        match class_counts(set) {
            (0, _) => return Err(Error::Dataset(format!("{name} set has no real (0_real) samples"))),
            (_, 0) => return Err(Error::Dataset(format!("{name} set has no fake (1_fake) samples"))),
            _ => {}
        }
    }
    if train_set.dims() != val_set.dims() {
        return Err(Error::Shape(format!(
            "training features {:?} vs validation features {:?}",
            train_set.dims(),
            val_set.dims()
        )));
    }

    let mut model = DetectorModel::<f32>::init(config.seed);
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, DetectorModel<f32>)> = None;

    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        for (b, batch) in Batches::shuffled(train_set, config.batch_size, config.seed, epoch as u64).enumerate() {
            let batch = batch?;
            let (loss, grads) = model.backward(&batch.features, &batch.labels).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * batch.labels.len() as f64;
            adam_step(model.params_mut(), &grads, &mut adam)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_acc, val_ap) = validate(&model, val_set, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            val_ap,
        };
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.5} val_loss={val_loss:.5} val_acc={val_acc:.2} val_ap={val_ap:.2}"
        );
        let improved = match &best {
            None => true,
            Some((i, _)) => {
                let b: &EpochRecord = &history[*i];
                val_acc > b.val_acc || (val_acc == b.val_acc && val_loss < b.val_loss)
            }
        };
        history.push(record);
        if improved {
            best = Some((epoch, model.clone()));
        }
        on_epoch(&record, &model)?;
    }

    let (best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Stacks a whole feature source into one tensor; convenient for small sets.
pub fn collect_features(source: &dyn FeatureSource) -> Result<(Tensor4<f32>, Vec<u8>)> {
    let feats = (0..source.len())
        .map(|i| source.feature(i, 0))
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..source.len()).map(|i| source.label(i)).collect();
    Ok((Tensor4::stack(source.dims(), &feats)?, labels))
}
