//! Mini-batch training with Adam and per-epoch validation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{BatchStream, DaSpec, Dataset};
use crate::error::{Error, Result};
use crate::eval::{self, PredictionRecord};
use crate::model::Model;
use crate::nn::{AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transform::Warper;
use crate::{rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_localizer: f64,
    pub weight_decay: f64,
    /// Traditional augmentation applied before the model (`sigma_da = 0` disables it).
    pub da: DaSpec,
    pub seed: u64,
    /// Batch size used for validation predictions.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr_classifier: 1e-3,
            lr_localizer: 1e-3,
            weight_decay: 0.01,
            da: DaSpec { sigma_da: 0.0, samples: 1 },
            seed: 0,
            eval_batch: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over batches of the classification term.
    pub class_loss: f64,
    pub kl: f64,
    pub val_acc: Option<f64>,
    pub val_nll: Option<f64>,
}

/// Trains `model` in place. `da_warper` supplies the family for traditional
/// augmentation and is required when `config.da.sigma_da > 0`.
pub fn fit<T: Scalar>(
    model: &mut Model<T>,
    train: &Dataset<T>,
    val: Option<&Dataset<T>>,
    config: &TrainConfig,
    da_warper: Option<&Warper<T>>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let augment = config.da.sigma_da > 0.0 || config.da.samples > 1;
    if augment && da_warper.is_none() {
        return Err(Error::Config("traditional augmentation needs a transformation family".into()));
    }
    let adam = |lr| AdamConfig {
        lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut opt_classifier = AdamState::<T>::new(adam(config.lr_classifier));
    let mut opt_localizer = AdamState::<T>::new(adam(config.lr_localizer));
    let mut rng = rng_from_seed(config.seed);
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut stream = BatchStream::new(train, config.batch_size, rng.random())?;
        if augment {
            stream = stream.with_augmentation(da_warper.expect("checked above"), config.da)?;
        }
        let (mut class_sum, mut kl_sum, mut batches) = (0.0, 0.0, 0usize);
        for (step, batch) in stream.enumerate() {
            let (x, y) = batch?;
            model.zero_grad();
            let terms = model.elbo_loss(&x, &y, &mut rng).map_err(|e| located(e, epoch, step))?;
            if !terms.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            let (mut pc, mut pl) = model.param_groups_mut();
            opt_classifier.step(&mut pc).map_err(|e| located(e, epoch, step))?;
            if !pl.is_empty() {
                opt_localizer.step(&mut pl).map_err(|e| located(e, epoch, step))?;
            }
            class_sum += terms.class_loss.as_f64();
            kl_sum += terms.kl.as_f64();
            batches += 1;
        }
        let (val_acc, val_nll) = match val {
            Some(v) if !v.is_empty() => {
                let records = predict_records(model, v, model.spec().s_test, config.eval_batch, &mut rng)?;
                (Some(eval::accuracy(&records)?), Some(eval::nll(&records)?))
            }
            _ => (None, None),
        };
        let log = EpochLog {
            epoch,
            class_loss: class_sum / batches as f64,
            kl: kl_sum / batches as f64,
            val_acc,
            val_nll,
        };
        log::info!(
            "epoch {epoch}: class_loss {:.4} kl {:.4} val_acc {:?} val_nll {:?}",
            log.class_loss,
            log.kl,
            log.val_acc,
            log.val_nll
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

fn located(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}

/// Predictive probabilities `[n, classes]` for a whole dataset, in chunks.
pub fn predict_dataset<T: Scalar>(model: &Model<T>, data: &Dataset<T>, samples: usize, chunk: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    predict_dataset_scaled(model, data, samples, T::one(), chunk, rng)
}

pub fn predict_dataset_scaled<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    samples: usize,
    sigma_scale: T,
    chunk: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let chunk = chunk.max(1);
    let mut parts = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for c in idx.chunks(chunk) {
        parts.push(model.predict_scaled(&data.inputs.select(c), samples, sigma_scale, rng)?);
    }
    Tensor::concat(&parts)
}

pub fn predict_records<T: Scalar>(model: &Model<T>, data: &Dataset<T>, samples: usize, chunk: usize, rng: &mut Rng) -> Result<Vec<PredictionRecord>> {
    let probs = predict_dataset(model, data, samples, chunk, rng)?;
    eval::records_from(&probs, &data.labels)
}
