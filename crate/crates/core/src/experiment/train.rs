//! Training loop with validation-loss early stopping, fine-tuning and
//! per-user personalization.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{default_tau_grid, select_threshold, MetricsReport};
use crate::error::{Error, Result};
use crate::neural::{adam_step, bce_loss, AdamConfig, AdamState, UNet};

use super::dataset::{
    batch_inputs, batch_targets, evaluate_subjects, threshold_pairs, LabeledWindow, SubjectData,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        TrainingParams {
            batch_size: 32,
            learning_rate: 1e-4,
            max_epochs: 200,
            patience: 10,
        }
    }
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    fn empty() -> Self {
        TrainHistory {
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            best_epoch: None,
            stopped_early: false,
        }
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            out.push_str(&format!("{e},{t:.8},{v:.8}\n"));
        }
        out
    }
}

/// Mean validation loss in inference mode.
pub fn validation_loss(model: &UNet<f32>, val: &[&LabeledWindow]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in val.chunks(64) {
        let x = batch_inputs(chunk)?;
        let y = batch_targets(chunk)?;
        let probs = model.forward(&x)?;
        let (loss, _) = bce_loss(&probs, &y)?;
        total += loss as f64 * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Train `model` in place with a fresh Adam state, shuffling batches from
/// `seed`, stopping early on the validation loss and restoring the best
/// weights. `max_epochs == 0` returns the model untouched with empty history.
pub fn train_model(
    model: &mut UNet<f32>,
    train: &[&LabeledWindow],
    val: &[&LabeledWindow],
    params: &TrainingParams,
    seed: u64,
) -> Result<TrainHistory> {
    if params.max_epochs == 0 {
        return Ok(TrainHistory::empty());
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let block_lens: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
    let mut adam = AdamState::<f32>::new(
        AdamConfig::with_learning_rate(params.learning_rate),
        &block_lens,
    );

    let mut history = TrainHistory::empty();
    let mut best_loss = f64::INFINITY;
    let mut best_snapshot = model.snapshot();
    let mut epochs_since_best = 0usize;

    let mut order: Vec<usize> = (0..train.len()).collect();
    model.set_train(true);
    for epoch in 0..params.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in 0..order.len().div_ceil(params.batch_size) {
            let lo = batch_idx * params.batch_size;
            let hi = (lo + params.batch_size).min(order.len());
            if hi - lo < 2 {
                // batch statistics are undefined on a single window
                continue;
            }
            let batch: Vec<&LabeledWindow> = order[lo..hi].iter().map(|&i| train[i]).collect();
            let x = batch_inputs(&batch)?;
            let y = batch_targets(&batch)?;
            let probs = model.forward_train(&x)?;
            let (loss, grad) = bce_loss(&probs, &y)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            model.backward(&grad)?;
            adam_step(model, &mut adam).map_err(|e| {
                Error::Training(format!("epoch {epoch}, batch {batch_idx}: {e}"))
            })?;
            epoch_loss += loss as f64 * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(Error::Config(
                "no trainable batch (need at least 2 windows)".into(),
            ));
        }

        model.set_train(false);
        let val_loss = validation_loss(model, val)?;
        model.set_train(true);
        history.train_loss.push(epoch_loss / seen as f64);
        history.val_loss.push(val_loss);

        if val_loss < best_loss {
            best_loss = val_loss;
            best_snapshot = model.snapshot();
            history.best_epoch = Some(epoch);
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= params.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.set_train(false);
    model.restore(&best_snapshot)?;
    Ok(history)
}

/// Continue optimizing pretrained weights on new data. The Adam state is
/// rebuilt from scratch so stale second-moment estimates from the source
/// domain do not distort the first updates.
pub fn fine_tune(
    model: &mut UNet<f32>,
    train: &[&LabeledWindow],
    val: &[&LabeledWindow],
    params: &TrainingParams,
    seed: u64,
) -> Result<TrainHistory> {
    train_model(model, train, val, params, seed)
}

/// Outcome of adapting a model to one user.
#[derive(Debug, Clone)]
pub struct Personalization {
    pub model: UNet<f32>,
    pub tau: f64,
    pub report: MetricsReport,
    pub history: TrainHistory,
}

/// Fine-tune on the chronologically first `split_fraction` of one user's
/// windows and evaluate on the remainder. The adaptation half is further
/// split (tail 20%) for early stopping and threshold selection; the test
/// half is never read during adaptation.
pub fn personalize(
    model: &UNet<f32>,
    user: &SubjectData,
    split_fraction: f64,
    params: &TrainingParams,
    min_box_len: usize,
    seed: u64,
) -> Result<Personalization> {
    if user.windows.len() < 2 {
        return Err(Error::Config(format!(
            "personalization needs at least 2 windows for user {}, got {}",
            user.subject_id,
            user.windows.len()
        )));
    }
    if !(0.0..1.0).contains(&split_fraction) || split_fraction <= 0.0 {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {split_fraction}"
        )));
    }
    let mut windows: Vec<&LabeledWindow> = user.windows.iter().collect();
    windows.sort_by_key(|w| w.start_index);
    let n_adapt = ((windows.len() as f64 * split_fraction).round() as usize)
        .clamp(1, windows.len() - 1);
    let (adapt, test) = windows.split_at(n_adapt);

    let n_val = ((adapt.len() as f64 * 0.2).round() as usize).clamp(1, adapt.len());
    let (fit, val) = if adapt.len() == 1 {
        (adapt, adapt)
    } else {
        adapt.split_at(adapt.len() - n_val)
    };
    let fit = if fit.is_empty() { adapt } else { fit };

    let mut adapted = model.clone();
    let history = fine_tune(&mut adapted, fit, val, params, seed)?;

    let tau = select_threshold(
        &threshold_pairs(&adapted, val)?,
        &default_tau_grid(),
        min_box_len,
    )?;
    let held_out = SubjectData {
        subject_id: user.subject_id.clone(),
        windows: test.iter().map(|w| (*w).clone()).collect(),
    };
    let report = evaluate_subjects(&adapted, &[&held_out], tau, min_box_len)?;
    Ok(Personalization {
        model: adapted,
        tau,
        report,
        history,
    })
}

/// Flatten subjects into one window list (training pool).
pub fn pool_windows<'a>(subjects: &[&'a SubjectData]) -> Vec<&'a LabeledWindow> {
    subjects
        .iter()
        .flat_map(|s| s.windows.iter())
        .collect()
}
