//! Adam optimization, the epoch loop, and evaluation metrics.
//!
//! Training is deterministic for a fixed master seed: the seed fans out into
//! independent shuffle and dropout streams, batches are visited in shuffled
//! order, and all gradient reductions run in a fixed order.

use serde::Serialize;

use crate::data::{Dataset, Item, Split};
use crate::error::{Error, Result};
use crate::layers::{softmax_xent, Mode};
use crate::model::{LayerStack, NUM_CLASSES};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

/// Optimizer and loop hyperparameters. Defaults are the experiment settings:
/// Adam at lr 1e-5, 30 epochs, batch 32.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// lr may be zero (a no-op optimizer) but never negative or non-finite.
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Per-parameter first/second moment accumulators and the shared step count.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> AdamState {
        AdamState {
            m: params.iter().map(|p| p.zeros_like()).collect(),
            v: params.iter().map(|p| p.zeros_like()).collect(),
            t: 0,
        }
    }

    pub fn for_model(model: &LayerStack) -> AdamState {
        let params: Vec<&Tensor> = model.layers.iter().flat_map(|l| l.trainable_params()).collect();
        AdamState::for_params(&params)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update: m and v track the gradient moments, bias correction
/// rescales them, and each parameter moves against the normalized gradient.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(Error::Shape(format!(
                "adam_step: param {:?} vs grad {:?}",
                params[i].shape(),
                grads[i].shape()
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].data();
        let p = params[i].data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Accuracy, macro recall and macro F1 as percentages, plus the raw 2x2
/// confusion matrix (rows = true class, cols = predicted class).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: [[usize; 2]; 2],
}

/// Per-class (precision, recall, f1) as fractions, with zero-division
/// mapping to 0.
pub fn per_class_prf(confusion: &[[usize; 2]; 2]) -> [(f64, f64, f64); 2] {
    let mut out = [(0.0, 0.0, 0.0); 2];
    for k in 0..2 {
        let tp = confusion[k][k] as f64;
        let fn_ = confusion[k][1 - k] as f64;
        let fp = confusion[1 - k][k] as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        out[k] = (precision, recall, f1);
    }
    out
}

/// Macro-averaged metrics from a 2x2 confusion matrix.
pub fn metrics_from_confusion(confusion: &[[usize; 2]; 2]) -> Result<Metrics> {
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Data("confusion matrix is all zero".into()));
    }
    let accuracy = 100.0 * (confusion[0][0] + confusion[1][1]) as f64 / total as f64;
    let prf = per_class_prf(confusion);
    let recall = 100.0 * (prf[0].1 + prf[1].1) / 2.0;
    let f1 = 100.0 * (prf[0].2 + prf[1].2) / 2.0;
    Ok(Metrics {
        accuracy,
        recall,
        f1,
        confusion: *confusion,
    })
}

// ---------------------------------------------------------------------------
// Batching and evaluation
// ---------------------------------------------------------------------------

/// Stack items into an input batch and one-hot label batch.
pub fn batch_tensors(items: &[&Item]) -> Result<(Tensor, Tensor)> {
    if items.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let shape = items[0].image.shape();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut x = Tensor::zeros(&[items.len(), h, w, c])?;
    let mut labels = Tensor::zeros(&[items.len(), NUM_CLASSES])?;
    for (i, item) in items.iter().enumerate() {
        if item.image.shape() != shape {
            return Err(Error::Shape("inconsistent image shapes in batch".into()));
        }
        let stride = h * w * c;
        x.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(item.image.data());
        labels.data_mut()[i * NUM_CLASSES + item.label.index()] = 1.0;
    }
    Ok((x, labels))
}

/// Argmax predictions over a split, reduced to a confusion matrix and
/// macro metrics. Runs the model in inference mode.
pub fn evaluate(model: &mut LayerStack, dataset: &Dataset, split: Split) -> Result<Metrics> {
    let items = dataset.split_items(split);
    if items.is_empty() {
        return Err(Error::Data(format!("split {split:?} is empty")));
    }
    let mut confusion = [[0usize; 2]; 2];
    for chunk in items.chunks(64) {
        let (x, _) = batch_tensors(chunk)?;
        let logits = model.forward(&x, Mode::Infer, None)?;
        for (i, item) in chunk.iter().enumerate() {
            let row = &logits.data()[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
            let pred = if row[1] > row[0] { 1 } else { 0 };
            confusion[item.label.index()][pred] += 1;
        }
    }
    metrics_from_confusion(&confusion)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One row of the per-epoch log.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

/// Render the epoch log as CSV.
pub fn epoch_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy,val_recall,val_f1\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_accuracy, row.val_recall, row.val_f1
        ));
    }
    out
}

/// Train a model in place: shuffled mini-batches, softmax cross-entropy,
/// one Adam step per batch (the final short batch included), one log row
/// per epoch. Deterministic for a fixed `cfg.seed`.
pub fn train(model: &mut LayerStack, dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    train_cb(model, dataset, cfg, |_| {})
}

/// [`train`] with a per-epoch callback (progress reporting).
pub fn train_cb(
    model: &mut LayerStack,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let train_idx: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.items[i].split == Split::Train)
        .collect();
    if train_idx.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if dataset.split_len(Split::Val) == 0 {
        return Err(Error::Data("validation split is empty".into()));
    }

    let mut shuffle_rng = Rng::with_stream(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = Rng::with_stream(cfg.seed, streams::DROPOUT);
    let mut adam = AdamState::for_model(model);
    let mut log = Vec::with_capacity(cfg.epochs);

    let mut order = train_idx;
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Item> = chunk.iter().map(|&i| &dataset.items[i]).collect();
            let (x, labels) = batch_tensors(&items)?;
            let logits = model.forward(&x, Mode::Train, Some(&mut dropout_rng))?;
            let sx = softmax_xent(&logits, &labels)?;
            loss_sum += sx.loss * items.len() as f64;
            model.backward(&sx.dlogits)?;

            let mut grads: Vec<Tensor> = Vec::new();
            for layer in &mut model.layers {
                grads.extend(layer.take_grads()?);
            }
            let mut params: Vec<&mut Tensor> = Vec::new();
            for layer in &mut model.layers {
                params.extend(layer.trainable_params_mut());
            }
            adam_step(&mut params, &grads, &mut adam, cfg)?;
        }
        let val = evaluate(model, dataset, Split::Val)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy: val.accuracy,
            val_recall: val.recall,
            val_f1: val.f1,
        };
        on_epoch(&stats);
        log.push(stats);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut p = random_tensor(&[3, 3], 1, 1.0);
        let orig = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::for_params(&[&p]);
        let cfg = TrainConfig::default();
        for _ in 0..5 {
            adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, &cfg).unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = Tensor::zeros(&[1]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut state = AdamState::for_params(&[&p]);
        let cfg = TrainConfig::default();
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, &cfg).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr / (1 + eps).
        let expected = -1e-5 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-18, "{}", p.data()[0]);
    }

    #[test]
    fn adam_first_step_is_scale_invariant() {
        let cfg = TrainConfig::default();
        let step_for = |gv: f64| {
            let mut p = Tensor::zeros(&[1]).unwrap();
            let g = Tensor::from_vec(&[1], vec![gv]).unwrap();
            let mut state = AdamState::for_params(&[&p]);
            adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, &cfg).unwrap();
            p.data()[0]
        };
        let d1 = step_for(1.0);
        let d2 = step_for(2.0);
        assert!(d1 < 0.0 && d2 < 0.0);
        assert!((d1 - d2).abs() < 1e-12, "{d1} vs {d2}");
        let d_neg = step_for(-0.5);
        assert!(d_neg > 0.0);
        assert!((d_neg.abs() - cfg.learning_rate).abs() < 1e-10);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut p = Tensor::zeros(&[2]).unwrap();
        let g = Tensor::zeros(&[3]).unwrap();
        let mut state = AdamState::for_params(&[&p]);
        let cfg = TrainConfig::default();
        assert!(adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut state, &cfg).is_err());
    }

    #[test]
    fn metrics_perfect_and_inverted() {
        let m = metrics_from_confusion(&[[5, 0], [0, 5]]).unwrap();
        assert_eq!((m.accuracy, m.recall, m.f1), (100.0, 100.0, 100.0));

        let m = metrics_from_confusion(&[[0, 5], [5, 0]]).unwrap();
        assert_eq!(m.accuracy, 0.0);
    }

    #[test]
    fn metrics_hand_computed_cases() {
        let m = metrics_from_confusion(&[[3, 1], [1, 3]]).unwrap();
        assert!((m.accuracy - 75.0).abs() < 1e-12);
        assert!((m.recall - 75.0).abs() < 1e-12);
        assert!((m.f1 - 75.0).abs() < 1e-12);

        let m = metrics_from_confusion(&[[8, 2], [4, 6]]).unwrap();
        assert!((m.accuracy - 70.0).abs() < 1e-12);
        let prf = per_class_prf(&[[8, 2], [4, 6]]);
        assert!((prf[0].1 - 0.8).abs() < 1e-12);
        assert!((prf[1].1 - 0.6).abs() < 1e-12);
        assert!((m.recall - 70.0).abs() < 1e-12);
    }

    #[test]
    fn class0_f1_with_no_true_negatives() {
        // TP=1, FP=1, FN=1, TN=0 for class 0: P = R = 0.5, so F1 = 50%.
        let prf = per_class_prf(&[[1, 1], [1, 0]]);
        assert!((prf[0].2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_rejects_empty_matrix() {
        assert!(metrics_from_confusion(&[[0, 0], [0, 0]]).is_err());
    }

    #[test]
    fn macro_f1_symmetric_under_class_swap() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let c = [
                [rng.below(20), rng.below(20)],
                [rng.below(20), rng.below(20)],
            ];
            if c.iter().flatten().sum::<usize>() == 0 {
                continue;
            }
            let swapped = [[c[1][1], c[1][0]], [c[0][1], c[0][0]]];
            let a = metrics_from_confusion(&c).unwrap();
            let b = metrics_from_confusion(&swapped).unwrap();
            assert!((a.f1 - b.f1).abs() < 1e-9);
            assert!((a.recall - b.recall).abs() < 1e-9);
            assert!((a.accuracy - b.accuracy).abs() < 1e-9);
        }
    }

    #[test]
    fn epoch_csv_has_header_and_rows() {
        let log = vec![EpochStats {
            epoch: 1,
            train_loss: 0.5,
            val_accuracy: 90.0,
            val_recall: 88.0,
            val_f1: 89.0,
        }];
        let csv = epoch_log_csv(&log);
        assert!(csv.starts_with("epoch,train_loss,val_accuracy,val_recall,val_f1\n"));
        assert!(csv.contains("1,0.5,90,88,89"));
    }
}
