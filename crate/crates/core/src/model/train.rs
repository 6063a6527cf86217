use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::model::{
    adam_step, backward, forward, sparse_categorical_crossentropy, AdamState, ModelConfig, ModelParams, TrainConfig,
};
use crate::numerics::{Mat, Rng};

/// Rows per inference-mode forward pass in [`evaluate`] and [`predict_batch`].
const EVAL_CHUNK: usize = 256;

/// Per-epoch metrics. Training loss and accuracy are the running values
/// from training-mode (dropout on) mini-batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().position(|&y| y >= num_classes) {
        Some(r) => Err(Error::data(format!(
            "row {r}: label {} outside [0, {num_classes})",
            labels[r]
        ))),
        None => Ok(()),
    }
}

/// One Adam step on `(batch, labels)`; returns the batch loss and the
/// number of correct training-mode predictions.
pub fn train_step(
    params: &mut ModelParams,
    config: &ModelConfig,
    state: &mut AdamState<ModelParams>,
    batch: &Mat,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    let (probs, cache) = forward(params, config, batch, true, rng)?;
    let (loss, d_logits) = sparse_categorical_crossentropy(&probs, labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let correct = (0..probs.rows()).filter(|&r| argmax(probs.row(r)) == labels[r]).count();
    let grads = backward(params, config, &cache, &d_logits)?;
    adam_step(params, &grads, state)?;
    Ok((loss, correct))
}

fn gather(features: &Mat, idx: &[usize]) -> Mat {
    let mut data = Vec::with_capacity(idx.len() * features.cols());
    for &i in idx {
        data.extend_from_slice(features.row(i));
    }
    Mat::new(idx.len(), features.cols(), data).expect("gather shape")
}

/// Inference-mode mean loss and accuracy over a labeled dataset.
pub fn evaluate(params: &ModelParams, config: &ModelConfig, ds: &Dataset) -> Result<(f64, f64)> {
    let labels = ds.require_labels()?;
    if ds.is_empty() {
        return Err(Error::data("cannot evaluate an empty dataset"));
    }
    check_labels(labels, config.num_classes)?;
    let mut rng = Rng::new(0);
    let mut total = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (probs, _) = forward(params, config, &gather(&ds.features, chunk), false, &mut rng)?;
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (loss, _) = sparse_categorical_crossentropy(&probs, &y)?;
        total += loss * chunk.len() as f64;
        correct += (0..probs.rows()).filter(|&r| argmax(probs.row(r)) == y[r]).count();
    }
    Ok((total / ds.len() as f64, correct as f64 / ds.len() as f64))
}

pub fn predict_batch(params: &ModelParams, config: &ModelConfig, features: &Mat) -> Result<Vec<Prediction>> {
    let mut rng = Rng::new(0);
    let idx: Vec<usize> = (0..features.rows()).collect();
    let mut out = Vec::with_capacity(features.rows());
    if features.rows() == 0 && features.cols() != config.input_features {
        return Err(Error::shape(format!(
            "model expects {} features per row, got {}",
            config.input_features,
            features.cols()
        )));
    }
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (probs, _) = forward(params, config, &gather(features, chunk), false, &mut rng)?;
        for r in 0..probs.rows() {
            let p = probs.row(r).to_vec();
            out.push(Prediction {
                class: argmax(&p),
                probs: p,
            });
        }
    }
    Ok(out)
}

pub fn predict(params: &ModelParams, config: &ModelConfig, features: &[f64]) -> Result<Prediction> {
    let m = Mat::new(1, features.len(), features.to_vec())?;
    Ok(predict_batch(params, config, &m)?.remove(0))
}

pub fn train(ds: &Dataset, mc: &ModelConfig, tc: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with(ds, mc, tc, |_, _| {})
}

/// [`train`], calling `observer` after every epoch.
///
/// With a non-zero validation fraction, a stratified validation split is
/// held out (seeded by `tc.seed`) and scored after each epoch.
pub fn train_with(
    ds: &Dataset,
    mc: &ModelConfig,
    tc: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord, &ModelParams),
) -> Result<(ModelParams, TrainHistory)> {
    mc.validate()?;
    tc.validate()?;
    if ds.is_empty() {
        return Err(Error::data("cannot train on an empty dataset"));
    }
    let labels = ds.require_labels()?;
    check_labels(labels, mc.num_classes)?;
    if ds.width() != mc.input_features {
        return Err(Error::shape(format!(
            "model expects {} features, dataset `{}` has {}",
            mc.input_features,
            ds.provenance,
            ds.width()
        )));
    }
    let (train_ds, val_ds) = if tc.validation_fraction > 0.0 {
        let (t, v) = stratified_split(ds, tc.validation_fraction, tc.seed)?;
        (t, Some(v))
    } else {
        (ds.clone(), None)
    };
    let train_labels = train_ds.require_labels()?;

    let mut params = ModelParams::build(mc)?;
    let mut state = AdamState::new(&params, tc.learning_rate);
    let mut shuffle_rng = Rng::new(tc.seed);
    let mut dropout_rng = shuffle_rng.fork();
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=tc.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(tc.batch_size) {
            let batch = gather(&train_ds.features, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let (loss, c) = train_step(&mut params, mc, &mut state, &batch, &y, &mut dropout_rng)?;
            loss_sum += loss * chunk.len() as f64;
            correct += c;
        }
        let n = train_ds.len() as f64;
        let (val_loss, val_acc) = match &val_ds {
            Some(v) => {
                let (l, a) = evaluate(&params, mc, v)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        observer(&rec, &params);
        history.epochs.push(rec);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::QueryMode;

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax(&[0.1, 0.2, 0.4, 0.2, 0.1]), 2);
        assert_eq!(argmax(&[0.1, 0.3, 0.1, 0.3, 0.2]), 1);
    }

    fn toy(n: usize, cfg: &ModelConfig, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let data = (0..n * cfg.input_features).map(|_| rng.normal()).collect();
        let labels = (0..n).map(|i| i % cfg.num_classes).collect();
        Dataset::new(Mat::new(n, cfg.input_features, data).unwrap(), Some(labels), "toy").unwrap()
    }

    #[test]
    fn predict_agrees_with_forward() {
        let cfg = ModelConfig::tiny(QueryMode::Final);
        let p = ModelParams::build(&cfg).unwrap();
        let ds = toy(7, &cfg, 1);
        let (probs, _) = forward(&p, &cfg, &ds.features, false, &mut Rng::new(9)).unwrap();
        let preds = predict_batch(&p, &cfg, &ds.features).unwrap();
        for (r, pr) in preds.iter().enumerate() {
            assert_eq!(pr.probs, probs.row(r));
            assert_eq!(pr.class, argmax(probs.row(r)));
        }
        assert!(matches!(predict(&p, &cfg, &[0.0; 5]), Err(Error::Shape(_))));
    }

    #[test]
    fn training_is_deterministic_and_records_each_epoch() {
        let cfg = ModelConfig::tiny(QueryMode::All);
        let ds = toy(30, &cfg, 2);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            validation_fraction: 0.2,
            ..TrainConfig::default()
        };
        let (p1, h1) = train(&ds, &cfg, &tc).unwrap();
        let (p2, h2) = train(&ds, &cfg, &tc).unwrap();
        assert_eq!(h1.len(), 3);
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert!(h1.epochs.iter().all(|e| e.val_acc.is_some()));
    }

    #[test]
    fn empty_and_mislabeled_rejected() {
        let cfg = ModelConfig::tiny(QueryMode::Final);
        let tc = TrainConfig::default();
        assert!(matches!(
            train(&toy(5, &cfg, 0).subset(&[]), &cfg, &tc),
            Err(Error::Data(_))
        ));
        let mut bad = toy(6, &cfg, 0);
        bad.labels.as_mut().unwrap()[4] = 4;
        assert!(matches!(train(&bad, &cfg, &tc), Err(Error::Data(m)) if m.contains("row 4")));
    }
}
