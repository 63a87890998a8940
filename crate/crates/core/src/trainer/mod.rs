//! Mini-batch training, best-epoch selection and frozen inference.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod model;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use config::{TrainConfig, ValMetric, Variant};
pub use model::{BatchLoss, Model, Predictions, Stage};

use crate::encoder::GraphInput;
use crate::eval::{accuracy, roc_auc};
use crate::graphdata::{Dataset, Graph};
use crate::protobank::PrototypeBank;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss, weighted by batch size.
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Instrumentation callbacks fired while training.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Stage { epoch: usize, batch: usize, stage: Stage },
    BatchEnd {
        epoch: usize,
        batch: usize,
        loss: &'a BatchLoss,
        bank: Option<&'a PrototypeBank>,
    },
    EpochEnd(&'a EpochRecord),
}

pub trait TrainObserver {
    fn on_event(&mut self, event: &TrainEvent<'_>);
}

impl TrainObserver for () {
    fn on_event(&mut self, _: &TrainEvent<'_>) {}
}

impl<F: FnMut(&TrainEvent<'_>)> TrainObserver for F {
    fn on_event(&mut self, event: &TrainEvent<'_>) {
        self(event)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model state after the epoch with the best validation metric.
    pub best: Checkpoint,
    pub log: Vec<EpochRecord>,
    /// Total true-class probabilities clamped in the classification loss.
    pub clamped: usize,
}

fn feature_dim(graphs: &[&[Graph]]) -> Result<usize> {
    let mut dim = None;
    for g in graphs.iter().flat_map(|s| s.iter()) {
        match dim {
            None => dim = Some(g.feature_dim()),
            Some(d) if d != g.feature_dim() => {
                return Err(Error::Invalid(format!(
                    "inconsistent node feature widths {d} and {}",
                    g.feature_dim()
                )))
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::Invalid("no graphs".into()))
}

/// Scores a model on `graphs` with the configured validation metric.
pub fn validation_score(model: &Model, graphs: &[GraphInput], labels: &[usize]) -> Result<f64> {
    let preds = model.predict(graphs)?;
    match model.config.val_metric {
        ValMetric::Accuracy => accuracy(&preds.argmax(), labels),
        ValMetric::RocAuc => {
            if model.num_classes != 2 {
                return Err(Error::Config("ROC-AUC validation needs a binary task".into()));
            }
            let scores: Vec<f64> = (0..preds.probs.rows()).map(|r| preds.probs.get(r, 1)).collect();
            let positive: Vec<bool> = labels.iter().map(|y| *y == 1).collect();
            roc_auc(&scores, &positive)
        }
    }
}

/// Trains on `data.train`, selecting the epoch with the best metric on
/// `data.val` (earliest on ties).
pub fn train(config: &TrainConfig, data: &Dataset, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Invalid("validation split is empty".into()));
    }
    let in_dim = feature_dim(&[&data.train, &data.val])?;
    let classes = data.num_classes().max(2);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(config, in_dim, classes, &mut rng)?;
    let mut adam = Adam::new(config.lr, &model.store);

    let train_in: Vec<GraphInput> = data.train.iter().map(GraphInput::from).collect();
    let train_y: Vec<usize> = data.train.iter().map(|g| g.label).collect();
    let val_in: Vec<GraphInput> = data.val.iter().map(GraphInput::from).collect();
    let val_y: Vec<usize> = data.val.iter().map(|g| g.label).collect();

    let mut order: Vec<usize> = (0..train_in.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut clamped = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let graphs: Vec<GraphInput> = chunk.iter().map(|&i| train_in[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (grads, loss) = model.batch_gradients(&graphs, &labels, |stage| {
                observer.on_event(&TrainEvent::Stage { epoch, batch, stage })
            })?;
            adam.step(&mut model.store, &grads)?;
            observer.on_event(&TrainEvent::Stage {
                epoch,
                batch,
                stage: Stage::ParamUpdate,
            });
            observer.on_event(&TrainEvent::BatchEnd {
                epoch,
                batch,
                loss: &loss,
                bank: model.bank.as_ref(),
            });
            loss_sum += loss.total * chunk.len() as f64;
            clamped += loss.clamped;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_in.len() as f64,
            val_metric: validation_score(&model, &val_in, &val_y)?,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, val {:.4}",
            record.train_loss,
            record.val_metric
        );
        observer.on_event(&TrainEvent::EpochEnd(&record));
        if best.as_ref().map_or(true, |(score, _)| record.val_metric > *score) {
            best = Some((record.val_metric, Checkpoint::capture(&model, &rng, epoch)));
        }
        log.push(record);
    }
    let (_, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, log, clamped })
}

/// Class probabilities for `graphs` with frozen prototypes.
pub fn infer(checkpoint: &Checkpoint, graphs: &[Graph]) -> Result<Predictions> {
    let inputs: Vec<GraphInput> = graphs.iter().map(GraphInput::from).collect();
    checkpoint.model.predict(&inputs)
}
