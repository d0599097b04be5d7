//! Mini-batch training loop: Adam over mean batch loss, per-epoch
//! reshuffling, and delayed unfreezing of the shared embedding table.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{ModelError, SqlNetModel};
use crate::exec::Table;
use crate::ingest::Example;
use crate::nn::Adam;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// First epoch (0-based) at which the embedding table trains, when
    /// `train_embeddings` is set.
    pub unfreeze_epoch: usize,
    pub train_embeddings: bool,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            epochs: 200,
            batch_size: 64,
            lr: 0.001,
            seed: 1,
            unfreeze_epoch: 100,
            train_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss per example over the epoch, under the weights as they
    /// evolved during the epoch.
    pub mean_loss: f64,
}

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("training example {example} references missing table {table:?}")]
    MissingTable { example: usize, table: String },
    #[error("empty training set")]
    NoExamples,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}, example {example}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        example: usize,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Trains in place. `on_epoch` runs after each epoch with the stats so far;
/// returning `ControlFlow::Break` stops early (the completed epoch is kept).
/// Deterministic for a fixed seed, options, and input order.
pub fn train(
    model: &mut SqlNetModel,
    examples: &[Example],
    tables: &BTreeMap<String, Table>,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats, &SqlNetModel) -> ControlFlow<()>,
) -> Result<Vec<EpochStats>, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    if opts.batch_size == 0 {
        return Err(TrainError::ZeroBatchSize);
    }
    let schemas: Vec<&Table> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            tables.get(&ex.table_id).ok_or(TrainError::MissingTable {
                example: i,
                table: ex.table_id.clone(),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(opts.lr, &model.store);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let unfrozen = opts.train_embeddings && epoch >= opts.unfreeze_epoch;
        let embedding = model.embedding;
        model.store.set_trainable(embedding, unfrozen);

        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(opts.batch_size).enumerate() {
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &ex_idx in batch {
                let (mut tape, loss, breakdown) =
                    model.training_loss(&examples[ex_idx], &schemas[ex_idx].schema)?;
                if !breakdown.total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        example: ex_idx,
                        value: breakdown.total,
                    });
                }
                tape.backward_scaled(loss, scale, &mut model.store)
                    .map_err(ModelError::from)?;
                epoch_loss += breakdown.total;
            }
            adam.step(&mut model.store);
        }

        let stats = EpochStats {
            epoch,
            mean_loss: epoch_loss / examples.len() as f64,
        };
        log.push(stats);
        if on_epoch(log.last().expect("just pushed"), model).is_break() {
            break;
        }
    }
    Ok(log)
}
