//! Training and evaluation loops. One replica processes its batches
//! sequentially so optimizer state stays deterministic.

use serde::{Deserialize, Serialize};

use super::forward::{
    attr_weights, forward_batch, labels_to_tensor, loss_cls, loss_gl, total_loss, BatchInput,
    ForwardMode,
};
use super::{Model, ModelError};
use crate::dataio::rng::Xoshiro256;
use crate::dataio::{Dataset, RegionMap};
use crate::hypergraph::{partition_patches, PatchPartition};
use crate::kgraph::{KnowledgeGraph, SquareMatrix};
use crate::tensor::{AdamWState, Tape, Tensor};

/// A dataset split prepared for the model: per-image patch blocks, labels,
/// and the shared frozen structures.
pub struct PreparedData {
    pub patch_blocks: Vec<Tensor>,
    pub label_rows: Vec<Vec<u8>>,
    pub text: Tensor,
    pub partition: PatchPartition,
    pub region_map: RegionMap,
    pub attr_names: Vec<String>,
    /// Per-attribute loss weights from the training-split frequencies.
    pub weights: Tensor,
    pub atilde: Option<SquareMatrix>,
}

impl PreparedData {
    /// Prepare images `[lo, hi)` of a dataset. Frequencies (and therefore
    /// loss weights) come from the knowledge graph, which the caller builds
    /// on the training split.
    pub fn prepare(
        dataset: &Dataset,
        kg: &KnowledgeGraph,
        lo: usize,
        hi: usize,
        use_kg_weights: bool,
    ) -> Result<Self, ModelError> {
        if lo >= hi || hi > dataset.labels.n_images() {
            return Err(ModelError::Config(format!(
                "split [{lo}, {hi}) out of range for {} images",
                dataset.labels.n_images()
            )));
        }
        let grid = dataset.patches.grid.ok_or_else(|| {
            ModelError::Config("dataset patches missing grid dims".into())
        })?;
        let partition = partition_patches(grid, &dataset.regions)?;
        let mut patch_blocks = Vec::with_capacity(hi - lo);
        let mut label_rows = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            patch_blocks.push(
                dataset
                    .patches
                    .image_patches(i)
                    .map_err(|e| ModelError::Config(e.to_string()))?,
            );
            label_rows.push(dataset.labels.row(i).to_vec());
        }
        Ok(PreparedData {
            patch_blocks,
            label_rows,
            text: dataset.text.data().clone(),
            partition,
            region_map: dataset.regions.clone(),
            attr_names: dataset.labels.attr_names.clone(),
            weights: attr_weights(&kg.frequencies()),
            atilde: use_kg_weights.then(|| kg.edge_weights.clone()),
        })
    }

    pub fn n_images(&self) -> usize {
        self.patch_blocks.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.attr_names.len()
    }

    fn batch_input(&self, indices: &[usize]) -> BatchInput<'_> {
        BatchInput {
            patch_blocks: indices.iter().map(|i| self.patch_blocks[*i].clone()).collect(),
            label_rows: indices.iter().map(|i| self.label_rows[*i].as_slice()).collect(),
            text: &self.text,
            partition: &self.partition,
            region_map: &self.region_map,
            attr_names: &self.attr_names,
            atilde: self.atilde.as_ref(),
        }
    }
}

/// One training-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub batch: usize,
    pub l_cls: f64,
    pub l_gl: f64,
    pub l: f64,
}

pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub records: Vec<TrainRecord>,
}

/// Optimizer state plus the persistent shuffle stream.
pub struct Trainer {
    pub optimizer: AdamWState,
    shuffle_rng: Xoshiro256,
    checked: bool,
}

impl Trainer {
    pub fn new(model: &Model, seed: u64, checked: bool) -> Self {
        Trainer {
            optimizer: AdamWState::new(&model.params().tensors(), model.config.adamw_hyper()),
            shuffle_rng: Xoshiro256::seed_from_u64(seed),
            checked,
        }
    }
}

/// One pass over the training split: shuffled batches, forward, losses,
/// backward, AdamW step. Any module error aborts with the batch index.
pub fn train_epoch(
    model: &mut Model,
    data: &PreparedData,
    trainer: &mut Trainer,
    epoch: usize,
) -> Result<EpochStats, ModelError> {
    let n = data.n_images();
    let mut order: Vec<usize> = (0..n).collect();
    trainer.shuffle_rng.shuffle(&mut order);
    let lr = model.config.lr_at_epoch(epoch);
    let alpha = model.config.alpha;

    let mut records = Vec::new();
    for (batch_idx, chunk) in order.chunks(model.config.batch_size).enumerate() {
        match train_batch(model, data, trainer, chunk, epoch, batch_idx, lr, alpha) {
            Ok(record) => records.push(record),
            Err(e) => {
                return Err(ModelError::Config(format!(
                    "epoch {epoch} aborted at batch {batch_idx}: {e}"
                )))
            }
        }
    }
    let mean_loss = records.iter().map(|r| r.l).sum::<f64>() / records.len().max(1) as f64;
    Ok(EpochStats {
        epoch,
        mean_loss,
        records,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &mut Model,
    data: &PreparedData,
    trainer: &mut Trainer,
    chunk: &[usize],
    epoch: usize,
    batch_idx: usize,
    lr: f64,
    alpha: f64,
) -> Result<TrainRecord, ModelError> {
    let tape = Tape::with_checked(trainer.checked);
    let bound = model.params().bind(&tape);
    let input = data.batch_input(chunk);
    let out = forward_batch(model, &tape, &bound, &input, ForwardMode::Train)?;
    let targets = labels_to_tensor(&input.label_rows);
    let l_cls = loss_cls(&tape, &out.scores, &targets, &data.weights)?;
    let l_gl = loss_gl(&tape, &out.p_gl, &targets)?;
    let total = total_loss(&tape, &l_cls, &l_gl, alpha)?;
    let grads = tape.backward(&total)?;
    let record = TrainRecord {
        epoch,
        batch: batch_idx,
        l_cls: l_cls.item(),
        l_gl: l_gl.item(),
        l: total.item(),
    };
    let grad_list = model.store.collect_grads(&bound, &grads);
    trainer
        .optimizer
        .step(&mut model.store.tensors_mut(), &grad_list, Some(lr))?;
    Ok(record)
}

/// Inference scores over a split, batched in dataset order. The global
/// hypergraph association comes from top-k CLS/text cosine similarity, not
/// from labels.
pub fn evaluate_scores(
    model: &Model,
    data: &PreparedData,
    checked: bool,
) -> Result<Tensor, ModelError> {
    let n = data.n_images();
    let m = data.n_attrs();
    let mut all = Vec::with_capacity(n * m);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(model.config.batch_size) {
        let tape = Tape::with_checked(checked);
        let bound = model.params().bind(&tape);
        let input = data.batch_input(chunk);
        let out = forward_batch(model, &tape, &bound, &input, ForwardMode::Eval)?;
        all.extend_from_slice(out.scores.data());
    }
    Ok(Tensor::new(n, m, all)?)
}
