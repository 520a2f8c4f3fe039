//! End-to-end trainable model: toy token encoder, two hypergraph encoder
//! stacks, fusion transformer, prediction and global-local similarity heads,
//! and the loss stack.

mod blocks;
mod forward;
mod trainer;

pub use forward::{
    attr_weights, encode_image, forward_batch, gl_similarity, labels_to_tensor, loss_cls,
    loss_gl, predict, total_loss, BatchInput, BatchOutput, ForwardMode, PROB_CLAMP,
};
pub use trainer::{
    evaluate_scores, train_epoch, EpochStats, PreparedData, TrainRecord, Trainer,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::rng::GaussianSource;
use crate::dataio::Region;
use crate::encoders::{EncoderVariant, UniLayerParams, DEFAULT_GAT_SLOPE, DEFAULT_GCN2_ALPHA,
    DEFAULT_GCN2_LAMBDA};
use crate::tensor::{
    load_checkpoint, save_checkpoint, AdamWHyper, Gradients, Tape, Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encoder(#[from] crate::encoders::EncoderError),
    #[error(transparent)]
    Hypergraph(#[from] crate::hypergraph::HypergraphError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::tensor::CheckpointError),
}

/// Model and training hyperparameters. `d` must match the dataset embedding
/// width and be divisible by `heads`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub encoder_layers: usize,
    pub fusion_layers: usize,
    pub heads: usize,
    pub hypergraph_layers: usize,
    pub variant: EncoderVariant,
    pub tau: f64,
    pub k_assoc: usize,
    pub context_samples: usize,
    /// Trade-off weight on the global-local similarity loss.
    pub alpha: f64,
    pub lr: f64,
    /// Per-epoch multiplicative decay: lr_e = lr * (1 - lr_decay)^e.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub use_local_hg: bool,
    pub use_global_hg: bool,
    /// Knowledge-graph edge weighting of global hyperedges (experimental).
    pub use_kg_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            encoder_layers: 2,
            fusion_layers: 2,
            heads: 4,
            hypergraph_layers: 2,
            variant: EncoderVariant::UniGcn2,
            tau: crate::hypergraph::DEFAULT_TAU,
            k_assoc: crate::hypergraph::DEFAULT_K_ASSOC,
            context_samples: crate::kgraph::DEFAULT_CONTEXT_SAMPLES,
            alpha: 1.0,
            lr: 7e-4,
            lr_decay: 1e-4,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 100,
            use_local_hg: true,
            use_global_hg: true,
            use_kg_weights: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d", self.d),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.d % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "d = {} must be divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if !(-1.0..1.0).contains(&self.tau) {
            return Err(ModelError::Config(format!("tau must lie in [-1, 1), got {}", self.tau)));
        }
        if self.alpha < 0.0 {
            return Err(ModelError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.k_assoc == 0 || self.context_samples == 0 {
            return Err(ModelError::Config(
                "k_assoc and context_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn adamw_hyper(&self) -> AdamWHyper {
        AdamWHyper {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWHyper::default()
        }
    }

    /// Learning rate after `epoch` completed epochs.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * (1.0 - self.lr_decay).powi(epoch as i32)
    }
}

/// Handle into the parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Flat, ordered store of named trainable tensors. The order is fixed at
/// construction and shared by the optimizer state and the checkpoint layout.
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    fn add(&mut self, name: String, tensor: Tensor) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push((name, tensor.requires_grad()));
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Register every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        BoundParams {
            bound: self.entries.iter().map(|(_, t)| tape.leaf(t)).collect(),
        }
    }

    /// Per-parameter gradients in store order (None where no gradient flowed).
    pub fn collect_grads<'g>(
        &self,
        bound: &BoundParams,
        grads: &'g Gradients,
    ) -> Vec<Option<&'g Tensor>> {
        bound.bound.iter().map(|t| grads.wrt(t)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }
}

/// Tape-bound view of the store for one forward/backward pass.
pub struct BoundParams {
    bound: Vec<Tensor>,
}

impl BoundParams {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.bound[id.0]
    }
}

/// One transformer block's parameter handles.
#[derive(Debug, Clone)]
pub(crate) struct BlockParams {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

/// One hypergraph layer's parameter handles (variant extras optional).
#[derive(Debug, Clone)]
pub(crate) struct HgLayerIds {
    pub weight: ParamId,
    pub gin_epsilon: Option<ParamId>,
    pub gat_attention: Option<ParamId>,
    pub layer_index: usize,
}

impl HgLayerIds {
    /// Materialize layer parameters from the bound store.
    pub fn bind(&self, bound: &BoundParams, variant: EncoderVariant) -> UniLayerParams {
        let weight = bound.get(self.weight).clone();
        match variant {
            EncoderVariant::UniGin => UniLayerParams::unigin(
                weight,
                bound.get(self.gin_epsilon.expect("gin layer has epsilon")).clone(),
            ),
            EncoderVariant::UniGcn => UniLayerParams::unigcn(weight),
            EncoderVariant::UniGat => UniLayerParams::unigat(
                weight,
                bound
                    .get(self.gat_attention.expect("gat layer has attention"))
                    .clone(),
                DEFAULT_GAT_SLOPE,
            ),
            EncoderVariant::UniGcn2 => UniLayerParams::unigcn2(
                weight,
                DEFAULT_GCN2_ALPHA,
                self.layer_index,
                DEFAULT_GCN2_LAMBDA,
            ),
        }
    }
}

/// The number of local CLS tokens (one per region, body included).
pub const N_REGION_TOKENS: usize = Region::ALL.len();

/// The end-to-end model: parameters plus the layout needed to run a forward
/// pass. Frozen dataset features (patches, text) are passed in per batch.
pub struct Model {
    pub config: ModelConfig,
    pub(crate) store: ParamStore,
    pub(crate) cls_g: ParamId,
    pub(crate) cls_locals: ParamId,
    pub(crate) posenc: ParamId,
    pub(crate) encoder_blocks: Vec<BlockParams>,
    pub(crate) fusion_blocks: Vec<BlockParams>,
    pub(crate) local_hg_layers: Vec<HgLayerIds>,
    pub(crate) global_hg_layers: Vec<HgLayerIds>,
    pub(crate) head_w: ParamId,
    pub(crate) head_b: ParamId,
    pub n_patches: usize,
}

impl Model {
    /// Build a model with seeded Gaussian init (scale 1 / sqrt(fan_in)).
    pub fn new(config: ModelConfig, n_patches: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d;
        let mut store = ParamStore::new();
        let mut src = GaussianSource::seed_from_u64(seed);

        // Weight matrices use fan_in = input rows; token embeddings use d.
        fn gauss_with_fan_in(
            store: &mut ParamStore,
            src: &mut GaussianSource,
            name: String,
            rows: usize,
            cols: usize,
            fan_in: usize,
        ) -> ParamId {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols).map(|_| scale * src.next()).collect();
            store.add(name, Tensor::new(rows, cols, data).expect("shape consistent"))
        }
        fn gauss(
            store: &mut ParamStore,
            src: &mut GaussianSource,
            name: String,
            rows: usize,
            cols: usize,
        ) -> ParamId {
            gauss_with_fan_in(store, src, name, rows, cols, rows)
        }
        fn zeros(store: &mut ParamStore, name: String, rows: usize, cols: usize) -> ParamId {
            store.add(name, Tensor::zeros(rows, cols))
        }
        fn ones(store: &mut ParamStore, name: String, cols: usize) -> ParamId {
            store.add(name, Tensor::ones(1, cols))
        }
        fn block(
            store: &mut ParamStore,
            src: &mut GaussianSource,
            d: usize,
            prefix: &str,
        ) -> BlockParams {
            let hidden = 2 * d;
            BlockParams {
                ln1_gamma: ones(store, format!("{prefix}.ln1_gamma"), d),
                ln1_beta: zeros(store, format!("{prefix}.ln1_beta"), 1, d),
                wq: gauss(store, src, format!("{prefix}.wq"), d, d),
                bq: zeros(store, format!("{prefix}.bq"), 1, d),
                wk: gauss(store, src, format!("{prefix}.wk"), d, d),
                bk: zeros(store, format!("{prefix}.bk"), 1, d),
                wv: gauss(store, src, format!("{prefix}.wv"), d, d),
                bv: zeros(store, format!("{prefix}.bv"), 1, d),
                wo: gauss(store, src, format!("{prefix}.wo"), d, d),
                bo: zeros(store, format!("{prefix}.bo"), 1, d),
                ln2_gamma: ones(store, format!("{prefix}.ln2_gamma"), d),
                ln2_beta: zeros(store, format!("{prefix}.ln2_beta"), 1, d),
                ffn_w1: gauss(store, src, format!("{prefix}.ffn_w1"), d, hidden),
                ffn_b1: zeros(store, format!("{prefix}.ffn_b1"), 1, hidden),
                ffn_w2: gauss(store, src, format!("{prefix}.ffn_w2"), hidden, d),
                ffn_b2: zeros(store, format!("{prefix}.ffn_b2"), 1, d),
            }
        }

        let seq_len = 1 + N_REGION_TOKENS + n_patches;
        let cls_g = gauss_with_fan_in(&mut store, &mut src, "tokens.cls_g".into(), 1, d, d);
        let cls_locals = gauss_with_fan_in(
            &mut store,
            &mut src,
            "tokens.cls_locals".into(),
            N_REGION_TOKENS,
            d,
            d,
        );
        let posenc =
            gauss_with_fan_in(&mut store, &mut src, "tokens.posenc".into(), seq_len, d, d);

        let encoder_blocks: Vec<BlockParams> = (0..config.encoder_layers)
            .map(|b| block(&mut store, &mut src, d, &format!("enc.b{b}")))
            .collect();
        let fusion_blocks: Vec<BlockParams> = (0..config.fusion_layers)
            .map(|b| block(&mut store, &mut src, d, &format!("fus.b{b}")))
            .collect();

        let variant = config.variant;
        let hg_stack = |store: &mut ParamStore, src: &mut GaussianSource, prefix: &str| {
            (0..config.hypergraph_layers)
                .map(|l| {
                    let weight = gauss(store, src, format!("{prefix}.l{l}.w"), d, d);
                    let gin_epsilon = (variant == EncoderVariant::UniGin)
                        .then(|| store.add(format!("{prefix}.l{l}.eps"), Tensor::scalar(0.0)));
                    let gat_attention = (variant == EncoderVariant::UniGat).then(|| {
                        let scale = 1.0 / (2.0 * d as f64).sqrt();
                        let data = (0..2 * d).map(|_| scale * src.next()).collect();
                        store.add(format!("{prefix}.l{l}.att"), Tensor::col(data))
                    });
                    HgLayerIds {
                        weight,
                        gin_epsilon,
                        gat_attention,
                        layer_index: l + 1,
                    }
                })
                .collect::<Vec<_>>()
        };
        let local_hg_layers = hg_stack(&mut store, &mut src, "hg_local");
        let global_hg_layers = hg_stack(&mut store, &mut src, "hg_global");

        let head_w = gauss(&mut store, &mut src, "head.w".into(), d, 1);
        let head_b = zeros(&mut store, "head.b".into(), 1, 1);

        Ok(Model {
            config,
            store,
            cls_g,
            cls_locals,
            posenc,
            encoder_blocks,
            fusion_blocks,
            local_hg_layers,
            global_hg_layers,
            head_w,
            head_b,
            n_patches,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn seq_len(&self) -> usize {
        1 + N_REGION_TOKENS + self.n_patches
    }

    /// Write all parameters plus a config sidecar (`<path>.json`).
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let named: Vec<(String, &Tensor)> = self
            .store
            .named()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        save_checkpoint(path, &named)?;
        let sidecar = sidecar_path(path);
        let meta = CheckpointMeta {
            config: self.config.clone(),
            n_patches: self.n_patches,
        };
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| ModelError::Config(format!("config sidecar: {e}")))?;
        std::fs::write(&sidecar, text)
            .map_err(|e| ModelError::Config(format!("{}: {e}", sidecar.display())))?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint and its config sidecar.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar)
            .map_err(|e| ModelError::Config(format!("{}: {e}", sidecar.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| ModelError::Config(format!("config sidecar: {e}")))?;
        let mut model = Model::new(meta.config, meta.n_patches, 0)?;
        let tensors = load_checkpoint(path)?;
        if tensors.len() != model.store.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                model.store.len()
            )));
        }
        for ((name, loaded), (expected_name, slot)) in
            tensors.into_iter().zip(model.store.entries.iter_mut())
        {
            if name != *expected_name {
                return Err(ModelError::Config(format!(
                    "checkpoint tensor \"{name}\" does not match expected \"{expected_name}\""
                )));
            }
            if loaded.shape() != slot.shape() {
                return Err(ModelError::Config(format!(
                    "checkpoint tensor \"{name}\" has shape {:?}, expected {:?}",
                    loaded.shape(),
                    slot.shape()
                )));
            }
            *slot = loaded.requires_grad();
        }
        Ok(model)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    os.into()
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    n_patches: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.d = 30;
        c.heads = 4;
        assert!(c.validate().is_err());
        c.heads = 5;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn init_is_seeded() {
        let config = ModelConfig {
            d: 8,
            heads: 2,
            ..Default::default()
        };
        let a = Model::new(config.clone(), 4, 42).unwrap();
        let b = Model::new(config.clone(), 4, 42).unwrap();
        let c = Model::new(config, 4, 43).unwrap();
        for ((_, ta), (_, tb)) in a.store.named().zip(b.store.named()) {
            assert_eq!(ta.data(), tb.data());
        }
        let differs = a
            .store
            .named()
            .zip(c.store.named())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs);
    }

    #[test]
    fn checkpoint_round_trip() {
        let config = ModelConfig {
            d: 8,
            heads: 2,
            encoder_layers: 1,
            fusion_layers: 1,
            hypergraph_layers: 1,
            ..Default::default()
        };
        let model = Model::new(config, 4, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kgpc");
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        for ((na, ta), (nb, tb)) in model.store.named().zip(loaded.store.named()) {
            assert_eq!(na, nb);
            // f32 storage: loaded values are the f32-rounded originals
            for (a, b) in ta.data().iter().zip(tb.data()) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
    }
}
