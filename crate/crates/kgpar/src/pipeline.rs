//! The command pipeline behind the `kgpar` binary: synthetic data
//! generation, knowledge-graph and hypergraph construction, training,
//! evaluation, inspection, and ablation sweeps. Everything here is plain
//! library code so tests can drive the commands without spawning processes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::rng::SplitMix64;
use crate::dataio::{
    generate_synthetic, load_dataset, pooled_image_cls, save_dataset, Dataset, RegionMap,
    SyntheticSpec,
};
use crate::encoders::EncoderVariant;
use crate::hypergraph::{build_global, build_local, dump_json, partition_patches};
use crate::kgraph::{build_kg, save_kg, KnowledgeGraph};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{
    evaluate_scores, train_epoch, Model, ModelConfig, PreparedData, TrainRecord, Trainer,
};

/// Decision threshold for turning scores into predictions.
pub const SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit code: 2 for config errors, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
        }
    }
}

impl From<crate::dataio::DataError> for PipelineError {
    fn from(e: crate::dataio::DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<crate::kgraph::KgError> for PipelineError {
    fn from(e: crate::kgraph::KgError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<crate::hypergraph::HypergraphError> for PipelineError {
    fn from(e: crate::hypergraph::HypergraphError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<crate::model::ModelError> for PipelineError {
    fn from(e: crate::model::ModelError) -> Self {
        match e {
            crate::model::ModelError::Config(msg) => PipelineError::Config(msg),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<crate::metrics::MetricsError> for PipelineError {
    fn from(e: crate::metrics::MetricsError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

/// Sweep axes mirroring the ablation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Variant,
    K,
    Tau,
    Regional,
}

impl std::str::FromStr for SweepAxis {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "variant" => Ok(SweepAxis::Variant),
            "k" => Ok(SweepAxis::K),
            "tau" => Ok(SweepAxis::Tau),
            "regional" => Ok(SweepAxis::Regional),
            other => Err(PipelineError::Config(format!(
                "unknown sweep axis \"{other}\" (expected variant|k|tau|regional)"
            ))),
        }
    }
}

/// Full run configuration, loaded from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset manifest; omit when `synthetic` describes the data instead.
    pub manifest: Option<PathBuf>,
    /// Synthetic dataset recipe used by `gen-synth` (and by commands that
    /// run on a previously generated dataset in `out_dir`).
    pub synthetic: Option<SyntheticSpec>,
    pub model: ModelConfig,
    /// Leading images used for training; the rest evaluate. Defaults to all.
    pub train_count: Option<usize>,
    /// `false` collapses the region map to body-only (non-regional mode).
    pub regional: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Axis for the `sweep` subcommand.
    pub sweep_axis: Option<SweepAxis>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            synthetic: None,
            model: ModelConfig::default(),
            train_count: None,
            regional: true,
            seed: 0,
            out_dir: PathBuf::from("out"),
            sweep_axis: None,
        }
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Resolve the dataset: explicit manifest first, otherwise the dataset
/// generated into `out_dir` by `gen-synth`.
fn resolve_dataset(config: &RunConfig) -> Result<Dataset, PipelineError> {
    let manifest = match &config.manifest {
        Some(path) => path.clone(),
        None => config.out_dir.join("dataset").join("manifest.json"),
    };
    if !manifest.exists() {
        return Err(PipelineError::Config(format!(
            "dataset manifest {} not found (run gen-synth or set \"manifest\")",
            manifest.display()
        )));
    }
    let mut dataset = load_dataset(&manifest)?;
    if !config.regional {
        dataset.regions = RegionMap::non_regional(&dataset.labels.attr_names);
    }
    Ok(dataset)
}

fn train_split(config: &RunConfig, dataset: &Dataset) -> Result<usize, PipelineError> {
    let n = dataset.labels.n_images();
    let count = config.train_count.unwrap_or(n);
    if count == 0 || count > n {
        return Err(PipelineError::Config(format!(
            "train_count {count} out of range for {n} images"
        )));
    }
    Ok(count)
}

/// Knowledge graph over the training split only.
fn kg_on_train_split(
    dataset: &Dataset,
    train_count: usize,
    k: usize,
) -> Result<KnowledgeGraph, PipelineError> {
    let labels = dataset
        .labels
        .slice(0, train_count)
        .map_err(PipelineError::from)?;
    let cls_full = pooled_image_cls(&dataset.patches)?;
    let cls_rows = cls_full
        .data()
        .data()
        .chunks(cls_full.dim())
        .take(train_count)
        .flatten()
        .copied()
        .collect::<Vec<f64>>();
    let cls = crate::dataio::EmbeddingTable::new(
        labels.image_ids.clone(),
        crate::dataio::EmbeddingKind::ImageCls,
        None,
        crate::tensor::Tensor::new(train_count, cls_full.dim(), cls_rows)
            .map_err(|e| PipelineError::Data(e.to_string()))?,
    )?;
    Ok(build_kg(&labels, &dataset.text, &cls, &dataset.regions, k)?)
}

// ── Subcommands ─────────────────────────────────────────────────────────

/// `gen-synth`: write the synthetic dataset plus manifest into
/// `out_dir/dataset/`.
pub fn gen_synth(config: &RunConfig) -> Result<PathBuf, PipelineError> {
    let mut spec = config
        .synthetic
        .clone()
        .ok_or_else(|| PipelineError::Config("gen-synth needs a \"synthetic\" section".into()))?;
    spec.seed = config.seed;
    let data = generate_synthetic(&spec)?;
    let dir = config.out_dir.join("dataset");
    Ok(save_dataset(&data, &dir)?)
}

/// `build-kg`: knowledge graph JSON from the training split.
pub fn build_kg_cmd(config: &RunConfig) -> Result<PathBuf, PipelineError> {
    let dataset = resolve_dataset(config)?;
    let train_count = train_split(config, &dataset)?;
    let kg = kg_on_train_split(&dataset, train_count, config.model.context_samples)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| io_err(&config.out_dir, e))?;
    let path = config.out_dir.join("kg.json");
    save_kg(&kg, &path)?;
    Ok(path)
}

/// `build-hg`: hypergraph dumps for inspection: the local hypergraph of the
/// first image (raw patch features) and the global hypergraph of the first
/// training batch.
pub fn build_hg_cmd(config: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let dataset = resolve_dataset(config)?;
    let train_count = train_split(config, &dataset)?;
    let grid = dataset
        .patches
        .grid
        .ok_or_else(|| PipelineError::Data("patch table missing grid".into()))?;
    let partition = partition_patches(grid, &dataset.regions)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| io_err(&config.out_dir, e))?;
    let mut written = Vec::new();

    let patches0 = dataset
        .patches
        .image_patches(0)
        .map_err(PipelineError::from)?;
    let local = build_local(
        &patches0,
        dataset.text.data(),
        &partition,
        &dataset.regions,
        &dataset.labels.attr_names,
        config.model.tau,
    )?;
    let local_path = config.out_dir.join("hg_local_img0.json");
    std::fs::write(&local_path, dump_json(&local)?).map_err(|e| io_err(&local_path, e))?;
    written.push(local_path);

    let b = config.model.batch_size.min(train_count);
    let cls = pooled_image_cls(&dataset.patches)?;
    let mut cls_rows = Vec::with_capacity(b * cls.dim());
    for i in 0..b {
        cls_rows.extend_from_slice(cls.row(i));
    }
    let cls_block = crate::tensor::Tensor::new(b, cls.dim(), cls_rows)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let label_rows: Vec<&[u8]> = (0..b).map(|i| dataset.labels.row(i)).collect();
    let global = build_global(&cls_block, dataset.text.data(), &label_rows)?;
    let global_path = config.out_dir.join("hg_global_batch0.json");
    std::fs::write(&global_path, dump_json(&global)?).map_err(|e| io_err(&global_path, e))?;
    written.push(global_path);
    Ok(written)
}

/// Shared train+eval path used by `train`, `eval`, and `sweep`.
/// Returns the trained model, its training log, and eval-split metrics.
pub fn train_and_evaluate(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_count: usize,
    seed: u64,
    checked: bool,
) -> Result<(Model, Vec<TrainRecord>, MetricsReport), PipelineError> {
    let d_data = dataset.patches.dim();
    if model_config.d != d_data {
        return Err(PipelineError::Config(format!(
            "model d = {} must match the dataset embedding width {d_data}",
            model_config.d
        )));
    }
    let kg = kg_on_train_split(dataset, train_count, model_config.context_samples)?;
    let train_data = PreparedData::prepare(dataset, &kg, 0, train_count, model_config.use_kg_weights)?;
    let n = dataset.labels.n_images();
    let eval_range = if train_count < n {
        (train_count, n)
    } else {
        (0, n) // no held-out images: evaluate on the training split
    };
    let eval_data =
        PreparedData::prepare(dataset, &kg, eval_range.0, eval_range.1, model_config.use_kg_weights)?;

    let mut seeds = SplitMix64::new(seed);
    let init_seed = seeds.next_u64();
    let shuffle_seed = seeds.next_u64();
    let n_patches = train_data.patch_blocks[0].rows();
    let mut model = Model::new(model_config.clone(), n_patches, init_seed)?;
    let mut trainer = Trainer::new(&model, shuffle_seed, checked);
    let mut log = Vec::new();
    for epoch in 0..model_config.epochs {
        let stats = train_epoch(&mut model, &train_data, &mut trainer, epoch)?;
        log.extend(stats.records);
    }

    let scores = evaluate_scores(&model, &eval_data, checked)?;
    let labels: Vec<Vec<u8>> = eval_data.label_rows.clone();
    let report = compute_metrics(&scores, &labels, SCORE_THRESHOLD)?;
    Ok((model, log, report))
}

/// `train`: fit on the training split, write checkpoint plus JSONL log.
pub fn train_cmd(config: &RunConfig, checked: bool) -> Result<PathBuf, PipelineError> {
    let dataset = resolve_dataset(config)?;
    let train_count = train_split(config, &dataset)?;
    let (model, log, _) =
        train_and_evaluate(&dataset, &config.model, train_count, config.seed, checked)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| io_err(&config.out_dir, e))?;
    let ckpt = config.out_dir.join("model.kgpc");
    model.save(&ckpt)?;
    let mut lines = String::new();
    for record in &log {
        let line = serde_json::to_string(record)
            .map_err(|e| PipelineError::Data(format!("log record: {e}")))?;
        lines.push_str(&line);
        lines.push('\n');
    }
    let log_path = config.out_dir.join("train_log.jsonl");
    std::fs::write(&log_path, lines).map_err(|e| io_err(&log_path, e))?;
    Ok(ckpt)
}

/// `eval`: score the held-out split with the trained checkpoint and write a
/// metrics report.
pub fn eval_cmd(config: &RunConfig, checked: bool) -> Result<PathBuf, PipelineError> {
    let dataset = resolve_dataset(config)?;
    let train_count = train_split(config, &dataset)?;
    let ckpt = config.out_dir.join("model.kgpc");
    if !ckpt.exists() {
        return Err(PipelineError::Config(format!(
            "checkpoint {} not found (run train first)",
            ckpt.display()
        )));
    }
    let model = Model::load(&ckpt)?;
    let kg = kg_on_train_split(&dataset, train_count, model.config.context_samples)?;
    let n = dataset.labels.n_images();
    let (lo, hi) = if train_count < n {
        (train_count, n)
    } else {
        (0, n)
    };
    let eval_data = PreparedData::prepare(&dataset, &kg, lo, hi, model.config.use_kg_weights)?;
    let scores = evaluate_scores(&model, &eval_data, checked)?;
    let report = compute_metrics(&scores, &eval_data.label_rows, SCORE_THRESHOLD)?;
    let path = config.out_dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| PipelineError::Data(format!("metrics report: {e}")))?;
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// `inspect`: human-readable summary of the dataset, knowledge graph, and
/// hypergraph shapes.
pub fn inspect_cmd(config: &RunConfig) -> Result<String, PipelineError> {
    let dataset = resolve_dataset(config)?;
    let train_count = train_split(config, &dataset)?;
    let kg = kg_on_train_split(&dataset, train_count, config.model.context_samples)?;
    let grid = dataset.patches.grid.unwrap_or((0, 0));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dataset: {} images, {} attributes, d = {}, grid {}x{}",
        dataset.labels.n_images(),
        dataset.labels.n_attrs(),
        dataset.patches.dim(),
        grid.0,
        grid.1
    );
    let _ = writeln!(out, "regional mode: {}", dataset.regions.is_regional());
    let _ = writeln!(out, "attributes (train-split frequency, region):");
    for node in &kg.nodes {
        let _ = writeln!(
            out,
            "  {:<12} r = {:.3}  region = {:<6} context = {} samples",
            node.name,
            node.frequency,
            node.region.to_string(),
            node.context_samples.len()
        );
    }
    let _ = writeln!(out, "co-occurrence edge weights (A~):");
    for (j, row) in kg.edge_weights.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        let _ = writeln!(out, "  {:<12} [{}]", kg.nodes[j].name, cells.join(", "));
    }
    let partition = partition_patches(grid, &dataset.regions)?;
    let patches0 = dataset
        .patches
        .image_patches(0)
        .map_err(PipelineError::from)?;
    let local = build_local(
        &patches0,
        dataset.text.data(),
        &partition,
        &dataset.regions,
        &dataset.labels.attr_names,
        config.model.tau,
    )?;
    let sizes: Vec<usize> = local.hyperedges.iter().map(Vec::len).collect();
    let _ = writeln!(
        out,
        "local hypergraph (image 0, tau = {}): {} nodes, edge sizes {:?}",
        config.model.tau,
        local.n_nodes(),
        sizes
    );
    Ok(out)
}

/// One row of a sweep CSV.
#[derive(Debug)]
pub struct SweepRow {
    pub value: String,
    pub report: Option<MetricsReport>,
}

/// `sweep`: one train+eval run per axis value under a fixed seed, written as
/// a CSV table.
pub fn sweep_cmd(config: &RunConfig, checked: bool) -> Result<PathBuf, PipelineError> {
    let axis = config
        .sweep_axis
        .ok_or_else(|| PipelineError::Config("sweep needs a sweep_axis".into()))?;
    let dataset = resolve_dataset(config)?;
    let train_count = train_split(config, &dataset)?;

    let runs: Vec<(String, ModelConfig, bool)> = match axis {
        SweepAxis::Variant => EncoderVariant::ALL
            .iter()
            .map(|v| {
                let mut m = config.model.clone();
                m.variant = *v;
                (v.to_string(), m, true)
            })
            .collect(),
        SweepAxis::K => [2usize, 4, 6, 8, 10]
            .iter()
            .map(|k| {
                let mut m = config.model.clone();
                m.context_samples = *k;
                (k.to_string(), m, true)
            })
            .collect(),
        SweepAxis::Tau => [0.1, 0.25, 0.4]
            .iter()
            .map(|tau| {
                let mut m = config.model.clone();
                m.tau = *tau;
                (format!("{tau}"), m, true)
            })
            .collect(),
        SweepAxis::Regional => vec![
            ("regional".to_string(), config.model.clone(), true),
            ("non-regional".to_string(), config.model.clone(), false),
        ],
    };

    let mut rows = Vec::with_capacity(runs.len());
    for (value, model_config, regional) in runs {
        let mut view = dataset.clone();
        if !regional {
            view.regions = RegionMap::non_regional(&view.labels.attr_names);
        }
        match train_and_evaluate(&view, &model_config, train_count, config.seed, checked) {
            Ok((_, _, report)) => rows.push(SweepRow {
                value,
                report: Some(report),
            }),
            Err(e) => {
                log::warn!("sweep value {value} failed: {e}; continuing");
                rows.push(SweepRow {
                    value,
                    report: None,
                });
            }
        }
    }

    let axis_name = match axis {
        SweepAxis::Variant => "variant",
        SweepAxis::K => "k",
        SweepAxis::Tau => "tau",
        SweepAxis::Regional => "regional",
    };
    let mut csv = format!("{axis_name},mA,Acc,Prec,Rec,F1\n");
    for row in &rows {
        match &row.report {
            Some(r) => {
                let _ = writeln!(
                    csv,
                    "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                    row.value, r.ma, r.acc, r.prec, r.rec, r.f1
                );
            }
            None => {
                let _ = writeln!(csv, "{},,,,,", row.value);
            }
        }
    }
    std::fs::create_dir_all(&config.out_dir).map_err(|e| io_err(&config.out_dir, e))?;
    let path = config.out_dir.join(format!("sweep_{axis_name}.csv"));
    std::fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    Ok(path)
}
