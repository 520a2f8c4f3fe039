//! On-disk artifacts (labels, embeddings, region maps, manifests) and the
//! seeded synthetic dataset generator. Loaders are pure; loaded structures
//! are immutable and freely shareable across workers.

mod embeddings;
mod labels;
mod manifest;
mod regions;
pub mod rng;
mod synthetic;

pub use embeddings::{load_embeddings, save_embeddings, EmbeddingKind, EmbeddingTable};
pub use labels::{load_label_matrix, parse_label_csv, save_label_matrix, LabelMatrix};
pub use manifest::{load_dataset, load_manifest, save_dataset, Dataset, DatasetManifest};
pub use regions::{
    default_bands, load_region_map, row_in_band, save_region_map, Band, Region, RegionMap,
};
pub use synthetic::{generate_synthetic, pooled_image_cls, SyntheticData, SyntheticSpec};

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error in {path} at offset {offset}: {msg}")]
    Format {
        path: String,
        offset: u64,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        DataError::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(path: &Path, offset: u64, msg: impl Into<String>) -> Self {
        DataError::Format {
            path: path.display().to_string(),
            offset,
            msg: msg.into(),
        }
    }
}
