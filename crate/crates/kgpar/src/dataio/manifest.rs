//! Dataset manifest tying the label CSV, embedding binaries, and region map
//! together. Paths are resolved relative to the manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::embeddings::{load_embeddings, save_embeddings, EmbeddingKind, EmbeddingTable};
use super::labels::{load_label_matrix, save_label_matrix, LabelMatrix};
use super::regions::{load_region_map, save_region_map, RegionMap};
use super::synthetic::SyntheticData;
use super::DataError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub labels: PathBuf,
    pub patch_embeddings: PathBuf,
    pub text_embeddings: PathBuf,
    pub region_map: PathBuf,
}

/// A fully loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub labels: LabelMatrix,
    pub patches: EmbeddingTable,
    pub text: EmbeddingTable,
    pub regions: RegionMap,
}

impl Dataset {
    /// Cross-check attribute order across labels, text table, and region map.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.text.ids != self.labels.attr_names {
            return Err(DataError::Invalid(
                "text embedding ids do not match label attribute order".into(),
            ));
        }
        if self.patches.ids != self.labels.image_ids {
            return Err(DataError::Invalid(
                "patch embedding ids do not match label image order".into(),
            ));
        }
        if self.patches.kind != EmbeddingKind::PatchGrid {
            return Err(DataError::Invalid("patch table must be patch_grid kind".into()));
        }
        if self.text.kind != EmbeddingKind::Text {
            return Err(DataError::Invalid("text table must be text kind".into()));
        }
        if self.patches.dim() != self.text.dim() {
            return Err(DataError::Invalid(format!(
                "patch dim {} != text dim {}",
                self.patches.dim(),
                self.text.dim()
            )));
        }
        self.regions.validate_against(&self.labels.attr_names)
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Invalid(format!("manifest: {e}")))
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let dataset = Dataset {
        labels: load_label_matrix(&base.join(&manifest.labels))?,
        patches: load_embeddings(&base.join(&manifest.patch_embeddings))?,
        text: load_embeddings(&base.join(&manifest.text_embeddings))?,
        regions: load_region_map(&base.join(&manifest.region_map))?,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write a generated dataset plus its manifest into `dir` and return the
/// manifest path.
pub fn save_dataset(data: &SyntheticData, dir: &Path) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let manifest = DatasetManifest {
        labels: "labels.csv".into(),
        patch_embeddings: "patches.kgpe".into(),
        text_embeddings: "text.kgpe".into(),
        region_map: "regions.json".into(),
    };
    save_label_matrix(&data.labels, &dir.join(&manifest.labels))?;
    save_embeddings(&data.patches, &dir.join(&manifest.patch_embeddings))?;
    save_embeddings(&data.text, &dir.join(&manifest.text_embeddings))?;
    save_region_map(&data.regions, &dir.join(&manifest.region_map))?;
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DataError::Invalid(format!("manifest: {e}")))?;
    std::fs::write(&manifest_path, text).map_err(|e| DataError::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::{generate_synthetic, SyntheticSpec};

    #[test]
    fn save_then_load_matches_at_f32() {
        let spec = SyntheticSpec {
            n_images: 6,
            m_attrs: 3,
            d: 4,
            grid_rows: 5,
            grid_cols: 2,
            seed: 11,
            decodability: 0.5,
        };
        let data = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&data, dir.path()).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.labels, data.labels);
        assert_eq!(loaded.regions, data.regions);
        // Embeddings round-trip at f32 precision.
        for (a, b) in loaded
            .patches
            .data()
            .data()
            .iter()
            .zip(data.patches.data().data())
        {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
