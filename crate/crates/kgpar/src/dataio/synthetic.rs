//! Seeded synthetic datasets with planted attribute structure.
//!
//! Every attribute gets an orthonormal direction `u_j`. Images positive for
//! attribute j receive `decodability * u_j` added to the noise of every patch
//! inside j's region band; the attribute's text embedding is `u_j` plus small
//! noise. All draws derive from the spec seed, so outputs are a pure function
//! of the spec.

use super::embeddings::{EmbeddingKind, EmbeddingTable};
use super::labels::LabelMatrix;
use super::regions::{row_in_band, Region, RegionMap};
use super::rng::{GaussianSource, SplitMix64, Xoshiro256};
use super::DataError;
use crate::tensor::Tensor;

/// Recipe for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub m_attrs: usize,
    pub d: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub seed: u64,
    /// Planted-signal strength in (0, 1]; patch noise scales as `1 - decodability`.
    pub decodability: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        let counts = [
            self.n_images,
            self.m_attrs,
            self.d,
            self.grid_rows,
            self.grid_cols,
        ];
        if counts.iter().any(|c| *c == 0) {
            return Err(DataError::Invalid("all synthetic counts must be >= 1".into()));
        }
        if self.d < self.m_attrs {
            return Err(DataError::Invalid(format!(
                "d = {} must be >= m_attrs = {} so attribute directions stay near-orthogonal",
                self.d, self.m_attrs
            )));
        }
        if !(self.decodability > 0.0 && self.decodability <= 1.0) {
            return Err(DataError::Invalid(format!(
                "decodability must lie in (0, 1], got {}",
                self.decodability
            )));
        }
        Ok(())
    }
}

/// One generated dataset: labels, patch grid embeddings, text embeddings,
/// and the region map used to plant the signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub labels: LabelMatrix,
    pub patches: EmbeddingTable,
    pub text: EmbeddingTable,
    pub regions: RegionMap,
}

const TEXT_NOISE: f64 = 0.02;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let (n, m, d) = (spec.n_images, spec.m_attrs, spec.d);

    // Independent sub-streams per phase keep the layout stable if one phase
    // changes its draw count.
    let mut seeds = SplitMix64::new(spec.seed);
    let seed_dirs = seeds.next_u64();
    let seed_freqs = seeds.next_u64();
    let seed_labels = seeds.next_u64();
    let seed_patches = seeds.next_u64();
    let seed_text = seeds.next_u64();

    let directions = orthonormal_directions(m, d, seed_dirs)?;

    let mut freq_rng = Xoshiro256::seed_from_u64(seed_freqs);
    let frequencies: Vec<f64> = (0..m).map(|_| freq_rng.range(0.1, 0.6)).collect();

    let attr_names: Vec<String> = (0..m).map(|j| format!("attr{j:02}")).collect();
    let image_ids: Vec<String> = (0..n).map(|i| format!("img{i:04}")).collect();

    let mut label_rng = Xoshiro256::seed_from_u64(seed_labels);
    let mut values = Vec::with_capacity(n * m);
    for _ in 0..n {
        for r in &frequencies {
            values.push(u8::from(label_rng.unit() < *r));
        }
    }
    let labels = LabelMatrix::new(image_ids.clone(), attr_names.clone(), values)?;

    // Attributes cycle over the four non-body bands.
    let regions = RegionMap::new(
        attr_names
            .iter()
            .enumerate()
            .map(|(j, a)| (a.clone(), Region::NON_BODY[j % Region::NON_BODY.len()]))
            .collect(),
        super::regions::default_bands(),
    )?;

    let noise = 1.0 - spec.decodability;
    let mut patch_src = GaussianSource::seed_from_u64(seed_patches);
    let per_image = spec.grid_rows * spec.grid_cols;
    let mut patch_data = Vec::with_capacity(n * per_image * d);
    for i in 0..n {
        // Signal directions active per band row, fixed per image.
        for g in 0..spec.grid_rows {
            let mut signal = vec![0.0; d];
            for (j, name) in attr_names.iter().enumerate() {
                if labels.get(i, j) == 0 {
                    continue;
                }
                let region = regions.region_of(name).expect("generated map covers attrs");
                if row_in_band(regions.band(region), g, spec.grid_rows) {
                    for (s, u) in signal.iter_mut().zip(&directions[j]) {
                        *s += spec.decodability * u;
                    }
                }
            }
            for _ in 0..spec.grid_cols {
                for s in &signal {
                    patch_data.push(s + noise * patch_src.next());
                }
            }
        }
    }
    let patches = EmbeddingTable::new(
        image_ids,
        EmbeddingKind::PatchGrid,
        Some((spec.grid_rows, spec.grid_cols)),
        Tensor::new(n * per_image, d, patch_data).map_err(|e| DataError::Invalid(e.to_string()))?,
    )?;

    let mut text_src = GaussianSource::seed_from_u64(seed_text);
    let mut text_data = Vec::with_capacity(m * d);
    for u in &directions {
        for v in u {
            text_data.push(v + TEXT_NOISE * text_src.next());
        }
    }
    let text = EmbeddingTable::new(
        attr_names,
        EmbeddingKind::Text,
        None,
        Tensor::new(m, d, text_data).map_err(|e| DataError::Invalid(e.to_string()))?,
    )?;

    Ok(SyntheticData {
        labels,
        patches,
        text,
        regions,
    })
}

/// Mean of each image's patch block; stands in for a pooled CLS embedding.
pub fn pooled_image_cls(patches: &EmbeddingTable) -> Result<EmbeddingTable, DataError> {
    let (gr, gc) = patches
        .grid
        .ok_or_else(|| DataError::Invalid("pooled_image_cls needs a patch_grid table".into()))?;
    let per = gr * gc;
    let d = patches.dim();
    let mut data = Vec::with_capacity(patches.ids.len() * d);
    for i in 0..patches.ids.len() {
        let mut mean = vec![0.0; d];
        for p in 0..per {
            for (acc, v) in mean.iter_mut().zip(patches.row(i * per + p)) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= per as f64;
        }
        data.extend_from_slice(&mean);
    }
    EmbeddingTable::new(
        patches.ids.clone(),
        EmbeddingKind::ImageCls,
        None,
        Tensor::new(patches.ids.len(), d, data).map_err(|e| DataError::Invalid(e.to_string()))?,
    )
}

/// Gram-Schmidt over seeded Gaussian vectors; exact orthonormality needs
/// d >= m, which the spec validation guarantees.
fn orthonormal_directions(m: usize, d: usize, seed: u64) -> Result<Vec<Vec<f64>>, DataError> {
    let mut src = GaussianSource::seed_from_u64(seed);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut v: Vec<f64> = (0..d).map(|_| src.next()).collect();
        for u in &dirs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(DataError::Invalid(format!(
                "attribute direction {j} degenerate after orthogonalization"
            )));
        }
        for vi in &mut v {
            *vi /= norm;
        }
        dirs.push(v);
    }
    Ok(dirs)
}
