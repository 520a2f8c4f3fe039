//! Multi-modal attribute knowledge graph: one node per attribute carrying a
//! region assignment, text feature, and K context visual samples; weighted
//! edges from row-normalized co-occurrence.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{EmbeddingKind, EmbeddingTable, LabelMatrix, Region, RegionMap};

pub const DEFAULT_CONTEXT_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("attribute sets disagree; only in labels: {only_labels:?}, only in {other}: {only_other:?}")]
    AttrMismatch {
        other: &'static str,
        only_labels: Vec<String>,
        only_other: Vec<String>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("serialization: {0}")]
    Serde(String),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
}

/// A positive training image attached to an attribute node.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSample {
    pub image_id: String,
    pub cls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeNode {
    pub name: String,
    pub region: Region,
    pub text_feature: Vec<f64>,
    pub context_samples: Vec<ContextSample>,
    /// Mean of the context-sample CLS vectors (zeros when no positives).
    pub visual_feature: Vec<f64>,
    /// Occurrence ratio over the source label matrix.
    pub frequency: f64,
}

/// M x M dense square matrix helpers over the attribute order.
pub type SquareMatrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub nodes: Vec<AttributeNode>,
    /// Row-normalized co-occurrence: edge weight between attributes i and j.
    pub edge_weights: SquareMatrix,
    pub raw_cooccurrence: Vec<Vec<u64>>,
}

impl KnowledgeGraph {
    pub fn n_attrs(&self) -> usize {
        self.nodes.len()
    }

    pub fn attr_names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.frequency).collect()
    }
}

/// A_ij = sum_k L_ki * L_kj. Diagonal entries count positives per attribute.
pub fn cooccurrence(labels: &LabelMatrix) -> Vec<Vec<u64>> {
    let m = labels.n_attrs();
    let mut a = vec![vec![0u64; m]; m];
    for k in 0..labels.n_images() {
        let row = labels.row(k);
        for i in 0..m {
            if row[i] == 0 {
                continue;
            }
            for j in 0..m {
                if row[j] == 1 {
                    a[i][j] += 1;
                }
            }
        }
    }
    a
}

/// Row-wise normalization by the diagonal; zero-diagonal rows stay zero and
/// are reported with a warning.
pub fn normalize_rows(a: &[Vec<u64>], attr_names: &[String]) -> SquareMatrix {
    let m = a.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        if a[i][i] == 0 {
            warn!(
                "attribute \"{}\" never occurs; its edge-weight row is zeroed",
                attr_names.get(i).map(String::as_str).unwrap_or("?")
            );
            continue;
        }
        let diag = a[i][i] as f64;
        for j in 0..m {
            out[i][j] = a[i][j] as f64 / diag;
        }
    }
    out
}

/// First K positive images per attribute, by ascending image index; shorter
/// when an attribute has fewer positives.
pub fn select_context_samples(
    labels: &LabelMatrix,
    cls: &EmbeddingTable,
    k: usize,
) -> Result<Vec<Vec<ContextSample>>, KgError> {
    if k == 0 {
        return Err(KgError::Invalid("context sample count K must be >= 1".into()));
    }
    if cls.kind != EmbeddingKind::ImageCls {
        return Err(KgError::Invalid("context selection needs an image_cls table".into()));
    }
    if cls.ids != labels.image_ids {
        return Err(KgError::Invalid(
            "image_cls ids do not match label image order".into(),
        ));
    }
    let mut out = Vec::with_capacity(labels.n_attrs());
    for j in 0..labels.n_attrs() {
        let mut samples = Vec::new();
        for i in 0..labels.n_images() {
            if labels.get(i, j) == 1 {
                samples.push(ContextSample {
                    image_id: labels.image_ids[i].clone(),
                    cls: cls.row(i).to_vec(),
                });
                if samples.len() == k {
                    break;
                }
            }
        }
        if samples.is_empty() {
            warn!(
                "attribute \"{}\" has no positive images; context list empty",
                labels.attr_names[j]
            );
        }
        out.push(samples);
    }
    Ok(out)
}

fn check_attr_agreement(
    labels: &LabelMatrix,
    names: &[String],
    other: &'static str,
) -> Result<(), KgError> {
    if labels.attr_names == *names {
        return Ok(());
    }
    let only_labels: Vec<String> = labels
        .attr_names
        .iter()
        .filter(|a| !names.contains(a))
        .cloned()
        .collect();
    let only_other: Vec<String> = names
        .iter()
        .filter(|a| !labels.attr_names.contains(a))
        .cloned()
        .collect();
    if only_labels.is_empty() && only_other.is_empty() {
        return Err(KgError::Invalid(format!(
            "attribute order differs between labels and {other}"
        )));
    }
    Err(KgError::AttrMismatch {
        other,
        only_labels,
        only_other,
    })
}

/// Assemble the knowledge graph from labels, embeddings, and the region map.
pub fn build_kg(
    labels: &LabelMatrix,
    text: &EmbeddingTable,
    cls: &EmbeddingTable,
    region_map: &RegionMap,
    k: usize,
) -> Result<KnowledgeGraph, KgError> {
    check_attr_agreement(labels, &text.ids, "text embeddings")?;
    region_map.validate_against(&labels.attr_names)?;

    let raw = cooccurrence(labels);
    let edge_weights = normalize_rows(&raw, &labels.attr_names);
    let contexts = select_context_samples(labels, cls, k)?;
    let n = labels.n_images() as f64;
    let d = text.dim();

    let nodes = labels
        .attr_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let samples = contexts[j].clone();
            let mut visual = vec![0.0; d];
            if !samples.is_empty() {
                for s in &samples {
                    for (v, c) in visual.iter_mut().zip(&s.cls) {
                        *v += c;
                    }
                }
                for v in &mut visual {
                    *v /= samples.len() as f64;
                }
            }
            AttributeNode {
                name: name.clone(),
                region: region_map.region_of(name).expect("validated above"),
                text_feature: text.row(j).to_vec(),
                context_samples: samples,
                visual_feature: visual,
                frequency: raw[j][j] as f64 / n,
            }
        })
        .collect();

    Ok(KnowledgeGraph {
        nodes,
        edge_weights,
        raw_cooccurrence: raw,
    })
}

/// JSON form: vectors are stored by reference to the embedding tables, not
/// inline.
#[derive(Debug, Serialize, Deserialize)]
struct KgJson {
    attrs: Vec<String>,
    regions: BTreeMap<String, Region>,
    #[serde(rename = "A")]
    a: Vec<Vec<u64>>,
    #[serde(rename = "A_tilde")]
    a_tilde: Vec<Vec<f64>>,
    context: BTreeMap<String, Vec<String>>,
    frequencies: Vec<f64>,
}

pub fn kg_to_json(kg: &KnowledgeGraph) -> Result<String, KgError> {
    let json = KgJson {
        attrs: kg.attr_names(),
        regions: kg
            .nodes
            .iter()
            .map(|n| (n.name.clone(), n.region))
            .collect(),
        a: kg.raw_cooccurrence.clone(),
        a_tilde: kg.edge_weights.clone(),
        context: kg
            .nodes
            .iter()
            .map(|n| {
                (
                    n.name.clone(),
                    n.context_samples.iter().map(|s| s.image_id.clone()).collect(),
                )
            })
            .collect(),
        frequencies: kg.frequencies(),
    };
    serde_json::to_string_pretty(&json).map_err(|e| KgError::Serde(e.to_string()))
}

pub fn save_kg(kg: &KnowledgeGraph, path: &Path) -> Result<(), KgError> {
    std::fs::write(path, kg_to_json(kg)?)
        .map_err(|e| KgError::Serde(format!("{}: {e}", path.display())))
}

/// Rebuild a graph from its JSON plus the embedding tables holding the
/// referenced vectors.
pub fn load_kg(
    path: &Path,
    text: &EmbeddingTable,
    cls: &EmbeddingTable,
) -> Result<KnowledgeGraph, KgError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| KgError::Serde(format!("{}: {e}", path.display())))?;
    let json: KgJson = serde_json::from_str(&raw).map_err(|e| KgError::Serde(e.to_string()))?;
    let d = text.dim();
    let mut nodes = Vec::with_capacity(json.attrs.len());
    for (j, name) in json.attrs.iter().enumerate() {
        let region = *json
            .regions
            .get(name)
            .ok_or_else(|| KgError::Invalid(format!("region missing for {name}")))?;
        let text_feature = text
            .lookup(name)
            .ok_or_else(|| KgError::Invalid(format!("text vector missing for {name}")))?
            .to_vec();
        let ids = json
            .context
            .get(name)
            .ok_or_else(|| KgError::Invalid(format!("context list missing for {name}")))?;
        let mut samples = Vec::with_capacity(ids.len());
        for id in ids {
            let vec = cls
                .lookup(id)
                .ok_or_else(|| KgError::Invalid(format!("cls vector missing for image {id}")))?;
            samples.push(ContextSample {
                image_id: id.clone(),
                cls: vec.to_vec(),
            });
        }
        let mut visual = vec![0.0; d];
        if !samples.is_empty() {
            for s in &samples {
                for (v, c) in visual.iter_mut().zip(&s.cls) {
                    *v += c;
                }
            }
            for v in &mut visual {
                *v /= samples.len() as f64;
            }
        }
        nodes.push(AttributeNode {
            name: name.clone(),
            region,
            text_feature,
            context_samples: samples,
            visual_feature: visual,
            frequency: json.frequencies[j],
        });
    }
    Ok(KnowledgeGraph {
        nodes,
        edge_weights: json.a_tilde,
        raw_cooccurrence: json.a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, pooled_image_cls, SyntheticSpec};

    fn labels_from(rows: &[&[u8]], m: usize) -> LabelMatrix {
        let ids = (0..rows.len()).map(|i| format!("img{i}")).collect();
        let names = (0..m).map(|j| format!("a{j}")).collect();
        LabelMatrix::new(ids, names, rows.concat()).unwrap()
    }

    #[test]
    fn cooccurrence_hand_example() {
        let l = labels_from(&[&[1, 1, 0], &[1, 0, 1], &[0, 1, 1]], 3);
        let a = cooccurrence(&l);
        assert_eq!(a, vec![vec![2, 1, 1], vec![1, 2, 1], vec![1, 1, 2]]);
    }

    #[test]
    fn cooccurrence_zeros_and_single_image() {
        let l = labels_from(&[&[0, 0], &[0, 0]], 2);
        assert_eq!(cooccurrence(&l), vec![vec![0, 0], vec![0, 0]]);
        let l = labels_from(&[&[1, 1, 1]], 3);
        assert_eq!(cooccurrence(&l), vec![vec![1; 3]; 3]);
    }

    #[test]
    fn normalize_rows_hand_example() {
        let a = vec![vec![2, 1, 1], vec![1, 2, 1], vec![1, 1, 2]];
        let names: Vec<String> = (0..3).map(|j| format!("a{j}")).collect();
        let tilde = normalize_rows(&a, &names);
        let expected = [
            [1.0, 0.5, 0.5],
            [0.5, 1.0, 0.5],
            [0.5, 0.5, 1.0],
        ];
        for (row, exp) in tilde.iter().zip(&expected) {
            for (v, e) in row.iter().zip(exp) {
                assert!((v - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_diagonal_gives_identity() {
        let a = vec![vec![5, 0], vec![0, 3]];
        let names: Vec<String> = vec!["x".into(), "y".into()];
        let tilde = normalize_rows(&a, &names);
        assert_eq!(tilde, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn normalize_zero_row_stays_zero() {
        let a = vec![vec![0, 0], vec![0, 4]];
        let names: Vec<String> = vec!["never".into(), "y".into()];
        let tilde = normalize_rows(&a, &names);
        assert_eq!(tilde[0], vec![0.0, 0.0]);
        assert_eq!(tilde[1], vec![0.0, 1.0]);
    }

    fn toy_dataset() -> (crate::dataio::SyntheticData, EmbeddingTable) {
        let spec = SyntheticSpec {
            n_images: 12,
            m_attrs: 4,
            d: 6,
            grid_rows: 5,
            grid_cols: 1,
            seed: 3,
            decodability: 0.7,
        };
        let data = generate_synthetic(&spec).unwrap();
        let cls = pooled_image_cls(&data.patches).unwrap();
        (data, cls)
    }

    #[test]
    fn context_selection_is_lowest_index_first_and_prefix_stable() {
        let (data, cls) = toy_dataset();
        let k2 = select_context_samples(&data.labels, &cls, 2).unwrap();
        let k4 = select_context_samples(&data.labels, &cls, 4).unwrap();
        for j in 0..data.labels.n_attrs() {
            // Prefix stability: K=2 list is a prefix of the K=4 list.
            let ids2: Vec<&String> = k2[j].iter().map(|s| &s.image_id).collect();
            let ids4: Vec<&String> = k4[j].iter().map(|s| &s.image_id).collect();
            assert!(ids4.starts_with(&ids2));
            // Ascending image index order.
            let positions: Vec<usize> = ids4
                .iter()
                .map(|id| data.labels.image_ids.iter().position(|x| &x == id).unwrap())
                .collect();
            assert!(positions.windows(2).all(|w| w[0] < w[1]));
            // Only positives referenced.
            for p in &positions {
                assert_eq!(data.labels.get(*p, j), 1);
            }
        }
    }

    #[test]
    fn context_truncates_to_positive_count() {
        let l = labels_from(&[&[1], &[0], &[1]], 1);
        let cls = EmbeddingTable::new(
            l.image_ids.clone(),
            EmbeddingKind::ImageCls,
            None,
            crate::tensor::Tensor::new(3, 2, vec![0.0; 6]).unwrap(),
        )
        .unwrap();
        let lists = select_context_samples(&l, &cls, 10).unwrap();
        assert_eq!(lists[0].len(), 2);
    }

    #[test]
    fn build_kg_diagonal_edges_and_regions() {
        let (data, cls) = toy_dataset();
        let kg = build_kg(&data.labels, &data.text, &cls, &data.regions, 3).unwrap();
        assert_eq!(kg.n_attrs(), 4);
        for (j, node) in kg.nodes.iter().enumerate() {
            if kg.raw_cooccurrence[j][j] > 0 {
                assert_eq!(kg.edge_weights[j][j], 1.0);
            }
            assert_eq!(node.region, data.regions.region_of(&node.name).unwrap());
            let expected_freq =
                kg.raw_cooccurrence[j][j] as f64 / data.labels.n_images() as f64;
            assert_eq!(node.frequency, expected_freq);
        }
    }

    #[test]
    fn attr_mismatch_reports_symmetric_difference() {
        let (data, cls) = toy_dataset();
        let wrong_text = EmbeddingTable::new(
            vec!["attr00".into(), "attr01".into(), "attr02".into(), "zzz".into()],
            EmbeddingKind::Text,
            None,
            data.text.data().clone(),
        )
        .unwrap();
        let err = build_kg(&data.labels, &wrong_text, &cls, &data.regions, 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("attr03") && msg.contains("zzz"), "{msg}");
    }

    #[test]
    fn serialize_load_round_trip() {
        let (data, cls) = toy_dataset();
        let kg = build_kg(&data.labels, &data.text, &cls, &data.regions, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kg.json");
        save_kg(&kg, &path).unwrap();
        let loaded = load_kg(&path, &data.text, &cls).unwrap();
        assert_eq!(loaded, kg);
    }
}
