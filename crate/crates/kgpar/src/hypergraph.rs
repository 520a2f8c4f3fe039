//! Hypergraph representation plus the two construction levels: per-image
//! local hypergraphs from thresholded text-patch similarity within regions,
//! and batch-level global hypergraphs from image-attribute incidence.

use std::collections::BTreeMap;

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::dataio::{row_in_band, Region, RegionMap};
use crate::kgraph::SquareMatrix;
use crate::tensor::{cosine, Tensor};

pub const DEFAULT_TAU: f64 = 0.25;
pub const DEFAULT_K_ASSOC: usize = 5;

#[derive(Debug, Error)]
pub enum HypergraphError {
    #[error("{0}")]
    Invalid(String),
    #[error("region {region} has no patches: {reason}")]
    EmptyRegion { region: Region, reason: String },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Patch,
    Text,
    Image,
}

/// Node-feature matrix plus hyperedge membership lists.
///
/// Node order is fixed: patches in grid order then text nodes in attribute
/// order for local graphs; images in batch order then text nodes for global
/// graphs. Hyperedge j is owned by attribute `edge_labels[j]`.
#[derive(Debug, Clone)]
pub struct Hypergraph {
    pub node_features: Tensor,
    pub node_kinds: Vec<NodeKind>,
    pub hyperedges: Vec<Vec<usize>>,
    pub edge_labels: Vec<usize>,
    /// Optional per-edge member weights for stage-1 aggregation.
    pub edge_weights: Option<Vec<Vec<f64>>>,
}

impl Hypergraph {
    pub fn n_nodes(&self) -> usize {
        self.node_kinds.len()
    }

    pub fn n_edges(&self) -> usize {
        self.hyperedges.len()
    }

    /// Range of text-node indices in the fixed node order.
    pub fn text_range(&self) -> (usize, usize) {
        let first = self
            .node_kinds
            .iter()
            .position(|k| *k == NodeKind::Text)
            .unwrap_or(self.n_nodes());
        (first, self.n_nodes())
    }

    /// Node degree: number of incident hyperedges.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_nodes()];
        for edge in &self.hyperedges {
            for v in edge {
                deg[*v] += 1;
            }
        }
        deg
    }
}

/// V x E binary incidence matrix consistent with the membership lists.
pub fn incidence_matrix(hg: &Hypergraph) -> Tensor {
    let mut h = Tensor::zeros(hg.n_nodes(), hg.n_edges());
    for (e, edge) in hg.hyperedges.iter().enumerate() {
        for v in edge {
            h.set(*v, e, 1.0);
        }
    }
    h
}

/// Assignment of grid patches to regions.
///
/// In regional mode the non-body regions partition the patch set; in
/// non-regional mode only `body` is present. `body` always holds all patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPartition {
    pub grid: (usize, usize),
    pub region_to_patch_indices: BTreeMap<Region, Vec<usize>>,
}

impl PatchPartition {
    pub fn patches_of(&self, region: Region) -> Option<&[usize]> {
        self.region_to_patch_indices.get(&region).map(Vec::as_slice)
    }

    pub fn n_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }
}

/// Assign each grid row to its band. A patch at grid row g belongs to region
/// r iff g/rows falls inside r's band; body gets every patch.
pub fn partition_patches(
    grid: (usize, usize),
    region_map: &RegionMap,
) -> Result<PatchPartition, HypergraphError> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 {
        return Err(HypergraphError::Invalid(format!("empty grid {rows}x{cols}")));
    }
    let mut map: BTreeMap<Region, Vec<usize>> = BTreeMap::new();
    map.insert(Region::Body, (0..rows * cols).collect());

    if region_map.is_regional() {
        if rows < Region::NON_BODY.len() {
            return Err(HypergraphError::Invalid(format!(
                "grid too coarse: {rows} rows cannot cover {} non-body regions",
                Region::NON_BODY.len()
            )));
        }
        for region in Region::NON_BODY {
            map.insert(region, Vec::new());
        }
        for g in 0..rows {
            let mut owner = None;
            for region in Region::NON_BODY {
                if row_in_band(region_map.band(region), g, rows) {
                    if owner.is_some() {
                        return Err(HypergraphError::Invalid(format!(
                            "grid row {g} falls into two region bands"
                        )));
                    }
                    owner = Some(region);
                }
            }
            let Some(region) = owner else {
                return Err(HypergraphError::Invalid(format!(
                    "grid row {g} is not covered by any non-body band"
                )));
            };
            let list = map.get_mut(&region).expect("inserted above");
            for c in 0..cols {
                list.push(g * cols + c);
            }
        }
        for region in Region::NON_BODY {
            if map[&region].is_empty() {
                return Err(HypergraphError::EmptyRegion {
                    region,
                    reason: "grid too coarse for its band".into(),
                });
            }
        }
    }
    Ok(PatchPartition {
        grid,
        region_to_patch_indices: map,
    })
}

/// Cosine similarity between region patch features and region text features.
/// Zero-norm vectors contribute all-zero rows/columns.
pub fn region_similarity(patches: &Tensor, texts: &Tensor) -> Result<Tensor, HypergraphError> {
    if patches.cols() != texts.cols() {
        return Err(HypergraphError::Invalid(format!(
            "similarity dims disagree: patches d={}, text d={}",
            patches.cols(),
            texts.cols()
        )));
    }
    let mut out = Tensor::zeros(patches.rows(), texts.rows());
    let mut warned = false;
    for i in 0..patches.rows() {
        let p = patches.row_slice(i);
        for j in 0..texts.rows() {
            let t = texts.row_slice(j);
            if !warned
                && (p.iter().all(|v| *v == 0.0) || t.iter().all(|v| *v == 0.0))
            {
                warn!("zero-norm vector in similarity; treating its similarities as 0");
                warned = true;
            }
            out.set(i, j, cosine(p, t));
        }
    }
    Ok(out)
}

/// Build the per-image local hypergraph.
///
/// For each region r and attribute j assigned to r, hyperedge e_j holds text
/// node j plus every patch in r whose similarity exceeds `tau`; when none
/// passes, the single most similar patch in r is kept so the attribute never
/// loses its visual evidence.
pub fn build_local(
    patch_features: &Tensor,
    text_features: &Tensor,
    partition: &PatchPartition,
    region_map: &RegionMap,
    attr_names: &[String],
    tau: f64,
) -> Result<Hypergraph, HypergraphError> {
    if !(-1.0..1.0).contains(&tau) {
        return Err(HypergraphError::Invalid(format!(
            "tau must lie in [-1, 1), got {tau}"
        )));
    }
    let n_patches = partition.n_patches();
    if patch_features.rows() != n_patches {
        return Err(HypergraphError::Invalid(format!(
            "partition expects {n_patches} patches, features have {}",
            patch_features.rows()
        )));
    }
    let m = attr_names.len();
    if text_features.rows() != m {
        return Err(HypergraphError::Invalid(format!(
            "{m} attributes but {} text rows",
            text_features.rows()
        )));
    }

    let mut hyperedges = Vec::with_capacity(m);
    let mut edge_labels = Vec::with_capacity(m);
    for (j, name) in attr_names.iter().enumerate() {
        let region = region_map.region_of(name).ok_or_else(|| {
            HypergraphError::Invalid(format!("attribute {name} missing from region map"))
        })?;
        let members = partition.patches_of(region).ok_or_else(|| {
            HypergraphError::EmptyRegion {
                region,
                reason: format!("no patches for attribute {name}"),
            }
        })?;
        if members.is_empty() {
            return Err(HypergraphError::EmptyRegion {
                region,
                reason: format!("no patches for attribute {name}"),
            });
        }
        let text_row = text_features.row_slice(j);
        let mut edge = Vec::new();
        let mut best: (usize, f64) = (members[0], f64::NEG_INFINITY);
        for &p in members {
            let sim = cosine(patch_features.row_slice(p), text_row);
            if sim > tau {
                edge.push(p);
            }
            if sim > best.1 {
                best = (p, sim);
            }
        }
        if edge.is_empty() {
            edge.push(best.0); // top-1 fallback
        }
        edge.push(n_patches + j);
        hyperedges.push(edge);
        edge_labels.push(j);
    }

    let mut node_kinds = vec![NodeKind::Patch; n_patches];
    node_kinds.extend(std::iter::repeat(NodeKind::Text).take(m));
    let tape_free_features = stack_plain(patch_features, text_features)?;
    Ok(Hypergraph {
        node_features: tape_free_features,
        node_kinds,
        hyperedges,
        edge_labels,
        edge_weights: None,
    })
}

/// Build the batch global hypergraph from image CLS features, text features,
/// and a binary image-attribute association. Hyperedge j holds the image
/// nodes associated with attribute j plus text node j; an attribute absent
/// from the batch keeps a singleton edge (flagged with a warning).
pub fn build_global(
    image_features: &Tensor,
    text_features: &Tensor,
    associations: &[&[u8]],
) -> Result<Hypergraph, HypergraphError> {
    let b = image_features.rows();
    let m = text_features.rows();
    if image_features.cols() != text_features.cols() {
        return Err(HypergraphError::Invalid(format!(
            "feature dims disagree: images d={}, text d={}",
            image_features.cols(),
            text_features.cols()
        )));
    }
    if associations.len() != b || associations.iter().any(|row| row.len() != m) {
        return Err(HypergraphError::Invalid(format!(
            "association matrix must be {b} x {m}"
        )));
    }

    let mut hyperedges = Vec::with_capacity(m);
    let mut edge_labels = Vec::with_capacity(m);
    for j in 0..m {
        let mut edge: Vec<usize> = (0..b).filter(|i| associations[*i][j] == 1).collect();
        if edge.is_empty() {
            warn!("attribute {j} absent from batch; keeping singleton hyperedge");
        }
        edge.push(b + j);
        hyperedges.push(edge);
        edge_labels.push(j);
    }

    let mut node_kinds = vec![NodeKind::Image; b];
    node_kinds.extend(std::iter::repeat(NodeKind::Text).take(m));
    Ok(Hypergraph {
        node_features: stack_plain(image_features, text_features)?,
        node_kinds,
        hyperedges,
        edge_labels,
        edge_weights: None,
    })
}

/// Knowledge-graph-guided member weighting for global hyperedges: inside
/// hyperedge j an image member contributes proportionally to the mean edge
/// weight between attribute j and the image's positive attributes; text
/// members keep weight 1. Experimental, off by default.
pub fn apply_kg_edge_weights(
    hg: &mut Hypergraph,
    atilde: &SquareMatrix,
    associations: &[&[u8]],
) -> Result<(), HypergraphError> {
    let b = associations.len();
    let mut weights = Vec::with_capacity(hg.n_edges());
    for (e, edge) in hg.hyperedges.iter().enumerate() {
        let j = hg.edge_labels[e];
        let mut per_member = Vec::with_capacity(edge.len());
        for &v in edge {
            if v >= b {
                per_member.push(1.0);
                continue;
            }
            let positives: Vec<usize> = associations[v]
                .iter()
                .enumerate()
                .filter_map(|(m, y)| (*y == 1).then_some(m))
                .collect();
            let w = if positives.is_empty() {
                1.0
            } else {
                positives.iter().map(|m| atilde[j][*m]).sum::<f64>() / positives.len() as f64
            };
            per_member.push(w);
        }
        weights.push(per_member);
    }
    hg.edge_weights = Some(weights);
    Ok(())
}

/// Inference-time association: the top-k attributes per image by cosine
/// similarity between the image CLS vector and the text embeddings. Ties
/// break toward the lower attribute index.
pub fn association_from_scores(
    image_features: &Tensor,
    text_features: &Tensor,
    k_assoc: usize,
) -> Vec<Vec<u8>> {
    let m = text_features.rows();
    let k = k_assoc.min(m);
    let mut out = Vec::with_capacity(image_features.rows());
    for i in 0..image_features.rows() {
        let c = image_features.row_slice(i);
        let mut ranked: Vec<(usize, f64)> = (0..m)
            .map(|j| (j, cosine(c, text_features.row_slice(j))))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut row = vec![0u8; m];
        for (j, _) in ranked.into_iter().take(k) {
            row[j] = 1;
        }
        out.push(row);
    }
    out
}

fn stack_plain(top: &Tensor, bottom: &Tensor) -> Result<Tensor, HypergraphError> {
    if top.cols() != bottom.cols() {
        return Err(HypergraphError::Invalid(format!(
            "cannot stack features with widths {} and {}",
            top.cols(),
            bottom.cols()
        )));
    }
    let mut data = Vec::with_capacity((top.rows() + bottom.rows()) * top.cols());
    data.extend_from_slice(top.data());
    data.extend_from_slice(bottom.data());
    Ok(Tensor::new(top.rows() + bottom.rows(), top.cols(), data)?)
}

/// Debug dump consumed by the CLI `inspect` subcommand.
#[derive(Debug, Serialize)]
pub struct HypergraphDump<'a> {
    pub node_kinds: &'a [NodeKind],
    pub hyperedges: &'a [Vec<usize>],
    pub edge_labels: &'a [usize],
    pub edge_weights: Option<&'a [Vec<f64>]>,
}

pub fn dump_json(hg: &Hypergraph) -> Result<String, HypergraphError> {
    let dump = HypergraphDump {
        node_kinds: &hg.node_kinds,
        hyperedges: &hg.hyperedges,
        edge_labels: &hg.edge_labels,
        edge_weights: hg.edge_weights.as_deref(),
    };
    serde_json::to_string_pretty(&dump).map_err(|e| HypergraphError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::default_bands;

    fn regional_map(attrs: &[(&str, Region)]) -> RegionMap {
        RegionMap::new(
            attrs
                .iter()
                .map(|(a, r)| (a.to_string(), *r))
                .collect(),
            default_bands(),
        )
        .unwrap()
    }

    #[test]
    fn ten_row_grid_default_bands() {
        let map = regional_map(&[("hat", Region::Head)]);
        let p = partition_patches((10, 1), &map).unwrap();
        assert_eq!(p.patches_of(Region::Head).unwrap(), &[0, 1]);
        assert_eq!(p.patches_of(Region::Upper).unwrap(), &[2, 3, 4]);
        assert_eq!(p.patches_of(Region::Lower).unwrap(), &[5, 6, 7]);
        assert_eq!(p.patches_of(Region::Foot).unwrap(), &[8, 9]);
        assert_eq!(p.patches_of(Region::Body).unwrap().len(), 10);
    }

    #[test]
    fn body_only_map_is_non_regional() {
        let attrs: Vec<String> = vec!["a".into(), "b".into()];
        let map = RegionMap::non_regional(&attrs);
        let p = partition_patches((4, 4), &map).unwrap();
        assert_eq!(p.patches_of(Region::Body).unwrap().len(), 16);
        assert!(p.patches_of(Region::Head).is_none());
    }

    #[test]
    fn non_body_regions_partition_all_patches() {
        let map = regional_map(&[("hat", Region::Head)]);
        let p = partition_patches((9, 3), &map).unwrap();
        let mut all: Vec<usize> = Region::NON_BODY
            .iter()
            .flat_map(|r| p.patches_of(*r).unwrap().to_vec())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..27).collect::<Vec<_>>());
    }

    #[test]
    fn too_coarse_grid_rejected() {
        let map = regional_map(&[("hat", Region::Head)]);
        let err = partition_patches((3, 2), &map).unwrap_err();
        assert!(err.to_string().contains("too coarse"), "{err}");
    }

    #[test]
    fn similarity_parallel_orthogonal_and_column() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let s = region_similarity(&h, &t).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(1, 0), 0.0);
    }

    fn two_patch_setup() -> (Tensor, Tensor, PatchPartition, RegionMap, Vec<String>) {
        let patches = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let text = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut region_to_patch_indices = BTreeMap::new();
        region_to_patch_indices.insert(Region::Body, vec![0, 1]);
        region_to_patch_indices.insert(Region::Head, vec![0, 1]);
        let partition = PatchPartition {
            grid: (2, 1),
            region_to_patch_indices,
        };
        let map = regional_map(&[("hat", Region::Head)]);
        (patches, text, partition, map, vec!["hat".to_string()])
    }

    #[test]
    fn local_thresholding_keeps_similar_patches() {
        let (patches, text, partition, map, attrs) = two_patch_setup();
        let hg = build_local(&patches, &text, &partition, &map, &attrs, 0.5).unwrap();
        // similarities are 1 and 0 against tau = 0.5: patch 0 plus text node 2
        assert_eq!(hg.hyperedges, vec![vec![0, 2]]);
        assert_eq!(hg.node_kinds, vec![NodeKind::Patch, NodeKind::Patch, NodeKind::Text]);
    }

    #[test]
    fn tau_below_minimum_keeps_whole_region() {
        let (patches, text, partition, map, attrs) = two_patch_setup();
        let hg = build_local(&patches, &text, &partition, &map, &attrs, -1.0).unwrap();
        assert_eq!(hg.hyperedges, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn fallback_keeps_top_patch() {
        let (patches, text, partition, map, attrs) = two_patch_setup();
        let hg = build_local(&patches, &text, &partition, &map, &attrs, 0.999).unwrap();
        assert_eq!(hg.hyperedges, vec![vec![0, 2]]);
    }

    #[test]
    fn lowering_tau_never_removes_members() {
        let mut rng = crate::dataio::rng::Xoshiro256::seed_from_u64(5);
        let patches = Tensor::new(10, 4, (0..40).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let text = Tensor::new(2, 4, (0..8).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let mut region_to_patch_indices = BTreeMap::new();
        region_to_patch_indices.insert(Region::Body, (0..10).collect::<Vec<_>>());
        region_to_patch_indices.insert(Region::Head, (0..10).collect::<Vec<_>>());
        let partition = PatchPartition {
            grid: (10, 1),
            region_to_patch_indices,
        };
        let map = regional_map(&[("a", Region::Head), ("b", Region::Head)]);
        let attrs = vec!["a".to_string(), "b".to_string()];
        let mut prev: Option<Vec<Vec<usize>>> = None;
        for tau in [0.9, 0.5, 0.1, -0.3, -0.9] {
            let hg = build_local(&patches, &text, &partition, &map, &attrs, tau).unwrap();
            if let Some(prev_edges) = &prev {
                for (old, new) in prev_edges.iter().zip(&hg.hyperedges) {
                    for v in old {
                        assert!(new.contains(v), "tau lowering removed member {v}");
                    }
                }
            }
            prev = Some(hg.hyperedges);
        }
    }

    #[test]
    fn global_identity_association() {
        let img = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let txt = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let y: Vec<&[u8]> = vec![&[1, 0], &[0, 1]];
        let hg = build_global(&img, &txt, &y).unwrap();
        assert_eq!(hg.hyperedges, vec![vec![0, 2], vec![1, 3]]);
        let inc = incidence_matrix(&hg);
        assert_eq!(inc.data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_complete_association_sizes() {
        let img = Tensor::zeros(3, 2);
        let txt = Tensor::zeros(2, 2);
        let y: Vec<&[u8]> = vec![&[1, 1], &[1, 1], &[1, 1]];
        let hg = build_global(&img, &txt, &y).unwrap();
        for edge in &hg.hyperedges {
            assert_eq!(edge.len(), 4); // B + 1
        }
    }

    #[test]
    fn global_empty_column_keeps_singleton() {
        let img = Tensor::zeros(2, 2);
        let txt = Tensor::zeros(2, 2);
        let y: Vec<&[u8]> = vec![&[1, 0], &[1, 0]];
        let hg = build_global(&img, &txt, &y).unwrap();
        assert_eq!(hg.hyperedges[1], vec![3]);
    }

    #[test]
    fn global_degree_equals_label_count() {
        let img = Tensor::zeros(3, 2);
        let txt = Tensor::zeros(4, 2);
        let y: Vec<&[u8]> = vec![&[1, 0, 1, 1], &[0, 0, 1, 0], &[1, 1, 1, 1]];
        let hg = build_global(&img, &txt, &y).unwrap();
        let deg = hg.degrees();
        for (i, row) in y.iter().enumerate() {
            let count: usize = row.iter().map(|v| *v as usize).sum();
            assert_eq!(deg[i], count);
        }
        // hyperedge size = 1 + column sum
        for j in 0..4 {
            let col: usize = y.iter().map(|row| row[j] as usize).sum();
            assert_eq!(hg.hyperedges[j].len(), col + 1);
        }
        // text node j belongs to hyperedge j and no other
        for j in 0..4 {
            for (e, edge) in hg.hyperedges.iter().enumerate() {
                assert_eq!(edge.contains(&(3 + j)), e == j);
            }
        }
    }

    #[test]
    fn incidence_of_empty_edge_list() {
        let hg = Hypergraph {
            node_features: Tensor::zeros(3, 2),
            node_kinds: vec![NodeKind::Image; 3],
            hyperedges: vec![],
            edge_labels: vec![],
            edge_weights: None,
        };
        let inc = incidence_matrix(&hg);
        assert_eq!(inc.shape(), [3, 0]);
    }

    #[test]
    fn incidence_row_sums_match_degrees() {
        let img = Tensor::zeros(3, 2);
        let txt = Tensor::zeros(2, 2);
        let y: Vec<&[u8]> = vec![&[1, 1], &[0, 1], &[1, 0]];
        let hg = build_global(&img, &txt, &y).unwrap();
        let inc = incidence_matrix(&hg);
        for (v, deg) in hg.degrees().iter().enumerate() {
            let row_sum: f64 = inc.row_slice(v).iter().sum();
            assert_eq!(row_sum as usize, *deg);
        }
    }

    #[test]
    fn top_k_association_deterministic() {
        let img = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let txt = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        let y = association_from_scores(&img, &txt, 2);
        assert_eq!(y, vec![vec![1, 1, 0, 0]]);
    }

    #[test]
    fn kg_weights_scale_image_members() {
        let img = Tensor::zeros(2, 2);
        let txt = Tensor::zeros(2, 2);
        let y: Vec<&[u8]> = vec![&[1, 1], &[0, 1]];
        let mut hg = build_global(&img, &txt, &y).unwrap();
        let atilde = vec![vec![1.0, 0.5], vec![0.25, 1.0]];
        apply_kg_edge_weights(&mut hg, &atilde, &y).unwrap();
        let w = hg.edge_weights.as_ref().unwrap();
        // edge 0 members: image 0 (positives {0,1}) -> mean(1.0, 0.5) = 0.75, text -> 1
        assert_eq!(w[0], vec![0.75, 1.0]);
        // edge 1 members: image 0 -> mean(0.25, 1.0) = 0.625, image 1 (positives {1}) -> 1.0, text -> 1
        assert_eq!(w[1], vec![0.625, 1.0, 1.0]);
    }
}
