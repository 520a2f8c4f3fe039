//! UniGNN-family hypergraph message passing, differentiable through the
//! tensor engine.
//!
//! All variants share stage one: each hyperedge aggregates the mean (or
//! weighted mean) of its member features. Stage two updates nodes:
//!
//! - UniGIN:   x' = ReLU(((1 + eps) x + sum_{e in E(v)} h_e) W)
//! - UniGCN:   x' = ReLU((1/sqrt(d_v)) sum_e (1/sqrt(b_e)) h_e W), isolated
//!   nodes pass x W; b_e is the mean member degree of e
//! - UniGAT:   attention over incident edges from LeakyReLU(a^T [W x | W h_e])
//! - UniGCNII: x' = ReLU(((1 - alpha) p + alpha x0)((1 - beta) I + beta W))
//!   with p the UniGCN propagation (no W) and x0 the layer-0 anchor
//!
//! Hyperedge topology is fixed per forward pass; gradients flow through the
//! node features and the layer parameters only.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::hypergraph::Hypergraph;
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite intermediate in {variant} at hyperedge {edge}")]
    NonFiniteEdge { variant: EncoderVariant, edge: usize },
    #[error("{variant}: {source}")]
    Tensor {
        variant: EncoderVariant,
        #[source]
        source: TensorError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    #[serde(rename = "unigin")]
    UniGin,
    #[serde(rename = "unigcn")]
    UniGcn,
    #[serde(rename = "unigat")]
    UniGat,
    #[serde(rename = "unigcn2")]
    UniGcn2,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 4] = [
        EncoderVariant::UniGin,
        EncoderVariant::UniGcn,
        EncoderVariant::UniGat,
        EncoderVariant::UniGcn2,
    ];
}

impl fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EncoderVariant::UniGin => "unigin",
            EncoderVariant::UniGcn => "unigcn",
            EncoderVariant::UniGat => "unigat",
            EncoderVariant::UniGcn2 => "unigcn2",
        };
        f.write_str(s)
    }
}

impl FromStr for EncoderVariant {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unigin" => Ok(EncoderVariant::UniGin),
            "unigcn" => Ok(EncoderVariant::UniGcn),
            "unigat" => Ok(EncoderVariant::UniGat),
            "unigcn2" => Ok(EncoderVariant::UniGcn2),
            other => Err(EncoderError::Invalid(format!(
                "unknown encoder variant \"{other}\" (expected unigin|unigcn|unigat|unigcn2)"
            ))),
        }
    }
}

/// Parameters of one message-passing layer.
#[derive(Debug, Clone)]
pub struct UniLayerParams {
    pub variant: EncoderVariant,
    /// d_in x d_out projection.
    pub weight: Tensor,
    /// UniGIN: learnable 1x1 epsilon.
    pub gin_epsilon: Option<Tensor>,
    /// UniGAT: (2 d_out) x 1 attention vector.
    pub gat_attention: Option<Tensor>,
    /// UniGAT: LeakyReLU negative slope.
    pub gat_slope: f64,
    /// UniGCNII: initial-residual strength.
    pub gcn2_alpha: f64,
    /// UniGCNII: identity-mapping strength, ln(layer_index / lambda + 1).
    pub gcn2_beta: f64,
}

pub const DEFAULT_GAT_SLOPE: f64 = 0.2;
pub const DEFAULT_GCN2_ALPHA: f64 = 0.1;
pub const DEFAULT_GCN2_LAMBDA: f64 = 1.0;

impl UniLayerParams {
    pub fn unigin(weight: Tensor, epsilon: Tensor) -> Self {
        UniLayerParams {
            variant: EncoderVariant::UniGin,
            weight,
            gin_epsilon: Some(epsilon),
            gat_attention: None,
            gat_slope: DEFAULT_GAT_SLOPE,
            gcn2_alpha: DEFAULT_GCN2_ALPHA,
            gcn2_beta: 0.0,
        }
    }

    pub fn unigcn(weight: Tensor) -> Self {
        UniLayerParams {
            variant: EncoderVariant::UniGcn,
            weight,
            gin_epsilon: None,
            gat_attention: None,
            gat_slope: DEFAULT_GAT_SLOPE,
            gcn2_alpha: DEFAULT_GCN2_ALPHA,
            gcn2_beta: 0.0,
        }
    }

    pub fn unigat(weight: Tensor, attention: Tensor, slope: f64) -> Self {
        UniLayerParams {
            variant: EncoderVariant::UniGat,
            weight,
            gin_epsilon: None,
            gat_attention: Some(attention),
            gat_slope: slope,
            gcn2_alpha: DEFAULT_GCN2_ALPHA,
            gcn2_beta: 0.0,
        }
    }

    /// `layer_index` is 1-based within the stack; the identity-mapping
    /// strength decays with depth as ln(lambda / layer_index + 1).
    pub fn unigcn2(weight: Tensor, alpha: f64, layer_index: usize, lambda: f64) -> Self {
        UniLayerParams {
            variant: EncoderVariant::UniGcn2,
            weight,
            gin_epsilon: None,
            gat_attention: None,
            gat_slope: DEFAULT_GAT_SLOPE,
            gcn2_alpha: alpha,
            gcn2_beta: (lambda / layer_index as f64 + 1.0).ln(),
        }
    }

    fn validate(&self, d_in: usize) -> Result<(), EncoderError> {
        if self.weight.rows() != d_in {
            return Err(EncoderError::Invalid(format!(
                "{}: weight expects {} input dims, features have {d_in}",
                self.variant,
                self.weight.rows()
            )));
        }
        if !self.weight.is_finite() {
            return Err(EncoderError::Invalid(format!(
                "{}: non-finite weight",
                self.variant
            )));
        }
        let d_out = self.weight.cols();
        if d_out == 0 {
            return Err(EncoderError::Invalid(format!("{}: d_out must be > 0", self.variant)));
        }
        match self.variant {
            EncoderVariant::UniGin if self.gin_epsilon.is_none() => Err(EncoderError::Invalid(
                "unigin layer missing epsilon".into(),
            )),
            EncoderVariant::UniGat => match &self.gat_attention {
                None => Err(EncoderError::Invalid("unigat layer missing attention vector".into())),
                Some(a) if a.shape() != [2 * d_out, 1] => Err(EncoderError::Invalid(format!(
                    "unigat attention must be {} x 1, got {:?}",
                    2 * d_out,
                    a.shape()
                ))),
                _ => Ok(()),
            },
            EncoderVariant::UniGcn2 if self.weight.rows() != d_out => {
                Err(EncoderError::Invalid(format!(
                    "unigcn2 needs a square weight for the identity residual, got {:?}",
                    self.weight.shape()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Encoded node features with block helpers matching the fixed node order.
pub struct EncodedHypergraph {
    pub node_outputs: Tensor,
    text_lo: usize,
}

impl EncodedHypergraph {
    /// Text-node rows (one per attribute).
    pub fn text_block(&self, tape: &Tape) -> Result<Tensor, TensorError> {
        tape.slice_rows(&self.node_outputs, self.text_lo, self.node_outputs.rows())
    }

    /// Leading rows: patches for local graphs, images for global graphs.
    pub fn leading_block(&self, tape: &Tape) -> Result<Tensor, TensorError> {
        tape.slice_rows(&self.node_outputs, 0, self.text_lo)
    }

    /// A single leading row (e.g. one image of the batch).
    pub fn leading_row(&self, tape: &Tape, i: usize) -> Result<Tensor, TensorError> {
        tape.slice_rows(&self.node_outputs, i, i + 1)
    }
}

/// Stage one: mean (or weighted mean) of member node features per hyperedge.
pub fn edge_aggregate(tape: &Tape, hg: &Hypergraph, x: &Tensor) -> Result<Tensor, EncoderError> {
    if x.rows() != hg.n_nodes() {
        return Err(EncoderError::Invalid(format!(
            "features have {} rows, hypergraph has {} nodes",
            x.rows(),
            hg.n_nodes()
        )));
    }
    let agg = aggregation_matrix(hg);
    let agg_const = tape.constant(&agg);
    tape.matmul(&agg_const, x).map_err(|source| EncoderError::Tensor {
        variant: EncoderVariant::UniGcn,
        source,
    })
}

/// E x V constant matrix whose rows average each edge's members.
fn aggregation_matrix(hg: &Hypergraph) -> Tensor {
    let mut agg = Tensor::zeros(hg.n_edges(), hg.n_nodes());
    for (e, edge) in hg.hyperedges.iter().enumerate() {
        if edge.is_empty() {
            continue;
        }
        match hg.edge_weights.as_ref().map(|w| &w[e]) {
            Some(weights) => {
                let total: f64 = weights.iter().sum();
                if total > 0.0 {
                    for (v, w) in edge.iter().zip(weights) {
                        agg.set(e, *v, w / total);
                    }
                }
            }
            None => {
                let inv = 1.0 / edge.len() as f64;
                for v in edge {
                    agg.set(e, *v, inv);
                }
            }
        }
    }
    agg
}

/// V x E binary incidence (constant).
fn incidence_const(hg: &Hypergraph) -> Tensor {
    crate::hypergraph::incidence_matrix(hg)
}

/// V x E propagation matrix (1/sqrt(d_v)) (1/sqrt(b_e)) over incident pairs;
/// rows of isolated nodes stay zero.
fn propagation_matrix(hg: &Hypergraph) -> Tensor {
    let degrees = hg.degrees();
    let mut b_e = vec![0.0; hg.n_edges()];
    for (e, edge) in hg.hyperedges.iter().enumerate() {
        if edge.is_empty() {
            continue;
        }
        b_e[e] = edge.iter().map(|v| degrees[*v] as f64).sum::<f64>() / edge.len() as f64;
    }
    let mut prop = Tensor::zeros(hg.n_nodes(), hg.n_edges());
    for (e, edge) in hg.hyperedges.iter().enumerate() {
        for v in edge {
            let dv = degrees[*v] as f64;
            if dv > 0.0 && b_e[e] > 0.0 {
                prop.set(*v, e, 1.0 / (dv.sqrt() * b_e[e].sqrt()));
            }
        }
    }
    prop
}

/// V x d constant mask with ones on rows of isolated nodes.
fn isolated_mask(hg: &Hypergraph, d: usize) -> Option<Tensor> {
    let degrees = hg.degrees();
    if degrees.iter().all(|d| *d > 0) {
        return None;
    }
    let mut mask = Tensor::zeros(hg.n_nodes(), d);
    for (v, deg) in degrees.iter().enumerate() {
        if *deg == 0 {
            for c in 0..d {
                mask.set(v, c, 1.0);
            }
        }
    }
    Some(mask)
}

/// One message-passing layer. `anchor` supplies the layer-0 features for
/// UniGCNII; it defaults to `x` so a single layer anchors to its own input.
pub fn unignn_forward(
    tape: &Tape,
    hg: &Hypergraph,
    x: &Tensor,
    params: &UniLayerParams,
    anchor: Option<&Tensor>,
) -> Result<EncodedHypergraph, EncoderError> {
    params.validate(x.cols())?;
    let variant = params.variant;
    let wrap = |source: TensorError| EncoderError::Tensor { variant, source };

    let h_e = edge_aggregate(tape, hg, x)?;
    if tape.is_checked() {
        for e in 0..h_e.rows() {
            if h_e.row_slice(e).iter().any(|v| !v.is_finite()) {
                return Err(EncoderError::NonFiniteEdge { variant, edge: e });
            }
        }
    }

    let node_outputs = match variant {
        EncoderVariant::UniGin => {
            let eps = params.gin_epsilon.as_ref().expect("validated");
            let one_plus_eps = tape.add(eps, &Tensor::scalar(1.0)).map_err(wrap)?;
            let self_term = tape.scale_by(x, &one_plus_eps).map_err(wrap)?;
            let inc = tape.constant(&incidence_const(hg));
            let neigh = tape.matmul(&inc, &h_e).map_err(wrap)?;
            let combined = tape.add(&self_term, &neigh).map_err(wrap)?;
            let projected = tape.matmul(&combined, &params.weight).map_err(wrap)?;
            tape.relu(&projected).map_err(wrap)?
        }
        EncoderVariant::UniGcn => {
            let prop = tape.constant(&propagation_matrix(hg));
            let mut propagated = tape.matmul(&prop, &h_e).map_err(wrap)?;
            if let Some(mask) = isolated_mask(hg, x.cols()) {
                let masked_self = tape.mul(x, &tape.constant(&mask)).map_err(wrap)?;
                propagated = tape.add(&propagated, &masked_self).map_err(wrap)?;
            }
            let projected = tape.matmul(&propagated, &params.weight).map_err(wrap)?;
            tape.relu(&projected).map_err(wrap)?
        }
        EncoderVariant::UniGat => {
            let d_out = params.weight.cols();
            let a = params.gat_attention.as_ref().expect("validated");
            let wx = tape.matmul(x, &params.weight).map_err(wrap)?;
            let whe = tape.matmul(&h_e, &params.weight).map_err(wrap)?;
            let a_node = tape.slice_rows(a, 0, d_out).map_err(wrap)?;
            let a_edge = tape.slice_rows(a, d_out, 2 * d_out).map_err(wrap)?;
            let p = tape.matmul(&wx, &a_node).map_err(wrap)?; // V x 1
            let q = tape.matmul(&whe, &a_edge).map_err(wrap)?; // E x 1
            let ones_row = tape.constant(&Tensor::ones(1, hg.n_edges()));
            let ones_col = tape.constant(&Tensor::ones(hg.n_nodes(), 1));
            let p_spread = tape.matmul(&p, &ones_row).map_err(wrap)?;
            let q_t = tape.transpose(&q).map_err(wrap)?;
            let q_spread = tape.matmul(&ones_col, &q_t).map_err(wrap)?;
            let scores = tape.add(&p_spread, &q_spread).map_err(wrap)?;
            let activated = tape.leaky_relu(&scores, params.gat_slope).map_err(wrap)?;
            let mask = tape.constant(&incidence_const(hg));
            let attention = tape.masked_softmax_rows(&activated, &mask).map_err(wrap)?;
            let mixed = tape.matmul(&attention, &whe).map_err(wrap)?;
            tape.relu(&mixed).map_err(wrap)?
        }
        EncoderVariant::UniGcn2 => {
            let x0 = anchor.unwrap_or(x);
            if x0.cols() != params.weight.cols() {
                return Err(EncoderError::Invalid(format!(
                    "unigcn2 anchor width {} does not match layer width {}",
                    x0.cols(),
                    params.weight.cols()
                )));
            }
            let prop = tape.constant(&propagation_matrix(hg));
            let mut propagated = tape.matmul(&prop, &h_e).map_err(wrap)?;
            if let Some(mask) = isolated_mask(hg, x.cols()) {
                let masked_self = tape.mul(x, &tape.constant(&mask)).map_err(wrap)?;
                propagated = tape.add(&propagated, &masked_self).map_err(wrap)?;
            }
            let (alpha, beta) = (params.gcn2_alpha, params.gcn2_beta);
            let blended = tape
                .add(
                    &tape.scale(&propagated, 1.0 - alpha).map_err(wrap)?,
                    &tape.scale(x0, alpha).map_err(wrap)?,
                )
                .map_err(wrap)?;
            let mapped = tape.matmul(&blended, &params.weight).map_err(wrap)?;
            let residual = tape
                .add(
                    &tape.scale(&blended, 1.0 - beta).map_err(wrap)?,
                    &tape.scale(&mapped, beta).map_err(wrap)?,
                )
                .map_err(wrap)?;
            tape.relu(&residual).map_err(wrap)?
        }
    };

    let (text_lo, _) = hg.text_range();
    Ok(EncodedHypergraph {
        node_outputs,
        text_lo,
    })
}

/// Apply a layer stack and return the text-node rows (one per attribute).
pub fn encode_local(
    tape: &Tape,
    hg: &Hypergraph,
    x: &Tensor,
    layers: &[UniLayerParams],
) -> Result<Tensor, EncoderError> {
    let out = run_stack(tape, hg, x, layers)?;
    let (text_lo, text_hi) = hg.text_range();
    tape.slice_rows(&out, text_lo, text_hi)
        .map_err(|source| EncoderError::Tensor {
            variant: layers.first().map(|l| l.variant).unwrap_or(EncoderVariant::UniGcn),
            source,
        })
}

/// Apply a layer stack and return all node rows (image block then text block).
pub fn encode_global(
    tape: &Tape,
    hg: &Hypergraph,
    x: &Tensor,
    layers: &[UniLayerParams],
) -> Result<EncodedHypergraph, EncoderError> {
    let out = run_stack(tape, hg, x, layers)?;
    let (text_lo, _) = hg.text_range();
    Ok(EncodedHypergraph {
        node_outputs: out,
        text_lo,
    })
}

fn run_stack(
    tape: &Tape,
    hg: &Hypergraph,
    x: &Tensor,
    layers: &[UniLayerParams],
) -> Result<Tensor, EncoderError> {
    let anchor = x.clone();
    let mut current = if x.node.is_some() {
        x.clone()
    } else {
        tape.constant(x)
    };
    for layer in layers {
        current = unignn_forward(tape, hg, &current, layer, Some(&anchor))?.node_outputs;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::NodeKind;

    fn tiny_hypergraph(edges: Vec<Vec<usize>>, features: Tensor) -> Hypergraph {
        let labels = (0..edges.len()).collect();
        Hypergraph {
            node_kinds: vec![NodeKind::Patch; features.rows()],
            node_features: features,
            hyperedges: edges,
            edge_labels: labels,
            edge_weights: None,
        }
    }

    #[test]
    fn edge_aggregate_mean_and_singleton() {
        let x = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0], vec![5.0, 7.0]]).unwrap();
        let hg = tiny_hypergraph(vec![vec![0, 1], vec![2]], x.clone());
        let tape = Tape::new();
        let xt = tape.constant(&x);
        let h_e = edge_aggregate(&tape, &hg, &xt).unwrap();
        assert_eq!(h_e.row_slice(0), &[1.0, 1.0]);
        assert_eq!(h_e.row_slice(1), &[5.0, 7.0]);
    }

    #[test]
    fn edge_aggregate_zero_features() {
        let x = Tensor::zeros(3, 2);
        let hg = tiny_hypergraph(vec![vec![0, 1, 2]], x.clone());
        let tape = Tape::new();
        let h_e = edge_aggregate(&tape, &hg, &tape.constant(&x)).unwrap();
        assert!(h_e.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unigin_identity_weight_hand_example() {
        // One edge {v0, v1}, x0 = (2,0), x1 = (0,2), eps = 0, W = I:
        // h_e = (1,1); x0' = ReLU(x0 + h_e) = (3,1).
        let x = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let hg = tiny_hypergraph(vec![vec![0, 1]], x.clone());
        let tape = Tape::new();
        let params = UniLayerParams::unigin(Tensor::eye(2), Tensor::scalar(0.0));
        let out = unignn_forward(&tape, &hg, &tape.constant(&x), &params, None).unwrap();
        assert_eq!(out.node_outputs.row_slice(0), &[3.0, 1.0]);
        assert_eq!(out.node_outputs.row_slice(1), &[1.0, 3.0]);
    }

    #[test]
    fn zero_weight_annihilates_all_variants() {
        let x = Tensor::from_rows(&[vec![1.0, -0.5], vec![0.25, 2.0], vec![1.5, 0.5]]).unwrap();
        let hg = tiny_hypergraph(vec![vec![0, 1], vec![1, 2]], x.clone());
        let zero_w = Tensor::zeros(2, 2);
        let layers = [
            UniLayerParams::unigin(zero_w.clone(), Tensor::scalar(0.0)),
            UniLayerParams::unigcn(zero_w.clone()),
            UniLayerParams::unigat(zero_w.clone(), Tensor::zeros(4, 1), 0.2),
        ];
        for params in &layers {
            let tape = Tape::new();
            let out = unignn_forward(&tape, &hg, &tape.constant(&x), params, None).unwrap();
            assert!(
                out.node_outputs.data().iter().all(|v| *v == 0.0),
                "{} not annihilated",
                params.variant
            );
        }
    }

    #[test]
    fn isolated_node_unigin_self_term_only() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 5.0]]).unwrap();
        let hg = tiny_hypergraph(vec![vec![0, 1]], x.clone());
        let tape = Tape::new();
        let params = UniLayerParams::unigin(Tensor::eye(2), Tensor::scalar(0.5));
        let out = unignn_forward(&tape, &hg, &tape.constant(&x), &params, None).unwrap();
        // node 2 is isolated: ReLU((1 + 0.5) * x2)
        assert_eq!(out.node_outputs.row_slice(2), &[0.0, 7.5]);
    }

    #[test]
    fn isolated_node_unigcn_passes_projection() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 5.0]]).unwrap();
        let hg = tiny_hypergraph(vec![vec![0, 1]], x.clone());
        let tape = Tape::new();
        let params = UniLayerParams::unigcn(Tensor::eye(2));
        let out = unignn_forward(&tape, &hg, &tape.constant(&x), &params, None).unwrap();
        assert_eq!(out.node_outputs.row_slice(2), &[0.0, 5.0]);
    }

    #[test]
    fn encode_local_zero_layers_returns_text_features() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.3]]).unwrap();
        let mut hg = tiny_hypergraph(vec![vec![0, 1, 2]], x.clone());
        hg.node_kinds = vec![NodeKind::Patch, NodeKind::Patch, NodeKind::Text];
        let tape = Tape::new();
        let h_local = encode_local(&tape, &hg, &tape.constant(&x), &[]).unwrap();
        assert_eq!(h_local.shape(), [1, 2]);
        assert_eq!(h_local.row_slice(0), &[0.7, 0.3]);
    }

    #[test]
    fn encode_local_unigin_identity_layer_hand_value() {
        // Patches (1,0),(0,1); text t = (0.6, 0.8); edge {p0, text}.
        // h_e = ((1,0) + (0.6,0.8)) / 2 = (0.8, 0.4);
        // text' = ReLU(t + h_e) = (1.4, 1.2).
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let mut hg = tiny_hypergraph(vec![vec![0, 2]], x.clone());
        hg.node_kinds = vec![NodeKind::Patch, NodeKind::Patch, NodeKind::Text];
        let tape = Tape::new();
        let layer = UniLayerParams::unigin(Tensor::eye(2), Tensor::scalar(0.0));
        let h_local = encode_local(&tape, &hg, &tape.constant(&x), &[layer]).unwrap();
        let row = h_local.row_slice(0);
        assert!((row[0] - 1.4).abs() < 1e-12 && (row[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn unigcn2_alpha_one_depends_only_on_anchor() {
        let x_a = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let x_b = Tensor::from_rows(&[vec![9.0, -3.0], vec![4.0, 4.0]]).unwrap();
        let anchor = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.1, 0.9]]).unwrap();
        let hg = tiny_hypergraph(vec![vec![0, 1]], x_a.clone());
        let w = Tensor::from_rows(&[vec![0.5, 0.25], vec![-0.4, 0.8]]).unwrap();
        let params = UniLayerParams::unigcn2(w, 1.0, 1, DEFAULT_GCN2_LAMBDA);
        let run = |x: &Tensor| {
            let tape = Tape::new();
            let anchor_t = tape.constant(&anchor);
            unignn_forward(&tape, &hg, &tape.constant(x), &params, Some(&anchor_t))
                .unwrap()
                .node_outputs
                .data()
                .to_vec()
        };
        assert_eq!(run(&x_a), run(&x_b));
    }

    #[test]
    fn duplicated_image_rows_duplicate_outputs() {
        let x = Tensor::from_rows(&[vec![1.0, 0.5], vec![1.0, 0.5], vec![0.2, 0.9]]).unwrap();
        // both image nodes belong to the same edge with the text node
        let mut hg = tiny_hypergraph(vec![vec![0, 1, 2]], x.clone());
        hg.node_kinds = vec![NodeKind::Image, NodeKind::Image, NodeKind::Text];
        for variant in EncoderVariant::ALL {
            let w = Tensor::from_rows(&[vec![0.4, -0.2], vec![0.3, 0.6]]).unwrap();
            let params = match variant {
                EncoderVariant::UniGin => UniLayerParams::unigin(w, Tensor::scalar(0.1)),
                EncoderVariant::UniGcn => UniLayerParams::unigcn(w),
                EncoderVariant::UniGat => UniLayerParams::unigat(
                    w,
                    Tensor::col(vec![0.3, -0.1, 0.2, 0.5]),
                    0.2,
                ),
                EncoderVariant::UniGcn2 => UniLayerParams::unigcn2(w, 0.1, 1, 1.0),
            };
            let tape = Tape::new();
            let out = unignn_forward(&tape, &hg, &tape.constant(&x), &params, None).unwrap();
            assert_eq!(
                out.node_outputs.row_slice(0),
                out.node_outputs.row_slice(1),
                "{variant}: duplicated inputs should give duplicated outputs"
            );
        }
    }
}
