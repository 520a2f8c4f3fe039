//! Batch forward pass: token encoding, hypergraph construction and encoding,
//! fusion, prediction heads, and the loss stack.

use super::blocks::transformer_stack;
use super::{BoundParams, Model, ModelError, N_REGION_TOKENS};
use crate::dataio::RegionMap;
use crate::encoders::{encode_global, encode_local, UniLayerParams};
use crate::hypergraph::{
    apply_kg_edge_weights, association_from_scores, build_global, build_local, PatchPartition,
};
use crate::kgraph::SquareMatrix;
use crate::tensor::{Tape, Tensor};

/// Probabilities are clamped into [PROB_CLAMP, 1 - PROB_CLAMP] before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Ground-truth labels drive the global association.
    Train,
    /// Top-k cosine association replaces the unknown labels.
    Eval,
}

/// Frozen inputs for one batch.
pub struct BatchInput<'a> {
    /// Per-image patch features (N_p x d each).
    pub patch_blocks: Vec<Tensor>,
    /// Per-image binary label rows (used for the global hypergraph in
    /// training and for losses).
    pub label_rows: Vec<&'a [u8]>,
    /// Attribute text features, M x d.
    pub text: &'a Tensor,
    pub partition: &'a PatchPartition,
    pub region_map: &'a RegionMap,
    pub attr_names: &'a [String],
    /// Knowledge-graph edge weights for the experimental weighting flag.
    pub atilde: Option<&'a SquareMatrix>,
}

/// Differentiable outputs of one batch.
pub struct BatchOutput {
    /// B x M attribute probabilities, strictly inside (0, 1).
    pub scores: Tensor,
    /// B x M global-local similarity probabilities.
    pub p_gl: Tensor,
    /// Encoded global hypergraph rows ((B + M) x d); probe point for tests.
    pub h_global: Tensor,
    /// Per-image encoded local hypergraph text rows (M x d each).
    pub h_locals: Vec<Tensor>,
}

/// Run the model over one batch.
pub fn forward_batch(
    model: &Model,
    tape: &Tape,
    bound: &BoundParams,
    input: &BatchInput,
    mode: ForwardMode,
) -> Result<BatchOutput, ModelError> {
    let cfg = &model.config;
    let b = input.patch_blocks.len();
    let m = input.attr_names.len();
    if b == 0 {
        return Err(ModelError::Config("empty batch".into()));
    }
    if input.label_rows.len() != b {
        return Err(ModelError::Config("label rows do not match batch size".into()));
    }
    let text_const = tape.constant(input.text);

    // Token encoder per image.
    let mut c_gs = Vec::with_capacity(b);
    let mut c_locals = Vec::with_capacity(b);
    let mut h_ps = Vec::with_capacity(b);
    for block in &input.patch_blocks {
        let (c_g, c_loc, h_p) = encode_image(model, tape, bound, block)?;
        c_gs.push(c_g);
        c_locals.push(c_loc);
        h_ps.push(h_p);
    }

    // Local hypergraph per image. Topology comes from the current patch
    // values; message passing runs on the live tape features.
    let local_layers: Vec<UniLayerParams> = model
        .local_hg_layers
        .iter()
        .map(|l| l.bind(bound, cfg.variant))
        .collect();
    let mut h_locals = Vec::with_capacity(b);
    for h_p in &h_ps {
        if cfg.use_local_hg {
            let hg = build_local(
                h_p,
                input.text,
                input.partition,
                input.region_map,
                input.attr_names,
                cfg.tau,
            )?;
            let x = tape.concat_rows(&[h_p, &text_const])?;
            h_locals.push(encode_local(tape, &hg, &x, &local_layers)?);
        } else {
            h_locals.push(text_const.clone());
        }
    }

    // Batch global hypergraph over image CLS tokens and text nodes.
    let c_g_refs: Vec<&Tensor> = c_gs.iter().collect();
    let c_g_all = tape.concat_rows(&c_g_refs)?;
    let associations: Vec<Vec<u8>> = match mode {
        ForwardMode::Train => input.label_rows.iter().map(|r| r.to_vec()).collect(),
        ForwardMode::Eval => association_from_scores(&c_g_all, input.text, cfg.k_assoc),
    };
    // With the global block disabled its rows are dropped from fusion
    // entirely; the unencoded stack is still produced for probes.
    let assoc_refs: Vec<&[u8]> = associations.iter().map(Vec::as_slice).collect();
    let h_global = if cfg.use_global_hg {
        let mut hg = build_global(&c_g_all, input.text, &assoc_refs)?;
        if cfg.use_kg_weights {
            if let Some(atilde) = input.atilde {
                apply_kg_edge_weights(&mut hg, atilde, &assoc_refs)?;
            }
        }
        let x_global = tape.concat_rows(&[&c_g_all, &text_const])?;
        let global_layers: Vec<UniLayerParams> = model
            .global_hg_layers
            .iter()
            .map(|l| l.bind(bound, cfg.variant))
            .collect();
        encode_global(tape, &hg, &x_global, &global_layers)?.node_outputs
    } else {
        tape.concat_rows(&[&c_g_all, &text_const])?
    };

    // Fusion and heads per image.
    let region_mask = tape.constant(&region_selection_mask(input.region_map, input.attr_names, m)?);
    let mut score_rows = Vec::with_capacity(b);
    let mut gl_rows = Vec::with_capacity(b);
    for i in 0..b {
        let mut parts: Vec<Tensor> = vec![h_locals[i].clone()];
        if cfg.use_global_hg {
            parts.push(tape.slice_rows(&h_global, i, i + 1)?);
            parts.push(tape.slice_rows(&h_global, b, b + m)?);
        }
        parts.push(c_gs[i].clone());
        parts.push(c_locals[i].clone());
        parts.push(h_ps[i].clone());
        let part_refs: Vec<&Tensor> = parts.iter().collect();
        let z = tape.concat_rows(&part_refs)?;
        let fused = transformer_stack(tape, &z, &model.fusion_blocks, bound, cfg.heads)?;
        score_rows.push(predict(
            tape,
            &fused,
            m,
            bound.get(model.head_w),
            bound.get(model.head_b),
        )?);
        gl_rows.push(gl_similarity(
            tape,
            &c_gs[i],
            &c_locals[i],
            &text_const,
            &region_mask,
        )?);
    }
    let score_refs: Vec<&Tensor> = score_rows.iter().collect();
    let gl_refs: Vec<&Tensor> = gl_rows.iter().collect();
    Ok(BatchOutput {
        scores: tape.concat_rows(&score_refs)?,
        p_gl: tape.concat_rows(&gl_refs)?,
        h_global,
        h_locals,
    })
}

/// Token encoder: [CLS_g; CLS_locals; patches] + positional encodings through
/// the pre-norm block stack, split back into its three parts.
pub fn encode_image(
    model: &Model,
    tape: &Tape,
    bound: &BoundParams,
    patches: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), ModelError> {
    if patches.rows() != model.n_patches || patches.cols() != model.config.d {
        return Err(ModelError::Config(format!(
            "patch block is {:?}, model expects {} x {}",
            patches.shape(),
            model.n_patches,
            model.config.d
        )));
    }
    let patches_const = tape.constant(patches);
    let seq = tape.concat_rows(&[
        bound.get(model.cls_g),
        bound.get(model.cls_locals),
        &patches_const,
    ])?;
    let seq = tape.add(&seq, bound.get(model.posenc))?;
    let encoded = transformer_stack(tape, &seq, &model.encoder_blocks, bound, model.config.heads)?;
    let c_g = tape.slice_rows(&encoded, 0, 1)?;
    let c_loc = tape.slice_rows(&encoded, 1, 1 + N_REGION_TOKENS)?;
    let h_p = tape.slice_rows(&encoded, 1 + N_REGION_TOKENS, model.seq_len())?;
    Ok((c_g, c_loc, h_p))
}

/// Shared affine score head over the fused per-attribute tokens (the first M
/// rows of the fused sequence). Returns a 1 x M probability row.
pub fn predict(
    tape: &Tape,
    fused: &Tensor,
    m: usize,
    head_w: &Tensor,
    head_b: &Tensor,
) -> Result<Tensor, ModelError> {
    let attr_tokens = tape.slice_rows(fused, 0, m)?;
    let logits = tape.add_rows(&tape.matmul(&attr_tokens, head_w)?, head_b)?;
    let probs = tape.sigmoid(&logits)?;
    Ok(tape.transpose(&probs)?)
}

/// R x M constant selecting each attribute's region CLS row.
fn region_selection_mask(
    region_map: &RegionMap,
    attr_names: &[String],
    m: usize,
) -> Result<Tensor, ModelError> {
    let mut mask = Tensor::zeros(N_REGION_TOKENS, m);
    for (j, name) in attr_names.iter().enumerate() {
        let region = region_map
            .region_of(name)
            .ok_or_else(|| ModelError::Config(format!("attribute {name} missing from region map")))?;
        mask.set(region.index(), j, 1.0);
    }
    Ok(mask)
}

/// Global-local similarity head:
/// p_j = sigmoid((<c_g, t_j> + <c_{l, region(j)}, t_j>) / (2 sqrt(d))).
pub fn gl_similarity(
    tape: &Tape,
    c_g: &Tensor,
    c_locals: &Tensor,
    text: &Tensor,
    region_mask: &Tensor,
) -> Result<Tensor, ModelError> {
    let d = c_g.cols();
    let text_t = tape.transpose(text)?;
    let global_sim = tape.matmul(c_g, &text_t)?; // 1 x M
    let local_all = tape.matmul(c_locals, &text_t)?; // R x M
    let selected = tape.mul(&local_all, region_mask)?;
    let local_sim = tape.col_sums(&selected)?; // 1 x M
    let logits = tape.scale(
        &tape.add(&global_sim, &local_sim)?,
        1.0 / (2.0 * (d as f64).sqrt()),
    )?;
    Ok(tape.sigmoid(&logits)?)
}

/// Per-attribute loss weights w_j = exp(-r_j).
pub fn attr_weights(frequencies: &[f64]) -> Tensor {
    Tensor::row(frequencies.iter().map(|r| (-r).exp()).collect())
}

/// Mean binary cross-entropy over all entries, probabilities clamped first.
/// `weights` (1 x M) scales each attribute column when present.
fn bce_mean(
    tape: &Tape,
    probs: &Tensor,
    targets: &Tensor,
    weights: Option<&Tensor>,
) -> Result<Tensor, ModelError> {
    if probs.shape() != targets.shape() {
        return Err(ModelError::Tensor(crate::tensor::TensorError::DimMismatch {
            op: "bce",
            lhs: probs.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        }));
    }
    let clamped = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let y = tape.constant(targets);
    let ones = tape.constant(&Tensor::ones(probs.rows(), probs.cols()));
    let pos = tape.mul(&y, &tape.log(&clamped)?)?;
    let neg = tape.mul(
        &tape.sub(&ones, &y)?,
        &tape.log(&tape.sub(&ones, &clamped)?)?,
    )?;
    let mut element_loss = tape.scale(&tape.add(&pos, &neg)?, -1.0)?;
    if let Some(w) = weights {
        element_loss = tape.mul_rows(&element_loss, w)?;
    }
    Ok(tape.mean_all(&element_loss)?)
}

/// Global-local similarity loss: mean BCE over batch and attributes.
pub fn loss_gl(tape: &Tape, p_gl: &Tensor, targets: &Tensor) -> Result<Tensor, ModelError> {
    bce_mean(tape, p_gl, targets, None)
}

/// Frequency-weighted classification loss: mean over batch and attributes of
/// w_j * BCE.
pub fn loss_cls(
    tape: &Tape,
    scores: &Tensor,
    targets: &Tensor,
    weights: &Tensor,
) -> Result<Tensor, ModelError> {
    bce_mean(tape, scores, targets, Some(weights))
}

/// L = L_cls + alpha * L_gl.
pub fn total_loss(
    tape: &Tape,
    l_cls: &Tensor,
    l_gl: &Tensor,
    alpha: f64,
) -> Result<Tensor, ModelError> {
    Ok(tape.add(l_cls, &tape.scale(l_gl, alpha)?)?)
}

/// Binary label rows as an n x m tensor of 0.0 / 1.0.
pub fn labels_to_tensor(rows: &[&[u8]]) -> Tensor {
    let m = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * m);
    for r in rows {
        data.extend(r.iter().map(|v| *v as f64));
    }
    Tensor::new(rows.len(), m, data).expect("label rows are rectangular")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_zero_head_gives_half() {
        let tape = Tape::new();
        let fused = tape.constant(&Tensor::new(4, 3, vec![0.3; 12]).unwrap());
        let w = tape.constant(&Tensor::zeros(3, 1));
        let b = tape.constant(&Tensor::zeros(1, 1));
        let p = predict(&tape, &fused, 2, &w, &b).unwrap();
        assert_eq!(p.shape(), [1, 2]);
        assert!(p.data().iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn predict_saturates_with_large_bias() {
        let tape = Tape::new();
        let fused = tape.constant(&Tensor::new(2, 3, vec![0.1; 6]).unwrap());
        let w = tape.constant(&Tensor::zeros(3, 1));
        let b = tape.constant(&Tensor::scalar(50.0));
        let p = predict(&tape, &fused, 2, &w, &b).unwrap();
        assert!(p.data().iter().all(|v| (1.0 - *v).abs() < 1e-12));
    }

    #[test]
    fn predict_unit_token_sigmoid_one() {
        let tape = Tape::new();
        let fused = tape.constant(&Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let w = tape.constant(&Tensor::col(vec![1.0, 0.0]));
        let b = tape.constant(&Tensor::zeros(1, 1));
        let p = predict(&tape, &fused, 1, &w, &b).unwrap();
        assert!((p.item() - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn gl_zero_cls_gives_half() {
        let tape = Tape::new();
        let c_g = tape.constant(&Tensor::zeros(1, 4));
        let c_l = tape.constant(&Tensor::zeros(N_REGION_TOKENS, 4));
        let text = tape.constant(&Tensor::ones(3, 4));
        let mask = tape.constant(&Tensor::zeros(N_REGION_TOKENS, 3));
        let p = gl_similarity(&tape, &c_g, &c_l, &text, &mask).unwrap();
        assert!(p.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn gl_unit_vectors_quarter_logit() {
        // d = 4, c_g = t_j = e1, c_l = 0 -> sigmoid(1/4)
        let tape = Tape::new();
        let c_g = tape.constant(&Tensor::row(vec![1.0, 0.0, 0.0, 0.0]));
        let c_l = tape.constant(&Tensor::zeros(N_REGION_TOKENS, 4));
        let text = tape.constant(&Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap());
        let mut mask = Tensor::zeros(N_REGION_TOKENS, 1);
        mask.set(0, 0, 1.0);
        let mask = tape.constant(&mask);
        let p = gl_similarity(&tape, &c_g, &c_l, &text, &mask).unwrap();
        assert!((p.item() - 0.56218).abs() < 1e-5, "{}", p.item());
    }

    #[test]
    fn gl_logit_scales_linearly_with_cls() {
        let tape = Tape::new();
        let logit_of = |s: f64| {
            let c_g = tape.constant(&Tensor::row(vec![s, 0.0]));
            let mut locals = Tensor::zeros(N_REGION_TOKENS, 2);
            locals.set(1, 0, s);
            let c_l = tape.constant(&locals);
            let text = tape.constant(&Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
            let mut mask = Tensor::zeros(N_REGION_TOKENS, 1);
            mask.set(1, 0, 1.0);
            let mask = tape.constant(&mask);
            let p = gl_similarity(&tape, &c_g, &c_l, &text, &mask).unwrap();
            let v: f64 = p.item();
            (v / (1.0 - v)).ln()
        };
        let l1 = logit_of(1.0);
        let l3 = logit_of(3.0);
        assert!((l3 - 3.0 * l1).abs() < 1e-9, "{l1} vs {l3}");
    }

    #[test]
    fn bce_closed_forms() {
        let tape = Tape::new();
        // p = 0.5 everywhere -> ln 2
        let p = tape.constant(&Tensor::new(2, 2, vec![0.5; 4]).unwrap());
        let y = Tensor::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = loss_gl(&tape, &p, &y).unwrap();
        assert!((l.item() - std::f64::consts::LN_2).abs() < 1e-5);
        // single element y = 1, p = 0.25 -> -ln 0.25
        let p = tape.constant(&Tensor::scalar(0.25));
        let y = Tensor::scalar(1.0);
        let l = loss_gl(&tape, &p, &y).unwrap();
        assert!((l.item() - 1.38629).abs() < 1e-5);
        // perfect prediction after clamping
        let p = tape.constant(&Tensor::new(1, 2, vec![1.0, 0.0]).unwrap());
        let y = Tensor::new(1, 2, vec![1.0, 0.0]).unwrap();
        let l = loss_gl(&tape, &p, &y).unwrap();
        assert!(l.item() <= 1.7e-7, "{}", l.item());
    }

    #[test]
    fn weighted_bce_scalar_product() {
        // y = 1, p = 0.5, w = e^{-0.5} -> 0.60653 * ln 2
        let tape = Tape::new();
        let p = tape.constant(&Tensor::scalar(0.5));
        let y = Tensor::scalar(1.0);
        let w = attr_weights(&[0.5]);
        let l = loss_cls(&tape, &p, &y, &w).unwrap();
        assert!((l.item() - 0.42043).abs() < 1e-4, "{}", l.item());
    }

    #[test]
    fn attr_weights_extremes_and_monotonicity() {
        let w = attr_weights(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(w.data()[0], 1.0);
        assert!((w.data()[4] - 0.36788).abs() < 1e-5);
        for pair in w.data().windows(2) {
            assert!(pair[0] > pair[1]);
        }
    }

    #[test]
    fn total_loss_addition_and_alpha_gradient() {
        let tape = Tape::new();
        let l_cls = tape.constant(&Tensor::scalar(0.3));
        let l_gl = tape.constant(&Tensor::scalar(0.2));
        let t = total_loss(&tape, &l_cls, &l_gl, 1.0).unwrap();
        assert!((t.item() - 0.5).abs() < 1e-15);
        let t0 = total_loss(&tape, &l_cls, &l_gl, 0.0).unwrap();
        assert_eq!(t0.item(), 0.3);
        // dL/d(alpha) = L_gl, probed by central difference on alpha.
        let h = 1e-6;
        let plus = total_loss(&tape, &l_cls, &l_gl, 1.0 + h).unwrap().item();
        let minus = total_loss(&tape, &l_cls, &l_gl, 1.0 - h).unwrap().item();
        assert!(((plus - minus) / (2.0 * h) - 0.2).abs() < 1e-9);
    }
}
