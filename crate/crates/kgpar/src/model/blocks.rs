//! Pre-norm transformer blocks shared by the token encoder and the fusion
//! stage: multi-head self-attention followed by a two-layer feed-forward,
//! each behind a residual connection.

use super::{BlockParams, BoundParams, ModelError};
use crate::tensor::{Tape, Tensor};

const LN_EPS: f64 = 1e-5;

/// Learned affine layer norm: scale and shift the row-normalized input.
fn layer_norm(
    tape: &Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<Tensor, ModelError> {
    let normed = tape.layer_norm_rows(x, LN_EPS)?;
    let scaled = tape.mul_rows(&normed, gamma)?;
    Ok(tape.add_rows(&scaled, beta)?)
}

/// Multi-head self-attention over a seq_len x d sequence.
fn attention(
    tape: &Tape,
    x: &Tensor,
    p: &BlockParams,
    bound: &BoundParams,
    heads: usize,
) -> Result<Tensor, ModelError> {
    let d = x.cols();
    let head_dim = d / heads;
    let q = tape.add_rows(&tape.matmul(x, bound.get(p.wq))?, bound.get(p.bq))?;
    let k = tape.add_rows(&tape.matmul(x, bound.get(p.wk))?, bound.get(p.bk))?;
    let v = tape.add_rows(&tape.matmul(x, bound.get(p.wv))?, bound.get(p.bv))?;

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = tape.slice_cols(&q, lo, hi)?;
        let kh = tape.slice_cols(&k, lo, hi)?;
        let vh = tape.slice_cols(&v, lo, hi)?;
        let scores = tape.matmul(&qh, &tape.transpose(&kh)?)?;
        let scaled = tape.scale(&scores, 1.0 / (head_dim as f64).sqrt())?;
        let weights = tape.softmax_rows(&scaled)?;
        head_outputs.push(tape.matmul(&weights, &vh)?);
    }
    let refs: Vec<&Tensor> = head_outputs.iter().collect();
    let merged = tape.concat_cols(&refs)?;
    let projected = tape.matmul(&merged, bound.get(p.wo))?;
    Ok(tape.add_rows(&projected, bound.get(p.bo))?)
}

fn feed_forward(
    tape: &Tape,
    x: &Tensor,
    p: &BlockParams,
    bound: &BoundParams,
) -> Result<Tensor, ModelError> {
    let h = tape.add_rows(&tape.matmul(x, bound.get(p.ffn_w1))?, bound.get(p.ffn_b1))?;
    let activated = tape.relu(&h)?;
    let out = tape.add_rows(
        &tape.matmul(&activated, bound.get(p.ffn_w2))?,
        bound.get(p.ffn_b2),
    )?;
    Ok(out)
}

/// One pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.)).
pub(crate) fn transformer_block(
    tape: &Tape,
    x: &Tensor,
    p: &BlockParams,
    bound: &BoundParams,
    heads: usize,
) -> Result<Tensor, ModelError> {
    let normed = layer_norm(tape, x, bound.get(p.ln1_gamma), bound.get(p.ln1_beta))?;
    let attended = attention(tape, &normed, p, bound, heads)?;
    let after_attn = tape.add(x, &attended)?;
    let normed2 = layer_norm(
        tape,
        &after_attn,
        bound.get(p.ln2_gamma),
        bound.get(p.ln2_beta),
    )?;
    let ff = feed_forward(tape, &normed2, p, bound)?;
    Ok(tape.add(&after_attn, &ff)?)
}

/// Apply a block stack in order.
pub(crate) fn transformer_stack(
    tape: &Tape,
    x: &Tensor,
    blocks: &[BlockParams],
    bound: &BoundParams,
    heads: usize,
) -> Result<Tensor, ModelError> {
    let mut current = x.clone();
    for block in blocks {
        current = transformer_block(tape, &current, block, bound, heads)?;
    }
    Ok(current)
}
