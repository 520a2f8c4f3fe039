//! Per-operation gradient checks: analytic gradients against central finite
//! differences (h = 1e-6), random inputs in [-2, 2], relative error < 1e-6.

mod common;

use common::{assert_grad_matches, TestRng};
use kgpar::tensor::{Tape, Tensor};

const H: f64 = 1e-6;
const TOL: f64 = 1e-6;

/// Random matrix with entries in [-2, 2], nudged away from kinks at zero.
fn rand_input(rng: &mut TestRng, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| {
            let v = rng.range(-2.0, 2.0);
            if v.abs() < 0.05 {
                v + 0.1_f64.copysign(v + 1e-12)
            } else {
                v
            }
        })
        .collect()
}

/// Check d(scalar readout)/dx for a graph built by `build`.
fn check_unary(
    label: &str,
    rows: usize,
    cols: usize,
    seed: u64,
    build: impl Fn(&Tape, &Tensor) -> Tensor,
) {
    let mut rng = TestRng::new(seed);
    let x0 = rand_input(&mut rng, rows, cols);
    let mut f = |x: &[f64]| {
        let tape = Tape::new();
        let xt = tape.leaf(&Tensor::new(rows, cols, x.to_vec()).unwrap().requires_grad());
        let y = build(&tape, &xt);
        // Squared readout keeps the loss sensitive to sign.
        let sq = tape.mul(&y, &y).unwrap();
        tape.sum_all(&sq).unwrap().item()
    };
    let tape = Tape::new();
    let xt = tape.leaf(&Tensor::new(rows, cols, x0.clone()).unwrap().requires_grad());
    let y = build(&tape, &xt);
    let sq = tape.mul(&y, &y).unwrap();
    let loss = tape.sum_all(&sq).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let analytic = grads.wrt(&xt).unwrap().data().to_vec();
    assert_grad_matches(&mut f, &x0, &analytic, H, TOL, label);
}

/// Check gradients w.r.t. both operands of a binary op.
fn check_binary(
    label: &str,
    a_shape: (usize, usize),
    b_shape: (usize, usize),
    seed: u64,
    build: impl Fn(&Tape, &Tensor, &Tensor) -> Tensor,
) {
    let mut rng = TestRng::new(seed);
    let a0 = rand_input(&mut rng, a_shape.0, a_shape.1);
    let b0 = rand_input(&mut rng, b_shape.0, b_shape.1);
    let eval = |a: &[f64], b: &[f64]| {
        let tape = Tape::new();
        let at = tape.leaf(&Tensor::new(a_shape.0, a_shape.1, a.to_vec()).unwrap().requires_grad());
        let bt = tape.leaf(&Tensor::new(b_shape.0, b_shape.1, b.to_vec()).unwrap().requires_grad());
        let y = build(&tape, &at, &bt);
        let sq = tape.mul(&y, &y).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        (tape, at, bt, loss)
    };
    let (tape, at, bt, loss) = eval(&a0, &b0);
    let grads = tape.backward(&loss).unwrap();
    let ga = grads.wrt(&at).unwrap().data().to_vec();
    let gb = grads.wrt(&bt).unwrap().data().to_vec();
    let mut fa = |a: &[f64]| eval(a, &b0).3.item();
    assert_grad_matches(&mut fa, &a0, &ga, H, TOL, &format!("{label}/lhs"));
    let mut fb = |b: &[f64]| eval(&a0, b).3.item();
    assert_grad_matches(&mut fb, &b0, &gb, H, TOL, &format!("{label}/rhs"));
}

#[test]
fn matmul_gradients() {
    check_binary("matmul", (3, 4), (4, 2), 11, |t, a, b| t.matmul(a, b).unwrap());
}

#[test]
fn add_sub_mul_gradients() {
    check_binary("add", (2, 3), (2, 3), 21, |t, a, b| t.add(a, b).unwrap());
    check_binary("sub", (2, 3), (2, 3), 22, |t, a, b| t.sub(a, b).unwrap());
    check_binary("mul", (2, 3), (2, 3), 23, |t, a, b| t.mul(a, b).unwrap());
}

#[test]
fn broadcast_gradients() {
    check_binary("add_rows", (3, 4), (1, 4), 31, |t, a, b| {
        t.add_rows(a, b).unwrap()
    });
    check_binary("mul_rows", (3, 4), (1, 4), 32, |t, a, b| {
        t.mul_rows(a, b).unwrap()
    });
    check_binary("scale_by", (2, 3), (1, 1), 33, |t, a, b| {
        t.scale_by(a, b).unwrap()
    });
}

#[test]
fn pointwise_gradients() {
    check_unary("sigmoid", 2, 3, 41, |t, x| t.sigmoid(x).unwrap());
    check_unary("exp", 2, 3, 42, |t, x| t.exp(x).unwrap());
    check_unary("relu", 2, 3, 43, |t, x| t.relu(x).unwrap());
    check_unary("leaky_relu", 2, 3, 44, |t, x| t.leaky_relu(x, 0.2).unwrap());
    check_unary("scale", 2, 3, 45, |t, x| t.scale(x, -1.7).unwrap());
    // log needs positive inputs: shift through exp first.
    check_unary("log", 2, 3, 46, |t, x| {
        let pos = t.exp(x).unwrap();
        t.log(&pos).unwrap()
    });
}

#[test]
fn softmax_gradients() {
    check_unary("softmax_rows", 3, 4, 51, |t, x| t.softmax_rows(x).unwrap());
}

#[test]
fn masked_softmax_gradients() {
    let mask = Tensor::new(3, 4, vec![
        1.0, 0.0, 1.0, 1.0, //
        0.0, 1.0, 1.0, 0.0, //
        1.0, 1.0, 0.0, 1.0,
    ])
    .unwrap();
    check_unary("masked_softmax_rows", 3, 4, 52, move |t, x| {
        t.masked_softmax_rows(x, &mask).unwrap()
    });
}

#[test]
fn shape_op_gradients() {
    check_unary("transpose", 3, 2, 61, |t, x| t.transpose(x).unwrap());
    check_unary("slice_rows", 4, 3, 62, |t, x| t.slice_rows(x, 1, 3).unwrap());
    check_unary("slice_cols", 3, 5, 63, |t, x| t.slice_cols(x, 2, 4).unwrap());
    check_binary("concat_rows", (2, 3), (3, 3), 64, |t, a, b| {
        t.concat_rows(&[a, b]).unwrap()
    });
    check_binary("concat_cols", (3, 2), (3, 3), 65, |t, a, b| {
        t.concat_cols(&[a, b]).unwrap()
    });
}

#[test]
fn reduction_gradients() {
    check_unary("row_sums", 3, 4, 71, |t, x| t.row_sums(x).unwrap());
    check_unary("col_sums", 3, 4, 72, |t, x| t.col_sums(x).unwrap());
    check_unary("sum_all", 3, 4, 73, |t, x| t.sum_all(x).unwrap());
    check_unary("mean_all", 3, 4, 74, |t, x| t.mean_all(x).unwrap());
}

#[test]
fn layer_norm_gradients() {
    check_unary("layer_norm_rows", 3, 6, 81, |t, x| {
        t.layer_norm_rows(x, 1e-5).unwrap()
    });
}

#[test]
fn clamp_gradients() {
    // Bounds chosen away from sampled values so no input sits on a kink.
    check_unary("clamp", 2, 4, 91, |t, x| t.clamp(x, -1.55, 1.55).unwrap());
}

#[test]
fn composed_graph_gradient() {
    // A deeper composition routed through most op families at once.
    let mut rng = TestRng::new(101);
    let x0 = rand_input(&mut rng, 2, 4);
    let w0 = rand_input(&mut rng, 4, 4);
    let eval = |x: &[f64], w: &[f64]| {
        let tape = Tape::new();
        let xt = tape.leaf(&Tensor::new(2, 4, x.to_vec()).unwrap().requires_grad());
        let wt = tape.leaf(&Tensor::new(4, 4, w.to_vec()).unwrap().requires_grad());
        let h = tape.matmul(&xt, &wt).unwrap();
        let n = tape.layer_norm_rows(&h, 1e-5).unwrap();
        let s = tape.softmax_rows(&n).unwrap();
        let g = tape.sigmoid(&h).unwrap();
        let m = tape.mul(&s, &g).unwrap();
        let loss = tape.mean_all(&m).unwrap();
        (tape, xt, wt, loss)
    };
    let (tape, xt, wt, loss) = eval(&x0, &w0);
    let grads = tape.backward(&loss).unwrap();
    let gx = grads.wrt(&xt).unwrap().data().to_vec();
    let gw = grads.wrt(&wt).unwrap().data().to_vec();
    let mut fx = |x: &[f64]| eval(x, &w0).3.item();
    assert_grad_matches(&mut fx, &x0, &gx, H, TOL, "composed/x");
    let mut fw = |w: &[f64]| eval(&x0, w).3.item();
    assert_grad_matches(&mut fw, &w0, &gw, H, TOL, "composed/w");
}
