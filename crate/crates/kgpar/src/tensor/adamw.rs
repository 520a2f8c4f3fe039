//! AdamW with decoupled weight decay.

use super::{Tensor, TensorError};

/// Optimizer hyperparameters. Defaults: lr 7e-4, betas (0.9, 0.999),
/// eps 1e-8, weight decay 0.01.
#[derive(Debug, Clone, Copy)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
pub struct AdamWState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
    pub hyper: AdamWHyper,
}

impl AdamWState {
    /// Allocate zeroed moments matching each parameter's shape.
    pub fn new(params: &[&Tensor], hyper: AdamWHyper) -> Self {
        let zeros = |ps: &[&Tensor]| {
            ps.iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        AdamWState {
            first_moment: zeros(params),
            second_moment: zeros(params),
            step_count: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all parameter groups. Missing gradients (parameters
    /// the loss does not reach) leave both the parameter and moments as-is,
    /// apart from weight decay.
    ///
    /// Decay is decoupled: `p <- p - lr * wd * p` before the Adam update.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
        lr_override: Option<f64>,
    ) -> Result<(), TensorError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(TensorError::OptimStep(format!(
                "expected {} parameter groups, got {} params / {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        // Validate everything before mutating anything.
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(TensorError::OptimStep(format!(
                        "group {i}: gradient shape {:?} != parameter shape {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(TensorError::OptimStep(format!(
                        "group {i}: non-finite gradient"
                    )));
                }
            }
        }

        self.step_count += 1;
        let t = self.step_count;
        let h = self.hyper;
        let lr = lr_override.unwrap_or(h.lr);
        let bc1 = 1.0 - h.beta1.powi(t as i32);
        let bc2 = 1.0 - h.beta2.powi(t as i32);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *pv -= lr * h.weight_decay * *pv;
                *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
                *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}
