//! AdamW with bias-corrected moments.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptimError {
    #[error("slot {slot}: parameter has {param} elements, gradient {grad}, state {state}")]
    ShapeError {
        slot: usize,
        param: usize,
        grad: usize,
        state: usize,
    },
    #[error("{params} parameters but {grads} gradients")]
    CountMismatch { params: usize, grads: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter slot, plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

impl AdamW {
    /// Applies one update in place. Parameters, gradients and state slots are
    /// matched by position.
    pub fn step(
        &self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        state: &mut AdamState,
        lr: f64,
    ) -> Result<(), OptimError> {
        if params.len() != grads.len() || state.first.len() != params.len() {
            return Err(OptimError::CountMismatch {
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (slot, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || state.first[slot].len() != p.len() {
                return Err(OptimError::ShapeError {
                    slot,
                    param: p.len(),
                    grad: g.len(),
                    state: state.first[slot].len(),
                });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut state.first[slot];
            let v = &mut state.second[slot];
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * (m_hat / (libm::sqrt(v_hat) + self.eps) + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = libm::sqrt(
        grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>(),
    );
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}
