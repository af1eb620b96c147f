//! Next-token objectives.
//!
//! Both losses are per-token means of `-log softmax(logits[i - 1])[x_i]`. The
//! pre-training loss covers every position after BOS; the fine-tuning loss
//! covers only the output index set. The pre-training loss is computed as
//! the fine-tuning loss over the full index set, so the two agree bit for bit.

use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("sequence has no prediction targets (length {0})")]
    NoTargets(usize),
    #[error("output index set is empty")]
    EmptyOutputMask,
    #[error("output index {index} is outside 1..{len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("logits have {rows} rows for {tokens} tokens")]
    RowMismatch { rows: usize, tokens: usize },
    #[error("token id {id} exceeds {vocab} logit columns")]
    UnknownToken { id: u32, vocab: usize },
}

fn terms(
    logits: &Tensor,
    tokens: &[u32],
    index_set: &[usize],
) -> Result<Vec<(usize, usize)>, LossError> {
    if logits.rows() < tokens.len() {
        return Err(LossError::RowMismatch {
            rows: logits.rows(),
            tokens: tokens.len(),
        });
    }
    if index_set.is_empty() {
        return Err(LossError::EmptyOutputMask);
    }
    index_set
        .iter()
        .map(|&i| {
            if i == 0 || i >= tokens.len() {
                return Err(LossError::IndexOutOfRange {
                    index: i,
                    len: tokens.len(),
                });
            }
            let id = tokens[i];
            if id as usize >= logits.cols() {
                return Err(LossError::UnknownToken {
                    id,
                    vocab: logits.cols(),
                });
            }
            Ok((i - 1, id as usize))
        })
        .collect()
}

/// Masked objective over `index_set` (positions whose token is predicted).
pub fn lft_loss(
    graph: &mut Graph,
    logits: Var,
    tokens: &[u32],
    index_set: &[usize],
) -> Result<Var, LossError> {
    let terms = terms(graph.value(logits), tokens, index_set)?;
    let divisor = terms.len() as f64;
    Ok(graph.cross_entropy(logits, &terms, divisor))
}

/// Full autoregressive objective over positions `1..tokens.len()`.
pub fn lpt_loss(graph: &mut Graph, logits: Var, tokens: &[u32]) -> Result<Var, LossError> {
    if tokens.len() < 2 {
        return Err(LossError::NoTargets(tokens.len()));
    }
    let all: Vec<usize> = (1..tokens.len()).collect();
    lft_loss(graph, logits, tokens, &all)
}

/// Value-only form of [`lpt_loss`].
pub fn lpt_loss_value(logits: &Tensor, tokens: &[u32]) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = lpt_loss(&mut g, l, tokens)?;
    Ok(g.value(loss).data()[0])
}

/// Value-only form of [`lft_loss`].
pub fn lft_loss_value(logits: &Tensor, tokens: &[u32], index_set: &[usize]) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = lft_loss(&mut g, l, tokens, index_set)?;
    Ok(g.value(loss).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Straightforward per-position cross-entropy, no shared code with the graph.
    fn oracle(logits: &Tensor, tokens: &[u32], positions: &[usize]) -> f64 {
        let mut total = 0.0;
        for &i in positions {
            let row = logits.row(i - 1);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            total += -(row[tokens[i] as usize].exp() / z).ln();
        }
        total / positions.len() as f64
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = Tensor::zeros(&[5, 100]);
        let loss = lpt_loss_value(&logits, &[0, 5, 9, 99, 3]).unwrap();
        assert!((loss - 100f64.ln()).abs() < 1e-6);
        assert!((loss - 4.605170).abs() < 1e-6);
    }

    #[test]
    fn certain_predictions_give_zero() {
        // vocab 2, each row puts all mass on the next token
        let tokens = [0u32, 1, 0, 1];
        let mut data = vec![];
        for &next in &tokens[1..] {
            data.extend(if next == 0 { [1e6, -1e6] } else { [-1e6, 1e6] });
        }
        data.extend([0.0, 0.0]);
        let logits = Tensor::new(vec![4, 2], data);
        assert_eq!(lpt_loss_value(&logits, &tokens).unwrap(), 0.0);
    }

    #[test]
    fn matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let logits = Tensor::normal(&[3, 7], 2.0, &mut rng);
        let tokens: Vec<u32> = (0..3).map(|_| rng.random_range(0..7)).collect();
        let got = lpt_loss_value(&logits, &tokens).unwrap();
        assert!((got - oracle(&logits, &tokens, &[1, 2])).abs() < 1e-10);
    }

    #[test]
    fn masked_tail_matches_hand_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = Tensor::normal(&[6, 11], 1.5, &mut rng);
        let tokens = [10u32, 3, 4, 8, 1, 2];
        let got = lft_loss_value(&logits, &tokens, &[4, 5]).unwrap();
        let by_hand = (oracle(&logits, &tokens, &[4]) + oracle(&logits, &tokens, &[5])) / 2.0;
        assert!((got - by_hand).abs() < 1e-12);
    }

    #[test]
    fn full_mask_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Tensor::normal(&[9, 13], 3.0, &mut rng);
        let tokens: Vec<u32> = (0..9).map(|_| rng.random_range(0..13)).collect();
        let full: Vec<usize> = (1..9).collect();
        let a = lpt_loss_value(&logits, &tokens).unwrap();
        let b = lft_loss_value(&logits, &tokens, &full).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn errors() {
        let logits = Tensor::zeros(&[3, 4]);
        assert_eq!(lpt_loss_value(&logits, &[1]), Err(LossError::NoTargets(1)));
        assert_eq!(
            lft_loss_value(&logits, &[1, 2, 3], &[]),
            Err(LossError::EmptyOutputMask)
        );
        assert_eq!(
            lft_loss_value(&logits, &[1, 2, 3], &[0]),
            Err(LossError::IndexOutOfRange { index: 0, len: 3 })
        );
    }

    #[test]
    fn unmasked_labels_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = Tensor::normal(&[5, 6], 1.0, &mut rng);
        let a = lft_loss_value(&logits, &[0, 1, 2, 3, 4], &[3, 4]).unwrap();
        let b = lft_loss_value(&logits, &[0, 5, 5, 3, 4], &[3, 4]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
