//! Exhaustive solver for the cardinality-constrained keep/prune problem.
//!
//! Used to certify that top-r selection on the PINS score is optimal; it
//! deliberately shares no code with the scoring and ranking path.

use crate::error::{PinsError, Result};

pub const ORACLE_MAX_DIM: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Kept coordinates (0-based, ascending).
    pub kept: Vec<usize>,
    pub delta_loss: f64,
}

/// Linearized loss change when the coordinates flagged in `kept` take a
/// gradient-descent step of size `lr` and the rest are zeroed:
/// `sum_kept g * (-lr * g) + sum_pruned g * (-theta)`.
pub fn linearized_delta_loss(theta: &[f32], grads: &[f32], lr: f32, kept: &[bool]) -> f64 {
    let lr = lr as f64;
    theta
        .iter()
        .zip(grads)
        .zip(kept)
        .map(|((&t, &g), &k)| {
            let (t, g) = (t as f64, g as f64);
            if k {
                g * (-lr * g)
            } else {
                g * -t
            }
        })
        .sum()
}

/// Enumerates every size-`r` keep set and returns the one with the smallest
/// linearized loss change. Among equal minimizers the lexicographically
/// smallest index set wins.
pub fn knapsack_oracle(theta: &[f32], grads: &[f32], lr: f32, r: usize) -> Result<OracleSolution> {
    let d = theta.len();
    if grads.len() != d {
        return Err(PinsError::shape("knapsack_oracle", &[d], &[grads.len()]));
    }
    if d > ORACLE_MAX_DIM {
        return Err(PinsError::Size(format!(
            "exhaustive oracle limited to {ORACLE_MAX_DIM} coordinates, got {d}"
        )));
    }
    if r > d {
        return Err(PinsError::rejected(
            "knapsack_oracle",
            format!("cannot keep {r} of {d} coordinates"),
        ));
    }

    let scale: f64 = theta
        .iter()
        .zip(grads)
        .map(|(&t, &g)| (g as f64 * t as f64).abs() + (lr as f64 * g as f64 * g as f64).abs())
        .sum::<f64>()
        .max(1.0);
    let tie_tol = 1e-12 * scale;

    let mut combo: Vec<usize> = (0..r).collect();
    let mut kept = vec![false; d];
    let mut best: Option<OracleSolution> = None;
    loop {
        kept.iter_mut().for_each(|k| *k = false);
        for &i in &combo {
            kept[i] = true;
        }
        let dl = linearized_delta_loss(theta, grads, lr, &kept);
        let better = match &best {
            None => true,
            Some(b) => dl < b.delta_loss - tie_tol,
        };
        if better {
            best = Some(OracleSolution {
                kept: combo.clone(),
                delta_loss: dl,
            });
        }

        // next combination in lexicographic order
        let mut i = r;
        loop {
            if i == 0 {
                return Ok(best.expect("at least one combination"));
            }
            i -= 1;
            if combo[i] < d - r + i {
                combo[i] += 1;
                for j in i + 1..r {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let sol = knapsack_oracle(&[0.2, 0.1, -1.0], &[1.0, -2.0, 0.5], 0.1, 1).unwrap();
        assert_eq!(sol.kept, vec![1]);
        assert!((sol.delta_loss - (-0.1)).abs() < 1e-7);
    }

    #[test]
    fn keep_all_and_keep_none() {
        let theta = [0.2f32, 0.1, -1.0];
        let g = [1.0f32, -2.0, 0.5];
        let all = knapsack_oracle(&theta, &g, 0.1, 3).unwrap();
        assert_eq!(all.kept, vec![0, 1, 2]);
        let expected: f64 = -0.1 * g.iter().map(|&x| (x as f64).powi(2)).sum::<f64>();
        assert!((all.delta_loss - expected).abs() < 1e-7);

        let none = knapsack_oracle(&theta, &g, 0.1, 0).unwrap();
        assert!(none.kept.is_empty());
        let expected: f64 = -theta.iter().zip(&g).map(|(&t, &g)| t as f64 * g as f64).sum::<f64>();
        assert!((none.delta_loss - expected).abs() < 1e-7);
    }

    #[test]
    fn ties_resolve_to_smallest_index_set() {
        let sol = knapsack_oracle(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], 0.1, 2).unwrap();
        assert_eq!(sol.kept, vec![0, 1]);
    }

    #[test]
    fn size_limit() {
        assert!(matches!(
            knapsack_oracle(&[0.0; 21], &[0.0; 21], 0.1, 3),
            Err(PinsError::Size(_))
        ));
    }
}
