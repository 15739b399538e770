//! Pool-adjacent-violators isotonic regression.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-decreasing step function: fitted value `ys[i]` holds from
/// `xs[i]` up to (but excluding) `xs[i+1]`; inputs outside the fitted
/// range clamp to the first/last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.xs[0] {
            return self.ys[0];
        }
        let idx = self.xs.partition_point(|&xi| xi <= x) - 1;
        self.ys[idx]
    }
}

struct Block {
    sum: f64,
    count: f64,
    /// index of the first merged unique score
    start: usize,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum / self.count
    }
}

/// Fits isotonic least squares by pool-adjacent-violators.
///
/// Equal scores are merged up front (their labels average), then
/// adjacent blocks pool while ordered means decrease. Sums and counts
/// are kept separate so block means divide exactly once, which keeps
/// the result bit-identical to a direct mean computation.
pub fn pava(scores: &[f64], labels: &[f64]) -> Result<StepFunction> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::invalid_input(
            "pava requires equal-length nonempty score/label arrays",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    // Merge ties: one (x, sum, count) entry per unique score.
    let mut xs: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for &i in &order {
        if xs.last() == Some(&scores[i]) {
            *sums.last_mut().unwrap() += labels[i];
            *counts.last_mut().unwrap() += 1.0;
        } else {
            xs.push(scores[i]);
            sums.push(labels[i]);
            counts.push(1.0);
        }
    }

    let mut stack: Vec<Block> = Vec::with_capacity(xs.len());
    for k in 0..xs.len() {
        let mut block = Block {
            sum: sums[k],
            count: counts[k],
            start: k,
        };
        // Pool while the new block violates monotonicity. Means are
        // compared by cross-multiplication so no division happens here.
        while let Some(prev) = stack.last() {
            if block.sum * prev.count < prev.sum * block.count {
                let prev = stack.pop().unwrap();
                block.sum += prev.sum;
                block.count += prev.count;
                block.start = prev.start;
            } else {
                break;
            }
        }
        stack.push(block);
    }

    // Blocks partition the unique scores: block k spans
    // [stack[k].start, stack[k+1].start).
    let mut ys = Vec::with_capacity(xs.len());
    for (k, block) in stack.iter().enumerate() {
        let end = stack.get(k + 1).map_or(xs.len(), |b| b.start);
        let value = block.mean();
        ys.resize(end, value);
        debug_assert!(ys.len() > block.start);
    }

    Ok(StepFunction { xs, ys })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn no_violators_keeps_label_means() {
        let f = pava(&[0.1, 0.2, 0.3], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(f.ys, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn hand_example_pools_first_pair() {
        let f = pava(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(f.ys, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn constant_labels_give_constant_function() {
        let f = pava(&[0.4, 0.1, 0.9], &[0.7, 0.7, 0.7]).unwrap();
        assert!(f.ys.iter().all(|&y| y == 0.7));
    }

    #[test]
    fn ties_merge_by_averaging() {
        let f = pava(&[0.5, 0.5, 0.9], &[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(f.xs, vec![0.5, 0.9]);
        assert_eq!(f.ys, vec![0.5, 1.0]);
    }

    #[test]
    fn eval_clamps_and_steps() {
        let f = pava(&[0.2, 0.6], &[0.25, 0.75]).unwrap();
        assert_eq!(f.eval(0.0), 0.25);
        assert_eq!(f.eval(0.2), 0.25);
        assert_eq!(f.eval(0.59), 0.25);
        assert_eq!(f.eval(0.6), 0.75);
        assert_eq!(f.eval(1.0), 0.75);
    }
}
