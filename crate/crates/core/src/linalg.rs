//! Minimal dense linear-algebra helpers for the small normal-equation
//! systems that show up in calibrator and residual-model fitting.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Solves the small dense system `A x = b` in place by Gaussian
/// elimination with partial pivoting. `a` is row-major `dim x dim`.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim);
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&r1, &r2| {
                a[r1 * dim + col]
                    .abs()
                    .partial_cmp(&a[r2 * dim + col].abs())
                    .unwrap_or(core::cmp::Ordering::Equal)
            })
            .unwrap();
        if a[pivot_row * dim + col].abs() < 1e-300 {
            return Err(Error::fit_failed("singular normal-equation system"));
        }
        if pivot_row != col {
            for j in 0..dim {
                a.swap(col * dim + j, pivot_row * dim + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * dim + col];
        for row in col + 1..dim {
            let factor = a[row * dim + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..dim {
                a[row * dim + j] -= factor * a[col * dim + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = alloc::vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut acc = b[row];
        for j in row + 1..dim {
            acc -= a[row * dim + j] * x[j];
        }
        x[row] = acc / a[row * dim + row];
    }
    Ok(x)
}
