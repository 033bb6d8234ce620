//! Stationary distribution of the latent-chain transition matrix.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const DENSE_SOLVE_LIMIT: usize = 64;
const RESIDUAL_TOL: f64 = 1e-12;

/// Left fixed point of a row-stochastic matrix: the `alpha` with
/// `alpha * pi = alpha` and `sum(alpha) = 1`.
///
/// The chain must be ergodic (irreducible and aperiodic), checked through
/// primitivity of the positivity pattern. Solved by a dense linear system up
/// to Q = 64 and by power iteration above.
pub fn stationary_distribution(pi: &Array2<f64>) -> Result<Array1<f64>> {
    let q = pi.nrows();
    if q == 0 || pi.ncols() != q {
        return Err(Error::DimensionMismatch("transition matrix must be square".into()));
    }
    for row in pi.rows() {
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParams("rows must be probability vectors".into()));
        }
    }
    if !is_primitive(pi) {
        return Err(Error::NotErgodic);
    }
    let alpha = if q <= DENSE_SOLVE_LIMIT {
        solve_dense(pi)?
    } else {
        power_iteration(pi)
    };
    let residual = residual_norm(pi, &alpha);
    if residual > RESIDUAL_TOL {
        return Err(Error::InvalidParams(format!(
            "stationary solve residual {residual:.3e} above {RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(alpha)
}

fn residual_norm(pi: &Array2<f64>, alpha: &Array1<f64>) -> f64 {
    let q = pi.nrows();
    let mut worst = 0.0f64;
    for j in 0..q {
        let mut v = 0.0;
        for i in 0..q {
            v += alpha[i] * pi[(i, j)];
        }
        worst = worst.max((v - alpha[j]).abs());
    }
    worst
}

/// Primitivity test on the boolean positivity pattern: some power of an
/// ergodic matrix is strictly positive, and the Wielandt exponent
/// (Q-1)^2 + 1 bounds how far to look.
fn is_primitive(pi: &Array2<f64>) -> bool {
    let q = pi.nrows();
    if q == 1 {
        return true;
    }
    let bound = (q - 1) * (q - 1) + 1;
    let mut mask: Vec<bool> = pi.iter().map(|&p| p > 0.0).collect();
    let all_positive = |m: &[bool]| m.iter().all(|&b| b);
    if all_positive(&mask) {
        return true;
    }
    let mut exponent = 1usize;
    while exponent < bound {
        let mut next = vec![false; q * q];
        for i in 0..q {
            for k in 0..q {
                if mask[i * q + k] {
                    for j in 0..q {
                        if mask[k * q + j] {
                            next[i * q + j] = true;
                        }
                    }
                }
            }
        }
        mask = next;
        exponent *= 2;
        if all_positive(&mask) {
            return true;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting on (pi^T - I) x = 0 with the
/// last equation replaced by the normalization sum(x) = 1.
fn solve_dense(pi: &Array2<f64>) -> Result<Array1<f64>> {
    let q = pi.nrows();
    let mut a = vec![0.0f64; q * (q + 1)];
    let stride = q + 1;
    for i in 0..q {
        for j in 0..q {
            a[i * stride + j] = pi[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..q {
        a[(q - 1) * stride + j] = 1.0;
    }
    a[(q - 1) * stride + q] = 1.0;

    for col in 0..q {
        let pivot_row = (col..q)
            .max_by(|&r1, &r2| {
                a[r1 * stride + col]
                    .abs()
                    .partial_cmp(&a[r2 * stride + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row * stride + col].abs() < 1e-300 {
            return Err(Error::NotErgodic);
        }
        if pivot_row != col {
            for k in 0..stride {
                a.swap(col * stride + k, pivot_row * stride + k);
            }
        }
        let pivot = a[col * stride + col];
        for row in (col + 1)..q {
            let factor = a[row * stride + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..stride {
                a[row * stride + k] -= factor * a[col * stride + k];
            }
        }
    }
    let mut x = vec![0.0f64; q];
    for row in (0..q).rev() {
        let mut rhs = a[row * stride + q];
        for k in (row + 1)..q {
            rhs -= a[row * stride + k] * x[k];
        }
        x[row] = rhs / a[row * stride + row];
    }
    // Clean tiny negative round-off and renormalize exactly once.
    let mut sum = 0.0;
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
    Ok(Array1::from_vec(x))
}

fn power_iteration(pi: &Array2<f64>) -> Array1<f64> {
    let q = pi.nrows();
    let mut alpha = Array1::from_elem(q, 1.0 / q as f64);
    let mut next = Array1::zeros(q);
    for _ in 0..200_000 {
        for j in 0..q {
            let mut v = 0.0;
            for i in 0..q {
                v += alpha[i] * pi[(i, j)];
            }
            next[j] = v;
        }
        let sum = next.sum();
        next.mapv_inplace(|v| v / sum);
        let delta = alpha
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        std::mem::swap(&mut alpha, &mut next);
        if delta < 1e-16 {
            break;
        }
    }
    alpha
}
