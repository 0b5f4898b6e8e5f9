//! Small dense least-squares solvers.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution `A⁺ b` via SVD.
/// Singular values below `1e-12 · σ_max` are treated as zero.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    let eps = 1e-12 * smax;
    svd.solve(b, eps).expect("u and v were computed")
}

/// Lawson–Hanson nonnegative least squares: `argmin ‖A x − b‖` subject to `x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * b.norm().max(1.0);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE) * (a.nrows().max(n) as f64);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = min_norm_lstsq(&sub, b);
            if z_sub.iter().all(|&v| v > 0.0) {
                for (k, &col) in idx.iter().enumerate() {
                    x[col] = z_sub[k];
                }
                for k in (0..n).filter(|&k| !passive[k]) {
                    x[k] = 0.0;
                }
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut step = 1.0f64;
            for (k, &col) in idx.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    let denom = x[col] - z_sub[k];
                    if denom > 0.0 {
                        step = step.min(x[col] / denom);
                    } else {
                        step = 0.0;
                    }
                }
            }
            for (k, &col) in idx.iter().enumerate() {
                x[col] += step * (z_sub[k] - x[col]);
            }
            let xmax = idx.iter().map(|&c| x[c].abs()).fold(0.0, f64::max);
            for &col in &idx {
                if x[col] <= 1e-14 * xmax {
                    x[col] = 0.0;
                    passive[col] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Minimum-norm least squares restricted to `x ≥ 0`.
///
/// Uses the unconstrained minimum-norm solution when it is already nonnegative.
/// Otherwise the variables whose bound is strictly active at the [`nnls`] optimum
/// are fixed at zero and the minimum-norm solution over the rest is taken,
/// dropping any variable that still comes out negative. Falls back to the NNLS
/// point if that loses accuracy.
pub fn min_norm_nonneg_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let x = min_norm_lstsq(a, b);
    if x.iter().all(|&v| v >= 0.0) {
        return x;
    }
    let xn = nnls(a, b);
    let w = a.transpose() * (b - a * &xn);
    let wtol = 1e-9 * (a.norm() * b.norm()).max(1e-300);
    let mut free: Vec<usize> = (0..n)
        .filter(|&j| xn[j] > 0.0 || w[j].abs() <= wtol)
        .collect();
    let mut out = DVector::zeros(n);
    while !free.is_empty() {
        let sub = min_norm_lstsq(&a.select_columns(&free), b);
        let worst = (0..free.len())
            .filter(|&k| sub[k] < 0.0)
            .min_by(|&i, &j| sub[i].total_cmp(&sub[j]));
        match worst {
            Some(k) => {
                free.remove(k);
            }
            None => {
                for (k, &j) in free.iter().enumerate() {
                    out[j] = sub[k];
                }
                break;
            }
        }
    }
    if (a * &out - b).norm() <= (a * &xn - b).norm() * (1.0 + 1e-9) + 1e-14 {
        out
    } else {
        xn
    }
}
