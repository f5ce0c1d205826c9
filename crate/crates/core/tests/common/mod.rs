//! Brute-force oracles shared by the solver suites: enumerate every support
//! and sign pattern and keep the best consistent candidate.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

fn subsets(n: usize, max: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1 << n))
        .map(move |mask| (0..n).filter(|i| mask >> i & 1 == 1).collect::<Vec<_>>())
        .filter(move |s| s.len() <= max)
}

fn sign_patterns(k: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u32..(1 << k)).map(move |mask| (0..k).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect())
}

fn columns(a: &DMatrix<f64>, s: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), s.len(), |r, c| a[(r, s[c])])
}

/// min ‖c‖₁ s.t. ‖Ac - y‖ ≤ eps. On a fixed support and sign pattern the
/// minimizer of sᵀz over the residual ellipsoid is closed form; the global
/// optimum is the best sign-consistent one.
pub fn constrained_oracle(a: &DMatrix<f64>, y: &DVector<f64>, eps: f64) -> f64 {
    if y.norm() <= eps {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for s in subsets(a.ncols(), a.nrows()) {
        let a_s = columns(a, &s);
        let g = a_s.transpose() * &a_s;
        let Some(g_inv) = g.clone().try_inverse() else { continue };
        let z0 = &g_inv * (a_s.transpose() * y);
        let r0_sq = (y - &a_s * &z0).norm_squared();
        if r0_sq > eps * eps {
            continue;
        }
        for signs in sign_patterns(s.len()) {
            let sv = DVector::from_vec(signs);
            let gs = &g_inv * &sv;
            let scale = ((eps * eps - r0_sq) / sv.dot(&gs)).sqrt();
            let z = &z0 - gs * scale;
            if z.iter().zip(sv.iter()).all(|(zi, si)| zi * si > 0.0) {
                best = best.min(sv.dot(&z));
            }
        }
    }
    best
}

/// min ‖Ax - y‖² + Σ wᵢ|xᵢ| by solving the stationarity system on every
/// support and sign pattern.
pub fn lasso_oracle(a: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let objective = |x: &DVector<f64>| (a * x - y).norm_squared() + w.dot(&x.abs());
    let mut best = y.norm_squared();
    for s in subsets(a.ncols(), a.nrows()) {
        let a_s = columns(a, &s);
        let Some(g_inv) = (a_s.transpose() * &a_s).try_inverse() else { continue };
        let aty = a_s.transpose() * y;
        for signs in sign_patterns(s.len()) {
            let rhs = DVector::from_fn(s.len(), |i, _| aty[i] - 0.5 * w[s[i]] * signs[i]);
            let z = &g_inv * rhs;
            if z.iter().zip(&signs).all(|(zi, si)| zi * si > 0.0) {
                let mut x = DVector::zeros(a.ncols());
                for (i, &j) in s.iter().enumerate() {
                    x[j] = z[i];
                }
                best = best.min(objective(&x));
            }
        }
    }
    best
}

pub fn unit_columns(rows: usize, cols: usize, entries: Vec<f64>) -> DMatrix<f64> {
    let mut a = DMatrix::from_vec(rows, cols, entries);
    for mut c in a.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    a
}
