//! ℓ1 solvers shared by sparse coding and reconstruction.
//!
//! Both problems are solved on the Gram form (G = AᵀA, Aᵀy, ‖y‖²). The
//! homotopy follows the LASSO regularization path
//!
//! ```text
//! min_c ½‖y - Ac‖² + t‖c‖₁
//! ```
//!
//! from t = ‖Aᵀy‖∞ downwards, adding and dropping atoms at the breakpoints,
//! and stops either at a target penalty or where the residual norm first
//! reaches a bound. Coordinate descent is the iterative alternative and is
//! also used to polish path solutions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of G restricted to an ordered active set,
/// grown one column at a time.
#[derive(Debug, Clone, Default)]
struct IncrementalCholesky {
    rows: Vec<Vec<f64>>,
}

impl IncrementalCholesky {
    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Appends atom `j`; returns false (leaving the factor untouched) when the
    /// new column is numerically dependent on the active ones.
    fn push(&mut self, gram: &DMatrix<f64>, active: &[usize], j: usize) -> bool {
        let k = self.rows.len();
        let mut w = vec![0.0; k];
        for i in 0..k {
            let mut acc = gram[(active[i], j)];
            for p in 0..i {
                acc -= self.rows[i][p] * w[p];
            }
            w[i] = acc / self.rows[i][i];
        }
        let diag = gram[(j, j)];
        let pivot_sq = diag - w.iter().map(|v| v * v).sum::<f64>();
        if !(pivot_sq > DEPENDENCE_TOL * diag) {
            return false;
        }
        w.push(pivot_sq.sqrt());
        self.rows.push(w);
        true
    }

    fn rebuild(&mut self, gram: &DMatrix<f64>, active: &[usize]) -> bool {
        self.rows.clear();
        let mut placed = Vec::with_capacity(active.len());
        for &j in active {
            if !self.push(gram, &placed, j) {
                return false;
            }
            placed.push(j);
        }
        true
    }

    /// Solves (LLᵀ) x = rhs.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.rows.len();
        let mut z = rhs.to_vec();
        for i in 0..k {
            for p in 0..i {
                z[i] -= self.rows[i][p] * z[p];
            }
            z[i] /= self.rows[i][i];
        }
        for i in (0..k).rev() {
            for p in i + 1..k {
                z[i] -= self.rows[p][i] * z[p];
            }
            z[i] /= self.rows[i][i];
        }
        z
    }
}

const DEPENDENCE_TOL: f64 = 1e-12;

/// Where the homotopy stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStop {
    /// At penalty level t.
    Penalty(f64),
    /// At the first point where ‖y - Ac‖ ≤ bound (the smallest-‖c‖₁ point
    /// within the bound).
    Residual(f64),
}

/// End point of the regularization path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub coefficients: DVector<f64>,
    /// Penalty level t at the end point.
    pub penalty: f64,
    /// ‖y - Ac‖.
    pub residual: f64,
    /// Breakpoints traversed.
    pub steps: usize,
}

/// Follows the LASSO path on the Gram form. `aty` is Aᵀy and `y_sq` is ‖y‖².
pub fn homotopy(gram: &DMatrix<f64>, aty: &DVector<f64>, y_sq: f64, stop: PathStop) -> Result<PathPoint> {
    homotopy_weighted(gram, aty, y_sq, None, stop)
}

/// Path of min ½‖y - Ac‖² + t·Σ wᵢ|cᵢ| with positive weights (all ones when
/// `weights` is None). Correlations are compared with t·wᵢ directly, so the
/// thresholds stay in data units however small the weights are.
pub fn homotopy_weighted(
    gram: &DMatrix<f64>,
    aty: &DVector<f64>,
    y_sq: f64,
    weights: Option<&DVector<f64>>,
    stop: PathStop,
) -> Result<PathPoint> {
    let k = aty.len();
    if gram.shape() != (k, k) {
        return Err(Error::Shape(format!("Gram matrix {:?} for {k} atoms", gram.shape())));
    }
    if let Some(w) = weights {
        if w.len() != k || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("path weights must be positive and finite".into()));
        }
    }
    let w = |j: usize| weights.map_or(1.0, |w| w[j]);
    let mut c = DVector::<f64>::zeros(k);
    let mut corr = aty.clone();
    let mut res_sq = y_sq;
    let residual_target = match stop {
        PathStop::Residual(eps) => {
            if !(eps > 0.0) {
                return Err(Error::Domain(format!("residual bound must be > 0, got {eps}")));
            }
            Some(eps * eps)
        }
        PathStop::Penalty(t) => {
            if !(t >= 0.0) {
                return Err(Error::Domain(format!("penalty must be >= 0, got {t}")));
            }
            None
        }
    };
    let target_penalty = match stop {
        PathStop::Penalty(t) => t,
        PathStop::Residual(_) => 0.0,
    };
    let (first, mut lambda) =
        (0..k).map(|j| (j, corr[j].abs() / w(j))).fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if let Some(r2) = residual_target {
        if res_sq <= r2 {
            return Ok(PathPoint { coefficients: c, penalty: lambda, residual: res_sq.max(0.0).sqrt(), steps: 0 });
        }
    }
    if lambda <= target_penalty || lambda == 0.0 {
        return finish(c, lambda.max(target_penalty), res_sq, 0, residual_target, stop);
    }
    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; k];
    let mut excluded = vec![false; k];
    let mut sign = vec![0.0; k];
    let mut chol = IncrementalCholesky::default();
    let mut next_join = Some(first);
    let mut just_dropped: Option<usize> = None;
    let max_steps = 20 * k + 100;

    for step in 0..max_steps {
        if let Some(j) = next_join.take() {
            if chol.push(gram, &active, j) {
                active.push(j);
                in_active[j] = true;
                sign[j] = corr[j].signum();
            } else {
                excluded[j] = true;
            }
        }
        if active.is_empty() {
            // Every candidate was dependent; only possible for zero atoms.
            return finish(c, target_penalty, res_sq, step, residual_target, stop);
        }
        // Exact stationary point of the current active set at this penalty,
        // G_AA c_A = (Aᵀy)_A - t·w_A∘s_A, so that drift along the path never
        // accumulates; then fresh correlations and residual.
        let rhs: Vec<f64> = active.iter().map(|&j| aty[j] - lambda * w(j) * sign[j]).collect();
        for (&j, v) in active.iter().zip(chol.solve(&rhs)) {
            c[j] = v;
        }
        corr.copy_from(aty);
        for &j in &active {
            corr.axpy(-c[j], &gram.column(j), 1.0);
        }
        res_sq = y_sq - active.iter().map(|&j| c[j] * (aty[j] + corr[j])).sum::<f64>();
        let signs: Vec<f64> = active.iter().map(|&j| sign[j] * w(j)).collect();
        let d = chol.solve(&signs);
        // u = G[:, A] d
        let mut u = DVector::<f64>::zeros(k);
        for (pos, &j) in active.iter().enumerate() {
            u.axpy(d[pos], &gram.column(j), 1.0);
        }

        let mut gamma = lambda - target_penalty;
        let mut event = Event::End;
        for j in 0..k {
            if in_active[j] || excluded[j] {
                continue;
            }
            let wj = w(j);
            let fresh_drop = Some(j) == just_dropped;
            for (num, den) in [(lambda * wj - corr[j], wj - u[j]), (lambda * wj + corr[j], wj + u[j])] {
                if den > 1e-14 * wj {
                    // Already on or past the boundary after rounding: join now,
                    // except for the atom that has just left.
                    let g = num / den;
                    if fresh_drop && g <= 1e-12 * lambda {
                        continue;
                    }
                    let g = g.max(0.0);
                    if g < gamma {
                        gamma = g;
                        event = Event::Join(j);
                    }
                }
            }
        }
        for (pos, &j) in active.iter().enumerate() {
            let (cs, ds) = (c[j] * sign[j], d[pos] * sign[j]);
            if ds < 0.0 {
                // A coefficient that rounding left on the wrong side leaves now.
                let g = if cs > 0.0 { cs / -ds } else { 0.0 };
                if g < gamma || (g == 0.0 && gamma == 0.0) {
                    gamma = g;
                    event = Event::Drop(pos);
                }
            }
        }
        // Residual along the segment: res_sq - 2γ dᵀcorr_A + γ² dᵀu_A.
        let d_corr: f64 = active.iter().zip(&d).map(|(&j, dj)| dj * corr[j]).sum();
        let d_u: f64 = active.iter().zip(&d).map(|(&j, dj)| dj * u[j]).sum();
        if let Some(r2) = residual_target {
            if let Some(g) = first_crossing(d_u, -2.0 * d_corr, res_sq - r2) {
                if g <= gamma {
                    gamma = g;
                    event = Event::Residual;
                }
            }
        }

        for (pos, &j) in active.iter().enumerate() {
            c[j] += gamma * d[pos];
        }
        corr.axpy(-gamma, &u, 1.0);
        res_sq += gamma * gamma * d_u - 2.0 * gamma * d_corr;
        lambda -= gamma;
        just_dropped = None;

        match event {
            Event::Join(j) => next_join = Some(j),
            Event::Drop(pos) => {
                let j = active.remove(pos);
                in_active[j] = false;
                c[j] = 0.0;
                just_dropped = Some(j);
                if !chol.rebuild(gram, &active) {
                    return Err(Error::Degenerate("active Gram block lost positive definiteness".into()));
                }
            }
            Event::Residual => {
                let point = exact_point(gram, aty, y_sq, c, lambda.max(0.0), step + 1);
                return Ok(point);
            }
            Event::End => {
                let t = target_penalty;
                if residual_target.is_none() {
                    refit_support(gram, aty, &mut c, &active, t, &w);
                }
                let point = exact_point(gram, aty, y_sq, c, t, step + 1);
                if let Some(r2) = residual_target {
                    if point.residual * point.residual > r2 * (1.0 + 1e-12) {
                        return Err(Error::Infeasible { epsilon: r2.sqrt(), best: point.residual });
                    }
                }
                return Ok(point);
            }
        }
        debug_assert_eq!(chol.len(), active.len());
    }
    Err(Error::NotConverged { iterations: max_steps, residual: lambda })
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Join(usize),
    Drop(usize),
    Residual,
    End,
}

fn finish(
    c: DVector<f64>,
    penalty: f64,
    res_sq: f64,
    steps: usize,
    residual_target: Option<f64>,
    stop: PathStop,
) -> Result<PathPoint> {
    if let (Some(r2), PathStop::Residual(eps)) = (residual_target, stop) {
        if res_sq > r2 {
            return Err(Error::Infeasible { epsilon: eps, best: res_sq.max(0.0).sqrt() });
        }
    }
    Ok(PathPoint { coefficients: c, penalty, residual: res_sq.max(0.0).sqrt(), steps })
}

/// Re-solves the stationarity system G_AA c_A = (Aᵀy)_A - t·w_A∘s_A on the final
/// support with a fresh factorization and two rounds of iterative refinement,
/// removing the drift accumulated along the path. Kept only if the signs hold.
fn refit_support(
    gram: &DMatrix<f64>,
    aty: &DVector<f64>,
    c: &mut DVector<f64>,
    active: &[usize],
    t: f64,
    w: &dyn Fn(usize) -> f64,
) {
    if active.is_empty() {
        return;
    }
    let g_aa = DMatrix::from_fn(active.len(), active.len(), |r, k| gram[(active[r], active[k])]);
    let Some(chol) = g_aa.clone().cholesky() else { return };
    let rhs = DVector::from_fn(active.len(), |r, _| aty[active[r]] - t * w(active[r]) * c[active[r]].signum());
    let mut z = chol.solve(&rhs);
    for _ in 0..2 {
        let r = &rhs - &g_aa * &z;
        z += chol.solve(&r);
    }
    let consistent = active.iter().zip(z.iter()).all(|(&j, zj)| zj * c[j] > 0.0);
    if consistent && z.iter().all(|v| v.is_finite()) {
        for (&j, zj) in active.iter().zip(z.iter()) {
            c[j] = *zj;
        }
    }
}

/// Recomputes the residual from scratch instead of trusting the running update.
fn exact_point(
    gram: &DMatrix<f64>,
    aty: &DVector<f64>,
    y_sq: f64,
    c: DVector<f64>,
    penalty: f64,
    steps: usize,
) -> PathPoint {
    let res_sq = residual_sq(gram, aty, y_sq, &c);
    PathPoint { coefficients: c, penalty, residual: res_sq.max(0.0).sqrt(), steps }
}

/// ‖y - Ac‖² from the Gram form.
pub fn residual_sq(gram: &DMatrix<f64>, aty: &DVector<f64>, y_sq: f64, c: &DVector<f64>) -> f64 {
    y_sq - 2.0 * aty.dot(c) + c.dot(&(gram * c))
}

/// Smallest γ > 0 with aγ² + bγ + c0 = 0, for a ≥ 0, b < 0 and c0 > 0.
fn first_crossing(a: f64, b: f64, c0: f64) -> Option<f64> {
    if c0 <= 0.0 {
        return Some(0.0);
    }
    if a <= 0.0 {
        return (b < 0.0).then(|| -c0 / b);
    }
    let disc = b * b - 4.0 * a * c0;
    if disc < 0.0 {
        return None;
    }
    // Stable form of the smaller root.
    let root = 2.0 * c0 / (-b + disc.sqrt());
    (root > 0.0).then_some(root)
}

/// Worst violation of the optimality conditions of
/// min_x ‖Ax - y‖² + Σ wᵢ|xᵢ| at `x`, with gradient g = 2(Gx - Aᵀy):
/// |gᵢ + wᵢ sign(xᵢ)| on the support and (|gᵢ| - wᵢ)₊ off it.
pub fn lasso_kkt_residual(gram: &DMatrix<f64>, aty: &DVector<f64>, weights: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let grad = (gram * x - aty) * 2.0;
    grad.iter()
        .zip(weights.iter())
        .zip(x.iter())
        .map(|((g, w), xi)| if *xi != 0.0 { (g + w * xi.signum()).abs() } else { (g.abs() - w).max(0.0) })
        .fold(0.0, f64::max)
}

/// Options for the weighted LASSO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Required KKT residual.
    pub tolerance: f64,
    /// Coordinate-descent sweeps.
    pub max_iterations: usize,
    pub method: LassoMethod,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 10_000, method: LassoMethod::Homotopy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LassoMethod {
    /// Exact regularization path, polished by coordinate descent if needed.
    Homotopy,
    /// Cyclic coordinate descent from zero.
    CoordinateDescent,
}

/// Solution of a weighted LASSO with its optimality certificate.
#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub x: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// min_x ‖Ax - y‖² + Σ wᵢ|xᵢ| on the Gram form. Zero weights leave their
/// coordinates unpenalized.
pub fn weighted_lasso_gram(
    gram: &DMatrix<f64>,
    aty: &DVector<f64>,
    y_sq: f64,
    weights: &DVector<f64>,
    opts: &LassoOptions,
) -> Result<LassoSolution> {
    let k = aty.len();
    if gram.shape() != (k, k) || weights.len() != k {
        return Err(Error::Shape(format!("Gram {:?}, Aᵀy {k}, weights {}", gram.shape(), weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain("LASSO weights must be finite and >= 0".into()));
    }
    if gram.iter().chain(aty.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("LASSO design must be finite".into()));
    }
    let start = match opts.method {
        LassoMethod::Homotopy => Some(weighted_path(gram, aty, y_sq, weights)?),
        LassoMethod::CoordinateDescent => None,
    };
    let (x0, path_steps) = match start {
        Some((x, steps)) => {
            let kkt = lasso_kkt_residual(gram, aty, weights, &x);
            if kkt <= opts.tolerance {
                return Ok(LassoSolution { x, kkt_residual: kkt, iterations: steps });
            }
            (x, steps)
        }
        None => (DVector::zeros(k), 0),
    };
    let mut sol = coordinate_descent(gram, aty, weights, x0, opts)?;
    sol.iterations += path_steps;
    Ok(sol)
}

/// Path solution of the weighted problem; unpenalized coordinates are
/// profiled out by least squares.
fn weighted_path(
    gram: &DMatrix<f64>,
    aty: &DVector<f64>,
    y_sq: f64,
    weights: &DVector<f64>,
) -> Result<(DVector<f64>, usize)> {
    let k = aty.len();
    let free: Vec<usize> = (0..k).filter(|&i| weights[i] == 0.0).collect();
    let pen: Vec<usize> = (0..k).filter(|&i| weights[i] > 0.0).collect();
    let mut x = DVector::zeros(k);

    // Profile out unpenalized coordinates: x_U = G_UU⁺ (Aᵀy_U - G_UP x_P).
    let (g_pp, b_p, y_sq_p, free_solve) = if free.is_empty() {
        (select(gram, &pen, &pen), select_vec(aty, &pen), y_sq, None)
    } else {
        let g_uu = select(gram, &free, &free);
        let pinv = g_uu
            .clone()
            .pseudo_inverse(1e-12 * g_uu.amax().max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Degenerate(format!("unpenalized block: {e}")))?;
        let g_up = select(gram, &free, &pen);
        let b_u = select_vec(aty, &free);
        let g_pp = select(gram, &pen, &pen) - g_up.transpose() * &pinv * &g_up;
        let b_p = select_vec(aty, &pen) - g_up.transpose() * &pinv * &b_u;
        let y_sq_p = y_sq - b_u.dot(&(&pinv * &b_u));
        (g_pp, b_p, y_sq_p, Some((pinv, g_up, b_u)))
    };

    let mut steps = 0;
    if !pen.is_empty() {
        // The objective is twice ½‖·‖² + ½Σwᵢ|xᵢ|, so the path stops at t = ½.
        let w_p = select_vec(weights, &pen);
        let point = homotopy_weighted(&g_pp, &b_p, y_sq_p, Some(&w_p), PathStop::Penalty(0.5))?;
        steps = point.steps;
        for (pos, &i) in pen.iter().enumerate() {
            x[i] = point.coefficients[pos];
        }
    }
    if let Some((pinv, g_up, b_u)) = free_solve {
        let x_p = select_vec(&x, &pen);
        let x_u = &pinv * (b_u - g_up * x_p);
        for (pos, &i) in free.iter().enumerate() {
            x[i] = x_u[pos];
        }
    }
    Ok((x, steps))
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |r, _| v[idx[r]])
}

/// Cyclic coordinate descent on the Gram form, with sweeps restricted to the
/// support until it settles and a full sweep to check optimality.
fn coordinate_descent(
    gram: &DMatrix<f64>,
    aty: &DVector<f64>,
    weights: &DVector<f64>,
    mut x: DVector<f64>,
    opts: &LassoOptions,
) -> Result<LassoSolution> {
    let k = aty.len();
    let mut gx = gram * &x;
    let mut full_sweep = true;
    for iter in 1..=opts.max_iterations {
        for i in 0..k {
            if !full_sweep && x[i] == 0.0 {
                continue;
            }
            let gii = gram[(i, i)];
            if gii <= 0.0 {
                continue;
            }
            let rho = aty[i] - gx[i] + gii * x[i];
            let half_w = 0.5 * weights[i];
            let new = if rho > half_w {
                (rho - half_w) / gii
            } else if rho < -half_w {
                (rho + half_w) / gii
            } else {
                0.0
            };
            let delta = new - x[i];
            if delta != 0.0 {
                gx.axpy(delta, &gram.column(i), 1.0);
                x[i] = new;
            }
        }
        if iter % 10 == 0 || full_sweep {
            let kkt = lasso_kkt_residual(gram, aty, weights, &x);
            if kkt <= opts.tolerance {
                if full_sweep {
                    return Ok(LassoSolution { x, kkt_residual: kkt, iterations: iter });
                }
                full_sweep = true;
                continue;
            }
        }
        full_sweep = iter % 50 == 0;
    }
    let kkt = lasso_kkt_residual(gram, aty, weights, &x);
    if kkt <= opts.tolerance {
        return Ok(LassoSolution { x, kkt_residual: kkt, iterations: opts.max_iterations });
    }
    Err(Error::NotConverged { iterations: opts.max_iterations, residual: kkt })
}

/// min ‖y - Ac‖ bound via the path: the smallest-ℓ1 point with residual ≤ eps.
/// Returns the point and its penalty level.
pub fn constrained_l1(gram: &DMatrix<f64>, aty: &DVector<f64>, y_sq: f64, eps: f64) -> Result<PathPoint> {
    homotopy(gram, aty, y_sq, PathStop::Residual(eps))
}

/// Stationarity of the constrained problem at penalty level t: on the support
/// (Aᵀ(y - Ac))ᵢ = t·sign(cᵢ), elsewhere |(Aᵀ(y - Ac))ᵢ| ≤ t.
pub fn path_kkt_residual(gram: &DMatrix<f64>, aty: &DVector<f64>, c: &DVector<f64>, t: f64) -> f64 {
    let corr = aty - gram * c;
    corr.iter()
        .zip(c.iter())
        .map(|(r, ci)| if *ci != 0.0 { (r - t * ci.signum()).abs() } else { (r.abs() - t).max(0.0) })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gram_form(a: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
        (a.transpose() * a, a.transpose() * y, y.norm_squared())
    }

    fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        // Small LCG so the fixtures need no RNG plumbing.
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DMatrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn unregularized_square_system() {
        let a = matrix(6, 6, 1) + DMatrix::identity(6, 6) * 3.0;
        let x_true = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        let y = &a * &x_true;
        let (g, b, ysq) = gram_form(&a, &y);
        for method in [LassoMethod::Homotopy, LassoMethod::CoordinateDescent] {
            let opts = LassoOptions { method, tolerance: 1e-10, ..Default::default() };
            let sol = weighted_lasso_gram(&g, &b, ysq, &DVector::zeros(6), &opts).unwrap();
            assert!((sol.x - &x_true).amax() < 1e-8, "{method:?}");
        }
    }

    #[test]
    fn deadzone_gives_zero() {
        let a = matrix(8, 5, 2);
        let y = DVector::from_fn(8, |i, _| (i as f64).cos());
        let (g, b, ysq) = gram_form(&a, &y);
        let w = b.map(|v| 2.0 * v.abs() + 1e-12);
        let sol = weighted_lasso_gram(&g, &b, ysq, &w, &LassoOptions::default()).unwrap();
        assert!(sol.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residual_stop_hits_the_bound() {
        let a = matrix(6, 10, 3);
        let y = DVector::from_fn(6, |i, _| (i as f64 * 0.7).sin());
        let (g, b, ysq) = gram_form(&a, &y);
        let eps = 0.3 * y.norm();
        let p = constrained_l1(&g, &b, ysq, eps).unwrap();
        assert!((p.residual - eps).abs() < 1e-10, "{} vs {eps}", p.residual);
        assert!(path_kkt_residual(&g, &b, &p.coefficients, p.penalty) < 1e-10);
        // Already inside the bound: zero code.
        let p0 = constrained_l1(&g, &b, ysq, 2.0 * y.norm()).unwrap();
        assert!(p0.coefficients.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn infeasible_bound_is_reported() {
        let a = matrix(10, 3, 4);
        let y = DVector::from_fn(10, |i, _| 1.0 + i as f64);
        let (g, b, ysq) = gram_form(&a, &y);
        match constrained_l1(&g, &b, ysq, 1e-6) {
            Err(Error::Infeasible { epsilon, best }) => assert!(best > epsilon),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = matrix(10, 8, 5);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let (g, b, ysq) = gram_form(&a, &y);
        let opts = LassoOptions { method: LassoMethod::CoordinateDescent, tolerance: 1e-14, max_iterations: 3 };
        assert!(matches!(
            weighted_lasso_gram(&g, &b, ysq, &DVector::from_element(8, 1e-3), &opts),
            Err(Error::NotConverged { iterations: 3, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn increasing_penalty_never_grows_l1(seed in 0u64..10_000, t1 in 0.01f64..2.0, ratio in 1.0f64..5.0) {
            let a = matrix(12, 9, seed);
            let y = matrix(12, 1, seed + 1).column(0).into_owned();
            let (g, b, ysq) = gram_form(&a, &y);
            let w1 = DVector::from_element(9, t1);
            let w2 = DVector::from_element(9, t1 * ratio);
            let opts = LassoOptions::default();
            let x1 = weighted_lasso_gram(&g, &b, ysq, &w1, &opts).unwrap().x;
            let x2 = weighted_lasso_gram(&g, &b, ysq, &w2, &opts).unwrap().x;
            prop_assert!(x2.lp_norm(1) <= x1.lp_norm(1) + 1e-9);
        }

        #[test]
        fn homotopy_and_coordinate_descent_agree(seed in 0u64..10_000, t in 0.001f64..1.0) {
            let a = matrix(15, 7, seed);
            let y = matrix(15, 1, seed + 7).column(0).into_owned();
            let (g, b, ysq) = gram_form(&a, &y);
            let w = DVector::from_fn(7, |i, _| t * (1.0 + i as f64 * 0.3));
            let h = weighted_lasso_gram(&g, &b, ysq, &w, &LassoOptions::default()).unwrap();
            let cd = weighted_lasso_gram(&g, &b, ysq, &w, &LassoOptions {
                method: LassoMethod::CoordinateDescent, tolerance: 1e-11, ..Default::default()
            }).unwrap();
            let obj = |x: &DVector<f64>| residual_sq(&g, &b, ysq, x) + w.dot(&x.abs());
            prop_assert!((obj(&h.x) - obj(&cd.x)).abs() < 1e-9 * (1.0 + obj(&h.x)));
            prop_assert!(h.kkt_residual <= 1e-8);
        }
    }
}
