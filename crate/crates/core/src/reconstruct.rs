//! Per-voxel reconstruction from undersampled measurements.
//!
//! Both estimators work on the scale-free design ζ^{3/4}·M′, in which the
//! coefficients of a signal shape do not depend on ζ, and convert back to the
//! orthonormal SPF coefficients afterwards.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::scheme::AcquisitionScheme;
use crate::solver::{self, LassoMethod, LassoOptions, LassoSolution};
use crate::spf_basis::{
    coefficient_scale, complete_coefficients, constrained_design, evaluate_on_scheme, scale_for_md,
    shifted_measurements, CoefficientKind, CoefficientVector, SpfSpec,
};

/// Attenuation exponent b·MD above which samples are left out of the MD fit.
const MD_FIT_EXPONENT: f64 = 1.5;
const MD_FIT_PASSES: usize = 4;

/// Reconstruction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    /// λ of the dictionary estimator; atom i is penalized by S·λ/hᵢ.
    pub lambda: f64,
    /// Angular weight of the baseline penalty λ_l·l²(l+1)².
    pub lambda_l: f64,
    /// Radial weight of the baseline penalty λ_n·n²(n+1)².
    pub lambda_n: f64,
    pub md_floor: f64,
    pub md_ceiling: f64,
    /// KKT tolerance of the weighted LASSO.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self::noise_free()
    }
}

impl ReconConfig {
    pub fn noise_free() -> Self {
        Self {
            lambda: 1e-8,
            lambda_l: 1e-8,
            lambda_n: 1e-8,
            md_floor: 0.1e-3,
            md_ceiling: 3.0e-3,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }

    pub fn noisy() -> Self {
        Self { lambda: 1e-5, lambda_l: 1e-5, lambda_n: 1e-5, tolerance: 1e-6, ..Self::noise_free() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda_l >= 0.0 && self.lambda_n >= 0.0) {
            return Err(Error::Domain("regularization weights must be >= 0".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Domain(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if !(self.md_floor > 0.0 && self.md_floor <= self.md_ceiling) {
            return Err(Error::Domain(format!(
                "MD clamp [{}, {}] is not a positive interval",
                self.md_floor, self.md_ceiling
            )));
        }
        Ok(())
    }

    fn lasso_options(&self) -> LassoOptions {
        LassoOptions { tolerance: self.tolerance, max_iterations: self.max_iterations, method: LassoMethod::Homotopy }
    }
}

/// Diagonal penalty weights Λ.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationMatrix {
    weights: DVector<f64>,
}

impl RegularizationMatrix {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("regularization weights must be finite and >= 0".into()));
        }
        Ok(Self { weights })
    }

    /// Λ_nlm = λ_l·l²(l+1)² + λ_n·n²(n+1)² over the stripped layout.
    pub fn laplace_beltrami(spec: &SpfSpec, lambda_l: f64, lambda_n: f64) -> Result<Self> {
        let weights = spec.terms().filter(|(n, _, _)| *n >= 1).map(|(n, l, _)| {
            let (n, l) = (n as f64, l as f64);
            lambda_l * (l * (l + 1.0)).powi(2) + lambda_n * (n * (n + 1.0)).powi(2)
        });
        Self::new(DVector::from_iterator(spec.stripped_len(), weights))
    }

    /// Λᵢ = S·λ/hᵢ.
    pub fn energy_weighted(energies: &DVector<f64>, samples: usize, lambda: f64) -> Result<Self> {
        if energies.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Domain("atom energies must be > 0".into()));
        }
        Self::new(energies.map(|h| samples as f64 * lambda / h))
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
}

/// Least-squares ADC through the origin: the slope of -ln Eᵢ against
/// bᵢ = 4π²τqᵢ², clamped to [floor, ceiling].
///
/// Samples with E ≤ 0 are skipped. The fit is repeated on the samples with
/// b·MD ≤ 1.5 under the current estimate, which keeps noise-floor samples at
/// high b from dragging the slope down; if fewer than three samples qualify,
/// all usable samples are kept.
pub fn estimate_md(scheme: &AcquisitionScheme, values: &[f64], floor: f64, ceiling: f64) -> Result<f64> {
    if values.len() != scheme.len() {
        return Err(Error::Shape(format!("{} values for {} samples", values.len(), scheme.len())));
    }
    let tau = scheme.tau();
    let points: Vec<(f64, f64)> = scheme
        .iter()
        .zip(values)
        .filter(|(s, e)| **e > 0.0 && e.is_finite() && s.q > 0.0)
        .map(|(s, e)| (4.0 * PI * PI * tau * s.q * s.q, -e.ln()))
        .collect();
    if points.is_empty() {
        return Err(Error::Degenerate("no samples with E > 0 and q > 0 for MD estimation".into()));
    }
    let slope = |limit: Option<f64>| {
        let (mut sxy, mut sxx, mut used) = (0.0, 0.0, 0usize);
        for (b, y) in &points {
            if limit.is_none_or(|l| *b <= l) {
                sxy += b * y;
                sxx += b * b;
                used += 1;
            }
        }
        (sxy / sxx, used)
    };
    let (mut md, _) = slope(None);
    for _ in 0..MD_FIT_PASSES {
        let limit = MD_FIT_EXPONENT / md.clamp(floor, ceiling);
        let (next, used) = slope(Some(limit));
        if used < 3 {
            break;
        }
        md = next;
    }
    if !md.is_finite() {
        return Err(Error::Degenerate("MD fit is not finite".into()));
    }
    Ok(md.clamp(floor, ceiling))
}

/// ζ = 1/(8π²τ·md).
pub fn adaptive_scale(md: f64, tau: f64) -> f64 {
    scale_for_md(md, tau)
}

/// min ‖Ax - y‖² + Σ Λᵢ|xᵢ|; coordinates with Λᵢ = 0 are unpenalized.
pub fn weighted_lasso(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &RegularizationMatrix,
    opts: &LassoOptions,
) -> Result<LassoSolution> {
    if a.nrows() != y.len() || a.ncols() != weights.weights().len() {
        return Err(Error::Shape(format!(
            "A is {:?}, y has {}, Λ has {}",
            a.shape(),
            y.len(),
            weights.weights().len()
        )));
    }
    let gram = a.tr_mul(a);
    let aty = a.tr_mul(y);
    solver::weighted_lasso_gram(&gram, &aty, y.norm_squared(), weights.weights(), opts)
}

/// Per-voxel diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub md: f64,
    pub zeta: f64,
    /// Nonzero estimated coefficients (dictionary or SPF).
    pub nonzeros: usize,
    /// ‖Ax - e′‖₂ at the solution.
    pub residual: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// A reconstructed voxel.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Full SPF coefficients at the adapted scale; E(0) = 1 by construction.
    pub coefficients: CoefficientVector,
    /// Scale-free estimated coefficients (dictionary codes or stripped SPF).
    pub estimate: DVector<f64>,
    pub diagnostics: Diagnostics,
}

struct ScaledProblem {
    spec: SpfSpec,
    md: f64,
    design: DMatrix<f64>,
    target: DVector<f64>,
}

fn scaled_problem(
    values: &[f64],
    scheme: &AcquisitionScheme,
    base: &SpfSpec,
    cfg: &ReconConfig,
) -> Result<ScaledProblem> {
    cfg.validate()?;
    if (scheme.tau() - base.tau).abs() > 1e-12 * base.tau {
        return Err(Error::Domain(format!("scheme τ {} differs from basis τ {}", scheme.tau(), base.tau)));
    }
    let md = estimate_md(scheme, values, cfg.md_floor, cfg.md_ceiling)?;
    let spec = base.with_zeta(adaptive_scale(md, scheme.tau()))?;
    let design = constrained_design(scheme, &spec)?.matrix * coefficient_scale(spec.zeta);
    let target = shifted_measurements(scheme, &spec, values)?;
    Ok(ScaledProblem { spec, md, design, target })
}

fn finish(
    problem: &ScaledProblem,
    a: &DMatrix<f64>,
    stripped_shape: DVector<f64>,
    sol: LassoSolution,
) -> Result<Reconstruction> {
    let residual = (a * &sol.x - &problem.target).norm();
    let a_prime = CoefficientVector::new(
        CoefficientKind::Stripped,
        problem.spec,
        stripped_shape * coefficient_scale(problem.spec.zeta),
    )?;
    Ok(Reconstruction {
        coefficients: complete_coefficients(&a_prime)?,
        diagnostics: Diagnostics {
            md: problem.md,
            zeta: problem.spec.zeta,
            nonzeros: sol.x.iter().filter(|v| **v != 0.0).count(),
            residual,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
        },
        estimate: sol.x,
    })
}

/// Dictionary estimator: estimate MD, adapt ζ, solve the weighted LASSO over
/// the sampled atoms (scale-free M′·D) with Λᵢ = S·λ/hᵢ, then complete a′ = Dc.
pub fn reconstruct_voxel(
    values: &[f64],
    scheme: &AcquisitionScheme,
    dict: &Dictionary,
    cfg: &ReconConfig,
) -> Result<Reconstruction> {
    let problem = scaled_problem(values, scheme, dict.spec(), cfg)?;
    let a = &problem.design * dict.atoms();
    let energies = DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm_squared()));
    if energies.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Degenerate("an atom is invisible to this scheme".into()));
    }
    let penalty = RegularizationMatrix::energy_weighted(&energies, scheme.len(), cfg.lambda)?;
    let sol = weighted_lasso(&a, &problem.target, &penalty, &cfg.lasso_options())?;
    let shape = dict.atoms() * &sol.x;
    finish(&problem, &a, shape, sol)
}

/// [`reconstruct_voxel`] over many voxels sharing one scheme, in input order.
pub fn reconstruct_voxels(
    voxels: &[Vec<f64>],
    scheme: &AcquisitionScheme,
    dict: &Dictionary,
    cfg: &ReconConfig,
) -> Vec<Result<Reconstruction>> {
    crate::parallel::map_slice(voxels, |v| reconstruct_voxel(v, scheme, dict, cfg))
}

/// Baseline estimator: weighted LASSO directly over the stripped SPF
/// coefficients with the Laplace-Beltrami style penalty, at the same adaptive ζ.
pub fn l1_spfi(
    values: &[f64],
    scheme: &AcquisitionScheme,
    spec: &SpfSpec,
    cfg: &ReconConfig,
) -> Result<Reconstruction> {
    let problem = scaled_problem(values, scheme, spec, cfg)?;
    let penalty = RegularizationMatrix::laplace_beltrami(spec, cfg.lambda_l, cfg.lambda_n)?;
    let sol = weighted_lasso(&problem.design, &problem.target, &penalty, &cfg.lasso_options())?;
    let shape = sol.x.clone();
    finish(&problem, &problem.design, shape, sol)
}

/// ‖Ê - E‖₂/√S over a reference scheme.
pub fn predict_and_rmse(a: &CoefficientVector, reference: &AcquisitionScheme, values: &[f64]) -> Result<f64> {
    if values.len() != reference.len() || values.is_empty() {
        return Err(Error::Shape(format!("{} reference values for {} samples", values.len(), reference.len())));
    }
    let predicted = evaluate_on_scheme(a, reference)?;
    Ok(rmse(&predicted, values))
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}
