//! Analysis: SPF coefficients of a continuous signal by numerical inner
//! product, and the unit-normalized training matrix built from them.

use std::f64::consts::PI;

use gauss_quad::{GaussLaguerre, GaussLegendre};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::phantom::{sphere_directions, SignalModel, TensorSpec};
use crate::spf_basis::{radial_values, sh_values, CoefficientKind, CoefficientVector, SpfSpec};

/// Quadrature for ∫₀^∞ · q² dq and ∫_{S²} · du.
///
/// The radial rule is generalized Gauss-Laguerre (weight x^{1/2}e^{-x}) in
/// x = q²/ζ, which integrates products G_n·G_m exactly. The spherical rule is
/// a Gauss-Legendre × uniform-azimuth product, exact for harmonics up to
/// degree `2·sphere_order - 1`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// (x, ln w) pairs of the radial rule.
    radial: Vec<(f64, f64)>,
    sphere: Vec<(Vector3<f64>, f64)>,
    /// Gauss-Legendre rule on [-1, 1] for axially symmetric angular integrals.
    polar: Vec<(f64, f64)>,
}

const LAGUERRE_ALPHA: f64 = 0.5;

/// Scaled three-term recurrence for L_n^{(1/2)}(x): returns (L_n, L_{n-1},
/// L_{n+1}) divided by a common factor e^{scale}, and `scale`.
fn scaled_laguerre(n: usize, x: f64) -> (f64, f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut scale = 0.0;
    for k in 0..=n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + LAGUERRE_ALPHA - x) * cur - (kf + LAGUERRE_ALPHA) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
        let mag = cur.abs().max(prev.abs());
        if mag > 1e100 {
            prev /= mag;
            cur /= mag;
            scale += mag.ln();
        }
    }
    // After the loop `cur` is L_{n+1} and `prev` is L_n; recover L_{n-1}
    // from the recurrence run backwards is not needed, so recompute it.
    let nf = n as f64;
    let l_n = prev;
    let l_np1 = cur;
    let l_nm1 = if n == 0 {
        0.0
    } else {
        ((2.0 * nf + 1.0 + LAGUERRE_ALPHA - x) * l_n - (nf + 1.0) * l_np1) / (nf + LAGUERRE_ALPHA)
    };
    (l_n, l_nm1, l_np1, scale)
}

/// Polishes a Gauss-Laguerre node by Newton steps and returns it with the log
/// of its weight, w = Γ(n+α+1)·x / (n!·(n+1)²·L_{n+1}(x)²). Eigenvector-based
/// weights are only accurate in absolute terms, which is useless once they
/// are rescaled by e^x.
fn laguerre_node_log_weight(n: usize, mut x: f64) -> (f64, f64) {
    let nf = n as f64;
    for _ in 0..3 {
        let (l_n, l_nm1, _, _) = scaled_laguerre(n, x);
        let deriv = (nf * l_n - (nf + LAGUERRE_ALPHA) * l_nm1) / x;
        if deriv != 0.0 {
            x -= l_n / deriv;
        }
    }
    let (_, _, l_np1, scale) = scaled_laguerre(n, x);
    let ln_w = libm::lgamma(nf + LAGUERRE_ALPHA + 1.0) - libm::lgamma(nf + 1.0) + x.ln()
        - 2.0 * ((nf + 1.0).ln() + l_np1.abs().ln() + scale);
    (x, ln_w)
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::new(60, 20).expect("default quadrature orders are valid")
    }
}

impl QuadratureRule {
    /// `radial_nodes` Laguerre nodes and a `sphere_order` × `2·sphere_order`
    /// product rule on the sphere.
    pub fn new(radial_nodes: usize, sphere_order: usize) -> Result<Self> {
        if !(2..=120).contains(&radial_nodes) {
            return Err(Error::Domain(format!("radial node count must lie in 2..=120, got {radial_nodes}")));
        }
        if sphere_order < 1 {
            return Err(Error::Domain("sphere order must be >= 1".into()));
        }
        let laguerre = GaussLaguerre::new(
            radial_nodes.try_into().expect("non-zero"),
            LAGUERRE_ALPHA.try_into().expect("alpha above -1"),
        );
        let radial = laguerre.nodes().map(|x| laguerre_node_log_weight(radial_nodes, *x)).collect();

        let legendre = GaussLegendre::new(sphere_order.try_into().expect("non-zero"));
        let n_phi = 2 * sphere_order;
        let dphi = 2.0 * PI / n_phi as f64;
        let mut sphere = Vec::with_capacity(sphere_order * n_phi);
        for (z, w) in legendre.iter() {
            let r = (1.0 - z * z).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                sphere.push((Vector3::new(r * phi.cos(), r * phi.sin(), *z), w * dphi));
            }
        }
        let polar_rule = GaussLegendre::new(96.try_into().expect("non-zero"));
        let polar = polar_rule.iter().map(|(t, w)| (*t, *w)).collect();
        Ok(Self { radial, sphere, polar })
    }

    /// Highest harmonic degree the spherical rule integrates exactly.
    pub fn sphere_degree(&self) -> usize {
        let n_phi = (self.sphere.len() as f64 / 2.0).sqrt().round() as usize * 2;
        n_phi - 1
    }

    pub fn radial_len(&self) -> usize {
        self.radial.len()
    }

    /// Radial nodes q_k and weights ω_k with Σ ω_k h(q_k) ≈ ∫₀^∞ h(q) q² dq
    /// at scale ζ. Exact when h·e^{x} is a polynomial in x = q²/ζ of degree
    /// below twice the node count.
    pub fn radial_points(&self, zeta: f64) -> Vec<(f64, f64)> {
        let jac = 0.5 * zeta.powf(1.5);
        self.radial.iter().map(|&(x, ln_w)| ((zeta * x).sqrt(), (ln_w + x).exp() * jac)).collect()
    }

    /// Spherical nodes and weights; weights sum to 4π.
    pub fn sphere_points(&self) -> &[(Vector3<f64>, f64)] {
        &self.sphere
    }
}

/// Full SPF coefficients a_nlm = ∬ E(q,u) G_n(q|ζ) Y_l^m(u) q² dq du of an
/// arbitrary signal model.
pub fn project_signal(signal: &dyn SignalModel, spec: &SpfSpec, rule: &QuadratureRule) -> CoefficientVector {
    let k = spec.sh_len();
    let sphere = rule.sphere_points();
    let sh: Vec<Vec<f64>> = sphere.iter().map(|(u, _)| sh_values(spec.angular_order, u)).collect();
    let radial = rule.radial_points(spec.zeta);
    let mut coeffs = DVector::zeros(spec.full_len());
    for &(q, omega) in &radial {
        let mut angular = vec![0.0; k];
        for ((u, w), y) in sphere.iter().zip(&sh) {
            let e = signal.attenuation(q, u) * w;
            if e == 0.0 {
                continue;
            }
            for (acc, yj) in angular.iter_mut().zip(y) {
                *acc += e * yj;
            }
        }
        let g = radial_values(spec.radial_order, q, spec.zeta);
        for (n, gn) in g.iter().enumerate() {
            let scale = omega * gn;
            for j in 0..k {
                coeffs[n * k + j] += scale * angular[j];
            }
        }
    }
    CoefficientVector::new(CoefficientKind::Full, *spec, coeffs).expect("length matches spec")
}

/// Radial-angular profile R_{n,l} of a prolate tensor with its axis along z,
/// via the Funk-Hecke theorem: a_nlm = R_{n,l/2}·Y_l^m(axis).
fn tensor_profile(t: &TensorSpec, spec: &SpfSpec, rule: &QuadratureRule) -> Vec<f64> {
    let [l_par, l_perp, _] = t.eigenvalues();
    let n_deg = spec.angular_order / 2 + 1;
    let mut profile = vec![0.0; (spec.radial_order + 1) * n_deg];
    let legendre: Vec<Vec<f64>> = rule.polar.iter().map(|&(tt, _)| legendre_even(spec.angular_order, tt)).collect();
    for &(q, omega) in &rule.radial_points(spec.zeta) {
        let c = 4.0 * PI * PI * spec.tau * q * q;
        let mut lambda = vec![0.0; n_deg];
        for (&(tt, w), p) in rule.polar.iter().zip(&legendre) {
            let f = (-c * (l_perp + (l_par - l_perp) * tt * tt)).exp() * w;
            for (acc, pl) in lambda.iter_mut().zip(p) {
                *acc += f * pl;
            }
        }
        let g = radial_values(spec.radial_order, q, spec.zeta);
        for (n, gn) in g.iter().enumerate() {
            for (d, lam) in lambda.iter().enumerate() {
                profile[n * n_deg + d] += omega * gn * 2.0 * PI * lam;
            }
        }
    }
    profile
}

/// Legendre P_l(t) for even l ≤ l_max.
fn legendre_even(l_max: usize, t: f64) -> Vec<f64> {
    let mut p = vec![1.0, t];
    for l in 1..l_max {
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * t * p[l] - lf * p[l - 1]) / (lf + 1.0);
        p.push(next);
    }
    p.into_iter().step_by(2).take(l_max / 2 + 1).collect()
}

fn expand_profile(profile: &[f64], spec: &SpfSpec, axis: &Vector3<f64>, out: &mut [f64], weight: f64) {
    let k = spec.sh_len();
    let n_deg = spec.angular_order / 2 + 1;
    let y = sh_values(spec.angular_order, axis);
    for n in 0..=spec.radial_order {
        let mut j = 0;
        for d in 0..n_deg {
            let l = 2 * d;
            let r = profile[n * n_deg + d] * weight;
            for _ in 0..(2 * l + 1) {
                out[n * k + j] += r * y[j];
                j += 1;
            }
        }
    }
}

/// Full SPF coefficients of a single tensor signal using the exact angular
/// integral for axially symmetric functions. Agrees with [`project_signal`]
/// up to the spherical rule's aliasing error.
pub fn project_tensor(t: &TensorSpec, spec: &SpfSpec, rule: &QuadratureRule) -> CoefficientVector {
    let profile = tensor_profile(t, spec, rule);
    let mut coeffs = vec![0.0; spec.full_len()];
    expand_profile(&profile, spec, t.axis(), &mut coeffs, 1.0);
    CoefficientVector::new(CoefficientKind::Full, *spec, DVector::from_vec(coeffs)).expect("length matches spec")
}

/// Full SPF coefficients of a tensor mixture, by linearity of projection.
pub fn project_mixture(m: &crate::phantom::MixtureSpec, spec: &SpfSpec, rule: &QuadratureRule) -> CoefficientVector {
    let mut coeffs = vec![0.0; spec.full_len()];
    for (w, t) in m.components() {
        let profile = tensor_profile(t, spec, rule);
        expand_profile(&profile, spec, t.axis(), &mut coeffs, *w);
    }
    CoefficientVector::new(CoefficientKind::Full, *spec, DVector::from_vec(coeffs)).expect("length matches spec")
}

/// Grid of single-tensor training signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingGrid {
    pub md_range: [f64; 2],
    pub fa_range: [f64; 2],
    pub n_md: usize,
    pub n_fa: usize,
    pub n_directions: usize,
}

impl Default for TrainingGrid {
    fn default() -> Self {
        Self { md_range: [0.5e-3, 0.9e-3], fa_range: [0.0, 0.9], n_md: 5, n_fa: 10, n_directions: 321 }
    }
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range[0] + range[1])];
    }
    (0..n).map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64).collect()
}

impl TrainingGrid {
    pub fn md_values(&self) -> Vec<f64> {
        linspace(self.md_range, self.n_md)
    }

    pub fn fa_values(&self) -> Vec<f64> {
        linspace(self.fa_range, self.n_fa)
    }

    pub fn len(&self) -> usize {
        self.n_md * self.n_fa * self.n_directions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unit-normalized stripped coefficient columns, one per grid point.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub spec: SpfSpec,
    pub grid: TrainingGrid,
    /// stripped_len × columns.
    pub columns: DMatrix<f64>,
    /// Grid points whose `a'` vanished (isotropic tensors at the reference
    /// diffusivity) and so have no direction to normalize.
    pub dropped: usize,
}

/// Relative norm below which a stripped vector counts as zero.
pub const ZERO_STRIPPED_TOL: f64 = 1e-10;

/// Builds the training matrix: for every (MD, FA, direction) the stripped
/// coefficients of the single-tensor signal at `spec.zeta`, scaled to unit ℓ2
/// norm. Order is MD-major, then FA, then direction.
pub fn build_training_set(grid: &TrainingGrid, spec: &SpfSpec, rule: &QuadratureRule) -> Result<TrainingSet> {
    let fa_values = grid.fa_values();
    let md_values = grid.md_values();
    if md_values.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Domain("training MD range must be positive".into()));
    }
    if fa_values.iter().any(|f| !(0.0..1.0).contains(f)) {
        return Err(Error::Domain("training FA range must lie in [0, 1)".into()));
    }
    let dirs = sphere_directions(grid.n_directions)?;
    let pairs: Vec<(f64, f64)> = md_values.iter().flat_map(|&md| fa_values.iter().map(move |&fa| (md, fa))).collect();
    let k = spec.sh_len();
    let stripped = spec.stripped_len();
    let blocks: Vec<Vec<DVector<f64>>> = parallel::map_slice(&pairs, |&(md, fa)| {
        let t = TensorSpec::from_md_fa(md, fa, Vector3::z()).expect("validated grid");
        let profile = tensor_profile(&t, spec, rule);
        let full_norm = profile.iter().map(|p| p * p).sum::<f64>().sqrt();
        dirs.iter()
            .filter_map(|u| {
                let mut full = vec![0.0; spec.full_len()];
                expand_profile(&profile, spec, u, &mut full, 1.0);
                let col = DVector::from_column_slice(&full[k..]);
                let norm = col.norm();
                (norm > ZERO_STRIPPED_TOL * full_norm.max(f64::MIN_POSITIVE)).then(|| col / norm)
            })
            .collect()
    });
    let cols: Vec<DVector<f64>> = blocks.into_iter().flatten().collect();
    let dropped = grid.len() - cols.len();
    let columns = if cols.is_empty() { DMatrix::zeros(stripped, 0) } else { DMatrix::from_columns(&cols) };
    Ok(TrainingSet { spec: *spec, grid: grid.clone(), columns, dropped })
}
