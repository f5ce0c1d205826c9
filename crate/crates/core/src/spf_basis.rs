//! Spherical polar Fourier (SPF) basis: Gaussian-Laguerre radial functions
//! times real spherical harmonics of even degree.
//!
//! Coefficients are laid out n-major, then even degree l ascending, then
//! m from -l to l. The full vector has `(N+1)(L+1)(L+2)/2` entries; the
//! stripped vector `a'` drops the n = 0 block, which is recovered from the
//! E(0) = 1 constraint by [`complete_coefficients`].
//!
//! Real spherical harmonics use the orthonormal convention without the
//! Condon-Shortley phase:
//!
//! ```text
//! Y_l^m = sqrt(2) K_l^m P_l^m(cos θ) cos(m φ)      m > 0
//! Y_l^0 = K_l^0 P_l(cos θ)
//! Y_l^m = sqrt(2) K_l^|m| P_l^|m|(cos θ) sin(|m| φ)  m < 0
//! K_l^m = sqrt((2l+1)/(4π) (l-m)!/(l+m)!)
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::{AcquisitionScheme, DEFAULT_TAU};

const UNIT_TOL: f64 = 1e-8;

/// Reference mean diffusivity d₀ (mm²/s) used to fix the learning scale.
pub const REFERENCE_MD: f64 = 0.7e-3;

/// Orders, scale and diffusion time of an SPF expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpfSpec {
    pub radial_order: usize,
    pub angular_order: usize,
    /// Scale ζ in mm⁻².
    pub zeta: f64,
    /// Diffusion time τ in seconds.
    pub tau: f64,
}

impl Default for SpfSpec {
    fn default() -> Self {
        Self { radial_order: 4, angular_order: 8, zeta: scale_for_md(REFERENCE_MD, DEFAULT_TAU), tau: DEFAULT_TAU }
    }
}

/// ζ = 1/(8π²τ·md): the scale at which an isotropic signal of diffusivity
/// `md` is exactly the n = 0 Gaussian.
pub fn scale_for_md(md: f64, tau: f64) -> f64 {
    1.0 / (8.0 * PI * PI * tau * md)
}

/// ζ^{3/4}. The radial functions carry a factor ζ^{-3/4}, so coefficients of a
/// fixed signal shape grow as ζ^{3/4}; dividing by this gives scale-free values.
pub fn coefficient_scale(zeta: f64) -> f64 {
    zeta.powf(0.75)
}

impl SpfSpec {
    pub fn new(radial_order: usize, angular_order: usize, zeta: f64, tau: f64) -> Result<Self> {
        if angular_order % 2 != 0 {
            return Err(Error::Domain(format!("angular order must be even, got {angular_order}")));
        }
        if !(zeta > 0.0) || !zeta.is_finite() {
            return Err(Error::Domain(format!("scale zeta must be > 0, got {zeta}")));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!("diffusion time must be > 0, got {tau}")));
        }
        Ok(Self { radial_order, angular_order, zeta, tau })
    }

    pub fn with_zeta(self, zeta: f64) -> Result<Self> {
        Self::new(self.radial_order, self.angular_order, zeta, self.tau)
    }

    /// Number of even-degree harmonics up to the angular order.
    pub fn sh_len(&self) -> usize {
        (self.angular_order + 1) * (self.angular_order + 2) / 2
    }

    pub fn full_len(&self) -> usize {
        (self.radial_order + 1) * self.sh_len()
    }

    pub fn stripped_len(&self) -> usize {
        self.radial_order * self.sh_len()
    }

    /// Position of (n, l, m) in the full layout.
    pub fn index(&self, n: usize, l: usize, m: i64) -> Option<usize> {
        if n > self.radial_order {
            return None;
        }
        sh_index(l, m, self.angular_order).map(|j| n * self.sh_len() + j)
    }

    /// Position of (n, l, m), n ≥ 1, in the stripped layout.
    pub fn stripped_index(&self, n: usize, l: usize, m: i64) -> Option<usize> {
        if n == 0 {
            return None;
        }
        self.index(n, l, m).map(|i| i - self.sh_len())
    }

    /// Every (n, l, m) of the full layout, in order.
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, i64)> + '_ {
        let l_max = self.angular_order;
        (0..=self.radial_order).flat_map(move |n| {
            (0..=l_max).step_by(2).flat_map(move |l| (-(l as i64)..=l as i64).map(move |m| (n, l, m)))
        })
    }
}

fn sh_index(l: usize, m: i64, l_max: usize) -> Option<usize> {
    if l % 2 != 0 || l > l_max || m.unsigned_abs() as usize > l {
        return None;
    }
    Some(l * (l.saturating_sub(1)) / 2 + (m + l as i64) as usize)
}

/// Generalized Laguerre L_k^{(1/2)}(x) for k = 0..=n_max by three-term recurrence.
fn laguerre_half(n_max: usize, x: f64) -> Vec<f64> {
    const ALPHA: f64 = 0.5;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max >= 1 {
        out.push(1.0 + ALPHA - x);
    }
    for k in 1..n_max {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + ALPHA - x) * out[k] - (kf + ALPHA) * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

fn radial_norm(n: usize, zeta: f64) -> f64 {
    let nf = n as f64;
    let log_sq = std::f64::consts::LN_2 - 1.5 * zeta.ln() + libm::lgamma(nf + 1.0) - libm::lgamma(nf + 1.5);
    (0.5 * log_sq).exp()
}

/// G_n(q|ζ) for n = 0..=n_max. Inputs are not validated.
pub fn radial_values(n_max: usize, q: f64, zeta: f64) -> Vec<f64> {
    let x = q * q / zeta;
    let envelope = (-0.5 * x).exp();
    laguerre_half(n_max, x).into_iter().enumerate().map(|(n, lag)| radial_norm(n, zeta) * envelope * lag).collect()
}

/// Gaussian-Laguerre radial function G_n(q|ζ).
pub fn radial_basis(n: usize, q: f64, zeta: f64) -> Result<f64> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::Domain(format!("q must be finite and >= 0, got {q}")));
    }
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(Error::Domain(format!("scale zeta must be > 0, got {zeta}")));
    }
    Ok(radial_values(n, q, zeta)[n])
}

/// Fully normalized associated Legendre values K_l^m P_l^m(z) for
/// 0 ≤ m ≤ l ≤ l_max, stored at `l*(l+1)/2 + m`. No Condon-Shortley phase.
fn normalized_legendre(l_max: usize, z: f64) -> Vec<f64> {
    let s = (1.0 - z * z).max(0.0).sqrt();
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut p = vec![0.0; (l_max + 1) * (l_max + 2) / 2];
    p[0] = 0.5 / PI.sqrt();
    for m in 1..=l_max {
        let mf = m as f64;
        p[idx(m, m)] = p[idx(m - 1, m - 1)] * ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
    }
    for m in 0..l_max {
        p[idx(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * z * p[idx(m, m)];
    }
    for m in 0..=l_max {
        let mf = m as f64;
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[idx(l, m)] = a * (z * p[idx(l - 1, m)] - b * p[idx(l - 2, m)]);
        }
    }
    p
}

fn real_sh_from_table(p: &[f64], l: usize, m: i64, phi: f64) -> f64 {
    let am = m.unsigned_abs() as usize;
    let base = p[l * (l + 1) / 2 + am];
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => base,
        std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * base * (am as f64 * phi).cos(),
        std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * base * (am as f64 * phi).sin(),
    }
}

fn check_unit(u: &Vector3<f64>) -> Result<()> {
    let norm = u.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::Domain(format!("direction must be unit norm, got norm {norm}")));
    }
    Ok(())
}

/// Real spherical harmonic Y_l^m(u) for any degree l ≥ 0.
pub fn sh_basis(l: usize, m: i64, u: &Vector3<f64>) -> Result<f64> {
    if m.unsigned_abs() as usize > l {
        return Err(Error::Domain(format!("|m| = {} exceeds degree l = {l}", m.abs())));
    }
    check_unit(u)?;
    let p = normalized_legendre(l, u.z.clamp(-1.0, 1.0));
    Ok(real_sh_from_table(&p, l, m, u.y.atan2(u.x)))
}

/// All even-degree harmonics up to `l_max` at `u`, in layout order.
/// The direction is not validated.
pub fn sh_values(l_max: usize, u: &Vector3<f64>) -> Vec<f64> {
    let p = normalized_legendre(l_max, u.z.clamp(-1.0, 1.0));
    let phi = u.y.atan2(u.x);
    let mut out = Vec::with_capacity((l_max + 1) * (l_max + 2) / 2);
    for l in (0..=l_max).step_by(2) {
        for m in -(l as i64)..=l as i64 {
            out.push(real_sh_from_table(&p, l, m, phi));
        }
    }
    out
}

/// Which coefficient space a vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientKind {
    /// Full SPF coefficients `a`, n = 0..=N.
    Full,
    /// Constraint-stripped coefficients `a'`, n = 1..=N.
    Stripped,
    /// Dictionary coefficients `c`.
    Dictionary,
}

/// Coefficient values together with the layout that gives them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    kind: CoefficientKind,
    spec: SpfSpec,
    values: DVector<f64>,
}

impl CoefficientVector {
    /// Wraps `values`, checking the length against the layout. Dictionary
    /// coefficients accept any length; the dictionary checks its own width.
    pub fn new(kind: CoefficientKind, spec: SpfSpec, values: DVector<f64>) -> Result<Self> {
        let expected = match kind {
            CoefficientKind::Full => Some(spec.full_len()),
            CoefficientKind::Stripped => Some(spec.stripped_len()),
            CoefficientKind::Dictionary => None,
        };
        if let Some(len) = expected {
            if values.len() != len {
                return Err(Error::Shape(format!(
                    "{kind:?} coefficients for N={} L={} need {len} values, got {}",
                    spec.radial_order,
                    spec.angular_order,
                    values.len()
                )));
            }
        }
        Ok(Self { kind, spec, values })
    }

    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn spec(&self) -> &SpfSpec {
        &self.spec
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Drops the n = 0 block of a full vector.
    pub fn stripped(&self) -> Result<Self> {
        self.expect_kind(CoefficientKind::Full)?;
        let k = self.spec.sh_len();
        let values = self.values.rows(k, self.values.len() - k).into_owned();
        Self::new(CoefficientKind::Stripped, self.spec, values)
    }

    fn expect_kind(&self, kind: CoefficientKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Shape(format!("expected {kind:?} coefficients, got {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn to_record(&self) -> CoefficientRecord {
        CoefficientRecord {
            n: self.spec.radial_order,
            l: self.spec.angular_order,
            zeta: self.spec.zeta,
            tau: self.spec.tau,
            kind: self.kind,
            values: self.values.iter().copied().collect(),
        }
    }

    pub fn from_record(rec: &CoefficientRecord) -> Result<Self> {
        let spec = SpfSpec::new(rec.n, rec.l, rec.zeta, rec.tau)?;
        Self::new(rec.kind, spec, DVector::from_column_slice(&rec.values))
    }
}

/// Self-describing serialized form of a [`CoefficientVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub zeta: f64,
    pub tau: f64,
    pub kind: CoefficientKind,
    pub values: Vec<f64>,
}

/// Constrained design matrix M' (S × N·sh_len): each column is a basis
/// function with its isotropic Gaussian part removed.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub spec: SpfSpec,
}

/// Builds M' for `scheme`; entry (i, (n,l,m)) is
/// (G_n(q_i) - G_n(0)/G_0(0)·G_0(q_i))·Y_l^m(u_i).
pub fn constrained_design(scheme: &AcquisitionScheme, spec: &SpfSpec) -> Result<DesignMatrix> {
    if scheme.is_empty() {
        return Err(Error::Domain("acquisition scheme is empty".into()));
    }
    let n_max = spec.radial_order;
    let k = spec.sh_len();
    let at_origin = radial_values(n_max, 0.0, spec.zeta);
    let mut matrix = DMatrix::zeros(scheme.len(), spec.stripped_len());
    for (i, s) in scheme.iter().enumerate() {
        check_unit(&s.dir)?;
        let g = radial_values(n_max, s.q, spec.zeta);
        let y = sh_values(spec.angular_order, &s.dir);
        for n in 1..=n_max {
            let radial = g[n] - at_origin[n] / at_origin[0] * g[0];
            for (j, yj) in y.iter().enumerate() {
                matrix[(i, (n - 1) * k + j)] = radial * yj;
            }
        }
    }
    Ok(DesignMatrix { matrix, spec: *spec })
}

/// e'_i = E_i - G_0(q_i)/G_0(0) = E_i - exp(-q_i²/2ζ).
pub fn shifted_measurements(scheme: &AcquisitionScheme, spec: &SpfSpec, values: &[f64]) -> Result<DVector<f64>> {
    if values.len() != scheme.len() {
        return Err(Error::Shape(format!("{} measurements for a scheme of {} samples", values.len(), scheme.len())));
    }
    Ok(DVector::from_iterator(
        values.len(),
        scheme.iter().zip(values).map(|(s, e)| e - (-0.5 * s.q * s.q / spec.zeta).exp()),
    ))
}

/// Restores the n = 0 block from `a'` so that E(0) = 1:
/// a_0lm = (√(4π)·δ_l0 - Σ_{n≥1} a_nlm G_n(0)) / G_0(0).
pub fn complete_coefficients(a_prime: &CoefficientVector) -> Result<CoefficientVector> {
    a_prime.expect_kind(CoefficientKind::Stripped)?;
    let spec = a_prime.spec;
    let k = spec.sh_len();
    let g0 = radial_values(spec.radial_order, 0.0, spec.zeta);
    let mut full = DVector::zeros(spec.full_len());
    full.rows_mut(k, spec.stripped_len()).copy_from(&a_prime.values);
    for j in 0..k {
        let mut acc = if j == 0 { (4.0 * PI).sqrt() } else { 0.0 };
        for n in 1..=spec.radial_order {
            acc -= a_prime.values[(n - 1) * k + j] * g0[n];
        }
        full[j] = acc / g0[0];
    }
    CoefficientVector::new(CoefficientKind::Full, spec, full)
}

/// E(q·u) = Σ a_nlm G_n(q|ζ) Y_l^m(u).
pub fn evaluate_signal(a: &CoefficientVector, q: f64, u: &Vector3<f64>) -> Result<f64> {
    a.expect_kind(CoefficientKind::Full)?;
    check_unit(u)?;
    if !(q >= 0.0) {
        return Err(Error::Domain(format!("q must be >= 0, got {q}")));
    }
    Ok(evaluate_unchecked(a, q, u))
}

pub(crate) fn evaluate_unchecked(a: &CoefficientVector, q: f64, u: &Vector3<f64>) -> f64 {
    let spec = &a.spec;
    let g = radial_values(spec.radial_order, q, spec.zeta);
    let y = sh_values(spec.angular_order, u);
    let k = y.len();
    g.iter()
        .enumerate()
        .map(|(n, gn)| {
            let block = a.values.rows(n * k, k);
            gn * block.iter().zip(&y).map(|(c, yv)| c * yv).sum::<f64>()
        })
        .sum()
}

/// Predicted attenuation at every sample of a scheme.
pub fn evaluate_on_scheme(a: &CoefficientVector, scheme: &AcquisitionScheme) -> Result<Vec<f64>> {
    a.expect_kind(CoefficientKind::Full)?;
    Ok(scheme.iter().map(|s| evaluate_unchecked(a, s.q, &s.dir)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn z() -> Vector3<f64> {
        Vector3::z()
    }

    #[test]
    fn layout_sizes() {
        let spec = SpfSpec::default();
        assert_eq!(spec.sh_len(), 45);
        assert_eq!(spec.full_len(), 225);
        assert_eq!(spec.stripped_len(), 180);
        assert_eq!(spec.terms().count(), 225);
        for (i, (n, l, m)) in spec.terms().enumerate() {
            assert_eq!(spec.index(n, l, m), Some(i));
        }
        assert_eq!(spec.index(0, 1, 0), None);
        assert_eq!(spec.index(0, 2, 3), None);
        assert_eq!(spec.stripped_index(1, 0, 0), Some(0));
        assert_eq!(spec.stripped_index(4, 8, 8), Some(179));
    }

    #[test]
    fn spec_rejects_bad_parameters() {
        assert!(SpfSpec::new(4, 7, 1.0, 1.0).is_err());
        assert!(SpfSpec::new(4, 8, 0.0, 1.0).is_err());
        assert!(SpfSpec::new(4, 8, 1.0, -1.0).is_err());
    }

    #[test]
    fn radial_reference_values() {
        // (4/√π)^{1/2}
        assert_abs_diff_eq!(radial_basis(0, 0.0, 1.0).unwrap(), 1.502_251_088_929_885, epsilon = 1e-12);
        assert!(radial_basis(0, 50.0, 1.0).unwrap().abs() < 1e-300);
        assert!(radial_basis(0, -1.0, 1.0).is_err());
        assert!(radial_basis(0, 1.0, 0.0).is_err());
    }

    #[test]
    fn sh_reference_values() {
        assert_abs_diff_eq!(sh_basis(0, 0, &Vector3::x()).unwrap(), 0.282_094_791_773_878_1, epsilon = 1e-15);
        assert_abs_diff_eq!(sh_basis(2, 0, &z()).unwrap(), 0.630_783_130_505_040_0, epsilon = 1e-14);
        assert!(sh_basis(2, 3, &z()).is_err());
        assert!(sh_basis(2, 0, &Vector3::new(1.0, 1.0, 0.0)).is_err());
        // Closed forms: Y_2^2 = (1/4)√(15/π)(x²-y²), Y_2^{-2} = (1/2)√(15/π)xy.
        let u = Vector3::new(0.3, -0.5, 0.7).normalize();
        let c = (15.0 / PI).sqrt();
        assert_abs_diff_eq!(sh_basis(2, 2, &u).unwrap(), 0.25 * c * (u.x * u.x - u.y * u.y), epsilon = 1e-14);
        assert_abs_diff_eq!(sh_basis(2, -2, &u).unwrap(), 0.5 * c * u.x * u.y, epsilon = 1e-14);
        assert_abs_diff_eq!(sh_basis(2, 1, &u).unwrap(), 0.5 * c * u.x * u.z, epsilon = 1e-14);
    }

    #[test]
    fn sh_values_match_single_evaluation() {
        let u = Vector3::new(-0.2, 0.9, 0.1).normalize();
        let vals = sh_values(8, &u);
        let mut i = 0;
        for l in (0..=8).step_by(2) {
            for m in -(l as i64)..=l as i64 {
                assert_abs_diff_eq!(vals[i], sh_basis(l, m, &u).unwrap(), epsilon = 1e-15);
                i += 1;
            }
        }
    }

    #[test]
    fn completion_of_zero_stripped_vector() {
        let spec = SpfSpec::new(4, 8, 1.0, DEFAULT_TAU).unwrap();
        let a_prime = CoefficientVector::new(CoefficientKind::Stripped, spec, DVector::zeros(180)).unwrap();
        let a = complete_coefficients(&a_prime).unwrap();
        // √(4π)/G_0(0|1) = √(4π)/(4/√π)^{1/2}
        assert_abs_diff_eq!(a.values()[0], 2.359_730_492_414_697, epsilon = 1e-12);
        assert!(a.values().iter().skip(1).all(|v| *v == 0.0));
        for q in [0.0, 0.3, 1.0, 2.5] {
            let e = evaluate_signal(&a, q, &Vector3::x()).unwrap();
            assert_abs_diff_eq!(e, (-q * q / 2.0).exp(), epsilon = 1e-14);
        }
    }

    #[test]
    fn completion_with_single_radial_term() {
        let spec = SpfSpec::new(4, 8, 2.5, DEFAULT_TAU).unwrap();
        let x = 0.37;
        let mut v = DVector::zeros(180);
        v[0] = x;
        let a = complete_coefficients(&CoefficientVector::new(CoefficientKind::Stripped, spec, v).unwrap()).unwrap();
        let g = radial_values(1, 0.0, 2.5);
        assert_abs_diff_eq!(a.values()[0], ((4.0 * PI).sqrt() - x * g[1]) / g[0], epsilon = 1e-13);
        assert_abs_diff_eq!(evaluate_signal(&a, 0.0, &z()).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn design_row_at_origin_is_zero() {
        let spec = SpfSpec::default();
        let scheme =
            AcquisitionScheme::new(vec![crate::scheme::QSample::from_vector(Vector3::zeros())], spec.tau).unwrap();
        let m = constrained_design(&scheme, &spec).unwrap();
        assert_eq!(m.matrix.shape(), (1, 180));
        assert!(m.matrix.iter().all(|v| v.abs() < 1e-15));
        let e = shifted_measurements(&scheme, &spec, &[0.9]).unwrap();
        assert_abs_diff_eq!(e[0], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn isotropic_gaussian_shifts_to_zero() {
        let spec = SpfSpec::default();
        let scheme = AcquisitionScheme::parse("10 0 0\n0 20 5\n1 -3 40\n", spec.tau).unwrap();
        let values: Vec<f64> = scheme.iter().map(|s| (-s.q * s.q / (2.0 * spec.zeta)).exp()).collect();
        let e = shifted_measurements(&scheme, &spec, &values).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-15));
        assert!(shifted_measurements(&scheme, &spec, &values[..2]).is_err());
    }

    #[test]
    fn record_round_trip() {
        let spec = SpfSpec::default();
        let v = CoefficientVector::new(
            CoefficientKind::Stripped,
            spec,
            DVector::from_fn(180, |i, _| (i as f64).sin() / 3.0),
        )
        .unwrap();
        let json = serde_json::to_string(&v.to_record()).unwrap();
        let rec: CoefficientRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(CoefficientVector::from_record(&rec).unwrap(), v);
        assert!(CoefficientVector::new(CoefficientKind::Full, spec, DVector::zeros(180)).is_err());
    }
}
