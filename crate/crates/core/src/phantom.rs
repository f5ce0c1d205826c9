//! Ground-truth diffusion signals and acquisition schemes.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scheme::{AcquisitionScheme, QSample};

/// A continuous attenuation model E(q·u). Any `Fn(f64, &Vector3<f64>) -> f64`
/// closure qualifies, so user-supplied models plug straight into projection
/// and synthesis.
pub trait SignalModel: Sync {
    fn attenuation(&self, q: f64, u: &Vector3<f64>) -> f64;
}

impl<F> SignalModel for F
where
    F: Fn(f64, &Vector3<f64>) -> f64 + Sync,
{
    fn attenuation(&self, q: f64, u: &Vector3<f64>) -> f64 {
        self(q, u)
    }
}

/// Prolate (cylindrically symmetric) diffusion tensor: λ₁ along `axis`,
/// λ₂ = λ₃ perpendicular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorSpec {
    lambda_par: f64,
    lambda_perp: f64,
    axis: Vector3<f64>,
}

impl TensorSpec {
    pub fn new(lambda_par: f64, lambda_perp: f64, axis: Vector3<f64>) -> Result<Self> {
        if !(lambda_perp > 0.0) || !(lambda_par >= lambda_perp) || !lambda_par.is_finite() {
            return Err(Error::Domain(format!(
                "tensor eigenvalues must satisfy l1 >= l2 > 0, got ({lambda_par:e}, {lambda_perp:e})"
            )));
        }
        Ok(Self { lambda_par, lambda_perp, axis: unit_axis(axis)? })
    }

    /// Prolate tensor with the given mean diffusivity and fractional anisotropy.
    ///
    /// With λ₁ = md + 2δ and λ₂ = md - δ the FA formula reduces to
    /// FA = 3δ/√(3md² + 6δ²), so δ = md·FA/√(3 - 2FA²).
    pub fn from_md_fa(md: f64, fa: f64, axis: Vector3<f64>) -> Result<Self> {
        if !(md > 0.0) || !md.is_finite() {
            return Err(Error::Domain(format!("mean diffusivity must be > 0, got {md}")));
        }
        if !(0.0..1.0).contains(&fa) {
            return Err(Error::Domain(format!("fractional anisotropy must lie in [0, 1), got {fa}")));
        }
        let delta = md * fa / (3.0 - 2.0 * fa * fa).sqrt();
        Self::new(md + 2.0 * delta, md - delta, axis)
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        [self.lambda_par, self.lambda_perp, self.lambda_perp]
    }

    pub fn axis(&self) -> &Vector3<f64> {
        &self.axis
    }

    pub fn md(&self) -> f64 {
        (self.lambda_par + 2.0 * self.lambda_perp) / 3.0
    }

    pub fn fa(&self) -> f64 {
        let md = self.md();
        let num = (self.lambda_par - md).powi(2) + 2.0 * (self.lambda_perp - md).powi(2);
        let den = self.lambda_par.powi(2) + 2.0 * self.lambda_perp.powi(2);
        (1.5 * num / den).sqrt()
    }

    /// Apparent diffusivity uᵀTu along a unit direction.
    pub fn diffusivity_along(&self, u: &Vector3<f64>) -> f64 {
        let c = self.axis.dot(u);
        self.lambda_perp + (self.lambda_par - self.lambda_perp) * c * c
    }

    /// Same shape rotated onto another axis.
    pub fn with_axis(&self, axis: Vector3<f64>) -> Result<Self> {
        Self::new(self.lambda_par, self.lambda_perp, axis)
    }

    /// Same FA and orientation with all eigenvalues scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.lambda_par * factor, self.lambda_perp * factor, self.axis)
    }
}

fn unit_axis(axis: Vector3<f64>) -> Result<Vector3<f64>> {
    let norm = axis.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain("tensor axis must be a non-zero vector".into()));
    }
    Ok(axis / norm)
}

/// exp(-4π²τq²·uᵀTu).
pub fn tensor_signal(t: &TensorSpec, q: f64, u: &Vector3<f64>, tau: f64) -> f64 {
    (-4.0 * PI * PI * tau * q * q * t.diffusivity_along(u)).exp()
}

/// Convex combination of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    components: Vec<(f64, TensorSpec)>,
}

impl MixtureSpec {
    pub fn new(components: Vec<(f64, TensorSpec)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("mixture needs at least one component".into()));
        }
        if components.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(Error::Domain("mixture weights must be >= 0".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    pub fn single(t: TensorSpec) -> Self {
        Self { components: vec![(1.0, t)] }
    }

    /// Equal-weight mixture.
    pub fn uniform(tensors: Vec<TensorSpec>) -> Result<Self> {
        let w = 1.0 / tensors.len().max(1) as f64;
        Self::new(tensors.into_iter().map(|t| (w, t)).collect())
    }

    pub fn components(&self) -> &[(f64, TensorSpec)] {
        &self.components
    }
}

/// Σ wᵢ E(q·u | Tᵢ).
pub fn mixture_signal(m: &MixtureSpec, q: f64, u: &Vector3<f64>, tau: f64) -> f64 {
    m.components.iter().map(|(w, t)| w * tensor_signal(t, q, u, tau)).sum()
}

/// A mixture bound to a diffusion time, usable as a [`SignalModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub mixture: MixtureSpec,
    pub tau: f64,
}

impl Phantom {
    pub fn new(mixture: MixtureSpec, tau: f64) -> Self {
        Self { mixture, tau }
    }

    /// Noise-free attenuation at every sample of `scheme`.
    pub fn sample(&self, scheme: &AcquisitionScheme) -> Vec<f64> {
        scheme.iter().map(|s| self.attenuation(s.q, &s.dir)).collect()
    }
}

impl SignalModel for Phantom {
    fn attenuation(&self, q: f64, u: &Vector3<f64>) -> f64 {
        mixture_signal(&self.mixture, q, u, self.tau)
    }
}

/// Two equal-weight tensors of identical shape crossing at `angle_deg` in the
/// x-y plane, symmetric about the x axis.
pub fn crossing(md: f64, fa: f64, angle_deg: f64) -> Result<MixtureSpec> {
    let half = 0.5 * angle_deg.to_radians();
    let a = TensorSpec::from_md_fa(md, fa, Vector3::new(half.cos(), half.sin(), 0.0))?;
    let b = a.with_axis(Vector3::new(half.cos(), -half.sin(), 0.0))?;
    MixtureSpec::uniform(vec![a, b])
}

/// q magnitude reached at `b` for diffusion time `tau`.
pub fn q_for_b(b: f64, tau: f64) -> f64 {
    (b / (4.0 * PI * PI * tau)).sqrt()
}

/// Cartesian DSI grid: every integer lattice point k with 0 < ‖k‖ ≤ radius,
/// scaled so that ‖k‖ = radius lands on `b_max`. The origin is left out.
pub fn dsi_grid(radius: usize, b_max: f64, tau: f64) -> Result<AcquisitionScheme> {
    if radius < 1 {
        return Err(Error::Domain("DSI grid radius must be >= 1".into()));
    }
    if !(b_max > 0.0) {
        return Err(Error::Domain(format!("b_max must be > 0, got {b_max}")));
    }
    let r = radius as i64;
    let step = q_for_b(b_max, tau) / radius as f64;
    let mut samples = Vec::new();
    for kx in -r..=r {
        for ky in -r..=r {
            for kz in -r..=r {
                let n2 = kx * kx + ky * ky + kz * kz;
                if n2 == 0 || n2 > r * r {
                    continue;
                }
                let k = Vector3::new(kx as f64, ky as f64, kz as f64);
                let norm = k.norm();
                samples.push(QSample { q: norm * step, dir: k / norm });
            }
        }
    }
    AcquisitionScheme::new(samples, tau)
}

/// Variable-density subsampling without replacement.
///
/// The lowest-|q| shell is always kept. The rest of the `count` samples are
/// drawn with probability ∝ (1 - q/q_max)^exponent. If the density runs out of
/// positive mass the remainder is drawn uniformly. Returned indices refer to
/// `scheme` and are sorted.
pub fn undersample_indices<R: Rng + ?Sized>(
    scheme: &AcquisitionScheme,
    exponent: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let total = scheme.len();
    if count > total {
        return Err(Error::Domain(format!("cannot draw {count} samples from a scheme of {total}")));
    }
    if !(exponent >= 0.0) {
        return Err(Error::Domain(format!("density exponent must be >= 0, got {exponent}")));
    }
    if count == total {
        return Ok((0..total).collect());
    }
    let q_max = scheme.q_max();
    let q_min = scheme.iter().map(|s| s.q).fold(f64::INFINITY, f64::min);
    let shell_tol = 1e-9 * q_max.max(1.0);
    let mut chosen: Vec<usize> = (0..total).filter(|&i| scheme.samples()[i].q <= q_min + shell_tol).collect();
    if chosen.len() > count {
        let keep = rand::seq::index::sample(rng, chosen.len(), count);
        let mut kept: Vec<usize> = keep.iter().map(|k| chosen[k]).collect();
        kept.sort_unstable();
        return Ok(kept);
    }
    let mut taken = vec![false; total];
    for &i in &chosen {
        taken[i] = true;
    }
    let pool: Vec<usize> = (0..total).filter(|i| !taken[*i]).collect();
    let weight = |k: usize| {
        let q = scheme.samples()[pool[k]].q;
        if q_max > 0.0 {
            (1.0 - q / q_max).max(0.0).powf(exponent)
        } else {
            1.0
        }
    };
    let wanted = count - chosen.len();
    let drawn = rand::seq::index::sample_weighted(rng, pool.len(), weight, wanted)
        .map_err(|e| Error::Domain(format!("sampling density: {e}")))?;
    for k in drawn.iter() {
        taken[pool[k]] = true;
        chosen.push(pool[k]);
    }
    if chosen.len() < count {
        let rest: Vec<usize> = (0..total).filter(|i| !taken[*i]).collect();
        let extra = rand::seq::index::sample(rng, rest.len(), count - chosen.len());
        chosen.extend(extra.iter().map(|k| rest[k]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// [`undersample_indices`] materialized as a scheme.
pub fn undersample<R: Rng + ?Sized>(
    scheme: &AcquisitionScheme,
    exponent: f64,
    count: usize,
    rng: &mut R,
) -> Result<AcquisitionScheme> {
    let idx = undersample_indices(scheme, exponent, count, rng)?;
    scheme.subset(&idx)
}

/// Well-spread axes: spherical Fibonacci points on the upper hemisphere,
/// relaxed by a fixed number of repulsion steps in which each point is pushed
/// by its neighbours and their antipodes. Each point stands for the axis ±u,
/// so the set is antipodally symmetric. Deterministic.
pub fn sphere_directions(n: usize) -> Result<Vec<Vector3<f64>>> {
    if n < 1 {
        return Err(Error::Domain("need at least one direction".into()));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut pts: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect();
    let step = 0.015 / n as f64;
    for _ in 0..REPULSION_STEPS {
        let forces: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let p = pts[i];
                let mut f = Vector3::zeros();
                for (j, o) in pts.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    for d in [p - o, p + o] {
                        let r = d.norm();
                        if r > 0.0 {
                            f += d / (r * r * r);
                        }
                    }
                }
                f - p * f.dot(&p)
            })
            .collect();
        for (p, f) in pts.iter_mut().zip(&forces) {
            *p = (*p + f * step).normalize();
        }
    }
    for p in &mut pts {
        if p.z < 0.0 {
            *p = -*p;
        }
    }
    Ok(pts)
}

const REPULSION_STEPS: usize = 60;

/// Uniformly random unit vector.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi: f64 = 2.0 * PI * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Rician corruption of a normalized attenuation (S₀ = 1, σ = 1/snr):
/// √((E + n₁)² + n₂²). An infinite SNR returns the value unchanged.
pub fn add_rician_noise<R: Rng + ?Sized>(value: f64, snr: f64, rng: &mut R) -> f64 {
    if snr.is_infinite() {
        return value;
    }
    let sigma = 1.0 / snr;
    let n1: f64 = rng.sample(StandardNormal);
    let n2: f64 = rng.sample(StandardNormal);
    ((value + sigma * n1).powi(2) + (sigma * n2).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::DEFAULT_TAU;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fa_formula(l: [f64; 3]) -> f64 {
        let md = (l[0] + l[1] + l[2]) / 3.0;
        let num: f64 = l.iter().map(|x| (x - md).powi(2)).sum();
        let den: f64 = l.iter().map(|x| x * x).sum();
        (1.5 * num / den).sqrt()
    }

    #[test]
    fn isotropic_tensor() {
        let t = TensorSpec::from_md_fa(0.7e-3, 0.0, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        for l in t.eigenvalues() {
            assert_abs_diff_eq!(l, 0.7e-3, epsilon = 1e-18);
        }
        let u = Vector3::new(0.2, -0.4, 0.5).normalize();
        let q = 40.0;
        assert_abs_diff_eq!(
            tensor_signal(&t, q, &u, DEFAULT_TAU),
            (-4.0 * PI * PI * DEFAULT_TAU * q * q * 0.7e-3).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn md_fa_round_trip() {
        for &md in &[0.5e-3, 0.7e-3, 1.1e-3, 2.0e-3] {
            for i in 0..20 {
                let fa = i as f64 * 0.049;
                let t = TensorSpec::from_md_fa(md, fa, Vector3::z()).unwrap();
                assert_abs_diff_eq!(t.md(), md, epsilon = 1e-16);
                assert_abs_diff_eq!(fa_formula(t.eigenvalues()), fa, epsilon = 1e-10);
                assert_abs_diff_eq!(t.fa(), fa, epsilon = 1e-10);
            }
        }
        assert!(TensorSpec::from_md_fa(0.7e-3, 1.0, Vector3::z()).is_err());
        assert!(TensorSpec::from_md_fa(-1.0, 0.2, Vector3::z()).is_err());
    }

    #[test]
    fn eigen_ratio_matches_bisection_root() {
        // Solve FA(r) = 0.9 for r = λ1/λ2 by bisection on the prolate FA formula.
        let fa_of_ratio = |r: f64| fa_formula([r, 1.0, 1.0]);
        let (mut lo, mut hi) = (1.0, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fa_of_ratio(mid) < 0.9 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = TensorSpec::from_md_fa(0.7e-3, 0.9, Vector3::z()).unwrap();
        let [l1, l2, _] = t.eigenvalues();
        assert_abs_diff_eq!(l1 / l2, 0.5 * (lo + hi), epsilon = 1e-8);
    }

    #[test]
    fn b_value_identity() {
        let t = TensorSpec::from_md_fa(0.8e-3, 0.6, Vector3::new(1.0, 1.0, 0.0)).unwrap();
        let tau = 0.03;
        let u = Vector3::new(0.3, 0.9, -0.1).normalize();
        let s = QSample::new(60.0, u).unwrap();
        let b = s.b_value(tau);
        let expected = (-b * t.diffusivity_along(&u)).exp();
        assert_abs_diff_eq!(tensor_signal(&t, s.q, &u, tau), expected, epsilon = 1e-15);
        assert_eq!(tensor_signal(&t, 0.0, &u, tau), 1.0);
    }

    #[test]
    fn mixtures() {
        let t = TensorSpec::from_md_fa(0.7e-3, 0.8, Vector3::x()).unwrap();
        let u = Vector3::new(0.6, 0.8, 0.0);
        let single = MixtureSpec::single(t);
        assert_eq!(mixture_signal(&single, 30.0, &u, DEFAULT_TAU), tensor_signal(&t, 30.0, &u, DEFAULT_TAU));
        let doubled = MixtureSpec::new(vec![(0.5, t), (0.5, t)]).unwrap();
        assert_abs_diff_eq!(
            mixture_signal(&doubled, 30.0, &u, DEFAULT_TAU),
            tensor_signal(&t, 30.0, &u, DEFAULT_TAU),
            epsilon = 1e-15
        );
        // 90° crossing, q along the bisector.
        let m = crossing(0.7e-3, 0.8, 90.0).unwrap();
        let [(_, a), (_, b)] = [m.components()[0], m.components()[1]];
        let bis = Vector3::x();
        let expected = 0.5 * (tensor_signal(&a, 50.0, &bis, DEFAULT_TAU) + tensor_signal(&b, 50.0, &bis, DEFAULT_TAU));
        assert_abs_diff_eq!(mixture_signal(&m, 50.0, &bis, DEFAULT_TAU), expected, epsilon = 1e-15);
        assert!(MixtureSpec::new(vec![(0.5, t), (0.4, t)]).is_err());
        assert!(MixtureSpec::new(vec![(1.5, t), (-0.5, t)]).is_err());
    }

    #[test]
    fn dsi_grid_counts() {
        let g = dsi_grid(5, 8000.0, DEFAULT_TAU).unwrap();
        assert_eq!(g.len(), 514);
        assert_abs_diff_eq!(g.b_max(), 8000.0, epsilon = 1e-9);
        for s in g.iter() {
            let neg = s.vector() * -1.0;
            assert!(g.iter().any(|o| (o.vector() - neg).norm() < 1e-9));
        }
        assert_eq!(dsi_grid(1, 8000.0, DEFAULT_TAU).unwrap().len(), 6);
        assert!(dsi_grid(0, 8000.0, DEFAULT_TAU).is_err());
    }

    #[test]
    fn lattice_count_by_enumeration() {
        // Brute-force count of integer points with 0 < |k|² ≤ 25.
        let mut n = 0;
        for a in -5i32..=5 {
            for b in -5i32..=5 {
                for c in -5i32..=5 {
                    let r = a * a + b * b + c * c;
                    if r > 0 && r <= 25 {
                        n += 1;
                    }
                }
            }
        }
        assert_eq!(n, 514);
    }

    #[test]
    fn undersampling_contract() {
        let g = dsi_grid(5, 8000.0, DEFAULT_TAU).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(undersample_indices(&g, 3.0, 514, &mut rng).unwrap(), (0..514).collect::<Vec<_>>());
        assert!(undersample_indices(&g, 3.0, 515, &mut rng).is_err());

        let a = undersample_indices(&g, 3.0, 170, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = undersample_indices(&g, 3.0, 170, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 170);
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 170);
        let q_min = g.iter().map(|s| s.q).fold(f64::INFINITY, f64::min);
        let shell: Vec<usize> = (0..514).filter(|&i| (g.samples()[i].q - q_min).abs() < 1e-9).collect();
        assert_eq!(shell.len(), 6);
        assert!(shell.iter().all(|i| a.contains(i)));
    }

    #[test]
    fn undersampling_prefers_low_q() {
        let g = dsi_grid(5, 8000.0, DEFAULT_TAU).unwrap();
        let full_mean = g.iter().map(|s| s.q).sum::<f64>() / g.len() as f64;
        let mut sub_mean = 0.0;
        for seed in 0..50 {
            let sub = undersample(&g, 3.0, 170, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            sub_mean += sub.iter().map(|s| s.q).sum::<f64>() / sub.len() as f64;
        }
        sub_mean /= 50.0;
        assert!(sub_mean < full_mean, "{sub_mean} vs {full_mean}");

        // Flat density: mean |q| of the subset tracks the full set.
        let mut flat_mean = 0.0;
        for seed in 0..200 {
            let sub = undersample(&g, 0.0, 170, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            flat_mean += sub.iter().map(|s| s.q).sum::<f64>() / sub.len() as f64;
        }
        flat_mean /= 200.0;
        assert!((flat_mean - full_mean).abs() / full_mean < 0.03, "{flat_mean} vs {full_mean}");
    }

    #[test]
    fn sphere_direction_sets() {
        let one = sphere_directions(1).unwrap();
        assert_eq!(one.len(), 1);
        assert_abs_diff_eq!(one[0].norm(), 1.0, epsilon = 1e-12);
        assert!(sphere_directions(0).is_err());

        let dirs = sphere_directions(321).unwrap();
        assert!(dirs.iter().all(|u| (u.norm() - 1.0).abs() < 1e-12));
        // Angle between axes, so antipodal neighbours count too.
        let mut min_angle = f64::INFINITY;
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                let c = dirs[i].dot(&dirs[j]).abs().min(1.0);
                min_angle = min_angle.min(c.acos());
            }
        }
        assert!(min_angle.to_degrees() > 5.0, "min axis angle {}", min_angle.to_degrees());
    }

    #[test]
    fn rician_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(add_rician_noise(0.42, f64::INFINITY, &mut rng), 0.42);

        let n = 1_000_000;
        let snr = 20.0;
        let sigma = 1.0 / snr;
        let rayleigh: f64 = (0..n).map(|_| add_rician_noise(0.0, snr, &mut rng)).sum::<f64>() / n as f64;
        let expected = sigma * (PI / 2.0).sqrt();
        assert!((rayleigh - expected).abs() / expected < 0.01, "{rayleigh} vs {expected}");

        // Rician bias at E = 1: mean ≈ 1 + σ²/2 for high SNR.
        let biased: f64 = (0..n).map(|_| add_rician_noise(1.0, snr, &mut rng)).sum::<f64>() / n as f64;
        assert!(biased > 1.0 && biased < 1.0 + 2.0 * sigma * sigma, "{biased}");
    }
}
