//! Experiment drivers: sparsity curves and undersampled-reconstruction RMSE
//! curves, each returning plain rows that render to CSV.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, SparseCoder};
use crate::error::{Error, Result};
use crate::parallel;
use crate::phantom::{
    add_rician_noise, crossing, dsi_grid, random_direction, sphere_directions, undersample_indices, MixtureSpec,
    Phantom, TensorSpec,
};
use crate::projection::{project_mixture, QuadratureRule};
use crate::reconstruct::{l1_spfi, predict_and_rmse, reconstruct_voxel, ReconConfig, Reconstruction};
use crate::spf_basis::{evaluate_signal, scale_for_md};

/// Number of entries with |vᵢ| > fraction·‖v‖₂.
pub fn sparsity_count(v: &[f64], fraction: f64) -> usize {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0;
    }
    let threshold = fraction * norm;
    v.iter().filter(|x| x.abs() > threshold).count()
}

/// Independent RNG for shard `shard` of a run seeded with `seed`.
pub fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// One tensor per orientation of a fixed well-spread set.
    Single,
    /// Two equal-weight tensors at independent random orientations.
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleChoice {
    /// The dictionary's reference scale ζ₀.
    Fixed,
    /// ζ = (8π²τ·MD)⁻¹ from the true MD.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub composition: Composition,
    pub md: f64,
    pub scale: ScaleChoice,
}

impl Scenario {
    pub fn label(&self) -> String {
        let c = match self.composition {
            Composition::Single => "single",
            Composition::Mixture => "mixture",
        };
        let s = match self.scale {
            ScaleChoice::Fixed => "fixed",
            ScaleChoice::Adaptive => "adaptive",
        };
        format!("{c}_md{:.1}e-3_{s}", self.md * 1e3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    pub scenarios: Vec<Scenario>,
    pub fa_values: Vec<f64>,
    /// Orientations for single-tensor scenarios.
    pub orientations: usize,
    /// Random draws per FA for mixture scenarios.
    pub mixture_draws: usize,
    /// Sparse-coding residual bound on unit-norm a′.
    pub epsilon: f64,
    /// Relative count threshold.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        let s = |composition, md, scale| Scenario { composition, md, scale };
        Self {
            scenarios: vec![
                s(Composition::Single, 0.6e-3, ScaleChoice::Fixed),
                s(Composition::Mixture, 0.6e-3, ScaleChoice::Fixed),
                s(Composition::Mixture, 1.1e-3, ScaleChoice::Fixed),
                s(Composition::Mixture, 1.1e-3, ScaleChoice::Adaptive),
            ],
            fa_values: (0..10).map(|i| i as f64 / 10.0).collect(),
            orientations: 321,
            mixture_draws: 100,
            epsilon: 0.01,
            fraction: 0.01,
            seed: 0,
        }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fa_values.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::Domain("FA values must lie in [0, 1)".into()));
        }
        if self.scenarios.iter().any(|s| !(s.md > 0.0)) {
            return Err(Error::Domain("scenario MD must be > 0".into()));
        }
        if self.orientations == 0 || self.mixture_draws == 0 {
            return Err(Error::Domain("need at least one orientation and one mixture draw".into()));
        }
        if !(self.epsilon > 0.0) || !(self.fraction > 0.0) {
            return Err(Error::Domain("epsilon and fraction must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub scenario: String,
    pub fa: f64,
    pub samples: usize,
    pub spf_count: f64,
    pub dl_count: f64,
    /// Worst sparse-coding stationarity violation in this bin.
    pub max_kkt: f64,
}

struct Counts {
    spf: usize,
    dl: usize,
    kkt: f64,
}

fn count_one(
    m: &MixtureSpec,
    scenario: &Scenario,
    dict: &Dictionary,
    coder: &SparseCoder,
    rule: &QuadratureRule,
    cfg: &SparsityConfig,
) -> Result<Counts> {
    let spec = match scenario.scale {
        ScaleChoice::Fixed => *dict.spec(),
        ScaleChoice::Adaptive => dict.spec().with_zeta(scale_for_md(scenario.md, dict.spec().tau))?,
    };
    let a = project_mixture(m, &spec, rule).stripped()?.into_values();
    let norm = a.norm();
    if norm == 0.0 {
        return Ok(Counts { spf: 0, dl: 0, kkt: 0.0 });
    }
    let code = coder.code_relaxed(&(a.clone() / norm), cfg.epsilon)?;
    Ok(Counts {
        spf: sparsity_count(a.as_slice(), cfg.fraction),
        dl: sparsity_count(code.coefficients.as_slice(), cfg.fraction),
        kkt: code.kkt_residual,
    })
}

/// Mean nonzero counts of a′ (SPF) and of its sparse code (DL-SPF) for every
/// (scenario, FA) pair. Coefficients are normalized to unit ℓ2 norm before
/// coding, matching the training columns; an a′ that vanishes counts as 0.
pub fn run_sparsity_experiment(
    cfg: &SparsityConfig,
    dict: &Dictionary,
    rule: &QuadratureRule,
) -> Result<Vec<SparsityRow>> {
    cfg.validate()?;
    let directions = sphere_directions(cfg.orientations)?;
    let coder = SparseCoder::new(dict.atoms());
    let mut rows = Vec::new();
    for (si, scenario) in cfg.scenarios.iter().enumerate() {
        for (fi, &fa) in cfg.fa_values.iter().enumerate() {
            let n = match scenario.composition {
                Composition::Single => directions.len(),
                Composition::Mixture => cfg.mixture_draws,
            };
            let shard_base = ((si * cfg.fa_values.len() + fi) * n) as u64;
            let results = parallel::map_range(n, |k| {
                let m = match scenario.composition {
                    Composition::Single => MixtureSpec::single(TensorSpec::from_md_fa(scenario.md, fa, directions[k])?),
                    Composition::Mixture => {
                        let mut rng = shard_rng(cfg.seed, shard_base + k as u64);
                        let a = TensorSpec::from_md_fa(scenario.md, fa, random_direction(&mut rng))?;
                        let b = a.with_axis(random_direction(&mut rng))?;
                        MixtureSpec::uniform(vec![a, b])?
                    }
                };
                count_one(&m, scenario, dict, &coder, rule, cfg)
            });
            let counts = results.into_iter().collect::<Result<Vec<_>>>()?;
            rows.push(SparsityRow {
                scenario: scenario.label(),
                fa,
                samples: n,
                spf_count: counts.iter().map(|c| c.spf as f64).sum::<f64>() / n as f64,
                dl_count: counts.iter().map(|c| c.dl as f64).sum::<f64>() / n as f64,
                max_kkt: counts.iter().map(|c| c.kkt).fold(0.0, f64::max),
            });
        }
    }
    Ok(rows)
}

pub const SPARSITY_COLUMNS: &str = "scenario,fa,samples,spf_count,dl_count,max_kkt";

pub fn sparsity_csv(rows: &[SparsityRow]) -> String {
    let mut out = String::from(SPARSITY_COLUMNS);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{:e}", r.scenario, r.fa, r.samples, r.spf_count, r.dl_count, r.max_kkt);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DlSpfi,
    L1Spfi,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::DlSpfi => "dl_spfi",
            Method::L1Spfi => "l1_spfi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseConfig {
    pub md: f64,
    pub fa: f64,
    pub angles: Vec<f64>,
    pub grid_radius: usize,
    pub b_max: f64,
    pub samples: usize,
    pub density_exponent: f64,
    /// Rician SNR of the noisy condition; `None` skips it.
    pub snr: Option<f64>,
    pub seeds: usize,
    pub seed: u64,
    pub noise_free: ReconConfig,
    pub noisy: ReconConfig,
}

impl Default for RmseConfig {
    fn default() -> Self {
        Self {
            md: 0.7e-3,
            fa: 0.8,
            angles: (0..13).map(|i| 30.0 + 5.0 * i as f64).collect(),
            grid_radius: 5,
            b_max: 8000.0,
            samples: 170,
            density_exponent: 3.0,
            snr: Some(20.0),
            seeds: 5,
            seed: 0,
            noise_free: ReconConfig::noise_free(),
            noisy: ReconConfig::noisy(),
        }
    }
}

impl RmseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.md > 0.0) || !(0.0..1.0).contains(&self.fa) {
            return Err(Error::Domain("phantom needs MD > 0 and FA in [0, 1)".into()));
        }
        if self.angles.is_empty() || self.seeds == 0 {
            return Err(Error::Domain("need at least one angle and one seed".into()));
        }
        if matches!(self.snr, Some(s) if !(s > 0.0)) {
            return Err(Error::Domain("SNR must be > 0".into()));
        }
        self.noise_free.validate()?;
        self.noisy.validate()
    }
}

/// One reconstruction of one phantom instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRecord {
    pub condition: String,
    pub angle: f64,
    pub method: Method,
    pub seed: usize,
    pub rmse: f64,
    pub nonzeros: usize,
    pub md: f64,
    pub kkt_residual: f64,
    /// |E(0) - 1| of the reconstruction.
    pub origin_error: f64,
}

fn record(
    condition: &str,
    angle: f64,
    method: Method,
    seed: usize,
    r: &Reconstruction,
    rmse: f64,
) -> Result<RmseRecord> {
    let e0 = evaluate_signal(&r.coefficients, 0.0, &nalgebra::Vector3::z())?;
    Ok(RmseRecord {
        condition: condition.into(),
        angle,
        method,
        seed,
        rmse,
        nonzeros: r.diagnostics.nonzeros,
        md: r.diagnostics.md,
        kkt_residual: r.diagnostics.kkt_residual,
        origin_error: (e0 - 1.0).abs(),
    })
}

pub const NOISE_FREE: &str = "noise_free";
pub const NOISY: &str = "noisy";

/// Crossing-tensor phantoms over the angle sweep, each undersampled from the
/// DSI grid with an independent mask per (angle, seed), reconstructed by both
/// methods and scored against the noise-free signal on the full grid.
pub fn run_rmse_experiment(cfg: &RmseConfig, dict: &Dictionary) -> Result<Vec<RmseRecord>> {
    cfg.validate()?;
    let tau = dict.spec().tau;
    let grid = dsi_grid(cfg.grid_radius, cfg.b_max, tau)?;
    let jobs: Vec<(usize, f64, usize)> =
        cfg.angles.iter().enumerate().flat_map(|(ai, &a)| (0..cfg.seeds).map(move |s| (ai, a, s))).collect();
    let per_job = parallel::map_slice(&jobs, |&(ai, angle, s)| -> Result<Vec<RmseRecord>> {
        let mut rng = shard_rng(cfg.seed, (ai * cfg.seeds + s) as u64);
        let truth = Phantom::new(crossing(cfg.md, cfg.fa, angle)?, tau).sample(&grid);
        let idx = undersample_indices(&grid, cfg.density_exponent, cfg.samples, &mut rng)?;
        let sub = grid.subset(&idx)?;
        let clean: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
        let mut conditions = vec![(NOISE_FREE, clean.clone(), &cfg.noise_free)];
        if let Some(snr) = cfg.snr {
            let noisy = clean.iter().map(|e| add_rician_noise(*e, snr, &mut rng)).collect();
            conditions.push((NOISY, noisy, &cfg.noisy));
        }
        let mut out = Vec::new();
        for (condition, values, recon) in conditions {
            let dl = reconstruct_voxel(&values, &sub, dict, recon)?;
            let l1 = l1_spfi(&values, &sub, dict.spec(), recon)?;
            for (method, r) in [(Method::DlSpfi, dl), (Method::L1Spfi, l1)] {
                let rmse = predict_and_rmse(&r.coefficients, &grid, &truth)?;
                out.push(record(condition, angle, method, s, &r, rmse)?);
            }
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for r in per_job {
        records.extend(r?);
    }
    Ok(records)
}

/// Mean RMSE over seeds per (condition, angle, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub condition: String,
    pub angle: f64,
    pub method: Method,
    pub seeds: usize,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub mean_nonzeros: f64,
    pub max_kkt: f64,
    pub max_origin_error: f64,
}

pub fn summarize_rmse(records: &[RmseRecord]) -> Vec<RmseRow> {
    let mut rows: Vec<RmseRow> = Vec::new();
    let mut keys: Vec<(String, f64, Method)> = Vec::new();
    for r in records {
        let key = (r.condition.clone(), r.angle, r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (condition, angle, method) in keys {
        let group: Vec<&RmseRecord> =
            records.iter().filter(|r| r.condition == condition && r.angle == angle && r.method == method).collect();
        let n = group.len() as f64;
        let mean = group.iter().map(|r| r.rmse).sum::<f64>() / n;
        let var =
            if group.len() > 1 { group.iter().map(|r| (r.rmse - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        rows.push(RmseRow {
            condition,
            angle,
            method,
            seeds: group.len(),
            mean_rmse: mean,
            sd_rmse: var.sqrt(),
            mean_nonzeros: group.iter().map(|r| r.nonzeros as f64).sum::<f64>() / n,
            max_kkt: group.iter().map(|r| r.kkt_residual).fold(0.0, f64::max),
            max_origin_error: group.iter().map(|r| r.origin_error).fold(0.0, f64::max),
        });
    }
    rows
}

/// Mean of `rmse` over all records of one condition and method.
pub fn overall_mean(records: &[RmseRecord], condition: &str, method: Method) -> Option<f64> {
    let v: Vec<f64> =
        records.iter().filter(|r| r.condition == condition && r.method == method).map(|r| r.rmse).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub const RMSE_COLUMNS: &str = "condition,angle,method,seeds,mean_rmse,sd_rmse,mean_nonzeros,max_kkt,max_origin_error";

pub fn rmse_csv(rows: &[RmseRow]) -> String {
    let mut out = String::from(RMSE_COLUMNS);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:e},{:e}",
            r.condition,
            r.angle,
            r.method.label(),
            r.seeds,
            r.mean_rmse,
            r.sd_rmse,
            r.mean_nonzeros,
            r.max_kkt,
            r.max_origin_error
        );
    }
    out
}

/// Stable 64-bit FNV-1a digest, used to fingerprint configurations.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Comment lines prefixed to every CSV: code version, seed, config digest and
/// any free-form notes.
pub fn csv_header(config_text: &str, seed: u64, notes: &[&str]) -> String {
    let mut out = format!(
        "# dlspfi {}\n# seed {seed}\n# config_hash {:016x}\n",
        env!("CARGO_PKG_VERSION"),
        fnv1a(config_text.as_bytes())
    );
    for n in notes {
        let _ = writeln!(out, "# {n}");
    }
    out
}

pub const SUBSTITUTE_MODEL_NOTE: &str =
    "phantom: two equal-weight Gaussian tensors crossing in the x-y plane (substitute for a cylinder model)";
