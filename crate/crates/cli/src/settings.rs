//! Typed view of a [`Config`]. Every key has a default; see `configs/` for the
//! full list with comments.

use dlspfi::dictionary::DlConfig;
use dlspfi::eval::{Composition, RmseConfig, ScaleChoice, Scenario, SparsityConfig};
use dlspfi::projection::TrainingGrid;
use dlspfi::reconstruct::ReconConfig;
use dlspfi::scheme::DEFAULT_TAU;
use dlspfi::spf_basis::{scale_for_md, SpfSpec, REFERENCE_MD};

use crate::config::{Config, ConfigError};
use crate::Failure;

/// Path keys are consumed by the commands that need them; listing them here
/// keeps one config file usable by every command.
const PATH_KEYS: [&str; 4] = ["output", "signals", "dictionary", "reference"];

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSettings {
    pub md: f64,
    pub fa: f64,
    pub angles: Vec<f64>,
    pub grid_radius: usize,
    pub b_max: f64,
    /// 0 keeps the full grid.
    pub samples: usize,
    pub density_exponent: f64,
    pub snr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub spec: SpfSpec,
    pub training: TrainingGrid,
    pub dl: DlConfig,
    pub phantom: PhantomSettings,
    pub recon: ReconConfig,
    pub sparsity: SparsityConfig,
    pub rmse: RmseConfig,
}

fn bad(key: &str, value: &str, msg: &str) -> ConfigError {
    ConfigError::Value { key: key.into(), value: value.into(), msg: msg.into() }
}

/// `composition:md:scale`, e.g. `mixture:1.1e-3:adaptive`.
fn parse_scenario(s: &str) -> Result<Scenario, ConfigError> {
    let key = "sparsity.scenarios";
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let [c, md, scale] = parts.as_slice() else {
        return Err(bad(key, s, "expected composition:md:scale"));
    };
    let composition = match *c {
        "single" => Composition::Single,
        "mixture" => Composition::Mixture,
        _ => return Err(bad(key, s, "composition must be single or mixture")),
    };
    let scale = match *scale {
        "fixed" => ScaleChoice::Fixed,
        "adaptive" => ScaleChoice::Adaptive,
        _ => return Err(bad(key, s, "scale must be fixed or adaptive")),
    };
    let md = md.parse().map_err(|_| bad(key, s, "md is not a number"))?;
    Ok(Scenario { composition, md, scale })
}

fn recon_config(cfg: &Config, prefix: &str, base: ReconConfig) -> Result<ReconConfig, ConfigError> {
    let k = |name: &str| format!("{prefix}.{name}");
    let lambda = cfg.get_opt::<f64>(&k("lambda"), None)?;
    let mut r = base;
    if let Some(l) = lambda {
        r.lambda = l;
        r.lambda_l = l;
        r.lambda_n = l;
    }
    r.lambda_l = cfg.get(&k("lambda_l"), r.lambda_l)?;
    r.lambda_n = cfg.get(&k("lambda_n"), r.lambda_n)?;
    r.tolerance = cfg.get(&k("tolerance"), r.tolerance)?;
    r.max_iterations = cfg.get(&k("max_iterations"), r.max_iterations)?;
    r.md_floor = cfg.get(&k("md_floor"), r.md_floor)?;
    r.md_ceiling = cfg.get(&k("md_ceiling"), r.md_ceiling)?;
    Ok(r)
}

fn preset(cfg: &Config, key: &str, default: &str) -> Result<ReconConfig, ConfigError> {
    let name = cfg.get(key, default.to_string())?;
    match name.as_str() {
        "noise_free" => Ok(ReconConfig::noise_free()),
        "noisy" => Ok(ReconConfig::noisy()),
        _ => Err(bad(key, &name, "expected noise_free or noisy")),
    }
}

impl Settings {
    pub fn from_config(cfg: &Config) -> Result<Self, Failure> {
        let seed = cfg.get("seed", 0u64)?;

        let d0 = cfg.get("basis.d0", REFERENCE_MD)?;
        let tau = cfg.get("basis.tau", DEFAULT_TAU)?;
        let spec = SpfSpec::new(
            cfg.get("basis.radial_order", 4usize)?,
            cfg.get("basis.angular_order", 8usize)?,
            scale_for_md(d0, tau),
            tau,
        )?;

        let t = TrainingGrid::default();
        let training = TrainingGrid {
            md_range: [cfg.get("training.md_min", t.md_range[0])?, cfg.get("training.md_max", t.md_range[1])?],
            fa_range: [cfg.get("training.fa_min", t.fa_range[0])?, cfg.get("training.fa_max", t.fa_range[1])?],
            n_md: cfg.get("training.n_md", t.n_md)?,
            n_fa: cfg.get("training.n_fa", t.n_fa)?,
            n_directions: cfg.get("training.n_directions", t.n_directions)?,
        };

        let base = DlConfig::default();
        let dl = DlConfig {
            epsilon: cfg.get("dl.epsilon", base.epsilon)?,
            n_atoms: cfg.get("dl.n_atoms", base.n_atoms)?,
            batch_size: cfg.get("dl.batch_size", base.batch_size)?,
            epochs: cfg.get("dl.epochs", base.epochs)?,
            warmup_epsilon: cfg.get_opt("dl.warmup_epsilon", base.warmup_epsilon)?,
            update_passes: cfg.get("dl.update_passes", base.update_passes)?,
            seed,
        };
        dl.validate()?;

        let phantom = PhantomSettings {
            md: cfg.get("phantom.md", 0.7e-3)?,
            fa: cfg.get("phantom.fa", 0.8)?,
            angles: cfg.get_list("phantom.angles", vec![30.0, 60.0, 90.0])?,
            grid_radius: cfg.get("scheme.radius", 5usize)?,
            b_max: cfg.get("scheme.b_max", 8000.0)?,
            samples: cfg.get("scheme.samples", 170usize)?,
            density_exponent: cfg.get("scheme.exponent", 3.0)?,
            snr: cfg.get_opt("noise.snr", None)?,
        };
        if phantom.angles.is_empty() {
            return Err(bad("phantom.angles", "", "need at least one angle").into());
        }

        let recon = recon_config(cfg, "recon", preset(cfg, "recon.preset", "noise_free")?)?;
        recon.validate()?;

        let sp = SparsityConfig::default();
        let scenarios = match cfg.get_str("sparsity.scenarios") {
            Some(v) => v.split(',').map(parse_scenario).collect::<Result<Vec<_>, _>>()?,
            None => sp.scenarios,
        };
        let sparsity = SparsityConfig {
            scenarios,
            fa_values: cfg.get_list("sparsity.fa_values", sp.fa_values)?,
            orientations: cfg.get("sparsity.orientations", sp.orientations)?,
            mixture_draws: cfg.get("sparsity.mixture_draws", sp.mixture_draws)?,
            epsilon: cfg.get("sparsity.epsilon", sp.epsilon)?,
            fraction: cfg.get("sparsity.fraction", sp.fraction)?,
            seed,
        };
        sparsity.validate()?;

        let rm = RmseConfig::default();
        let rmse = RmseConfig {
            md: cfg.get("rmse.md", rm.md)?,
            fa: cfg.get("rmse.fa", rm.fa)?,
            angles: cfg.get_list("rmse.angles", rm.angles)?,
            grid_radius: cfg.get("rmse.radius", rm.grid_radius)?,
            b_max: cfg.get("rmse.b_max", rm.b_max)?,
            samples: cfg.get("rmse.samples", rm.samples)?,
            density_exponent: cfg.get("rmse.exponent", rm.density_exponent)?,
            snr: cfg.get_opt("rmse.snr", rm.snr)?,
            seeds: cfg.get("rmse.seeds", rm.seeds)?,
            seed,
            noise_free: recon_config(cfg, "rmse.noise_free", rm.noise_free)?,
            noisy: recon_config(cfg, "rmse.noisy", rm.noisy)?,
        };
        rmse.validate()?;

        for k in PATH_KEYS {
            cfg.get_str(k);
        }
        Ok(Self { seed, spec, training, dl, phantom, recon, sparsity, rmse })
    }
}
