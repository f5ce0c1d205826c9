//! `dlspfi` command-line front-end.

mod config;
mod settings;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlspfi::dictionary::train_dictionary;
use dlspfi::eval::{
    csv_header, fnv1a, rmse_csv, run_rmse_experiment, run_sparsity_experiment, sparsity_csv, summarize_rmse,
    SUBSTITUTE_MODEL_NOTE,
};
use dlspfi::io::{load_dictionary_for, save_dictionary, SignalFile};
use dlspfi::phantom::{add_rician_noise, crossing, dsi_grid, undersample_indices, Phantom};
use dlspfi::projection::{build_training_set, QuadratureRule};
use dlspfi::reconstruct::{predict_and_rmse, reconstruct_voxels};

use config::{Config, ConfigError};
use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "dlspfi", version, about = "Dictionary-learned SPF imaging")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a dictionary on the single-tensor grid and save it.
    Learn {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate crossing phantoms on an (undersampled) DSI scheme.
    Synth {
        /// Signal file to write; the scheme and the noise-free full-grid
        /// reference are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct every voxel of a signal file.
    Reconstruct {
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        /// Coefficient records (JSON lines); diagnostics go to `<out>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full-grid reference signals for RMSE.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Experiment drivers.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Nonzero-count curves of SPF and DL-SPF coefficients.
    Sparsity {
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RMSE of both estimators over the crossing-angle sweep.
    Rmse {
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure reported as `error kind=<kind> message=<json string>`.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), code: 1 }
    }

    fn line(&self) -> String {
        format!("error kind={} message={}", self.kind, serde_json::Value::String(self.message.clone()))
    }
}

impl From<dlspfi::Error> for Failure {
    fn from(e: dlspfi::Error) -> Self {
        use dlspfi::Error as E;
        let kind = match &e {
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "missing_file",
            E::Io { .. } => "io",
            E::Format { .. } | E::Parse { .. } => "format",
            E::Shape(_) => "shape",
            E::SpecMismatch { .. } => "spec_mismatch",
            E::Domain(_) => "domain",
            E::Infeasible { .. } | E::NotConverged { .. } | E::Degenerate(_) => "numerical",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Unknown(_) => "unknown_key",
            _ => "config",
        };
        Self::new(kind, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                let kind = if e.kind() == std::io::ErrorKind::NotFound { "missing_file" } else { "io" };
                Failure::new(kind, format!("{}: {e}", p.display()))
            })?;
            Config::parse(&text).map_err(|e| Failure::new("config", format!("{}: {e}", p.display())))?
        }
        None => Config::default(),
    };
    for s in &cli.set {
        cfg.set(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.insert("seed", seed);
    }
    Ok(cfg)
}

/// Flag value, else config key, else an error naming both.
fn path_setting(flag: &Option<PathBuf>, cfg: &Config, key: &str) -> Result<PathBuf, Failure> {
    match (flag, cfg.get_str(key)) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) => Ok(PathBuf::from(p)),
        (None, None) => Err(Failure::new("config", format!("no --{key} flag and no `{key}` key"))),
    }
}

fn optional_path(flag: &Option<PathBuf>, cfg: &Config, key: &str) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.get_str(key).map(PathBuf::from))
}

fn write_file(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

/// `<stem><suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn file_digest(path: &Path) -> Result<u64, Failure> {
    std::fs::read(path).map(|b| fnv1a(&b)).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn learn(cfg: &Config, out: &Option<PathBuf>) -> Outcome {
    let out = path_setting(out, cfg, "output")?;
    let s = Settings::from_config(cfg)?;
    cfg.finish()?;
    let ts = build_training_set(&s.training, &s.spec, &QuadratureRule::default())?;
    let (dict, learned) = train_dictionary(&ts.columns, &s.spec, &s.dl)?;
    save_dictionary(&dict, &out)?;
    println!(
        "wrote {} atoms={} learned={} training_columns={} dropped={} epoch_mean_l1={:?} replaced={}",
        out.display(),
        dict.len(),
        dict.learned_len(),
        ts.columns.ncols(),
        ts.dropped,
        learned.epoch_mean_l1,
        learned.replaced
    );
    Ok(())
}

fn synth(cfg: &Config, out: &Option<PathBuf>) -> Outcome {
    let out = path_setting(out, cfg, "output")?;
    let s = Settings::from_config(cfg)?;
    cfg.finish()?;
    let p = &s.phantom;
    let grid = dsi_grid(p.grid_radius, p.b_max, s.spec.tau)?;
    let mut rng = dlspfi::eval::shard_rng(s.seed, 0);
    let idx: Vec<usize> = if p.samples == 0 || p.samples >= grid.len() {
        (0..grid.len()).collect()
    } else {
        undersample_indices(&grid, p.density_exponent, p.samples, &mut rng)?
    };
    let scheme = grid.subset(&idx)?;
    let mut measured = Vec::new();
    let mut reference = Vec::new();
    for &angle in &p.angles {
        let truth = Phantom::new(crossing(p.md, p.fa, angle)?, s.spec.tau).sample(&grid);
        measured.push(
            idx.iter().map(|&i| p.snr.map_or(truth[i], |snr| add_rician_noise(truth[i], snr, &mut rng))).collect(),
        );
        reference.push(truth);
    }
    let scheme_path = sibling(&out, ".scheme.txt");
    let grid_path = sibling(&out, ".grid.txt");
    let reference_path = sibling(&out, ".reference.txt");
    let name = |p: &Path| PathBuf::from(p.file_name().unwrap_or_default());
    scheme.write(&scheme_path)?;
    grid.write(&grid_path)?;
    SignalFile::new(name(&scheme_path), measured)?.write(&out)?;
    SignalFile::new(name(&grid_path), reference)?.write(&reference_path)?;
    println!(
        "wrote {} voxels={} samples={} scheme={} reference={}",
        out.display(),
        p.angles.len(),
        scheme.len(),
        scheme_path.display(),
        reference_path.display()
    );
    Ok(())
}

fn reconstruct(
    cfg: &Config,
    signals: &Option<PathBuf>,
    dictionary: &Option<PathBuf>,
    out: &Option<PathBuf>,
    reference: &Option<PathBuf>,
) -> Outcome {
    let signals = path_setting(signals, cfg, "signals")?;
    let dict_path = path_setting(dictionary, cfg, "dictionary")?;
    let out = path_setting(out, cfg, "output")?;
    let reference = optional_path(reference, cfg, "reference");
    let s = Settings::from_config(cfg)?;
    cfg.finish()?;
    let dict = load_dictionary_for(&dict_path, &s.spec)?;
    let file = SignalFile::read(&signals)?;
    let scheme = file.load_scheme(&signals, s.spec.tau)?;
    let refs = match &reference {
        Some(r) => {
            let rf = SignalFile::read(r)?;
            if rf.voxels.len() != file.voxels.len() {
                return Err(Failure::new(
                    "shape",
                    format!(
                        "{} has {} voxels, {} has {}",
                        r.display(),
                        rf.voxels.len(),
                        signals.display(),
                        file.voxels.len()
                    ),
                ));
            }
            let rs = rf.load_scheme(r, s.spec.tau)?;
            Some((rf, rs))
        }
        None => None,
    };
    let results = reconstruct_voxels(&file.voxels, &scheme, &dict, &s.recon);
    let mut records = String::new();
    let mut diag = String::from("voxel,md,zeta,nonzeros,residual,kkt_residual,iterations,rmse\n");
    for (i, r) in results.into_iter().enumerate() {
        let r = r.map_err(|e| {
            let f = Failure::from(e);
            Failure::new(f.kind, format!("voxel {i}: {}", f.message))
        })?;
        let rmse = match &refs {
            Some((rf, rs)) => predict_and_rmse(&r.coefficients, rs, &rf.voxels[i])?.to_string(),
            None => String::new(),
        };
        let json = serde_json::to_string(&r.coefficients.to_record()).expect("record serializes");
        records.push_str(&json);
        records.push('\n');
        let d = &r.diagnostics;
        let _ = writeln!(
            diag,
            "{i},{:e},{},{},{:e},{:e},{},{rmse}",
            d.md, d.zeta, d.nonzeros, d.residual, d.kkt_residual, d.iterations
        );
    }
    let diag_path = sibling(&out, ".csv");
    write_file(&out, &records)?;
    write_file(&diag_path, &diag)?;
    println!("wrote {} voxels={} diagnostics={}", out.display(), file.voxels.len(), diag_path.display());
    Ok(())
}

fn eval(cfg: &Config, which: &EvalCommand) -> Outcome {
    let (dictionary, out) = match which {
        EvalCommand::Sparsity { dictionary, out } | EvalCommand::Rmse { dictionary, out } => (dictionary, out),
    };
    let dict_path = path_setting(dictionary, cfg, "dictionary")?;
    let out = path_setting(out, cfg, "output")?;
    let s = Settings::from_config(cfg)?;
    cfg.finish()?;
    let dict = load_dictionary_for(&dict_path, &s.spec)?;
    let dict_note = format!("dictionary {} fnv1a {:016x}", dict_path.display(), file_digest(&dict_path)?);
    let csv = match which {
        EvalCommand::Sparsity { .. } => {
            let typed = serde_json::to_string(&s.sparsity).expect("config serializes");
            let rows = run_sparsity_experiment(&s.sparsity, &dict, &QuadratureRule::default())?;
            csv_header(&typed, s.seed, &[&dict_note]) + &sparsity_csv(&rows)
        }
        EvalCommand::Rmse { .. } => {
            let typed = serde_json::to_string(&s.rmse).expect("config serializes");
            let records = run_rmse_experiment(&s.rmse, &dict)?;
            csv_header(&typed, s.seed, &[&dict_note, SUBSTITUTE_MODEL_NOTE]) + &rmse_csv(&summarize_rmse(&records))
        }
    };
    write_file(&out, &csv)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Learn { out } => learn(&cfg, out),
        Command::Synth { out } => synth(&cfg, out),
        Command::Reconstruct { signals, dictionary, out, reference } => {
            reconstruct(&cfg, signals, dictionary, out, reference)
        }
        Command::Eval { which } => eval(&cfg, which),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let f = Failure { code: 2, ..Failure::new("usage", first) };
            eprintln!("{}", f.line());
            return ExitCode::from(f.code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code)
        }
    }
}
