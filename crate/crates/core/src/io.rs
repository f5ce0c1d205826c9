//! Dictionary files.
//!
//! A dictionary file is one JSON header line followed by a little-endian f64
//! payload: the atom matrix in column-major order, then the K atom energies.
//! Signal files are plain text; see [`SignalFile`].

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::scheme::AcquisitionScheme;
use crate::spf_basis::SpfSpec;

pub const DICTIONARY_MAGIC: &str = "dlspfi-dictionary";
pub const DICTIONARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DictionaryHeader {
    magic: String,
    version: u32,
    rows: usize,
    atoms: usize,
    learned: usize,
    zeta0: f64,
    d0: f64,
    spec: SpfSpec,
}

/// Serializes a dictionary to bytes.
pub fn dictionary_to_bytes(d: &Dictionary) -> Vec<u8> {
    let header = DictionaryHeader {
        magic: DICTIONARY_MAGIC.into(),
        version: DICTIONARY_VERSION,
        rows: d.atoms().nrows(),
        atoms: d.len(),
        learned: d.learned_len(),
        zeta0: d.zeta0(),
        d0: d.d0(),
        spec: *d.spec(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(8 * (d.atoms().len() + d.len()));
    for v in d.atoms().iter().chain(d.energies().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses bytes produced by [`dictionary_to_bytes`]. `path` only labels errors.
pub fn dictionary_from_bytes(bytes: &[u8], path: &Path) -> Result<Dictionary> {
    let newline = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| Error::format(path, "missing header line"))?;
    let header: DictionaryHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.magic != DICTIONARY_MAGIC {
        return Err(Error::format(path, format!("not a dictionary file (magic {:?})", header.magic)));
    }
    if header.version != DICTIONARY_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {} (expected {DICTIONARY_VERSION})", header.version),
        ));
    }
    if header.rows != header.spec.stripped_len() {
        return Err(Error::format(
            path,
            format!("{} rows do not match N={} L={}", header.rows, header.spec.radial_order, header.spec.angular_order),
        ));
    }
    if header.zeta0 != header.spec.zeta {
        return Err(Error::format(path, "header zeta0 disagrees with spec"));
    }
    let payload = &bytes[newline + 1..];
    let n_values = header
        .rows
        .checked_mul(header.atoms)
        .and_then(|v| v.checked_add(header.atoms))
        .ok_or_else(|| Error::format(path, "header shape overflows"))?;
    if payload.len() != 8 * n_values {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, header requires {}", payload.len(), 8 * n_values),
        ));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let atoms = DMatrix::from_iterator(header.rows, header.atoms, values.by_ref().take(header.rows * header.atoms));
    let energies = DVector::from_iterator(header.atoms, values);
    Dictionary::from_parts(atoms, header.spec, header.d0, header.learned, energies)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_dictionary(d: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dictionary_to_bytes(d)).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    dictionary_from_bytes(&bytes, path)
}

/// Loads a dictionary and checks its basis orders against `spec`.
pub fn load_dictionary_for(path: impl AsRef<Path>, spec: &SpfSpec) -> Result<Dictionary> {
    let d = load_dictionary(path)?;
    let have = d.spec();
    if have.radial_order != spec.radial_order || have.angular_order != spec.angular_order {
        return Err(Error::SpecMismatch {
            file_n: have.radial_order,
            file_l: have.angular_order,
            want_n: spec.radial_order,
            want_l: spec.angular_order,
        });
    }
    Ok(d)
}

pub const SIGNALS_MAGIC: &str = "# dlspfi-signals v1";

/// Per-voxel attenuation rows measured on one acquisition scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFile {
    /// Scheme file, as written in the header (relative paths are relative to
    /// the signal file's directory).
    pub scheme: PathBuf,
    pub samples: usize,
    pub voxels: Vec<Vec<f64>>,
}

impl SignalFile {
    pub fn new(scheme: impl Into<PathBuf>, voxels: Vec<Vec<f64>>) -> Result<Self> {
        let samples = voxels.first().map_or(0, Vec::len);
        if let Some((i, v)) = voxels.iter().enumerate().find(|(_, v)| v.len() != samples) {
            return Err(Error::Shape(format!("voxel {i} has {} values, voxel 0 has {samples}", v.len())));
        }
        Ok(Self { scheme: scheme.into(), samples, voxels })
    }

    /// Header lines `scheme <path>`, `samples <S>`, `voxels <V>`, then one
    /// whitespace-separated row of S values per voxel.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{SIGNALS_MAGIC}\nscheme {}\nsamples {}\nvoxels {}\n",
            self.scheme.display(),
            self.samples,
            self.voxels.len()
        );
        for v in &self.voxels {
            let row: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == SIGNALS_MAGIC => {}
            _ => return Err(Error::format(path, format!("missing {SIGNALS_MAGIC:?} header"))),
        }
        let mut header = |key: &str| -> Result<String> {
            let (i, line) = lines.next().ok_or_else(|| Error::format(path, format!("missing {key} header line")))?;
            let rest = line
                .trim()
                .strip_prefix(key)
                .filter(|r| r.starts_with(char::is_whitespace))
                .ok_or_else(|| Error::format(path, format!("line {}: expected `{key} ...`", i + 1)))?;
            Ok(rest.trim().to_string())
        };
        let scheme = PathBuf::from(header("scheme")?);
        let count = |key: &str, v: String| {
            v.parse::<usize>().map_err(|e| Error::format(path, format!("bad {key} count {v:?}: {e}")))
        };
        let samples = count("samples", header("samples")?)?;
        let n_voxels = count("voxels", header("voxels")?)?;
        let mut voxels = Vec::with_capacity(n_voxels);
        for (i, line) in lines {
            let row = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            if row.len() != samples {
                return Err(Error::format(
                    path,
                    format!("line {}: {} values, header says {samples}", i + 1, row.len()),
                ));
            }
            voxels.push(row);
        }
        if voxels.len() != n_voxels {
            return Err(Error::format(path, format!("{} voxel rows, header says {n_voxels}", voxels.len())));
        }
        Ok(Self { scheme, samples, voxels })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Loads the referenced scheme, resolving relative paths against the
    /// directory of `signal_path`, and checks its length.
    pub fn load_scheme(&self, signal_path: &Path, tau: f64) -> Result<AcquisitionScheme> {
        let path = if self.scheme.is_relative() {
            signal_path.parent().unwrap_or(Path::new("")).join(&self.scheme)
        } else {
            self.scheme.clone()
        };
        let scheme = AcquisitionScheme::read(&path, tau)?;
        if scheme.len() != self.samples {
            return Err(Error::Shape(format!(
                "{} has {} samples, signal file expects {}",
                path.display(),
                scheme.len(),
                self.samples
            )));
        }
        Ok(scheme)
    }
}
