//! q-space acquisition schemes and their text format.
//!
//! One sample per line, either `qx qy qz` (mm⁻¹; magnitude is the norm and the
//! direction the normalized vector) or `b ux uy uz` (s/mm² and a direction,
//! converted through b = 4π²τq²). Text after `#` is ignored.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Diffusion time for which b = q² numerically.
pub const DEFAULT_TAU: f64 = 1.0 / (4.0 * PI * PI);

const UNIT_TOL: f64 = 1e-8;
const DUPLICATE_TOL: f64 = 1e-12;

/// A single q-space sample: magnitude in mm⁻¹ and a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QSample {
    pub q: f64,
    pub dir: Vector3<f64>,
}

impl QSample {
    pub fn new(q: f64, dir: Vector3<f64>) -> Result<Self> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::Domain(format!("q magnitude must be finite and >= 0, got {q}")));
        }
        if (dir.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain(format!("sample direction must be unit norm, got norm {}", dir.norm())));
        }
        Ok(Self { q, dir })
    }

    /// Builds a sample from a q-vector. The zero vector maps to q = 0 along +z.
    pub fn from_vector(v: Vector3<f64>) -> Self {
        let q = v.norm();
        if q == 0.0 {
            Self { q: 0.0, dir: Vector3::z() }
        } else {
            Self { q, dir: v / q }
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.dir * self.q
    }

    pub fn b_value(&self, tau: f64) -> f64 {
        4.0 * PI * PI * tau * self.q * self.q
    }
}

/// Ordered list of q-space samples sharing one diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScheme {
    samples: Vec<QSample>,
    tau: f64,
}

impl AcquisitionScheme {
    pub fn new(samples: Vec<QSample>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Domain(format!("diffusion time must be > 0, got {tau}")));
        }
        for s in &samples {
            QSample::new(s.q, s.dir)?;
        }
        for (i, a) in samples.iter().enumerate() {
            let va = a.vector();
            for b in &samples[i + 1..] {
                if (va - b.vector()).norm() <= DUPLICATE_TOL * (1.0 + a.q) {
                    return Err(Error::Domain(format!(
                        "duplicate q-space sample at ({:.6}, {:.6}, {:.6})",
                        va.x, va.y, va.z
                    )));
                }
            }
        }
        Ok(Self { samples, tau })
    }

    pub fn samples(&self) -> &[QSample] {
        &self.samples
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QSample> {
        self.samples.iter()
    }

    pub fn q_max(&self) -> f64 {
        self.samples.iter().map(|s| s.q).fold(0.0, f64::max)
    }

    pub fn b_max(&self) -> f64 {
        let q = self.q_max();
        4.0 * PI * PI * self.tau * q * q
    }

    /// Sub-scheme with the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Shape(format!("sample index {i} out of range for {} samples", self.len())))?;
            out.push(*s);
        }
        Self::new(out, self.tau)
    }

    /// Parses the text format. Lines with three columns are q-vectors, lines
    /// with four are `b ux uy uz`.
    pub fn parse(text: &str, tau: f64) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|f| !f.is_empty())
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse { line: lineno + 1, msg: format!("bad number {f:?}: {e}") })
                })
                .collect::<Result<Vec<_>>>()?;
            let sample = match fields.as_slice() {
                [qx, qy, qz] => QSample::from_vector(Vector3::new(*qx, *qy, *qz)),
                [b, ux, uy, uz] => {
                    if *b < 0.0 {
                        return Err(Error::Parse { line: lineno + 1, msg: format!("negative b-value {b}") });
                    }
                    let dir = Vector3::new(*ux, *uy, *uz);
                    let norm = dir.norm();
                    let q = (b / (4.0 * PI * PI * tau)).sqrt();
                    if q == 0.0 {
                        QSample { q: 0.0, dir: Vector3::z() }
                    } else if norm == 0.0 {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            msg: "zero direction with non-zero b-value".into(),
                        });
                    } else {
                        QSample { q, dir: dir / norm }
                    }
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: format!("expected 3 or 4 columns, got {}", fields.len()),
                    })
                }
            };
            samples.push(sample);
        }
        Self::new(samples, tau)
    }

    /// Serializes as q-vectors, one per line, with a comment header.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# q-space scheme: {} samples, tau = {:e} s", self.len(), self.tau);
        let _ = writeln!(out, "# qx qy qz (mm^-1)");
        for s in &self.samples {
            let v = s.vector();
            let _ = writeln!(out, "{:e} {:e} {:e}", v.x, v.y, v.z);
        }
        out
    }

    pub fn read(path: impl AsRef<Path>, tau: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, tau)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl<'a> IntoIterator for &'a AcquisitionScheme {
    type Item = &'a QSample;
    type IntoIter = std::slice::Iter<'a, QSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_line_forms() {
        let text = "# header\n3 4 0\n\n100 0 0 2 # b-form\n0 0 0\n";
        let s = AcquisitionScheme::parse(text, DEFAULT_TAU).unwrap();
        assert_eq!(s.len(), 3);
        assert!((s.samples()[0].q - 5.0).abs() < 1e-15);
        assert!((s.samples()[1].q - 10.0).abs() < 1e-12);
        assert_eq!(s.samples()[1].dir, Vector3::z());
        assert_eq!(s.samples()[2].q, 0.0);
    }

    #[test]
    fn rejects_bad_lines_and_duplicates() {
        assert!(matches!(AcquisitionScheme::parse("1 2\n", DEFAULT_TAU), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(AcquisitionScheme::parse("1 0 0\nfoo 0 0\n", DEFAULT_TAU), Err(Error::Parse { line: 2, .. })));
        assert!(AcquisitionScheme::parse("1 0 0\n1 0 0\n", DEFAULT_TAU).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = AcquisitionScheme::parse("1 2 3\n-0.5 0.25 8\n", DEFAULT_TAU).unwrap();
        let back = AcquisitionScheme::parse(&s.to_text(), DEFAULT_TAU).unwrap();
        for (a, b) in s.iter().zip(back.iter()) {
            assert!((a.vector() - b.vector()).norm() < 1e-12);
        }
    }

    #[test]
    fn b_value_uses_tau() {
        let s = QSample::new(10.0, Vector3::x()).unwrap();
        assert!((s.b_value(DEFAULT_TAU) - 100.0).abs() < 1e-12);
        assert!(QSample::new(-1.0, Vector3::x()).is_err());
        assert!(QSample::new(1.0, Vector3::new(1.0, 1.0, 0.0)).is_err());
    }
}
