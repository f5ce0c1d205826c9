//! Dictionaries over stripped SPF coefficients: constrained sparse coding,
//! online learning and assembly of the final atom set.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::solver::{self, PathPoint};
use crate::spf_basis::{scale_for_md, CoefficientKind, CoefficientVector, SpfSpec, REFERENCE_MD};

/// Column-norm tolerance for learned atoms.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// A 180 × K dictionary (for N = 4, L = 8) with its reference scale.
///
/// The first `learned` columns are learned atoms, the remaining ones are the
/// isotropic indicator atoms (n, 0, 0) for n = 1..N.
#[derive(Debug, Clone)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    spec: SpfSpec,
    d0: f64,
    learned: usize,
    energies: DVector<f64>,
    gram: DMatrix<f64>,
}

impl PartialEq for Dictionary {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms
            && self.spec == other.spec
            && self.d0 == other.d0
            && self.learned == other.learned
            && self.energies == other.energies
    }
}

impl Dictionary {
    /// Builds a dictionary from its parts. `spec.zeta` is the reference scale ζ₀.
    pub fn from_parts(
        atoms: DMatrix<f64>,
        spec: SpfSpec,
        d0: f64,
        learned: usize,
        energies: DVector<f64>,
    ) -> Result<Self> {
        if atoms.nrows() != spec.stripped_len() {
            return Err(Error::Shape(format!(
                "dictionary has {} rows, spec N={} L={} needs {}",
                atoms.nrows(),
                spec.radial_order,
                spec.angular_order,
                spec.stripped_len()
            )));
        }
        if learned > atoms.ncols() || energies.len() != atoms.ncols() {
            return Err(Error::Shape(format!(
                "{} atoms, {learned} learned, {} energies",
                atoms.ncols(),
                energies.len()
            )));
        }
        if !(d0 > 0.0) {
            return Err(Error::Domain(format!("reference MD must be > 0, got {d0}")));
        }
        if energies.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Domain("atom energies must be > 0".into()));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("dictionary entries must be finite".into()));
        }
        let gram = atoms.transpose() * &atoms;
        Ok(Self { atoms, spec, d0, learned, energies, gram })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Basis spec at the reference scale ζ₀.
    pub fn spec(&self) -> &SpfSpec {
        &self.spec
    }

    pub fn zeta0(&self) -> f64 {
        self.spec.zeta
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn learned_len(&self) -> usize {
        self.learned
    }

    /// Stored default energies (squared coefficient-space column norms).
    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Energies as seen by a sampling design: squared column norms of `design · D`.
    pub fn sampled_energies(&self, design: &DMatrix<f64>) -> Result<DVector<f64>> {
        if design.ncols() != self.atoms.nrows() {
            return Err(Error::Shape(format!(
                "design has {} columns, dictionary rows {}",
                design.ncols(),
                self.atoms.nrows()
            )));
        }
        let md = design * &self.atoms;
        Ok(DVector::from_iterator(md.ncols(), md.column_iter().map(|c| c.norm_squared())))
    }

    /// a′ = D c.
    pub fn synthesize(&self, c: &CoefficientVector) -> Result<CoefficientVector> {
        if c.kind() != CoefficientKind::Dictionary || c.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} dictionary coefficients, got {:?} of length {}",
                self.len(),
                c.kind(),
                c.len()
            )));
        }
        CoefficientVector::new(CoefficientKind::Stripped, self.spec, &self.atoms * c.values())
    }

    fn coder(&self) -> SparseCoder<'_> {
        SparseCoder { atoms: &self.atoms, gram: std::borrow::Cow::Borrowed(&self.gram) }
    }

    /// Minimum-‖c‖₁ code with ‖Dc - a′‖₂ ≤ epsilon.
    pub fn sparse_code(&self, a_prime: &CoefficientVector, epsilon: f64) -> Result<CoefficientVector> {
        if a_prime.kind() != CoefficientKind::Stripped || a_prime.len() != self.atoms.nrows() {
            return Err(Error::Shape(format!(
                "expected stripped coefficients of length {}, got {:?} of length {}",
                self.atoms.nrows(),
                a_prime.kind(),
                a_prime.len()
            )));
        }
        let code = self.coder().code(a_prime.values(), epsilon)?;
        CoefficientVector::new(CoefficientKind::Dictionary, self.spec, code.coefficients)
    }

    /// Sparse codes for every column of `signals`, in column order.
    pub fn sparse_code_columns(&self, signals: &DMatrix<f64>, epsilon: f64) -> Result<Vec<SparseCode>> {
        self.coder().code_columns(signals, epsilon)
    }
}

/// Free-function form of [`Dictionary::sparse_code`].
pub fn sparse_code(a_prime: &CoefficientVector, dict: &Dictionary, epsilon: f64) -> Result<CoefficientVector> {
    dict.sparse_code(a_prime, epsilon)
}

/// Result of one constrained sparse-coding solve.
#[derive(Debug, Clone)]
pub struct SparseCode {
    pub coefficients: DVector<f64>,
    /// ‖Dc - x‖₂.
    pub residual: f64,
    /// Penalty level at which the path met the bound.
    pub penalty: f64,
    /// Stationarity violation at that penalty.
    pub kkt_residual: f64,
}

impl SparseCode {
    pub fn l1(&self) -> f64 {
        self.coefficients.lp_norm(1)
    }
}

/// Sparse coder over an atom matrix with a precomputed Gram matrix.
pub struct SparseCoder<'a> {
    atoms: &'a DMatrix<f64>,
    gram: std::borrow::Cow<'a, DMatrix<f64>>,
}

impl<'a> SparseCoder<'a> {
    pub fn new(atoms: &'a DMatrix<f64>) -> Self {
        Self { atoms, gram: std::borrow::Cow::Owned(atoms.transpose() * atoms) }
    }

    pub fn code(&self, x: &DVector<f64>, epsilon: f64) -> Result<SparseCode> {
        if x.len() != self.atoms.nrows() {
            return Err(Error::Shape(format!("signal length {} vs {} rows", x.len(), self.atoms.nrows())));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
        }
        let aty = self.atoms.tr_mul(x);
        let PathPoint { coefficients, penalty, residual, .. } =
            solver::constrained_l1(&self.gram, &aty, x.norm_squared(), epsilon)?;
        let kkt_residual = solver::path_kkt_residual(&self.gram, &aty, &coefficients, penalty);
        Ok(SparseCode { coefficients, residual, penalty, kkt_residual })
    }

    /// Like [`code`](Self::code) but an unreachable bound is relaxed to the best
    /// achievable residual instead of failing.
    pub fn code_relaxed(&self, x: &DVector<f64>, epsilon: f64) -> Result<SparseCode> {
        match self.code(x, epsilon) {
            Err(Error::Infeasible { best, .. }) => self.code(x, best * (1.0 + 1e-9) + f64::MIN_POSITIVE),
            other => other,
        }
    }

    pub fn code_columns(&self, signals: &DMatrix<f64>, epsilon: f64) -> Result<Vec<SparseCode>> {
        parallel::map_range(signals.ncols(), |j| self.code(&signals.column(j).into_owned(), epsilon))
            .into_iter()
            .collect()
    }
}

/// Online learning settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DlConfig {
    /// Residual bound for coding unit-norm training columns.
    pub epsilon: f64,
    pub n_atoms: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Residual bound for the first epoch; the bound then decreases
    /// geometrically to `epsilon`, which is used for the final epoch.
    pub warmup_epsilon: Option<f64>,
    /// Block-coordinate passes over the atoms per mini-batch.
    pub update_passes: usize,
}

impl Default for DlConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            n_atoms: 250,
            batch_size: 256,
            epochs: 5,
            seed: 0,
            warmup_epsilon: Some(0.1),
            update_passes: 1,
        }
    }
}

impl DlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if let Some(w) = self.warmup_epsilon {
            if !(w > 0.0) {
                return Err(Error::Domain(format!("warmup epsilon must be > 0, got {w}")));
            }
        }
        if self.n_atoms == 0 || self.batch_size == 0 || self.epochs == 0 || self.update_passes == 0 {
            return Err(Error::Domain("n_atoms, batch_size, epochs and update_passes must be positive".into()));
        }
        Ok(())
    }

    /// Residual bound used in `epoch` (0-based).
    pub fn epoch_epsilon(&self, epoch: usize) -> f64 {
        match self.warmup_epsilon {
            Some(w) if w > self.epsilon && epoch + 1 < self.epochs => {
                let span = (self.epochs - 1).max(1) as f64;
                let frac = epoch as f64 / span;
                w * (self.epsilon / w).powf(frac)
            }
            _ => self.epsilon,
        }
    }
}

/// Learned atoms plus the per-epoch training objective.
#[derive(Debug, Clone)]
pub struct LearnedAtoms {
    pub atoms: DMatrix<f64>,
    /// Mean ‖c‖₁ of the codes computed during each epoch.
    pub epoch_mean_l1: Vec<f64>,
    /// Atoms reinitialized because no code used them.
    pub replaced: usize,
}

/// Online dictionary learning over the columns of `training`.
///
/// Atoms start as the canonical basis (as many as fit) followed by distinct
/// random training columns. Each mini-batch is coded against the current
/// atoms, folded into the running statistics A = Σccᵀ and B = Σxcᵀ, and every
/// atom then takes one block-coordinate step and is rescaled to unit norm.
pub fn learn_dictionary(training: &DMatrix<f64>, cfg: &DlConfig) -> Result<LearnedAtoms> {
    cfg.validate()?;
    let (dim, m) = training.shape();
    let k = cfg.n_atoms;
    if m < k {
        return Err(Error::Domain(format!("{m} training columns for {k} atoms")));
    }
    for (j, col) in training.column_iter().enumerate() {
        let norm = col.norm();
        if !norm.is_finite() || norm <= 1e-12 {
            return Err(Error::Degenerate(format!("training column {j} is zero or non-finite")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut atoms = DMatrix::<f64>::zeros(dim, k);
    let n_identity = dim.min(k);
    for i in 0..n_identity {
        atoms[(i, i)] = 1.0;
    }
    for (slot, col) in (n_identity..k).zip(sample(&mut rng, m, k - n_identity).into_iter()) {
        let c = training.column(col);
        atoms.set_column(slot, &(c / c.norm()));
    }

    let mut stat_a = DMatrix::<f64>::zeros(k, k);
    let mut stat_b = DMatrix::<f64>::zeros(dim, k);
    let batches_per_epoch = m.div_ceil(cfg.batch_size);
    let mut t = 0usize;
    let mut epoch_mean_l1 = Vec::with_capacity(cfg.epochs);
    let mut replaced = 0;

    for epoch in 0..cfg.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order_rng.set_stream(epoch as u64 + 1);
        let order = sample(&mut order_rng, m, m).into_vec();
        let mut l1_sum = 0.0;
        let epsilon = cfg.epoch_epsilon(epoch);

        for chunk in order.chunks(cfg.batch_size) {
            t += 1;
            let batch = DMatrix::from_fn(dim, chunk.len(), |r, c| training[(r, chunk[c])]);
            let coder = SparseCoder::new(&atoms);
            let codes: Vec<DVector<f64>> = parallel::map_range(chunk.len(), |j| {
                coder.code_relaxed(&batch.column(j).into_owned(), epsilon).map(|c| c.coefficients)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let codes = DMatrix::from_columns(&codes);
            l1_sum += codes.column_iter().map(|c| c.lp_norm(1)).sum::<f64>();

            // Running means, with the window capped near one epoch so codes from
            // early dictionaries fade out.
            let w = (1.0 / t as f64).max(1.0 / batches_per_epoch as f64);
            let inv = 1.0 / chunk.len() as f64;
            stat_a *= 1.0 - w;
            stat_a.gemm(w * inv, &codes, &codes.transpose(), 1.0);
            stat_b *= 1.0 - w;
            stat_b.gemm(w * inv, &batch, &codes.transpose(), 1.0);

            let scale = stat_a.diagonal().amax();
            for pass in 0..cfg.update_passes {
                for j in 0..k {
                    let ajj = stat_a[(j, j)];
                    if ajj <= 1e-12 * scale {
                        if pass > 0 {
                            continue;
                        }
                        // Unused atom: restart it from a random batch column.
                        let pick = sample(&mut rng, chunk.len(), 1).index(0);
                        let c = batch.column(pick);
                        atoms.set_column(j, &(c / c.norm()));
                        stat_a.row_mut(j).fill(0.0);
                        stat_a.column_mut(j).fill(0.0);
                        stat_b.column_mut(j).fill(0.0);
                        replaced += 1;
                        continue;
                    }
                    let mut u = stat_b.column(j) - &atoms * stat_a.column(j);
                    u /= ajj;
                    u += atoms.column(j);
                    let norm = u.norm();
                    if norm > 1e-12 {
                        atoms.set_column(j, &(u / norm));
                    }
                }
            }
        }
        epoch_mean_l1.push(l1_sum / m as f64);
    }

    Ok(LearnedAtoms { atoms, epoch_mean_l1, replaced })
}

/// Appends the isotropic indicator atoms (n, 0, 0), n = 1..N, to the learned
/// atoms and fixes the reference scale ζ₀ = 1/(8π²τ·d0).
pub fn assemble_dictionary(learned: &DMatrix<f64>, spec: &SpfSpec, d0: f64) -> Result<Dictionary> {
    let rows = spec.stripped_len();
    if learned.nrows() != rows {
        return Err(Error::Shape(format!("learned atoms have {} rows, expected {rows}", learned.nrows())));
    }
    for (j, col) in learned.column_iter().enumerate() {
        if (col.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Domain(format!("learned atom {j} is not unit norm")));
        }
    }
    let n_learned = learned.ncols();
    let n_iso = spec.radial_order;
    let mut atoms = DMatrix::<f64>::zeros(rows, n_learned + n_iso);
    atoms.columns_mut(0, n_learned).copy_from(learned);
    for n in 1..=n_iso {
        let idx =
            spec.stripped_index(n, 0, 0).ok_or_else(|| Error::Domain(format!("no stripped index for ({n},0,0)")))?;
        atoms[(idx, n_learned + n - 1)] = 1.0;
    }
    let spec = spec.with_zeta(scale_for_md(d0, spec.tau))?;
    let energies = DVector::from_iterator(atoms.ncols(), atoms.column_iter().map(|c| c.norm_squared()));
    Dictionary::from_parts(atoms, spec, d0, n_learned, energies)
}

/// Learns atoms and assembles them at the reference MD.
pub fn train_dictionary(training: &DMatrix<f64>, spec: &SpfSpec, cfg: &DlConfig) -> Result<(Dictionary, LearnedAtoms)> {
    let learned = learn_dictionary(training, cfg)?;
    let dict = assemble_dictionary(&learned.atoms, spec, REFERENCE_MD)?;
    Ok((dict, learned))
}
