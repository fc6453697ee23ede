//! Untrained prescreeners: magnitude, SMF, ACE, and JOMP.
//!
//! SMF and ACE are GLRT statistics against an empirically estimated Gaussian
//! background; both are evaluated against every dictionary atom and the
//! maximum is kept. JOMP scores a position by how well the dictionary
//! reconstructs the two samples ℓ positions ahead of and behind it, which
//! suppresses single-sample anomalies.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dsrf::DsrfDictionary;
use crate::error::{Error, Result};
use crate::filters::{
    apply_downtrack_with, make_downtrack_projector, default_kept_band, MeanSubtraction,
    SoilProjector,
};
use crate::measurement::{stack_real, ComplexSweep, Position};
use crate::seeding::hash_f64s;

/// Gaussian background statistics with cached inverse and whitener.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    whitener: DMatrix<f64>,
    whitener_inv: DMatrix<f64>,
    epsilon: f64,
}

impl BackgroundModel {
    /// Build directly from a mean and covariance (no extra regularization).
    pub fn from_moments(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        Self::assemble(mu, sigma, 0.0)
    }

    fn assemble(mu: DVector<f64>, sigma: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let m = mu.len();
        if sigma.nrows() != m || sigma.ncols() != m {
            return Err(Error::dims(format!(
                "covariance is {}x{} for a {m}-dimensional mean",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        // Work with the symmetric part only.
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sigma.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::Numerical(
                "covariance is not positive definite after regularization".into(),
            ));
        }
        let u = &eig.eigenvectors;
        let d_inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let d_inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let d_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt()));
        let sigma_inv = u * d_inv * u.transpose();
        let whitener = d_inv_sqrt * u.transpose();
        let whitener_inv = u * d_sqrt;
        Ok(BackgroundModel {
            mu,
            sigma,
            sigma_inv,
            whitener,
            whitener_inv,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// Whitening matrix W with WᵀW = Σ⁻¹.
    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Map a sample into whitened coordinates: `W (x - μ)`.
    pub fn whiten(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dims(format!(
                "sample has {} entries, background expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(&self.whitener * (x - &self.mu))
    }

    /// Map a whitened direction back to an unwhitened signature: `W⁻¹ ŝ`.
    pub fn unwhiten_direction(&self, s_hat: &DVector<f64>) -> Result<DVector<f64>> {
        if s_hat.len() != self.dim() {
            return Err(Error::dims(format!(
                "direction has {} entries, background expects {}",
                s_hat.len(),
                self.dim()
            )));
        }
        Ok(&self.whitener_inv * s_hat)
    }

    /// Whiten a direction without mean removal: `W s`.
    pub fn whiten_direction(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.dim() {
            return Err(Error::dims(format!(
                "direction has {} entries, background expects {}",
                s.len(),
                self.dim()
            )));
        }
        Ok(&self.whitener * s)
    }

    /// Stable content hash over the mean and covariance bit patterns.
    pub fn content_hash(&self) -> u64 {
        let mut values: Vec<f64> = self.mu.iter().cloned().collect();
        values.extend(self.sigma.iter().cloned());
        hash_f64s(&values)
    }
}

/// Default covariance regularization: `1e-6 × trace(Σ) / M`.
pub fn default_epsilon(sample_cov: &DMatrix<f64>) -> f64 {
    1e-6 * sample_cov.trace() / sample_cov.nrows() as f64
}

/// Estimate background statistics from M×B column samples in one pass.
///
/// `epsilon` is added to the covariance diagonal; `None` uses
/// [`default_epsilon`].
pub fn fit_background(samples: &DMatrix<f64>, epsilon: Option<f64>) -> Result<BackgroundModel> {
    let (m, b) = (samples.nrows(), samples.ncols());
    if b < 2 {
        return Err(Error::invalid(
            "background samples",
            format!("need at least 2 samples, got {b}"),
        ));
    }
    let mu = DVector::from_fn(m, |i, _| samples.row(i).sum() / b as f64);
    let mut centered = samples.clone();
    for j in 0..b {
        for i in 0..m {
            centered[(i, j)] -= mu[i];
        }
    }
    let sample_cov = (&centered * centered.transpose()) / (b as f64 - 1.0);
    let eps = epsilon.unwrap_or_else(|| default_epsilon(&sample_cov));
    let sigma = sample_cov + DMatrix::from_diagonal_element(m, m, eps);
    BackgroundModel::assemble(mu, sigma, eps)
}

/// Spectral matched filter: `sᵀΣ⁻¹(x-μ) / sqrt(sᵀΣ⁻¹s)`.
///
/// Magnitude-sensitive: doubling `x - μ` doubles the statistic.
pub fn smf(x: &DVector<f64>, s: &DVector<f64>, bg: &BackgroundModel) -> Result<f64> {
    let ws = bg.whiten_direction(s)?;
    let ws_norm = ws.norm();
    if ws_norm == 0.0 {
        return Err(Error::invalid("smf signature", "zero signature"));
    }
    let wx = bg.whiten(x)?;
    Ok(ws.dot(&wx) / ws_norm)
}

/// Adaptive cosine estimator: the whitened angle between `x - μ` and `s`,
/// always in `[-1, 1]` and invariant to positive scaling of `x - μ`.
///
/// `x = μ` exactly is degenerate and evaluates to 0.
pub fn ace(x: &DVector<f64>, s: &DVector<f64>, bg: &BackgroundModel) -> Result<f64> {
    Ok(ace_detailed(x, s, bg)?.0)
}

/// [`ace`] plus a flag marking the degenerate `x = μ` case.
pub fn ace_detailed(x: &DVector<f64>, s: &DVector<f64>, bg: &BackgroundModel) -> Result<(f64, bool)> {
    let ws = bg.whiten_direction(s)?;
    let ws_norm = ws.norm();
    if ws_norm == 0.0 {
        return Err(Error::invalid("ace signature", "zero signature"));
    }
    let wx = bg.whiten(x)?;
    let wx_norm = wx.norm();
    if wx_norm == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((ws.dot(&wx) / (ws_norm * wx_norm)).clamp(-1.0, 1.0), false))
}

/// Euclidean norm of a (filtered) sample.
pub fn magnitude(x: &DVector<f64>) -> f64 {
    x.norm()
}

/// Result of a matching-pursuit decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct MpResult {
    /// Atom index selected at each step.
    pub indices: Vec<usize>,
    /// Projection coefficient at each step.
    pub weights: Vec<f64>,
    /// Residual after the final step.
    pub residual: DVector<f64>,
}

/// Greedy sparse approximation of `x` with `p` unit-norm atoms.
///
/// Each step selects the atom with the largest absolute projection onto the
/// current residual (lowest index on ties) and subtracts its contribution.
pub fn matching_pursuit(x: &DVector<f64>, atoms: &DMatrix<f64>, p: usize) -> Result<MpResult> {
    if atoms.ncols() == 0 || p == 0 || p > atoms.ncols() {
        return Err(Error::invalid(
            "matching pursuit",
            format!("need 1 <= p <= {} atoms, got p = {p}", atoms.ncols()),
        ));
    }
    if x.len() != atoms.nrows() {
        return Err(Error::dims(format!(
            "sample has {} entries, atoms have {} rows",
            x.len(),
            atoms.nrows()
        )));
    }
    let mut residual = x.clone();
    let mut indices = Vec::with_capacity(p);
    let mut weights = Vec::with_capacity(p);
    for _ in 0..p {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for (k, g) in atoms.column_iter().enumerate() {
            let proj = g.dot(&residual).abs();
            if proj > best_abs {
                best_abs = proj;
                best = k;
            }
        }
        let g = atoms.column(best);
        let w = g.dot(&residual);
        residual -= g * w;
        indices.push(best);
        weights.push(w);
    }
    Ok(MpResult {
        indices,
        weights,
        residual,
    })
}

/// Two-tap JOMP parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JompParams {
    /// Tap offset: samples at `i ± ell` are reconstructed.
    pub ell: usize,
    /// Number of jointly selected atoms.
    pub p: usize,
    /// Re-fit the selected atoms by least squares before measuring residuals.
    pub refit: bool,
}

impl Default for JompParams {
    fn default() -> Self {
        JompParams {
            ell: 2,
            p: 3,
            refit: false,
        }
    }
}

/// Jointly reconstruct two unit-normalized taps; returns squared residuals.
fn joint_pursuit(
    tap_a: &DVector<f64>,
    tap_b: &DVector<f64>,
    atoms: &DMatrix<f64>,
    p: usize,
    refit: bool,
) -> (f64, f64) {
    let normalize = |v: &DVector<f64>| {
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            v.clone()
        }
    };
    let a = normalize(tap_a);
    let b = normalize(tap_b);
    let mut r_a = a.clone();
    let mut r_b = b.clone();
    let mut selected = Vec::with_capacity(p);
    for _ in 0..p {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (k, g) in atoms.column_iter().enumerate() {
            let score = g.dot(&r_a).abs() + g.dot(&r_b).abs();
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        selected.push(best);
        let g = atoms.column(best);
        let w_a = g.dot(&r_a);
        let w_b = g.dot(&r_b);
        r_a -= g * w_a;
        r_b -= g * w_b;
    }
    if refit {
        selected.sort_unstable();
        selected.dedup();
        let sub = DMatrix::from_fn(atoms.nrows(), selected.len(), |i, j| {
            atoms[(i, selected[j])]
        });
        let svd = sub.svd(true, true);
        let refit_residual = |target: &DVector<f64>| -> f64 {
            match svd.solve(target, 1e-12) {
                Ok(coeffs) => {
                    let sub = DMatrix::from_fn(atoms.nrows(), selected.len(), |i, j| {
                        atoms[(i, selected[j])]
                    });
                    (target - sub * coeffs).norm_squared()
                }
                Err(_) => target.norm_squared(),
            }
        };
        return (refit_residual(&a), refit_residual(&b));
    }
    (r_a.norm_squared(), r_b.norm_squared())
}

/// JOMP confidence at column `index`: `1 / (1 + (r²₋ + r²₊)/2)` where the
/// residuals come from jointly reconstructing the unit-normalized columns at
/// `index ± ell` with `p` shared atoms.
pub fn jomp_confidence(
    data: &DMatrix<f64>,
    index: usize,
    ell: usize,
    p: usize,
    atoms: &DMatrix<f64>,
) -> Result<f64> {
    jomp_confidence_with(
        data,
        index,
        &JompParams {
            ell,
            p,
            refit: false,
        },
        atoms,
    )
}

/// [`jomp_confidence`] with full parameters.
pub fn jomp_confidence_with(
    data: &DMatrix<f64>,
    index: usize,
    params: &JompParams,
    atoms: &DMatrix<f64>,
) -> Result<f64> {
    let n = data.ncols();
    if index < params.ell || index + params.ell >= n {
        return Err(Error::invalid(
            "jomp taps",
            format!(
                "index {index} with ell {} is out of range for {n} positions",
                params.ell
            ),
        ));
    }
    if params.p == 0 || params.p > atoms.ncols() {
        return Err(Error::invalid(
            "jomp order",
            format!("need 1 <= p <= {} atoms", atoms.ncols()),
        ));
    }
    let tap_a = data.column(index - params.ell).into_owned();
    let tap_b = data.column(index + params.ell).into_owned();
    let (r2_a, r2_b) = joint_pursuit(&tap_a, &tap_b, atoms, params.p, params.refit);
    Ok(1.0 / (1.0 + 0.5 * (r2_a + r2_b)))
}

/// Which GLRT statistic to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlrtKind {
    Smf,
    Ace,
}

/// Maximum statistic over explicit atom columns.
pub fn max_statistic_over_atoms(
    x: &DVector<f64>,
    atoms: &DMatrix<f64>,
    bg: &BackgroundModel,
    kind: GlrtKind,
) -> Result<f64> {
    if atoms.ncols() == 0 {
        return Err(Error::invalid("dictionary", "no atoms"));
    }
    let mut best = f64::NEG_INFINITY;
    for g in atoms.column_iter() {
        let s = g.into_owned();
        let value = match kind {
            GlrtKind::Smf => smf(x, &s, bg)?,
            GlrtKind::Ace => ace(x, &s, bg)?,
        };
        best = best.max(value);
    }
    Ok(best)
}

/// Maximum SMF or ACE statistic across all dictionary atoms.
pub fn dict_max_statistic(
    x: &DVector<f64>,
    dict: &DsrfDictionary,
    bg: &BackgroundModel,
    kind: GlrtKind,
) -> Result<f64> {
    max_statistic_over_atoms(x, dict.atoms_real(), bg, kind)
}

/// Detector families producing confidence maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Magnitude,
    Smf,
    Ace,
    Jomp,
    MiSmf,
    MiAce,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 6] = [
        StatisticKind::Magnitude,
        StatisticKind::Smf,
        StatisticKind::Ace,
        StatisticKind::Jomp,
        StatisticKind::MiSmf,
        StatisticKind::MiAce,
    ];

    /// Kinds that need a trained signature model.
    pub fn is_trained(self) -> bool {
        matches!(self, StatisticKind::MiSmf | StatisticKind::MiAce)
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StatisticKind::Magnitude => "magnitude",
            StatisticKind::Smf => "smf",
            StatisticKind::Ace => "ace",
            StatisticKind::Jomp => "jomp",
            StatisticKind::MiSmf => "mi_smf",
            StatisticKind::MiAce => "mi_ace",
        };
        f.write_str(s)
    }
}

impl FromStr for StatisticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "magnitude" => Ok(StatisticKind::Magnitude),
            "smf" => Ok(StatisticKind::Smf),
            "ace" => Ok(StatisticKind::Ace),
            "jomp" => Ok(StatisticKind::Jomp),
            "mi_smf" | "mi-smf" => Ok(StatisticKind::MiSmf),
            "mi_ace" | "mi-ace" => Ok(StatisticKind::MiAce),
            other => Err(Error::parse(
                "statistic kind",
                format!("unknown detector {other:?}"),
            )),
        }
    }
}

/// Per-position detector beliefs over a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub positions: Vec<Position>,
    pub confidences: Vec<f64>,
    pub statistic_kind: StatisticKind,
    /// Marks positions whose statistic was degenerate (e.g. ACE at `x = μ`).
    pub degenerate: Vec<bool>,
}

impl ConfidenceMap {
    pub fn new(
        positions: Vec<Position>,
        confidences: Vec<f64>,
        statistic_kind: StatisticKind,
    ) -> Result<Self> {
        if positions.len() != confidences.len() {
            return Err(Error::dims(format!(
                "{} positions vs {} confidences",
                positions.len(),
                confidences.len()
            )));
        }
        let n = positions.len();
        Ok(ConfidenceMap {
            positions,
            confidences,
            statistic_kind,
            degenerate: vec![false; n],
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn save_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "easting,northing,confidence")?;
        for (p, c) in self.positions.iter().zip(&self.confidences) {
            writeln!(sink, "{},{},{}", p[0], p[1], c)?;
        }
        Ok(())
    }

    pub fn load_csv<R: Read>(source: R, kind: StatisticKind) -> Result<ConfidenceMap> {
        let reader = BufReader::new(source);
        let mut positions = Vec::new();
        let mut confidences = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || line_no == 0 {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    format!("line {}", line_no + 1),
                    format!("expected 3 fields, got {}", fields.len()),
                ));
            }
            let parse = |idx: usize| -> Result<f64> {
                fields[idx].trim().parse().map_err(|e| {
                    Error::parse(format!("line {}, col {}", line_no + 1, idx + 1), e)
                })
            };
            positions.push([parse(0)?, parse(1)?]);
            confidences.push(parse(2)?);
        }
        ConfidenceMap::new(positions, confidences, kind)
    }
}

/// Sidecar metadata written alongside confidence-map CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub statistic_kind: StatisticKind,
    pub config_hash: u64,
    pub n_points: usize,
}

/// Column-space preprocessing applied before a detector runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    /// Downtrack DCT filtering only.
    Dct,
    /// Downtrack DCT filtering followed by projection onto the
    /// signal-orthogonal-to-soil block.
    DctSoilProjection,
}

/// Preprocessing configuration shared by all detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub mode: PreprocessMode,
    /// Explicit kept cosine indices; `None` selects the default mid band.
    pub kept_band: Option<Vec<usize>>,
    pub mean_subtraction: MeanSubtraction,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            mode: PreprocessMode::Dct,
            kept_band: None,
            mean_subtraction: MeanSubtraction::RealRowsOnly,
        }
    }
}

/// Apply the configured preprocessing to a sweep.
///
/// Returns per-position coordinates and the matrix whose columns are the
/// detector input vectors (2K rows for DCT-only, the soil-projector signal
/// rank for projection mode).
pub fn preprocess_sweep(
    sweep: &ComplexSweep,
    config: &PreprocessConfig,
    soil: Option<&SoilProjector>,
) -> Result<(Vec<Position>, DMatrix<f64>)> {
    let real = stack_real(sweep);
    let n = real.n_positions();
    let band = match &config.kept_band {
        Some(band) => band.clone(),
        None => default_kept_band(n),
    };
    let proj = make_downtrack_projector(n, &band)?;
    let filtered = apply_downtrack_with(&real, &proj, config.mean_subtraction)?;
    let positions = filtered.path().positions().to_vec();
    let columns = match config.mode {
        PreprocessMode::Dct => filtered.data().clone(),
        PreprocessMode::DctSoilProjection => {
            let soil = soil.ok_or(Error::MissingPrerequisite(
                "soil projector (required for soil projection preprocessing)",
            ))?;
            soil.project_signal(filtered.data())?
        }
    };
    Ok((positions, columns))
}

/// Transform dictionary atoms into the preprocessed detection space.
///
/// In projection mode atoms are projected onto the signal block and
/// re-normalized; atoms that vanish there are dropped.
pub fn detection_atoms(
    dict: &DsrfDictionary,
    config: &PreprocessConfig,
    soil: Option<&SoilProjector>,
) -> Result<DMatrix<f64>> {
    match config.mode {
        PreprocessMode::Dct => Ok(dict.atoms_real().clone()),
        PreprocessMode::DctSoilProjection => {
            let soil = soil.ok_or(Error::MissingPrerequisite(
                "soil projector (required for soil projection preprocessing)",
            ))?;
            let projected = soil.project_signal(dict.atoms_real())?;
            let mut kept: Vec<DVector<f64>> = Vec::new();
            for col in projected.column_iter() {
                let norm = col.norm();
                if norm > 1e-8 {
                    kept.push(col.into_owned() / norm);
                }
            }
            if kept.is_empty() {
                return Err(Error::Numerical(
                    "no dictionary atom survives the soil projection".into(),
                ));
            }
            let mut atoms = DMatrix::zeros(projected.nrows(), kept.len());
            for (j, col) in kept.iter().enumerate() {
                atoms.set_column(j, col);
            }
            Ok(atoms)
        }
    }
}

/// A fully configured untrained prescreener.
///
/// Construction validates that every prerequisite of the chosen statistic is
/// present; `run` then maps any sweep to a per-position confidence map.
#[derive(Debug, Clone)]
pub struct Prescreener {
    kind: StatisticKind,
    preprocess: PreprocessConfig,
    soil: Option<SoilProjector>,
    atoms: Option<DMatrix<f64>>,
    background: Option<BackgroundModel>,
    jomp: JompParams,
}

impl Prescreener {
    pub fn new(
        kind: StatisticKind,
        preprocess: PreprocessConfig,
        soil: Option<SoilProjector>,
        dictionary: Option<&DsrfDictionary>,
        background: Option<BackgroundModel>,
        jomp: JompParams,
    ) -> Result<Self> {
        if kind.is_trained() {
            return Err(Error::invalid(
                "prescreener kind",
                format!("{kind} requires a trained model; score it through the training module"),
            ));
        }
        if preprocess.mode == PreprocessMode::DctSoilProjection && soil.is_none() {
            return Err(Error::MissingPrerequisite("soil projector"));
        }
        let needs_dict = matches!(
            kind,
            StatisticKind::Smf | StatisticKind::Ace | StatisticKind::Jomp
        );
        let atoms = if needs_dict {
            let dict = dictionary.ok_or(Error::MissingPrerequisite("dsrf dictionary"))?;
            Some(detection_atoms(dict, &preprocess, soil.as_ref())?)
        } else {
            None
        };
        let needs_bg = matches!(kind, StatisticKind::Smf | StatisticKind::Ace);
        if needs_bg && background.is_none() {
            return Err(Error::MissingPrerequisite("background model"));
        }
        Ok(Prescreener {
            kind,
            preprocess,
            soil,
            atoms,
            background,
            jomp,
        })
    }

    pub fn kind(&self) -> StatisticKind {
        self.kind
    }

    /// Preprocess a sweep with this prescreener's configuration.
    pub fn preprocess(&self, sweep: &ComplexSweep) -> Result<(Vec<Position>, DMatrix<f64>)> {
        preprocess_sweep(sweep, &self.preprocess, self.soil.as_ref())
    }

    /// Produce one confidence per position.
    pub fn run(&self, sweep: &ComplexSweep) -> Result<ConfidenceMap> {
        let (positions, columns) = self.preprocess(sweep)?;
        let n = columns.ncols();
        let mut confidences = Vec::with_capacity(n);
        let mut degenerate = vec![false; n];
        match self.kind {
            StatisticKind::Magnitude => {
                for col in columns.column_iter() {
                    confidences.push(col.norm());
                }
            }
            StatisticKind::Smf | StatisticKind::Ace => {
                let bg = self.background.as_ref().expect("validated at construction");
                let atoms = self.atoms.as_ref().expect("validated at construction");
                if bg.dim() != columns.nrows() {
                    return Err(Error::dims(format!(
                        "background dimension {} does not match preprocessed dimension {}",
                        bg.dim(),
                        columns.nrows()
                    )));
                }
                let kind = if self.kind == StatisticKind::Smf {
                    GlrtKind::Smf
                } else {
                    GlrtKind::Ace
                };
                for (j, col) in columns.column_iter().enumerate() {
                    let x = col.into_owned();
                    if kind == GlrtKind::Ace && bg.whiten(&x)?.norm() == 0.0 {
                        degenerate[j] = true;
                        confidences.push(0.0);
                        continue;
                    }
                    confidences.push(max_statistic_over_atoms(&x, atoms, bg, kind)?);
                }
            }
            StatisticKind::Jomp => {
                let atoms = self.atoms.as_ref().expect("validated at construction");
                let ell = self.jomp.ell;
                if n < 2 * ell + 1 {
                    return Err(Error::invalid(
                        "jomp sweep",
                        format!("need at least {} positions, got {n}", 2 * ell + 1),
                    ));
                }
                for i in 0..n {
                    // Edge positions fall back to the nearest valid tap pair.
                    let center = i.clamp(ell, n - 1 - ell);
                    confidences.push(jomp_confidence_with(&columns, center, &self.jomp, atoms)?);
                }
            }
            StatisticKind::MiSmf | StatisticKind::MiAce => unreachable!("rejected in new()"),
        }
        Ok(ConfidenceMap {
            positions,
            confidences,
            statistic_kind: self.kind,
            degenerate,
        })
    }
}
