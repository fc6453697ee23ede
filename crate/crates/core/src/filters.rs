//! Interference removal and feature extraction.
//!
//! Self-response is constant in position (a downtrack DC term) and is removed
//! by projecting each row of the sweep onto a band of mid-spatial DCT
//! frequencies. Soil interference lives in a two-column frequency subspace and
//! is removed by transforming the frequency axis into an orthonormal basis
//! split into signal-orthogonal-to-soil, noise-orthogonal-to-soil, and soil
//! blocks. Windowed SVD features summarize the doubly-projected data.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::dsrf::DsrfDictionary;
use crate::error::{Error, Result};
use crate::measurement::{stack_real_matrix, Position, RealSweep};

/// Orthonormal DCT-II basis matrix; column k is the k-th cosine vector and
/// column 0 is the constant (DC) vector.
pub fn dct_basis(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::invalid("dct size", "need n >= 2"));
    }
    let nf = n as f64;
    Ok(DMatrix::from_fn(n, n, |t, k| {
        let scale = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        scale * (std::f64::consts::PI * (2.0 * t as f64 + 1.0) * k as f64 / (2.0 * nf)).cos()
    }))
}

/// Default mid-frequency band: drop DC and the top half of the spectrum.
pub fn default_kept_band(n: usize) -> Vec<usize> {
    let hi = (n as f64 * 0.5).ceil() as usize;
    (1..=hi.min(n - 1)).collect()
}

/// Symmetric idempotent projector onto a band of downtrack cosine frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct DowntrackProjector {
    n: usize,
    kept_band: Vec<usize>,
    projector: DMatrix<f64>,
}

impl DowntrackProjector {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kept_band(&self) -> &[usize] {
        &self.kept_band
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }
}

/// Build the projector `D · I_S · Dᵀ` keeping the given cosine indices.
pub fn make_downtrack_projector(n: usize, kept_band: &[usize]) -> Result<DowntrackProjector> {
    if kept_band.is_empty() {
        return Err(Error::invalid("kept band", "empty frequency selection"));
    }
    let mut band: Vec<usize> = kept_band.to_vec();
    band.sort_unstable();
    band.dedup();
    if *band.last().unwrap() >= n {
        return Err(Error::invalid(
            "kept band",
            format!("index {} out of range for n = {n}", band.last().unwrap()),
        ));
    }
    let d = dct_basis(n)?;
    // P = sum over kept k of d_k d_kᵀ.
    let mut projector = DMatrix::zeros(n, n);
    for &k in &band {
        let col = d.column(k);
        projector += col * col.transpose();
    }
    Ok(DowntrackProjector {
        n,
        kept_band: band,
        projector,
    })
}

/// Downtrack projector with the default mid-frequency band for `n` positions.
pub fn default_downtrack_projector(n: usize) -> Result<DowntrackProjector> {
    make_downtrack_projector(n, &default_kept_band(n))
}

/// Which rows receive the post-filter mean subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSubtraction {
    /// Subtract each real-block row's across-position mean; imaginary rows
    /// are left unshifted.
    RealRowsOnly,
    /// Subtract the across-position mean from every row.
    AllRows,
}

/// Filter the sweep downtrack and subtract the real-component means.
pub fn apply_downtrack(sweep: &RealSweep, proj: &DowntrackProjector) -> Result<RealSweep> {
    apply_downtrack_with(sweep, proj, MeanSubtraction::RealRowsOnly)
}

/// [`apply_downtrack`] with an explicit mean-subtraction mode.
pub fn apply_downtrack_with(
    sweep: &RealSweep,
    proj: &DowntrackProjector,
    mean: MeanSubtraction,
) -> Result<RealSweep> {
    if proj.n != sweep.n_positions() {
        return Err(Error::dims(format!(
            "projector is for {} positions, sweep has {}",
            proj.n,
            sweep.n_positions()
        )));
    }
    let mut data = sweep.data() * &proj.projector;
    let rows_in_scope = match mean {
        MeanSubtraction::RealRowsOnly => sweep.m() / 2,
        MeanSubtraction::AllRows => sweep.m(),
    };
    let n = data.ncols() as f64;
    for i in 0..rows_in_scope {
        let mean_i = data.row(i).sum() / n;
        for j in 0..data.ncols() {
            data[(i, j)] -= mean_i;
        }
    }
    sweep.with_data(data)
}

/// Orthonormal frequency-axis transform separating soil from signal.
///
/// The 2K-dimensional feature space is split into three mutually orthonormal
/// column blocks: dictionary directions orthogonal to the soil subspace with
/// singular value at or above the threshold (signal), the remaining
/// soil-orthogonal directions (noise), and the soil subspace itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SoilProjector {
    psi_real: DMatrix<f64>,
    u_signal: DMatrix<f64>,
    u_noise: DMatrix<f64>,
    u_soil: DMatrix<f64>,
    snr_threshold: f64,
}

impl SoilProjector {
    /// Real-stacked soil basis Ψ ∈ R^{2K×2}.
    pub fn psi_real(&self) -> &DMatrix<f64> {
        &self.psi_real
    }

    /// Signal block: orthonormal basis of dictionary-reachable directions
    /// orthogonal to the soil subspace.
    pub fn u_signal(&self) -> &DMatrix<f64> {
        &self.u_signal
    }

    pub fn u_noise(&self) -> &DMatrix<f64> {
        &self.u_noise
    }

    pub fn u_soil(&self) -> &DMatrix<f64> {
        &self.u_soil
    }

    pub fn snr_threshold(&self) -> f64 {
        self.snr_threshold
    }

    /// Feature-space dimension 2K.
    pub fn dim(&self) -> usize {
        self.psi_real.nrows()
    }

    /// Rank of the retained signal block.
    pub fn signal_rank(&self) -> usize {
        self.u_signal.ncols()
    }

    /// Full orthonormal transform `[U_signal | U_noise | U_soil]`.
    pub fn stacked_basis(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut basis = DMatrix::zeros(m, m);
        let mut col = 0;
        for block in [&self.u_signal, &self.u_noise, &self.u_soil] {
            for c in block.column_iter() {
                basis.set_column(col, &c);
                col += 1;
            }
        }
        basis
    }

    /// Project columns into signal coordinates: `U_signalᵀ · m`.
    pub fn project_signal(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.dim() {
            return Err(Error::dims(format!(
                "data has {} rows, soil projector expects {}",
                m.nrows(),
                self.dim()
            )));
        }
        Ok(self.u_signal.transpose() * m)
    }

    /// Project a single column vector into signal coordinates.
    pub fn project_signal_vector(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::dims(format!(
                "vector has {} rows, soil projector expects {}",
                x.nrows(),
                self.dim()
            )));
        }
        Ok(self.u_signal.transpose() * x)
    }
}

/// Default SNR threshold factor: λ = 1e-6 × largest singular value of the
/// soil-orthogonal dictionary component.
pub const DEFAULT_LAMBDA_FACTOR: f64 = 1e-6;

/// Build the soil projector from the dictionary and the complex soil basis.
///
/// Computes the soil-subspace projector `P_GG = Ψ(ΨᵀΨ)⁻¹Ψᵀ`, splits the
/// dictionary into soil and soil-orthogonal parts, SVDs the orthogonal part,
/// and thresholds its singular values at `lambda` to separate signal from
/// noise directions.
pub fn make_soil_projector(
    dict: &DsrfDictionary,
    psi_hat: &DMatrix<Complex64>,
    lambda: f64,
) -> Result<SoilProjector> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("soil threshold", "lambda must be > 0"));
    }
    build_soil_projector(dict, psi_hat, |_| lambda)
}

/// [`make_soil_projector`] with `lambda = 1e-6 × σ_max`.
pub fn make_soil_projector_auto(
    dict: &DsrfDictionary,
    psi_hat: &DMatrix<Complex64>,
) -> Result<SoilProjector> {
    build_soil_projector(dict, psi_hat, |sigma_max| DEFAULT_LAMBDA_FACTOR * sigma_max)
}

fn build_soil_projector(
    dict: &DsrfDictionary,
    psi_hat: &DMatrix<Complex64>,
    lambda_of: impl Fn(f64) -> f64,
) -> Result<SoilProjector> {
    let psi_real = stack_real_matrix(psi_hat);
    let m = psi_real.nrows();
    if psi_real.ncols() != 2 {
        return Err(Error::dims(format!(
            "soil basis must have 2 columns, got {}",
            psi_real.ncols()
        )));
    }
    if dict.atoms_real().nrows() != m {
        return Err(Error::dims(format!(
            "dictionary atoms have {} rows, soil basis implies {}",
            dict.atoms_real().nrows(),
            m
        )));
    }

    // Orthonormal basis of the soil subspace via SVD of Ψ; also checks rank.
    let psi_svd = psi_real.clone().svd(true, false);
    let sv = &psi_svd.singular_values;
    if sv.len() < 2 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Numerical(
            "soil basis is rank-deficient after real stacking".into(),
        ));
    }
    let u_psi = psi_svd.u.expect("u requested");
    let u_soil = u_psi.columns(0, 2).into_owned();

    // Soil-orthogonal dictionary component (I - P_GG) A.
    let p_gg = &u_soil * u_soil.transpose();
    let a = dict.atoms_real();
    let b = a - &p_gg * a;

    let b_svd = b.svd(true, false);
    let sigma = &b_svd.singular_values;
    let sigma_max = if sigma.len() > 0 { sigma[0] } else { 0.0 };
    let lambda = lambda_of(sigma_max);
    if !(lambda > 0.0) {
        return Err(Error::invalid("soil threshold", "lambda must be > 0"));
    }
    let u_b = b_svd.u.expect("u requested");
    let signal_rank = (0..sigma.len()).take_while(|&i| sigma[i] >= lambda).count();
    let mut u_signal = u_b.columns(0, signal_rank).into_owned();
    if signal_rank > 0 {
        // Scrub cancellation noise: re-orthogonalize against the soil block
        // so annihilation holds at machine precision even when B is tiny
        // relative to A.
        u_signal -= &u_soil * (u_soil.transpose() * &u_signal);
        let qr = u_signal.qr();
        u_signal = qr.q();
    }

    // Noise block: orthonormal complement of [U_soil | U_signal].
    let known = signal_rank + 2;
    if known > m {
        return Err(Error::Numerical(
            "signal block larger than the soil-orthogonal complement".into(),
        ));
    }
    let mut q = DMatrix::zeros(m, known);
    for (i, c) in u_soil.column_iter().enumerate() {
        q.set_column(i, &c);
    }
    for (i, c) in u_signal.column_iter().enumerate() {
        q.set_column(2 + i, &c);
    }
    let complement = DMatrix::identity(m, m) - &q * q.transpose();
    let eig = SymmetricEigen::new(complement);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let noise_rank = m - known;
    let mut u_noise = DMatrix::zeros(m, noise_rank);
    for (c, &i) in order[..noise_rank].iter().enumerate() {
        if eig.eigenvalues[i] < 0.5 {
            return Err(Error::Numerical(
                "soil projector complement is rank-deficient".into(),
            ));
        }
        u_noise.set_column(c, &eig.eigenvectors.column(i));
    }

    Ok(SoilProjector {
        psi_real,
        u_signal,
        u_noise,
        u_soil,
        snr_threshold: lambda,
    })
}

/// Joint projection of one window: `P_GS · M_window · P_RMᵀ`.
///
/// The result lives in the signal-orthogonal-to-soil block with self-response
/// and high-frequency downtrack content removed.
pub fn apply_joint_projection(
    window: &DMatrix<f64>,
    soil: &SoilProjector,
    down: &DowntrackProjector,
) -> Result<DMatrix<f64>> {
    if down.n != window.ncols() {
        return Err(Error::dims(format!(
            "window has {} columns, downtrack projector expects {}",
            window.ncols(),
            down.n
        )));
    }
    // The projector is symmetric, so P_RMᵀ = P_RM.
    Ok(soil.project_signal(window)? * &down.projector)
}

/// Sliding-window geometry and feature size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    /// Window width in positions; odd, >= 3.
    pub width: usize,
    /// Center-to-center spacing in positions.
    pub stride: usize,
    /// Number of left singular vectors to keep.
    pub n_singular_vectors: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            width: 9,
            stride: 1,
            n_singular_vectors: 3,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.width % 2 == 0 {
            return Err(Error::invalid(
                "window spec",
                format!("width {} must be odd and >= 3", self.width),
            ));
        }
        if self.stride < 1 {
            return Err(Error::invalid("window spec", "stride must be >= 1"));
        }
        if self.n_singular_vectors < 1 {
            return Err(Error::invalid(
                "window spec",
                "need at least 1 singular vector",
            ));
        }
        Ok(())
    }

    pub fn half_width(&self) -> usize {
        (self.width - 1) / 2
    }
}

/// Singular-vector scaling law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScaling {
    /// Vector i scaled by `sqrt(σ_i / σ_1)`.
    SqrtRatio,
    /// Vector i scaled by `σ_i / σ_1`.
    Ratio,
}

/// Feature extracted from one projected window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFeature {
    /// Concatenated scaled left singular vectors.
    pub vector: DVector<f64>,
    /// Largest singular value of the projected window.
    pub leading_sigma: f64,
    /// Set when the window was all-zero and the feature is the zero vector.
    pub degenerate: bool,
}

/// Flip a vector so its largest-magnitude entry is positive.
fn canonicalize_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        *v *= -1.0;
    }
}

/// Scaled singular-vector feature of a projected window.
///
/// The first `n_singular_vectors` left singular vectors are concatenated,
/// vector i scaled by `sqrt(σ_i/σ_1)`; missing or zero singular values give
/// zero blocks. Output length is `n_singular_vectors × rows`.
pub fn svd_features(projected: &DMatrix<f64>, spec: &WindowSpec) -> WindowFeature {
    svd_features_with(projected, spec, FeatureScaling::SqrtRatio)
}

/// [`svd_features`] with an explicit scaling law.
pub fn svd_features_with(
    projected: &DMatrix<f64>,
    spec: &WindowSpec,
    scaling: FeatureScaling,
) -> WindowFeature {
    let rows = projected.nrows();
    let out_len = spec.n_singular_vectors * rows;
    if projected.norm() == 0.0 {
        return WindowFeature {
            vector: DVector::zeros(out_len),
            leading_sigma: 0.0,
            degenerate: true,
        };
    }
    let svd = projected.clone().svd(true, false);
    let sigma = &svd.singular_values;
    let u = svd.u.expect("u requested");
    let sigma_1 = sigma[0];
    let mut out = DVector::zeros(out_len);
    for i in 0..spec.n_singular_vectors {
        if i >= sigma.len() || sigma[i] <= 0.0 {
            continue; // zero block
        }
        let ratio = sigma[i] / sigma_1;
        let scale = match scaling {
            FeatureScaling::SqrtRatio => ratio.sqrt(),
            FeatureScaling::Ratio => ratio,
        };
        let mut vec = u.column(i).into_owned();
        canonicalize_sign(&mut vec);
        for r in 0..rows {
            out[i * rows + r] = scale * vec[r];
        }
    }
    WindowFeature {
        vector: out,
        leading_sigma: sigma_1,
        degenerate: false,
    }
}

/// Per-position feature vectors with their window-center coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub positions: Vec<Position>,
    pub features: Vec<DVector<f64>>,
    /// σ₁ of each projected window; zero when loaded from CSV.
    pub leading_sigmas: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl FeatureMap {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Feature dimension D.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    pub fn save_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        let d = self.dim();
        let mut header = String::from("easting,northing");
        for i in 1..=d {
            header.push_str(&format!(",f_{i}"));
        }
        writeln!(sink, "{header}")?;
        for (p, f) in self.positions.iter().zip(&self.features) {
            let mut row = format!("{},{}", p[0], p[1]);
            for v in f.iter() {
                row.push_str(&format!(",{v}"));
            }
            writeln!(sink, "{row}")?;
        }
        Ok(())
    }

    pub fn load_csv<R: Read>(source: R) -> Result<FeatureMap> {
        let reader = BufReader::new(source);
        let mut positions = Vec::new();
        let mut features: Vec<DVector<f64>> = Vec::new();
        let mut dim: Option<usize> = None;
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || line_no == 0 {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() < 3 {
                return Err(Error::parse(
                    format!("line {}", line_no + 1),
                    "expected easting,northing and at least one feature",
                ));
            }
            let d = fields.len() - 2;
            if *dim.get_or_insert(d) != d {
                return Err(Error::parse(
                    format!("line {}", line_no + 1),
                    format!("feature arity {d} differs from earlier rows"),
                ));
            }
            let mut values = Vec::with_capacity(fields.len());
            for (c, raw) in fields.iter().enumerate() {
                values.push(raw.trim().parse::<f64>().map_err(|e| {
                    Error::parse(format!("line {}, col {}", line_no + 1, c + 1), e)
                })?);
            }
            positions.push([values[0], values[1]]);
            features.push(DVector::from_vec(values[2..].to_vec()));
        }
        let degenerate = features.iter().map(|f| f.norm() == 0.0).collect();
        let n = positions.len();
        Ok(FeatureMap {
            positions,
            features,
            leading_sigmas: vec![0.0; n],
            degenerate,
        })
    }
}

/// Extract the window of `width` columns centered at `center`, mirroring the
/// sweep at its edges so the window is always full width.
pub fn padded_window(data: &DMatrix<f64>, center: usize, width: usize) -> DMatrix<f64> {
    let n = data.ncols() as isize;
    let half = (width as isize - 1) / 2;
    DMatrix::from_fn(data.nrows(), width, |r, c| {
        let mut t = center as isize - half + c as isize;
        if t < 0 {
            t = -t;
        }
        if t >= n {
            t = 2 * n - 2 - t;
        }
        data[(r, t.clamp(0, n - 1) as usize)]
    })
}

/// Windowed SVD features over a filtered sweep.
///
/// Window centers start at `half_width` and advance by `stride` while a full
/// in-bounds window fits; `down` must be built for `spec.width` positions.
pub fn sweep_to_features(
    sweep: &RealSweep,
    soil: &SoilProjector,
    down: &DowntrackProjector,
    spec: &WindowSpec,
) -> Result<FeatureMap> {
    spec.validate()?;
    let n = sweep.n_positions();
    if spec.width > n {
        return Err(Error::invalid(
            "window spec",
            format!("width {} exceeds sweep length {n}", spec.width),
        ));
    }
    let centers: Vec<usize> = (spec.half_width()..=n - 1 - spec.half_width())
        .step_by(spec.stride)
        .collect();
    features_at_centers(sweep, soil, down, spec, &centers)
}

/// One feature per sweep position, mirror-padding windows at the edges.
pub fn per_position_features(
    sweep: &RealSweep,
    soil: &SoilProjector,
    down: &DowntrackProjector,
    spec: &WindowSpec,
) -> Result<FeatureMap> {
    spec.validate()?;
    if spec.width > sweep.n_positions() {
        return Err(Error::invalid(
            "window spec",
            format!(
                "width {} exceeds sweep length {}",
                spec.width,
                sweep.n_positions()
            ),
        ));
    }
    let centers: Vec<usize> = (0..sweep.n_positions()).collect();
    features_at_centers(sweep, soil, down, spec, &centers)
}

fn features_at_centers(
    sweep: &RealSweep,
    soil: &SoilProjector,
    down: &DowntrackProjector,
    spec: &WindowSpec,
    centers: &[usize],
) -> Result<FeatureMap> {
    if down.n != spec.width {
        return Err(Error::dims(format!(
            "downtrack projector is for {} positions, window width is {}",
            down.n, spec.width
        )));
    }
    let mut positions = Vec::with_capacity(centers.len());
    let mut features = Vec::with_capacity(centers.len());
    let mut leading_sigmas = Vec::with_capacity(centers.len());
    let mut degenerate = Vec::with_capacity(centers.len());
    for &c in centers {
        let window = padded_window(sweep.data(), c, spec.width);
        let projected = apply_joint_projection(&window, soil, down)?;
        let feature = svd_features(&projected, spec);
        positions.push(sweep.path().positions()[c]);
        features.push(feature.vector);
        leading_sigmas.push(feature.leading_sigma);
        degenerate.push(feature.degenerate);
    }
    Ok(FeatureMap {
        positions,
        features,
        leading_sigmas,
        degenerate,
    })
}
