//! Synthetic sweep generation with exact ground truth.
//!
//! Sweeps are drawn from the four-component measurement model: target
//! response, soil interference, sensor self-response, and additive Gaussian
//! noise. Target responses are mixtures of dictionary atoms with a Gaussian
//! spatial footprint; soil follows the two-column frequency basis with
//! per-position strengths.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsrf::dsrf_atom;
use crate::error::{Error, Result};
use crate::measurement::{distance, ComplexSweep, FrequencyGrid, Position, SweepPath};
use crate::seeding::stage_rng;

/// Default ground-truth halo radius in meters.
pub const DEFAULT_HALO_M: f64 = 0.25;

/// Target metal-content classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    /// Metal target.
    Mt,
    /// Low-metal target.
    Lmt,
    /// Non-metal target.
    Nmt,
    /// Clutter; never part of the positive truth set.
    Cl,
}

impl TargetClass {
    /// Conventional amplitude multiplier relative to a base response unit:
    /// metal 10×, low-metal 1×, non-metal 0.1×. Clutter uses the low-metal
    /// scale by default.
    pub fn amplitude_factor(self) -> f64 {
        match self {
            TargetClass::Mt => 10.0,
            TargetClass::Lmt => 1.0,
            TargetClass::Nmt => 0.1,
            TargetClass::Cl => 1.0,
        }
    }

    /// Scoreable classes can be matched by alarms; clutter cannot.
    pub fn is_scoreable(self) -> bool {
        self != TargetClass::Cl
    }
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TargetClass::Mt => "MT",
            TargetClass::Lmt => "LMT",
            TargetClass::Nmt => "NMT",
            TargetClass::Cl => "CL",
        };
        f.write_str(s)
    }
}

impl FromStr for TargetClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MT" => Ok(TargetClass::Mt),
            "LMT" => Ok(TargetClass::Lmt),
            "NMT" => Ok(TargetClass::Nmt),
            "CL" => Ok(TargetClass::Cl),
            other => Err(Error::parse("target class", format!("unknown class {other:?}"))),
        }
    }
}

/// One buried object: a mixture of relaxation-frequency responses with a
/// Gaussian spatial footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub center: Position,
    pub class: TargetClass,
    /// Relaxation frequencies of the response mixture (rad/s).
    pub zetas: Vec<f64>,
    /// Real mixing coefficient per ζ.
    pub mix_weights: Vec<f64>,
    /// Peak response amplitude (sensor units), > 0.
    pub amplitude: f64,
    /// Gaussian footprint radius (m), > 0.
    pub spatial_sigma: f64,
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.zetas.is_empty() || self.zetas.len() != self.mix_weights.len() {
            return Err(Error::invalid(
                "target spec",
                format!(
                    "{} zetas vs {} mix weights (need equal, >= 1)",
                    self.zetas.len(),
                    self.mix_weights.len()
                ),
            ));
        }
        if self.zetas.iter().any(|&z| !(z > 0.0) || !z.is_finite()) {
            return Err(Error::invalid("target spec", "zetas must be positive and finite"));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::invalid("target spec", "amplitude must be > 0"));
        }
        if !(self.spatial_sigma > 0.0) {
            return Err(Error::invalid("target spec", "spatial_sigma must be > 0"));
        }
        Ok(())
    }
}

/// Per-position soil strength generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SoilTrack {
    Constant { value: f64 },
    LinearDrift { start: f64, end: f64 },
    /// Gaussian random walk smoothed with a short moving average.
    RandomWalk { sigma_step: f64 },
}

impl SoilTrack {
    fn generate<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            SoilTrack::Constant { value } => vec![value; n],
            SoilTrack::LinearDrift { start, end } => (0..n)
                .map(|j| {
                    if n == 1 {
                        start
                    } else {
                        start + (end - start) * j as f64 / (n - 1) as f64
                    }
                })
                .collect(),
            SoilTrack::RandomWalk { sigma_step } => {
                let normal = Normal::new(0.0, sigma_step.abs()).expect("finite sigma");
                let mut walk = Vec::with_capacity(n);
                let mut acc = 0.0;
                for _ in 0..n {
                    acc += normal.sample(rng);
                    walk.push(acc);
                }
                moving_average(&walk, 5)
            }
        }
    }

    fn is_zero(&self) -> bool {
        matches!(
            *self,
            SoilTrack::Constant { value } if value == 0.0
        )
    }
}

fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Soil strengths ξ₁ (DC column) and ξ₂ (log-frequency column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoilSpec {
    pub xi1: SoilTrack,
    pub xi2: SoilTrack,
}

impl SoilSpec {
    pub fn zero() -> Self {
        SoilSpec {
            xi1: SoilTrack::Constant { value: 0.0 },
            xi2: SoilTrack::Constant { value: 0.0 },
        }
    }
}

mod complex_pairs {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Complex64>, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect())
    }
}

fn default_halo() -> f64 {
    DEFAULT_HALO_M
}

/// Full description of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub grid: FrequencyGrid,
    pub targets: Vec<TargetSpec>,
    pub soil: SoilSpec,
    /// Sensor self-response, one complex value per frequency, stored as
    /// `[re, im]` pairs; constant in position.
    #[serde(with = "complex_pairs")]
    pub self_response: Vec<Complex64>,
    /// Per-component standard deviation of the additive complex noise.
    pub noise_sigma: f64,
    /// Root of all per-component random streams; pipeline drivers usually
    /// derive this from a global seed.
    #[serde(default)]
    pub rng_seed: u64,
    /// Ground-truth halo radius applied to every target.
    #[serde(default = "default_halo")]
    pub halo_m: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.self_response.len() != self.grid.k() {
            return Err(Error::invalid(
                "scene spec",
                format!(
                    "self_response has {} entries for K={} frequencies",
                    self.self_response.len(),
                    self.grid.k()
                ),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("scene spec", "noise_sigma must be finite and >= 0"));
        }
        if !(self.halo_m > 0.0) {
            return Err(Error::invalid("scene spec", "halo_m must be > 0"));
        }
        for t in &self.targets {
            t.validate()?;
        }
        Ok(())
    }

    /// Copy of this scene with no targets, for blank collections.
    pub fn without_targets(&self) -> SceneSpec {
        SceneSpec {
            targets: Vec::new(),
            ..self.clone()
        }
    }
}

/// One ground-truth record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub position: Position,
    pub class: TargetClass,
    pub halo_m: f64,
}

/// Truth table for a scene: target positions, classes, and halo radii.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthTable {
    pub entries: Vec<TruthEntry>,
}

impl GroundTruthTable {
    pub fn new(entries: Vec<TruthEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !(e.halo_m > 0.0) {
                return Err(Error::invalid(
                    "ground truth",
                    format!("entry {i} has non-positive halo"),
                ));
            }
        }
        Ok(GroundTruthTable { entries })
    }

    /// Entries restricted to the given classes.
    pub fn subset(&self, classes: &[TargetClass]) -> GroundTruthTable {
        GroundTruthTable {
            entries: self
                .entries
                .iter()
                .filter(|e| classes.contains(&e.class))
                .cloned()
                .collect(),
        }
    }

    /// Count of scoreable (non-clutter) targets.
    pub fn n_scoreable(&self) -> usize {
        self.entries.iter().filter(|e| e.class.is_scoreable()).count()
    }

    /// Merge several tables into one.
    pub fn merged<'a>(tables: impl IntoIterator<Item = &'a GroundTruthTable>) -> GroundTruthTable {
        GroundTruthTable {
            entries: tables.into_iter().flat_map(|t| t.entries.clone()).collect(),
        }
    }

    pub fn save_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "easting,northing,class,halo_m")?;
        for e in &self.entries {
            writeln!(
                sink,
                "{},{},{},{}",
                e.position[0], e.position[1], e.class, e.halo_m
            )?;
        }
        Ok(())
    }

    pub fn load_csv<R: Read>(source: R) -> Result<GroundTruthTable> {
        let reader = BufReader::new(source);
        let mut entries = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || line_no == 0 {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    format!("line {}", line_no + 1),
                    format!("expected 4 fields, got {}", fields.len()),
                ));
            }
            let parse = |idx: usize| -> Result<f64> {
                fields[idx].trim().parse().map_err(|e| {
                    Error::parse(format!("line {}, col {}", line_no + 1, idx + 1), e)
                })
            };
            entries.push(TruthEntry {
                position: [parse(0)?, parse(1)?],
                class: fields[2].parse()?,
                halo_m: parse(3)?,
            });
        }
        GroundTruthTable::new(entries)
    }
}

/// Axis-aligned survey rectangle (meters, UTM).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min_easting: f64,
    pub min_northing: f64,
    pub max_easting: f64,
    pub max_northing: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max_easting - self.min_easting
    }

    pub fn height(&self) -> f64 {
        self.max_northing - self.min_northing
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Position) -> bool {
        p[0] >= self.min_easting
            && p[0] <= self.max_easting
            && p[1] >= self.min_northing
            && p[1] <= self.max_northing
    }

    fn validate(&self) -> Result<()> {
        if !(self.width() > 0.0) || !(self.height() > 0.0) {
            return Err(Error::invalid(
                "rectangle",
                format!("degenerate extent {} x {}", self.width(), self.height()),
            ));
        }
        Ok(())
    }
}

/// Serpentine sinusoidal sweep over a rectangle.
///
/// The sensor advances along easting while oscillating over the full northing
/// extent; `spacing` is the easting advance per half oscillation and `step`
/// bounds the distance between consecutive points.
pub fn sinusoidal_path(grid_extent: &Rect, spacing: f64, step: f64) -> Result<SweepPath> {
    grid_extent.validate()?;
    if !(spacing > 0.0) || !(step > 0.0) {
        return Err(Error::invalid(
            "path parameters",
            format!("spacing {spacing} and step {step} must be > 0"),
        ));
    }

    let width = grid_extent.width();
    let height = grid_extent.height();
    let y_at = |x: f64| {
        grid_extent.min_northing
            + height * 0.5 * (1.0 - (std::f64::consts::PI * x / spacing).cos())
    };

    // March x at a resolution fine enough that thinning to `step` cannot
    // overshoot: local arc speed is bounded by sqrt(1 + (H*pi/(2*spacing))^2).
    let max_slope = height * std::f64::consts::PI / (2.0 * spacing);
    let dx = (0.05 * step / (1.0 + max_slope)).min(width / 8.0);

    let mut points: Vec<Position> = vec![[grid_extent.min_easting, y_at(0.0)]];
    let mut since_emit = 0.0;
    let mut prev = points[0];
    let mut x = 0.0;
    while x < width {
        x = (x + dx).min(width);
        let cur = [grid_extent.min_easting + x, y_at(x)];
        since_emit += distance(prev, cur);
        prev = cur;
        if since_emit >= 0.9 * step || x >= width {
            points.push(cur);
            since_emit = 0.0;
        }
    }

    SweepPath::new(points)
}

/// Two-column soil frequency basis: all-ones and `log(ω/ω_c) + jπ/2`,
/// with ω_c the geometric mean of the grid.
pub fn soil_basis(grid: &FrequencyGrid) -> DMatrix<Complex64> {
    let omega_c = grid.geometric_mean();
    DMatrix::from_fn(grid.k(), 2, |i, j| {
        if j == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(
                (grid.omegas()[i] / omega_c).ln(),
                std::f64::consts::FRAC_PI_2,
            )
        }
    })
}

/// Unnormalized complex response of one target: `Σ_k w_k · a(ω, ζ_k)`.
fn target_response(grid: &FrequencyGrid, target: &TargetSpec) -> DVector<Complex64> {
    let mut resp = DVector::from_element(grid.k(), Complex64::new(0.0, 0.0));
    for (&zeta, &w) in target.zetas.iter().zip(&target.mix_weights) {
        resp += dsrf_atom(grid, zeta).map(|z| z * w);
    }
    resp
}

/// Generate a sweep from the four-component model plus its ground truth.
///
/// Deterministic given `(scene, path)`: all randomness derives from
/// `scene.rng_seed` through fixed per-component streams.
pub fn simulate(scene: &SceneSpec, path: &SweepPath) -> Result<(ComplexSweep, GroundTruthTable)> {
    scene.validate()?;
    let k = scene.grid.k();
    let n = path.len();
    let mut data = DMatrix::from_element(k, n, Complex64::new(0.0, 0.0));

    // Target response S with Gaussian spatial falloff.
    for target in &scene.targets {
        let resp = target_response(&scene.grid, target);
        let two_sigma_sq = 2.0 * target.spatial_sigma * target.spatial_sigma;
        for (j, &p) in path.positions().iter().enumerate() {
            let d2 = (p[0] - target.center[0]).powi(2) + (p[1] - target.center[1]).powi(2);
            let w = target.amplitude * (-d2 / two_sigma_sq).exp();
            if w > 0.0 {
                for i in 0..k {
                    data[(i, j)] += resp[i] * w;
                }
            }
        }
    }

    // Soil interference G = Ψ̂ · Ξᵀ.
    if !(scene.soil.xi1.is_zero() && scene.soil.xi2.is_zero()) {
        let psi = soil_basis(&scene.grid);
        let xi1 = scene
            .soil
            .xi1
            .generate(n, &mut stage_rng(scene.rng_seed, "soil.xi1"));
        let xi2 = scene
            .soil
            .xi2
            .generate(n, &mut stage_rng(scene.rng_seed, "soil.xi2"));
        for j in 0..n {
            for i in 0..k {
                data[(i, j)] += psi[(i, 0)] * xi1[j] + psi[(i, 1)] * xi2[j];
            }
        }
    }

    // Self-response R, constant across positions.
    for j in 0..n {
        for i in 0..k {
            data[(i, j)] += scene.self_response[i];
        }
    }

    // Additive complex noise, i.i.d. on real and imaginary parts.
    if scene.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, scene.noise_sigma).expect("finite sigma");
        let mut rng = stage_rng(scene.rng_seed, "noise");
        for j in 0..n {
            for i in 0..k {
                let re = normal.sample(&mut rng);
                let im = normal.sample(&mut rng);
                data[(i, j)] += Complex64::new(re, im);
            }
        }
    }

    let truth = GroundTruthTable::new(
        scene
            .targets
            .iter()
            .map(|t| TruthEntry {
                position: t.center,
                class: t.class,
                halo_m: scene.halo_m,
            })
            .collect(),
    )?;

    let sweep = ComplexSweep::new(scene.grid.clone(), path.clone(), data)?;
    Ok((sweep, truth))
}

/// Simulate a target-free scene for background estimation and training.
pub fn blank_collection(scene: &SceneSpec, path: &SweepPath) -> Result<ComplexSweep> {
    if !scene.targets.is_empty() {
        return Err(Error::invalid(
            "blank scene",
            format!("contains {} targets; blanks must be target-free", scene.targets.len()),
        ));
    }
    let (sweep, _) = simulate(scene, path)?;
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_grid() -> FrequencyGrid {
        FrequencyGrid::new(vec![0.33, 1.0, 3.0, 9.1]).unwrap()
    }

    fn base_scene() -> SceneSpec {
        SceneSpec {
            grid: test_grid(),
            targets: vec![],
            soil: SoilSpec::zero(),
            self_response: vec![Complex64::new(0.0, 0.0); 4],
            noise_sigma: 0.0,
            rng_seed: 11,
            halo_m: DEFAULT_HALO_M,
        }
    }

    fn line_path(n: usize, step: f64) -> SweepPath {
        SweepPath::new((0..n).map(|j| [j as f64 * step, 0.0]).collect()).unwrap()
    }

    #[test]
    fn sinusoidal_path_stays_inside_rectangle() {
        let rect = Rect {
            min_easting: 3.0,
            min_northing: -2.0,
            max_easting: 4.0,
            max_northing: -1.0,
        };
        let path = sinusoidal_path(&rect, 0.5, 0.1).unwrap();
        for &p in path.positions() {
            assert!(rect.contains(p), "point {p:?} escaped the rectangle");
        }
    }

    #[test]
    fn sinusoidal_path_respects_step() {
        let rect = Rect {
            min_easting: 0.0,
            min_northing: 0.0,
            max_easting: 1.0,
            max_northing: 1.0,
        };
        let step = 0.1;
        let path = sinusoidal_path(&rect, 0.5, step).unwrap();
        for w in path.positions().windows(2) {
            assert!(distance(w[0], w[1]) <= step + 1e-9);
        }
    }

    #[test]
    fn sinusoidal_path_length_lower_bound() {
        // 2 m of easting at 0.25 m spacing forces 8 full-height oscillations.
        let rect = Rect {
            min_easting: 0.0,
            min_northing: 0.0,
            max_easting: 2.0,
            max_northing: 1.0,
        };
        let path = sinusoidal_path(&rect, 0.25, 0.05).unwrap();
        let length: f64 = path
            .positions()
            .windows(2)
            .map(|w| distance(w[0], w[1]))
            .sum();
        assert!(length >= 8.0, "path length {length} below geometric bound");
    }

    #[test]
    fn degenerate_rectangle_rejected() {
        let rect = Rect {
            min_easting: 0.0,
            min_northing: 0.0,
            max_easting: 0.0,
            max_northing: 1.0,
        };
        assert!(sinusoidal_path(&rect, 0.5, 0.1).is_err());
    }

    #[test]
    fn soil_basis_closed_form() {
        let e = std::f64::consts::E;
        let grid = FrequencyGrid::new(vec![1.0, e * e]).unwrap();
        let psi = soil_basis(&grid);
        assert_eq!(psi[(0, 0)], Complex64::new(1.0, 0.0));
        assert!((psi[(0, 1)] - Complex64::new(-1.0, std::f64::consts::FRAC_PI_2)).norm() < 1e-12);
        assert!((psi[(1, 1)] - Complex64::new(1.0, std::f64::consts::FRAC_PI_2)).norm() < 1e-12);
    }

    #[test]
    fn soil_basis_real_parts_sum_to_zero() {
        let psi = soil_basis(&test_grid());
        let sum: f64 = (0..4).map(|i| psi[(i, 1)].re).sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn soil_basis_antisymmetric_on_log_spaced_grid() {
        let omegas: Vec<f64> = (0..5).map(|i| 2.0_f64.powi(i)).collect();
        let grid = FrequencyGrid::new(omegas).unwrap();
        let psi = soil_basis(&grid);
        for i in 0..5 {
            let a = psi[(i, 1)].re;
            let b = psi[(4 - i, 1)].re;
            assert!((a + b).abs() < 1e-12, "entries {i} and {} not antisymmetric", 4 - i);
        }
        assert!(psi[(2, 1)].re.abs() < 1e-12);
    }

    #[test]
    fn simulate_self_response_only() {
        let mut scene = base_scene();
        scene.self_response = vec![
            Complex64::new(1.0, -2.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(-3.0, 0.25),
            Complex64::new(0.0, 4.0),
        ];
        let path = line_path(7, 0.1);
        let (sweep, truth) = simulate(&scene, &path).unwrap();
        assert!(truth.entries.is_empty());
        for j in 0..7 {
            for i in 0..4 {
                assert_eq!(sweep.data()[(i, j)], scene.self_response[i]);
            }
        }
    }

    #[test]
    fn simulate_unit_soil_reproduces_first_basis_column() {
        let mut scene = base_scene();
        scene.soil = SoilSpec {
            xi1: SoilTrack::Constant { value: 1.0 },
            xi2: SoilTrack::Constant { value: 0.0 },
        };
        let path = line_path(5, 0.1);
        let (sweep, _) = simulate(&scene, &path).unwrap();
        let psi = soil_basis(&scene.grid);
        for j in 0..5 {
            for i in 0..4 {
                assert!((sweep.data()[(i, j)] - psi[(i, 0)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn simulate_target_column_at_center() {
        let mut scene = base_scene();
        let zeta = 2.0;
        scene.targets = vec![TargetSpec {
            center: [0.3, 0.0],
            class: TargetClass::Mt,
            zetas: vec![zeta],
            mix_weights: vec![1.0],
            amplitude: 2.0,
            spatial_sigma: 0.2,
        }];
        let path = line_path(7, 0.1); // position 3 sits exactly on the center
        let (sweep, truth) = simulate(&scene, &path).unwrap();
        assert_eq!(truth.entries.len(), 1);
        assert_eq!(truth.entries[0].class, TargetClass::Mt);
        for (i, &omega) in scene.grid.omegas().iter().enumerate() {
            // Direct evaluation of the atom formula.
            let expected = Complex64::new(0.0, omega / zeta) / Complex64::new(1.0, omega * zeta);
            assert!(
                (sweep.data()[(i, 3)] - expected * 2.0).norm() < 1e-12,
                "row {i} disagrees with 2 * atom"
            );
        }
    }

    #[test]
    fn blank_is_deterministic_and_rejects_targets() {
        let mut scene = base_scene();
        scene.noise_sigma = 0.5;
        scene.soil = SoilSpec {
            xi1: SoilTrack::RandomWalk { sigma_step: 0.1 },
            xi2: SoilTrack::Constant { value: 0.2 },
        };
        let path = line_path(20, 0.1);
        let a = blank_collection(&scene, &path).unwrap();
        let b = blank_collection(&scene, &path).unwrap();
        assert_eq!(a, b);

        let mut with_target = scene.clone();
        with_target.targets = vec![TargetSpec {
            center: [0.0, 0.0],
            class: TargetClass::Lmt,
            zetas: vec![1.0],
            mix_weights: vec![1.0],
            amplitude: 1.0,
            spatial_sigma: 0.1,
        }];
        assert!(blank_collection(&with_target, &path).is_err());
    }

    #[test]
    fn targeted_scene_differs_from_blank_only_near_targets() {
        let mut scene = base_scene();
        let sigma_s = 0.15;
        scene.targets = vec![TargetSpec {
            center: [1.0, 0.0],
            class: TargetClass::Mt,
            zetas: vec![1.5],
            mix_weights: vec![1.0],
            amplitude: 5.0,
            spatial_sigma: sigma_s,
        }];
        scene.soil = SoilSpec {
            xi1: SoilTrack::LinearDrift { start: 0.5, end: 1.5 },
            xi2: SoilTrack::Constant { value: 0.1 },
        };
        let path = line_path(40, 0.1);
        let (with_t, _) = simulate(&scene, &path).unwrap();
        let blank = blank_collection(&scene.without_targets(), &path).unwrap();
        for (j, &p) in path.positions().iter().enumerate() {
            let diff: f64 = (0..4)
                .map(|i| (with_t.data()[(i, j)] - blank.data()[(i, j)]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let d = distance(p, [1.0, 0.0]);
            if d > 3.0 * sigma_s {
                // Gaussian tail beyond 3 sigma: relative contribution < 1.2%.
                assert!(diff < 5.0 * (-4.5f64).exp(), "support leak at distance {d}");
            }
        }
    }

    #[test]
    fn superposition_of_target_sets() {
        let t1 = TargetSpec {
            center: [0.5, 0.0],
            class: TargetClass::Mt,
            zetas: vec![1.0, 4.0],
            mix_weights: vec![0.7, 0.3],
            amplitude: 3.0,
            spatial_sigma: 0.2,
        };
        let t2 = TargetSpec {
            center: [2.0, 0.0],
            class: TargetClass::Lmt,
            zetas: vec![2.0],
            mix_weights: vec![1.0],
            amplitude: 1.0,
            spatial_sigma: 0.3,
        };
        let mut scene = base_scene();
        scene.soil = SoilSpec {
            xi1: SoilTrack::RandomWalk { sigma_step: 0.2 },
            xi2: SoilTrack::LinearDrift { start: -0.1, end: 0.4 },
        };
        let path = line_path(30, 0.1);

        let run = |targets: Vec<TargetSpec>| {
            let mut s = scene.clone();
            s.targets = targets;
            simulate(&s, &path).unwrap().0
        };
        let both = run(vec![t1.clone(), t2.clone()]);
        let only2 = run(vec![t2.clone()]);
        let only1 = run(vec![t1.clone()]);
        let none = run(vec![]);

        for j in 0..30 {
            for i in 0..4 {
                let lhs = both.data()[(i, j)] - only2.data()[(i, j)];
                let rhs = only1.data()[(i, j)] - none.data()[(i, j)];
                assert!((lhs - rhs).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn simulate_is_bit_reproducible() {
        let mut scene = base_scene();
        scene.noise_sigma = 1.3;
        let path = line_path(25, 0.1);
        let (a, _) = simulate(&scene, &path).unwrap();
        let (b, _) = simulate(&scene, &path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let mut scene = base_scene();
        let sigma = 0.7;
        scene.noise_sigma = sigma;
        let path = line_path(25_000, 0.01);
        let (sweep, _) = simulate(&scene, &path).unwrap();
        // 4 x 25000 complex entries = 200k real components.
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for z in sweep.data().iter() {
            for v in [z.re, z.im] {
                sum += v;
                sum_sq += v * v;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = sum_sq / count - mean * mean;
        let rel = (var - sigma * sigma).abs() / (sigma * sigma);
        assert!(rel < 0.05, "noise variance off by {rel:.3}");
    }

    #[test]
    fn truth_table_round_trips_csv() {
        let table = GroundTruthTable::new(vec![
            TruthEntry {
                position: [1.25, -3.5],
                class: TargetClass::Mt,
                halo_m: 0.25,
            },
            TruthEntry {
                position: [4.0, 2.0],
                class: TargetClass::Cl,
                halo_m: 0.3,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        table.save_csv(&mut buf).unwrap();
        let back = GroundTruthTable::load_csv(buf.as_slice()).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.n_scoreable(), 1);
    }

    #[test]
    fn scene_spec_round_trips_json() {
        let mut scene = base_scene();
        scene.targets = vec![TargetSpec {
            center: [1.0, 2.0],
            class: TargetClass::Nmt,
            zetas: vec![0.5, 2.0],
            mix_weights: vec![0.5, 0.5],
            amplitude: 0.1,
            spatial_sigma: 0.2,
        }];
        scene.self_response = vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(3.0, 0.0),
            Complex64::new(-0.5, 0.5),
        ];
        let text = serde_json::to_string(&scene).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, scene);
    }
}
