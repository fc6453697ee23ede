//! Measurement-matrix types, complex→real stacking, and sweep file I/O.
//!
//! A sweep records the sensor's complex phasor response at K operating
//! frequencies for each of N positions along the path. Columns are the unit of
//! interest throughout the crate: one column is one position's feature vector.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar UTM coordinate in meters: `[easting, northing]`.
pub type Position = [f64; 2];

/// Euclidean distance between two positions.
pub fn distance(a: Position, b: Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Ordered set of K operating angular frequencies (rad/s).
///
/// Strictly increasing, strictly positive, K ≥ 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.len() < 2 {
            return Err(Error::invalid("frequency grid", "fewer than 2 frequencies"));
        }
        for (i, &w) in omegas.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::invalid(
                    "frequency grid",
                    format!("omega[{i}] = {w} is not strictly positive and finite"),
                ));
            }
            if i > 0 && w <= omegas[i - 1] {
                return Err(Error::invalid(
                    "frequency grid",
                    format!("omega[{i}] = {w} does not increase past omega[{}]", i - 1),
                ));
            }
        }
        Ok(FrequencyGrid { omegas })
    }

    /// Number of operating frequencies K.
    pub fn k(&self) -> usize {
        self.omegas.len()
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn min_omega(&self) -> f64 {
        self.omegas[0]
    }

    pub fn max_omega(&self) -> f64 {
        *self.omegas.last().unwrap()
    }

    /// Geometric mean of the grid, the center frequency of the soil model.
    pub fn geometric_mean(&self) -> f64 {
        let mean_log = self.omegas.iter().map(|w| w.ln()).sum::<f64>() / self.omegas.len() as f64;
        mean_log.exp()
    }
}

impl TryFrom<Vec<f64>> for FrequencyGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FrequencyGrid::new(v)
    }
}

impl From<FrequencyGrid> for Vec<f64> {
    fn from(g: FrequencyGrid) -> Vec<f64> {
        g.omegas
    }
}

/// Ordered list of N ≥ 1 positions; spacing need not be uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Position>", into = "Vec<Position>")]
pub struct SweepPath {
    positions: Vec<Position>,
}

impl SweepPath {
    pub fn new(positions: Vec<Position>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("sweep path", "empty position list"));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::invalid(
                    "sweep path",
                    format!("position {i} = ({}, {}) is not finite", p[0], p[1]),
                ));
            }
        }
        Ok(SweepPath { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Axis-aligned bounding-box area, a proxy for swept area when scoring.
    pub fn bounding_box_area(&self) -> f64 {
        let (mut e0, mut e1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut n0, mut n1) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.positions {
            e0 = e0.min(p[0]);
            e1 = e1.max(p[0]);
            n0 = n0.min(p[1]);
            n1 = n1.max(p[1]);
        }
        (e1 - e0) * (n1 - n0)
    }
}

impl TryFrom<Vec<Position>> for SweepPath {
    type Error = Error;
    fn try_from(v: Vec<Position>) -> Result<Self> {
        SweepPath::new(v)
    }
}

impl From<SweepPath> for Vec<Position> {
    fn from(p: SweepPath) -> Vec<Position> {
        p.positions
    }
}

/// K×N complex measurement matrix with its grid and path.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSweep {
    grid: FrequencyGrid,
    path: SweepPath,
    data: DMatrix<Complex64>,
}

impl ComplexSweep {
    pub fn new(grid: FrequencyGrid, path: SweepPath, data: DMatrix<Complex64>) -> Result<Self> {
        if data.nrows() != grid.k() || data.ncols() != path.len() {
            return Err(Error::dims(format!(
                "sweep data is {}x{} but grid has K={} and path has N={}",
                data.nrows(),
                data.ncols(),
                grid.k(),
                path.len()
            )));
        }
        for j in 0..data.ncols() {
            for i in 0..data.nrows() {
                let z = data[(i, j)];
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::invalid(
                        "sweep data",
                        format!("non-finite entry at frequency row {i}, position column {j}"),
                    ));
                }
            }
        }
        Ok(ComplexSweep { grid, path, data })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn path(&self) -> &SweepPath {
        &self.path
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn n_positions(&self) -> usize {
        self.path.len()
    }
}

/// 2K×N real sweep: real block stacked above the imaginary block, grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSweep {
    grid: FrequencyGrid,
    path: SweepPath,
    data: DMatrix<f64>,
}

impl RealSweep {
    pub fn new(grid: FrequencyGrid, path: SweepPath, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != 2 * grid.k() || data.ncols() != path.len() {
            return Err(Error::dims(format!(
                "real sweep data is {}x{} but expected {}x{}",
                data.nrows(),
                data.ncols(),
                2 * grid.k(),
                path.len()
            )));
        }
        Ok(RealSweep { grid, path, data })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn path(&self) -> &SweepPath {
        &self.path
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Feature dimension M = 2K.
    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_positions(&self) -> usize {
        self.path.len()
    }

    /// Replace the data matrix, keeping grid and path (dimensions must agree).
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        RealSweep::new(self.grid.clone(), self.path.clone(), data)
    }
}

/// Stack a complex matrix into real form: `[Re(A); Im(A)]`.
pub fn stack_real_matrix(a: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (k, n) = (a.nrows(), a.ncols());
    DMatrix::from_fn(2 * k, n, |i, j| {
        if i < k {
            a[(i, j)].re
        } else {
            a[(i - k, j)].im
        }
    })
}

/// Inverse of [`stack_real_matrix`]; `a` must have an even row count.
pub fn unstack_matrix(a: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
    if a.nrows() % 2 != 0 {
        return Err(Error::dims(format!(
            "cannot unstack a matrix with {} (odd) rows",
            a.nrows()
        )));
    }
    let k = a.nrows() / 2;
    Ok(DMatrix::from_fn(k, a.ncols(), |i, j| {
        Complex64::new(a[(i, j)], a[(i + k, j)])
    }))
}

/// Concatenate real and imaginary parts into real feature vectors.
///
/// Column j of the result is `[Re(column j); Im(column j)]`.
pub fn stack_real(sweep: &ComplexSweep) -> RealSweep {
    RealSweep {
        grid: sweep.grid.clone(),
        path: sweep.path.clone(),
        data: stack_real_matrix(&sweep.data),
    }
}

/// Rebuild the complex sweep from its real-stacked form.
pub fn unstack(sweep: &RealSweep) -> ComplexSweep {
    ComplexSweep {
        grid: sweep.grid.clone(),
        path: sweep.path.clone(),
        data: unstack_matrix(&sweep.data).expect("real sweep rows are 2K by construction"),
    }
}

/// On-disk encodings for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct SweepJson {
    omegas_rad_s: Vec<f64>,
    positions: Vec<Position>,
    /// N arrays of K `[re, im]` pairs.
    data: Vec<Vec<[f64; 2]>>,
}

/// Read a sweep from a byte stream in the given format.
pub fn load_sweep<R: Read>(source: R, format: SweepFormat) -> Result<ComplexSweep> {
    match format {
        SweepFormat::Csv => load_sweep_csv(source),
        SweepFormat::Json => load_sweep_json(source),
    }
}

/// Write a sweep to a byte stream in the given format.
///
/// Values are written in shortest round-trip decimal form, so
/// `load_sweep(save_sweep(x))` reproduces the data bit for bit.
pub fn save_sweep<W: Write>(sweep: &ComplexSweep, sink: W, format: SweepFormat) -> Result<()> {
    match format {
        SweepFormat::Csv => save_sweep_csv(sweep, sink),
        SweepFormat::Json => save_sweep_json(sweep, sink),
    }
}

/// Load a sweep from a file, inferring the format from the extension.
pub fn load_sweep_file(path: &Path) -> Result<ComplexSweep> {
    let format = format_for_path(path)?;
    let file = std::fs::File::open(path)?;
    load_sweep(BufReader::new(file), format)
}

/// Save a sweep to a file, inferring the format from the extension.
pub fn save_sweep_file(sweep: &ComplexSweep, path: &Path) -> Result<()> {
    let format = format_for_path(path)?;
    let file = std::fs::File::create(path)?;
    save_sweep(sweep, file, format)
}

fn format_for_path(path: &Path) -> Result<SweepFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(SweepFormat::Csv),
        Some("json") => Ok(SweepFormat::Json),
        other => Err(Error::invalid(
            "sweep path",
            format!("unsupported extension {other:?} (expected csv or json)"),
        )),
    }
}

fn parse_field(raw: &str, location: impl std::fmt::Display) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|e| Error::parse(&location, format!("{e} in {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(&location, format!("non-finite value {raw:?}")));
    }
    Ok(v)
}

fn load_sweep_csv<R: Read>(source: R) -> Result<ComplexSweep> {
    let reader = BufReader::new(source);
    let mut omegas: Option<Vec<f64>> = None;
    let mut saw_header = false;
    let mut positions: Vec<Position> = Vec::new();
    let mut columns: Vec<Vec<Complex64>> = Vec::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(vals) = rest.strip_prefix("omegas_rad_s:") {
                let parsed: Result<Vec<f64>> = vals
                    .split(',')
                    .map(|v| parse_field(v, format!("line {}, omegas", line_no + 1)))
                    .collect();
                omegas = Some(parsed?);
            }
            continue;
        }
        if !saw_header {
            // Column header line; validated implicitly through the arity check.
            if !trimmed.starts_with("easting") {
                return Err(Error::parse(
                    format!("line {}", line_no + 1),
                    "expected header line starting with 'easting'",
                ));
            }
            saw_header = true;
            continue;
        }
        let omegas_ref = omegas.as_ref().ok_or_else(|| {
            Error::parse(
                format!("line {}", line_no + 1),
                "data row before '# omegas_rad_s:' header block",
            )
        })?;
        let k = omegas_ref.len();
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 2 + 2 * k {
            return Err(Error::parse(
                format!("line {}", line_no + 1),
                format!("row has {} fields, expected {}", fields.len(), 2 + 2 * k),
            ));
        }
        let e = parse_field(fields[0], format!("line {}, col 1", line_no + 1))?;
        let n = parse_field(fields[1], format!("line {}, col 2", line_no + 1))?;
        let mut col = Vec::with_capacity(k);
        for i in 0..k {
            let re = parse_field(
                fields[2 + 2 * i],
                format!("line {}, col {}", line_no + 1, 3 + 2 * i),
            )?;
            let im = parse_field(
                fields[3 + 2 * i],
                format!("line {}, col {}", line_no + 1, 4 + 2 * i),
            )?;
            col.push(Complex64::new(re, im));
        }
        positions.push([e, n]);
        columns.push(col);
    }

    let omegas = omegas.ok_or_else(|| Error::parse("csv", "missing '# omegas_rad_s:' block"))?;
    let grid = FrequencyGrid::new(omegas)?;
    let path = SweepPath::new(positions)?;
    let k = grid.k();
    let n = path.len();
    let data = DMatrix::from_fn(k, n, |i, j| columns[j][i]);
    ComplexSweep::new(grid, path, data)
}

fn save_sweep_csv<W: Write>(sweep: &ComplexSweep, mut sink: W) -> Result<()> {
    let omegas: Vec<String> = sweep.grid.omegas().iter().map(|w| w.to_string()).collect();
    writeln!(sink, "# omegas_rad_s: {}", omegas.join(","))?;
    let mut header = String::from("easting,northing");
    for i in 1..=sweep.grid.k() {
        header.push_str(&format!(",re_{i},im_{i}"));
    }
    writeln!(sink, "{header}")?;
    for (j, p) in sweep.path.positions().iter().enumerate() {
        let mut row = format!("{},{}", p[0], p[1]);
        for i in 0..sweep.grid.k() {
            let z = sweep.data[(i, j)];
            row.push_str(&format!(",{},{}", z.re, z.im));
        }
        writeln!(sink, "{row}")?;
    }
    Ok(())
}

fn load_sweep_json<R: Read>(source: R) -> Result<ComplexSweep> {
    let raw: SweepJson = serde_json::from_reader(source)?;
    let grid = FrequencyGrid::new(raw.omegas_rad_s)?;
    let path = SweepPath::new(raw.positions)?;
    if raw.data.len() != path.len() {
        return Err(Error::parse(
            "json data",
            format!(
                "{} data entries for {} positions",
                raw.data.len(),
                path.len()
            ),
        ));
    }
    for (j, col) in raw.data.iter().enumerate() {
        if col.len() != grid.k() {
            return Err(Error::parse(
                format!("json data[{j}]"),
                format!("{} frequency pairs, expected {}", col.len(), grid.k()),
            ));
        }
    }
    let data = DMatrix::from_fn(grid.k(), path.len(), |i, j| {
        Complex64::new(raw.data[j][i][0], raw.data[j][i][1])
    });
    ComplexSweep::new(grid, path, data)
}

fn save_sweep_json<W: Write>(sweep: &ComplexSweep, sink: W) -> Result<()> {
    let data: Vec<Vec<[f64; 2]>> = (0..sweep.n_positions())
        .map(|j| {
            (0..sweep.grid.k())
                .map(|i| {
                    let z = sweep.data[(i, j)];
                    [z.re, z.im]
                })
                .collect()
        })
        .collect();
    let raw = SweepJson {
        omegas_rad_s: sweep.grid.omegas().to_vec(),
        positions: sweep.path.positions().to_vec(),
        data,
    };
    serde_json::to_writer_pretty(sink, &raw)?;
    Ok(())
}
