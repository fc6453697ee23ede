//! Discrete spectrum of relaxation frequencies (DSRF) dictionary.
//!
//! Conductive objects relax with a characteristic frequency ζ; the dictionary
//! holds one frequency-response atom per ζ over the sensor's operating grid.
//! Real-stacked atoms are unit-normalized for use by the projection-based and
//! pursuit-based detectors, while the raw complex atoms keep physical scale
//! for the simulator.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measurement::{stack_real_matrix, FrequencyGrid};

/// Multiplicative margins that place the ζ range just outside the grid.
pub const DEFAULT_ZETA_MARGIN_LOW: f64 = 0.9;
pub const DEFAULT_ZETA_MARGIN_HIGH: f64 = 1.1;

/// Default number of relaxation-frequency atoms.
pub const DEFAULT_N_ATOMS: usize = 100;

/// Dictionary of relaxation-frequency atoms over a fixed operating grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DsrfDictionary {
    zetas: Vec<f64>,
    atoms_complex: DMatrix<Complex64>,
    atoms_real: DMatrix<f64>,
    grid: FrequencyGrid,
}

impl DsrfDictionary {
    /// Relaxation frequencies, strictly increasing and log-equally spaced.
    pub fn zetas(&self) -> &[f64] {
        &self.zetas
    }

    /// K×P unnormalized complex atoms (physical scale).
    pub fn atoms_complex(&self) -> &DMatrix<Complex64> {
        &self.atoms_complex
    }

    /// 2K×P real-stacked atoms, each column unit-norm.
    pub fn atoms_real(&self) -> &DMatrix<f64> {
        &self.atoms_real
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn n_atoms(&self) -> usize {
        self.zetas.len()
    }

    /// Export as CSV: one row per atom, `zeta` then the real-stacked entries.
    pub fn save_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        let m = self.atoms_real.nrows();
        let mut header = String::from("zeta");
        for i in 1..=m {
            header.push_str(&format!(",c_{i}"));
        }
        writeln!(sink, "{header}")?;
        for (p, zeta) in self.zetas.iter().enumerate() {
            let mut row = zeta.to_string();
            for i in 0..m {
                row.push_str(&format!(",{}", self.atoms_real[(i, p)]));
            }
            writeln!(sink, "{row}")?;
        }
        Ok(())
    }
}

/// Single dictionary atom: element i is `(jω_i/ζ) / (1 + jω_iζ)`.
pub fn dsrf_atom(grid: &FrequencyGrid, zeta: f64) -> DVector<Complex64> {
    assert!(zeta > 0.0, "relaxation frequency must be positive");
    DVector::from_iterator(
        grid.k(),
        grid.omegas().iter().map(|&omega| {
            let numer = Complex64::new(0.0, omega / zeta);
            let denom = Complex64::new(1.0, omega * zeta);
            numer / denom
        }),
    )
}

/// Build a dictionary of `n_atoms` log-equally spaced relaxation frequencies
/// spanning `[zeta_min, zeta_max]` inclusive.
pub fn build_dsrf(
    grid: &FrequencyGrid,
    n_atoms: usize,
    zeta_min: f64,
    zeta_max: f64,
) -> Result<DsrfDictionary> {
    if !(zeta_min > 0.0 && zeta_min < zeta_max) {
        return Err(Error::invalid(
            "dsrf range",
            format!("need 0 < zeta_min < zeta_max, got [{zeta_min}, {zeta_max}]"),
        ));
    }
    if n_atoms < 2 {
        return Err(Error::invalid("dsrf size", "need at least 2 atoms"));
    }

    let log_min = zeta_min.ln();
    let log_max = zeta_max.ln();
    let zetas: Vec<f64> = (0..n_atoms)
        .map(|i| {
            let t = i as f64 / (n_atoms - 1) as f64;
            (log_min + t * (log_max - log_min)).exp()
        })
        .collect();

    let k = grid.k();
    let mut atoms_complex = DMatrix::zeros(k, n_atoms);
    for (p, &zeta) in zetas.iter().enumerate() {
        atoms_complex.set_column(p, &dsrf_atom(grid, zeta));
    }

    let mut atoms_real = stack_real_matrix(&atoms_complex);
    for mut col in atoms_real.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }

    Ok(DsrfDictionary {
        zetas,
        atoms_complex,
        atoms_real,
        grid: grid.clone(),
    })
}

/// Dictionary over the default range `[0.9·ω_min, 1.1·ω_max]` with 100 atoms.
pub fn build_default_dsrf(grid: &FrequencyGrid) -> Result<DsrfDictionary> {
    build_dsrf(
        grid,
        DEFAULT_N_ATOMS,
        DEFAULT_ZETA_MARGIN_LOW * grid.min_omega(),
        DEFAULT_ZETA_MARGIN_HIGH * grid.max_omega(),
    )
}
