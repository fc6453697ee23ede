//! Prescreening library for wide-band electromagnetic induction (WEMI) sweeps.
//!
//! A WEMI sensor sweeps over the ground recording a complex phasor response at
//! K operating frequencies for every position along its path. This crate
//! provides the full prescreening chain used to turn those sweeps into scored
//! target declarations:
//!
//! 1. [`measurement`] – sweep matrices, complex→real stacking, file I/O.
//! 2. [`synthgen`] – synthetic sweep generation from a four-component
//!    measurement model (target + soil + self-response + noise) with exact
//!    ground truth.
//! 3. [`filters`] – downtrack DCT filtering for self-response removal,
//!    soil-subspace projection, and windowed SVD feature extraction.
//! 4. [`dsrf`] – the discrete spectrum of relaxation frequencies dictionary of
//!    expected target responses.
//! 5. [`detect`] – magnitude, SMF, ACE, and JOMP prescreeners plus background
//!    statistics estimation.
//! 6. [`miltrain`] – multiple-instance learning of target signatures (MI-SMF
//!    and MI-ACE).
//! 7. [`alarms`] – confidence-weighted mean-shift alarm generation.
//! 8. [`score`] – halo-based alarm/truth matching and ROC evaluation.

pub mod alarms;
pub mod detect;
pub mod dsrf;
mod error;
pub mod filters;
pub mod measurement;
pub mod miltrain;
pub mod score;
pub mod seeding;
pub mod synthgen;

pub use error::{Error, Result};
