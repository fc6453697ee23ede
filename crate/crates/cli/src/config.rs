//! Pipeline configuration: a single JSON document with per-stage sections.
//!
//! Unknown keys are rejected everywhere so a typo cannot silently fall back
//! to a default. Scene RNG seeds are derived from the root seed and the lane
//! name, so re-running any stage with the same config reproduces its outputs
//! byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wemi_core::alarms::{MeanShiftParams, WeightLaw};
use wemi_core::detect::{JompParams, PreprocessMode, StatisticKind};
use wemi_core::filters::{MeanSubtraction, WindowSpec};
use wemi_core::measurement::FrequencyGrid;
use wemi_core::seeding::{derive_seed, fnv1a64};
use wemi_core::synthgen::{Rect, SceneSpec};
use wemi_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionarySection {
    pub n_atoms: usize,
    /// Explicit relaxation-frequency range; `None` uses the default margins
    /// around the grid extremes.
    pub zeta_min: Option<f64>,
    pub zeta_max: Option<f64>,
}

impl Default for DictionarySection {
    fn default() -> Self {
        DictionarySection {
            n_atoms: wemi_core::dsrf::DEFAULT_N_ATOMS,
            zeta_min: None,
            zeta_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessingSection {
    pub mode: PreprocessMode,
    /// Explicit kept cosine indices; `None` selects the default mid band.
    pub kept_band: Option<Vec<usize>>,
    pub mean_subtraction: MeanSubtraction,
    /// Soil-projection SNR threshold; `None` uses 1e-6 × σ_max.
    pub lambda: Option<f64>,
    /// Window geometry for exported SVD features.
    pub window: WindowSpec,
}

impl Default for PreprocessingSection {
    fn default() -> Self {
        PreprocessingSection {
            mode: PreprocessMode::Dct,
            kept_band: None,
            mean_subtraction: MeanSubtraction::RealRowsOnly,
            lambda: None,
            window: WindowSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MilSection {
    /// Lane-based cross-validation fold count (clamped to the lane count).
    pub folds: usize,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for MilSection {
    fn default() -> Self {
        MilSection {
            folds: 2,
            max_iters: 100,
            restarts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlarmsSection {
    pub sigma: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub conf_radius: f64,
    pub max_iters: usize,
    pub weight_law: WeightLaw,
}

impl Default for AlarmsSection {
    fn default() -> Self {
        let p = MeanShiftParams::default();
        AlarmsSection {
            sigma: p.sigma,
            tau: p.tau,
            epsilon: p.epsilon,
            conf_radius: p.conf_radius,
            max_iters: p.max_iters,
            weight_law: WeightLaw::default(),
        }
    }
}

impl AlarmsSection {
    pub fn params(&self) -> MeanShiftParams {
        MeanShiftParams {
            sigma: self.sigma,
            tau: self.tau,
            epsilon: self.epsilon,
            conf_radius: self.conf_radius,
            max_iters: self.max_iters,
        }
    }
}

/// Target subsets scored separately, mirroring metal-content splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Mt,
    Lmt,
    All,
}

impl Subset {
    pub fn label(self) -> &'static str {
        match self {
            Subset::Mt => "mt",
            Subset::Lmt => "lmt",
            Subset::All => "all",
        }
    }

    pub fn classes(self) -> Vec<wemi_core::synthgen::TargetClass> {
        use wemi_core::synthgen::TargetClass;
        match self {
            Subset::Mt => vec![TargetClass::Mt],
            Subset::Lmt => vec![TargetClass::Lmt],
            Subset::All => vec![TargetClass::Mt, TargetClass::Lmt, TargetClass::Nmt],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    /// FAR budgets (FA per m²) reported in the summary.
    pub far_budgets: Vec<f64>,
    pub subsets: Vec<Subset>,
    /// Swept-area override; `None` sums the lane rectangle areas.
    pub swept_area: Option<f64>,
}

impl Default for ScoringSection {
    fn default() -> Self {
        ScoringSection {
            far_budgets: vec![0.05, 0.1, 0.2],
            subsets: vec![Subset::Mt, Subset::Lmt, Subset::All],
            swept_area: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub rect: Rect,
    /// Easting advance per half oscillation (m).
    pub spacing: f64,
    /// Maximum distance between consecutive samples (m).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneConfig {
    pub name: String,
    pub path: PathSection,
    pub scene: SceneSpec,
}

/// The whole pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub lanes: Vec<LaneConfig>,
    #[serde(default)]
    pub dictionary: DictionarySection,
    #[serde(default)]
    pub preprocessing: PreprocessingSection,
    /// Detector kinds to run.
    pub detectors: Vec<StatisticKind>,
    #[serde(default)]
    pub jomp: JompParams,
    #[serde(default)]
    pub mil: MilSection,
    #[serde(default)]
    pub alarms: AlarmsSection,
    #[serde(default)]
    pub scoring: ScoringSection,
}

impl PipelineConfig {
    /// Parse, apply overrides, derive per-lane seeds, and validate.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid {
            what: "config path",
            why: format!("{}: {e}", path.display()),
        })?;
        let mut config: PipelineConfig = serde_json::from_str(&text)?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        config.resolve()?;
        Ok(config)
    }

    /// Derive lane scene seeds from the root seed and validate all sections.
    pub fn resolve(&mut self) -> Result<()> {
        for lane in &mut self.lanes {
            lane.scene.rng_seed = derive_seed(self.seed, &format!("scene:{}", lane.name));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes.is_empty() {
            return Err(Error::Invalid {
                what: "config",
                why: "at least one lane is required".into(),
            });
        }
        let mut names = std::collections::BTreeSet::new();
        for lane in &self.lanes {
            if !names.insert(lane.name.clone()) {
                return Err(Error::Invalid {
                    what: "config",
                    why: format!("duplicate lane name {:?}", lane.name),
                });
            }
            if lane.name.is_empty()
                || !lane
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Invalid {
                    what: "config",
                    why: format!(
                        "lane name {:?} must be non-empty and alphanumeric/_/-",
                        lane.name
                    ),
                });
            }
            lane.scene.validate()?;
            if !(lane.path.spacing > 0.0) || !(lane.path.step > 0.0) {
                return Err(Error::Invalid {
                    what: "config",
                    why: format!("lane {:?} has non-positive path spacing or step", lane.name),
                });
            }
        }
        if self.detectors.is_empty() {
            return Err(Error::Invalid {
                what: "config",
                why: "at least one detector kind is required".into(),
            });
        }
        let needs_blanks = self.detectors.iter().any(|k| {
            matches!(k, StatisticKind::Smf | StatisticKind::Ace) || k.is_trained()
        });
        if needs_blanks && !self.lanes.iter().any(|l| l.scene.targets.is_empty()) {
            return Err(Error::Invalid {
                what: "config",
                why: "smf/ace/mi detectors need at least one blank (target-free) lane \
                      for background estimation"
                    .into(),
            });
        }
        if self.detectors.iter().any(|k| k.is_trained())
            && !self.lanes.iter().any(|l| !l.scene.targets.is_empty())
        {
            return Err(Error::Invalid {
                what: "config",
                why: "mi detectors need at least one lane with targets for training".into(),
            });
        }
        // All lanes must share the frequency grid: one sensor per pipeline.
        let grid = self.grid();
        for lane in &self.lanes {
            if lane.scene.grid != grid {
                return Err(Error::Invalid {
                    what: "config",
                    why: format!("lane {:?} uses a different frequency grid", lane.name),
                });
            }
        }
        if self.dictionary.n_atoms < 2 {
            return Err(Error::Invalid {
                what: "config",
                why: "dictionary needs at least 2 atoms".into(),
            });
        }
        self.preprocessing.window.validate()?;
        self.alarms.params().validate()?;
        if self.scoring.far_budgets.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::Invalid {
                what: "config",
                why: "far_budgets must be non-negative".into(),
            });
        }
        Ok(())
    }

    /// The shared frequency grid.
    pub fn grid(&self) -> FrequencyGrid {
        self.lanes[0].scene.grid.clone()
    }

    /// Detectors, optionally filtered by a `--detector` override.
    pub fn active_detectors(&self, filter: Option<StatisticKind>) -> Vec<StatisticKind> {
        match filter {
            Some(kind) => self
                .detectors
                .iter()
                .cloned()
                .filter(|&k| k == kind)
                .collect(),
            None => self.detectors.clone(),
        }
    }

    /// Stable hash of the fully resolved configuration.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(self.to_json_pretty().as_bytes())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
