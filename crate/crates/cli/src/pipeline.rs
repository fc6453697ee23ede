//! Stage implementations shared by the subcommands.
//!
//! Lanes with targets produce positive truth; lanes without targets are blank
//! collections used for background estimation and negative training bags.
//! Each stage reads only files produced by earlier stages (or the config) and
//! writes its outputs under a fixed tree:
//!
//! ```text
//! out/
//!   sweeps/<lane>.sweep.csv, <lane>.truth.csv
//!   preprocessed/<lane>.columns.csv [, <lane>.windows.csv]
//!   models/<kind>_fold<j>.model.json, training_summary.json
//!   maps/<lane>_<kind>.csv, <lane>_<kind>.meta.json
//!   alarms/<lane>_<kind>.alarms.csv
//!   roc/<kind>_<subset>.roc.csv
//!   summary.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::Serialize;
use wemi_core::alarms::{generate_alarms_with, AlarmSet};
use wemi_core::detect::{
    fit_background, preprocess_sweep, BackgroundModel, ConfidenceMap, GlrtKind, MapMeta,
    PreprocessConfig, PreprocessMode, Prescreener, StatisticKind,
};
use wemi_core::dsrf::{build_dsrf, DsrfDictionary, DEFAULT_ZETA_MARGIN_HIGH, DEFAULT_ZETA_MARGIN_LOW};
use wemi_core::filters::{
    default_downtrack_projector, make_soil_projector, make_soil_projector_auto, FeatureMap,
    SoilProjector,
};
use wemi_core::measurement::{load_sweep_file, save_sweep_file, stack_real, ComplexSweep, SweepPath};
use wemi_core::miltrain::{
    detect_with_model, make_bags, train_mi_with, MilModelFile, SampleSet, TrainOptions,
};
use wemi_core::score::{match_alarms, pd_at_far, roc};
use wemi_core::seeding::derive_seed;
use wemi_core::synthgen::{blank_collection, simulate, sinusoidal_path, GroundTruthTable};
use wemi_core::{Error, Result};

use crate::config::{LaneConfig, PipelineConfig};

pub struct Pipeline {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub detector_filter: Option<StatisticKind>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out: PathBuf, detector_filter: Option<StatisticKind>) -> Self {
        Pipeline {
            config,
            out,
            detector_filter,
        }
    }

    fn detectors(&self) -> Vec<StatisticKind> {
        self.config.active_detectors(self.detector_filter)
    }

    fn lane_path(&self, lane: &LaneConfig) -> Result<SweepPath> {
        sinusoidal_path(&lane.path.rect, lane.path.spacing, lane.path.step)
    }

    /// Indices of lanes with at least one target.
    fn target_lanes(&self) -> Vec<usize> {
        (0..self.config.lanes.len())
            .filter(|&i| !self.config.lanes[i].scene.targets.is_empty())
            .collect()
    }

    /// Indices of blank (target-free) lanes.
    fn blank_lanes(&self) -> Vec<usize> {
        (0..self.config.lanes.len())
            .filter(|&i| self.config.lanes[i].scene.targets.is_empty())
            .collect()
    }

    fn dictionary(&self) -> Result<DsrfDictionary> {
        let grid = self.config.grid();
        let d = &self.config.dictionary;
        let zeta_min = d
            .zeta_min
            .unwrap_or(DEFAULT_ZETA_MARGIN_LOW * grid.min_omega());
        let zeta_max = d
            .zeta_max
            .unwrap_or(DEFAULT_ZETA_MARGIN_HIGH * grid.max_omega());
        build_dsrf(&grid, d.n_atoms, zeta_min, zeta_max)
    }

    fn soil_projector(&self, dict: &DsrfDictionary) -> Result<Option<SoilProjector>> {
        if self.config.preprocessing.mode != PreprocessMode::DctSoilProjection {
            return Ok(None);
        }
        let psi = wemi_core::synthgen::soil_basis(&self.config.grid());
        let proj = match self.config.preprocessing.lambda {
            Some(lambda) => make_soil_projector(dict, &psi, lambda)?,
            None => make_soil_projector_auto(dict, &psi)?,
        };
        Ok(Some(proj))
    }

    fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            mode: self.config.preprocessing.mode,
            kept_band: self.config.preprocessing.kept_band.clone(),
            mean_subtraction: self.config.preprocessing.mean_subtraction,
        }
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out.join(name);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn sweep_file(&self, lane: &str) -> PathBuf {
        self.out.join("sweeps").join(format!("{lane}.sweep.csv"))
    }

    fn truth_file(&self, lane: &str) -> PathBuf {
        self.out.join("sweeps").join(format!("{lane}.truth.csv"))
    }

    fn load_lane_sweep(&self, lane: &str) -> Result<ComplexSweep> {
        let path = self.sweep_file(lane);
        if !path.exists() {
            return Err(Error::Invalid {
                what: "pipeline inputs",
                why: format!("{} is missing; run `wemi simulate` first", path.display()),
            });
        }
        load_sweep_file(&path)
    }

    fn load_lane_truth(&self, lane: &str) -> Result<GroundTruthTable> {
        let path = self.truth_file(lane);
        if !path.exists() {
            return Err(Error::Invalid {
                what: "pipeline inputs",
                why: format!("{} is missing; run `wemi simulate` first", path.display()),
            });
        }
        GroundTruthTable::load_csv(fs::File::open(&path)?)
    }

    // ---- simulate ----------------------------------------------------------

    pub fn cmd_simulate(&self) -> Result<()> {
        self.dir("sweeps")?;
        for lane in &self.config.lanes {
            let path = self.lane_path(lane)?;
            let (sweep, truth) = if lane.scene.targets.is_empty() {
                let blank = blank_collection(&lane.scene, &path)?;
                (blank, GroundTruthTable::default())
            } else {
                simulate(&lane.scene, &path)?
            };

            let sweep_path = self.sweep_file(&lane.name);
            save_sweep_file(&sweep, &sweep_path)?;
            let mut truth_sink = fs::File::create(self.truth_file(&lane.name))?;
            truth.save_csv(&mut truth_sink)?;

            println!(
                "simulate: {} ({} freqs, {} positions, {} targets) -> {}",
                lane.name,
                sweep.grid().k(),
                sweep.n_positions(),
                truth.entries.len(),
                sweep_path.display()
            );
        }
        Ok(())
    }

    // ---- preprocess --------------------------------------------------------

    pub fn cmd_preprocess(&self) -> Result<()> {
        let dir = self.dir("preprocessed")?;
        let dict = self.dictionary()?;
        let soil = self.soil_projector(&dict)?;
        let pre_config = self.preprocess_config();
        for lane in &self.config.lanes {
            let sweep = self.load_lane_sweep(&lane.name)?;
            let (positions, columns) = preprocess_sweep(&sweep, &pre_config, soil.as_ref())?;
            let map = FeatureMap {
                features: columns.column_iter().map(|c| c.into_owned()).collect(),
                leading_sigmas: vec![0.0; positions.len()],
                degenerate: vec![false; positions.len()],
                positions,
            };
            let columns_path = dir.join(format!("{}.columns.csv", lane.name));
            map.save_csv(fs::File::create(&columns_path)?)?;
            println!(
                "preprocess: {} -> {} ({} vectors of dim {})",
                lane.name,
                columns_path.display(),
                map.len(),
                map.dim()
            );

            if let Some(soil) = soil.as_ref() {
                let spec = self.config.preprocessing.window;
                let down = default_downtrack_projector(spec.width)?;
                let real = stack_real(&sweep);
                let windows = wemi_core::filters::sweep_to_features(&real, soil, &down, &spec)?;
                let windows_path = dir.join(format!("{}.windows.csv", lane.name));
                windows.save_csv(fs::File::create(&windows_path)?)?;
                println!(
                    "preprocess: {} -> {} ({} windows, feature dim {})",
                    lane.name,
                    windows_path.display(),
                    windows.len(),
                    windows.dim()
                );
            }
        }
        Ok(())
    }

    // ---- shared detection resources ----------------------------------------

    fn preprocessed_columns(
        &self,
        sweep: &ComplexSweep,
        soil: Option<&SoilProjector>,
    ) -> Result<(Vec<[f64; 2]>, DMatrix<f64>)> {
        preprocess_sweep(sweep, &self.preprocess_config(), soil)
    }

    /// Global background statistics from every blank lane.
    fn global_background(&self, soil: Option<&SoilProjector>) -> Result<BackgroundModel> {
        let blanks = self.blank_lanes();
        if blanks.is_empty() {
            return Err(Error::Invalid {
                what: "config",
                why: "background estimation needs at least one blank (target-free) lane".into(),
            });
        }
        let mut blocks: Vec<DMatrix<f64>> = Vec::new();
        for &i in &blanks {
            let blank = self.load_lane_sweep(&self.config.lanes[i].name)?;
            let (_, columns) = self.preprocessed_columns(&blank, soil)?;
            blocks.push(columns);
        }
        let m = blocks[0].nrows();
        let total: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut samples = DMatrix::zeros(m, total);
        let mut col = 0;
        for block in &blocks {
            for c in block.column_iter() {
                samples.set_column(col, &c);
                col += 1;
            }
        }
        fit_background(&samples, None)
    }

    /// Cross-validation fold count over the target lanes.
    fn effective_folds(&self) -> usize {
        self.config.mil.folds.clamp(1, self.target_lanes().len().max(1))
    }

    /// Target-lane indices used to TRAIN the model evaluated on fold `fold`.
    fn training_lanes(&self, fold: usize) -> Vec<usize> {
        let folds = self.effective_folds();
        let targets = self.target_lanes();
        if folds == 1 {
            return targets;
        }
        targets
            .into_iter()
            .enumerate()
            .filter(|(t, _)| t % folds != fold)
            .map(|(_, i)| i)
            .collect()
    }

    /// Which fold's model scores the given lane: a target lane is scored by
    /// the model that excluded it; blank lanes use fold 0.
    fn scoring_fold(&self, lane_index: usize) -> usize {
        let folds = self.effective_folds();
        self.target_lanes()
            .iter()
            .position(|&i| i == lane_index)
            .map_or(0, |t| if folds == 1 { 0 } else { t % folds })
    }

    fn model_file(&self, kind: StatisticKind, fold: usize) -> PathBuf {
        self.out
            .join("models")
            .join(format!("{kind}_fold{fold}.model.json"))
    }

    fn mil_glrt(kind: StatisticKind) -> GlrtKind {
        match kind {
            StatisticKind::MiSmf => GlrtKind::Smf,
            StatisticKind::MiAce => GlrtKind::Ace,
            _ => unreachable!("only MI kinds are trained"),
        }
    }

    // ---- train ----------------------------------------------------------------

    pub fn cmd_train(&self) -> Result<()> {
        let mil_kinds: Vec<StatisticKind> = self
            .detectors()
            .into_iter()
            .filter(|k| k.is_trained())
            .collect();
        if mil_kinds.is_empty() {
            println!("train: no trained detector kinds configured; nothing to do");
            return Ok(());
        }
        if self.target_lanes().is_empty() {
            return Err(Error::Invalid {
                what: "config",
                why: "training needs at least one lane with targets".into(),
            });
        }
        self.dir("models")?;
        let dict = self.dictionary()?;
        let soil = self.soil_projector(&dict)?;
        let folds = self.effective_folds();
        let bg = self.global_background(soil.as_ref())?;

        // Blank lanes are shared negatives across every fold.
        let mut blank_sets = Vec::new();
        for &i in &self.blank_lanes() {
            let lane = &self.config.lanes[i];
            let blank = self.load_lane_sweep(&lane.name)?;
            let (bpos, bcols) = self.preprocessed_columns(&blank, soil.as_ref())?;
            blank_sets.push(SampleSet::new(lane.name.clone(), bpos, bcols)?);
        }

        #[derive(Serialize)]
        struct FoldSummary {
            fold: usize,
            training_lanes: Vec<String>,
            positive_bags: usize,
            negative_bags: usize,
            iterations: usize,
            final_objective: f64,
            converged: bool,
        }
        let mut summary: BTreeMap<String, Vec<FoldSummary>> = BTreeMap::new();

        for fold in 0..folds {
            let training = self.training_lanes(fold);

            let mut target_sets = Vec::new();
            let mut truths = Vec::new();
            for &i in &training {
                let lane = &self.config.lanes[i];
                let sweep = self.load_lane_sweep(&lane.name)?;
                let (positions, columns) = self.preprocessed_columns(&sweep, soil.as_ref())?;
                target_sets.push(SampleSet::new(lane.name.clone(), positions, columns)?);
                truths.push(self.load_lane_truth(&lane.name)?);
            }
            let truth = GroundTruthTable::merged(truths.iter());
            let halo = truth
                .entries
                .first()
                .map(|e| e.halo_m)
                .unwrap_or(wemi_core::synthgen::DEFAULT_HALO_M);
            let bags = make_bags(&target_sets, &truth, halo, &blank_sets)?;
            let n_pos = bags
                .iter()
                .filter(|b| b.label == wemi_core::miltrain::BagLabel::Positive)
                .count();
            let n_neg = bags.len() - n_pos;

            for &kind in &mil_kinds {
                let options = TrainOptions {
                    max_iters: self.config.mil.max_iters,
                    restarts: self.config.mil.restarts,
                    rng_seed: derive_seed(self.config.seed, &format!("train:{kind}:{fold}")),
                };
                let model = train_mi_with(&bags, &bg, Self::mil_glrt(kind), &options)?;
                let file = model.to_file();
                let path = self.model_file(kind, fold);
                fs::write(&path, serde_json::to_string_pretty(&file)?)?;
                println!(
                    "train: {kind} fold {fold} -> {} (objective {:.4}, {} iterations{})",
                    path.display(),
                    model.objective_trace.last().unwrap(),
                    model.objective_trace.len() - 1,
                    if model.converged { "" } else { ", NOT converged" }
                );
                summary.entry(kind.to_string()).or_default().push(FoldSummary {
                    fold,
                    training_lanes: training
                        .iter()
                        .map(|&i| self.config.lanes[i].name.clone())
                        .collect(),
                    positive_bags: n_pos,
                    negative_bags: n_neg,
                    iterations: model.objective_trace.len() - 1,
                    final_objective: *model.objective_trace.last().unwrap(),
                    converged: model.converged,
                });
            }
        }
        let summary_path = self.out.join("models").join("training_summary.json");
        fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
        println!("train: summary -> {}", summary_path.display());
        Ok(())
    }

    // ---- detect ----------------------------------------------------------------

    pub fn cmd_detect(&self) -> Result<()> {
        let detectors = self.detectors();
        if detectors.is_empty() {
            return Err(Error::Invalid {
                what: "detector filter",
                why: "no configured detector matches the filter".into(),
            });
        }
        self.dir("maps")?;
        let dict = self.dictionary()?;
        let soil = self.soil_projector(&dict)?;
        let config_hash = self.config.content_hash();

        let untrained: Vec<StatisticKind> =
            detectors.iter().cloned().filter(|k| !k.is_trained()).collect();
        let trained: Vec<StatisticKind> =
            detectors.iter().cloned().filter(|k| k.is_trained()).collect();

        let needs_bg = detectors.iter().any(|k| {
            matches!(k, StatisticKind::Smf | StatisticKind::Ace) || k.is_trained()
        });
        let bg = if needs_bg {
            Some(self.global_background(soil.as_ref())?)
        } else {
            None
        };

        for &kind in &untrained {
            let prescreener = Prescreener::new(
                kind,
                self.preprocess_config(),
                soil.clone(),
                Some(&dict),
                bg.clone(),
                self.config.jomp,
            )?;
            for lane in &self.config.lanes {
                let sweep = self.load_lane_sweep(&lane.name)?;
                let map = prescreener.run(&sweep)?;
                self.write_map(&lane.name, kind, &map, config_hash)?;
            }
        }

        for &kind in &trained {
            for (i, lane) in self.config.lanes.iter().enumerate() {
                let fold = self.scoring_fold(i);
                let model_path = self.model_file(kind, fold);
                if !model_path.exists() {
                    return Err(Error::Invalid {
                        what: "pipeline inputs",
                        why: format!(
                            "{} is missing; run `wemi train` first",
                            model_path.display()
                        ),
                    });
                }
                let file: MilModelFile = serde_json::from_str(&fs::read_to_string(&model_path)?)?;
                let model = file.into_model(bg.clone().expect("trained kinds need a background"))?;

                let sweep = self.load_lane_sweep(&lane.name)?;
                let (positions, columns) = self.preprocessed_columns(&sweep, soil.as_ref())?;
                let mut confidences = Vec::with_capacity(columns.ncols());
                for col in columns.column_iter() {
                    confidences.push(detect_with_model(&col.into_owned(), &model)?);
                }
                let map = ConfidenceMap::new(positions, confidences, kind)?;
                self.write_map(&lane.name, kind, &map, config_hash)?;
            }
        }
        Ok(())
    }

    fn write_map(
        &self,
        lane: &str,
        kind: StatisticKind,
        map: &ConfidenceMap,
        config_hash: u64,
    ) -> Result<()> {
        let dir = self.out.join("maps");
        let csv_path = dir.join(format!("{lane}_{kind}.csv"));
        map.save_csv(fs::File::create(&csv_path)?)?;
        let meta = MapMeta {
            statistic_kind: kind,
            config_hash,
            n_points: map.len(),
        };
        fs::write(
            dir.join(format!("{lane}_{kind}.meta.json")),
            serde_json::to_string_pretty(&meta)?,
        )?;
        println!(
            "detect: {lane} {kind} -> {} ({} positions)",
            csv_path.display(),
            map.len()
        );
        Ok(())
    }

    // ---- alarms ----------------------------------------------------------------

    pub fn cmd_alarms(&self) -> Result<()> {
        self.dir("alarms")?;
        let params = self.config.alarms.params();
        let law = self.config.alarms.weight_law;
        for &kind in &self.detectors() {
            for lane in &self.config.lanes {
                let map_path = self.out.join("maps").join(format!("{}_{kind}.csv", lane.name));
                if !map_path.exists() {
                    return Err(Error::Invalid {
                        what: "pipeline inputs",
                        why: format!("{} is missing; run `wemi detect` first", map_path.display()),
                    });
                }
                let map = ConfidenceMap::load_csv(fs::File::open(&map_path)?, kind)?;
                let alarm_set = generate_alarms_with(&map, &params, law)?;
                let out_path = self
                    .out
                    .join("alarms")
                    .join(format!("{}_{kind}.alarms.csv", lane.name));
                alarm_set.save_csv(fs::File::create(&out_path)?)?;
                println!(
                    "alarms: {} {kind} -> {} ({} alarms{})",
                    lane.name,
                    out_path.display(),
                    alarm_set.alarms.len(),
                    if alarm_set.degenerate { ", degenerate map" } else { "" }
                );
            }
        }
        Ok(())
    }

    // ---- score -----------------------------------------------------------------

    pub fn cmd_score(&self) -> Result<()> {
        self.dir("roc")?;
        let mut truths = Vec::new();
        for lane in &self.config.lanes {
            truths.push(self.load_lane_truth(&lane.name)?);
        }
        let truth = GroundTruthTable::merged(truths.iter());
        if truth.entries.is_empty() {
            return Err(Error::Invalid {
                what: "scoring",
                why: "the merged ground truth is empty".into(),
            });
        }
        let swept_area = self.config.scoring.swept_area.unwrap_or_else(|| {
            self.config
                .lanes
                .iter()
                .map(|l| l.path.rect.area())
                .sum::<f64>()
        });

        #[derive(Serialize)]
        struct SubsetSummary {
            n_targets: usize,
            n_alarms: usize,
            n_hits: usize,
            n_false_alarms: usize,
            pd_at_far: BTreeMap<String, f64>,
        }
        let mut summary: BTreeMap<String, BTreeMap<String, SubsetSummary>> = BTreeMap::new();

        for &kind in &self.detectors() {
            let mut alarms = Vec::new();
            for lane in &self.config.lanes {
                let path = self
                    .out
                    .join("alarms")
                    .join(format!("{}_{kind}.alarms.csv", lane.name));
                if !path.exists() {
                    return Err(Error::Invalid {
                        what: "pipeline inputs",
                        why: format!("{} is missing; run `wemi alarms` first", path.display()),
                    });
                }
                alarms.extend(AlarmSet::load_csv(fs::File::open(&path)?)?.alarms);
            }

            for &subset in &self.config.scoring.subsets {
                let sub_truth = truth.subset(&subset.classes());
                if sub_truth.n_scoreable() == 0 {
                    println!("score: {kind} {}: no targets in subset; skipped", subset.label());
                    continue;
                }
                let scored = match_alarms(&alarms, &sub_truth, swept_area)?;
                let curve = roc(&scored)?;
                let roc_path = self
                    .out
                    .join("roc")
                    .join(format!("{kind}_{}.roc.csv", subset.label()));
                curve.save_csv(fs::File::create(&roc_path)?)?;

                let mut pd_map = BTreeMap::new();
                for &budget in &self.config.scoring.far_budgets {
                    pd_map.insert(budget.to_string(), pd_at_far(&curve, budget));
                }
                println!(
                    "score: {kind} {} -> {} (PD at largest budget: {:.3})",
                    subset.label(),
                    roc_path.display(),
                    pd_map.values().last().cloned().unwrap_or(0.0)
                );
                summary.entry(kind.to_string()).or_default().insert(
                    subset.label().to_string(),
                    SubsetSummary {
                        n_targets: scored.n_targets,
                        n_alarms: alarms.len(),
                        n_hits: scored.hits.len(),
                        n_false_alarms: scored.false_alarms.len(),
                        pd_at_far: pd_map,
                    },
                );
            }
        }

        #[derive(Serialize)]
        struct Summary {
            config_hash: u64,
            swept_area_m2: f64,
            detectors: BTreeMap<String, BTreeMap<String, SubsetSummary>>,
        }
        let summary_path = self.out.join("summary.json");
        fs::write(
            &summary_path,
            serde_json::to_string_pretty(&Summary {
                config_hash: self.config.content_hash(),
                swept_area_m2: swept_area,
                detectors: summary,
            })?,
        )?;
        println!("score: summary -> {}", summary_path.display());
        Ok(())
    }

    // ---- run-all ---------------------------------------------------------------

    pub fn cmd_run_all(&self) -> Result<()> {
        self.cmd_simulate()?;
        self.cmd_preprocess()?;
        if self.detectors().iter().any(|k| k.is_trained()) {
            self.cmd_train()?;
        }
        self.cmd_detect()?;
        self.cmd_alarms()?;
        self.cmd_score()?;
        Ok(())
    }
}
