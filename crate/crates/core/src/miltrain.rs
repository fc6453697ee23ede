//! Multiple-instance learning of target signatures (MI-SMF, MI-ACE).
//!
//! Field ground truth is imprecise: the columns near a flagged target
//! position are known to contain at least one true target response, but not
//! which one. Training data is therefore grouped into bags; a positive bag
//! holds the columns inside a target halo, negative bags hold blank-sweep and
//! far-from-target columns. Training alternates between picking the most
//! target-like instance per positive bag and a closed-form signature update
//! in whitened coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detect::{BackgroundModel, GlrtKind};
use crate::error::{Error, Result};
use crate::measurement::{distance, Position};
use crate::synthgen::GroundTruthTable;

/// Guard band: negative bags exclude anything within this multiple of the
/// halo radius of any truth entry.
pub const NEGATIVE_GUARD_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagLabel {
    Positive,
    Negative,
}

/// Where a bag's instances came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagProvenance {
    pub sweep_id: String,
    /// Inclusive column range within the source sweep.
    pub column_range: (usize, usize),
}

/// A labeled multiset of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub label: BagLabel,
    pub instances: Vec<DVector<f64>>,
    pub provenance: BagProvenance,
}

impl Bag {
    pub fn new(
        label: BagLabel,
        instances: Vec<DVector<f64>>,
        provenance: BagProvenance,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::invalid("bag", "empty instance list"));
        }
        Ok(Bag {
            label,
            instances,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Preprocessed per-position samples from one sweep.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub id: String,
    pub positions: Vec<Position>,
    /// One column per position.
    pub samples: DMatrix<f64>,
}

impl SampleSet {
    pub fn new(id: impl Into<String>, positions: Vec<Position>, samples: DMatrix<f64>) -> Result<Self> {
        if positions.len() != samples.ncols() {
            return Err(Error::dims(format!(
                "{} positions vs {} sample columns",
                positions.len(),
                samples.ncols()
            )));
        }
        Ok(SampleSet {
            id: id.into(),
            positions,
            samples,
        })
    }
}

/// Construct bags from target-bearing sweeps, their combined ground truth,
/// and blank sweeps.
///
/// One positive bag is built per scoreable truth entry from all columns
/// within `halo_m` of it (entries with no in-halo column are skipped with a
/// warning). Each blank sweep becomes one negative bag, and each target sweep
/// contributes a negative bag of columns farther than three halos from every
/// truth entry.
pub fn make_bags(
    target_sets: &[SampleSet],
    truth: &GroundTruthTable,
    halo_m: f64,
    blank_sets: &[SampleSet],
) -> Result<Vec<Bag>> {
    if !(halo_m > 0.0) {
        return Err(Error::invalid("halo", "halo_m must be > 0"));
    }
    let mut bags = Vec::new();

    for (t_idx, entry) in truth.entries.iter().enumerate() {
        if !entry.class.is_scoreable() {
            continue;
        }
        let mut instances = Vec::new();
        let mut provenance: Option<BagProvenance> = None;
        for set in target_sets {
            let mut first = None;
            let mut last = 0usize;
            for (j, &p) in set.positions.iter().enumerate() {
                if distance(p, entry.position) <= halo_m {
                    instances.push(set.samples.column(j).into_owned());
                    first.get_or_insert(j);
                    last = j;
                }
            }
            if let (Some(f), None) = (first, provenance.as_ref()) {
                provenance = Some(BagProvenance {
                    sweep_id: set.id.clone(),
                    column_range: (f, last),
                });
            }
        }
        match provenance {
            Some(provenance) => {
                bags.push(Bag::new(BagLabel::Positive, instances, provenance)?)
            }
            None => log::warn!(
                "truth entry {t_idx} ({}) at {:?} has no in-halo samples; skipped",
                entry.class,
                entry.position
            ),
        }
    }

    for set in blank_sets {
        if set.positions.is_empty() {
            continue;
        }
        let instances = set
            .samples
            .column_iter()
            .map(|c| c.into_owned())
            .collect::<Vec<_>>();
        bags.push(Bag::new(
            BagLabel::Negative,
            instances,
            BagProvenance {
                sweep_id: set.id.clone(),
                column_range: (0, set.positions.len() - 1),
            },
        )?);
    }

    for set in target_sets {
        let guard = NEGATIVE_GUARD_FACTOR * halo_m;
        let mut instances = Vec::new();
        let mut first = None;
        let mut last = 0usize;
        for (j, &p) in set.positions.iter().enumerate() {
            let clear = truth
                .entries
                .iter()
                .all(|e| distance(p, e.position) > guard);
            if clear {
                instances.push(set.samples.column(j).into_owned());
                first.get_or_insert(j);
                last = j;
            }
        }
        if let Some(f) = first {
            bags.push(Bag::new(
                BagLabel::Negative,
                instances,
                BagProvenance {
                    sweep_id: format!("{}:far-field", set.id),
                    column_range: (f, last),
                },
            )?);
        }
    }

    Ok(bags)
}

/// Trained signature model.
///
/// The signature lives in whitened coordinates and is unit-norm; detection
/// reduces to a dot product (MI-SMF) or cosine (MI-ACE) after whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub signature: DVector<f64>,
    pub kind: GlrtKind,
    pub background: BackgroundModel,
    /// Objective value after initialization and after each update.
    pub objective_trace: Vec<f64>,
    /// False when training stopped at the iteration cap without a stable
    /// candidate selection.
    pub converged: bool,
    /// Selected candidate index within each positive bag, in bag order.
    pub selected_candidates: Vec<usize>,
}

/// Whitened (and, for ACE, unit-normalized) copies of every instance.
fn whitened_bags(
    bags: &[Bag],
    bg: &BackgroundModel,
    kind: GlrtKind,
) -> Result<Vec<(BagLabel, Vec<DVector<f64>>)>> {
    bags.iter()
        .map(|bag| {
            let instances = bag
                .instances
                .iter()
                .map(|x| {
                    let mut w = bg.whiten(x)?;
                    if kind == GlrtKind::Ace {
                        let n = w.norm();
                        if n > 0.0 {
                            w /= n;
                        }
                    }
                    Ok(w)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((bag.label, instances))
        })
        .collect()
}

fn objective_of(signature: &DVector<f64>, whitened: &[(BagLabel, Vec<DVector<f64>>)]) -> f64 {
    let mut pos_sum = 0.0;
    let mut pos_count = 0usize;
    let mut neg_sum = 0.0;
    let mut neg_count = 0usize;
    for (label, instances) in whitened {
        match label {
            BagLabel::Positive => {
                let best = instances
                    .iter()
                    .map(|x| signature.dot(x))
                    .fold(f64::NEG_INFINITY, f64::max);
                pos_sum += best;
                pos_count += 1;
            }
            BagLabel::Negative => {
                let mean =
                    instances.iter().map(|x| signature.dot(x)).sum::<f64>() / instances.len() as f64;
                neg_sum += mean;
                neg_count += 1;
            }
        }
    }
    pos_sum / pos_count as f64 - neg_sum / neg_count as f64
}

fn check_polarity(whitened: &[(BagLabel, Vec<DVector<f64>>)]) -> Result<()> {
    let pos = whitened.iter().any(|(l, _)| *l == BagLabel::Positive);
    let neg = whitened.iter().any(|(l, _)| *l == BagLabel::Negative);
    if !pos || !neg {
        return Err(Error::invalid(
            "bags",
            "training needs at least one positive and one negative bag",
        ));
    }
    Ok(())
}

/// The training objective: mean best-instance statistic over positive bags
/// minus the mean per-bag average over negative bags.
///
/// `signature` is a unit vector in whitened coordinates.
pub fn mil_objective(
    signature: &DVector<f64>,
    bags: &[Bag],
    bg: &BackgroundModel,
    kind: GlrtKind,
) -> Result<f64> {
    let whitened = whitened_bags(bags, bg, kind)?;
    check_polarity(&whitened)?;
    Ok(objective_of(signature, &whitened))
}

/// Candidate selection under the current signature: argmax per positive bag
/// (lowest index wins ties).
fn select_candidates(
    signature: &DVector<f64>,
    whitened: &[(BagLabel, Vec<DVector<f64>>)],
) -> Vec<usize> {
    whitened
        .iter()
        .filter(|(l, _)| *l == BagLabel::Positive)
        .map(|(_, instances)| {
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for (i, x) in instances.iter().enumerate() {
                let v = signature.dot(x);
                if v > best_val {
                    best_val = v;
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Closed-form signature update for a fixed candidate set: the normalized
/// difference between the mean selected positive and the mean negative
/// (bag-averaged) whitened instance.
fn update_signature(
    whitened: &[(BagLabel, Vec<DVector<f64>>)],
    selected: &[usize],
    dim: usize,
) -> DVector<f64> {
    let mut pos_mean = DVector::zeros(dim);
    let mut pos_count = 0usize;
    let mut neg_mean = DVector::zeros(dim);
    let mut neg_count = 0usize;
    let mut sel_iter = selected.iter();
    for (label, instances) in whitened {
        match label {
            BagLabel::Positive => {
                let idx = *sel_iter.next().expect("one selection per positive bag");
                pos_mean += &instances[idx];
                pos_count += 1;
            }
            BagLabel::Negative => {
                let mut bag_mean = DVector::zeros(dim);
                for x in instances {
                    bag_mean += x;
                }
                neg_mean += bag_mean / instances.len() as f64;
                neg_count += 1;
            }
        }
    }
    let v = pos_mean / pos_count as f64 - neg_mean / neg_count as f64;
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Training options; `restarts` adds randomized initializations on top of the
/// deterministic best-positive-instance start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub max_iters: usize,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iters: 100,
            restarts: 0,
            rng_seed: 0,
        }
    }
}

/// Learn a signature by alternating candidate selection and the closed-form
/// update until the selection stabilizes or `max_iters` is reached.
pub fn train_mi(
    bags: &[Bag],
    bg: &BackgroundModel,
    kind: GlrtKind,
    max_iters: usize,
) -> Result<MilModel> {
    train_mi_with(
        bags,
        bg,
        kind,
        &TrainOptions {
            max_iters,
            ..TrainOptions::default()
        },
    )
}

/// [`train_mi`] with restart options.
pub fn train_mi_with(
    bags: &[Bag],
    bg: &BackgroundModel,
    kind: GlrtKind,
    options: &TrainOptions,
) -> Result<MilModel> {
    let whitened = whitened_bags(bags, bg, kind)?;
    check_polarity(&whitened)?;
    let dim = bg.dim();

    // Deterministic initialization: the positive instance maximizing the
    // objective over all positive instances.
    let mut init = None;
    let mut init_obj = f64::NEG_INFINITY;
    for (label, instances) in &whitened {
        if *label != BagLabel::Positive {
            continue;
        }
        for x in instances {
            let n = x.norm();
            if n == 0.0 {
                continue;
            }
            let candidate = x / n;
            let obj = objective_of(&candidate, &whitened);
            if obj > init_obj {
                init_obj = obj;
                init = Some(candidate);
            }
        }
    }
    let init = init.ok_or_else(|| {
        Error::invalid("bags", "no nonzero positive instance available for initialization")
    })?;

    let mut best: Option<MilModel> = None;
    let mut starts: Vec<DVector<f64>> = vec![init];
    if options.restarts > 0 {
        use rand::Rng;
        let mut rng = crate::seeding::stage_rng(options.rng_seed, "mil.restarts");
        for _ in 0..options.restarts {
            let mut v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.0 {
                v /= n;
            }
            starts.push(v);
        }
    }

    for start in starts {
        let model = run_alternation(start, &whitened, bags, bg, kind, options.max_iters);
        let better = match &best {
            None => true,
            Some(b) => {
                model.objective_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
                    > b.objective_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
            }
        };
        if better {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one start"))
}

fn run_alternation(
    start: DVector<f64>,
    whitened: &[(BagLabel, Vec<DVector<f64>>)],
    _bags: &[Bag],
    bg: &BackgroundModel,
    kind: GlrtKind,
    max_iters: usize,
) -> MilModel {
    let dim = start.len();
    let mut signature = start;
    let mut selected = select_candidates(&signature, whitened);
    let mut trace = vec![objective_of(&signature, whitened)];
    let mut converged = false;
    for _ in 0..max_iters {
        let updated = update_signature(whitened, &selected, dim);
        if updated.norm() == 0.0 {
            break; // positives and negatives cancel exactly
        }
        signature = updated;
        trace.push(objective_of(&signature, whitened));
        let new_selection = select_candidates(&signature, whitened);
        if new_selection == selected {
            converged = true;
            break;
        }
        selected = new_selection;
    }
    MilModel {
        signature,
        kind,
        background: bg.clone(),
        objective_trace: trace,
        converged,
        selected_candidates: selected,
    }
}

/// Score a sample against a trained model.
pub fn detect_with_model(x: &DVector<f64>, model: &MilModel) -> Result<f64> {
    let w = model.background.whiten(x)?;
    match model.kind {
        GlrtKind::Smf => Ok(model.signature.dot(&w)),
        GlrtKind::Ace => {
            let n = w.norm();
            if n == 0.0 {
                return Ok(0.0);
            }
            Ok((model.signature.dot(&w) / n).clamp(-1.0, 1.0))
        }
    }
}

/// On-disk form of a trained model. The background is referenced by content
/// hash and must be refit from the same inputs when loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilModelFile {
    pub signature: Vec<f64>,
    pub statistic_kind: GlrtKind,
    pub background_hash: u64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl MilModel {
    pub fn to_file(&self) -> MilModelFile {
        MilModelFile {
            signature: self.signature.iter().cloned().collect(),
            statistic_kind: self.kind,
            background_hash: self.background.content_hash(),
            objective_trace: self.objective_trace.clone(),
            converged: self.converged,
        }
    }
}

impl MilModelFile {
    /// Rehydrate with a background whose content hash must match.
    pub fn into_model(self, background: BackgroundModel) -> Result<MilModel> {
        if background.content_hash() != self.background_hash {
            return Err(Error::invalid(
                "model file",
                format!(
                    "background hash {:#x} does not match the model's {:#x}",
                    background.content_hash(),
                    self.background_hash
                ),
            ));
        }
        if self.signature.len() != background.dim() {
            return Err(Error::dims(format!(
                "signature has {} entries, background expects {}",
                self.signature.len(),
                background.dim()
            )));
        }
        Ok(MilModel {
            signature: DVector::from_vec(self.signature),
            kind: self.statistic_kind,
            background,
            objective_trace: self.objective_trace,
            converged: self.converged,
            selected_candidates: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{fit_background, smf};
    use crate::synthgen::{TargetClass, TruthEntry};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn identity_bg(m: usize) -> BackgroundModel {
        BackgroundModel::from_moments(DVector::zeros(m), DMatrix::identity(m, m)).unwrap()
    }

    fn prov(id: &str) -> BagProvenance {
        BagProvenance {
            sweep_id: id.into(),
            column_range: (0, 0),
        }
    }

    fn bag(label: BagLabel, instances: Vec<Vec<f64>>) -> Bag {
        Bag::new(
            label,
            instances.into_iter().map(DVector::from_vec).collect(),
            prov("test"),
        )
        .unwrap()
    }

    // -- bag construction -----------------------------------------------------

    fn line_set(id: &str, n: usize, step: f64, dim: usize, seed: u64) -> SampleSet {
        let mut r = rng(seed);
        SampleSet::new(
            id,
            (0..n).map(|j| [j as f64 * step, 0.0]).collect(),
            DMatrix::from_fn(dim, n, |_, _| r.gen_range(-1.0..1.0)),
        )
        .unwrap()
    }

    fn truth_at(positions: &[(f64, f64)], halo: f64) -> GroundTruthTable {
        GroundTruthTable::new(
            positions
                .iter()
                .map(|&(e, n)| TruthEntry {
                    position: [e, n],
                    class: TargetClass::Mt,
                    halo_m: halo,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_target_one_positive_bag() {
        // Positions 0.0 .. 2.0 at 0.1 m; halo 0.25 around 1.0 covers 5 columns.
        let set = line_set("lane0", 21, 0.1, 4, 1);
        let truth = truth_at(&[(1.0, 0.0)], 0.25);
        let bags = make_bags(&[set], &truth, 0.25, &[]).unwrap();
        let positives: Vec<&Bag> = bags.iter().filter(|b| b.label == BagLabel::Positive).collect();
        assert_eq!(positives.len(), 1);
        assert_eq!(positives[0].len(), 5); // 0.8, 0.9, 1.0, 1.1, 1.2
        assert_eq!(positives[0].provenance.sweep_id, "lane0");
        assert_eq!(positives[0].provenance.column_range, (8, 12));
    }

    #[test]
    fn blank_sweep_becomes_one_negative_bag() {
        let blank = line_set("blank0", 40, 0.1, 4, 2);
        let truth = truth_at(&[], 0.25);
        // No positives: make_bags still builds negatives; training would
        // reject this set, but construction is fine.
        let bags = make_bags(&[], &truth, 0.25, &[blank]).unwrap();
        assert_eq!(bags.len(), 1);
        assert_eq!(bags[0].label, BagLabel::Negative);
        assert_eq!(bags[0].len(), 40);
    }

    #[test]
    fn negative_bags_never_contain_halo_positions() {
        let set = line_set("lane0", 101, 0.05, 4, 3);
        let truth = truth_at(&[(1.0, 0.0), (4.0, 0.0)], 0.25);
        let bags = make_bags(&[set.clone()], &truth, 0.25, &[]).unwrap();
        for b in bags.iter().filter(|b| b.label == BagLabel::Negative) {
            // Audit: every negative instance's source position is beyond the
            // guard band of every truth entry.
            for inst in &b.instances {
                let j = (0..set.positions.len())
                    .find(|&j| (set.samples.column(j).into_owned() - inst).norm() == 0.0)
                    .expect("instance must come from the set");
                let p = set.positions[j];
                for e in &truth.entries {
                    assert!(distance(p, e.position) > NEGATIVE_GUARD_FACTOR * 0.25);
                }
            }
        }
    }

    #[test]
    fn target_without_samples_is_skipped() {
        let set = line_set("lane0", 11, 0.1, 4, 4);
        let truth = truth_at(&[(50.0, 50.0)], 0.25);
        let bags = make_bags(&[set], &truth, 0.25, &[]).unwrap();
        assert!(bags.iter().all(|b| b.label == BagLabel::Negative));
    }

    // -- objective -------------------------------------------------------------

    #[test]
    fn objective_extremes() {
        let bg = identity_bg(2);
        let s = DVector::from_vec(vec![1.0, 0.0]);
        let bags = vec![
            bag(BagLabel::Positive, vec![vec![3.0, 0.0]]),
            bag(BagLabel::Negative, vec![vec![0.0, 2.0]]),
        ];
        let obj = mil_objective(&s, &bags, &bg, GlrtKind::Ace).unwrap();
        assert!((obj - 1.0).abs() < 1e-12);

        let s_orth = DVector::from_vec(vec![0.0, 0.0]);
        let bags2 = vec![
            bag(BagLabel::Positive, vec![vec![0.0, 1.0]]),
            bag(BagLabel::Negative, vec![vec![0.0, -1.0]]),
        ];
        // A zero signature scores zero against everything.
        let obj2 = mil_objective(&s_orth, &bags2, &bg, GlrtKind::Smf).unwrap();
        assert_eq!(obj2, 0.0);
    }

    #[test]
    fn objective_matches_enumeration_oracle() {
        let bg = identity_bg(3);
        let mut r = rng(7);
        for kind in [GlrtKind::Smf, GlrtKind::Ace] {
            let mut mk = |label| {
                bag(
                    label,
                    (0..4)
                        .map(|_| (0..3).map(|_| r.gen_range(-2.0..2.0)).collect())
                        .collect(),
                )
            };
            let bags = vec![
                mk(BagLabel::Positive),
                mk(BagLabel::Positive),
                mk(BagLabel::Negative),
            ];
            let mut s = DVector::from_fn(3, |_, _| r.gen_range(-1.0..1.0));
            s /= s.norm();

            // Oracle: explicit loops straight from the definition.
            let stat = |x: &DVector<f64>| -> f64 {
                match kind {
                    GlrtKind::Smf => s.dot(x),
                    GlrtKind::Ace => {
                        let n = x.norm();
                        if n == 0.0 {
                            0.0
                        } else {
                            s.dot(x) / n
                        }
                    }
                }
            };
            let mut pos_terms = Vec::new();
            let mut neg_terms = Vec::new();
            for b in &bags {
                match b.label {
                    BagLabel::Positive => {
                        let mut best = f64::NEG_INFINITY;
                        for x in &b.instances {
                            best = best.max(stat(x));
                        }
                        pos_terms.push(best);
                    }
                    BagLabel::Negative => {
                        let mean =
                            b.instances.iter().map(stat).sum::<f64>() / b.instances.len() as f64;
                        neg_terms.push(mean);
                    }
                }
            }
            let oracle = pos_terms.iter().sum::<f64>() / pos_terms.len() as f64
                - neg_terms.iter().sum::<f64>() / neg_terms.len() as f64;

            let got = mil_objective(&s, &bags, &bg, kind).unwrap();
            assert!((got - oracle).abs() < 1e-12, "{kind:?}: {got} vs {oracle}");
        }
    }

    #[test]
    fn objective_requires_both_polarities() {
        let bg = identity_bg(2);
        let s = DVector::from_vec(vec![1.0, 0.0]);
        let only_pos = vec![bag(BagLabel::Positive, vec![vec![1.0, 0.0]])];
        assert!(mil_objective(&s, &only_pos, &bg, GlrtKind::Smf).is_err());
    }

    // -- training ----------------------------------------------------------------

    #[test]
    fn single_instance_training_collapses_to_it() {
        let bg = identity_bg(3);
        let instance = vec![2.0, -1.0, 2.0]; // norm 3
        let bags = vec![
            bag(BagLabel::Positive, vec![instance.clone()]),
            bag(BagLabel::Negative, vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]),
        ];
        let model = train_mi(&bags, &bg, GlrtKind::Smf, 50).unwrap();
        let expected = DVector::from_vec(instance).normalize();
        assert!((model.signature.clone() - expected).norm() < 1e-12);
        assert!(model.converged);
    }

    fn planted_bags(
        planted: &DVector<f64>,
        snr: f64,
        seed: u64,
    ) -> Vec<Bag> {
        let m = planted.len();
        let mut r = rng(seed);
        let mut noise_vec = |scale: f64| -> Vec<f64> {
            (0..m)
                .map(|_| {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
                })
                .collect()
        };
        let mut bags = Vec::new();
        for _ in 0..6 {
            let mut instances: Vec<Vec<f64>> = (0..4).map(|_| noise_vec(1.0)).collect();
            let mut hit = noise_vec(0.2);
            for i in 0..m {
                hit[i] += snr * planted[i];
            }
            instances.push(hit);
            bags.push(bag(BagLabel::Positive, instances));
        }
        for _ in 0..8 {
            bags.push(bag(
                BagLabel::Negative,
                (0..10).map(|_| noise_vec(1.0)).collect(),
            ));
        }
        bags
    }

    #[test]
    fn plant_and_recover() {
        let m = 8;
        let mut planted = DVector::from_fn(m, |i, _| ((i * 13 + 5) as f64 * 0.7).sin());
        planted /= planted.norm();
        let bg = identity_bg(m);
        for kind in [GlrtKind::Smf, GlrtKind::Ace] {
            let bags = planted_bags(&planted, 5.0, 99);
            let model = train_mi(&bags, &bg, kind, 100).unwrap();
            let cosine = model.signature.dot(&planted).abs();
            assert!(cosine >= 0.95, "{kind:?}: recovered cosine {cosine}");
        }
    }

    #[test]
    fn objective_trace_is_non_decreasing() {
        let m = 6;
        for seed in 0..5 {
            let mut planted = DVector::from_fn(m, |i, _| (seed as f64 + i as f64).cos());
            planted /= planted.norm();
            let bg = identity_bg(m);
            for kind in [GlrtKind::Smf, GlrtKind::Ace] {
                let bags = planted_bags(&planted, 2.0, 1000 + seed);
                let model = train_mi(&bags, &bg, kind, 50).unwrap();
                for w in model.objective_trace.windows(2) {
                    assert!(
                        w[1] >= w[0] - 1e-10,
                        "trace decreased: {:?}",
                        model.objective_trace
                    );
                }
            }
        }
    }

    #[test]
    fn converged_model_is_a_fixed_point() {
        let m = 5;
        let mut planted = DVector::from_fn(m, |i, _| (i as f64 + 0.3).sin());
        planted /= planted.norm();
        let bg = identity_bg(m);
        let bags = planted_bags(&planted, 4.0, 55);
        let model = train_mi(&bags, &bg, GlrtKind::Ace, 100).unwrap();
        assert!(model.converged);

        // One more alternation step must reproduce the same state.
        let whitened = whitened_bags(&bags, &bg, GlrtKind::Ace).unwrap();
        let selection = select_candidates(&model.signature, &whitened);
        assert_eq!(selection, model.selected_candidates);
        let updated = update_signature(&whitened, &selection, m);
        assert!((updated - &model.signature).norm() < 1e-12);
    }

    #[test]
    fn eq19_argmax_holds_for_returned_model() {
        let m = 6;
        let mut planted = DVector::from_fn(m, |i, _| (2.0 * i as f64).cos());
        planted /= planted.norm();
        let bg = identity_bg(m);
        let bags = planted_bags(&planted, 3.0, 77);
        let model = train_mi(&bags, &bg, GlrtKind::Smf, 100).unwrap();
        let whitened = whitened_bags(&bags, &bg, GlrtKind::Smf).unwrap();
        let mut sel = model.selected_candidates.iter();
        for (label, instances) in &whitened {
            if *label != BagLabel::Positive {
                continue;
            }
            let chosen = *sel.next().unwrap();
            let chosen_score = model.signature.dot(&instances[chosen]);
            for x in instances {
                assert!(model.signature.dot(x) <= chosen_score + 1e-12);
            }
        }
    }

    #[test]
    fn scaling_invariance() {
        let m = 5;
        let mut planted = DVector::from_fn(m, |i, _| (i as f64 * 1.1).sin());
        planted /= planted.norm();
        let bg = identity_bg(m);
        let base = planted_bags(&planted, 4.0, 31);
        let scaled: Vec<Bag> = base
            .iter()
            .map(|b| Bag {
                label: b.label,
                instances: b.instances.iter().map(|x| x * 7.5).collect(),
                provenance: b.provenance.clone(),
            })
            .collect();

        // MI-ACE: the signature itself is unchanged by common positive scaling.
        let a1 = train_mi(&base, &bg, GlrtKind::Ace, 100).unwrap();
        let a2 = train_mi(&scaled, &bg, GlrtKind::Ace, 100).unwrap();
        assert!((a1.signature.clone() - a2.signature).norm() < 1e-12);

        // MI-SMF: the selected candidates are unchanged.
        let s1 = train_mi(&base, &bg, GlrtKind::Smf, 100).unwrap();
        let s2 = train_mi(&scaled, &bg, GlrtKind::Smf, 100).unwrap();
        assert_eq!(s1.selected_candidates, s2.selected_candidates);
    }

    // -- detection with a trained model ----------------------------------------

    #[test]
    fn detect_with_model_basics() {
        let m = 4;
        let mut r = rng(3);
        let samples = DMatrix::from_fn(m, 400, |_, _| r.gen_range(-1.0..1.0));
        let bg = fit_background(&samples, None).unwrap();
        let mut sig = DVector::from_fn(m, |i, _| (i as f64 - 1.2).cos());
        sig /= sig.norm();

        let model_ace = MilModel {
            signature: sig.clone(),
            kind: GlrtKind::Ace,
            background: bg.clone(),
            objective_trace: vec![0.0],
            converged: true,
            selected_candidates: vec![],
        };
        // A sample whose whitened form is parallel to the signature.
        let x = bg.unwhiten_direction(&(sig.clone() * 3.0)).unwrap() + bg.mu();
        assert!((detect_with_model(&x, &model_ace).unwrap() - 1.0).abs() < 1e-10);

        let model_smf = MilModel {
            kind: GlrtKind::Smf,
            ..model_ace.clone()
        };
        assert!(detect_with_model(bg.mu(), &model_smf).unwrap().abs() < 1e-12);

        // Cross-module consistency: the unwhitened signature through the
        // detect module's SMF equals the model's whitened dot product.
        let s_unwhitened = bg.unwhiten_direction(&sig).unwrap();
        let probe = DVector::from_fn(m, |i, _| 0.3 * i as f64 - 0.4);
        let via_detect = smf(&probe, &s_unwhitened, &bg).unwrap();
        let via_model = detect_with_model(&probe, &model_smf).unwrap();
        assert!((via_detect - via_model).abs() < 1e-10);
    }

    #[test]
    fn model_file_round_trip_checks_hash() {
        let m = 3;
        let mut r = rng(13);
        let samples = DMatrix::from_fn(m, 50, |_, _| r.gen_range(-1.0..1.0));
        let bg = fit_background(&samples, None).unwrap();
        let bags = vec![
            bag(BagLabel::Positive, vec![vec![1.0, 2.0, 3.0]]),
            bag(BagLabel::Negative, vec![vec![0.1, 0.0, -0.1]]),
        ];
        let model = train_mi(&bags, &bg, GlrtKind::Ace, 20).unwrap();
        let file = model.to_file();
        let text = serde_json::to_string(&file).unwrap();
        let parsed: MilModelFile = serde_json::from_str(&text).unwrap();
        let back = parsed.into_model(bg.clone()).unwrap();
        assert_eq!(back.signature, model.signature);

        // Wrong background is rejected.
        let other = fit_background(
            &DMatrix::from_fn(m, 50, |_, _| r.gen_range(-1.0..1.0)),
            None,
        )
        .unwrap();
        let parsed2: MilModelFile = serde_json::from_str(&text).unwrap();
        assert!(parsed2.into_model(other).is_err());
    }

    use nalgebra::DMatrix;
}
