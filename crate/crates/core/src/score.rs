//! Alarm scoring: halo-based truth matching and ROC curves.
//!
//! Alarms are matched greedily in descending confidence order; an alarm
//! inside the halo of a still-unmatched, scoreable target becomes a hit and
//! everything else is a false alarm. Clutter entries never match. The ROC
//! sweeps a threshold over the distinct confidences, reporting probability of
//! detection against false alarms per square meter of swept area.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::alarms::Alarm;
use crate::error::{Error, Result};
use crate::measurement::distance;
use crate::synthgen::GroundTruthTable;

/// Alarms split into hits and false alarms against one truth table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredAlarmSet {
    /// Matched alarms with the index of their truth entry.
    pub hits: Vec<(Alarm, usize)>,
    pub false_alarms: Vec<Alarm>,
    /// Scoreable target count (clutter excluded).
    pub n_targets: usize,
    /// Swept area in m² (denominator of the false alarm rate).
    pub swept_area: f64,
}

/// Greedy highest-confidence-first matching.
///
/// Ties in confidence are broken by alarm distance to the nearest candidate
/// target; each target matches at most once and each alarm is classified
/// exactly once.
pub fn match_alarms(
    alarms: &[Alarm],
    truth: &GroundTruthTable,
    swept_area: f64,
) -> Result<ScoredAlarmSet> {
    if !(swept_area > 0.0) {
        return Err(Error::invalid("swept area", "must be > 0"));
    }
    let n_targets = truth.n_scoreable();

    let mut order: Vec<usize> = (0..alarms.len()).collect();
    let nearest_candidate = |a: &Alarm| -> f64 {
        truth
            .entries
            .iter()
            .filter(|e| e.class.is_scoreable())
            .map(|e| distance(a.position, e.position))
            .fold(f64::INFINITY, f64::min)
    };
    order.sort_by(|&i, &j| {
        alarms[j]
            .confidence
            .partial_cmp(&alarms[i].confidence)
            .unwrap()
            .then(
                nearest_candidate(&alarms[i])
                    .partial_cmp(&nearest_candidate(&alarms[j]))
                    .unwrap(),
            )
    });

    let mut matched = vec![false; truth.entries.len()];
    let mut hits = Vec::new();
    let mut false_alarms = Vec::new();
    for &i in &order {
        let alarm = &alarms[i];
        // Nearest unmatched scoreable target whose halo contains the alarm.
        let mut best: Option<(usize, f64)> = None;
        for (t, entry) in truth.entries.iter().enumerate() {
            if matched[t] || !entry.class.is_scoreable() {
                continue;
            }
            let d = distance(alarm.position, entry.position);
            if d <= entry.halo_m {
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((t, d));
                }
            }
        }
        match best {
            Some((t, _)) => {
                matched[t] = true;
                hits.push((alarm.clone(), t));
            }
            None => false_alarms.push(alarm.clone()),
        }
    }

    Ok(ScoredAlarmSet {
        hits,
        false_alarms,
        n_targets,
        swept_area,
    })
}

/// One operating point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Confidence threshold producing this point.
    pub threshold: f64,
    /// False alarms per m² at or above the threshold.
    pub far_per_m2: f64,
    /// Fraction of targets detected at or above the threshold.
    pub pd: f64,
}

/// Detection/false-alarm trade-off curve, ordered by descending threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn save_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "threshold,far_per_m2,pd")?;
        for p in &self.points {
            writeln!(sink, "{},{},{}", p.threshold, p.far_per_m2, p.pd)?;
        }
        Ok(())
    }

    pub fn load_csv<R: Read>(source: R) -> Result<RocCurve> {
        let reader = BufReader::new(source);
        let mut points = Vec::new();
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
            points.push(RocPoint {
                threshold: parse(0)?,
                far_per_m2: parse(1)?,
                pd: parse(2)?,
            });
        }
        Ok(RocCurve { points })
    }
}

/// Build the ROC curve by sweeping a threshold over the distinct alarm
/// confidences in descending order.
pub fn roc(scored: &ScoredAlarmSet) -> Result<RocCurve> {
    if scored.n_targets == 0 {
        return Err(Error::invalid("scored set", "no scoreable targets"));
    }
    let mut thresholds: Vec<f64> = scored
        .hits
        .iter()
        .map(|(a, _)| a.confidence)
        .chain(scored.false_alarms.iter().map(|a| a.confidence))
        .collect();
    if thresholds.is_empty() {
        return Ok(RocCurve {
            points: vec![RocPoint {
                threshold: f64::INFINITY,
                far_per_m2: 0.0,
                pd: 0.0,
            }],
        });
    }
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let points = thresholds
        .into_iter()
        .map(|t| {
            let hit_count = scored
                .hits
                .iter()
                .filter(|(a, _)| a.confidence >= t)
                .count();
            let fa_count = scored
                .false_alarms
                .iter()
                .filter(|a| a.confidence >= t)
                .count();
            RocPoint {
                threshold: t,
                far_per_m2: fa_count as f64 / scored.swept_area,
                pd: hit_count as f64 / scored.n_targets as f64,
            }
        })
        .collect();
    Ok(RocCurve { points })
}

/// Best detection probability at or under a false-alarm-rate budget.
pub fn pd_at_far(curve: &RocCurve, far_budget: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.far_per_m2 <= far_budget)
        .map(|p| p.pd)
        .fold(0.0, f64::max)
}
