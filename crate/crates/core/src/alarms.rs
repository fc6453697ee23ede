//! Alarm generation: confidence-weighted mean-shift plus connected-components
//! quantization.
//!
//! Every map point seeds a mean-shift iteration whose update is the
//! RBF-kernel, confidence-weighted mean of all map positions; seeds converge
//! onto local maxima of the confidence surface. Converged points within
//! `epsilon` of each other collapse into one alarm whose confidence is a
//! distance-tapered mean of the original map values around the cluster
//! center.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::detect::ConfidenceMap;
use crate::error::{Error, Result};
use crate::measurement::{distance, Position};

fn default_sigma() -> f64 {
    0.075
}
fn default_tau() -> f64 {
    0.001
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_conf_radius() -> f64 {
    0.25
}
fn default_max_iters() -> usize {
    500
}

/// Mean-shift and clustering parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanShiftParams {
    /// RBF bandwidth (m²); divisor of the squared distance in the kernel.
    pub sigma: f64,
    /// Convergence threshold on the shift length (m).
    pub tau: f64,
    /// Connected-components linking radius (m).
    pub epsilon: f64,
    /// Radius for aggregating the final alarm confidence (m).
    pub conf_radius: f64,
    /// Iteration cap per seed.
    pub max_iters: usize,
}

impl Default for MeanShiftParams {
    fn default() -> Self {
        MeanShiftParams {
            sigma: default_sigma(),
            tau: default_tau(),
            epsilon: default_epsilon(),
            conf_radius: default_conf_radius(),
            max_iters: default_max_iters(),
        }
    }
}

impl MeanShiftParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("conf_radius", self.conf_radius),
            ("max_iters", self.max_iters as f64),
        ];
        for (name, v) in fields {
            if !(v > 0.0) {
                return Err(Error::invalid(
                    "mean shift params",
                    format!("{name} must be > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// One declared point of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub position: Position,
    pub confidence: f64,
    /// Number of converged map points in this alarm's cluster.
    pub support_count: usize,
}

/// Converged seed positions for every map point.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftResult {
    pub converged: Vec<Position>,
    /// Seeds that hit the iteration cap before reaching `tau`.
    pub hit_cap: Vec<bool>,
    /// Set when every confidence is zero: the update is undefined and the
    /// inputs are returned unchanged.
    pub degenerate: bool,
}

/// Iterate every map point to its confidence-weighted kernel mode.
///
/// Confidences must be non-negative; shift negative-valued statistics before
/// calling. An all-zero map leaves the update undefined and is returned
/// unchanged with the degenerate flag set.
pub fn mean_shift(map: &ConfidenceMap, params: &MeanShiftParams) -> Result<MeanShiftResult> {
    params.validate()?;
    if map.is_empty() {
        return Err(Error::invalid("confidence map", "empty map"));
    }
    if map.confidences.iter().any(|&c| c < 0.0) {
        return Err(Error::invalid(
            "confidence map",
            "mean shift requires non-negative confidences",
        ));
    }

    let n = map.len();
    if map.confidences.iter().all(|&c| c == 0.0) {
        return Ok(MeanShiftResult {
            converged: map.positions.clone(),
            hit_cap: vec![false; n],
            degenerate: true,
        });
    }

    let mut converged = Vec::with_capacity(n);
    let mut hit_cap = vec![false; n];
    for (j, &seed) in map.positions.iter().enumerate() {
        let mut p = seed;
        let mut capped = true;
        for _ in 0..params.max_iters {
            let mut weight_sum = 0.0;
            let mut next = [0.0, 0.0];
            for (i, &pi) in map.positions.iter().enumerate() {
                let d2 = (p[0] - pi[0]).powi(2) + (p[1] - pi[1]).powi(2);
                let w = map.confidences[i] * (-0.5 * d2 / params.sigma).exp();
                weight_sum += w;
                next[0] += w * pi[0];
                next[1] += w * pi[1];
            }
            if weight_sum == 0.0 {
                // Kernel underflow far from all mass; stop where we are.
                break;
            }
            next[0] /= weight_sum;
            next[1] /= weight_sum;
            let shift = distance(p, next);
            p = next;
            if shift <= params.tau {
                capped = false;
                break;
            }
        }
        hit_cap[j] = capped;
        converged.push(p);
    }
    Ok(MeanShiftResult {
        converged,
        hit_cap,
        degenerate: false,
    })
}

/// Group points into connected components under ε-ball linking.
///
/// Returns clusters of point indices; each input point lands in exactly one
/// cluster. Clusters are ordered by their smallest member index.
pub fn quantize_alarms(points: &[Position], epsilon: f64) -> Result<Vec<Vec<usize>>> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "linking radius must be > 0"));
    }
    let n = points.len();
    let mut cluster_of = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if cluster_of[start] != usize::MAX {
            continue;
        }
        // Breadth-first flood over the ε-neighbor graph.
        let id = clusters.len();
        let mut members = vec![start];
        cluster_of[start] = id;
        let mut frontier = vec![start];
        while let Some(v) = frontier.pop() {
            for u in 0..n {
                if cluster_of[u] == usize::MAX && distance(points[v], points[u]) <= epsilon {
                    cluster_of[u] = id;
                    members.push(u);
                    frontier.push(u);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    Ok(clusters)
}

/// Distance-weighting law for the final alarm confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// `w = 1 - d / r`, zero at the radius.
    #[default]
    LinearTaper,
    /// `w = 1 / (1 + d / r)`.
    InverseDistance,
}

/// Mean map confidence around `center`, weighted down with distance.
///
/// Returns `None` when no map point lies within `conf_radius`.
pub fn alarm_confidence(
    center: Position,
    map: &ConfidenceMap,
    conf_radius: f64,
) -> Option<f64> {
    alarm_confidence_with(center, map, conf_radius, WeightLaw::LinearTaper)
}

/// [`alarm_confidence`] with an explicit weighting law.
pub fn alarm_confidence_with(
    center: Position,
    map: &ConfidenceMap,
    conf_radius: f64,
    law: WeightLaw,
) -> Option<f64> {
    let mut weight_sum = 0.0;
    let mut value_sum = 0.0;
    let mut in_radius = 0usize;
    let mut plain_sum = 0.0;
    for (p, &c) in map.positions.iter().zip(&map.confidences) {
        let d = distance(*p, center);
        if d > conf_radius {
            continue;
        }
        in_radius += 1;
        plain_sum += c;
        let w = match law {
            WeightLaw::LinearTaper => (1.0 - d / conf_radius).max(0.0),
            WeightLaw::InverseDistance => 1.0 / (1.0 + d / conf_radius),
        };
        weight_sum += w;
        value_sum += w * c;
    }
    if in_radius == 0 {
        return None;
    }
    if weight_sum == 0.0 {
        // Every in-radius point sits exactly on the rim; fall back to the
        // plain mean.
        return Some(plain_sum / in_radius as f64);
    }
    Some(value_sum / weight_sum)
}

/// Alarms for one confidence map.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmSet {
    /// Sorted by descending confidence.
    pub alarms: Vec<Alarm>,
    /// Set when the map had no modes (all confidences equal).
    pub degenerate: bool,
}

impl AlarmSet {
    pub fn save_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "easting,northing,confidence,support_count")?;
        for a in &self.alarms {
            writeln!(
                sink,
                "{},{},{},{}",
                a.position[0], a.position[1], a.confidence, a.support_count
            )?;
        }
        Ok(())
    }

    pub fn load_csv<R: Read>(source: R) -> Result<AlarmSet> {
        let reader = BufReader::new(source);
        let mut alarms = Vec::new();
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
            alarms.push(Alarm {
                position: [parse(0)?, parse(1)?],
                confidence: parse(2)?,
                support_count: fields[3].trim().parse().map_err(|e| {
                    Error::parse(format!("line {}, col 4", line_no + 1), e)
                })?,
            });
        }
        Ok(AlarmSet {
            alarms,
            degenerate: false,
        })
    }
}

/// Full alarm generation: min-shift the confidences, run mean-shift, quantize
/// the converged points, and aggregate confidences on the original scale.
///
/// Alarms are sorted by descending confidence. A uniform map min-shifts to
/// all zeros (no modes), produces no alarms, and sets the degenerate flag.
pub fn generate_alarms(map: &ConfidenceMap, params: &MeanShiftParams) -> Result<AlarmSet> {
    generate_alarms_with(map, params, WeightLaw::LinearTaper)
}

/// [`generate_alarms`] with an explicit confidence weighting law.
pub fn generate_alarms_with(
    map: &ConfidenceMap,
    params: &MeanShiftParams,
    law: WeightLaw,
) -> Result<AlarmSet> {
    params.validate()?;
    if map.is_empty() {
        return Err(Error::invalid("confidence map", "empty map"));
    }

    // Min-shift so the kernel weights are non-negative with a zero floor;
    // alarm confidences are still reported on the original scale.
    let c_min = map.confidences.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted = {
        let mut m = map.clone();
        for c in &mut m.confidences {
            *c -= c_min;
        }
        m
    };

    let shift = mean_shift(&shifted, params)?;
    if shift.degenerate {
        return Ok(AlarmSet {
            alarms: Vec::new(),
            degenerate: true,
        });
    }

    let clusters = quantize_alarms(&shift.converged, params.epsilon)?;
    let mut alarms = Vec::with_capacity(clusters.len());
    for members in &clusters {
        // Cluster position: confidence-weighted mean of converged members.
        let mut w_sum = 0.0;
        let mut pos = [0.0, 0.0];
        for &i in members {
            let w = shifted.confidences[i];
            w_sum += w;
            pos[0] += w * shift.converged[i][0];
            pos[1] += w * shift.converged[i][1];
        }
        let center = if w_sum > 0.0 {
            [pos[0] / w_sum, pos[1] / w_sum]
        } else {
            let k = members.len() as f64;
            [
                members.iter().map(|&i| shift.converged[i][0]).sum::<f64>() / k,
                members.iter().map(|&i| shift.converged[i][1]).sum::<f64>() / k,
            ]
        };
        match alarm_confidence_with(center, map, params.conf_radius, law) {
            Some(confidence) => alarms.push(Alarm {
                position: center,
                confidence,
                support_count: members.len(),
            }),
            None => log::warn!(
                "alarm at {center:?} has no map support within {} m; dropped",
                params.conf_radius
            ),
        }
    }
    alarms.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.position[0].partial_cmp(&b.position[0]).unwrap())
            .then(a.position[1].partial_cmp(&b.position[1]).unwrap())
    });
    Ok(AlarmSet {
        alarms,
        degenerate: false,
    })
}
