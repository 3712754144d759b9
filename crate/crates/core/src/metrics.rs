//! Count-error metrics (MAE / RMSE / NRMSE) and identity-switch counting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::tracker::{hungarian, INFEASIBLE_COST};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries {
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

impl CountSeries {
    pub fn new(predicted: Vec<usize>, truth: Vec<usize>) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::LengthMismatch { left: predicted.len(), right: truth.len() });
        }
        if predicted.is_empty() {
            return Err(Error::Empty("count series"));
        }
        Ok(Self { predicted, truth })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountErrors {
    pub mae: f64,
    pub rmse: f64,
    /// RMSE divided by the number of objects in the scenario.
    pub nrmse: f64,
}

pub fn count_errors(series: &CountSeries, n_objects: usize) -> Result<CountErrors> {
    if n_objects == 0 {
        return Err(param("n_objects must be >= 1"));
    }
    if series.predicted.len() != series.truth.len() {
        return Err(Error::LengthMismatch { left: series.predicted.len(), right: series.truth.len() });
    }
    if series.predicted.is_empty() {
        return Err(Error::Empty("count series"));
    }
    let n = series.predicted.len() as f64;
    let diffs = series.predicted.iter().zip(&series.truth).map(|(&p, &t)| p as f64 - t as f64);
    let (abs_sum, sq_sum) = diffs.fold((0.0, 0.0), |(a, s), d| (a + d.abs(), s + d * d));
    let mae = abs_sum / n;
    let rmse = (sq_sum / n).sqrt();
    Ok(CountErrors { mae, rmse, nrmse: normalized_rmse(rmse, n_objects)? })
}

/// RMSE divided by the number of objects in the scenario.
pub fn normalized_rmse(rmse: f64, n_objects: usize) -> Result<f64> {
    if n_objects == 0 {
        return Err(param("n_objects must be >= 1"));
    }
    Ok(rmse / n_objects as f64)
}

/// Matches tracks to ground-truth objects frame by frame (minimum total
/// pixel distance, pairs farther than `gate` rejected).
///
/// `truth[f][o]` is object `o`'s pixel position in frame `f`; `tracks[f]` is
/// that frame's `(id, position)` list. Returns `assignment[o][f]`.
pub fn match_tracks_to_truth(
    truth: &[Vec<(f64, f64)>],
    tracks: &[Vec<(u64, (f64, f64))>],
    gate: f64,
) -> Vec<Vec<Option<u64>>> {
    let n_objects = truth.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = vec![vec![None; truth.len()]; n_objects];
    for (f, (objs, trks)) in truth.iter().zip(tracks).enumerate() {
        if objs.is_empty() || trks.is_empty() {
            continue;
        }
        let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let cost: Vec<Vec<f64>> = objs
            .iter()
            .map(|&o| {
                trks.iter()
                    .map(|&(_, t)| {
                        let d = dist(o, t);
                        if d <= gate {
                            d
                        } else {
                            INFEASIBLE_COST
                        }
                    })
                    .collect()
            })
            .collect();
        for (o, t) in hungarian(&cost).pairs {
            if cost[o][t] <= gate {
                out[o][f] = Some(trks[t].0);
            }
        }
    }
    out
}

/// Number of frames where an object's matched track id differs from the id
/// it was last matched to. Unmatched frames are skipped.
pub fn id_switches(assignment: &[Vec<Option<u64>>]) -> usize {
    assignment
        .iter()
        .map(|per_frame| {
            let mut prev: Option<u64> = None;
            let mut switches = 0;
            for id in per_frame.iter().flatten() {
                if prev.is_some_and(|p| p != *id) {
                    switches += 1;
                }
                prev = Some(*id);
            }
            switches
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub objects: usize,
    pub instances: usize,
    #[serde(flatten)]
    pub errors: CountErrors,
}

/// Detection errors for the 1-5 object scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<ScenarioRow>,
}

pub fn benchmark_table(rows: &[ScenarioRow]) -> Result<BenchmarkTable> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.objects);
    let objects: Vec<usize> = sorted.iter().map(|r| r.objects).collect();
    if objects != [1, 2, 3, 4, 5] {
        return Err(param(format!("benchmark table needs scenarios 1..=5 exactly once, got {objects:?}")));
    }
    Ok(BenchmarkTable { rows: sorted })
}

impl fmt::Display for BenchmarkTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>8} {:>8} {:>8}", "Object(s)", "MAE", "RMSE", "NRMSE")?;
        for r in &self.rows {
            writeln!(f, "{:>10} {:>8.3} {:>8.3} {:>8.3}", r.objects, r.errors.mae, r.errors.rmse, r.errors.nrmse)?;
        }
        Ok(())
    }
}
