//! Synthetic benchmark suite, event-log evaluation and latency statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::background::BackgroundModel;
use crate::config::PipelineConfig;
use crate::density::nearest_rank_percentile;
use crate::error::{Error, Result};
use crate::frames::{project_point, CameraIntrinsics, Point3};
use crate::metrics::{
    benchmark_table, count_errors, id_switches, match_tracks_to_truth, BenchmarkTable, CountErrors, CountSeries,
    ScenarioRow,
};
use crate::pipeline::{hand_flags_from_intervals, Event, FrameRecord, Pipeline, StageTimings, STAGES};
use crate::scenegen::{
    generate_background, generate_benchmark, generate_sequence, GroundTruth, KnifePose, Placement, ScenarioSpec,
};

/// Matching gate between track centres and projected knife tips, pixels.
pub const MATCH_GATE_PX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteSettings {
    pub instances: usize,
    pub frames: usize,
    pub prescan_frames: usize,
    pub seed: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self { instances: 50, frames: 15, prescan_frames: 10, seed: 2024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub table: BenchmarkTable,
    /// Predicted count per instance, grouped by knife count.
    pub predictions: BTreeMap<usize, Vec<usize>>,
}

/// Background model from an empty-bath prescan of `template`'s bath.
pub fn prescan_model(
    template: &ScenarioSpec,
    frames: usize,
    seed: u64,
    config: &PipelineConfig,
) -> Result<BackgroundModel> {
    let spec =
        ScenarioSpec { knives: Vec::new(), hand_intervals: Vec::new(), frame_count: frames, seed, ..template.clone() };
    BackgroundModel::build(&generate_background(&spec)?, config.voxel_size, config.fine_radius)
}

/// Runs `spec` through a fresh pipeline and returns the confirmed track
/// count after the final frame.
pub fn final_count(config: &PipelineConfig, model: &BackgroundModel, spec: &ScenarioSpec) -> Result<usize> {
    let (frames, truth) = generate_sequence(spec)?;
    let hands = hand_flags_from_intervals(&frames, &truth.hand_intervals());
    let mut pipeline = Pipeline::new(config.clone(), model.clone(), CameraIntrinsics::default())?;
    let mut last = 0;
    for (f, &h) in frames.iter().zip(&hands) {
        last = pipeline.process_frame(f, h)?.record.tracks.len();
    }
    Ok(last)
}

/// Five scenarios (1-5 knives) of randomly placed knives; each instance
/// contributes its final-frame confirmed count as the prediction.
pub fn run_suite(config: &PipelineConfig, settings: &SuiteSettings) -> Result<SuiteResult> {
    let template = ScenarioSpec { frame_count: settings.frames, ..Default::default() };
    let model = prescan_model(&template, settings.prescan_frames, settings.seed ^ 0xB47, config)?;
    let cases = generate_benchmark(1..=5, settings.instances, settings.seed, &template, &Placement::default())?;
    let mut predictions: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (spec, _) in &cases {
        let n = final_count(config, &model, spec)?;
        predictions.entry(spec.knives.len()).or_default().push(n);
    }
    let rows = predictions
        .iter()
        .map(|(&objects, preds)| {
            let series = CountSeries::new(preds.clone(), vec![objects; preds.len()])?;
            Ok(ScenarioRow { objects, instances: preds.len(), errors: count_errors(&series, objects)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult { table: benchmark_table(&rows)?, predictions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            median: nearest_rank_percentile(values, 50.0)?,
            p95: nearest_rank_percentile(values, 95.0)?,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub mean_points: f64,
    pub max_points: usize,
    /// Milliseconds.
    pub end_to_end: LatencyStats,
    pub stages: BTreeMap<String, LatencyStats>,
}

/// Latency statistics over `timings`, skipping the first `warmup` frames.
pub fn bench_report(timings: &[StageTimings], points: &[usize], warmup: usize) -> Result<BenchReport> {
    if timings.len() != points.len() {
        return Err(Error::LengthMismatch { left: timings.len(), right: points.len() });
    }
    let t = &timings[warmup.min(timings.len())..];
    let pts = &points[warmup.min(points.len())..];
    let totals: Vec<f64> = t.iter().map(|x| x.total).collect();
    let end_to_end = LatencyStats::of(&totals).ok_or(Error::Empty("bench frames after warmup"))?;
    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let v: Vec<f64> = t.iter().map(|x| x.stages[i]).collect();
            (name.to_string(), LatencyStats::of(&v).expect("non-empty"))
        })
        .collect();
    Ok(BenchReport {
        frames: t.len(),
        mean_points: pts.iter().sum::<usize>() as f64 / pts.len() as f64,
        max_points: pts.iter().copied().max().unwrap_or(0),
        end_to_end,
        stages,
    })
}

/// Five knives sampled densely enough that the accumulated cloud sits just
/// under 20 000 points with the default window.
pub fn bench_scenario(frames: usize, seed: u64) -> ScenarioSpec {
    let tips = [(-0.15, -0.08), (0.0, -0.1), (0.15, -0.06), (-0.08, 0.08), (0.1, 0.09)];
    ScenarioSpec {
        knives: tips
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| KnifePose { tip: Point3::new(x, y, 0.74), yaw: i as f64 * 1.2 })
            .collect(),
        frame_count: frames,
        points_per_knife: 780,
        seed,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub frames: usize,
    pub objects: usize,
    pub errors: CountErrors,
    pub id_switches: usize,
}

/// Scores an event log against ground truth: per-frame confirmed-track
/// counts after `warmup` frames, and identity switches of tracks matched to
/// projected knife tips.
pub fn evaluate_log(events: &[Event], truth: &GroundTruth, k: &CameraIntrinsics, warmup: usize) -> Result<EvalResult> {
    let records: Vec<&FrameRecord> =
        events.iter().filter_map(|e| if let Event::Frame(r) = e { Some(r) } else { None }).collect();
    if records.len() != truth.counts.len() {
        return Err(Error::LengthMismatch { left: records.len(), right: truth.counts.len() });
    }
    let start = warmup.min(records.len().saturating_sub(1));
    let predicted: Vec<usize> = records[start..].iter().map(|r| r.tracks.len()).collect();
    let series = CountSeries::new(predicted, truth.counts[start..].to_vec())?;
    let objects = truth.knives.len().max(1);
    let errors = count_errors(&series, objects)?;

    let tips: Vec<(f64, f64)> = truth
        .knives
        .iter()
        .map(|kn| {
            let px = project_point(Point3::new(kn.tip[0], kn.tip[1], kn.tip[2]), k)?;
            Ok((px.u, px.v))
        })
        .collect::<Result<_>>()?;
    let truth_px: Vec<Vec<(f64, f64)>> = records[start..].iter().map(|_| tips.clone()).collect();
    let tracks: Vec<Vec<(u64, (f64, f64))>> = records[start..]
        .iter()
        .map(|r| {
            r.tracks.iter().map(|t| (t.id, ((t.bbox[0] + t.bbox[2]) / 2.0, (t.bbox[1] + t.bbox[3]) / 2.0))).collect()
        })
        .collect();
    let assignment = match_tracks_to_truth(&truth_px, &tracks, MATCH_GATE_PX);
    Ok(EvalResult {
        frames: series.predicted.len(),
        objects: truth.knives.len(),
        errors,
        id_switches: id_switches(&assignment),
    })
}
