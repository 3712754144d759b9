//! Frame-sequential driver: background subtraction, accumulation,
//! subsampling, density filtering, clustering, tracking and compliance, with
//! the ND-JSON event log and per-stage timings.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accumulator::{subsample, Accumulator};
use crate::background::BackgroundModel;
use crate::cluster::{cluster, ClusterResult, NOISE};
use crate::compliance::{ComplianceEngine, ComplianceReport, HandEvent, Status, StatusChange};
use crate::config::PipelineConfig;
use crate::density::{kde, percentile_filter, DensityCloud};
use crate::error::{Error, Result};
use crate::frames::{CameraIntrinsics, Point3, PointCloudFrame};
use crate::scenegen::HandInterval;
use crate::tracker::{detections_from_clusters, SortTracker, TrackOutput};

pub const STAGES: [&str; 9] =
    ["subtract", "accumulate", "subsample", "kde", "percentile", "cluster", "boxes", "track", "compliance"];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    /// Milliseconds per entry of [`STAGES`].
    pub stages: [f64; 9],
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub size: usize,
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub centroid: [f64; 3],
    pub status: Status,
    pub color: String,
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub t: f64,
    pub gated: bool,
    /// Accumulated foreground points entering the density stage.
    pub points: usize,
    pub clusters: Vec<ClusterSummary>,
    pub tracks: Vec<TrackSummary>,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Frame(FrameRecord),
    StatusChange { t: f64, id: u64, status: Status },
    Error { frame: usize, t: f64, message: String },
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

impl From<StatusChange> for Event {
    fn from(c: StatusChange) -> Self {
        Event::StatusChange { t: c.t, id: c.id, status: c.status }
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub record: FrameRecord,
    pub changes: Vec<StatusChange>,
    pub timings: StageTimings,
}

pub struct Pipeline {
    config: PipelineConfig,
    intrinsics: CameraIntrinsics,
    background: BackgroundModel,
    accumulator: Accumulator,
    tracker: SortTracker,
    compliance: ComplianceEngine,
    frame: usize,
    last_t: Option<f64>,
    hand_present: bool,
    last_density: Option<DensityCloud>,
}

/// Per-frame subsampling seed.
pub fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Pipeline {
    pub fn new(config: PipelineConfig, background: BackgroundModel, intrinsics: CameraIntrinsics) -> Result<Self> {
        config.validate()?;
        intrinsics.validate()?;
        let background = if background.fine_radius() != config.fine_radius as f32 as f64 {
            background.with_fine_radius(config.fine_radius)?
        } else {
            background
        };
        Ok(Self {
            accumulator: Accumulator::new(config.accumulate_frames)?,
            tracker: SortTracker::new(config.sort_params())?,
            compliance: ComplianceEngine::new(config.compliance())?,
            config,
            intrinsics,
            background,
            frame: 0,
            last_t: None,
            hand_present: false,
            last_density: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn frames_processed(&self) -> usize {
        self.frame
    }

    pub fn confirmed_tracks(&self) -> Vec<TrackOutput> {
        self.tracker.confirmed()
    }

    /// Density cloud of the most recent ungated frame, if any.
    pub fn last_density(&self) -> Option<&DensityCloud> {
        self.last_density.as_ref()
    }

    pub fn report(&self) -> ComplianceReport {
        self.compliance.report()
    }

    /// Foreground detection on an accumulated cloud: subsample, density
    /// filter and cluster. Returns the clustered points with the result.
    fn detect(&mut self, cloud: &[Point3], t: &mut [f64; 9]) -> Result<(Vec<Point3>, ClusterResult)> {
        let clock = Instant::now();
        let sample = subsample(cloud, self.config.subsample_target, frame_seed(self.config.seed, self.frame));
        t[2] = ms(clock);
        if sample.is_empty() {
            self.last_density = None;
            return Ok((Vec::new(), ClusterResult { labels: Vec::new(), centroids: Vec::new(), sizes: Vec::new() }));
        }
        let clock = Instant::now();
        let density = kde(&sample, self.config.bandwidth)?;
        t[3] = ms(clock);
        let clock = Instant::now();
        let (kept, _) = percentile_filter(&density, self.config.percentile)?;
        t[4] = ms(clock);
        self.last_density = Some(density);
        let clock = Instant::now();
        let result = cluster(&kept, &self.config.cluster_params()?)?;
        t[5] = ms(clock);
        Ok((kept, result))
    }

    /// Processes one frame. `hand_present` is the hand detector's state at
    /// this frame; a change of state is forwarded to the compliance engine
    /// as an event at the frame timestamp.
    pub fn process_frame(&mut self, frame: &PointCloudFrame, hand_present: bool) -> Result<FrameOutput> {
        let start = Instant::now();
        let ts = frame.timestamp;
        if let Some(prev) = self.last_t {
            if !(ts > prev) {
                return Err(Error::Ordering { previous: prev, got: ts });
            }
        }
        self.last_t = Some(ts);
        let index = self.frame;
        self.frame += 1;

        let mut t = [0.0; 9];
        let mut changes = Vec::new();
        if hand_present != self.hand_present {
            changes.extend(self.compliance.on_hand_event(HandEvent { timestamp: ts, present: hand_present })?);
            self.hand_present = hand_present;
        }

        let mut clusters = Vec::new();
        let mut points = 0;
        let confirmed = if hand_present {
            // Counting and track aging pause while a hand is in the bath.
            self.tracker.confirmed()
        } else {
            let clock = Instant::now();
            let foreground = self.background.subtract(frame);
            t[0] = ms(clock);
            let clock = Instant::now();
            self.accumulator.push(foreground, ts)?;
            let cloud = self.accumulator.current_cloud();
            points = cloud.len();
            t[1] = ms(clock);

            let (kept, result) = self.detect(&cloud, &mut t)?;
            let clock = Instant::now();
            let (detections, _) = detections_from_clusters(&result, &kept, &self.intrinsics, self.config.box_mode());
            clusters = result
                .sizes
                .iter()
                .zip(&result.centroids)
                .map(|(&size, c)| ClusterSummary { size, centroid: c.to_array() })
                .collect();
            debug_assert_eq!(result.labels.iter().filter(|&&l| l != NOISE).count(), result.sizes.iter().sum::<usize>());
            t[6] = ms(clock);
            let clock = Instant::now();
            let confirmed = self.tracker.step(&detections)?;
            t[7] = ms(clock);
            confirmed
        };

        let clock = Instant::now();
        let ids: Vec<u64> = confirmed.iter().map(|c| c.id).collect();
        changes.extend(self.compliance.step(&ids, ts)?);
        let tracks = confirmed
            .iter()
            .map(|c| {
                let rec = self.compliance.record(c.id).expect("stepped ids have records");
                TrackSummary {
                    id: c.id,
                    bbox: c.bbox.to_array(),
                    centroid: c.centroid.to_array(),
                    status: rec.status,
                    color: rec.status.color().to_string(),
                    dwell: rec.dwell,
                }
            })
            .collect();
        t[8] = ms(clock);

        let record = FrameRecord { frame: index, t: ts, gated: hand_present, points, clusters, tracks };
        Ok(FrameOutput { record, changes, timings: StageTimings { stages: t, total: ms(start) } })
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Per-frame hand presence from ground-truth intervals.
pub fn hand_flags_from_intervals(frames: &[PointCloudFrame], intervals: &[HandInterval]) -> Vec<bool> {
    frames.iter().map(|f| intervals.iter().any(|iv| iv.contains(f.timestamp))).collect()
}

/// Parses a hand side-channel file: one `0`/`1` (or `false`/`true`) per
/// frame, blank lines ignored.
pub fn parse_hand_flags(text: &str) -> Result<Vec<bool>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| match l {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            other => Err(Error::Corrupt { frame: i, reason: format!("hand flag {other:?} is not 0 or 1") }),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: usize,
    pub errors: usize,
    pub config: PipelineConfig,
    pub compliance: ComplianceReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Vec<StageTimings>,
    /// Confirmed track count per frame.
    pub confirmed_counts: Vec<usize>,
}

/// Runs every frame, writing the event log to `events`. Frame-level failures
/// become error events and the run continues; they are counted in the
/// report.
pub fn run_sequence<W: Write>(
    pipeline: &mut Pipeline,
    frames: &[PointCloudFrame],
    hands: &[bool],
    mut events: W,
) -> Result<RunOutcome> {
    if hands.len() != frames.len() {
        return Err(Error::LengthMismatch { left: frames.len(), right: hands.len() });
    }
    let mut errors = 0;
    let mut timings = Vec::with_capacity(frames.len());
    let mut counts = Vec::with_capacity(frames.len());
    for (i, (frame, &hand)) in frames.iter().zip(hands).enumerate() {
        match pipeline.process_frame(frame, hand) {
            Ok(out) => {
                counts.push(out.record.tracks.len());
                timings.push(out.timings);
                writeln!(events, "{}", Event::Frame(out.record).to_line())?;
                for c in out.changes {
                    writeln!(events, "{}", Event::from(c).to_line())?;
                }
            }
            Err(e) => {
                errors += 1;
                log::error!("frame {i}: {e}");
                let t = frame.timestamp;
                writeln!(events, "{}", Event::Error { frame: i, t, message: e.to_string() }.to_line())?;
                let empty = FrameRecord { frame: i, t, gated: hand, points: 0, clusters: vec![], tracks: vec![] };
                writeln!(events, "{}", Event::Frame(empty).to_line())?;
                counts.push(0);
            }
        }
    }
    events.flush()?;
    Ok(RunOutcome {
        report: RunReport {
            frames: frames.len(),
            errors,
            config: pipeline.config().clone(),
            compliance: pipeline.report(),
        },
        timings,
        confirmed_counts: counts,
    })
}

/// Parses an event log back into events, reporting the offending line.
pub fn parse_events(text: &str) -> Result<Vec<Event>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("event log line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_background, generate_sequence, KnifePose, ScenarioSpec};

    fn model(spec: &ScenarioSpec) -> BackgroundModel {
        let prescan =
            generate_background(&ScenarioSpec { knives: vec![], frame_count: 5, seed: 99, ..spec.clone() }).unwrap();
        BackgroundModel::build(&prescan, 0.02, 0.01).unwrap()
    }

    fn one_knife() -> ScenarioSpec {
        ScenarioSpec {
            knives: vec![KnifePose { tip: Point3::new(0.0, 0.0, 0.75), yaw: 0.3 }],
            frame_count: 12,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn one_record_per_frame_and_confirmation() {
        let spec = one_knife();
        let (frames, _) = generate_sequence(&spec).unwrap();
        let mut p = Pipeline::new(PipelineConfig::default(), model(&spec), CameraIntrinsics::default()).unwrap();
        let mut log = Vec::new();
        let out = run_sequence(&mut p, &frames, &vec![false; frames.len()], &mut log).unwrap();
        let events = parse_events(std::str::from_utf8(&log).unwrap()).unwrap();
        let records: Vec<&FrameRecord> =
            events.iter().filter_map(|e| if let Event::Frame(r) = e { Some(r) } else { None }).collect();
        assert_eq!(records.len(), frames.len());
        assert!(records.iter().enumerate().all(|(i, r)| r.frame == i));
        assert_eq!(out.report.errors, 0);
        assert_eq!(out.confirmed_counts[0], 0);
        assert!(out.confirmed_counts[4..].iter().all(|&c| c == 1), "{:?}", out.confirmed_counts);
        for t in &out.timings {
            assert!(t.stages.iter().sum::<f64>() <= t.total + 1e-3);
        }
    }

    #[test]
    fn gated_frames_freeze_tracks() {
        let spec = one_knife();
        let (frames, _) = generate_sequence(&spec).unwrap();
        let mut p = Pipeline::new(PipelineConfig::default(), model(&spec), CameraIntrinsics::default()).unwrap();
        let mut hands = vec![false; frames.len()];
        hands[6..9].iter_mut().for_each(|h| *h = true);
        let mut last = Vec::new();
        for (f, &h) in frames.iter().zip(&hands) {
            let out = p.process_frame(f, h).unwrap();
            assert_eq!(out.record.gated, h);
            if h {
                assert!(out.record.clusters.is_empty());
                assert_eq!(out.record.tracks.iter().map(|t| t.id).collect::<Vec<_>>(), last);
                assert_eq!(out.record.tracks.iter().map(|t| t.dwell).collect::<Vec<_>>().len(), last.len());
            }
            last = out.record.tracks.iter().map(|t| t.id).collect();
        }
        let rec = &p.report().records[0];
        let lifetime = rec.last_seen - rec.first_seen;
        let gated = 3.0 / spec.frame_rate;
        assert!((rec.dwell - (lifetime - gated)).abs() < 1e-9, "{} vs {}", rec.dwell, lifetime - gated);
    }

    #[test]
    fn out_of_order_frame_rejected() {
        let spec = one_knife();
        let (frames, _) = generate_sequence(&spec).unwrap();
        let mut p = Pipeline::new(PipelineConfig::default(), model(&spec), CameraIntrinsics::default()).unwrap();
        p.process_frame(&frames[1], false).unwrap();
        assert!(matches!(p.process_frame(&frames[0], false), Err(Error::Ordering { .. })));
    }

    #[test]
    fn hand_flag_parsing() {
        assert_eq!(parse_hand_flags("0\n1\n\ntrue\nfalse\n").unwrap(), vec![false, true, true, false]);
        assert!(matches!(parse_hand_flags("0\n2\n"), Err(Error::Corrupt { frame: 1, .. })));
    }

    #[test]
    fn event_lines_have_expected_shape() {
        let e = Event::StatusChange { t: 12.5, id: 7, status: Status::Ready };
        assert_eq!(e.to_line(), r#"{"event":"status_change","t":12.5,"id":7,"status":"READY"}"#);
        let r = FrameRecord { frame: 0, t: 0.0, gated: false, points: 0, clusters: vec![], tracks: vec![] };
        let v: serde_json::Value = serde_json::from_str(&Event::Frame(r).to_line()).unwrap();
        for key in ["frame", "t", "clusters", "tracks", "gated"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
