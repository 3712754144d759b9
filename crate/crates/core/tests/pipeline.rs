mod common;

use std::time::Instant;

use sanitrack::accumulator::subsample;
use sanitrack::background::BackgroundModel;
use sanitrack::config::PipelineConfig;
use sanitrack::density::kde;
use sanitrack::evaluation::{bench_scenario, evaluate_log, prescan_model};
use sanitrack::pipeline::{hand_flags_from_intervals, parse_events, run_sequence, Event, FrameRecord, Pipeline};
use sanitrack::scenegen::{generate_sequence, HandInterval, KnifePose, ScenarioSpec};
use sanitrack::{CameraIntrinsics, Point3};

fn three_knives(frames: usize) -> ScenarioSpec {
    ScenarioSpec {
        knives: vec![
            KnifePose { tip: Point3::new(-0.15, -0.05, 0.75), yaw: 0.2 },
            KnifePose { tip: Point3::new(0.0, 0.08, 0.78), yaw: 1.9 },
            KnifePose { tip: Point3::new(0.14, -0.06, 0.74), yaw: 3.5 },
        ],
        frame_count: frames,
        seed: 21,
        ..Default::default()
    }
}

fn model_for(spec: &ScenarioSpec, config: &PipelineConfig) -> BackgroundModel {
    prescan_model(spec, 10, 777, config).unwrap()
}

fn run(spec: &ScenarioSpec, config: &PipelineConfig, hands: Option<Vec<bool>>) -> (Vec<u8>, Vec<usize>) {
    let (frames, truth) = generate_sequence(spec).unwrap();
    let hands = hands.unwrap_or_else(|| hand_flags_from_intervals(&frames, &truth.hand_intervals()));
    let mut p = Pipeline::new(config.clone(), model_for(spec, config), CameraIntrinsics::default()).unwrap();
    let mut log = Vec::new();
    let out = run_sequence(&mut p, &frames, &hands, &mut log).unwrap();
    assert_eq!(out.report.errors, 0);
    (log, out.confirmed_counts)
}

fn records(log: &[u8]) -> Vec<FrameRecord> {
    parse_events(std::str::from_utf8(log).unwrap())
        .unwrap()
        .into_iter()
        .filter_map(|e| if let Event::Frame(r) = e { Some(r) } else { None })
        .collect()
}

#[test]
fn empty_bath_never_confirms_a_track() {
    let spec = ScenarioSpec { frame_count: 60, seed: 4, ..Default::default() };
    let (_, counts) = run(&spec, &PipelineConfig::default(), None);
    assert!(counts.iter().all(|&c| c == 0), "{counts:?}");
}

#[test]
fn three_static_knives_reach_steady_count_early() {
    let (log, counts) = run(&three_knives(150), &PipelineConfig::default(), None);
    let first = counts.iter().position(|&c| c == 3).expect("count reaches 3");
    assert!(first <= 10, "first frame with 3 tracks: {first}");
    assert!(counts[first..].iter().all(|&c| c == 3), "{counts:?}");
    let recs = records(&log);
    let ids: std::collections::BTreeSet<u64> =
        recs[first..].iter().flat_map(|r| r.tracks.iter().map(|t| t.id)).collect();
    assert_eq!(ids.len(), 3);
}

#[test]
fn identical_runs_give_identical_logs() {
    let config = PipelineConfig { seed: 1234, ..Default::default() };
    let spec = three_knives(40);
    assert_eq!(run(&spec, &config, None).0, run(&spec, &config, None).0);
}

#[test]
fn seed_only_changes_the_subsample() {
    let spec = bench_scenario(12, 3);
    let a = run(&spec, &PipelineConfig { seed: 1, ..Default::default() }, None).0;
    let b = run(&spec, &PipelineConfig { seed: 2, ..Default::default() }, None).0;
    assert_ne!(a, b);
}

#[test]
fn halving_the_subsample_speeds_up_density() {
    let spec = bench_scenario(5, 8);
    let config = PipelineConfig::default();
    let model = model_for(&spec, &config);
    let (frames, _) = generate_sequence(&spec).unwrap();
    let cloud: Vec<Point3> = frames.iter().flat_map(|f| model.subtract(f)).collect();
    let time_for = |target: usize| {
        let sample = subsample(&cloud, target, 9);
        let mut runs: Vec<f64> = (0..15)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(kde(&sample, config.bandwidth).unwrap());
                t.elapsed().as_secs_f64()
            })
            .collect();
        runs.sort_by(f64::total_cmp);
        runs[runs.len() / 2]
    };
    let (full, half) = (time_for(4000), time_for(2000));
    assert!(half < full, "half {half} full {full}");
}

#[test]
fn easy_scenario_evaluates_to_zero_error() {
    let spec = three_knives(60);
    let (log, _) = run(&spec, &PipelineConfig::default(), None);
    let (_, truth) = generate_sequence(&spec).unwrap();
    let events = parse_events(std::str::from_utf8(&log).unwrap()).unwrap();
    let res = evaluate_log(&events, &truth, &CameraIntrinsics::default(), 10).unwrap();
    assert_eq!((res.errors.mae, res.errors.rmse, res.errors.nrmse), (0.0, 0.0, 0.0));
    assert_eq!(res.id_switches, 0);
    assert_eq!(res.frames, 50);
}

#[test]
fn gated_time_is_excluded_from_dwell() {
    let mut spec = three_knives(150);
    spec.knives.truncate(1);
    spec.hand_intervals = vec![HandInterval { start: 1.5, end: 2.5 }, HandInterval { start: 3.9, end: 4.2 }];
    let (frames, truth) = generate_sequence(&spec).unwrap();
    let hands = hand_flags_from_intervals(&frames, &truth.hand_intervals());
    let (log, _) = run(&spec, &PipelineConfig::default(), Some(hands.clone()));
    let recs = records(&log);

    // Gates open and close at the first frame whose flag differs.
    let mut gates = Vec::new();
    let mut open = None;
    for (f, &h) in frames.iter().zip(&hands) {
        match (open, h) {
            (None, true) => open = Some(f.timestamp),
            (Some(s), false) => {
                gates.push((s, f.timestamp));
                open = None;
            }
            _ => {}
        }
    }
    assert_eq!(gates.len(), 2);
    let first = recs.iter().find(|r| !r.tracks.is_empty()).unwrap();
    let last = recs.last().unwrap();
    assert_eq!(last.tracks.len(), 1);
    let want = common::uncovered_length(first.t, last.t, &gates);
    assert!((last.tracks[0].dwell - want).abs() < 1e-9, "{} vs {want}", last.tracks[0].dwell);
    assert!(recs.iter().filter(|r| r.gated).all(|r| r.clusters.is_empty() && r.points == 0));
}

#[test]
fn event_lines_round_trip() {
    let (log, _) = run(&three_knives(20), &PipelineConfig::default(), None);
    let text = std::str::from_utf8(&log).unwrap();
    let events = parse_events(text).unwrap();
    let again: String = events.iter().map(|e| e.to_line() + "\n").collect();
    assert_eq!(again, text);
}
