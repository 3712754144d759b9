//! Deterministic synthetic depth scenes: an empty sterilizer bath for the
//! prescan, and knife scenarios with exact ground truth.
//!
//! The bath is an open box seen from a camera at the origin looking down +z.
//! Its floor and side walls are sampled on a fixed grid (one sample per
//! "pixel"), and every frame perturbs those samples with Gaussian noise and
//! random dropout. Knife handles are cylinders with a hemispherical cap at
//! the tip whose sampling weight falls off linearly from the tip to the base.
//!
//! Every random stream is a ChaCha stream keyed by `(seed, frame, component)`,
//! so the background part of a knife scenario is bit-identical to the empty
//! scene with the same seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::frames::{Point3, PointCloudFrame};

pub const MAX_KNIVES: usize = 8;

const STREAM_BACKGROUND: u64 = 0;
const STREAM_KNIVES: u64 = 1;
const STREAM_HAND: u64 = 2;

/// Axis-aligned box of the sterilizer bath; `min.z` is the rim, `max.z` the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathGeometry {
    pub min: Point3,
    pub max: Point3,
}

impl Default for BathGeometry {
    /// 0.6 m x 0.4 m x 0.3 m, floor 1.0 m below the camera.
    fn default() -> Self {
        Self { min: Point3::new(-0.3, -0.2, 0.7), max: Point3::new(0.3, 0.2, 1.0) }
    }
}

impl BathGeometry {
    pub fn contains(&self, p: Point3, margin: f64) -> bool {
        (0..3).all(|a| p.axis(a) >= self.min.axis(a) - margin && p.axis(a) <= self.max.axis(a) + margin)
    }

    fn size(&self) -> Point3 {
        self.max - self.min
    }

    /// Fixed sample positions on the floor and the four side walls, roughly
    /// `target` of them, evenly spaced.
    pub fn surface_grid(&self, target: usize) -> Vec<Point3> {
        let s = self.size();
        let area = s.x * s.y + 2.0 * s.y * s.z + 2.0 * s.x * s.z;
        if target == 0 || area <= 0.0 {
            return Vec::new();
        }
        let spacing = (area / target as f64).sqrt();
        let cells = |len: f64| ((len / spacing).round() as usize).max(1);
        let centers = |lo: f64, len: f64| {
            let n = cells(len);
            (0..n).map(move |i| lo + (i as f64 + 0.5) * len / n as f64)
        };
        let mut out = Vec::with_capacity(target + target / 10);
        for x in centers(self.min.x, s.x) {
            for y in centers(self.min.y, s.y) {
                out.push(Point3::new(x, y, self.max.z));
            }
        }
        for wall_x in [self.min.x, self.max.x] {
            for y in centers(self.min.y, s.y) {
                for z in centers(self.min.z, s.z) {
                    out.push(Point3::new(wall_x, y, z));
                }
            }
        }
        for wall_y in [self.min.y, self.max.y] {
            for x in centers(self.min.x, s.x) {
                for z in centers(self.min.z, s.z) {
                    out.push(Point3::new(x, wall_y, z));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnifeModel {
    pub radius: f64,
    pub length: f64,
    /// Angle between the handle axis and the camera axis.
    pub tilt: f64,
    /// Relative sampling weight at the handle base (tip weight is 1).
    pub base_weight: f64,
}

impl Default for KnifeModel {
    fn default() -> Self {
        Self { radius: 0.01, length: 0.12, tilt: 20f64.to_radians(), base_weight: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnifePose {
    /// Centre of the hemispherical tip cap.
    pub tip: Point3,
    pub yaw: f64,
}

impl KnifePose {
    /// Unit vector from the tip towards the handle base (pointing into the bath).
    pub fn axis(&self, model: &KnifeModel) -> Point3 {
        let (st, ct) = model.tilt.sin_cos();
        Point3::new(st * self.yaw.cos(), st * self.yaw.sin(), ct)
    }

    pub fn base(&self, model: &KnifeModel) -> Point3 {
        self.tip + self.axis(model) * model.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandInterval {
    pub start: f64,
    pub end: f64,
}

impl HandInterval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub bath: BathGeometry,
    pub knife_model: KnifeModel,
    pub knives: Vec<KnifePose>,
    pub frame_count: usize,
    pub frame_rate: f64,
    /// Per-axis Gaussian sensor noise, metres.
    pub noise_sigma: f64,
    pub dropout: f64,
    pub seed: u64,
    pub hand_intervals: Vec<HandInterval>,
    pub surface_samples: usize,
    pub points_per_knife: usize,
    pub hand_points: usize,
    pub hand_radius: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            bath: BathGeometry::default(),
            knife_model: KnifeModel::default(),
            knives: Vec::new(),
            frame_count: 30,
            frame_rate: 30.0,
            noise_sigma: 0.002,
            dropout: 0.05,
            seed: 0,
            hand_intervals: Vec::new(),
            surface_samples: 10_000,
            points_per_knife: 300,
            hand_points: 400,
            hand_radius: 0.08,
        }
    }
}

impl ScenarioSpec {
    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.frame_rate
    }

    pub fn validate(&self) -> Result<()> {
        if self.knives.len() > MAX_KNIVES {
            return Err(param(format!("at most {MAX_KNIVES} knives, got {}", self.knives.len())));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(param(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.frame_rate > 0.0) {
            return Err(param("noise sigma must be >= 0 and frame rate > 0"));
        }
        let mut intervals = self.hand_intervals.clone();
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        for iv in &intervals {
            if !(iv.end > iv.start) {
                return Err(param(format!("empty hand interval {iv:?}")));
            }
        }
        if intervals.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(param("hand intervals overlap"));
        }
        for (i, pose) in self.knives.iter().enumerate() {
            if !knife_fits(&self.bath, &self.knife_model, pose) {
                return Err(Error::Placement(format!("knife {i} at {:?} leaves the bath", pose.tip)));
            }
        }
        Ok(())
    }

    fn rng(&self, frame: usize, component: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((frame as u64) << 2) | component);
        rng
    }
}

fn knife_fits(bath: &BathGeometry, model: &KnifeModel, pose: &KnifePose) -> bool {
    knife_fits_with(bath, model, pose, 0.0)
}

/// Handle surface at least `clearance` from every bath face.
fn knife_fits_with(bath: &BathGeometry, model: &KnifeModel, pose: &KnifePose, clearance: f64) -> bool {
    let r = model.radius + clearance;
    [pose.tip, pose.base(model)]
        .iter()
        .all(|&p| (0..3).all(|a| p.axis(a) - r >= bath.min.axis(a) && p.axis(a) + r <= bath.max.axis(a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnifeTruth {
    pub tip: [f64; 3],
    pub yaw: f64,
}

/// Ground truth in its JSON file layout. Knife identity is the list index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub counts: Vec<usize>,
    pub knives: Vec<KnifeTruth>,
    pub hand_intervals: Vec<[f64; 2]>,
}

impl GroundTruth {
    pub fn for_spec(spec: &ScenarioSpec) -> Self {
        Self {
            counts: vec![spec.knives.len(); spec.frame_count],
            knives: spec.knives.iter().map(|k| KnifeTruth { tip: k.tip.to_array(), yaw: k.yaw }).collect(),
            hand_intervals: spec.hand_intervals.iter().map(|h| [h.start, h.end]).collect(),
        }
    }

    pub fn hand_intervals(&self) -> Vec<HandInterval> {
        self.hand_intervals.iter().map(|&[start, end]| HandInterval { start, end }).collect()
    }
}

/// Gaussian sample redrawn until it lies within 3 standard deviations.
fn truncated(n: &Normal<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let limit = 3.0 * n.std_dev();
    loop {
        let v = n.sample(rng);
        if v.abs() <= limit {
            return v;
        }
    }
}

fn noisy(p: Point3, noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> Point3 {
    let p = match noise {
        Some(n) => p + Point3::new(truncated(n, rng), truncated(n, rng), truncated(n, rng)),
        None => p,
    };
    p.quantized()
}

fn noise_dist(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

fn background_points(spec: &ScenarioSpec, grid: &[Point3], frame: usize) -> Vec<Point3> {
    let mut rng = spec.rng(frame, STREAM_BACKGROUND);
    let noise = noise_dist(spec.noise_sigma);
    let mut out = Vec::with_capacity(grid.len());
    for &p in grid {
        let drop: f64 = rng.random();
        if drop < spec.dropout {
            continue;
        }
        out.push(noisy(p, noise.as_ref(), &mut rng));
    }
    out
}

/// Frames of the empty bath. Knives in `spec` are an error.
pub fn generate_background(spec: &ScenarioSpec) -> Result<Vec<PointCloudFrame>> {
    if !spec.knives.is_empty() {
        return Err(param("background prescan must not contain knives"));
    }
    spec.validate()?;
    let grid = spec.bath.surface_grid(spec.surface_samples);
    Ok((0..spec.frame_count)
        .map(|f| PointCloudFrame::new(spec.timestamp(f), background_points(spec, &grid, f)))
        .collect())
}

/// Orthonormal pair perpendicular to unit vector `d`.
fn perpendicular_basis(d: Point3) -> (Point3, Point3) {
    let helper = if d.x.abs() < 0.9 { Point3::new(1.0, 0.0, 0.0) } else { Point3::new(0.0, 1.0, 0.0) };
    let e1 = cross(d, helper);
    let e1 = e1 / e1.norm();
    (e1, cross(d, e1))
}

fn cross(a: Point3, b: Point3) -> Point3 {
    Point3::new(a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x)
}

/// Camera-facing frame for a handle with unit axis `d`: `across` is
/// horizontal and perpendicular to the axis, `up` completes the frame on the
/// side of the handle facing the camera (negative z).
fn facing_basis(d: Point3) -> (Point3, Point3) {
    let across = cross(d, Point3::new(0.0, 0.0, 1.0));
    let across = if across.norm() > 1e-9 { across / across.norm() } else { perpendicular_basis(d).0 };
    let up = cross(d, across);
    if up.z > 0.0 {
        (across, up * -1.0)
    } else {
        (across, up)
    }
}

/// Samples `n` points on the camera-facing half of one handle, noise-free.
/// Across the handle, samples are uniform in projected width rather than
/// over surface area, as a depth sensor sees it; along the handle the
/// density falls linearly from the tip to `base_weight` at the base.
pub fn sample_knife<R: Rng>(model: &KnifeModel, pose: &KnifePose, n: usize, rng: &mut R) -> Vec<Point3> {
    let d = pose.axis(model);
    let (across, up) = facing_basis(d);
    let (r, len, b) = (model.radius, model.length, model.base_weight);
    let cap_mass = PI * r * r;
    let body_mass = 2.0 * r * len * (1.0 + b) / 2.0;
    let p_cap = cap_mass / (cap_mass + body_mass);
    // Inverse CDF of the linear weight w(t) = 1 - (1 - b) t / len on [0, len].
    let a = (1.0 - b) / (2.0 * len);
    let total = len * (1.0 + b) / 2.0;

    (0..n)
        .map(|_| {
            if rng.random::<f64>() < p_cap {
                // Uniform over the cap's disc seen along the axis.
                let rho = rng.random::<f64>().sqrt();
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let (x, y) = (rho * phi.cos(), rho * phi.sin());
                let depth = (1.0 - rho * rho).max(0.0).sqrt();
                pose.tip + (across * x + up * y - d * depth) * r
            } else {
                let u: f64 = rng.random();
                let t = if a > 0.0 { (1.0 - (1.0 - 4.0 * a * u * total).max(0.0).sqrt()) / (2.0 * a) } else { u * len };
                let w: f64 = rng.random_range(-1.0..=1.0);
                let lift = (1.0 - w * w).max(0.0).sqrt();
                pose.tip + d * t + (across * w + up * lift) * r
            }
        })
        .collect()
}

fn hand_center(bath: &BathGeometry, radius: f64) -> Point3 {
    let c = (bath.min + bath.max) / 2.0;
    Point3::new(c.x, c.y, bath.min.z + radius)
}

/// Frames of a knife scenario plus its ground truth.
pub fn generate_sequence(spec: &ScenarioSpec) -> Result<(Vec<PointCloudFrame>, GroundTruth)> {
    spec.validate()?;
    let grid = spec.bath.surface_grid(spec.surface_samples);
    let noise = noise_dist(spec.noise_sigma);
    let hand_c = hand_center(&spec.bath, spec.hand_radius);
    let frames = (0..spec.frame_count)
        .map(|f| {
            let t = spec.timestamp(f);
            let mut points = background_points(spec, &grid, f);
            let mut rng = spec.rng(f, STREAM_KNIVES);
            for pose in &spec.knives {
                for p in sample_knife(&spec.knife_model, pose, spec.points_per_knife, &mut rng) {
                    if rng.random::<f64>() >= spec.dropout {
                        points.push(noisy(p, noise.as_ref(), &mut rng));
                    }
                }
            }
            if spec.hand_intervals.iter().any(|h| h.contains(t)) {
                let mut rng = spec.rng(f, STREAM_HAND);
                for _ in 0..spec.hand_points {
                    let z: f64 = rng.random_range(-1.0..=1.0);
                    let phi: f64 = rng.random_range(0.0..2.0 * PI);
                    let rho = (1.0 - z * z).sqrt();
                    let p = hand_c + Point3::new(rho * phi.cos(), rho * phi.sin(), z) * spec.hand_radius;
                    points.push(noisy(p, noise.as_ref(), &mut rng));
                }
            }
            PointCloudFrame::new(t, points)
        })
        .collect();
    Ok((frames, GroundTruth::for_spec(spec)))
}

/// Constraints for randomised knife placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub min_tip_separation: f64,
    /// Minimum distance between handle axes (segment to segment).
    pub min_axis_separation: f64,
    pub tip_depth: (f64, f64),
    /// Minimum gap between a handle surface and the bath faces.
    pub wall_clearance: f64,
    pub max_attempts: usize,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            min_tip_separation: 0.04,
            min_axis_separation: 0.03,
            tip_depth: (0.72, 0.78),
            wall_clearance: 0.02,
            max_attempts: 20_000,
        }
    }
}

/// Closest distance between segments `p0-p1` and `q0-q1`.
pub fn segment_distance(p0: Point3, p1: Point3, q0: Point3, q1: Point3) -> f64 {
    let (d1, d2, r) = (p1 - p0, q1 - q0, p0 - q0);
    let (a, e, f) = (d1.dot(d1), d2.dot(d2), d2.dot(r));
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return p0.dist(q0);
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p0 + d1 * s).dist(q0 + d2 * t)
}

/// Draws `count` knife poses satisfying `placement` inside `bath`.
pub fn place_knives<R: Rng>(
    bath: &BathGeometry,
    model: &KnifeModel,
    count: usize,
    placement: &Placement,
    rng: &mut R,
) -> Result<Vec<KnifePose>> {
    let mut poses: Vec<KnifePose> = Vec::with_capacity(count);
    let mut attempts = 0;
    while poses.len() < count {
        attempts += 1;
        if attempts > placement.max_attempts {
            return Err(Error::Placement(format!(
                "placed {} of {count} knives after {} attempts",
                poses.len(),
                placement.max_attempts
            )));
        }
        let tip = Point3::new(
            rng.random_range(bath.min.x..bath.max.x),
            rng.random_range(bath.min.y..bath.max.y),
            rng.random_range(placement.tip_depth.0..=placement.tip_depth.1),
        );
        let cand = KnifePose { tip, yaw: rng.random_range(-PI..PI) };
        if !knife_fits_with(bath, model, &cand, placement.wall_clearance) {
            continue;
        }
        let clear = poses.iter().all(|p| {
            p.tip.dist(cand.tip) >= placement.min_tip_separation
                && segment_distance(p.tip, p.base(model), cand.tip, cand.base(model)) >= placement.min_axis_separation
        });
        if clear {
            poses.push(cand);
        }
    }
    Ok(poses)
}

/// Two parallel handles whose surfaces are `gap` apart, at a random spot.
/// Depth range and wall clearance come from `placement`; its separation
/// limits are ignored.
pub fn clumped_pair<R: Rng>(
    bath: &BathGeometry,
    model: &KnifeModel,
    gap: f64,
    placement: &Placement,
    rng: &mut R,
) -> Result<Vec<KnifePose>> {
    let axis_sep = 2.0 * model.radius + gap;
    for _ in 0..10_000 {
        let yaw = rng.random_range(-PI..PI);
        let tip = Point3::new(
            rng.random_range(bath.min.x..bath.max.x),
            rng.random_range(bath.min.y..bath.max.y),
            rng.random_range(placement.tip_depth.0..=placement.tip_depth.1),
        );
        // Offset perpendicular to the handle's horizontal direction.
        let offset = Point3::new(-yaw.sin(), yaw.cos(), 0.0) * axis_sep;
        let pair = [KnifePose { tip, yaw }, KnifePose { tip: tip + offset, yaw }];
        if pair.iter().all(|p| knife_fits_with(bath, model, p, placement.wall_clearance)) {
            return Ok(pair.to_vec());
        }
    }
    Err(Error::Placement("no room for a clumped pair".into()))
}

/// Reproducible evaluation suite: `instances` randomised scenarios for every
/// knife count in `counts`.
pub fn generate_benchmark(
    counts: std::ops::RangeInclusive<usize>,
    instances: usize,
    seed: u64,
    template: &ScenarioSpec,
    placement: &Placement,
) -> Result<Vec<(ScenarioSpec, GroundTruth)>> {
    if instances == 0 {
        return Err(param("instances must be >= 1"));
    }
    let mut out = Vec::with_capacity(instances * counts.clone().count());
    for count in counts {
        if count > MAX_KNIVES {
            return Err(param(format!("knife count {count} exceeds {MAX_KNIVES}")));
        }
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((count as u64) << 32) | i as u64);
            let knives = place_knives(&template.bath, &template.knife_model, count, placement, &mut rng)?;
            let spec = ScenarioSpec { knives, seed: rng.random(), ..template.clone() };
            let truth = GroundTruth::for_spec(&spec);
            out.push((spec, truth));
        }
    }
    Ok(out)
}
