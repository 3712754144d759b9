//! SORT over 2-D projections of cluster detections.
//!
//! Each frame: predict every track, associate with the Hungarian method on
//! `1 - IoU`, update matched tracks, spawn tentative tracks for unmatched
//! detections and drop tracks that have gone unmatched for more than
//! `max_age` frames. A track is confirmed once it has been matched on
//! `min_hits` consecutive frames and then stays confirmed until dropped.

pub mod hungarian;
pub mod kalman;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterResult;
use crate::error::{param, Result};
use crate::frames::{project_point, CameraIntrinsics, Point3};
pub use hungarian::{hungarian, Assignment};
pub use kalman::{KalmanBox, KalmanParams};

/// Cost given to pairs whose overlap is below `iou_min`.
pub const INFEASIBLE_COST: f64 = 1e6;

/// Axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.u_min + self.u_max) / 2.0, (self.v_min + self.v_max) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.u_min < self.u_max && self.v_min < self.v_max
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.u_min, self.v_min, self.u_max, self.v_max]
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.u_max.min(b.u_max) - a.u_min.max(b.u_min)).max(0.0);
    let ih = (a.v_max.min(b.v_max) - a.v_min.max(b.v_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub bbox: BBox,
    /// 3-D centroid of the cluster the box came from.
    pub centroid: Point3,
}

/// How detections are formed from clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxMode {
    /// Bounding box of all projected member points, padded on each side.
    Aabb { pad: f64 },
    /// Fixed-size box around the projected centroid.
    Centroid { width: f64, height: f64 },
}

impl Default for BoxMode {
    fn default() -> Self {
        BoxMode::Aabb { pad: 4.0 }
    }
}

impl BoxMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BoxMode::Aabb { pad } if !(pad > 0.0) => Err(param("box pad must be > 0")),
            BoxMode::Centroid { width, height } if !(width > 0.0 && height > 0.0) => {
                Err(param("centroid box size must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// One detection per cluster. Returns the detections and the number of
/// clusters skipped because a point could not be projected.
pub fn detections_from_clusters(
    result: &ClusterResult,
    points: &[Point3],
    k: &CameraIntrinsics,
    mode: BoxMode,
) -> (Vec<DetectionBox>, usize) {
    let mut dets = Vec::with_capacity(result.n_clusters());
    let mut skipped = 0;
    for c in 0..result.n_clusters() {
        let centroid = result.centroids[c];
        let bbox = match mode {
            BoxMode::Aabb { pad } => {
                let mut b = BBox {
                    u_min: f64::INFINITY,
                    v_min: f64::INFINITY,
                    u_max: f64::NEG_INFINITY,
                    v_max: f64::NEG_INFINITY,
                };
                let mut ok = true;
                for p in result.members(points, c) {
                    match project_point(p, k) {
                        Ok(px) => {
                            b.u_min = b.u_min.min(px.u);
                            b.v_min = b.v_min.min(px.v);
                            b.u_max = b.u_max.max(px.u);
                            b.v_max = b.v_max.max(px.v);
                        }
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok || !b.u_min.is_finite() {
                    None
                } else {
                    Some(BBox {
                        u_min: b.u_min - pad,
                        v_min: b.v_min - pad,
                        u_max: b.u_max + pad,
                        v_max: b.v_max + pad,
                    })
                }
            }
            BoxMode::Centroid { width, height } => project_point(centroid, k).ok().map(|px| BBox {
                u_min: px.u - width / 2.0,
                v_min: px.v - height / 2.0,
                u_max: px.u + width / 2.0,
                v_max: px.v + height / 2.0,
            }),
        };
        match bbox {
            Some(bbox) => dets.push(DetectionBox { bbox, centroid }),
            None => {
                log::warn!("cluster {c} has an unprojectable point; detection skipped");
                skipped += 1;
            }
        }
    }
    (dets, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SortParams {
    pub iou_min: f64,
    /// Frames a track may go unmatched before it is dropped.
    pub max_age: u32,
    pub min_hits: u32,
    pub kalman: KalmanParams,
}

impl Default for SortParams {
    fn default() -> Self {
        Self { iou_min: 0.3, max_age: 15, min_hits: 3, kalman: KalmanParams::default() }
    }
}

impl SortParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_min) {
            return Err(param("iou_min must lie in [0, 1]"));
        }
        if self.min_hits == 0 {
            return Err(param("min_hits must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub kalman: KalmanBox,
    pub hits: u32,
    pub hit_streak: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub confirmed: bool,
    pub last_centroid: Point3,
}

/// Snapshot of a confirmed track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BBox,
    pub centroid: Point3,
    pub time_since_update: u32,
}

impl Track {
    fn output(&self) -> TrackOutput {
        TrackOutput {
            id: self.id,
            bbox: self.kalman.bbox(),
            centroid: self.last_centroid,
            time_since_update: self.time_since_update,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SortTracker {
    params: SortParams,
    tracks: Vec<Track>,
    next_id: u64,
    frames: u64,
}

impl SortTracker {
    pub fn new(params: SortParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, tracks: Vec::new(), next_id: 1, frames: 0 })
    }

    pub fn params(&self) -> &SortParams {
        &self.params
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Confirmed tracks, by id.
    pub fn confirmed(&self) -> Vec<TrackOutput> {
        self.tracks.iter().filter(|t| t.confirmed).map(Track::output).collect()
    }

    /// Advances one frame with this frame's detections and returns the
    /// confirmed tracks.
    pub fn step(&mut self, detections: &[DetectionBox]) -> Result<Vec<TrackOutput>> {
        self.frames += 1;
        let p = self.params;
        for t in &mut self.tracks {
            t.kalman.predict(&p.kalman)?;
            t.age += 1;
            if t.time_since_update > 0 {
                t.hit_streak = 0;
            }
            t.time_since_update += 1;
        }
        self.tracks.retain(|t| t.kalman.is_finite());

        let predicted: Vec<BBox> = self.tracks.iter().map(|t| t.kalman.bbox()).collect();
        let overlaps: Vec<Vec<f64>> =
            predicted.iter().map(|tb| detections.iter().map(|d| iou(tb, &d.bbox)).collect()).collect();
        let cost: Vec<Vec<f64>> = overlaps
            .iter()
            .map(|row| row.iter().map(|&o| if o < p.iou_min { INFEASIBLE_COST } else { 1.0 - o }).collect())
            .collect();
        let mut det_matched = vec![false; detections.len()];
        for (ti, di) in hungarian(&cost).pairs {
            if overlaps[ti][di] < p.iou_min {
                continue;
            }
            det_matched[di] = true;
            let t = &mut self.tracks[ti];
            t.kalman.update(&detections[di].bbox, &p.kalman)?;
            t.time_since_update = 0;
            t.hits += 1;
            t.hit_streak += 1;
            t.last_centroid = detections[di].centroid;
            if t.hit_streak >= p.min_hits {
                t.confirmed = true;
            }
        }
        for (d, _) in detections.iter().zip(&det_matched).filter(|(_, &m)| !m) {
            self.tracks.push(Track {
                id: self.next_id,
                kalman: KalmanBox::new(&d.bbox, &p.kalman),
                hits: 1,
                hit_streak: 1,
                age: 0,
                time_since_update: 0,
                confirmed: p.min_hits <= 1,
                last_centroid: d.centroid,
            });
            self.next_id += 1;
        }
        self.tracks.retain(|t| t.time_since_update <= p.max_age);
        Ok(self.confirmed())
    }
}
