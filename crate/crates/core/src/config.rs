//! Pipeline configuration: one flat JSON document with `module.key` names.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterParams;
use crate::compliance::ComplianceConfig;
use crate::error::{Error, Result};
use crate::tracker::{BoxMode, SortParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxModeName {
    Aabb,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,

    #[serde(rename = "background.voxel_size_m")]
    pub voxel_size: f64,
    #[serde(rename = "background.fine_radius_m")]
    pub fine_radius: f64,

    #[serde(rename = "accumulator.k")]
    pub accumulate_frames: usize,
    #[serde(rename = "accumulator.subsample_target")]
    pub subsample_target: usize,

    #[serde(rename = "density.bandwidth_m")]
    pub bandwidth: f64,
    #[serde(rename = "density.percentile")]
    pub percentile: f64,

    #[serde(rename = "cluster.min_cluster_size")]
    pub min_cluster_size: usize,
    #[serde(rename = "cluster.min_samples")]
    pub min_samples: usize,

    #[serde(rename = "tracker.iou_min")]
    pub iou_min: f64,
    #[serde(rename = "tracker.max_age")]
    pub max_age: u32,
    #[serde(rename = "tracker.min_hits")]
    pub min_hits: u32,
    #[serde(rename = "tracker.box_mode")]
    pub box_mode: BoxModeName,
    #[serde(rename = "tracker.pad_px")]
    pub pad_px: f64,
    #[serde(rename = "tracker.centroid_box_width_px")]
    pub centroid_box_width: f64,
    #[serde(rename = "tracker.centroid_box_height_px")]
    pub centroid_box_height: f64,

    #[serde(rename = "compliance.required_dwell_s")]
    pub required_dwell: f64,

    #[serde(rename = "io.sequence")]
    pub sequence: Option<PathBuf>,
    #[serde(rename = "io.background_model")]
    pub background_model: Option<PathBuf>,
    #[serde(rename = "io.prescan")]
    pub prescan: Option<PathBuf>,
    #[serde(rename = "io.ground_truth")]
    pub ground_truth: Option<PathBuf>,
    #[serde(rename = "io.hands")]
    pub hands: Option<PathBuf>,
    #[serde(rename = "io.events")]
    pub events: Option<PathBuf>,
    #[serde(rename = "io.report")]
    pub report: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            voxel_size: 0.02,
            fine_radius: 0.01,
            accumulate_frames: 5,
            subsample_target: 4000,
            bandwidth: 0.008,
            percentile: 70.0,
            min_cluster_size: 15,
            min_samples: 10,
            iou_min: 0.3,
            max_age: 15,
            min_hits: 3,
            box_mode: BoxModeName::Aabb,
            pad_px: 4.0,
            centroid_box_width: 40.0,
            centroid_box_height: 20.0,
            required_dwell: 10.0,
            sequence: None,
            background_model: None,
            prescan: None,
            ground_truth: None,
            hands: None,
            events: None,
            report: None,
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        check(pos(self.voxel_size), "background.voxel_size_m must be > 0")?;
        check(pos(self.fine_radius), "background.fine_radius_m must be > 0")?;
        check(self.accumulate_frames >= 1, "accumulator.k must be >= 1")?;
        check(self.subsample_target >= 1, "accumulator.subsample_target must be >= 1")?;
        check(pos(self.bandwidth), "density.bandwidth_m must be > 0")?;
        check((0.0..=100.0).contains(&self.percentile), "density.percentile must lie in [0, 100]")?;
        self.cluster_params().map_err(|e| Error::Config(e.to_string()))?;
        self.sort_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.box_mode().validate().map_err(|e| Error::Config(e.to_string()))?;
        check(pos(self.required_dwell), "compliance.required_dwell_s must be > 0")?;
        Ok(())
    }

    pub fn cluster_params(&self) -> Result<ClusterParams> {
        ClusterParams::new(self.min_cluster_size, self.min_samples)
    }

    pub fn sort_params(&self) -> SortParams {
        SortParams { iou_min: self.iou_min, max_age: self.max_age, min_hits: self.min_hits, ..Default::default() }
    }

    pub fn box_mode(&self) -> BoxMode {
        match self.box_mode {
            BoxModeName::Aabb => BoxMode::Aabb { pad: self.pad_px },
            BoxModeName::Centroid => {
                BoxMode::Centroid { width: self.centroid_box_width, height: self.centroid_box_height }
            }
        }
    }

    pub fn compliance(&self) -> ComplianceConfig {
        ComplianceConfig { required_dwell: self.required_dwell }
    }
}
