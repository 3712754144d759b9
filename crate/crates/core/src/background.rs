//! Static background model and coarse-to-fine background subtraction.
//!
//! The coarse stage drops every point whose voxel was occupied during the
//! prescan. The fine stage drops any remaining point that has a background
//! point within `fine_radius` (inclusive); only points farther than that from
//! all background are treated as foreground.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use crate::error::{param, Error, Result};
use crate::frames::{Point3, PointCloudFrame};
use crate::kdtree::KdTree;

pub const MODEL_MAGIC: [u8; 4] = *b"TOFB";
pub const MODEL_VERSION: u32 = 1;
/// Background points kept per voxel for the fine-filter index.
pub const MAX_POINTS_PER_VOXEL: usize = 8;

pub type VoxelKey = [i64; 3];

pub fn voxel_of(p: Point3, voxel_size: f64) -> VoxelKey {
    [(p.x / voxel_size).floor() as i64, (p.y / voxel_size).floor() as i64, (p.z / voxel_size).floor() as i64]
}

#[derive(Debug, Clone)]
pub struct BackgroundModel {
    voxel_size: f64,
    fine_radius: f64,
    occupied: HashSet<VoxelKey>,
    points: Vec<Point3>,
    index: KdTree,
}

impl BackgroundModel {
    /// Builds the model from prescan frames of the empty scene.
    ///
    /// Parameters and points are rounded to `f32` up front, so a model
    /// written with [`BackgroundModel::write`] reloads to the same voxel set.
    pub fn build(prescan: &[PointCloudFrame], voxel_size: f64, fine_radius: f64) -> Result<Self> {
        if prescan.is_empty() {
            return Err(Error::Empty("background prescan has no frames"));
        }
        let points: Vec<Point3> = prescan.iter().flat_map(|f| f.points.iter().map(|p| p.quantized())).collect();
        if points.is_empty() {
            return Err(Error::Empty("background prescan has no points"));
        }
        Self::from_points(points, voxel_size, fine_radius)
    }

    fn from_points(points: Vec<Point3>, voxel_size: f64, fine_radius: f64) -> Result<Self> {
        let voxel_size = voxel_size as f32 as f64;
        let fine_radius = fine_radius as f32 as f64;
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(param(format!("voxel size must be > 0, got {voxel_size}")));
        }
        if !(fine_radius > 0.0 && fine_radius.is_finite()) {
            return Err(param(format!("fine radius must be > 0, got {fine_radius}")));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(param(format!("non-finite background point {p:?}")));
        }
        let mut per_voxel: HashMap<VoxelKey, usize> = HashMap::new();
        let mut kept = Vec::new();
        for p in points {
            let n = per_voxel.entry(voxel_of(p, voxel_size)).or_insert(0);
            if *n < MAX_POINTS_PER_VOXEL {
                *n += 1;
                kept.push(p);
            }
        }
        let occupied = per_voxel.into_keys().collect();
        let index = KdTree::build(&kept);
        Ok(Self { voxel_size, fine_radius, occupied, points: kept, index })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn fine_radius(&self) -> f64 {
        self.fine_radius
    }

    pub fn occupied(&self) -> &HashSet<VoxelKey> {
        &self.occupied
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Same background with a different fine radius.
    pub fn with_fine_radius(&self, fine_radius: f64) -> Result<Self> {
        Self::from_points(self.points.clone(), self.voxel_size, fine_radius)
    }

    /// Points whose voxel is not part of the background; order preserved.
    pub fn coarse_filter(&self, points: &[Point3]) -> Vec<Point3> {
        points.iter().copied().filter(|&p| !self.occupied.contains(&voxel_of(p, self.voxel_size))).collect()
    }

    /// Points farther than the fine radius from every background point.
    pub fn fine_filter(&self, points: &[Point3]) -> Vec<Point3> {
        points.iter().copied().filter(|&p| !self.index.any_within(p, self.fine_radius)).collect()
    }

    pub fn subtract(&self, frame: &PointCloudFrame) -> Vec<Point3> {
        self.fine_filter(&self.coarse_filter(&frame.points))
    }

    /// Binary layout (little-endian): magic `TOFB`, version u32, voxel size
    /// f32, fine radius f32, point count u32, then xyz f32 triplets.
    pub fn write<W: Write>(&self, mut sink: W) -> Result<u64> {
        let mut buf = Vec::with_capacity(20 + 12 * self.points.len());
        buf.extend_from_slice(&MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.voxel_size as f32).to_le_bytes());
        buf.extend_from_slice(&(self.fine_radius as f32).to_le_bytes());
        buf.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        for p in &self.points {
            for v in p.to_array() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        sink.write_all(&buf)?;
        sink.flush()?;
        Ok(buf.len() as u64)
    }

    pub fn read<R: Read>(mut source: R) -> Result<Self> {
        let mut data = Vec::new();
        source.read_to_end(&mut data)?;
        if data.len() < 20 || data[..4] != MODEL_MAGIC {
            return Err(Error::Format("not a background model file".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(data[i..i + 4].try_into().unwrap());
        let f32_at = |i: usize| f32::from_le_bytes(data[i..i + 4].try_into().unwrap()) as f64;
        let version = u32_at(4);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let (voxel_size, fine_radius, n) = (f32_at(8), f32_at(12), u32_at(16) as usize);
        if data.len() != 20 + 12 * n {
            return Err(Error::Format(format!("model declares {n} points but payload is {} bytes", data.len() - 20)));
        }
        let points = (0..n)
            .map(|i| {
                let o = 20 + 12 * i;
                Point3::new(f32_at(o), f32_at(o + 4), f32_at(o + 8))
            })
            .collect();
        Self::from_points(points, voxel_size, fine_radius)
    }
}
