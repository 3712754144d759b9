//! Point-cloud frames, camera geometry and the `TOFS` sequence file format.
//!
//! Camera frame convention: right-handed, x right, y down, z forward (range).
//! Coordinates are held as `f64` in memory and stored as `f32` on disk, so a
//! sequence round-trips bit-for-bit only when its coordinates are already
//! `f32`-representable (see [`Point3::quantized`]).

use std::io::{Read, Write};
use std::ops::{Add, Div, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEQUENCE_MAGIC: [u8; 4] = *b"TOFS";
pub const SEQUENCE_VERSION: u32 = 1;
/// Bytes before the first frame: magic, version, count, 4 x f32, 2 x u32.
pub const HEADER_LEN: usize = 4 + 4 + 4 + 4 * 4 + 2 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist2(self, o: Point3) -> f64 {
        let (dx, dy, dz) = (self.x - o.x, self.y - o.y, self.z - o.z);
        dx * dx + dy * dy + dz * dz
    }

    pub fn dist(self, o: Point3) -> f64 {
        self.dist2(o).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rounds every coordinate to the nearest `f32`, the on-disk precision.
    pub fn quantized(self) -> Self {
        Self::new(self.x as f32 as f64, self.y as f32 as f64, self.z as f32 as f64)
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Arithmetic mean; `None` for an empty slice.
    pub fn mean(points: &[Point3]) -> Option<Point3> {
        if points.is_empty() {
            return None;
        }
        let sum = points.iter().fold(Point3::ORIGIN, |acc, &p| acc + p);
        Some(sum / points.len() as f64)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    fn div(self, s: f64) -> Point3 {
        Point3::new(self.x / s, self.y / s, self.z / s)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloudFrame {
    /// Seconds, strictly increasing within a sequence.
    pub timestamp: f64,
    pub points: Vec<Point3>,
}

impl PointCloudFrame {
    pub fn new(timestamp: f64, points: Vec<Point3>) -> Self {
        Self { timestamp, points }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid camera intrinsics {self:?}")))
        }
    }
}

impl Default for CameraIntrinsics {
    /// 640x480 depth stream with a 500 px focal length.
    fn default() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

/// Real-valued pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

/// Pinhole projection `u = fx*x/z + cx`, `v = fy*y/z + cy`.
pub fn project_point(p: Point3, k: &CameraIntrinsics) -> Result<Pixel> {
    if !(p.z > 0.0) {
        return Err(Error::NotProjectable { z: p.z });
    }
    Ok(Pixel { u: k.fx * p.x / p.z + k.cx, v: k.fy * p.y / p.z + k.cy })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceHeader {
    pub version: u32,
    pub frame_count: u32,
    pub intrinsics: CameraIntrinsics,
}

impl SequenceHeader {
    pub fn new(frame_count: u32, intrinsics: CameraIntrinsics) -> Self {
        Self { version: SEQUENCE_VERSION, frame_count, intrinsics }
    }
}

/// Writes `frames` in the `TOFS` format and returns the number of bytes
/// written. The header's frame count is taken from `frames`, not `header`.
pub fn write_sequence<W: Write>(frames: &[PointCloudFrame], header: &SequenceHeader, mut sink: W) -> Result<u64> {
    for w in frames.windows(2) {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(Error::Ordering { previous: w[0].timestamp, got: w[1].timestamp });
        }
    }
    let count = u32::try_from(frames.len()).map_err(|_| Error::Parameter("too many frames".into()))?;
    let k = &header.intrinsics;

    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(&SEQUENCE_MAGIC);
    buf.extend_from_slice(&SEQUENCE_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for v in [k.fx, k.fy, k.cx, k.cy] {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&k.width.to_le_bytes());
    buf.extend_from_slice(&k.height.to_le_bytes());
    sink.write_all(&buf)?;
    let mut written = buf.len() as u64;

    for frame in frames {
        let n = u32::try_from(frame.points.len()).map_err(|_| Error::Parameter("too many points in frame".into()))?;
        buf.clear();
        buf.reserve(12 + 12 * frame.points.len());
        buf.extend_from_slice(&frame.timestamp.to_le_bytes());
        buf.extend_from_slice(&n.to_le_bytes());
        for p in &frame.points {
            buf.extend_from_slice(&(p.x as f32).to_le_bytes());
            buf.extend_from_slice(&(p.y as f32).to_le_bytes());
            buf.extend_from_slice(&(p.z as f32).to_le_bytes());
        }
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.data.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Inverse of [`write_sequence`].
pub fn read_sequence<R: Read>(mut source: R) -> Result<(SequenceHeader, Vec<PointCloudFrame>)> {
    let mut data = Vec::new();
    source.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };

    let magic = c.take(4).ok_or_else(|| Error::Format("file shorter than magic".into()))?;
    if magic != SEQUENCE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let truncated_header = || Error::Format("truncated header".into());
    let version = c.u32().ok_or_else(truncated_header)?;
    if version != SEQUENCE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let frame_count = c.u32().ok_or_else(truncated_header)?;
    let mut kf = [0f64; 4];
    for v in &mut kf {
        *v = c.f32().ok_or_else(truncated_header)? as f64;
    }
    let width = c.u32().ok_or_else(truncated_header)?;
    let height = c.u32().ok_or_else(truncated_header)?;
    let intrinsics = CameraIntrinsics { fx: kf[0], fy: kf[1], cx: kf[2], cy: kf[3], width, height };

    let mut frames = Vec::with_capacity(frame_count.min(1 << 16) as usize);
    for index in 0..frame_count as usize {
        let corrupt = |reason: &str| Error::Corrupt { frame: index, reason: reason.to_string() };
        let timestamp = c.f64().ok_or_else(|| corrupt("missing frame header"))?;
        let n = c.u32().ok_or_else(|| corrupt("missing point count"))? as usize;
        let raw = c
            .take(n.checked_mul(12).ok_or_else(|| corrupt("point count overflow"))?)
            .ok_or_else(|| corrupt("truncated point payload"))?;
        let points = raw
            .chunks_exact(12)
            .map(|b| {
                let f = |i: usize| f32::from_le_bytes(b[i..i + 4].try_into().unwrap()) as f64;
                Point3::new(f(0), f(4), f(8))
            })
            .collect();
        if let Some(prev) = frames.last().map(|f: &PointCloudFrame| f.timestamp) {
            if !(timestamp > prev) {
                return Err(corrupt("timestamps not strictly increasing"));
            }
        }
        frames.push(PointCloudFrame { timestamp, points });
    }
    if c.pos != data.len() {
        return Err(Error::Corrupt {
            frame: frame_count as usize,
            reason: format!("{} trailing bytes after declared frames", data.len() - c.pos),
        });
    }
    Ok((SequenceHeader { version, frame_count, intrinsics }, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    #[test]
    fn empty_sequence_is_header_only() {
        let mut buf = Vec::new();
        let n = write_sequence(&[], &SequenceHeader::new(0, k()), &mut buf).unwrap();
        assert_eq!(n as usize, HEADER_LEN);
        assert_eq!(buf.len(), HEADER_LEN);
        let (h, frames) = read_sequence(&buf[..]).unwrap();
        assert_eq!(h.frame_count, 0);
        assert!(frames.is_empty());
    }

    #[test]
    fn single_point_byte_accounting() {
        let frames = vec![PointCloudFrame::new(0.0, vec![Point3::new(0.0, 0.0, 1.0)])];
        let mut buf = Vec::new();
        let n = write_sequence(&frames, &SequenceHeader::new(1, k()), &mut buf).unwrap();
        assert_eq!(n as usize, HEADER_LEN + 8 + 4 + 12);
        assert_eq!(buf.len(), n as usize);
    }

    #[test]
    fn unordered_timestamps_rejected() {
        let frames = vec![PointCloudFrame::new(1.0, vec![]), PointCloudFrame::new(1.0, vec![])];
        let err = write_sequence(&frames, &SequenceHeader::new(2, k()), Vec::new()).unwrap_err();
        assert!(matches!(err, Error::Ordering { .. }));
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut buf = Vec::new();
        write_sequence(&[], &SequenceHeader::new(0, k()), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_sequence(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_format_error() {
        let mut buf = Vec::new();
        write_sequence(&[], &SequenceHeader::new(0, k()), &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(read_sequence(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn declared_count_exceeds_frames_is_corruption() {
        let frames: Vec<_> = (0..3).map(|i| PointCloudFrame::new(i as f64, vec![Point3::new(0.0, 0.0, 1.0)])).collect();
        let mut buf = Vec::new();
        write_sequence(&frames, &SequenceHeader::new(3, k()), &mut buf).unwrap();
        buf[8..12].copy_from_slice(&5u32.to_le_bytes());
        match read_sequence(&buf[..]) {
            Err(Error::Corrupt { frame, .. }) => assert_eq!(frame, 3),
            other => panic!("expected corruption, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let frames = vec![PointCloudFrame::new(0.0, vec![Point3::new(0.0, 0.0, 1.0); 4])];
        let mut buf = Vec::new();
        write_sequence(&frames, &SequenceHeader::new(1, k()), &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(read_sequence(&buf[..]), Err(Error::Corrupt { frame: 0, .. })));
    }

    #[test]
    fn projection_examples() {
        let k = k();
        let p = project_point(Point3::new(0.0, 0.0, 1.0), &k).unwrap();
        assert_eq!((p.u, p.v), (320.0, 240.0));
        let p = project_point(Point3::new(0.1, 0.0, 1.0), &k).unwrap();
        assert!((p.u - 370.0).abs() < 1e-12 && p.v == 240.0);
        let p = project_point(Point3::new(0.1, 0.0, 2.0), &k).unwrap();
        assert!((p.u - 345.0).abs() < 1e-12 && p.v == 240.0);
        assert!(matches!(project_point(Point3::new(0.0, 0.0, 0.0), &k), Err(Error::NotProjectable { .. })));
        assert!(project_point(Point3::new(0.0, 0.0, -1.0), &k).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).is_ok());
        assert!(CameraIntrinsics::new(0.0, 500.0, 320.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 640.0, 240.0, 640, 480).is_err());
    }

    fn f32_coord() -> impl Strategy<Value = f64> {
        (-10.0f32..10.0).prop_map(|v| v as f64)
    }

    fn frames_strategy() -> impl Strategy<Value = Vec<PointCloudFrame>> {
        prop::collection::vec(
            (0.001f64..1.0, prop::collection::vec((f32_coord(), f32_coord(), f32_coord()), 0..40)),
            0..8,
        )
        .prop_map(|raw| {
            let mut t = 0.0;
            raw.into_iter()
                .map(|(dt, pts)| {
                    t += dt;
                    PointCloudFrame::new(t, pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(frames in frames_strategy()) {
            let header = SequenceHeader::new(frames.len() as u32, k());
            let mut buf = Vec::new();
            let n = write_sequence(&frames, &header, &mut buf).unwrap();
            prop_assert_eq!(n as usize, buf.len());
            let (h, back) = read_sequence(&buf[..]).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(back.len(), frames.len());
            for (a, b) in frames.iter().zip(&back) {
                prop_assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
                prop_assert_eq!(a.points.len(), b.points.len());
                for (p, q) in a.points.iter().zip(&b.points) {
                    prop_assert_eq!(p.x.to_bits(), q.x.to_bits());
                    prop_assert_eq!(p.y.to_bits(), q.y.to_bits());
                    prop_assert_eq!(p.z.to_bits(), q.z.to_bits());
                }
            }
        }

        #[test]
        fn projection_is_scale_covariant(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..5.0, s in 0.1f64..10.0
        ) {
            let k = k();
            let a = project_point(Point3::new(x, y, z), &k).unwrap();
            let b = project_point(Point3::new(s * x, s * y, s * z), &k).unwrap();
            prop_assert!(a.u.is_finite() && a.v.is_finite());
            prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }
    }
}
