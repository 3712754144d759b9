//! Gaussian kernel density estimation on the accumulated cloud, nearest-rank
//! percentile filtering, and projected density heatmaps.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{param, Error, Result};
use crate::frames::{project_point, CameraIntrinsics, Point3};

/// Kernel support radius in bandwidths. Beyond it the Gaussian is below
/// `exp(-12.5)` (about 3.7e-6) of its peak and is treated as zero.
pub const KDE_CUTOFF_BANDWIDTHS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCloud {
    pub points: Vec<Point3>,
    /// Per-point density, 1/m^3.
    pub densities: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Normalisation of an isotropic 3-D Gaussian with standard deviation `h`.
pub fn gaussian_norm(h: f64) -> f64 {
    (2.0 * PI * h * h).powf(-1.5)
}

/// `exp(x)` for `-745 < x <= 0`, relative error below 1e-12.
#[inline(always)]
fn exp_neg(x: f64) -> f64 {
    let t = x * std::f64::consts::LOG2_E;
    let i = t as i64;
    // 2^f for f in (-1, 0] via exp(f ln 2), Taylor to degree 13.
    let y = (t - i as f64) * std::f64::consts::LN_2;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * y + c;
    }
    f64::from_bits(((i + 1023) as u64) << 52) * p
}

/// Density at every input point:
/// `(1/n) * sum_j (2 pi h^2)^(-3/2) exp(-|p_i - p_j|^2 / (2 h^2))`,
/// including the self term, with pairs beyond the cutoff radius skipped.
pub fn kde(points: &[Point3], bandwidth: f64) -> Result<DensityCloud> {
    if points.is_empty() {
        return Err(Error::Empty("kde input cloud"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(param(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    let n = points.len();
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let cutoff = KDE_CUTOFF_BANDWIDTHS * bandwidth;
    let c2 = cutoff * cutoff;

    // Uniform grid with cells of half the cutoff; points sorted by cell so
    // every cell is a contiguous run.
    let cell = cutoff / 2.0;
    let key_of = |p: &Point3| [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64];
    let keys: Vec<[i64; 3]> = points.iter().map(key_of).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by_key(|&i| (keys[i], i));
    let xs: Vec<f64> = order.iter().map(|&i| points[i].x).collect();
    let ys: Vec<f64> = order.iter().map(|&i| points[i].y).collect();
    let zs: Vec<f64> = order.iter().map(|&i| points[i].z).collect();
    let mut runs: Vec<([i64; 3], usize, usize)> = Vec::new();
    for (r, &i) in order.iter().enumerate() {
        match runs.last_mut() {
            Some(last) if last.0 == keys[i] => last.2 = r + 1,
            _ => runs.push((keys[i], r, r + 1)),
        }
    }
    let index: HashMap<[i64; 3], (usize, usize)> = runs.iter().map(|&(k, s, e)| (k, (s, e))).collect();

    // Each pair is evaluated once and credited to both ends; neighbour
    // cells are visited only when they sort after the current cell.
    let mut sums = vec![1.0f64; n];
    for &(ka, s0, e0) in &runs {
        for a in s0..e0 {
            let (x, y, z) = (xs[a], ys[a], zs[a]);
            let mut acc = 0.0;
            for b in a + 1..e0 {
                let d2 = (xs[b] - x).powi(2) + (ys[b] - y).powi(2) + (zs[b] - z).powi(2);
                if d2 <= c2 {
                    let w = exp_neg(-d2 * inv_two_h2);
                    acc += w;
                    sums[b] += w;
                }
            }
            sums[a] += acc;
        }
        for dx in -2..=2i64 {
            for dy in -2..=2i64 {
                for dz in -2..=2i64 {
                    let kb = [ka[0] + dx, ka[1] + dy, ka[2] + dz];
                    if kb <= ka {
                        continue;
                    }
                    let Some(&(s1, e1)) = index.get(&kb) else { continue };
                    for a in s0..e0 {
                        let (x, y, z) = (xs[a], ys[a], zs[a]);
                        let mut acc = 0.0;
                        for b in s1..e1 {
                            let d2 = (xs[b] - x).powi(2) + (ys[b] - y).powi(2) + (zs[b] - z).powi(2);
                            if d2 <= c2 {
                                let w = exp_neg(-d2 * inv_two_h2);
                                acc += w;
                                sums[b] += w;
                            }
                        }
                        sums[a] += acc;
                    }
                }
            }
        }
    }
    let scale = gaussian_norm(bandwidth) / n as f64;
    let mut densities = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        densities[i] = sums[r] * scale;
    }
    Ok(DensityCloud { points: points.to_vec(), densities, bandwidth })
}

/// The same estimate evaluated at an arbitrary location, without cutoff.
pub fn density_at(points: &[Point3], bandwidth: f64, q: Point3) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("kde input cloud"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(param(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let sum: f64 = points.iter().map(|p| (-p.dist2(q) * inv_two_h2).exp()).sum();
    Ok(sum * gaussian_norm(bandwidth) / points.len() as f64)
}

/// Nearest-rank percentile: the `ceil(p*n/100)`-th smallest value (the
/// minimum for `p = 0`). `None` for an empty slice.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let rank = ((p * n as f64 / 100.0).ceil() as usize).clamp(1, n);
    let mut sorted = values.to_vec();
    let (_, nth, _) = sorted.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Some(*nth)
}

/// Keeps points whose density is at least the `p`-th percentile; order
/// preserved, ties at the threshold retained.
pub fn percentile_filter(cloud: &DensityCloud, p: f64) -> Result<(Vec<Point3>, Vec<f64>)> {
    if !(0.0..=100.0).contains(&p) {
        return Err(param(format!("percentile {p} outside [0, 100]")));
    }
    let Some(threshold) = nearest_rank_percentile(&cloud.densities, p) else {
        return Ok((Vec::new(), Vec::new()));
    };
    Ok(cloud.points.iter().zip(&cloud.densities).filter(|(_, &d)| d >= threshold).map(|(&pt, &d)| (pt, d)).unzip())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: u32,
    pub height: u32,
    /// Row-major maximum density per pixel, 0 where nothing projects.
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[(v * self.width + u) as usize]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Values scaled to [0, 1] by the image maximum.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.max();
        if m > 0.0 {
            self.data.iter().map(|v| v / m).collect()
        } else {
            vec![0.0; self.data.len()]
        }
    }

    /// Binary 8-bit grayscale PGM (P5).
    pub fn write_pgm<W: Write>(&self, mut sink: W) -> Result<()> {
        write!(sink, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.normalized().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        sink.write_all(&bytes)?;
        sink.flush()?;
        Ok(())
    }
}

/// Projects the density cloud into a `width` x `height` grid covering the
/// camera image and keeps the maximum density per pixel.
pub fn heatmap(cloud: &DensityCloud, k: &CameraIntrinsics, width: u32, height: u32) -> Result<Heatmap> {
    if width == 0 || height == 0 {
        return Err(param("heatmap grid must be non-empty"));
    }
    let mut data = vec![0.0f64; width as usize * height as usize];
    let (sx, sy) = (width as f64 / k.width as f64, height as f64 / k.height as f64);
    for (&p, &d) in cloud.points.iter().zip(&cloud.densities) {
        let px = project_point(p, k)?;
        let (u, v) = ((px.u * sx).floor(), (px.v * sy).floor());
        if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
            continue;
        }
        let cell = &mut data[v as usize * width as usize + u as usize];
        *cell = cell.max(d);
    }
    Ok(Heatmap { width, height, data })
}
