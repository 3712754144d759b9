//! FIFO accumulation of foreground points over the last `k` frames, and the
//! random subsampling that evens out the accumulated cloud.

use std::collections::VecDeque;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{param, Error, Result};
use crate::frames::Point3;

#[derive(Debug, Clone)]
pub struct Accumulator {
    k: usize,
    buffer: VecDeque<(f64, Vec<Point3>)>,
}

impl Accumulator {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(param("accumulator window k must be >= 1"));
        }
        Ok(Self { k, buffer: VecDeque::with_capacity(k + 1) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().map(|(t, _)| *t)
    }

    pub fn push(&mut self, points: Vec<Point3>, timestamp: f64) -> Result<()> {
        if let Some(&(last, _)) = self.buffer.back() {
            if !(timestamp > last) {
                return Err(Error::Ordering { previous: last, got: timestamp });
            }
        }
        self.buffer.push_back((timestamp, points));
        while self.buffer.len() > self.k {
            self.buffer.pop_front();
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.buffer.iter().map(|(_, p)| p.len()).sum()
    }

    /// All buffered points, oldest frame first.
    pub fn current_cloud(&self) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.point_count());
        for (_, pts) in &self.buffer {
            out.extend_from_slice(pts);
        }
        out
    }
}

/// Uniform sample without replacement of `min(target, n)` points, a pure
/// function of `seed`. Selected points keep their input order.
pub fn subsample(points: &[Point3], target: usize, seed: u64) -> Vec<Point3> {
    if target >= points.len() {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, points.len(), target).into_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| points[i]).collect()
}
