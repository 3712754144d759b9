//! Static 3-D KD-tree over a point set, built once and queried many times.
//!
//! Nodes carry their axis-aligned bounding box so that range and k-NN queries
//! prune on the exact box distance rather than the splitting plane alone.

use crate::frames::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    start: usize,
    end: usize,
    /// Child node indices; `usize::MAX` for leaves.
    left: usize,
    right: usize,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == usize::MAX
    }

    fn box_dist2(&self, q: &[f64; 3]) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = if q[a] < self.lo[a] {
                self.lo[a] - q[a]
            } else if q[a] > self.hi[a] {
                q[a] - self.hi[a]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }
}

#[derive(Debug, Clone)]
pub struct KdTree {
    /// Points in tree order.
    pts: Vec<[f64; 3]>,
    /// Original index of each point in tree order.
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let raw: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            Self::build_node(&raw, &mut order, 0, points.len(), &mut nodes);
        }
        let pts = order.iter().map(|&i| raw[i]).collect();
        Self { pts, ids: order, nodes }
    }

    fn build_node(raw: &[[f64; 3]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(raw[i][a]);
                hi[a] = hi[a].max(raw[i][a]);
            }
        }
        let id = nodes.len();
        nodes.push(Node { lo, hi, start, end, left: usize::MAX, right: usize::MAX });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        if hi[axis] - lo[axis] == 0.0 {
            // All points coincide.
            return id;
        }
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| raw[a][axis].total_cmp(&raw[b][axis]));
        let left = Self::build_node(raw, order, start, mid, nodes);
        let right = Self::build_node(raw, order, mid, end, nodes);
        nodes[id].left = left;
        nodes[id].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Original index and squared distance of the nearest point.
    pub fn nearest(&self, q: Point3) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let q = q.to_array();
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.box_dist2(&q) > best.1 {
                continue;
            }
            if node.is_leaf() {
                for i in node.start..node.end {
                    let d = d2(&self.pts[i], &q);
                    if d < best.1 || (d == best.1 && self.ids[i] < best.0) {
                        best = (self.ids[i], d);
                    }
                }
                continue;
            }
            let (l, r) = (&self.nodes[node.left], &self.nodes[node.right]);
            // Visit the closer child first: push it last.
            if l.box_dist2(&q) <= r.box_dist2(&q) {
                stack.push(node.right);
                stack.push(node.left);
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        Some(best)
    }

    /// Whether any point lies within `radius` (inclusive) of `q`.
    pub fn any_within(&self, q: Point3, radius: f64) -> bool {
        let mut found = false;
        self.visit_within(q, radius, |_, _| {
            found = true;
            false
        });
        found
    }

    /// Calls `f(original_index, squared_distance)` for every point with
    /// distance `<= radius`. Returning `false` from `f` stops the search.
    pub fn visit_within<F: FnMut(usize, f64) -> bool>(&self, q: Point3, radius: f64, mut f: F) {
        if self.is_empty() {
            return;
        }
        let q = q.to_array();
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.box_dist2(&q) > r2 {
                continue;
            }
            if node.is_leaf() {
                for i in node.start..node.end {
                    let d = d2(&self.pts[i], &q);
                    if d <= r2 && !f(self.ids[i], d) {
                        return;
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
    }

    /// The `k` nearest points to `q` other than original index `exclude`,
    /// sorted by (squared distance, index).
    pub fn k_nearest_excluding(&self, q: Point3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 || self.is_empty() {
            return best;
        }
        let q = q.to_array();
        let worse = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let bound = if best.len() == k { best[k - 1].1 } else { f64::INFINITY };
            if node.box_dist2(&q) > bound {
                continue;
            }
            if node.is_leaf() {
                for i in node.start..node.end {
                    let id = self.ids[i];
                    if Some(id) == exclude {
                        continue;
                    }
                    let cand = (id, d2(&self.pts[i], &q));
                    if best.len() == k && worse(&cand, &best[k - 1]).is_ge() {
                        continue;
                    }
                    let pos = best.partition_point(|b| worse(b, &cand).is_lt());
                    best.insert(pos, cand);
                    best.truncate(k);
                }
                continue;
            }
            let (l, r) = (&self.nodes[node.left], &self.nodes[node.right]);
            if l.box_dist2(&q) <= r.box_dist2(&q) {
                stack.push(node.right);
                stack.push(node.left);
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        best
    }
}
