//! HDBSCAN over the density-filtered cloud.
//!
//! Pipeline: core distances (k-th neighbour, self excluded) -> exact minimum
//! spanning tree of the mutual-reachability graph (Prim, O(n^2)) -> single
//! linkage hierarchy -> condensed tree with `min_cluster_size` -> excess of
//! mass selection. The root may be selected, so a lone object yields one
//! cluster rather than none.

use crate::error::{param, Result};
use crate::frames::Point3;
use crate::kdtree::KdTree;

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Neighbour rank used for core distances.
    pub min_samples: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { min_cluster_size: 15, min_samples: 10 }
    }
}

impl ClusterParams {
    pub fn new(min_cluster_size: usize, min_samples: usize) -> Result<Self> {
        let p = Self { min_cluster_size, min_samples };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(param("min_cluster_size must be >= 2"));
        }
        if self.min_samples < 1 {
            return Err(param("min_samples must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Per point: cluster number, or [`NOISE`].
    pub labels: Vec<i32>,
    pub centroids: Vec<Point3>,
    pub sizes: Vec<usize>,
}

impl ClusterResult {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Member points of cluster `c`.
    pub fn members<'a>(&'a self, points: &'a [Point3], c: usize) -> impl Iterator<Item = Point3> + 'a {
        self.labels.iter().zip(points).filter(move |(&l, _)| l == c as i32).map(|(_, &p)| p)
    }
}

/// Distance from each point to its `k`-th nearest other point.
pub fn core_distances(points: &[Point3], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(param("core distance rank must be >= 1"));
    }
    if points.len() <= k {
        return Err(param(format!("core distance rank {k} needs more than {k} points, got {}", points.len())));
    }
    let tree = KdTree::build(points);
    Ok(points.iter().enumerate().map(|(i, &p)| tree.k_nearest_excluding(p, k, Some(i))[k - 1].1.sqrt()).collect())
}

pub fn mutual_reachability(a: Point3, b: Point3, core_a: f64, core_b: f64) -> f64 {
    core_a.max(core_b).max(a.dist(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Exact MST of the mutual-reachability graph, edges sorted by
/// (weight, lower index, higher index) with `a < b`. Ties are broken by that
/// same order, so the tree is unique.
pub fn minimum_spanning_tree(points: &[Point3], core: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return edges;
    }
    let mut remaining: Vec<usize> = (1..n).collect();
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut current = 0usize;
    while !remaining.is_empty() {
        let (pc, cc) = (points[current], core[current]);
        let mut pick = 0usize;
        for (slot, &j) in remaining.iter().enumerate() {
            let w = mutual_reachability(pc, points[j], cc, core[j]);
            if w < best[j] || (w == best[j] && current < from[j]) {
                best[j] = w;
                from[j] = current;
            }
            let r = remaining[pick];
            let key = |x: usize| (from[x].min(x), from[x].max(x));
            if best[j] < best[r] || (best[j] == best[r] && key(j) < key(r)) {
                pick = slot;
            }
        }
        let next = remaining.swap_remove(pick);
        let (a, b) = (from[next].min(next), from[next].max(next));
        edges.push(MstEdge { a, b, weight: best[next] });
        current = next;
    }
    edges.sort_by(|x, y| x.weight.total_cmp(&y.weight).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Binary merge tree: node `n + i` joins `left` and `right` at `distance`.
#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

fn single_linkage(n: usize, mst: &[MstEdge]) -> Vec<Merge> {
    let mut uf = UnionFind::new(2 * n);
    let mut size = vec![1usize; 2 * n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (i, e) in mst.iter().enumerate() {
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        let node = n + i;
        size[node] = size[ra] + size[rb];
        uf.parent[ra] = node;
        uf.parent[rb] = node;
        merges.push(Merge { left: ra, right: rb, distance: e.weight, size: size[node] });
    }
    merges
}

/// One row of the condensed tree: `child` (a point `< n` or a cluster label
/// `>= n`) leaves `parent` at density level `lambda`.
#[derive(Debug, Clone, Copy)]
struct CondensedRow {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::MAX
    }
}

fn condense(n: usize, merges: &[Merge], min_cluster_size: usize) -> Vec<CondensedRow> {
    let root = 2 * n - 2;
    let node_size = |x: usize| if x < n { 1 } else { merges[x - n].size };
    let mut relabel = vec![0usize; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut rows = Vec::with_capacity(n + 16);

    let leaves_under = |x: usize, out: &mut Vec<usize>| {
        let mut stack = vec![x];
        while let Some(y) = stack.pop() {
            if y < n {
                out.push(y);
            } else {
                stack.push(merges[y - n].right);
                stack.push(merges[y - n].left);
            }
        }
    };

    // Top-down over internal nodes that still belong to a cluster.
    let mut queue = std::collections::VecDeque::from([root]);
    let mut scratch = Vec::new();
    while let Some(node) = queue.pop_front() {
        let m = merges[node - n];
        let lambda = lambda_of(m.distance);
        let parent = relabel[node];
        let (l, r) = (m.left, m.right);
        let (ls, rs) = (node_size(l), node_size(r));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        let mut fall_out = |x: usize, rows: &mut Vec<CondensedRow>| {
            scratch.clear();
            leaves_under(x, &mut scratch);
            rows.extend(scratch.iter().map(|&p| CondensedRow { parent, child: p, lambda, size: 1 }));
        };
        match (big_l, big_r) {
            (true, true) => {
                for (child, size) in [(l, ls), (r, rs)] {
                    relabel[child] = next_label;
                    rows.push(CondensedRow { parent, child: next_label, lambda, size });
                    next_label += 1;
                    queue.push_back(child);
                }
            }
            (false, false) => {
                fall_out(l, &mut rows);
                fall_out(r, &mut rows);
            }
            (true, false) | (false, true) => {
                let (keep, drop) = if big_l { (l, r) } else { (r, l) };
                fall_out(drop, &mut rows);
                if keep >= n {
                    relabel[keep] = parent;
                    queue.push_back(keep);
                } else {
                    // A single point can only be "big" when min_cluster_size is 1.
                    rows.push(CondensedRow { parent, child: keep, lambda, size: 1 });
                }
            }
        }
    }
    rows
}

/// Cluster labels (>= n) chosen by excess of mass, root included.
fn select_clusters(n: usize, rows: &[CondensedRow]) -> (Vec<usize>, Vec<Option<usize>>) {
    let n_labels = rows.iter().map(|r| r.child.max(r.parent)).max().map_or(n + 1, |m| m + 1);
    let count = n_labels - n;
    let mut birth = vec![0.0f64; count];
    let mut cluster_parent: Vec<Option<usize>> = vec![None; count];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); count];
    for r in rows.iter().filter(|r| r.child >= n) {
        birth[r.child - n] = r.lambda;
        cluster_parent[r.child - n] = Some(r.parent);
        children[r.parent - n].push(r.child);
    }
    let mut stability = vec![0.0f64; count];
    for r in rows {
        let c = r.parent - n;
        stability[c] += (r.lambda - birth[c]) * r.size as f64;
    }
    // Children always carry larger labels than their parent.
    let mut value = vec![0.0f64; count];
    let mut selected = vec![false; count];
    for c in (0..count).rev() {
        let child_sum: f64 = children[c].iter().map(|&ch| value[ch - n]).sum();
        if !children[c].is_empty() && child_sum > stability[c] {
            value[c] = child_sum;
        } else {
            value[c] = stability[c];
            selected[c] = true;
            let mut stack: Vec<usize> = children[c].clone();
            while let Some(d) = stack.pop() {
                selected[d - n] = false;
                stack.extend_from_slice(&children[d - n]);
            }
        }
    }
    let chosen = (0..count).filter(|&c| selected[c]).map(|c| c + n).collect();
    (chosen, cluster_parent)
}

/// Full HDBSCAN. Points are labelled with the selected cluster that contains
/// them in the condensed tree; clusters are numbered by their lowest member
/// index.
pub fn cluster(points: &[Point3], params: &ClusterParams) -> Result<ClusterResult> {
    params.validate()?;
    let n = points.len();
    if n < params.min_cluster_size || n < 2 {
        return Ok(ClusterResult { labels: vec![NOISE; n], centroids: Vec::new(), sizes: Vec::new() });
    }
    let k = params.min_samples.min(n - 1);
    let core = core_distances(points, k)?;
    let mst = minimum_spanning_tree(points, &core);
    let merges = single_linkage(n, &mst);
    let rows = condense(n, &merges, params.min_cluster_size);
    let (chosen, cluster_parent) = select_clusters(n, &rows);

    let mut point_parent = vec![n; n];
    for r in rows.iter().filter(|r| r.child < n) {
        point_parent[r.child] = r.parent;
    }
    let is_chosen = |c: usize| chosen.binary_search(&c).is_ok();
    let mut raw = vec![usize::MAX; n];
    for (i, slot) in raw.iter_mut().enumerate() {
        let mut c = Some(point_parent[i]);
        while let Some(label) = c {
            if is_chosen(label) {
                *slot = label;
                break;
            }
            c = cluster_parent[label - n];
        }
    }

    // Renumber by first member index.
    let mut order: Vec<usize> = Vec::new();
    for &l in &raw {
        if l != usize::MAX && !order.contains(&l) {
            order.push(l);
        }
    }
    let labels: Vec<i32> = raw
        .iter()
        .map(|&l| if l == usize::MAX { NOISE } else { order.iter().position(|&o| o == l).unwrap() as i32 })
        .collect();
    let (centroids, sizes) = centroids_and_sizes(&labels, points, order.len());
    Ok(ClusterResult { labels, centroids, sizes })
}

fn centroids_and_sizes(labels: &[i32], points: &[Point3], m: usize) -> (Vec<Point3>, Vec<usize>) {
    let mut sums = vec![Point3::ORIGIN; m];
    let mut sizes = vec![0usize; m];
    for (&l, &p) in labels.iter().zip(points) {
        if l >= 0 {
            sums[l as usize] = sums[l as usize] + p;
            sizes[l as usize] += 1;
        }
    }
    let centroids = sums.iter().zip(&sizes).map(|(&s, &c)| s / c as f64).collect();
    (centroids, sizes)
}

/// Arithmetic mean of each cluster's members.
pub fn centroids(result: &ClusterResult, points: &[Point3]) -> Vec<Point3> {
    centroids_and_sizes(&result.labels, points, result.n_clusters()).0
}
