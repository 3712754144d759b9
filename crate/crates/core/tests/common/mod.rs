//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sanitrack::Point3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, half_extent: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-half_extent..half_extent),
                rng.random_range(-half_extent..half_extent),
                1.0 + rng.random_range(-half_extent..half_extent),
            )
        })
        .collect()
}

/// Points spread uniformly inside a ball.
pub fn blob(rng: &mut ChaCha8Rng, center: Point3, radius: f64, n: usize) -> Vec<Point3> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            out.push(center + v * radius);
        }
    }
    out
}

fn dist(a: Point3, b: Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

// ---------------------------------------------------------------- density

/// O(n^2) Gaussian KDE with no cutoff, self term included.
pub fn exact_kde(points: &[Point3], h: f64) -> Vec<f64> {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).powf(1.5) * h * h * h);
    points
        .iter()
        .map(|&p| {
            let s: f64 = points.iter().map(|&q| (-dist(p, q).powi(2) / (2.0 * h * h)).exp()).sum();
            s * norm / points.len() as f64
        })
        .collect()
}

/// Midpoint-rule integral of `f` over the box `[lo, hi]` with `cells` cells
/// per axis.
pub fn integrate_box(lo: Point3, hi: Point3, cells: usize, f: impl Fn(Point3) -> f64) -> f64 {
    let step = |a: f64, b: f64| (b - a) / cells as f64;
    let (sx, sy, sz) = (step(lo.x, hi.x), step(lo.y, hi.y), step(lo.z, hi.z));
    let mut total = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            for k in 0..cells {
                let q = Point3::new(
                    lo.x + (i as f64 + 0.5) * sx,
                    lo.y + (j as f64 + 0.5) * sy,
                    lo.z + (k as f64 + 0.5) * sz,
                );
                total += f(q);
            }
        }
    }
    total * sx * sy * sz
}

// ---------------------------------------------------------------- clustering

/// k-th smallest distance to another point, by full sort.
pub fn brute_core_distances(points: &[Point3], k: usize) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut d: Vec<f64> =
                points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &q)| dist(p, q)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

pub fn reachability(points: &[Point3], core: &[f64], a: usize, b: usize) -> f64 {
    core[a].max(core[b]).max(dist(points[a], points[b]))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        x = parent[x];
    }
    x
}

/// Kruskal over the complete mutual-reachability graph. Edges `(a, b, w)`
/// with `a < b`, in (weight, a, b) order.
pub fn kruskal(points: &[Point3], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut all = Vec::with_capacity(n * n / 2);
    for a in 0..n {
        for b in a + 1..n {
            all.push((a, b, reachability(points, core, a, b)));
        }
    }
    all.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (a, b, w) in all {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            tree.push((a, b, w));
        }
    }
    tree
}

/// Sum of weights taken in ascending order.
pub fn total_weight(weights: impl IntoIterator<Item = f64>) -> f64 {
    let mut w: Vec<f64> = weights.into_iter().collect();
    w.sort_by(f64::total_cmp);
    w.iter().sum()
}

fn components(members: &[usize], edges: &[(usize, usize, f64)]) -> Vec<Vec<usize>> {
    let index: BTreeMap<usize, usize> = members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let mut parent: Vec<usize> = (0..members.len()).collect();
    for &(a, b, _) in edges {
        let (ra, rb) = (find(&mut parent, index[&a]), find(&mut parent, index[&b]));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &m) in members.iter().enumerate() {
        groups.entry(find(&mut parent, i)).or_default().push(m);
    }
    groups.into_values().collect()
}

fn lambda(w: f64) -> f64 {
    if w > 0.0 {
        1.0 / w
    } else {
        f64::MAX
    }
}

struct Node {
    members: Vec<usize>,
    stability: f64,
    children: Vec<usize>,
}

/// Top-down condensation by deleting spanning-tree edges heaviest first.
fn condense_set(
    members: Vec<usize>,
    mut edges: Vec<(usize, usize, f64)>,
    birth: f64,
    mcs: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node { members: members.clone(), stability: 0.0, children: Vec::new() });
    let mut current = members;
    loop {
        let Some(cut) = edges.pop() else { break };
        let l = lambda(cut.2);
        let parts = components(&current, &edges);
        let (a, b) = (&parts[0], &parts[1]);
        let keep = |part: &Vec<usize>, edges: &[(usize, usize, f64)]| -> Vec<(usize, usize, f64)> {
            edges.iter().copied().filter(|e| part.contains(&e.0)).collect()
        };
        match (a.len() >= mcs, b.len() >= mcs) {
            (true, true) => {
                nodes[id].stability += (l - birth) * (a.len() + b.len()) as f64;
                let (ea, eb) = (keep(a, &edges), keep(b, &edges));
                let ca = condense_set(a.clone(), ea, l, mcs, nodes);
                let cb = condense_set(b.clone(), eb, l, mcs, nodes);
                nodes[id].children = vec![ca, cb];
                break;
            }
            (false, false) => {
                nodes[id].stability += (l - birth) * (a.len() + b.len()) as f64;
                break;
            }
            (big_a, _) => {
                let (big, small) = if big_a { (a, b) } else { (b, a) };
                nodes[id].stability += (l - birth) * small.len() as f64;
                edges = keep(big, &edges);
                current = big.clone();
            }
        }
    }
    id
}

/// Reference HDBSCAN with excess-of-mass selection in which the root is
/// eligible. Labels are renumbered by lowest member index.
pub fn reference_hdbscan(points: &[Point3], mcs: usize, min_samples: usize) -> Vec<i32> {
    let n = points.len();
    if n < mcs || n < 2 {
        return vec![-1; n];
    }
    let k = min_samples.min(n - 1);
    let core = brute_core_distances(points, k);
    let mst = kruskal(points, &core);
    let mut nodes = Vec::new();
    condense_set((0..n).collect(), mst, 0.0, mcs, &mut nodes);

    fn choose(nodes: &[Node], id: usize, out: &mut Vec<usize>) -> f64 {
        let node = &nodes[id];
        let mut picked = Vec::new();
        let child_sum: f64 = node.children.iter().map(|&c| choose(nodes, c, &mut picked)).sum();
        if !node.children.is_empty() && child_sum > node.stability {
            out.extend(picked);
            child_sum
        } else {
            out.push(id);
            node.stability
        }
    }
    let mut chosen = Vec::new();
    choose(&nodes, 0, &mut chosen);

    let mut raw = vec![usize::MAX; n];
    for &c in &chosen {
        for &m in &nodes[c].members {
            raw[m] = c;
        }
    }
    canonical_labels(&raw.iter().map(|&c| if c == usize::MAX { -1 } else { c as i64 }).collect::<Vec<_>>())
}

/// Relabels clusters 0, 1, ... in order of first appearance; negatives map
/// to -1.
pub fn canonical_labels(labels: &[i64]) -> Vec<i32> {
    let mut seen: Vec<i64> = Vec::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                return -1;
            }
            match seen.iter().position(|&s| s == l) {
                Some(i) => i as i32,
                None => {
                    seen.push(l);
                    (seen.len() - 1) as i32
                }
            }
        })
        .collect()
}

// ---------------------------------------------------------------- assignment

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Minimum total cost over every injective map from the smaller side into
/// the larger, enumerated exhaustively. Costs summed in row order.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut perms = Vec::new();
    permutations(&mut (0..rows.max(cols)).collect(), 0, &mut perms);
    let mut best = f64::INFINITY;
    for p in perms {
        let total: f64 = if rows <= cols {
            (0..rows).map(|r| cost[r][p[r]]).sum()
        } else {
            // Row order: each column picks row p[c]; sum rows ascending.
            let mut pairs: Vec<(usize, usize)> = (0..cols).map(|c| (p[c], c)).collect();
            pairs.sort();
            pairs.iter().map(|&(r, c)| cost[r][c]).sum()
        };
        best = best.min(total);
    }
    best
}

// ---------------------------------------------------------------- compliance

/// Length of `[a, b]` not covered by any of `gaps`.
pub fn uncovered_length(a: f64, b: f64, gaps: &[(f64, f64)]) -> f64 {
    let mut covered = 0.0;
    let mut sorted: Vec<(f64, f64)> = gaps.iter().map(|&(s, e)| (s.max(a), e.min(b))).filter(|&(s, e)| e > s).collect();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut reach = a;
    for (s, e) in sorted {
        let s = s.max(reach);
        if e > s {
            covered += e - s;
            reach = e;
        }
    }
    (b - a) - covered
}

/// Earliest time at which `required` seconds of `[a, b]` outside `gaps`
/// have elapsed.
pub fn ready_time(a: f64, b: f64, gaps: &[(f64, f64)], required: f64) -> Option<f64> {
    let mut bounds: Vec<f64> = vec![a, b];
    for &(s, e) in gaps {
        bounds.extend([s, e].into_iter().filter(|&t| t > a && t < b));
    }
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    for w in bounds.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let before = uncovered_length(a, lo, gaps);
        let gated = gaps.iter().any(|&(s, e)| s <= lo && hi <= e);
        if !gated && before + (hi - lo) >= required {
            return Some(lo + (required - before));
        }
    }
    None
}
