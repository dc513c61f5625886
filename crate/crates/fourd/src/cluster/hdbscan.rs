//! Density-based hierarchical clustering (HDBSCAN) with excess-of-mass
//! cluster extraction.
//!
//! The stages are the classic ones: per-point core distances, mutual
//! reachability distances, a minimum spanning tree over the implicit
//! complete graph, a single-linkage merge tree, condensation at
//! `min_cluster_size`, and stability-based extraction. Everything is
//! deterministic: ties are broken by lowest point index, cluster labels are
//! assigned in order of each cluster's smallest member index, and no
//! randomness is involved anywhere.
//!
//! Semantics fixed here, applied identically by any reference
//! implementation used to verify this one:
//!
//! - The core distance of a point is the distance to its
//!   `min_samples`-th nearest *other* point. A dataset with
//!   `n <= min_samples` or `n < min_cluster_size` is all noise.
//! - Zero distances give infinite density (lambda = 1/0); the arithmetic
//!   carries through IEEE infinities.
//! - The tree root is not an extraction candidate, with one exception:
//!   when condensation produces no other candidate (the hierarchy never
//!   splits into two groups of at least `min_cluster_size`), the root
//!   becomes the single cluster holding every point. A 100-point pile of
//!   identical positions is one cluster, not noise.
//! - On stability ties the parent is preferred over its children.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HdbscanError {
    #[error("min_cluster_size must be at least 2, got {0}")]
    BadMinClusterSize(usize),
    #[error("min_samples must be at least 1, got {0}")]
    BadMinSamples(usize),
    #[error("point {index} has dimension {got}, expected {expected}")]
    MixedDimensions { index: usize, got: usize, expected: usize },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbor count for core distances; `None` means `min_cluster_size`.
    pub min_samples: Option<usize>,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self::new(15)
    }
}

impl HdbscanParams {
    pub fn new(min_cluster_size: usize) -> Self {
        Self { min_cluster_size, min_samples: None }
    }

    fn effective_min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }
}

/// Per-point labels: `-1` is noise, clusters are `0..num_clusters`, numbered
/// by ascending smallest member index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub labels: Vec<i32>,
    pub num_clusters: usize,
}

pub fn hdbscan(data: &[Vec<f64>], params: &HdbscanParams) -> Result<Labeling, HdbscanError> {
    if params.min_cluster_size < 2 {
        return Err(HdbscanError::BadMinClusterSize(params.min_cluster_size));
    }
    let min_samples = params.effective_min_samples();
    if min_samples < 1 {
        return Err(HdbscanError::BadMinSamples(min_samples));
    }
    let n = data.len();
    if n == 0 {
        return Ok(Labeling { labels: Vec::new(), num_clusters: 0 });
    }
    let dim = data[0].len();
    for (index, p) in data.iter().enumerate() {
        if p.len() != dim {
            return Err(HdbscanError::MixedDimensions { index, got: p.len(), expected: dim });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(HdbscanError::NonFinite { index });
        }
    }
    if n < params.min_cluster_size || n <= min_samples {
        return Ok(Labeling { labels: vec![-1; n], num_clusters: 0 });
    }

    let core = core_distances(data, min_samples);
    let mst = prim_mst(data, &core);
    let linkage = single_linkage(&mst, n);
    let condensed = condense(&linkage, n, params.min_cluster_size);
    let chosen = extract_clusters(&condensed);
    Ok(label_points(&condensed, &chosen, n))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Distance from each point to its `k`-th nearest other point.
fn core_distances(data: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut row = vec![0.0f64; n - 1];
    for i in 0..n {
        let mut m = 0;
        for j in 0..n {
            if i != j {
                row[m] = euclidean(&data[i], &data[j]);
                m += 1;
            }
        }
        let (_, kth, _) = row.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        out.push(*kth);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct MstEdge {
    a: usize,
    b: usize,
    dist: f64,
}

/// Prim's algorithm over the implicit mutual reachability graph.
fn prim_mst(data: &[Vec<f64>], core: &[f64]) -> Vec<MstEdge> {
    let n = data.len();
    let mut in_tree = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);

    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_dist = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = euclidean(&data[current], &data[j]);
            let mrd = d.max(core[current]).max(core[j]);
            if mrd < best_dist[j] {
                best_dist[j] = mrd;
                best_from[j] = current;
            }
            // Lowest index wins ties, which `<` against a scan in
            // ascending j already guarantees.
            if best_dist[j] < next_dist {
                next_dist = best_dist[j];
                next = j;
            }
        }
        debug_assert!(next != usize::MAX);
        edges.push(MstEdge { a: best_from[next], b: next, dist: next_dist });
        in_tree[next] = true;
        current = next;
    }
    edges
}

/// One internal node of the single-linkage dendrogram. Leaves are point
/// indices `0..n`; internal nodes are `n..2n-1` in merge order.
#[derive(Debug, Clone, Copy)]
struct LinkageNode {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

fn single_linkage(mst: &[MstEdge], n: usize) -> Vec<LinkageNode> {
    let mut order: Vec<usize> = (0..mst.len()).collect();
    order.sort_by(|&x, &y| {
        mst[x]
            .dist
            .total_cmp(&mst[y].dist)
            .then_with(|| mst[x].a.min(mst[x].b).cmp(&mst[y].a.min(mst[y].b)))
            .then_with(|| mst[x].a.max(mst[x].b).cmp(&mst[y].a.max(mst[y].b)))
    });

    // Union-find where each set remembers the dendrogram node representing it.
    let mut parent: Vec<usize> = (0..n).collect();
    let mut set_node: Vec<usize> = (0..n).collect();
    let mut set_size: Vec<usize> = vec![1; n];
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut nodes = Vec::with_capacity(n - 1);
    for idx in order {
        let e = mst[idx];
        let ra = find(&mut parent, e.a);
        let rb = find(&mut parent, e.b);
        debug_assert_ne!(ra, rb);
        let node_id = n + nodes.len();
        nodes.push(LinkageNode {
            left: set_node[ra],
            right: set_node[rb],
            dist: e.dist,
            size: set_size[ra] + set_size[rb],
        });
        parent[rb] = ra;
        set_size[ra] += set_size[rb];
        set_node[ra] = node_id;
    }
    nodes
}

/// A membership event in the condensed tree: `child` (a point or a cluster)
/// separates from cluster `parent` at density `lambda`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CondensedEntry {
    pub parent: usize,
    pub child: CondensedChild,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CondensedChild {
    Point(usize),
    Cluster(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct CondensedTree {
    pub entries: Vec<CondensedEntry>,
    /// Birth lambda per condensed cluster id; id 0 is the root.
    pub births: Vec<f64>,
    /// Parent condensed cluster per cluster id (root points to itself).
    pub parents: Vec<usize>,
}

fn lambda_of(dist: f64) -> f64 {
    if dist <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / dist
    }
}

/// Walks the dendrogram top-down, keeping only splits where both sides hold
/// at least `min_cluster_size` points; smaller side branches dissolve into
/// point fall-out events.
fn condense(linkage: &[LinkageNode], n: usize, min_cluster_size: usize) -> CondensedTree {
    let node = |id: usize| &linkage[id - n];
    let leaf_count = |id: usize| if id < n { 1 } else { node(id).size };

    let mut tree = CondensedTree {
        entries: Vec::new(),
        births: vec![0.0],
        parents: vec![0],
    };
    let root_node = n + linkage.len() - 1;

    // (dendrogram node, condensed cluster it currently belongs to)
    let mut stack: Vec<(usize, usize)> = vec![(root_node, 0)];
    while let Some((id, cluster)) = stack.pop() {
        if id < n {
            // A bare leaf reached directly: it falls out of `cluster` at
            // the lambda of the merge that exposed it, handled by callers
            // below; reaching here only happens for n == 1 trees.
            continue;
        }
        let nd = node(id);
        let lambda = lambda_of(nd.dist);
        let (l, r) = (nd.left, nd.right);
        let (ls, rs) = (leaf_count(l), leaf_count(r));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        if big_l && big_r {
            // True split: two new condensed clusters are born.
            for side in [l, r] {
                let child_id = tree.births.len();
                tree.births.push(lambda);
                tree.parents.push(cluster);
                tree.entries.push(CondensedEntry {
                    parent: cluster,
                    child: CondensedChild::Cluster(child_id),
                    lambda,
                    size: leaf_count(side),
                });
                stack.push((side, child_id));
            }
        } else {
            // The cluster survives through this merge; small sides shed
            // their points at this lambda.
            for (side, big) in [(l, big_l), (r, big_r)] {
                if big {
                    stack.push((side, cluster));
                } else {
                    shed_points(side, lambda, cluster, n, linkage, &mut tree);
                }
            }
        }
    }
    tree
}

/// Emits a fall-out entry at `lambda` for every leaf under `id`.
fn shed_points(
    id: usize,
    lambda: f64,
    cluster: usize,
    n: usize,
    linkage: &[LinkageNode],
    tree: &mut CondensedTree,
) {
    let mut stack = vec![id];
    while let Some(x) = stack.pop() {
        if x < n {
            tree.entries.push(CondensedEntry {
                parent: cluster,
                child: CondensedChild::Point(x),
                lambda,
                size: 1,
            });
        } else {
            let nd = &linkage[x - n];
            stack.push(nd.left);
            stack.push(nd.right);
        }
    }
}

/// Excess-of-mass selection. Returns the chosen condensed cluster ids.
fn extract_clusters(tree: &CondensedTree) -> Vec<usize> {
    let num = tree.births.len();
    let mut stability = vec![0.0f64; num];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); num];
    for e in &tree.entries {
        // A cluster born at infinite density (duplicate points) has no
        // mass left to lose; inf - inf must not poison the sum with NaN.
        let gain = e.lambda - tree.births[e.parent];
        if !gain.is_nan() {
            stability[e.parent] += gain * e.size as f64;
        }
        if let CondensedChild::Cluster(c) = e.child {
            children[e.parent].push(c);
        }
    }

    if num == 1 {
        // The hierarchy never split: the root is the single cluster.
        return vec![0];
    }

    // Children always have higher ids than parents, so one descending pass
    // visits children first.
    let mut selected = vec![false; num];
    let mut subtree = vec![0.0f64; num];
    for c in (1..num).rev() {
        let child_sum: f64 = children[c].iter().map(|&k| subtree[k]).sum();
        if children[c].is_empty() || stability[c] >= child_sum {
            selected[c] = true;
            subtree[c] = stability[c];
        } else {
            subtree[c] = child_sum;
        }
    }

    // Top-down sweep keeps only the highest selected cluster on each path.
    let mut chosen = Vec::new();
    let mut stack: Vec<usize> = children[0].clone();
    while let Some(c) = stack.pop() {
        if selected[c] {
            chosen.push(c);
        } else {
            stack.extend(children[c].iter().copied());
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Assigns each point the chosen ancestor cluster of its fall-out entry,
/// then renumbers clusters by their smallest member index.
fn label_points(tree: &CondensedTree, chosen: &[usize], n: usize) -> Labeling {
    let mut is_chosen = vec![false; tree.births.len()];
    for &c in chosen {
        is_chosen[c] = true;
    }
    let mut raw = vec![-1i64; n];
    for e in &tree.entries {
        if let CondensedChild::Point(p) = e.child {
            let mut c = e.parent;
            loop {
                if is_chosen[c] {
                    raw[p] = c as i64;
                    break;
                }
                if c == 0 {
                    break;
                }
                c = tree.parents[c];
            }
        }
    }

    let mut first_member: Vec<(usize, i64)> = Vec::new();
    for (idx, &c) in raw.iter().enumerate() {
        if c >= 0 && !first_member.iter().any(|&(_, fc)| fc == c) {
            first_member.push((idx, c));
        }
    }
    let mut labels = vec![-1i32; n];
    for (new_id, &(_, c)) in first_member.iter().enumerate() {
        for (idx, &rc) in raw.iter().enumerate() {
            if rc == c {
                labels[idx] = new_id as i32;
            }
        }
    }
    Labeling { labels, num_clusters: first_member.len() }
}
