//! A from-the-definition density clustering oracle.
//!
//! Everything is done the slow, obvious way: full distance matrix, core
//! distances by sorting whole rows, Kruskal's MST over all O(n^2) edges,
//! an explicit boxed dendrogram, recursive condensation, and per-point
//! stability sums. It shares no code (and no algorithmic shortcuts) with
//! the library implementation; agreement between the two is evidence both
//! realize the same semantics:
//!
//! - core distance = distance to the k-th nearest other point,
//! - root never extracted unless the tree has no other candidate,
//! - stability ties prefer the parent,
//! - labels numbered by smallest member index, noise = -1.

/// Returns per-point labels (-1 noise) for the given parameters.
pub fn naive_hdbscan(data: &[Vec<f64>], min_cluster_size: usize, min_samples: usize) -> Vec<i32> {
    let n = data.len();
    if n == 0 {
        return Vec::new();
    }
    if n < min_cluster_size || n <= min_samples {
        return vec![-1; n];
    }

    // Full pairwise distances.
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for (x, y) in data[i].iter().zip(&data[j]) {
                let d = x - y;
                s += d * d;
            }
            dist[i][j] = s.sqrt();
        }
    }

    // Core distances by sorting each full row.
    let mut core = vec![0.0f64; n];
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
        row.sort_by(|a, b| a.total_cmp(b));
        core[i] = row[min_samples - 1];
    }

    // Kruskal over every pair, by mutual reachability distance.
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mrd = dist[i][j].max(core[i]).max(core[j]);
            edges.push((mrd, i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut owner: Vec<usize> = (0..n).collect();
    let mut trees: Vec<Option<Dendro>> = (0..n).map(|i| Some(Dendro::Leaf(i))).collect();
    let mut merged = 0usize;
    for (w, i, j) in edges {
        let (ri, rj) = (root_of(&owner, i), root_of(&owner, j));
        if ri == rj {
            continue;
        }
        let left = trees[ri].take().expect("left tree present");
        let right = trees[rj].take().expect("right tree present");
        trees[ri] = Some(Dendro::Node(Box::new(left), Box::new(right), w));
        for o in owner.iter_mut() {
            if *o == rj {
                *o = ri;
            }
        }
        merged += 1;
        if merged == n - 1 {
            break;
        }
    }
    let root_tree = trees
        .into_iter()
        .flatten()
        .next()
        .expect("one tree remains");

    // Condense into a cluster hierarchy.
    let root = build_cluster(&root_tree, 0.0, min_cluster_size);

    // Select clusters by excess of mass, then label.
    let mut labels = vec![-1i32; n];
    if root.children.is_empty() {
        // No candidate ever appeared: the root is the single cluster.
        for p in subtree_points(&root) {
            labels[p] = 0;
        }
    } else {
        let mut chosen: Vec<&RefCluster> = Vec::new();
        for child in &root.children {
            choose(child, &mut chosen);
        }
        let mut groups: Vec<Vec<usize>> = chosen.iter().map(|c| subtree_points(c)).collect();
        groups.sort_by_key(|g| *g.iter().min().expect("clusters are non-empty"));
        for (id, group) in groups.iter().enumerate() {
            for &p in group {
                labels[p] = id as i32;
            }
        }
    }
    labels
}

enum Dendro {
    Leaf(usize),
    Node(Box<Dendro>, Box<Dendro>, f64),
}

fn root_of(owner: &[usize], x: usize) -> usize {
    owner[x]
}

fn leaf_count(d: &Dendro) -> usize {
    match d {
        Dendro::Leaf(_) => 1,
        Dendro::Node(l, r, _) => leaf_count(l) + leaf_count(r),
    }
}

fn collect_leaves(d: &Dendro, out: &mut Vec<usize>) {
    match d {
        Dendro::Leaf(p) => out.push(*p),
        Dendro::Node(l, r, _) => {
            collect_leaves(l, out);
            collect_leaves(r, out);
        }
    }
}

struct RefCluster {
    birth: f64,
    /// (point, lambda at which it left this cluster)
    falls: Vec<(usize, f64)>,
    children: Vec<RefCluster>,
}

fn lambda_of(dist: f64) -> f64 {
    if dist <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / dist
    }
}

fn build_cluster(d: &Dendro, birth: f64, mcs: usize) -> RefCluster {
    let mut cl = RefCluster { birth, falls: Vec::new(), children: Vec::new() };
    descend(d, &mut cl, mcs);
    cl
}

fn descend(d: &Dendro, cl: &mut RefCluster, mcs: usize) {
    match d {
        Dendro::Leaf(p) => cl.falls.push((*p, f64::INFINITY)),
        Dendro::Node(l, r, dist) => {
            let lambda = lambda_of(*dist);
            let big_l = leaf_count(l) >= mcs;
            let big_r = leaf_count(r) >= mcs;
            if big_l && big_r {
                cl.children.push(build_cluster(l, lambda, mcs));
                cl.children.push(build_cluster(r, lambda, mcs));
            } else {
                for (side, big) in [(l, big_l), (r, big_r)] {
                    if big {
                        descend(side, cl, mcs);
                    } else {
                        let mut leaves = Vec::new();
                        collect_leaves(side, &mut leaves);
                        for p in leaves {
                            cl.falls.push((p, lambda));
                        }
                    }
                }
            }
        }
    }
}

/// Stability from the pointwise definition: every point of the cluster
/// contributes the density span it stayed a member for.
fn stability(cl: &RefCluster) -> f64 {
    let mut s = 0.0;
    for &(_, lambda) in &cl.falls {
        let gain = lambda - cl.birth;
        if !gain.is_nan() {
            s += gain;
        }
    }
    for child in &cl.children {
        let gain = child.birth - cl.birth;
        if !gain.is_nan() {
            for _ in 0..subtree_points(child).len() {
                s += gain;
            }
        }
    }
    s
}

fn subtree_points(cl: &RefCluster) -> Vec<usize> {
    let mut pts: Vec<usize> = cl.falls.iter().map(|&(p, _)| p).collect();
    for child in &cl.children {
        pts.extend(subtree_points(child));
    }
    pts
}

/// Excess-of-mass: keep this cluster when its own stability reaches the sum
/// of its best descendants, otherwise recurse.
fn choose<'a>(cl: &'a RefCluster, out: &mut Vec<&'a RefCluster>) {
    if cl.children.is_empty() || stability(cl) >= descendant_mass(cl) {
        out.push(cl);
    } else {
        for child in &cl.children {
            choose(child, out);
        }
    }
}

fn descendant_mass(cl: &RefCluster) -> f64 {
    cl.children
        .iter()
        .map(|c| {
            if c.children.is_empty() {
                stability(c)
            } else {
                stability(c).max(descendant_mass(c))
            }
        })
        .sum()
}
