//! The r_dipole neighbor graph over bath spins and enumeration of all
//! connected index subsets (clusters) up to the expansion order, with the
//! subcluster bookkeeping the recursion needs.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::structure::BathArray;

/// Adjacency over bath-spin indices: an edge exists iff the two spins are
/// within `r_dipole` of each other.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<u32>>,
    pub r_dipole: f64,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adjacency[v as usize]
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        self.adjacency[i as usize].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|n| n.len()).sum::<usize>() / 2
    }

    /// Builds a graph directly from an adjacency list (tests, dumps).
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i != j {
                adjacency[i as usize].push(j);
                adjacency[j as usize].push(i);
            }
        }
        for lst in adjacency.iter_mut() {
            lst.sort_unstable();
            lst.dedup();
        }
        Self {
            adjacency,
            r_dipole: 0.0,
        }
    }
}

/// Pairwise distance rule over the bath.
pub fn build_graph(bath: &BathArray, r_dipole: f64) -> Result<NeighborGraph> {
    if r_dipole <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "r_dipole {r_dipole} must be > 0"
        )));
    }
    let n = bath.len();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if (bath.position(i) - bath.position(j)).norm() <= r_dipole {
                adjacency[i].push(j as u32);
                adjacency[j].push(i as u32);
            }
        }
    }
    Ok(NeighborGraph {
        adjacency,
        r_dipole,
    })
}

/// All connected clusters up to `order`, grouped by size. Cluster identity
/// is the sorted index tuple; each size class is in lexicographic order.
#[derive(Debug, Clone)]
pub struct ClusterSet {
    by_size: Vec<Vec<Vec<u32>>>,
    members: HashSet<Vec<u32>>,
}

impl ClusterSet {
    pub fn order(&self) -> usize {
        self.by_size.len()
    }

    /// Clusters of one size, 1-based (`size = 1` are the singletons).
    pub fn of_size(&self, size: usize) -> &[Vec<u32>] {
        &self.by_size[size - 1]
    }

    pub fn total(&self) -> usize {
        self.by_size.iter().map(|v| v.len()).sum()
    }

    pub fn contains(&self, cluster: &[u32]) -> bool {
        self.members.contains(cluster)
    }

    /// All clusters, sizes ascending, lexicographic within a size.
    pub fn iter(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.by_size.iter().flatten()
    }

    /// One cluster per line, indices space-separated: the debug dump format.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for cluster in self.iter() {
            let row: Vec<String> = cluster.iter().map(|i| i.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Enumerates every connected induced subset of size <= order exactly once,
/// growing each subset from its smallest vertex and extending only through
/// neighbors with larger indices (the ESU scheme). A candidate enters the
/// extension list only if it is not already a member or a neighbor of the
/// current subset, which is what guarantees uniqueness. Singletons are
/// included unconditionally, edges are required from size 2 upward.
pub fn enumerate_clusters(graph: &NeighborGraph, order: usize) -> Result<ClusterSet> {
    if order < 1 {
        return Err(Error::InvalidArgument(format!("order {order} must be >= 1")));
    }
    let n = graph.n();
    let mut by_size: Vec<Vec<Vec<u32>>> = vec![Vec::new(); order];
    // subset ∪ {neighbors of the subset above the anchor}, maintained by
    // backtracking across the recursion
    let mut seen = vec![false; n];

    let mut subset: Vec<u32> = Vec::with_capacity(order);
    for anchor in 0..n as u32 {
        subset.push(anchor);
        by_size[0].push(subset.clone());
        if order > 1 {
            let extension: Vec<u32> = graph
                .neighbors(anchor)
                .iter()
                .copied()
                .filter(|&u| u > anchor)
                .collect();
            seen[anchor as usize] = true;
            for &u in &extension {
                seen[u as usize] = true;
            }
            extend(graph, anchor, &mut subset, &extension, order, &mut seen, &mut by_size);
            seen[anchor as usize] = false;
            for &u in &extension {
                seen[u as usize] = false;
            }
        }
        subset.pop();
    }
    for class in by_size.iter_mut() {
        class.sort_unstable();
    }
    let members = by_size.iter().flatten().cloned().collect();
    Ok(ClusterSet { by_size, members })
}

#[allow(clippy::too_many_arguments)]
fn extend(
    graph: &NeighborGraph,
    anchor: u32,
    subset: &mut Vec<u32>,
    extension: &[u32],
    order: usize,
    seen: &mut [bool],
    by_size: &mut [Vec<Vec<u32>>],
) {
    for (pos, &u) in extension.iter().enumerate() {
        let mut grown = subset.clone();
        grown.push(u);
        grown.sort_unstable();
        by_size[grown.len() - 1].push(grown.clone());
        if grown.len() == order {
            continue;
        }
        // remaining candidates keep their order, then the exclusive new
        // neighbors of u
        let mut next_ext: Vec<u32> = extension[pos + 1..].to_vec();
        let fresh_start = next_ext.len();
        for &w in graph.neighbors(u) {
            if w > anchor && !seen[w as usize] {
                seen[w as usize] = true;
                next_ext.push(w);
            }
        }
        let keep = std::mem::replace(subset, grown);
        extend(graph, anchor, subset, &next_ext, order, seen, by_size);
        *subset = keep;
        for &w in &next_ext[fresh_start..] {
            seen[w as usize] = false;
        }
    }
}

/// Proper subsets of `cluster` that are themselves members of the set,
/// ordered by size then lexicographically.
pub fn subclusters(cluster: &[u32], set: &ClusterSet) -> Result<Vec<Vec<u32>>> {
    if !set.contains(cluster) {
        return Err(Error::ClusterNotFound(cluster.to_vec()));
    }
    let k = cluster.len();
    let mut out: Vec<Vec<u32>> = Vec::new();
    for mask in 1u32..((1 << k) - 1) {
        let sub: Vec<u32> = (0..k)
            .filter(|&b| mask & (1 << b) != 0)
            .map(|b| cluster[b])
            .collect();
        if set.contains(&sub) {
            out.push(sub);
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}
