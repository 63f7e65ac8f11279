//! Merge tracking and recovery of the multilevel explanation tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};
use crate::solver::{fit_sparse, LeafFit, LocalQuadratic};

/// Union-find with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
    components: usize,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            components: n,
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn component_count(&self) -> usize {
        self.components
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Joins the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        self.components -= 1;
        true
    }

    /// Unions `i` and `j`, returning the event when two clusters actually merged.
    pub fn record_merge(&mut self, i: usize, j: usize, k: usize, beta: f64) -> Option<MergeEvent> {
        let (root_i, root_j) = (self.find(i), self.find(j));
        self.union(i, j).then_some(MergeEvent {
            k,
            beta,
            i,
            j,
            root_i,
            root_j,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub k: usize,
    pub beta: f64,
    pub i: usize,
    pub j: usize,
    /// Roots of the two clusters just before the union.
    pub root_i: usize,
    pub root_j: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    /// Sorted instance indices.
    pub members: Vec<usize>,
    pub level_k: usize,
    /// Fusion level at which the node formed; 0 for leaves.
    pub beta: f64,
    pub theta: Option<Array1<f64>>,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Partition of the instances after one merge level.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeLevel {
    /// Path level of the merges; `None` for the leaf partition.
    pub k: Option<usize>,
    pub beta: f64,
    /// Node ids of the clusters, sorted.
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationTree {
    pub n: usize,
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<usize>,
    pub levels: Vec<TreeLevel>,
}

/// Rebuilds the dendrogram from merge events. All unions at one path level
/// form a single tree level; each group of clusters joined there becomes one
/// new node.
pub fn build_tree(events: &[MergeEvent], n: usize) -> Result<ExplanationTree> {
    if n == 0 {
        return Err(MameError::invalid("tree needs at least one instance"));
    }
    if let Some(e) = events.iter().find(|e| e.i >= n || e.j >= n) {
        return Err(MameError::invalid(format!("merge event ({}, {}) out of range for n = {n}", e.i, e.j)));
    }
    if events.windows(2).any(|w| w[1].k < w[0].k) {
        return Err(MameError::invalid("merge events must be ordered by level"));
    }

    let mut nodes: Vec<TreeNode> = (0..n)
        .map(|i| TreeNode {
            id: i,
            members: vec![i],
            level_k: 0,
            beta: 0.0,
            theta: None,
            children: Vec::new(),
            parent: None,
        })
        .collect();
    let mut ds = DisjointSet::new(n);
    let mut node_of_root: Vec<usize> = (0..n).collect();
    let mut active: BTreeSet<usize> = (0..n).collect();
    let mut levels = vec![TreeLevel {
        k: None,
        beta: 0.0,
        clusters: active.iter().copied().collect(),
    }];

    let mut start = 0;
    while start < events.len() {
        let k = events[start].k;
        let end = start + events[start..].iter().take_while(|e| e.k == k).count();
        let group = &events[start..end];
        start = end;
        let beta = group.iter().map(|e| e.beta).fold(f64::NEG_INFINITY, f64::max);

        // Join clusters (by node id) touched at this level.
        let mut local: BTreeMap<usize, usize> = BTreeMap::new();
        fn root_of(local: &mut BTreeMap<usize, usize>, x: usize) -> usize {
            let mut r = x;
            while let Some(&p) = local.get(&r) {
                if p == r {
                    break;
                }
                r = p;
            }
            r
        }
        for e in group {
            let a = node_of_root[ds.find(e.i)];
            let b = node_of_root[ds.find(e.j)];
            local.entry(a).or_insert(a);
            local.entry(b).or_insert(b);
            let (ra, rb) = (root_of(&mut local, a), root_of(&mut local, b));
            if ra != rb {
                local.insert(ra.max(rb), ra.min(rb));
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let keys: Vec<usize> = local.keys().copied().collect();
        for node in keys {
            let r = root_of(&mut local, node);
            groups.entry(r).or_default().push(node);
        }
        let mut created = false;
        let mut new_groups: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() > 1).collect();
        new_groups.sort_by_key(|g| g.iter().map(|&c| nodes[c].members[0]).min());
        for children in new_groups {
            let id = nodes.len();
            let mut members: Vec<usize> = children.iter().flat_map(|&c| nodes[c].members.iter().copied()).collect();
            members.sort_unstable();
            for &c in &children {
                nodes[c].parent = Some(id);
                active.remove(&c);
                ds.union(members[0], nodes[c].members[0]);
            }
            let root = ds.find(members[0]);
            node_of_root[root] = id;
            active.insert(id);
            nodes.push(TreeNode {
                id,
                members,
                level_k: k,
                beta,
                theta: None,
                children,
                parent: None,
            });
            created = true;
        }
        if created {
            levels.push(TreeLevel {
                k: Some(k),
                beta,
                clusters: active.iter().copied().collect(),
            });
        }
    }

    let roots = active.into_iter().collect();
    Ok(ExplanationTree { n, nodes, roots, levels })
}

impl ExplanationTree {
    /// Checks the dendrogram invariants, returning a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let leaves = self.nodes.iter().filter(|n| n.is_leaf()).count();
        if leaves != self.n {
            return Err(format!("{leaves} leaves for {} instances", self.n));
        }
        for node in &self.nodes {
            if node.is_leaf() {
                continue;
            }
            let mut union: Vec<usize> = Vec::new();
            for &c in &node.children {
                let child = &self.nodes[c];
                if child.parent != Some(node.id) {
                    return Err(format!("node {c} does not point back to parent {}", node.id));
                }
                if child.beta >= node.beta {
                    return Err(format!("beta does not increase from node {c} to {}", node.id));
                }
                union.extend(&child.members);
            }
            let before = union.len();
            union.sort_unstable();
            union.dedup();
            if union.len() != before {
                return Err(format!("children of node {} overlap", node.id));
            }
            if union != node.members {
                return Err(format!("node {} members differ from its children's union", node.id));
            }
        }
        let mut prev = usize::MAX;
        for level in &self.levels {
            let mut seen = vec![false; self.n];
            for &c in &level.clusters {
                for &m in &self.nodes[c].members {
                    if std::mem::replace(&mut seen[m], true) {
                        return Err(format!("instance {m} appears twice in one level"));
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return Err("a level does not cover every instance".into());
            }
            if level.clusters.len() > prev {
                return Err("cluster count increases along the levels".into());
            }
            prev = level.clusters.len();
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Cluster index of every instance at `level`.
    pub fn assignment(&self, level: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (c, &node) in self.levels[level].clusters.iter().enumerate() {
            for &m in &self.nodes[node].members {
                out[m] = c;
            }
        }
        out
    }

    /// Per-instance explanations at a level: column `i` is the representative of `i`'s cluster.
    pub fn expanded_theta(&self, level: usize) -> Result<Array2<f64>> {
        let clusters = &self.levels[level].clusters;
        let q = self
            .nodes
            .iter()
            .find_map(|n| n.theta.as_ref().map(|t| t.len()))
            .ok_or_else(|| MameError::invalid("tree has no representative explanations"))?;
        let mut out = Array2::zeros((q, self.n));
        for &c in clusters {
            let theta = self.nodes[c]
                .theta
                .as_ref()
                .ok_or_else(|| MameError::invalid(format!("node {c} lacks an explanation")))?;
            for &m in &self.nodes[c].members {
                out.column_mut(m).assign(theta);
            }
        }
        Ok(out)
    }
}

/// Fits one shared sparse explanation per internal node over the pooled
/// fidelity terms of its members; leaves keep their leaf fits.
pub fn fit_representatives(
    tree: &mut ExplanationTree,
    quads: &[LocalQuadratic],
    leaf: &LeafFit,
    mask: &[f64],
    target: usize,
) -> Result<()> {
    if quads.len() != tree.n || leaf.n() != tree.n {
        return Err(MameError::invalid("fidelity terms do not match the tree"));
    }
    let fits: Vec<(usize, Array1<f64>)> = tree
        .nodes
        .par_iter()
        .map(|node| {
            if node.members.is_empty() {
                return Err(MameError::invalid(format!("node {} has no members", node.id)));
            }
            let theta = if node.is_leaf() {
                leaf.theta0.column(node.members[0]).to_owned()
            } else {
                let pooled = LocalQuadratic::pooled(node.members.iter().map(|&m| &quads[m])).expect("non-empty");
                fit_sparse(&pooled, mask, target)?.theta
            };
            Ok((node.id, theta))
        })
        .collect::<Result<_>>()?;
    for (id, theta) in fits {
        tree.nodes[id].theta = Some(theta);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub node: usize,
    pub members: Vec<usize>,
    pub theta: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelView {
    pub requested: usize,
    /// Index into [`ExplanationTree::levels`].
    pub level: usize,
    pub k: Option<usize>,
    pub beta: f64,
    pub clusters: Vec<Cluster>,
    /// True when no level has exactly the requested number of clusters.
    pub skipped: bool,
}

impl LevelView {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }
}

/// The partition with `c` clusters (latest such level), or the nearest
/// coarser one when merges skipped over `c`.
pub fn select_level(tree: &ExplanationTree, c: usize) -> Result<LevelView> {
    if c < 1 || c > tree.n {
        return Err(MameError::invalid(format!("cluster count {c} outside 1..={}", tree.n)));
    }
    let exact = tree.levels.iter().rposition(|l| l.clusters.len() == c);
    let (level, skipped) = match exact {
        Some(idx) => (idx, false),
        None => match tree.levels.iter().position(|l| l.clusters.len() < c) {
            Some(idx) => (idx, true),
            None => (tree.levels.len() - 1, true),
        },
    };
    Ok(view_of(tree, level, c, skipped))
}

pub fn level_view(tree: &ExplanationTree, level: usize) -> LevelView {
    let c = tree.levels[level].clusters.len();
    view_of(tree, level, c, false)
}

fn view_of(tree: &ExplanationTree, level: usize, requested: usize, skipped: bool) -> LevelView {
    let l = &tree.levels[level];
    LevelView {
        requested,
        level,
        k: l.k,
        beta: l.beta,
        clusters: l
            .clusters
            .iter()
            .map(|&id| Cluster {
                node: id,
                members: tree.nodes[id].members.clone(),
                theta: tree.nodes[id].theta.clone(),
            })
            .collect(),
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub id: usize,
    pub level_k: usize,
    pub beta: f64,
    pub members: Vec<usize>,
    pub theta: Vec<f64>,
    pub children: Vec<usize>,
}

/// Serialized tree: `{nodes, n, p, feature_names}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub nodes: Vec<NodeExport>,
    pub n: usize,
    pub p: usize,
    pub feature_names: Vec<String>,
}

impl ExplanationTree {
    pub fn to_export(&self, feature_names: &[String]) -> TreeExport {
        TreeExport {
            nodes: self
                .nodes
                .iter()
                .map(|node| NodeExport {
                    id: node.id,
                    level_k: node.level_k,
                    beta: node.beta,
                    members: node.members.clone(),
                    theta: node.theta.as_ref().map(|t| t.to_vec()).unwrap_or_default(),
                    children: node.children.clone(),
                })
                .collect(),
            n: self.n,
            p: feature_names.len(),
            feature_names: feature_names.to_vec(),
        }
    }

    /// Reconstructs a tree (levels included) from its serialized form.
    pub fn from_export(export: &TreeExport) -> Result<Self> {
        let n = export.n;
        let count = export.nodes.len();
        if export.nodes.iter().enumerate().any(|(i, node)| node.id != i) {
            return Err(MameError::invalid("tree nodes must be listed by id"));
        }
        let mut nodes: Vec<TreeNode> = export
            .nodes
            .iter()
            .map(|node| TreeNode {
                id: node.id,
                members: node.members.clone(),
                level_k: node.level_k,
                beta: node.beta,
                theta: (!node.theta.is_empty()).then(|| Array1::from_vec(node.theta.clone())),
                children: node.children.clone(),
                parent: None,
            })
            .collect();
        for id in 0..count {
            for c in nodes[id].children.clone() {
                if c >= count {
                    return Err(MameError::invalid(format!("node {id} references missing child {c}")));
                }
                nodes[c].parent = Some(id);
            }
        }
        if nodes.iter().filter(|node| node.is_leaf()).count() != n {
            return Err(MameError::invalid("leaf count does not match n"));
        }
        let mut active: BTreeSet<usize> = nodes.iter().filter(|node| node.is_leaf()).map(|node| node.id).collect();
        let mut levels = vec![TreeLevel {
            k: None,
            beta: 0.0,
            clusters: active.iter().copied().collect(),
        }];
        let mut internal: Vec<&TreeNode> = nodes.iter().filter(|node| !node.is_leaf()).collect();
        internal.sort_by_key(|node| (node.level_k, node.id));
        let mut i = 0;
        while i < internal.len() {
            let k = internal[i].level_k;
            let mut beta: f64 = 0.0;
            while i < internal.len() && internal[i].level_k == k {
                for c in &internal[i].children {
                    active.remove(c);
                }
                active.insert(internal[i].id);
                beta = beta.max(internal[i].beta);
                i += 1;
            }
            levels.push(TreeLevel {
                k: Some(k),
                beta,
                clusters: active.iter().copied().collect(),
            });
        }
        let roots = active.into_iter().collect();
        let tree = ExplanationTree { n, nodes, roots, levels };
        tree.validate().map_err(MameError::InvalidInput)?;
        Ok(tree)
    }

    /// Graphviz rendering: node id, cluster size and the three largest |theta| features.
    pub fn to_dot(&self, feature_names: &[String]) -> String {
        let mut out = String::from("digraph explanation_tree {\n  node [shape=box];\n");
        for node in &self.nodes {
            let mut label = format!("#{} (n={})", node.id, node.members.len());
            if let Some(theta) = &node.theta {
                let mut order: Vec<usize> = (0..theta.len()).collect();
                order.sort_by(|&a, &b| theta[b].abs().total_cmp(&theta[a].abs()).then(a.cmp(&b)));
                for &j in order.iter().take(3).filter(|&&j| theta[j] != 0.0) {
                    let name = feature_names.get(j).map(String::as_str).unwrap_or("?");
                    let _ = write!(label, "\\n{name}: {:.3}", theta[j]);
                }
            }
            let _ = writeln!(out, "  n{} [label=\"{}\"];", node.id, label.replace('"', "'"));
        }
        for node in &self.nodes {
            for c in &node.children {
                let _ = writeln!(out, "  n{} -> n{};", node.id, c);
            }
        }
        out.push_str("}\n");
        out
    }
}
