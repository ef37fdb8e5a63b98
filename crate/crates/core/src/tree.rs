//! Weighted trees, rooting, and traversal orders.
//!
//! The coupling problems solved by this crate live on a weighted undirected
//! tree. [`UndirectedTree`] validates the tree structure once at construction;
//! [`DirectedTree`] is a rooted view with all edges oriented away from the
//! root, in breadth-first order. Both are immutable: re-rooting returns a new
//! `DirectedTree`, which keeps repeated root changes cheap and side-effect
//! free.

use std::collections::VecDeque;

use thiserror::Error;

/// Dense node identifier in `0..node_count`.
pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("edge list contains a cycle")]
    CycleDetected,
    #[error("tree is not connected")]
    Disconnected,
    #[error("edge {{{u}, {v}}} has non-positive weight {w}")]
    NonPositiveWeight { u: NodeId, v: NodeId, w: f64 },
    #[error("duplicate edge {{{u}, {v}}}")]
    DuplicateEdge { u: NodeId, v: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("path endpoints must differ")]
    SameNode,
    #[error("tree needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
}

/// A connected acyclic weighted graph on nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedTree {
    node_count: usize,
    edges: Vec<(NodeId, NodeId, f64)>,
    neighbors: Vec<Vec<NodeId>>,
}

impl UndirectedTree {
    /// Validates and builds a tree from a weighted edge list.
    ///
    /// Requires `node_count >= 2`, positive weights, no duplicate edges, and
    /// exactly the connectivity of a tree (`node_count - 1` edges, all nodes
    /// reachable).
    pub fn build(node_count: usize, edges: &[(NodeId, NodeId, f64)]) -> Result<Self, TreeError> {
        if node_count < 2 {
            return Err(TreeError::TooFewNodes(node_count));
        }
        let mut neighbors = vec![Vec::new(); node_count];
        let mut seen = std::collections::HashSet::new();
        for &(u, v, w) in edges {
            if u >= node_count {
                return Err(TreeError::UnknownNode(u));
            }
            if v >= node_count {
                return Err(TreeError::UnknownNode(v));
            }
            if u == v {
                return Err(TreeError::CycleDetected);
            }
            if w <= 0.0 || !w.is_finite() {
                return Err(TreeError::NonPositiveWeight { u, v, w });
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(TreeError::DuplicateEdge { u, v });
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        if edges.len() > node_count - 1 {
            return Err(TreeError::CycleDetected);
        }
        if edges.len() < node_count - 1 {
            return Err(TreeError::Disconnected);
        }
        // Edge count equals node_count - 1, so connectivity rules out cycles.
        let mut visited = vec![false; node_count];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if !visited[v] {
                    visited[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        if reached != node_count {
            return Err(TreeError::Disconnected);
        }
        for adj in &mut neighbors {
            adj.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: edges.to_vec(),
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(NodeId, NodeId, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.neighbors[v]
    }

    /// Degree-1 nodes, ascending.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.node_count)
            .filter(|&v| self.neighbors[v].len() == 1)
            .collect()
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        v < self.node_count && self.neighbors[v].len() == 1
    }

    /// True when one node is adjacent to every leaf (the barycenter layout).
    pub fn is_star(&self) -> bool {
        self.node_count >= 3 && (0..self.node_count).any(|v| self.neighbors[v].len() == self.node_count - 1)
    }

    /// The hub of a star tree, if there is one.
    pub fn star_center(&self) -> Option<NodeId> {
        if self.node_count < 3 {
            return None;
        }
        (0..self.node_count).find(|&v| self.neighbors[v].len() == self.node_count - 1)
    }

    /// Weight of the undirected edge `{u, v}`.
    pub fn edge_weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.edges
            .iter()
            .find(|&&(a, b, _)| (a, b) == (u, v) || (a, b) == (v, u))
            .map(|&(_, _, w)| w)
    }

    /// Orients every edge away from `root`, breadth-first with children in
    /// ascending id order.
    pub fn root_at(&self, root: NodeId) -> Result<DirectedTree, TreeError> {
        if root >= self.node_count {
            return Err(TreeError::UnknownNode(root));
        }
        let mut parent_of = vec![None; self.node_count];
        let mut children_of = vec![Vec::new(); self.node_count];
        let mut directed_edges = Vec::with_capacity(self.node_count - 1);
        let mut visited = vec![false; self.node_count];
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !visited[v] {
                    visited[v] = true;
                    parent_of[v] = Some(u);
                    children_of[u].push(v);
                    directed_edges.push((u, v));
                    queue.push_back(v);
                }
            }
        }
        Ok(DirectedTree {
            root,
            directed_edges,
            parent_of,
            children_of,
        })
    }

    /// The unique chain of directed edges from `a` to `b`.
    pub fn leaf_path(&self, a: NodeId, b: NodeId) -> Result<EdgePath, TreeError> {
        if a >= self.node_count {
            return Err(TreeError::UnknownNode(a));
        }
        if b >= self.node_count {
            return Err(TreeError::UnknownNode(b));
        }
        if a == b {
            return Err(TreeError::SameNode);
        }
        // Walk up the tree rooted at `a`: the parent chain from `b` is the path.
        let rooted = self.root_at(a)?;
        let mut rev = Vec::new();
        let mut v = b;
        while let Some(p) = rooted.parent_of(v) {
            rev.push((p, v));
            v = p;
        }
        rev.reverse();
        Ok(EdgePath { edges: rev })
    }
}

/// A rooted orientation of an [`UndirectedTree`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedTree {
    root: NodeId,
    directed_edges: Vec<(NodeId, NodeId)>,
    parent_of: Vec<Option<NodeId>>,
    children_of: Vec<Vec<NodeId>>,
}

impl DirectedTree {
    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Directed edges in breadth-first order from the root; every edge
    /// appears after the edge leading to its parent.
    pub fn breadth_first_edges(&self) -> &[(NodeId, NodeId)] {
        &self.directed_edges
    }

    pub fn parent_of(&self, v: NodeId) -> Option<NodeId> {
        self.parent_of.get(v).copied().flatten()
    }

    pub fn children_of(&self, v: NodeId) -> &[NodeId] {
        &self.children_of[v]
    }

    pub fn node_count(&self) -> usize {
        self.parent_of.len()
    }
}

/// An ordered chain of directed edges between two nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgePath {
    edges: Vec<(NodeId, NodeId)>,
}

impl EdgePath {
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Same chain traversed the other way, edge by edge.
    pub fn reversed(&self) -> EdgePath {
        EdgePath {
            edges: self.edges.iter().rev().map(|&(u, v)| (v, u)).collect(),
        }
    }
}

/// Diffusion horizon assigned to an edge of weight `w` at regularization
/// `epsilon`: `epsilon / (2 w)`.
pub fn horizon_time(epsilon: f64, weight: f64) -> Result<f64, TreeError> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(TreeError::NonPositiveWeight { u: 0, v: 0, w: epsilon });
    }
    if weight <= 0.0 || !weight.is_finite() {
        return Err(TreeError::NonPositiveWeight { u: 0, v: 0, w: weight });
    }
    Ok(epsilon / (2.0 * weight))
}
