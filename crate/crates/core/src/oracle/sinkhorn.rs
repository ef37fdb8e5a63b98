//! Tree-structured multi-marginal Sinkhorn via log-domain message passing.
//!
//! The coupling is represented through one log-potential per leaf on top of
//! the kernel reference; each update re-imposes one leaf marginal exactly.
//! Marginalization never forms the joint tensor: messages flow along the
//! tree as kernel-vector log-sum-exp products, so the cost per update is
//! `O(|V| G^2)`.

use std::collections::HashMap;

use ndarray::Array1;

use super::grid::{log_sum_exp, GridMeasure, TreeKernelSet};
use super::OracleError;
use crate::tree::{NodeId, UndirectedTree};

/// Per-leaf log-potentials with their iteration tags: `iteration` counts
/// single-leaf updates, `quotient` completed cycles over all leaves.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    pub psi: HashMap<NodeId, Array1<f64>>,
    pub iteration: usize,
    pub quotient: usize,
}

/// Converged solver output.
#[derive(Debug, Clone)]
pub struct SinkhornRun {
    pub potentials: PotentialSet,
    pub node_marginals: HashMap<NodeId, GridMeasure>,
    pub iterations: usize,
    pub final_max_tv: f64,
    /// Per-update `KL(pi^n | pi^{n-1})`.
    pub kl_trace: Vec<f64>,
}

/// Leaf update order: ascending node id, with the root moved last when it is
/// itself a leaf.
pub fn oracle_leaf_order(tree: &UndirectedTree, root: NodeId) -> Vec<NodeId> {
    let mut leaves = tree.leaves();
    if let Some(pos) = leaves.iter().position(|&l| l == root) {
        leaves.remove(pos);
        leaves.push(root);
    }
    leaves
}

struct Solver<'a> {
    kernels: &'a TreeKernelSet,
    tree: &'a UndirectedTree,
    log_targets: HashMap<NodeId, Array1<f64>>,
    psi: HashMap<NodeId, Array1<f64>>,
    order: Vec<NodeId>,
}

impl<'a> Solver<'a> {
    fn new(
        kernels: &'a TreeKernelSet,
        tree: &'a UndirectedTree,
        leaf_marginals: &HashMap<NodeId, GridMeasure>,
    ) -> Result<Self, OracleError> {
        let g = kernels.grid().len();
        let mut log_targets = HashMap::new();
        let mut psi = HashMap::new();
        for leaf in tree.leaves() {
            let target = leaf_marginals
                .get(&leaf)
                .ok_or(OracleError::MissingLeafMarginal(leaf))?;
            if target.grid().len() != g {
                return Err(OracleError::GridMismatch);
            }
            log_targets.insert(
                leaf,
                target
                    .weights()
                    .mapv(|w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }),
            );
            psi.insert(leaf, Array1::zeros(g));
        }
        let order = oracle_leaf_order(tree, kernels.root);
        Ok(Self {
            kernels,
            tree,
            log_targets,
            psi,
            order,
        })
    }

    /// Log-factor attached to node `v`: its potential when it is a leaf
    /// (unless excluded) plus the root reference when it is the root.
    fn log_factor(&self, v: NodeId, exclude_psi_of: Option<NodeId>) -> Array1<f64> {
        let g = self.kernels.grid().len();
        let mut f = Array1::zeros(g);
        if let Some(psi) = self.psi.get(&v) {
            if exclude_psi_of != Some(v) {
                f += psi;
            }
        }
        if v == self.kernels.root {
            f += self.kernels.log_root_factor();
        }
        f
    }

    /// Message from `from` into `to` over the edge `{from, to}`:
    /// `lse_x [ log A(x_to, x) + log_factor(from)(x) + incoming messages ]`.
    fn edge_message(&self, from: NodeId, to: NodeId, vec_at_from: &Array1<f64>) -> Array1<f64> {
        let kernel = self.kernels.log_kernel(from, to);
        let g = vec_at_from.len();
        Array1::from_shape_fn(g, |i| {
            let col = Array1::from_shape_fn(g, |j| kernel[[i, j]] + vec_at_from[j]);
            log_sum_exp(&col)
        })
    }

    /// Unnormalized log-marginal at `node` of the current measure,
    /// optionally with the node's own potential left out.
    fn log_marginal(&self, node: NodeId, exclude_own_psi: bool) -> Result<Array1<f64>, OracleError> {
        let rooted = self.tree.root_at(node).expect("valid node");
        let mut up: HashMap<NodeId, Array1<f64>> = HashMap::new();
        for &(parent, child) in rooted.breadth_first_edges().iter().rev() {
            let mut vec = self.log_factor(child, None);
            for &grandchild in rooted.children_of(child) {
                vec += &up[&grandchild];
            }
            up.insert(child, self.edge_message(child, parent, &vec));
        }
        let exclude = if exclude_own_psi { Some(node) } else { None };
        let mut lm = self.log_factor(node, exclude);
        for &child in rooted.children_of(node) {
            lm += &up[&child];
        }
        if lm.iter().all(|v| !v.is_finite()) {
            return Err(OracleError::NumericalUnderflow);
        }
        Ok(lm)
    }

    /// One proportional-fitting update of `leaf`; returns `KL(new | old)`.
    fn update_leaf(&mut self, leaf: NodeId) -> Result<f64, OracleError> {
        let bare = self.log_marginal(leaf, true)?;
        let full = &bare + &self.psi[&leaf];
        let log_z = log_sum_exp(&full);
        let target = &self.log_targets[&leaf];
        let mut kl = 0.0;
        for i in 0..full.len() {
            if target[i] > f64::NEG_INFINITY {
                kl += target[i].exp() * (target[i] - (full[i] - log_z));
            }
        }
        let new_psi = Array1::from_shape_fn(full.len(), |i| {
            if target[i] > f64::NEG_INFINITY {
                target[i] - bare[i]
            } else {
                f64::NEG_INFINITY
            }
        });
        self.psi.insert(leaf, new_psi);
        Ok(kl.max(0.0))
    }

    fn max_leaf_tv(&self) -> Result<f64, OracleError> {
        let mut worst = 0.0f64;
        for leaf in self.tree.leaves() {
            let lm = self.log_marginal(leaf, false)?;
            let log_z = log_sum_exp(&lm);
            let target = &self.log_targets[&leaf];
            let tv = 0.5
                * lm.iter()
                    .zip(target.iter())
                    .map(|(&l, &t)| ((l - log_z).exp() - t.exp()).abs())
                    .sum::<f64>();
            worst = worst.max(tv);
        }
        Ok(worst)
    }

    /// Marginals of every node via one upward and one downward pass from the
    /// kernel root.
    fn all_marginals(&self) -> Result<HashMap<NodeId, GridMeasure>, OracleError> {
        let root = self.kernels.root;
        let rooted = self.tree.root_at(root).expect("valid root");
        let mut up: HashMap<NodeId, Array1<f64>> = HashMap::new();
        for &(parent, child) in rooted.breadth_first_edges().iter().rev() {
            let mut vec = self.log_factor(child, None);
            for &grandchild in rooted.children_of(child) {
                vec += &up[&grandchild];
            }
            up.insert(child, self.edge_message(child, parent, &vec));
        }
        let mut down: HashMap<NodeId, Array1<f64>> = HashMap::new();
        for &(parent, child) in rooted.breadth_first_edges() {
            let mut vec = self.log_factor(parent, None);
            if let Some(d) = down.get(&parent) {
                vec += d;
            }
            for &sibling in rooted.children_of(parent) {
                if sibling != child {
                    vec += &up[&sibling];
                }
            }
            down.insert(child, self.edge_message(parent, child, &vec));
        }
        let mut out = HashMap::new();
        for v in 0..self.tree.node_count() {
            let mut lm = self.log_factor(v, None);
            if let Some(d) = down.get(&v) {
                lm += d;
            }
            for &child in rooted.children_of(v) {
                lm += &up[&child];
            }
            let log_z = log_sum_exp(&lm);
            if !log_z.is_finite() {
                return Err(OracleError::NumericalUnderflow);
            }
            let weights = lm.mapv(|l| (l - log_z).exp());
            out.insert(v, GridMeasure::new(self.kernels.grid().clone(), weights)?);
        }
        Ok(out)
    }
}

/// Runs proportional fitting until every leaf marginal matches its target
/// within `tol` in total variation (checked at cycle ends), or fails with
/// [`OracleError::NoConvergence`] after `max_iter` single-leaf updates.
pub fn tree_sinkhorn_mp(
    kernels: &TreeKernelSet,
    tree: &UndirectedTree,
    leaf_marginals: &HashMap<NodeId, GridMeasure>,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornRun, OracleError> {
    let mut solver = Solver::new(kernels, tree, leaf_marginals)?;
    let k = solver.order.len();
    let mut kl_trace = Vec::new();
    let mut iterations = 0;
    let mut max_tv = f64::INFINITY;
    while iterations < max_iter {
        let leaf = solver.order[iterations % k];
        kl_trace.push(solver.update_leaf(leaf)?);
        iterations += 1;
        if iterations % k == 0 {
            max_tv = solver.max_leaf_tv()?;
            if max_tv <= tol {
                break;
            }
        }
    }
    if max_tv > tol {
        return Err(OracleError::NoConvergence {
            iterations,
            residual: max_tv,
        });
    }
    finish(solver, iterations, max_tv, kl_trace)
}

/// Runs exactly `n_iterations` single-leaf updates, no convergence check.
/// The brute-force twin uses the same schedule, which makes the two
/// implementations comparable iteration by iteration.
pub fn tree_sinkhorn_mp_iters(
    kernels: &TreeKernelSet,
    tree: &UndirectedTree,
    leaf_marginals: &HashMap<NodeId, GridMeasure>,
    n_iterations: usize,
) -> Result<SinkhornRun, OracleError> {
    let mut solver = Solver::new(kernels, tree, leaf_marginals)?;
    let k = solver.order.len();
    let mut kl_trace = Vec::new();
    for n in 0..n_iterations {
        let leaf = solver.order[n % k];
        kl_trace.push(solver.update_leaf(leaf)?);
    }
    let max_tv = solver.max_leaf_tv()?;
    finish(solver, n_iterations, max_tv, kl_trace)
}

fn finish(
    solver: Solver<'_>,
    iterations: usize,
    final_max_tv: f64,
    kl_trace: Vec<f64>,
) -> Result<SinkhornRun, OracleError> {
    let node_marginals = solver.all_marginals()?;
    let k = solver.order.len();
    Ok(SinkhornRun {
        potentials: PotentialSet {
            psi: solver.psi,
            iteration: iterations,
            quotient: iterations / k,
        },
        node_marginals,
        iterations,
        final_max_tv,
        kl_trace,
    })
}
