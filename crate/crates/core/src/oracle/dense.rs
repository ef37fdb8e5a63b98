//! Full-tensor brute force for the discrete coupling problem.
//!
//! Materializes the joint distribution over all nodes as one dense tensor
//! (`G^{|V|}` entries), runs proportional fitting on it directly, and
//! evaluates divergences exactly. Only feasible for small grids and trees;
//! that is the point — it is the oracle the message-passing solver is
//! checked against.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use super::grid::GridMeasure;
use super::sinkhorn::oracle_leaf_order;
use super::{OracleError, TreeKernelSet};
use crate::tree::{NodeId, UndirectedTree};

/// Joint distribution over `nodes` variables, each on a `g`-point grid,
/// stored flat with node 0 as the least significant digit.
#[derive(Debug, Clone)]
pub struct CouplingTensor {
    g: usize,
    nodes: usize,
    values: Array1<f64>,
}

impl CouplingTensor {
    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn digit(&self, lin: usize, node: NodeId) -> usize {
        (lin / self.g.pow(node as u32)) % self.g
    }

    /// Marginal distribution of one node.
    pub fn node_marginal(&self, node: NodeId) -> Array1<f64> {
        let mut out = Array1::zeros(self.g);
        for (lin, &v) in self.values.iter().enumerate() {
            out[self.digit(lin, node)] += v;
        }
        out
    }

    /// Joint marginal of a node pair, rows indexed by `u`.
    pub fn pair_marginal(&self, u: NodeId, v: NodeId) -> Array2<f64> {
        let mut out = Array2::zeros((self.g, self.g));
        for (lin, &val) in self.values.iter().enumerate() {
            out[[self.digit(lin, u), self.digit(lin, v)]] += val;
        }
        out
    }
}

/// `KL(a | b)` between two tensors on the same index space.
pub fn kl_tensors(a: &CouplingTensor, b: &CouplingTensor) -> Result<f64, OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::DimensionMismatch(a.len(), b.len()));
    }
    let mut kl = 0.0;
    for (&p, &q) in a.values.iter().zip(b.values.iter()) {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += p * (p / q).ln();
    }
    Ok(kl.max(0.0))
}

fn check_size(kernels: &TreeKernelSet, tree: &UndirectedTree, cap: usize) -> Result<usize, OracleError> {
    let g = kernels.grid().len();
    let mut size = 1usize;
    for _ in 0..tree.node_count() {
        size = size
            .checked_mul(g)
            .ok_or(OracleError::InstanceTooLarge { size: usize::MAX, cap })?;
    }
    if size > cap {
        return Err(OracleError::InstanceTooLarge { size, cap });
    }
    Ok(size)
}

/// Unnormalized log-density of the reference at a flat index.
fn log_reference_at(
    kernels: &TreeKernelSet,
    edges: &[(NodeId, NodeId, f64)],
    root: NodeId,
    g: usize,
    lin: usize,
) -> f64 {
    let digit = |node: NodeId| (lin / g.pow(node as u32)) % g;
    let mut lv = kernels.log_root_factor()[digit(root)];
    for &(u, v, _) in edges {
        lv += kernels.log_kernel(u, v)[[digit(u), digit(v)]];
    }
    lv
}

/// Log of the reference normalizer `sum_x phi_r(x_r) prod_e A_e`.
pub fn reference_log_normalizer(
    kernels: &TreeKernelSet,
    tree: &UndirectedTree,
    cap: usize,
) -> Result<f64, OracleError> {
    let size = check_size(kernels, tree, cap)?;
    let g = kernels.grid().len();
    let logs = Array1::from_shape_fn(size, |lin| {
        log_reference_at(kernels, tree.edges(), kernels.root, g, lin)
    });
    Ok(super::grid::log_sum_exp(&logs))
}

/// The normalized reference coupling as a dense tensor.
pub fn dense_reference(
    kernels: &TreeKernelSet,
    tree: &UndirectedTree,
    cap: usize,
) -> Result<CouplingTensor, OracleError> {
    let size = check_size(kernels, tree, cap)?;
    let g = kernels.grid().len();
    let mut logs = Array1::from_shape_fn(size, |lin| {
        log_reference_at(kernels, tree.edges(), kernels.root, g, lin)
    });
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logs.mapv_inplace(|l| (l - max).exp());
    let total = logs.sum();
    Ok(CouplingTensor {
        g,
        nodes: tree.node_count(),
        values: logs / total,
    })
}

/// Brute-force proportional-fitting run.
#[derive(Debug, Clone)]
pub struct DenseMipfRun {
    pub reference: CouplingTensor,
    pub finalt: CouplingTensor,
    /// Exact `KL(pi^n | pi^{n-1})` per update.
    pub kl_increments: Vec<f64>,
    /// Max over leaves of `TV(leaf marginal, target)` at the end of each
    /// full cycle.
    pub max_leaf_tv_per_cycle: Vec<f64>,
    /// `(iteration, tensor)` snapshots every `keep_every` updates, when
    /// requested.
    pub snapshots: Vec<(usize, CouplingTensor)>,
    pub iterations: usize,
}

/// Runs `n_iterations` single-leaf proportional-fitting updates on the full
/// tensor, in the same leaf order as the message-passing solver.
pub fn dense_mipf(
    kernels: &TreeKernelSet,
    tree: &UndirectedTree,
    leaf_marginals: &HashMap<NodeId, GridMeasure>,
    n_iterations: usize,
    cap: usize,
    keep_every: usize,
) -> Result<DenseMipfRun, OracleError> {
    let reference = dense_reference(kernels, tree, cap)?;
    let g = reference.g;
    let order = oracle_leaf_order(tree, kernels.root);
    let mut targets: HashMap<NodeId, Array1<f64>> = HashMap::new();
    for &leaf in &order {
        let t = leaf_marginals
            .get(&leaf)
            .ok_or(OracleError::MissingLeafMarginal(leaf))?;
        if t.grid().len() != g {
            return Err(OracleError::GridMismatch);
        }
        targets.insert(leaf, t.weights().clone());
    }

    let mut current = reference.clone();
    let mut kl_increments = Vec::with_capacity(n_iterations);
    let mut max_leaf_tv_per_cycle = Vec::new();
    let mut snapshots = Vec::new();
    let k = order.len();
    for n in 0..n_iterations {
        let leaf = order[n % k];
        let target = &targets[&leaf];
        let marg = current.node_marginal(leaf);
        // KL(pi^{n+1} | pi^n) collapses to a sum over the updated marginal.
        let mut kl = 0.0;
        let mut scale = Array1::zeros(g);
        for i in 0..g {
            if target[i] > 0.0 {
                kl += target[i] * (target[i] / marg[i]).ln();
                scale[i] = target[i] / marg[i];
            }
        }
        kl_increments.push(kl.max(0.0));
        for (lin, v) in current.values.iter_mut().enumerate() {
            *v *= scale[(lin / g.pow(leaf as u32)) % g];
        }
        let total = current.values.sum();
        current.values /= total;

        if (n + 1) % k == 0 {
            let mut worst = 0.0f64;
            for (&leaf, target) in &targets {
                let marg = current.node_marginal(leaf);
                let tv = 0.5 * marg.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
                worst = worst.max(tv);
            }
            max_leaf_tv_per_cycle.push(worst);
        }
        if keep_every > 0 && (n + 1) % keep_every == 0 {
            snapshots.push((n + 1, current.clone()));
        }
    }
    Ok(DenseMipfRun {
        reference,
        finalt: current,
        kl_increments,
        max_leaf_tv_per_cycle,
        snapshots,
        iterations: n_iterations,
    })
}

/// Both sides of the objective decomposition for a tree-factorized coupling:
///
/// * left: `epsilon * KL(pi | pi0)` against the normalized dense reference;
/// * right: per-edge transport-minus-entropy terms, the node-entropy
///   correction, the root divergence `KL(pi_r | mu0)`, and the reference
///   log-normalizer term that the kernel construction introduces.
///
/// Fails with [`OracleError::NotTreeFactorized`] when the coupling does not
/// factorize along the rooted tree.
pub fn wp_objective_check(
    coupling: &CouplingTensor,
    kernels: &TreeKernelSet,
    tree: &UndirectedTree,
    mu0: &GridMeasure,
    cap: usize,
) -> Result<(f64, f64), OracleError> {
    let g = coupling.g;
    if g != kernels.grid().len() || mu0.grid().len() != g {
        return Err(OracleError::GridMismatch);
    }
    let root = kernels.root;
    let rooted = tree.root_at(root).expect("valid root");

    // Factorization check: rebuild the joint from the rooted pair marginals
    // and compare.
    let node_margs: Vec<Array1<f64>> = (0..tree.node_count()).map(|v| coupling.node_marginal(v)).collect();
    let pair_margs: Vec<((NodeId, NodeId), Array2<f64>)> = rooted
        .breadth_first_edges()
        .iter()
        .map(|&(u, v)| ((u, v), coupling.pair_marginal(u, v)))
        .collect();
    let mut residual = 0.0f64;
    for (lin, &val) in coupling.values.iter().enumerate() {
        let digit = |node: NodeId| (lin / g.pow(node as u32)) % g;
        let mut rebuilt = node_margs[root][digit(root)];
        for ((u, v), pm) in &pair_margs {
            let mu = node_margs[*u][digit(*u)];
            if mu == 0.0 {
                rebuilt = 0.0;
                break;
            }
            rebuilt *= pm[[digit(*u), digit(*v)]] / mu;
        }
        residual = residual.max((rebuilt - val).abs());
    }
    if residual > 1e-9 {
        return Err(OracleError::NotTreeFactorized { residual });
    }

    let reference = dense_reference(kernels, tree, cap)?;
    let eps = kernels.epsilon;
    let lhs = eps * kl_tensors(coupling, &reference)?;

    let entropy = |p: &Array1<f64>| -> f64 { -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>() };
    let entropy2 = |p: &Array2<f64>| -> f64 { -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>() };

    let mut rhs = 0.0;
    for ((u, v), pm) in &pair_margs {
        let w = tree.edge_weight(*u, *v).expect("edge exists");
        let mut transport = 0.0;
        for i in 0..g {
            for j in 0..g {
                if pm[[i, j]] > 0.0 {
                    transport += pm[[i, j]] * kernels.grid().sq_dist(i, j);
                }
            }
        }
        rhs += w * transport - eps * entropy2(pm);
    }
    for v in 0..tree.node_count() {
        let children = rooted.children_of(v).len() as f64;
        rhs += eps * children * entropy(&node_margs[v]);
    }
    // KL(pi_r | mu0) over the grid.
    let mut kl_root = 0.0;
    for i in 0..g {
        let p = node_margs[root][i];
        if p > 0.0 {
            let q = mu0.weights()[i];
            if q == 0.0 {
                kl_root = f64::INFINITY;
                break;
            }
            kl_root += p * (p / q).ln();
        }
    }
    rhs += eps * kl_root.max(0.0);
    // The raw edge kernels are unnormalized Gaussian factors; their joint
    // normalizer enters the divergence side as a constant.
    rhs += eps * reference_log_normalizer(kernels, tree, cap)?;
    Ok((lhs, rhs))
}
