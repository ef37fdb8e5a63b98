//! The bridge engine: cyclic proportional-fitting over the tree's leaves,
//! realized by simulating forward trajectories edge by edge and regressing
//! the reverse-direction transition means.
//!
//! Each undirected edge carries two networks, one per direction. One
//! iteration walks the path from the current root to the targeted leaf; on
//! every path edge it simulates forward with the frozen co-directed
//! network, trains the reverse network on the mean-matching objective, and
//! hands the terminal samples to the next node. Edges off the path are
//! untouched. Everything is a pure function of the experiment config,
//! including all seeds.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ExperimentConfig, LeafSpec, RootMode};
use crate::measures::{
    gen_random_spd, gen_toy2d, reference_gaussian_design, sample_gaussian, GaussianMeasure,
    MeasureError, SampleSet,
};
use crate::net::{loss_and_grads_on_target, AdamState, DriftNetParams, NetError};
use crate::schedule::{ScheduleError, TimeSchedule};
use crate::sde::{em_forward_recorded, Drift, SdeError, TrajectoryBatch};
use crate::tree::{NodeId, TreeError, UndirectedTree};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid experiment config: {0}")]
    ConfigInvalid(String),
    #[error("training diverged at iteration {iteration} on edge ({},{})", edge.0, edge.1)]
    TrainingDiverged { iteration: usize, edge: (NodeId, NodeId) },
    #[error("no cached samples at node {0}")]
    EmptyDataset(NodeId),
    #[error("node {0} is not a leaf of the tree")]
    UnknownLeaf(NodeId),
    #[error("tree is not star-shaped")]
    NotStarTree,
    #[error("root is a leaf; the dedicated first iteration applies only to internal roots")]
    RootIsLeaf,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Two drift networks per undirected edge, keyed by direction.
pub struct EdgeModels {
    nets: HashMap<(NodeId, NodeId), (DriftNetParams, AdamState)>,
}

impl EdgeModels {
    pub fn net(&self, from: NodeId, to: NodeId) -> &DriftNetParams {
        &self.nets[&(from, to)].0
    }

    pub fn adam_steps(&self, from: NodeId, to: NodeId) -> u64 {
        self.nets[&(from, to)].1.step_count
    }

    pub fn directed_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut keys: Vec<_> = self.nets.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }
}

/// Mutable bookkeeping of the proportional-fitting sweep.
pub struct IpfState {
    /// Completed single-leaf iterations.
    pub iteration: usize,
    /// Leaf order of the current cycle.
    pub cycle_order: Vec<NodeId>,
    /// Node the tree is currently rooted at (last targeted leaf, or the
    /// configured root before the first iteration).
    pub current_root: NodeId,
    /// Cached per-node sample sets.
    pub datasets: HashMap<NodeId, SampleSet>,
    master_seed: u64,
}

/// Per-iteration training summary.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cycle: usize,
    pub leaf: NodeId,
    pub edges_trained: usize,
    pub final_loss: f64,
    pub mean_loss: f64,
}

pub struct Engine {
    tree: UndirectedTree,
    schedules: HashMap<(NodeId, NodeId), TimeSchedule>,
    pub models: EdgeModels,
    pub state: IpfState,
    cfg: ExperimentConfig,
    dim: usize,
    /// Exact moments for generated Gaussian leaves, fitted moments for toys.
    leaf_gaussians: BTreeMap<NodeId, GaussianMeasure>,
    hub_reference: Option<GaussianMeasure>,
}

/// Splitmix-style seed derivation; every consumer of randomness gets its own
/// stream keyed by purpose tags.
pub(crate) fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut z = master;
    for &t in tags {
        z = z.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(t.wrapping_mul(0xd1342543de82ef95));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

struct NetDrift<'a> {
    params: &'a DriftNetParams,
}

impl Drift for NetDrift<'_> {
    fn dim(&self) -> usize {
        self.params.dim
    }

    fn eval(&self, _m: usize, t: f64, x: &ArrayView2<f64>) -> Array2<f64> {
        self.params.forward_batch(t, x)
    }
}

fn edge_key(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    (u.min(v), u.max(v))
}

impl Engine {
    /// Validates the config, generates the leaf datasets, builds one
    /// schedule per edge and a zero-initialized network pair per edge, and
    /// seats the root. With all drifts zero the first sampling pass is
    /// exact Brownian motion.
    pub fn new(cfg: ExperimentConfig) -> Result<Self, EngineError> {
        let tree = UndirectedTree::build(cfg.tree_nodes, &cfg.tree_edges)?;
        let leaves = tree.leaves();
        for leaf in &leaves {
            if !cfg.leaves.contains_key(leaf) {
                return Err(EngineError::ConfigInvalid(format!(
                    "leaf {leaf} has no dataset spec"
                )));
            }
        }
        for node in cfg.leaves.keys() {
            if !tree.is_leaf(*node) {
                return Err(EngineError::ConfigInvalid(format!(
                    "node {node} has a dataset spec but is not a leaf"
                )));
            }
        }
        let root = match cfg.root {
            RootMode::Leaf(r) => {
                if !tree.is_leaf(r) {
                    return Err(EngineError::ConfigInvalid(format!(
                        "root mode is leaf but node {r} is not a leaf"
                    )));
                }
                r
            }
            RootMode::Internal { node, .. } => {
                if tree.is_leaf(node) {
                    return Err(EngineError::ConfigInvalid(format!(
                        "root mode is internal but node {node} is a leaf"
                    )));
                }
                node
            }
        };

        let dim = cfg.data_dim().map_err(EngineError::ConfigInvalid)?;
        let master = cfg.run_seed;

        // Leaf datasets plus their Gaussian summaries.
        let mut datasets = HashMap::new();
        let mut leaf_gaussians = BTreeMap::new();
        for (&leaf, spec) in &cfg.leaves {
            let data = generate_leaf(spec, cfg.dataset_count, derive_seed(master, &[10, leaf as u64]))?;
            let summary = match spec {
                LeafSpec::Gaussian { dim, cond_max, scale, seed } => {
                    gen_random_spd(*dim, *cond_max, *scale, *seed)?
                }
                _ => crate::measures::fit_gaussian(&data)?,
            };
            leaf_gaussians.insert(leaf, summary);
            datasets.insert(leaf, data);
        }

        // Internal roots start from the designed hub Gaussian.
        let mut hub_reference = None;
        if let RootMode::Internal { node, alpha } = cfg.root {
            let measures: Vec<_> = leaf_gaussians.values().cloned().collect();
            let mu0 = reference_gaussian_design(&measures, alpha)?;
            let draws = sample_gaussian(&mu0, cfg.dataset_count, derive_seed(master, &[11]))?;
            datasets.insert(node, draws);
            hub_reference = Some(mu0);
        }

        let mut schedules = HashMap::new();
        for &(u, v, w) in tree.edges() {
            let horizon = crate::tree::horizon_time(cfg.epsilon, w)?;
            schedules.insert(
                edge_key(u, v),
                TimeSchedule::new(cfg.schedule_steps, cfg.schedule_gamma0, horizon)?,
            );
        }

        let mut nets = HashMap::new();
        for &(u, v, _) in tree.edges() {
            for (a, b) in [(u, v), (v, u)] {
                let params = DriftNetParams::init(
                    dim,
                    cfg.train_activation,
                    derive_seed(master, &[12, a as u64, b as u64]),
                );
                let adam = AdamState::new(&params, cfg.train_lr);
                nets.insert((a, b), (params, adam));
            }
        }

        // First cycle: leaves ascending, with a leaf root moved last so the
        // first path starts at the root.
        let mut cycle_order = leaves.clone();
        if let RootMode::Leaf(r) = cfg.root {
            let pos = cycle_order.iter().position(|&l| l == r).expect("root is a leaf");
            cycle_order.remove(pos);
            cycle_order.push(r);
        }

        Ok(Self {
            tree,
            schedules,
            models: EdgeModels { nets },
            state: IpfState {
                iteration: 0,
                cycle_order,
                current_root: root,
                datasets,
                master_seed: master,
            },
            cfg,
            dim,
            leaf_gaussians,
            hub_reference,
        })
    }

    pub fn tree(&self) -> &UndirectedTree {
        &self.tree
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schedule(&self, u: NodeId, v: NodeId) -> &TimeSchedule {
        &self.schedules[&edge_key(u, v)]
    }

    /// Gaussian summary per leaf: exact parameters for generated Gaussian
    /// leaves, moment fits for toys.
    pub fn leaf_gaussians(&self) -> &BTreeMap<NodeId, GaussianMeasure> {
        &self.leaf_gaussians
    }

    /// The designed hub reference measure, in internal-root mode.
    pub fn hub_reference(&self) -> Option<&GaussianMeasure> {
        self.hub_reference.as_ref()
    }

    /// Number of leaves (marginal constraints).
    pub fn leaf_count(&self) -> usize {
        self.tree.leaves().len()
    }

    /// Fresh draws from a leaf's generating measure.
    fn fresh_leaf_samples(&self, leaf: NodeId, count: usize, seed: u64) -> Result<SampleSet, EngineError> {
        let spec = self
            .cfg
            .leaves
            .get(&leaf)
            .ok_or(EngineError::UnknownLeaf(leaf))?;
        Ok(generate_leaf(spec, count, seed)?)
    }

    /// One proportional-fitting iteration: walk the path from the current
    /// root to the next targeted leaf, train the reverse model of every
    /// path edge, and re-root at the target.
    pub fn ipf_iteration(&mut self) -> Result<IterationRecord, EngineError> {
        let k = self.state.cycle_order.len();
        let n = self.state.iteration + 1;
        let idx = (n - 1) % k;
        if idx == 0 && n > 1 {
            self.reshuffle_cycle();
        }
        let target = self.state.cycle_order[idx];
        let path = self.tree.leaf_path(self.state.current_root, target)?;

        // The current iterate pins the marginal at the current root (the
        // previously targeted leaf), so the walk starts from fresh draws of
        // its measure rather than the stale pushforward cached there.
        if self.tree.is_leaf(self.state.current_root) {
            let fresh = self.fresh_leaf_samples(
                self.state.current_root,
                self.cfg.dataset_count,
                derive_seed(self.state.master_seed, &[14, n as u64]),
            )?;
            self.state.datasets.insert(self.state.current_root, fresh);
        }

        let mut losses = Vec::new();
        let mut final_loss = 0.0;
        for (edge_idx, &(from, to)) in path.edges().iter().enumerate() {
            let stats = self.train_reverse_on_edge(n, edge_idx, from, to)?;
            final_loss = stats.final_loss;
            losses.push(stats.mean_loss);
        }

        self.state.current_root = target;
        self.state.iteration = n;
        Ok(IterationRecord {
            iteration: n,
            cycle: (n - 1) / k + 1,
            leaf: target,
            edges_trained: path.len(),
            final_loss,
            mean_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
        })
    }

    /// The dedicated first iteration when the root is an internal node:
    /// forward trajectories start from the hub reference and the reverse
    /// models along the root-to-first-leaf path are trained. This is the
    /// generic iteration applied to the internal root.
    pub fn first_iteration_internal_root(&mut self) -> Result<IterationRecord, EngineError> {
        if !matches!(self.cfg.root, RootMode::Internal { .. }) {
            return Err(EngineError::RootIsLeaf);
        }
        if self.state.iteration != 0 {
            return Err(EngineError::ConfigInvalid(
                "the internal-root first iteration must run before any other".into(),
            ));
        }
        self.ipf_iteration()
    }

    /// Runs `n_cycles` full cycles (one iteration per leaf each), invoking
    /// `hook` after every iteration.
    pub fn run_cycles<F>(&mut self, n_cycles: usize, mut hook: F) -> Result<Vec<IterationRecord>, EngineError>
    where
        F: FnMut(&Engine, &IterationRecord),
    {
        let k = self.state.cycle_order.len();
        let mut records = Vec::with_capacity(n_cycles * k);
        for _ in 0..n_cycles * k {
            let record = self.ipf_iteration()?;
            hook(&*self, &record);
            records.push(record);
        }
        Ok(records)
    }

    /// New leaf order for the next cycle. The first leaf must differ from
    /// the current root, otherwise the connecting path would be empty.
    fn reshuffle_cycle(&mut self) {
        let cycle = self.state.iteration / self.state.cycle_order.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.state.master_seed, &[13, cycle as u64]));
        let order = &mut self.state.cycle_order;
        loop {
            // Fisher-Yates.
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            if order.len() == 1 || order[0] != self.state.current_root {
                break;
            }
        }
    }

    fn train_reverse_on_edge(
        &mut self,
        iter_n: usize,
        edge_idx: usize,
        from: NodeId,
        to: NodeId,
    ) -> Result<EdgeTrainStats, EngineError> {
        let (mut reverse, mut adam) = self
            .models
            .nets
            .remove(&(to, from))
            .expect("reverse net exists");
        let result = self.train_loop(iter_n, edge_idx, from, to, &mut reverse, &mut adam);
        self.models.nets.insert((to, from), (reverse, adam));
        let (stats, terminal) = result?;
        self.state.datasets.insert(to, terminal);
        Ok(stats)
    }

    fn train_loop(
        &self,
        iter_n: usize,
        edge_idx: usize,
        from: NodeId,
        to: NodeId,
        reverse: &mut DriftNetParams,
        adam: &mut AdamState,
    ) -> Result<(EdgeTrainStats, SampleSet), EngineError> {
        let schedule = &self.schedules[&edge_key(from, to)];
        let n_steps = schedule.n_steps();
        let source = self
            .state
            .datasets
            .get(&from)
            .ok_or(EngineError::EmptyDataset(from))?;
        if source.count() == 0 {
            return Err(EngineError::EmptyDataset(from));
        }
        let forward = &self.models.nets[&(from, to)].0;
        let drift = NetDrift { params: forward };
        let seed_for = |refresh: u64| {
            derive_seed(
                self.state.master_seed,
                &[20, iter_n as u64, edge_idx as u64, refresh],
            )
        };
        let mut refresh_count = 0u64;
        let (mut traj, mut drifts) = em_forward_recorded(&drift, schedule, source, seed_for(0))?;

        let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.state.master_seed,
            &[21, iter_n as u64, edge_idx as u64],
        ));
        let b = self.cfg.train_batch.min(source.count());
        let mut loss_sum = 0.0;
        let mut final_loss = 0.0;
        for step in 0..self.cfg.train_iters_per_ipf {
            if step > 0 && self.cfg.train_refresh_every > 0 && step % self.cfg.train_refresh_every == 0 {
                refresh_count += 1;
                let fresh = em_forward_recorded(&drift, schedule, source, seed_for(refresh_count))?;
                traj = fresh.0;
                drifts = fresh.1;
            }
            let m = batch_rng.random_range(0..n_steps);
            let rows: Vec<usize> = (0..b).map(|_| batch_rng.random_range(0..source.count())).collect();

            let x_m = traj.states().slice(s![.., m, ..]).select(Axis(0), &rows);
            let x_next = traj.states().slice(s![.., m + 1, ..]).select(Axis(0), &rows);
            let f_m = drifts.slice(s![.., m, ..]).select(Axis(0), &rows);

            let gamma = schedule.step(m + 1);
            // target = F_fwd(X_m) - gamma * f_fwd(t_m, X_{m+1}), with
            // F_fwd(X_m) assembled from the recorded drift evaluations.
            let f_at_next = forward.forward_batch(schedule.time(m), &x_next.view());
            let target = &x_m + &(f_m * gamma) - f_at_next * gamma;

            let m_rev = n_steps - m - 1;
            let (loss, grads) = match loss_and_grads_on_target(
                reverse,
                schedule,
                m_rev,
                &x_next.view(),
                &target.view(),
            ) {
                Ok(pair) => pair,
                Err(NetError::NonFinite) => {
                    return Err(EngineError::TrainingDiverged {
                        iteration: iter_n,
                        edge: (to, from),
                    })
                }
                Err(e) => return Err(EngineError::Net(e)),
            };
            if !loss.is_finite() {
                return Err(EngineError::TrainingDiverged {
                    iteration: iter_n,
                    edge: (to, from),
                });
            }
            adam.step(reverse, &grads)?;
            loss_sum += loss;
            final_loss = loss;
        }

        // The freshest terminal slice becomes the next node's dataset.
        traj.direction = Some((from, to));
        let steps = self.cfg.train_iters_per_ipf.max(1);
        Ok((
            EdgeTrainStats {
                mean_loss: loss_sum / steps as f64,
                final_loss,
            },
            traj.terminal(),
        ))
    }

    /// Simulates the whole tree rooted at `start_leaf`: fresh draws at the
    /// starting leaf, then one diffusion per directed edge in breadth-first
    /// order. Returns one sample set per node.
    pub fn sample_tree(
        &self,
        start_leaf: NodeId,
        count: usize,
        seed: u64,
    ) -> Result<HashMap<NodeId, SampleSet>, EngineError> {
        if !self.tree.is_leaf(start_leaf) {
            return Err(EngineError::UnknownLeaf(start_leaf));
        }
        let rooted = self.tree.root_at(start_leaf)?;
        let mut out = HashMap::new();
        out.insert(
            start_leaf,
            self.fresh_leaf_samples(start_leaf, count, derive_seed(seed, &[30, start_leaf as u64]))?,
        );
        for (edge_idx, &(from, to)) in rooted.breadth_first_edges().iter().enumerate() {
            let schedule = &self.schedules[&edge_key(from, to)];
            let net = &self.models.nets[&(from, to)].0;
            let source = &out[&from];
            let batch = crate::sde::em_forward(
                &NetDrift { params: net },
                schedule,
                source,
                derive_seed(seed, &[31, edge_idx as u64]),
            )?;
            out.insert(to, batch.terminal());
        }
        Ok(out)
    }

    /// Samples only along the path from `start_leaf` to `node`; cheaper
    /// than [`Self::sample_tree`] when one marginal is needed.
    pub fn sample_node_from(
        &self,
        start_leaf: NodeId,
        node: NodeId,
        count: usize,
        seed: u64,
    ) -> Result<SampleSet, EngineError> {
        if !self.tree.is_leaf(start_leaf) {
            return Err(EngineError::UnknownLeaf(start_leaf));
        }
        let mut current =
            self.fresh_leaf_samples(start_leaf, count, derive_seed(seed, &[30, start_leaf as u64]))?;
        if node == start_leaf {
            return Ok(current);
        }
        let path = self.tree.leaf_path(start_leaf, node)?;
        for (edge_idx, &(from, to)) in path.edges().iter().enumerate() {
            let schedule = &self.schedules[&edge_key(from, to)];
            let net = &self.models.nets[&(from, to)].0;
            let batch = crate::sde::em_forward(
                &NetDrift { params: net },
                schedule,
                &current,
                derive_seed(seed, &[31, edge_idx as u64]),
            )?;
            current = batch.terminal();
        }
        Ok(current)
    }

    /// Hub-node samples of a star tree, diffused from `start_leaf`.
    pub fn barycenter_samples(
        &self,
        start_leaf: NodeId,
        count: usize,
        seed: u64,
    ) -> Result<SampleSet, EngineError> {
        let center = self.tree.star_center().ok_or(EngineError::NotStarTree)?;
        self.sample_node_from(start_leaf, center, count, seed)
    }

    /// Simulates one edge forward from the cached dataset, without training.
    /// Exposed for diagnostics and tests.
    pub fn simulate_edge(
        &self,
        from: NodeId,
        to: NodeId,
        seed: u64,
    ) -> Result<TrajectoryBatch, EngineError> {
        let schedule = &self.schedules[&edge_key(from, to)];
        let net = &self.models.nets[&(from, to)].0;
        let source = self
            .state
            .datasets
            .get(&from)
            .ok_or(EngineError::EmptyDataset(from))?;
        let mut batch = crate::sde::em_forward(&NetDrift { params: net }, schedule, source, seed)?;
        batch.direction = Some((from, to));
        Ok(batch)
    }
}

struct EdgeTrainStats {
    mean_loss: f64,
    final_loss: f64,
}

fn generate_leaf(spec: &LeafSpec, count: usize, fallback_seed: u64) -> Result<SampleSet, MeasureError> {
    match spec {
        LeafSpec::Toy { kind, noise, seed } => {
            Ok(gen_toy2d(*kind, count, *noise, seed.unwrap_or(fallback_seed)))
        }
        LeafSpec::Gaussian { dim, cond_max, scale, seed } => {
            let g = gen_random_spd(*dim, *cond_max, *scale, *seed)?;
            sample_gaussian(&g, count, fallback_seed)
        }
        LeafSpec::GridDensity { .. } => Err(MeasureError::UnknownKind(
            "grid densities only drive the discrete solver".into(),
        )),
    }
}
