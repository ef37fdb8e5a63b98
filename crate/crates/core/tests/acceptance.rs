//! Acceptance suite: every release gate in one target, one pass/fail line
//! per criterion. Run with
//!
//! ```text
//! cargo test --release -p treedsb --test acceptance -- --nocapture --test-threads=1
//! ```
//!
//! The training-based criteria (5, 6, 7) dominate the runtime; tolerances
//! and budgets are pinned here, not configurable.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treedsb::config::{ExperimentConfig, LeafSpec, RootMode};
use treedsb::engine::Engine;
use treedsb::measures::{
    fit_gaussian, sample_gaussian, GaussianMeasure, SampleSet, ToyKind,
};
use treedsb::net::{
    backprop_grads, loss_and_grads_on_target, mean_fn_batch, AdamState, Activation, Dense,
    DriftNetParams, MeanMatchBatch, NetMean,
};
use treedsb::oracle::dense::{dense_reference, kl_tensors};
use treedsb::oracle::sinkhorn::tree_sinkhorn_mp_iters;
use treedsb::oracle::{
    bw2_uvp, bw2_uvp_gaussians, dense_mipf, gaussian_on_grid, wp_objective_check, Grid,
    GridMeasure, TreeKernelSet,
};
use treedsb::run::cmd_run;
use treedsb::schedule::TimeSchedule;
use treedsb::sde::{brownian_forward, em_forward, em_forward_recorded, Drift, ZeroDrift};
use treedsb::tree::{horizon_time, NodeId, UndirectedTree};

/// Heavy criteria run one at a time so their runtime bounds are meaningful.
static GATE: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|p| p.into_inner())
}

const DENSE_CAP: usize = 2_000_000;

/// The five-node instance shared by criteria 1 and 2: edges
/// {3,1},{1,2},{1,0},{0,4}, leaves 2, 3, 4, rooted at leaf 3, ten grid
/// points.
fn five_node_instance() -> (UndirectedTree, HashMap<NodeId, GridMeasure>, TreeKernelSet) {
    let tree =
        UndirectedTree::build(5, &[(3, 1, 1.0), (1, 2, 1.0), (1, 0, 1.0), (0, 4, 1.0)]).unwrap();
    let grid = Grid::regular_1d(-2.0, 2.0, 10);
    let mu2 = gaussian_on_grid(&grid, &[-0.8], 0.5).unwrap();
    let mu3 = gaussian_on_grid(&grid, &[0.3], 0.35).unwrap();
    let mu4 = gaussian_on_grid(&grid, &[0.9], 0.45).unwrap();
    let kernels = TreeKernelSet::build(&tree, &grid, 0.5, 3, &mu3).unwrap();
    let mut marginals = HashMap::new();
    marginals.insert(2, mu2);
    marginals.insert(3, mu3);
    marginals.insert(4, mu4);
    (tree, marginals, kernels)
}

#[test]
fn criterion_1_oracle_equivalence() {
    let _guard = serial();
    let started = Instant::now();
    let (tree, marginals, kernels) = five_node_instance();
    let iterations = 120;
    let dense = dense_mipf(&kernels, &tree, &marginals, iterations, DENSE_CAP, 0).unwrap();
    let mp = tree_sinkhorn_mp_iters(&kernels, &tree, &marginals, iterations).unwrap();
    let mut max_diff = 0.0f64;
    for v in 0..tree.node_count() {
        let dm = dense.finalt.node_marginal(v);
        let mm = mp.node_marginals[&v].weights();
        for i in 0..dm.len() {
            max_diff = max_diff.max((dm[i] - mm[i]).abs());
        }
    }
    let elapsed = started.elapsed();
    assert!(max_diff <= 1e-8, "node marginal disagreement {max_diff:e}");
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 1 (message passing vs dense tensor): PASS — max node-marginal diff {max_diff:.2e} in {:.2} s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_mipf_convergence_and_pythagorean_identity() {
    let _guard = serial();
    let (tree, marginals, kernels) = five_node_instance();
    let k = 3;
    let max_cycles = 500;
    let run = dense_mipf(&kernels, &tree, &marginals, max_cycles * k, DENSE_CAP, 0).unwrap();
    let converged_cycle = run
        .max_leaf_tv_per_cycle
        .iter()
        .position(|&tv| tv <= 1e-8)
        .expect("max leaf TV must fall below 1e-8 within 500 cycles");

    // Increment sum is bounded (summability) and the last increment is tiny.
    let sum: f64 = run.kl_increments.iter().sum();
    assert!(run.kl_increments.iter().all(|kl| kl.is_finite() && *kl >= 0.0));
    assert!(*run.kl_increments.last().unwrap() <= 1e-14);

    // Ten-times-longer run stands in for the exact solution.
    let star = dense_mipf(&kernels, &tree, &marginals, 10 * max_cycles * k, DENSE_CAP, 0)
        .unwrap()
        .finalt;
    let reference = dense_reference(&kernels, &tree, DENSE_CAP).unwrap();
    let kl_star_ref = kl_tensors(&star, &reference).unwrap();
    let kl_star_n = kl_tensors(&star, &run.finalt).unwrap();
    let residual = (kl_star_ref - kl_star_n - sum).abs();
    assert!(sum <= kl_star_ref + 1e-10, "increments exceed the total divergence");
    assert!(residual <= 1e-8, "pythagorean residual {residual:e}");
    println!(
        "criterion 2 (proportional-fitting convergence): PASS — TV < 1e-8 at cycle {}, pythagorean residual {residual:.2e}",
        converged_cycle + 1
    );
}

#[test]
fn criterion_3_objective_decomposition_identity() {
    let _guard = serial();
    // Star with three leaves.
    let w = 1.0 / 3.0;
    let star = UndirectedTree::build(4, &[(0, 1, w), (0, 2, w), (0, 3, w)]).unwrap();
    let grid = Grid::regular_1d(-2.0, 2.0, 7);
    let mut marginals = HashMap::new();
    marginals.insert(1, gaussian_on_grid(&grid, &[-0.9], 0.5).unwrap());
    marginals.insert(2, gaussian_on_grid(&grid, &[0.2], 0.35).unwrap());
    marginals.insert(3, gaussian_on_grid(&grid, &[1.0], 0.45).unwrap());
    let kernels = TreeKernelSet::build(&star, &grid, 0.5, 3, &marginals[&3]).unwrap();
    let run = dense_mipf(&kernels, &star, &marginals, 600, DENSE_CAP, 0).unwrap();
    let (lhs_s, rhs_s) =
        wp_objective_check(&run.finalt, &kernels, &star, &marginals[&3], DENSE_CAP).unwrap();
    let star_resid = (lhs_s - rhs_s).abs();
    assert!(star_resid <= 1e-8, "star residual {star_resid:e}");

    // Three-node chain.
    let chain = UndirectedTree::build(3, &[(0, 1, 0.7), (1, 2, 1.2)]).unwrap();
    let grid = Grid::regular_1d(-2.0, 2.0, 8);
    let mut marginals = HashMap::new();
    marginals.insert(0, gaussian_on_grid(&grid, &[-0.6], 0.5).unwrap());
    marginals.insert(2, gaussian_on_grid(&grid, &[0.8], 0.4).unwrap());
    let kernels = TreeKernelSet::build(&chain, &grid, 0.6, 0, &marginals[&0]).unwrap();
    let run = dense_mipf(&kernels, &chain, &marginals, 400, DENSE_CAP, 0).unwrap();
    let (lhs_c, rhs_c) =
        wp_objective_check(&run.finalt, &kernels, &chain, &marginals[&0], DENSE_CAP).unwrap();
    let chain_resid = (lhs_c - rhs_c).abs();
    assert!(chain_resid <= 1e-8, "chain residual {chain_resid:e}");
    println!(
        "criterion 3 (transport-entropy decomposition): PASS — residuals star {star_resid:.2e}, chain {chain_resid:.2e}"
    );
}

#[test]
fn criterion_4_gradients_and_zero_init_brownian() {
    let _guard = serial();
    // Part 1: analytic gradients vs central finite differences on 200
    // random coordinates.
    let sched = TimeSchedule::new(4, 1e-3, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut params = DriftNetParams::init(2, Activation::Silu, 91);
    params.head[2] = Dense {
        w: Array2::from_shape_fn((params.head_hidden, 2), |_| rng.random_range(-0.2..0.2)),
        b: Array1::from_shape_fn(2, |_| rng.random_range(-0.2..0.2)),
    };
    let mut fwd = DriftNetParams::init(2, Activation::Silu, 92);
    fwd.head[2] = Dense {
        w: Array2::from_shape_fn((fwd.head_hidden, 2), |_| rng.random_range(-0.2..0.2)),
        b: Array1::zeros(2),
    };
    let b = 8;
    let x_m = Array2::from_shape_fn((b, 2), |_| rng.random_range(-1.5..1.5));
    let x_next = Array2::from_shape_fn((b, 2), |_| rng.random_range(-1.5..1.5));
    let batch = MeanMatchBatch::new(x_m, x_next, 1, &sched).unwrap();
    let prev = NetMean { params: &fwd, schedule: &sched };
    let grads = backprop_grads(&params, &prev, &batch).unwrap();
    let g_layers = grads.layers();

    let loss_with = |params: &DriftNetParams| {
        treedsb::net::mean_match_loss(params, &prev, &batch).unwrap()
    };
    let mut within_1e4 = 0;
    let total = 200;
    for _ in 0..total {
        let layer = rng.random_range(0..7usize);
        let l = g_layers[layer];
        let idx = rng.random_range(0..l.w.len() + l.b.len());
        let analytic = if idx < l.w.len() {
            l.w.as_slice().unwrap()[idx]
        } else {
            l.b[idx - l.w.len()]
        };
        let h = 1e-5;
        let eval = |delta: f64| {
            let mut q = params.clone();
            {
                let mut layers = q.layers_mut();
                let lq = &mut layers[layer];
                if idx < lq.w.len() {
                    lq.w.as_slice_mut().unwrap()[idx] += delta;
                } else {
                    let bi = idx - lq.w.len();
                    lq.b[bi] += delta;
                }
            }
            loss_with(&q)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / denom;
        if rel <= 1e-4 {
            within_1e4 += 1;
        } else {
            assert!(rel <= 1e-3, "gradient mismatch beyond 1e-3: rel {rel:e}");
        }
    }
    let frac = within_1e4 as f64 / total as f64;
    assert!(frac >= 0.95, "only {within_1e4}/{total} coordinates within 1e-4");

    // Part 2: a freshly initialized network drives sampling that is
    // bit-equal to plain Brownian motion under a shared seed.
    struct FreshNet(DriftNetParams);
    impl Drift for FreshNet {
        fn dim(&self) -> usize {
            self.0.dim
        }
        fn eval(&self, _m: usize, t: f64, x: &ndarray::ArrayView2<f64>) -> Array2<f64> {
            self.0.forward_batch(t, x)
        }
    }
    let sched = TimeSchedule::new(50, 1e-5, 0.15).unwrap();
    let init = SampleSet::new(Array2::from_shape_fn((64, 2), |_| rng.random_range(-2.0..2.0)))
        .unwrap();
    let fresh = FreshNet(DriftNetParams::init(2, Activation::Silu, 1234));
    let with_net = em_forward(&fresh, &sched, &init, 777).unwrap();
    let brownian = brownian_forward(&sched, &init, 777).unwrap();
    assert_eq!(with_net.states(), brownian.states(), "zero-init sampling must be bit-equal");
    println!(
        "criterion 4 (drift-net correctness): PASS — {within_1e4}/{total} gradients within 1e-4, zero-init sampling bit-equal to Brownian"
    );
}

#[test]
fn criterion_5_analytic_backward_mean_recovery() {
    let _guard = serial();
    let started = Instant::now();
    let d = 2;
    let sigma2 = 1.0;
    let n = 50;
    let sched = TimeSchedule::new(n, 1e-5, 0.15).unwrap();
    let source = sample_gaussian(
        &GaussianMeasure::new(Array1::zeros(d), Array2::eye(d) * sigma2).unwrap(),
        4000,
        11,
    )
    .unwrap();

    let mut reverse = DriftNetParams::init(d, Activation::Silu, 21);
    let mut adam = AdamState::new(&reverse, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut traj, _) = em_forward_recorded(&ZeroDrift(d), &sched, &source, 41).unwrap();
    let steps = 2500;
    let batch_size = 512;
    for step in 0..steps {
        if step > 0 && step % 500 == 0 {
            traj = em_forward_recorded(&ZeroDrift(d), &sched, &source, 41 + step as u64)
                .unwrap()
                .0;
        }
        let m = rng.random_range(0..n);
        let rows: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..source.count())).collect();
        let x_m = traj.states().slice(ndarray::s![.., m, ..]).select(Axis(0), &rows);
        let x_next = traj.states().slice(ndarray::s![.., m + 1, ..]).select(Axis(0), &rows);
        // Zero forward drift: the regression target is X_m itself.
        let (_, grads) =
            loss_and_grads_on_target(&reverse, &sched, n - m - 1, &x_next.view(), &x_m.view())
                .unwrap();
        adam.step(&mut reverse, &grads).unwrap();
    }

    // The learned transition mean must match the closed-form conditional
    // mean ratio within 5%, batch-averaged, at every checked step.
    let test = sample_gaussian(
        &GaussianMeasure::new(Array1::zeros(d), Array2::eye(d)).unwrap(),
        2000,
        71,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for m in [0usize, 5, 12, 25, 37, 49] {
        let ratio = (sigma2 + sched.time(m)) / (sigma2 + sched.time(m + 1));
        let spread = (sigma2 + sched.time(m + 1)).sqrt();
        let x = test.data() * spread;
        let pred = mean_fn_batch(&reverse, &sched, n - m - 1, &x.view()).unwrap();
        let mut rel_sum = 0.0;
        for i in 0..x.nrows() {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..d {
                let truth = ratio * x[[i, j]];
                num += (pred[[i, j]] - truth).powi(2);
                den += truth.powi(2);
            }
            rel_sum += (num / den.max(1e-12)).sqrt();
        }
        let avg_rel = rel_sum / x.nrows() as f64;
        worst = worst.max(avg_rel);
        assert!(avg_rel <= 0.05, "step {m}: batch-averaged relative error {avg_rel}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "criterion 5 (backward-mean recovery): PASS — worst batch-averaged relative error {:.4}% in {:.0} s",
        100.0 * worst,
        elapsed.as_secs_f64()
    );
}

fn gaussian_star(dim: usize, iters: usize, dataset: usize, eval: usize) -> ExperimentConfig {
    let w = 1.0 / 3.0;
    let mut cfg = ExperimentConfig {
        tree_nodes: 4,
        tree_edges: vec![(0, 1, w), (0, 2, w), (0, 3, w)],
        epsilon: 0.1,
        root: RootMode::Internal { node: 0, alpha: 1.0 },
        dataset_count: dataset,
        train_iters_per_ipf: iters,
        run_cycles: 10,
        eval_count: eval,
        ..ExperimentConfig::default()
    };
    for leaf in 1..=3usize {
        cfg.leaves.insert(
            leaf,
            LeafSpec::Gaussian { dim, cond_max: 10.0, scale: 1.0, seed: 300 + leaf as u64 },
        );
    }
    cfg
}

#[test]
fn criterion_6_gaussian_barycenter_d2() {
    let _guard = serial();
    let started = Instant::now();
    let cfg = gaussian_star(2, 1000, 4000, 4000);
    let dir = tempfile::tempdir().unwrap();
    let manifest = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(manifest.records.len(), 30, "10 cycles over 3 leaves");
    let best = manifest
        .best_uvp_percent
        .expect("gaussian star run must produce per-iteration unexplained variance");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() <= 1800.0, "took {elapsed:?}");
    assert!(best <= 3.0, "best unexplained variance {best:.3}% exceeds 3%");
    println!(
        "criterion 6 (gaussian barycenter, d=2): PASS — best unexplained variance {best:.3}% in {:.0} s",
        elapsed.as_secs_f64()
    );
}

/// Extended check at d = 16; not part of the gate (run with `--ignored`).
#[test]
#[ignore = "extended non-gating check; run explicitly with --ignored"]
fn extended_gaussian_barycenter_d16() {
    let _guard = serial();
    let cfg = gaussian_star(16, 1000, 4000, 4000);
    let dir = tempfile::tempdir().unwrap();
    let manifest = cmd_run(&cfg, dir.path()).unwrap();
    let best = manifest.best_uvp_percent.expect("uvp recorded");
    assert!(best <= 8.0, "best unexplained variance {best:.3}% exceeds 8%");
    println!("extended (gaussian barycenter, d=16): PASS — best unexplained variance {best:.3}%");
}

#[test]
fn criterion_7_toy_barycenter_consistency() {
    let _guard = serial();
    let w = 1.0 / 3.0;
    let mut cfg = ExperimentConfig {
        tree_nodes: 4,
        tree_edges: vec![(0, 1, w), (0, 2, w), (0, 3, w)],
        epsilon: 0.1,
        root: RootMode::Leaf(1),
        dataset_count: 3000,
        train_batch: 256,
        train_iters_per_ipf: 500,
        run_cycles: 15,
        eval_count: 3000,
        eval_uvp: false,
        ..ExperimentConfig::default()
    };
    cfg.leaves.insert(1, LeafSpec::Toy { kind: ToyKind::SwissRoll, noise: 0.05, seed: Some(51) });
    cfg.leaves.insert(2, LeafSpec::Toy { kind: ToyKind::Circle, noise: 0.05, seed: Some(52) });
    cfg.leaves.insert(3, LeafSpec::Toy { kind: ToyKind::Moons, noise: 0.05, seed: Some(53) });

    let mut engine = Engine::new(cfg).unwrap();
    engine.run_cycles(15, |_, _| {}).unwrap();

    // Pairwise hub agreement between start leaves, as unexplained variance
    // of one moment fit against the other.
    let hubs: Vec<(NodeId, GaussianMeasure)> = [1usize, 2, 3]
        .iter()
        .map(|&leaf| {
            let s = engine.barycenter_samples(leaf, 3000, 600 + leaf as u64).unwrap();
            (leaf, fit_gaussian(&s).unwrap())
        })
        .collect();
    let mut worst_pair: f64 = 0.0;
    for (a, ga) in &hubs {
        for (b, gb) in &hubs {
            if a < b {
                let uvp = bw2_uvp_gaussians(ga, gb).unwrap();
                worst_pair = worst_pair.max(uvp);
                assert!(uvp <= 10.0, "hub from {a} vs {b}: unexplained variance {uvp:.2}%");
            }
        }
    }

    // Reconstructed leaf marginals against their data moments.
    let mut worst_leaf: f64 = 0.0;
    for start in [1usize, 2, 3] {
        let per_node = engine.sample_tree(start, 3000, 700 + start as u64).unwrap();
        for (&leaf, g) in engine.leaf_gaussians() {
            if leaf == start {
                continue;
            }
            let uvp = bw2_uvp(&per_node[&leaf], g).unwrap();
            worst_leaf = worst_leaf.max(uvp);
            assert!(
                uvp <= 10.0,
                "leaf {leaf} reconstructed from {start}: unexplained variance {uvp:.2}%"
            );
        }
    }
    println!(
        "criterion 7 (toy barycenter consistency): PASS — worst pairwise hub {worst_pair:.2}%, worst leaf reconstruction {worst_leaf:.2}%"
    );
}

#[test]
fn criterion_8_structural_property_tests() {
    let _guard = serial();
    let started = Instant::now();
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};

    let cases = 1000;
    let mut runner = TestRunner::new(Config { cases, ..Config::default() });

    // Random tree: node i >= 1 attaches to a uniform parent among 0..i.
    let tree_strategy = (2usize..12)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(0.0f64..1.0, n - 1),
                proptest::collection::vec(0.01f64..5.0, n - 1),
            )
        })
        .prop_map(|(n, attach, weights)| {
            let edges: Vec<(usize, usize, f64)> = (1..n)
                .map(|i| {
                    let parent = (attach[i - 1] * i as f64) as usize;
                    (parent.min(i - 1), i, weights[i - 1])
                })
                .collect();
            UndirectedTree::build(n, &edges).unwrap()
        });

    // Tree invariants: edge counts, breadth-first parent order, re-rooting
    // flips exactly the connecting path, path concatenation visits each
    // edge at most twice, reversal symmetry.
    runner
        .run(&(tree_strategy, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), |(tree, ra, rb, rc)| {
            let n = tree.node_count();
            let pick = |u: f64| ((u * n as f64) as usize).min(n - 1);
            let (a, b) = (pick(ra), pick(rb));
            let rooted = tree.root_at(a).unwrap();
            prop_assert_eq!(rooted.breadth_first_edges().len(), n - 1);
            // Parent edges precede child edges.
            let mut seen = vec![false; n];
            seen[a] = true;
            for &(u, v) in rooted.breadth_first_edges() {
                prop_assert!(seen[u], "edge ({},{}) before its parent edge", u, v);
                seen[v] = true;
            }
            if a != b {
                let other = tree.root_at(b).unwrap();
                let path: std::collections::HashSet<_> =
                    tree.leaf_path(a, b).unwrap().edges().iter().copied().collect();
                let eb: std::collections::HashSet<_> =
                    other.breadth_first_edges().iter().copied().collect();
                for &(u, v) in rooted.breadth_first_edges() {
                    if path.contains(&(u, v)) {
                        prop_assert!(eb.contains(&(v, u)));
                    } else {
                        prop_assert!(eb.contains(&(u, v)));
                    }
                }
                // Reversal symmetry.
                let fwd = tree.leaf_path(a, b).unwrap();
                prop_assert_eq!(fwd.reversed(), tree.leaf_path(b, a).unwrap());
                // Concatenated paths traverse each undirected edge at most
                // twice.
                let c = pick(rc);
                if c != b {
                    let mut uses: HashMap<(usize, usize), usize> = HashMap::new();
                    for &(u, v) in fwd.edges().iter().chain(tree.leaf_path(b, c).unwrap().edges()) {
                        *uses.entry((u.min(v), u.max(v))).or_default() += 1;
                    }
                    prop_assert!(uses.values().all(|&c| c <= 2));
                }
            }
            Ok(())
        })
        .unwrap();

    // Schedule invariants: palindrome, exact sum, positive floor, and the
    // discretized-weight identity (inverse weights of the sub-edges sum to
    // the inverse edge weight).
    let mut runner2 = TestRunner::new(Config { cases, ..Config::default() });
    runner2
        .run(
            &((1usize..25), 1e-7f64..1e-3, 0.05f64..4.0, 0.05f64..3.0),
            |(half_n, gamma0, epsilon, weight)| {
                let n = 2 * half_n;
                let horizon = horizon_time(epsilon, weight).unwrap();
                prop_assume!(horizon > n as f64 * gamma0 * 1.0001);
                let sched = TimeSchedule::new(n, gamma0, horizon).unwrap();
                for m in 1..=n {
                    prop_assert_eq!(sched.step(m), sched.step(n + 1 - m));
                    prop_assert!(sched.step(m) >= gamma0);
                }
                let sum: f64 = sched.steps().iter().sum();
                prop_assert!((sum - horizon).abs() <= 1e-12 * horizon.max(1.0));
                // Sub-edge weights are eps/(2 gamma_m); their inverse sum
                // telescopes back to the inverse of the original weight.
                let inv_w: f64 = sched.steps().iter().map(|g| 2.0 * g / epsilon).sum();
                prop_assert!((inv_w - 1.0 / weight).abs() <= 1e-10 * (1.0 / weight));
                Ok(())
            },
        )
        .unwrap();

    // Simulation invariants: bit determinism for a fixed seed and
    // per-step increment variance tracking the schedule (wide statistical
    // gate so one in a thousand cases cannot flake).
    let mut runner3 = TestRunner::new(Config { cases, ..Config::default() });
    runner3
        .run(&(0u64..1_000_000, 1usize..4, 0.05f64..2.0), |(seed, half_n, horizon)| {
            let n = 2 * half_n;
            let sched = TimeSchedule::new(n, 1e-6, horizon).unwrap();
            let m = 200;
            let init = SampleSet::new(Array2::zeros((m, 1))).unwrap();
            let a = brownian_forward(&sched, &init, seed).unwrap();
            let b = brownian_forward(&sched, &init, seed).unwrap();
            prop_assert_eq!(a.states(), b.states());
            for step in 0..n {
                let prev = a.states().slice(ndarray::s![.., step, 0]);
                let next = a.states().slice(ndarray::s![.., step + 1, 0]);
                let mean: f64 = (&next - &prev).sum() / m as f64;
                let var: f64 =
                    (&next - &prev).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                let g = sched.step(step + 1);
                prop_assert!((var / g - 1.0).abs() < 0.5, "increment variance {} vs {}", var, g);
            }
            Ok(())
        })
        .unwrap();

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 8 (structural property tests): PASS — 3 x {cases} randomized cases in {:.1} s",
        elapsed.as_secs_f64()
    );
}
