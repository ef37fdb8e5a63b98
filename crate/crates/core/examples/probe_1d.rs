// scratch probe: 1-D star, engine vs exact discrete solution (will be deleted)
use std::collections::HashMap;
use treedsb::config::{ExperimentConfig, LeafSpec, RootMode};
use treedsb::engine::Engine;
use treedsb::measures::{empirical_moments, gen_random_spd, reference_gaussian_design};
use treedsb::oracle::{gaussian_barycenter_fixed_point, gaussian_on_grid, tree_sinkhorn_mp, Grid, TreeKernelSet};
use treedsb::tree::UndirectedTree;

fn main() {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let cycles: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let w = 1.0 / 3.0;
    let epsilon = 0.1;

    // Leaf gaussians (1-D)
    let leaf_gs: Vec<_> = (1..=3).map(|s| gen_random_spd(1, 10.0, 1.0, 100 + s as u64).unwrap()).collect();
    for (i, g) in leaf_gs.iter().enumerate() {
        println!("leaf {} variance: {:.4}", i + 1, g.cov()[[0, 0]]);
    }
    let bary = gaussian_barycenter_fixed_point(&leaf_gs, &[w; 3], 1e-12, 500).unwrap();
    println!("unregularized barycenter variance: {:.5}", bary.cov()[[0, 0]]);
    let mu0 = reference_gaussian_design(&leaf_gs, 1.0).unwrap();
    println!("hub reference (mu0) variance: {:.5}", mu0.cov()[[0, 0]]);

    // Exact discrete solution on a fine grid.
    let tree = UndirectedTree::build(4, &[(0, 1, w), (0, 2, w), (0, 3, w)]).unwrap();
    let grid = Grid::regular_1d(-10.0, 10.0, 201);
    let phi0 = gaussian_on_grid(&grid, &[mu0.mean()[0]], mu0.cov()[[0, 0]].sqrt()).unwrap();
    let kernels = TreeKernelSet::build(&tree, &grid, epsilon, 0, &phi0).unwrap();
    let mut marginals = HashMap::new();
    for (i, g) in leaf_gs.iter().enumerate() {
        marginals.insert(i + 1, gaussian_on_grid(&grid, &[g.mean()[0]], g.cov()[[0, 0]].sqrt()).unwrap());
    }
    let run = tree_sinkhorn_mp(&kernels, &tree, &marginals, 1e-7, 30_000).unwrap();
    let hub = &run.node_marginals[&0];
    let mean: f64 = hub.weights().iter().enumerate().map(|(i, &p)| p * grid.point(i)[0]).sum();
    let var: f64 = hub.weights().iter().enumerate().map(|(i, &p)| p * (grid.point(i)[0] - mean).powi(2)).sum();
    println!("EXACT regularized hub: mean {:.5}, variance {:.5}  ({} sinkhorn iters)", mean, var, run.iterations);
    let uvp_exact = 100.0 * 2.0 * ((var.sqrt() - bary.cov()[[0,0]].sqrt()).powi(2) + (mean - bary.mean()[0]).powi(2)) / bary.cov()[[0, 0]];
    println!("UVP(exact regularized vs unregularized) = {:.3}%", uvp_exact);

    // Engine on the same instance.
    let mut cfg = ExperimentConfig {
        tree_nodes: 4,
        tree_edges: vec![(0, 1, w), (0, 2, w), (0, 3, w)],
        epsilon,
        root: RootMode::Internal { node: 0, alpha: 1.0 },
        dataset_count: 4000,
        train_iters_per_ipf: iters,
        run_cycles: cycles,
        eval_count: 20000,
        ..ExperimentConfig::default()
    };
    for leaf in 1..=3usize {
        cfg.leaves.insert(leaf, LeafSpec::Gaussian { dim: 1, cond_max: 10.0, scale: 1.0, seed: 100 + leaf as u64 });
    }
    let mut engine = Engine::new(cfg).unwrap();
    engine
        .run_cycles(cycles, |eng, rec| {
            let s = eng.sample_node_from(rec.leaf, 0, 20000, 900 + rec.iteration as u64).unwrap();
            let (m, c) = empirical_moments(&s).unwrap();
            println!(
                "iter {:>2} leaf {}: hub mean {:+.4} var {:.4}   (exact {:+.4} / {:.4})",
                rec.iteration, rec.leaf, m[0], c[[0, 0]], mean, var
            );
        })
        .unwrap();
}
