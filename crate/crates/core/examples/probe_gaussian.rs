// scratch probe: Gaussian star barycenter UVP per iteration (will be deleted)
use std::time::Instant;
use treedsb::config::{ExperimentConfig, LeafSpec, RootMode};

fn gaussian_star_config(count: usize, iters: usize, dim: usize) -> ExperimentConfig {
    let w = 1.0 / 3.0;
    let mut cfg = ExperimentConfig {
        tree_nodes: 4,
        tree_edges: vec![(0, 1, w), (0, 2, w), (0, 3, w)],
        epsilon: 0.1,
        root: RootMode::Internal { node: 0, alpha: 1.0 },
        dataset_count: count,
        train_iters_per_ipf: iters,
        ..ExperimentConfig::default()
    };
    for leaf in 1..=3usize {
        cfg.leaves.insert(leaf, LeafSpec::Gaussian { dim, cond_max: 10.0, scale: 1.0, seed: 300 + leaf as u64 });
    }
    cfg
}
use treedsb::engine::Engine;
use treedsb::oracle::{bw2_uvp, gaussian_barycenter_fixed_point};

fn main() {
    let dim: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let iters: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let cycles: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut cfg = gaussian_star_config(4000, iters, dim);
    cfg.schedule_steps = 50;
    cfg.train_batch = 512;
    cfg.train_refresh_every = 500;
    cfg.eval_count = 4000;
    cfg.run_cycles = cycles;

    let mut engine = Engine::new(cfg).unwrap();
    let leaves: Vec<_> = engine.leaf_gaussians().values().cloned().collect();
    let oracle = gaussian_barycenter_fixed_point(&leaves, &[1.0 / 3.0; 3], 1e-12, 1000).unwrap();
    println!("oracle barycenter cov diag: {:?} {:?}", oracle.cov()[[0,0]], oracle.cov()[[1,1]]);

    let t0 = Instant::now();
    let mut best = f64::INFINITY;
    engine
        .run_cycles(cycles, |eng, rec| {
            let samples = eng.sample_node_from(rec.leaf, 0, 4000, 900 + rec.iteration as u64).unwrap();
            let uvp = bw2_uvp(&samples, &oracle).unwrap();
            if uvp < best { best = uvp; }
            println!(
                "iter {:>2} (cycle {}, leaf {}): loss {:.3e}  uvp {:6.2}%  best {:5.2}%  [{:.0} s]",
                rec.iteration, rec.cycle, rec.leaf, rec.final_loss, uvp, best,
                t0.elapsed().as_secs_f64()
            );
        })
        .unwrap();
    println!("TOTAL {:.0} s, best uvp {best:.3}%", t0.elapsed().as_secs_f64());
}
