// scratch probe: exact per-cycle hub UVP for candidate d=2 instances (deleted later)
use std::collections::HashMap;
use ndarray::Array1;
use treedsb::measures::{gen_random_spd, reference_gaussian_design, GaussianMeasure};
use treedsb::oracle::sinkhorn::tree_sinkhorn_mp_iters;
use treedsb::oracle::{gaussian_barycenter_fixed_point, bw2_uvp_gaussians, Grid, GridMeasure, TreeKernelSet};
use treedsb::tree::UndirectedTree;

fn density_on_grid(grid: &std::sync::Arc<Grid>, g: &GaussianMeasure) -> GridMeasure {
    let c = g.cov();
    let det = c[[0, 0]] * c[[1, 1]] - c[[0, 1]] * c[[1, 0]];
    let inv = [[c[[1, 1]] / det, -c[[0, 1]] / det], [-c[[1, 0]] / det, c[[0, 0]] / det]];
    let w = Array1::from_shape_fn(grid.len(), |i| {
        let p = grid.point(i);
        let dx = p[0] - g.mean()[0];
        let dy = p[1] - g.mean()[1];
        let q = dx * (inv[0][0] * dx + inv[0][1] * dy) + dy * (inv[1][0] * dx + inv[1][1] * dy);
        (-0.5 * q).exp()
    });
    GridMeasure::new(grid.clone(), w).unwrap()
}

fn grid_moments(grid: &std::sync::Arc<Grid>, m: &GridMeasure) -> GaussianMeasure {
    let mut mean = [0.0; 2];
    for (i, &p) in m.weights().iter().enumerate() {
        mean[0] += p * grid.point(i)[0];
        mean[1] += p * grid.point(i)[1];
    }
    let mut cov = ndarray::Array2::zeros((2, 2));
    for (i, &p) in m.weights().iter().enumerate() {
        let dx = grid.point(i)[0] - mean[0];
        let dy = grid.point(i)[1] - mean[1];
        cov[[0, 0]] += p * dx * dx;
        cov[[0, 1]] += p * dx * dy;
        cov[[1, 1]] += p * dy * dy;
    }
    cov[[1, 0]] = cov[[0, 1]];
    GaussianMeasure::new_unchecked(Array1::from_vec(mean.to_vec()), cov)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let base_seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let scale: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let w = 1.0 / 3.0;
    let epsilon = 0.1;

    let leaf_gs: Vec<_> = (1..=3).map(|s| gen_random_spd(2, 10.0, scale, base_seed + s as u64).unwrap()).collect();
    let bary = gaussian_barycenter_fixed_point(&leaf_gs, &[w; 3], 1e-12, 500).unwrap();
    let mu0 = reference_gaussian_design(&leaf_gs, 1.0).unwrap();
    let spread = bary.cov()[[0,0]].max(bary.cov()[[1,1]]).sqrt();
    let extent = 3.6 * leaf_gs.iter().map(|g| g.cov()[[0,0]].max(g.cov()[[1,1]])).fold(0.0, f64::max).sqrt();
    println!("seeds {base_seed}+1..3 scale {scale}: bary trace {:.3} spread {spread:.2} grid extent {extent:.1}",
        bary.cov()[[0,0]] + bary.cov()[[1,1]]);

    let tree = UndirectedTree::build(4, &[(0, 1, w), (0, 2, w), (0, 3, w)]).unwrap();
    let per_axis = 47;
    let grid = Grid::regular_2d(-extent, extent, per_axis);
    let phi0 = density_on_grid(&grid, &mu0);
    let kernels = TreeKernelSet::build(&tree, &grid, epsilon, 0, &phi0).unwrap();
    let mut marginals = HashMap::new();
    for (i, g) in leaf_gs.iter().enumerate() {
        marginals.insert(i + 1, density_on_grid(&grid, g));
    }
    for cycles in [2usize, 4, 6, 8, 10, 14] {
        let run = tree_sinkhorn_mp_iters(&kernels, &tree, &marginals, 3 * cycles).unwrap();
        let hub = grid_moments(&grid, &run.node_marginals[&0]);
        let uvp = bw2_uvp_gaussians(&hub, &bary).unwrap();
        println!("  cycle {cycles:>2}: exact hub uvp {uvp:6.3}%");
    }
}
