//! Python bindings for the core types and operations.
//!
//! Exposes tree construction, schedules, dataset generators, the Gaussian
//! metrics and barycenter oracle, the discrete tree solver, and full
//! experiment runs. Data crosses the boundary as plain lists, so the module
//! has no Python-side dependencies.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use treedsb::config::ExperimentConfig;
use treedsb::measures::{GaussianMeasure, SampleSet, ToyKind};
use treedsb::oracle;
use treedsb::run;
use treedsb::schedule::TimeSchedule;
use treedsb::tree::UndirectedTree;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have inconsistent lengths"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat).map_err(value_err)
}

fn matrix_out(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn gaussian_arg(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<GaussianMeasure> {
    let d = mean.len();
    let cov = to_matrix(cov)?;
    if cov.nrows() != d {
        return Err(PyValueError::new_err("cov shape does not match mean"));
    }
    Ok(GaussianMeasure::new_unchecked(Array1::from_vec(mean), cov))
}

/// A weighted undirected tree on nodes `0..node_count`.
#[pyclass(name = "Tree")]
struct PyTree {
    inner: UndirectedTree,
}

#[pymethods]
impl PyTree {
    #[new]
    fn new(node_count: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: UndirectedTree::build(node_count, &edges).map_err(value_err)?,
        })
    }

    fn leaves(&self) -> Vec<usize> {
        self.inner.leaves()
    }

    fn is_star(&self) -> bool {
        self.inner.is_star()
    }

    fn star_center(&self) -> Option<usize> {
        self.inner.star_center()
    }

    /// Directed edges in breadth-first order when rooted at `root`.
    fn root_at(&self, root: usize) -> PyResult<Vec<(usize, usize)>> {
        Ok(self
            .inner
            .root_at(root)
            .map_err(value_err)?
            .breadth_first_edges()
            .to_vec())
    }

    /// The chain of directed edges from `a` to `b`.
    fn leaf_path(&self, a: usize, b: usize) -> PyResult<Vec<(usize, usize)>> {
        Ok(self.inner.leaf_path(a, b).map_err(value_err)?.edges().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Tree(nodes={}, edges={})",
            self.inner.node_count(),
            self.inner.edges().len()
        )
    }
}

/// Palindromic step-size schedule over one edge horizon.
#[pyclass(name = "Schedule")]
struct PySchedule {
    inner: TimeSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    fn new(n_steps: usize, gamma0: f64, horizon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: TimeSchedule::new(n_steps, gamma0, horizon).map_err(value_err)?,
        })
    }

    fn steps(&self) -> Vec<f64> {
        self.inner.steps().to_vec()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    fn __len__(&self) -> usize {
        self.inner.n_steps()
    }
}

/// Diffusion horizon of an edge: `epsilon / (2 * weight)`.
#[pyfunction]
fn horizon_time(epsilon: f64, weight: f64) -> PyResult<f64> {
    treedsb::tree::horizon_time(epsilon, weight).map_err(value_err)
}

/// Sinusoidal time features (32 values).
#[pyfunction]
fn pos_encode(t: f64) -> Vec<f64> {
    treedsb::net::pos_encode(t).to_vec()
}

/// 2-D toy dataset (`swiss_roll`, `circle`, or `moons`) as a list of rows.
#[pyfunction]
fn gen_toy2d(kind: &str, count: usize, noise: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let kind: ToyKind = kind.parse().map_err(value_err)?;
    Ok(matrix_out(treedsb::measures::gen_toy2d(kind, count, noise, seed).data()))
}

/// Random zero-mean SPD Gaussian; returns `(mean, cov)`.
#[pyfunction]
fn gen_random_spd(dim: usize, cond_max: f64, scale: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let g = treedsb::measures::gen_random_spd(dim, cond_max, scale, seed).map_err(value_err)?;
    Ok((g.mean().to_vec(), matrix_out(g.cov())))
}

/// Squared Wasserstein-2 distance between two Gaussians.
#[pyfunction]
fn gaussian_w2sq(
    mean1: Vec<f64>,
    cov1: Vec<Vec<f64>>,
    mean2: Vec<f64>,
    cov2: Vec<Vec<f64>>,
) -> PyResult<f64> {
    let a = gaussian_arg(mean1, cov1)?;
    let b = gaussian_arg(mean2, cov2)?;
    oracle::gaussian_w2sq(&a, &b).map_err(value_err)
}

/// Unexplained-variance percentage of samples against a Gaussian target.
#[pyfunction]
fn bw2_uvp(samples: Vec<Vec<f64>>, target_mean: Vec<f64>, target_cov: Vec<Vec<f64>>) -> PyResult<f64> {
    let data = SampleSet::new(to_matrix(samples)?).map_err(value_err)?;
    let target = gaussian_arg(target_mean, target_cov)?;
    oracle::bw2_uvp(&data, &target).map_err(value_err)
}

/// Fixed-point Wasserstein barycenter of Gaussians; returns `(mean, cov)`.
#[pyfunction]
#[pyo3(signature = (means, covs, weights, tol = 1e-10, max_iter = 1000))]
fn gaussian_barycenter(
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<Vec<f64>>>,
    weights: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    if means.len() != covs.len() {
        return Err(PyValueError::new_err("means and covs differ in length"));
    }
    let gaussians: Vec<GaussianMeasure> = means
        .into_iter()
        .zip(covs)
        .map(|(m, c)| gaussian_arg(m, c))
        .collect::<PyResult<_>>()?;
    let out = oracle::gaussian_barycenter_fixed_point(&gaussians, &weights, tol, max_iter)
        .map_err(runtime_err)?;
    Ok((out.mean().to_vec(), matrix_out(out.cov())))
}

/// Discrete tree-structured solver on a uniform 1-D grid.
///
/// `leaf_densities` maps leaf id to `(mean, sigma)` of an isotropic Gaussian
/// evaluated on the grid. Returns `{node: weights}` marginals of the
/// converged coupling.
#[pyfunction]
#[pyo3(signature = (node_count, edges, epsilon, root, leaf_densities, grid_min, grid_max, grid_points, tol = 1e-10, max_iter = 10_000))]
#[allow(clippy::too_many_arguments)]
fn tree_sinkhorn_1d(
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
    epsilon: f64,
    root: usize,
    leaf_densities: HashMap<usize, (f64, f64)>,
    grid_min: f64,
    grid_max: f64,
    grid_points: usize,
    tol: f64,
    max_iter: usize,
) -> PyResult<HashMap<usize, Vec<f64>>> {
    let tree = UndirectedTree::build(node_count, &edges).map_err(value_err)?;
    let grid = oracle::Grid::regular_1d(grid_min, grid_max, grid_points);
    let mut marginals = HashMap::new();
    for (&leaf, &(mean, sigma)) in &leaf_densities {
        marginals.insert(
            leaf,
            oracle::gaussian_on_grid(&grid, &[mean], sigma).map_err(value_err)?,
        );
    }
    let phi = marginals
        .get(&root)
        .cloned()
        .ok_or_else(|| PyValueError::new_err("root must be a leaf with a density"))?;
    let kernels = oracle::TreeKernelSet::build(&tree, &grid, epsilon, root, &phi).map_err(value_err)?;
    let run = oracle::tree_sinkhorn_mp(&kernels, &tree, &marginals, tol, max_iter).map_err(runtime_err)?;
    Ok(run
        .node_marginals
        .into_iter()
        .map(|(node, m)| (node, m.weights().to_vec()))
        .collect())
}

/// Parses a config, runs the full experiment into `out_dir`, and returns
/// `(iterations, best_uvp_percent)`.
#[pyfunction]
fn run_experiment(config_text: &str, out_dir: &str) -> PyResult<(usize, Option<f64>)> {
    let cfg = ExperimentConfig::parse(config_text).map_err(value_err)?;
    let manifest = run::cmd_run(&cfg, Path::new(out_dir)).map_err(runtime_err)?;
    Ok((manifest.records.len(), manifest.best_uvp_percent))
}

#[pymodule]
fn treedsb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTree>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(horizon_time, m)?)?;
    m.add_function(wrap_pyfunction!(pos_encode, m)?)?;
    m.add_function(wrap_pyfunction!(gen_toy2d, m)?)?;
    m.add_function(wrap_pyfunction!(gen_random_spd, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_w2sq, m)?)?;
    m.add_function(wrap_pyfunction!(bw2_uvp, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_barycenter, m)?)?;
    m.add_function(wrap_pyfunction!(tree_sinkhorn_1d, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
