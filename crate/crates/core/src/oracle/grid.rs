//! Discrete measures on small 1-D or 2-D grids and the edge kernels of the
//! discretized coupling problem.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use super::OracleError;
use crate::tree::{NodeId, UndirectedTree};

/// Shared evaluation grid: `len` points in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Array2<f64>,
}

impl Grid {
    /// Uniform grid on `[min, max]` with `count` points.
    pub fn regular_1d(min: f64, max: f64, count: usize) -> Arc<Self> {
        let points = Array2::from_shape_fn((count, 1), |(i, _)| {
            min + (max - min) * i as f64 / (count - 1).max(1) as f64
        });
        Arc::new(Self { points })
    }

    /// Uniform product grid on `[min, max]^2` with `per_axis` points per
    /// axis, row-major.
    pub fn regular_2d(min: f64, max: f64, per_axis: usize) -> Arc<Self> {
        let step = |i: usize| min + (max - min) * i as f64 / (per_axis - 1).max(1) as f64;
        let points = Array2::from_shape_fn((per_axis * per_axis, 2), |(g, j)| {
            if j == 0 {
                step(g / per_axis)
            } else {
                step(g % per_axis)
            }
        });
        Arc::new(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    /// Squared Euclidean distance between grid points `i` and `j`.
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.points
            .row(i)
            .iter()
            .zip(self.points.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// A probability vector over a shared [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Arc<Grid>,
    weights: Array1<f64>,
}

impl GridMeasure {
    /// Normalizes nonnegative weights into a probability vector.
    pub fn new(grid: Arc<Grid>, weights: Array1<f64>) -> Result<Self, OracleError> {
        if weights.len() != grid.len() {
            return Err(OracleError::DimensionMismatch(weights.len(), grid.len()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(OracleError::NumericalUnderflow);
        }
        let total: f64 = weights.sum();
        if total <= 0.0 {
            return Err(OracleError::NumericalUnderflow);
        }
        Ok(Self {
            grid,
            weights: weights / total,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn same_grid(&self, other: &GridMeasure) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }
}

/// Total variation distance `0.5 * sum |a_i - b_i|`.
pub fn discrete_tv(a: &GridMeasure, b: &GridMeasure) -> Result<f64, OracleError> {
    if !a.same_grid(b) {
        return Err(OracleError::GridMismatch);
    }
    Ok(0.5 * a.weights.iter().zip(b.weights.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Kullback-Leibler divergence with `0 log 0 = 0`; infinite when `a` puts
/// mass outside the support of `b`.
pub fn discrete_kl(a: &GridMeasure, b: &GridMeasure) -> Result<f64, OracleError> {
    if !a.same_grid(b) {
        return Err(OracleError::GridMismatch);
    }
    let mut kl = 0.0;
    for (&p, &q) in a.weights.iter().zip(b.weights.iter()) {
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

/// Isotropic Gaussian density evaluated on the grid and renormalized.
pub fn gaussian_on_grid(grid: &Arc<Grid>, mean: &[f64], sigma: f64) -> Result<GridMeasure, OracleError> {
    if mean.len() != grid.dim() {
        return Err(OracleError::DimensionMismatch(mean.len(), grid.dim()));
    }
    if sigma <= 0.0 {
        return Err(OracleError::NotPositiveDefinite);
    }
    let weights = Array1::from_shape_fn(grid.len(), |i| {
        let sq: f64 = grid
            .point(i)
            .iter()
            .zip(mean.iter())
            .map(|(x, m)| (x - m) * (x - m))
            .sum();
        (-sq / (2.0 * sigma * sigma)).exp()
    });
    GridMeasure::new(grid.clone(), weights)
}

/// Log-domain edge kernels of the discretized coupling problem plus the
/// root reference density.
///
/// Each undirected edge `{u, v}` of weight `w` carries the symmetric matrix
/// `log A[i, j] = -w * |x_i - x_j|^2 / epsilon`. The root factor is the log
/// of a [`GridMeasure`].
#[derive(Debug, Clone)]
pub struct TreeKernelSet {
    pub epsilon: f64,
    pub root: NodeId,
    log_kernels: HashMap<(NodeId, NodeId), Array2<f64>>,
    log_root_factor: Array1<f64>,
    grid: Arc<Grid>,
}

impl TreeKernelSet {
    /// Builds kernels for every edge of `tree` at regularization `epsilon`
    /// with root factor `phi_root`.
    pub fn build(
        tree: &UndirectedTree,
        grid: &Arc<Grid>,
        epsilon: f64,
        root: NodeId,
        phi_root: &GridMeasure,
    ) -> Result<Self, OracleError> {
        if epsilon <= 0.0 {
            return Err(OracleError::NotPositiveDefinite);
        }
        if !Arc::ptr_eq(phi_root.grid(), grid) && *phi_root.grid().as_ref() != *grid.as_ref() {
            return Err(OracleError::GridMismatch);
        }
        let g = grid.len();
        let mut log_kernels = HashMap::new();
        for &(u, v, w) in tree.edges() {
            let mut k = Array2::zeros((g, g));
            for i in 0..g {
                for j in 0..g {
                    k[[i, j]] = -w * grid.sq_dist(i, j) / epsilon;
                }
            }
            log_kernels.insert((u.min(v), u.max(v)), k);
        }
        let log_root_factor = phi_root.weights().mapv(|w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY });
        Ok(Self {
            epsilon,
            root,
            log_kernels,
            log_root_factor,
            grid: grid.clone(),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// `log A` for the edge `{u, v}` (symmetric, so direction-free).
    pub fn log_kernel(&self, u: NodeId, v: NodeId) -> &Array2<f64> {
        &self.log_kernels[&(u.min(v), u.max(v))]
    }

    pub fn log_root_factor(&self) -> &Array1<f64> {
        &self.log_root_factor
    }
}

/// Numerically stable `log(sum(exp(v)))`.
pub(crate) fn log_sum_exp(v: &Array1<f64>) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn grid_construction() {
        let g = Grid::regular_1d(-1.0, 1.0, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g.point(2)[0], 0.0);
        let g2 = Grid::regular_2d(0.0, 1.0, 3);
        assert_eq!(g2.len(), 9);
        assert_eq!(g2.dim(), 2);
        assert_eq!(g2.point(4).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn tv_and_kl_basics() {
        let g = Grid::regular_1d(0.0, 1.0, 3);
        let a = GridMeasure::new(g.clone(), array![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(discrete_tv(&a, &a).unwrap(), 0.0);
        assert_eq!(discrete_kl(&a, &a).unwrap(), 0.0);

        let p = GridMeasure::new(g.clone(), array![1.0, 0.0, 0.0]).unwrap();
        let q = GridMeasure::new(g.clone(), array![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(discrete_tv(&p, &q).unwrap(), 1.0);
        assert_eq!(discrete_kl(&p, &q).unwrap(), f64::INFINITY);
    }

    // Hand-computed three-point example:
    // TV = (|.5-.25| + |.25-.25| + |.25-.5|)/2 = 0.25
    // KL = .5 ln 2 + .25 ln 1 + .25 ln .5
    #[test]
    fn tv_and_kl_hand_example() {
        let g = Grid::regular_1d(0.0, 1.0, 3);
        let a = GridMeasure::new(g.clone(), array![0.5, 0.25, 0.25]).unwrap();
        let b = GridMeasure::new(g.clone(), array![0.25, 0.25, 0.5]).unwrap();
        assert_relative_eq!(discrete_tv(&a, &b).unwrap(), 0.25, epsilon = 1e-15);
        let expected = 0.5 * 2.0f64.ln() + 0.25 * 0.5f64.ln();
        assert_relative_eq!(discrete_kl(&a, &b).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn grid_mismatch_detected() {
        let g1 = Grid::regular_1d(0.0, 1.0, 3);
        let g2 = Grid::regular_1d(0.0, 2.0, 3);
        let a = GridMeasure::new(g1, array![1.0, 1.0, 1.0]).unwrap();
        let b = GridMeasure::new(g2, array![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(discrete_tv(&a, &b).unwrap_err(), OracleError::GridMismatch);
    }

    #[test]
    fn gaussian_grid_measure_is_normalized_and_symmetric() {
        let g = Grid::regular_1d(-3.0, 3.0, 7);
        let m = gaussian_on_grid(&g, &[0.0], 1.0).unwrap();
        assert_relative_eq!(m.weights().sum(), 1.0, epsilon = 1e-12);
        for i in 0..3 {
            assert_relative_eq!(m.weights()[i], m.weights()[6 - i], epsilon = 1e-12);
        }
    }

    #[test]
    fn kernels_are_symmetric_and_positive() {
        let tree = UndirectedTree::build(3, &[(0, 1, 0.5), (1, 2, 2.0)]).unwrap();
        let grid = Grid::regular_1d(-1.0, 1.0, 4);
        let phi = gaussian_on_grid(&grid, &[0.0], 1.0).unwrap();
        let k = TreeKernelSet::build(&tree, &grid, 0.3, 0, &phi).unwrap();
        let a = k.log_kernel(0, 1);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[[i, j]], a[[j, i]]);
                assert!(a[[i, j]].is_finite());
                assert!(a[[i, j]] <= 0.0);
            }
        }
        assert_relative_eq!(
            a[[0, 3]],
            -0.5 * 4.0 / 0.3,
            epsilon = 1e-12
        );
    }
}
