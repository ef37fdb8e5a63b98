//! Sample generators and Gaussian measures for the experiment marginals.
//!
//! Everything here is a pure function of its arguments, including the seed;
//! regenerating a dataset with the same spec reproduces it bit for bit.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("unknown dataset kind `{0}`")]
    UnknownKind(String),
    #[error("bad dimension {0}")]
    BadDimension(usize),
    #[error("covariance is not symmetric positive-definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero variance component")]
    ZeroVariance,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite sample values")]
    NonFinite,
}

/// An immutable batch of `count` points in `R^dim`, rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Array2<f64>,
}

impl SampleSet {
    pub fn new(data: Array2<f64>) -> Result<Self, MeasureError> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::NonFinite);
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Multivariate Gaussian given by its first two moments.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: Array1<f64>,
    cov: Array2<f64>,
}

impl GaussianMeasure {
    /// Checks symmetry (within 1e-12) and positive-definiteness.
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self, MeasureError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(MeasureError::DimensionMismatch(cov.nrows(), d));
        }
        for i in 0..d {
            for j in 0..d {
                if (cov[[i, j]] - cov[[j, i]]).abs() > 1e-12 {
                    return Err(MeasureError::NotPositiveDefinite);
                }
            }
        }
        if nalgebra::Cholesky::new(to_dmatrix(&cov)).is_none() {
            return Err(MeasureError::NotPositiveDefinite);
        }
        Ok(Self { mean, cov })
    }

    /// Wraps moments without the SPD check. Sample covariances can be
    /// singular (all-equal samples); metric code handles that downstream.
    pub fn new_unchecked(mean: Array1<f64>, cov: Array2<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Array2<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Two-dimensional toy dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    SwissRoll,
    Circle,
    Moons,
}

impl std::str::FromStr for ToyKind {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, MeasureError> {
        match s {
            "swiss_roll" => Ok(ToyKind::SwissRoll),
            "circle" => Ok(ToyKind::Circle),
            "moons" => Ok(ToyKind::Moons),
            other => Err(MeasureError::UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for ToyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ToyKind::SwissRoll => "swiss_roll",
            ToyKind::Circle => "circle",
            ToyKind::Moons => "moons",
        };
        f.write_str(s)
    }
}

/// Radius of the noiseless circle dataset.
pub const CIRCLE_RADIUS: f64 = 1.5;
/// Spiral scale keeping the swiss roll inside [-2, 2]^2.
const SWISS_ROLL_SCALE: f64 = 0.14;

/// Generates a 2-D toy dataset. Deterministic in `(kind, count, noise, seed)`.
///
/// All three families are scaled to fit in [-2, 2]^2 at zero noise.
pub fn gen_toy2d(kind: ToyKind, count: usize, noise: f64, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array2::zeros((count, 2));
    for i in 0..count {
        let (mut x, mut y) = match kind {
            ToyKind::SwissRoll => {
                let u: f64 = rng.random();
                let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * u);
                (SWISS_ROLL_SCALE * t * t.cos(), SWISS_ROLL_SCALE * t * t.sin())
            }
            ToyKind::Circle => {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (CIRCLE_RADIUS * theta.cos(), CIRCLE_RADIUS * theta.sin())
            }
            ToyKind::Moons => {
                let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
                if i % 2 == 0 {
                    (t.cos() - 0.5, t.sin() - 0.25)
                } else {
                    (0.5 - t.cos(), 0.25 - t.sin())
                }
            }
        };
        if noise > 0.0 {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            x += noise * zx;
            y += noise * zy;
        }
        data[[i, 0]] = x;
        data[[i, 1]] = y;
    }
    SampleSet { data }
}

/// Random zero-mean Gaussian with eigenvalues log-uniform in
/// `[scale, cond_max * scale]`, so the condition number never exceeds
/// `cond_max`. The eigenbasis is a seeded random orthogonal matrix.
pub fn gen_random_spd(
    dim: usize,
    cond_max: f64,
    scale: f64,
    seed: u64,
) -> Result<GaussianMeasure, MeasureError> {
    if dim == 0 {
        return Err(MeasureError::BadDimension(dim));
    }
    if cond_max < 1.0 || scale <= 0.0 {
        return Err(MeasureError::NotPositiveDefinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = nalgebra::DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix column signs so the orthogonal factor is canonical.
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let eigvals: Vec<f64> = (0..dim)
        .map(|_| {
            let u: f64 = rng.random();
            scale * cond_max.powf(u)
        })
        .collect();
    let lambda = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigvals));
    let cov = &q * lambda * q.transpose();
    let sym = (&cov + cov.transpose()) * 0.5;
    GaussianMeasure::new(Array1::zeros(dim), from_dmatrix(&sym))
}

/// Draws `count` samples from `g` via its Cholesky factor.
pub fn sample_gaussian(
    g: &GaussianMeasure,
    count: usize,
    seed: u64,
) -> Result<SampleSet, MeasureError> {
    let d = g.dim();
    let chol = nalgebra::Cholesky::new(to_dmatrix(&g.cov)).ok_or(MeasureError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array2::zeros((count, d));
    let mut z = vec![0.0; d];
    for i in 0..count {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        for j in 0..d {
            let mut acc = g.mean[j];
            for k in 0..=j {
                acc += l[(j, k)] * z[k];
            }
            data[[i, j]] = acc;
        }
    }
    Ok(SampleSet { data })
}

/// Diagonal Gaussian centered on the averaged leaf means, with per-coordinate
/// variance `alpha` times the harmonic mean of the leaf variances. Used as
/// the hub reference measure when the root is an internal node.
pub fn reference_gaussian_design(
    leaf_measures: &[GaussianMeasure],
    alpha: f64,
) -> Result<GaussianMeasure, MeasureError> {
    let first = leaf_measures.first().ok_or(MeasureError::BadDimension(0))?;
    let d = first.dim();
    if alpha <= 0.0 {
        return Err(MeasureError::ZeroVariance);
    }
    let k = leaf_measures.len() as f64;
    let mut mean = Array1::<f64>::zeros(d);
    let mut inv_var = Array1::<f64>::zeros(d);
    for g in leaf_measures {
        if g.dim() != d {
            return Err(MeasureError::DimensionMismatch(g.dim(), d));
        }
        for j in 0..d {
            let v = g.cov[[j, j]];
            if v <= 0.0 {
                return Err(MeasureError::ZeroVariance);
            }
            mean[j] += g.mean[j] / k;
            inv_var[j] += 1.0 / (k * v);
        }
    }
    let mut cov = Array2::zeros((d, d));
    for j in 0..d {
        cov[[j, j]] = alpha / inv_var[j];
    }
    GaussianMeasure::new(mean, cov)
}

/// Sample mean and unbiased covariance (divisor `count - 1`).
pub fn empirical_moments(s: &SampleSet) -> Result<(Array1<f64>, Array2<f64>), MeasureError> {
    let m = s.count();
    if m < 2 {
        return Err(MeasureError::TooFewSamples { needed: 2, got: m });
    }
    let d = s.dim();
    let mean = s.data.mean_axis(ndarray::Axis(0)).expect("count >= 2");
    let mut cov = Array2::zeros((d, d));
    for row in s.data.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[[i, j]] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[[i, j]] /= denom;
            cov[[j, i]] = cov[[i, j]];
        }
    }
    Ok((mean, cov))
}

/// Fits a Gaussian to the sample moments.
pub fn fit_gaussian(s: &SampleSet) -> Result<GaussianMeasure, MeasureError> {
    let (mean, cov) = empirical_moments(s)?;
    Ok(GaussianMeasure { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn empty_toy_sets() {
        for kind in [ToyKind::SwissRoll, ToyKind::Circle, ToyKind::Moons] {
            let s = gen_toy2d(kind, 0, 0.1, 1);
            assert_eq!(s.count(), 0);
            assert_eq!(s.dim(), 2);
        }
    }

    #[test]
    fn unknown_kind() {
        let err = "spiral".parse::<ToyKind>().unwrap_err();
        assert_eq!(err, MeasureError::UnknownKind("spiral".into()));
    }

    #[test]
    fn noiseless_circle_has_exact_radius() {
        let s = gen_toy2d(ToyKind::Circle, 500, 0.0, 3);
        for row in s.data().rows() {
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert_relative_eq!(r, CIRCLE_RADIUS, max_relative = 1e-12);
        }
    }

    #[test]
    fn toy_generators_fit_the_box() {
        for kind in [ToyKind::SwissRoll, ToyKind::Circle, ToyKind::Moons] {
            let s = gen_toy2d(kind, 20_000, 0.0, 11);
            for v in s.data().iter() {
                assert!(v.abs() <= 2.0, "{kind} escaped the box: {v}");
            }
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_toy2d(ToyKind::Moons, 100, 0.05, 42);
        let b = gen_toy2d(ToyKind::Moons, 100, 0.05, 42);
        assert_eq!(a, b);
        let c = gen_toy2d(ToyKind::Moons, 100, 0.05, 43);
        assert_ne!(a, c);
    }

    // Golden regression values computed once by a brute-force pass over this
    // generator (moons, count 10^4, noise 0.05, seed 7).
    #[test]
    fn moons_golden_moments() {
        let s = gen_toy2d(ToyKind::Moons, 10_000, 0.05, 7);
        let (mean, cov) = empirical_moments(&s).unwrap();
        assert_relative_eq!(mean[0], MOONS_GOLDEN_MEAN[0], epsilon = 1e-12);
        assert_relative_eq!(mean[1], MOONS_GOLDEN_MEAN[1], epsilon = 1e-12);
        assert_relative_eq!(cov[[0, 0]], MOONS_GOLDEN_COV[0], epsilon = 1e-12);
        assert_relative_eq!(cov[[0, 1]], MOONS_GOLDEN_COV[1], epsilon = 1e-12);
        assert_relative_eq!(cov[[1, 1]], MOONS_GOLDEN_COV[2], epsilon = 1e-12);
    }

    const MOONS_GOLDEN_MEAN: [f64; 2] = [0.0027031336943742707, -0.0015731491857604173];
    const MOONS_GOLDEN_COV: [f64; 3] = [0.7529384222284192, -0.19443854031899463, 0.2520354716879145];

    #[test]
    fn random_spd_is_symmetric_and_well_conditioned() {
        for seed in 0..20 {
            let g = gen_random_spd(4, 10.0, 0.5, seed).unwrap();
            let c = g.cov();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((c[[i, j]] - c[[j, i]]).abs() <= 1e-12);
                }
            }
            let eig = nalgebra::SymmetricEigen::new(to_dmatrix(c));
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            assert!(min > 0.0);
            assert!(max / min <= 10.0 + 1e-9, "cond {}", max / min);
        }
    }

    #[test]
    fn random_spd_dim1_and_determinism() {
        let g = gen_random_spd(1, 10.0, 2.0, 5).unwrap();
        assert!(g.cov()[[0, 0]] > 0.0);
        let a = gen_random_spd(3, 10.0, 1.0, 9).unwrap();
        let b = gen_random_spd(3, 10.0, 1.0, 9).unwrap();
        assert_eq!(a.cov(), b.cov());
    }

    #[test]
    fn gaussian_sampling_moments() {
        let g = GaussianMeasure::new(Array1::zeros(2), array![[1.0, 0.0], [0.0, 4.0]]).unwrap();
        let n = 100_000;
        let s = sample_gaussian(&g, n, 17).unwrap();
        let (mean, cov) = empirical_moments(&s).unwrap();
        let tol = 3.0 * (2.0f64).sqrt() / (n as f64).sqrt();
        assert!(mean.iter().map(|x| x * x).sum::<f64>().sqrt() < tol);
        assert_relative_eq!(cov[[0, 0]], 1.0, max_relative = 0.05);
        assert_relative_eq!(cov[[1, 1]], 4.0, max_relative = 0.05);
    }

    #[test]
    fn gaussian_single_draw_reproducible() {
        let g = GaussianMeasure::new(array![1.0], array![[2.0]]).unwrap();
        let a = sample_gaussian(&g, 1, 100).unwrap();
        let b = sample_gaussian(&g, 1, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reference_design_identical_inputs() {
        let g = GaussianMeasure::new(array![1.0, -1.0], array![[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let out = reference_gaussian_design(&[g.clone(), g.clone(), g.clone()], 2.0).unwrap();
        assert_relative_eq!(out.mean()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.cov()[[0, 0]], 4.0, epsilon = 1e-12);
        assert_relative_eq!(out.cov()[[1, 1]], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_design_harmonic_mean() {
        let a = GaussianMeasure::new(array![0.0], array![[1.0]]).unwrap();
        let b = GaussianMeasure::new(array![2.0], array![[3.0]]).unwrap();
        let out = reference_gaussian_design(&[a, b], 1.0).unwrap();
        assert_relative_eq!(out.cov()[[0, 0]], 1.5, epsilon = 1e-12);
        assert_relative_eq!(out.mean()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_design_mean_average_2d() {
        let a = GaussianMeasure::new(array![0.0, 0.0], Array2::eye(2)).unwrap();
        let b = GaussianMeasure::new(array![2.0, 2.0], Array2::eye(2)).unwrap();
        let out = reference_gaussian_design(&[a, b], 1.0).unwrap();
        assert_relative_eq!(out.mean()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.mean()[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_design_permutation_invariant_and_alpha_homogeneous() {
        let gs: Vec<_> = (0..3).map(|s| gen_random_spd(2, 5.0, 1.0, s).unwrap()).collect();
        let ordered = reference_gaussian_design(&gs, 1.0).unwrap();
        let swapped = reference_gaussian_design(&[gs[2].clone(), gs[0].clone(), gs[1].clone()], 1.0).unwrap();
        for j in 0..2 {
            assert_relative_eq!(swapped.mean()[j], ordered.mean()[j], epsilon = 1e-14);
            assert_relative_eq!(swapped.cov()[[j, j]], ordered.cov()[[j, j]], epsilon = 1e-14);
        }
        let doubled = reference_gaussian_design(&gs, 2.0).unwrap();
        for j in 0..2 {
            assert_relative_eq!(doubled.cov()[[j, j]], 2.0 * ordered.cov()[[j, j]], epsilon = 1e-12);
        }
    }

    #[test]
    fn moments_hand_examples() {
        let s = SampleSet::new(array![[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let (mean, cov) = empirical_moments(&s).unwrap();
        assert_eq!(mean, array![1.0, 0.0]);
        assert_eq!(cov, array![[2.0, 0.0], [0.0, 0.0]]);

        let equal = SampleSet::new(array![[1.5, -1.0], [1.5, -1.0], [1.5, -1.0]]).unwrap();
        let (_, cov) = empirical_moments(&equal).unwrap();
        assert_eq!(cov, Array2::<f64>::zeros((2, 2)));

        let one = SampleSet::new(array![[1.0]]).unwrap();
        assert!(matches!(
            empirical_moments(&one),
            Err(MeasureError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn moments_recover_known_gaussian() {
        let g = gen_random_spd(2, 4.0, 1.0, 23).unwrap();
        let s = sample_gaussian(&g, 100_000, 5).unwrap();
        let (mean, cov) = empirical_moments(&s).unwrap();
        for j in 0..2 {
            assert!(mean[j].abs() < 0.05);
            assert_relative_eq!(cov[[j, j]], g.cov()[[j, j]], max_relative = 0.05);
        }
    }
}
