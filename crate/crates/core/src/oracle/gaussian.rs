//! Closed-form Gaussian transport: Bures metric, unexplained variance, and
//! the barycenter fixed point.

use nalgebra::DMatrix;
use ndarray::Array1;

use super::OracleError;
use crate::measures::{empirical_moments, from_dmatrix, to_dmatrix, GaussianMeasure, SampleSet};

/// Symmetric square root of an SPD matrix via eigendecomposition. Tiny
/// negative eigenvalues from roundoff are clamped to zero.
fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

fn spd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, OracleError> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(OracleError::NotPositiveDefinite);
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

/// Squared Wasserstein-2 distance between Gaussians:
/// `|m1 - m2|^2 + tr(S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2})`.
pub fn gaussian_w2sq(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64, OracleError> {
    if g1.dim() != g2.dim() {
        return Err(OracleError::DimensionMismatch(g1.dim(), g2.dim()));
    }
    let mean_term: f64 = g1
        .mean()
        .iter()
        .zip(g2.mean().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let s1 = to_dmatrix(g1.cov());
    let s2 = to_dmatrix(g2.cov());
    let root2 = spd_sqrt(&s2);
    let cross = spd_sqrt(&(&root2 * &s1 * &root2));
    let bures = s1.trace() + s2.trace() - 2.0 * cross.trace();
    // The Bures term is nonnegative; roundoff can leave a tiny negative.
    Ok(mean_term + bures.max(0.0))
}

/// Unexplained variance percentage of a Gaussian fit against a target:
/// `100 * 2 * BW2^2(a, target) / tr(Cov(target))`.
pub fn bw2_uvp_gaussians(a: &GaussianMeasure, target: &GaussianMeasure) -> Result<f64, OracleError> {
    let bw = gaussian_w2sq(a, target)?;
    let var: f64 = (0..target.dim()).map(|j| target.cov()[[j, j]]).sum();
    if var <= 0.0 {
        return Err(OracleError::NotPositiveDefinite);
    }
    Ok(100.0 * 2.0 * bw / var)
}

/// Fits Gaussian moments to the samples, then applies [`bw2_uvp_gaussians`].
pub fn bw2_uvp(candidate: &SampleSet, target: &GaussianMeasure) -> Result<f64, OracleError> {
    let (mean, cov) = empirical_moments(candidate).map_err(|_| OracleError::TooFewSamples {
        needed: 2,
        got: candidate.count(),
    })?;
    let fitted = moment_gaussian(mean, cov);
    bw2_uvp_gaussians(&fitted, target)
}

/// Wraps possibly-degenerate sample moments without the SPD validation;
/// the Bures formulas only need positive semidefiniteness.
fn moment_gaussian(mean: Array1<f64>, cov: ndarray::Array2<f64>) -> GaussianMeasure {
    GaussianMeasure::new_unchecked(mean, cov)
}

/// Barycenter of Gaussians under W2: the mean is the weighted mean average;
/// the covariance solves `S = sum_i w_i (S^{1/2} S_i S^{1/2})^{1/2}` by
/// fixed-point iteration, undamped until the residual stalls.
pub fn gaussian_barycenter_fixed_point(
    gaussians: &[GaussianMeasure],
    weights: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<GaussianMeasure, OracleError> {
    if gaussians.is_empty() || gaussians.len() != weights.len() {
        return Err(OracleError::BadWeights);
    }
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (wsum - 1.0).abs() > 1e-10 {
        return Err(OracleError::BadWeights);
    }
    let d = gaussians[0].dim();
    let mut mean = Array1::<f64>::zeros(d);
    for (g, &w) in gaussians.iter().zip(weights) {
        if g.dim() != d {
            return Err(OracleError::DimensionMismatch(g.dim(), d));
        }
        for j in 0..d {
            mean[j] += w * g.mean()[j];
        }
    }
    let covs: Vec<DMatrix<f64>> = gaussians.iter().map(|g| to_dmatrix(g.cov())).collect();

    // Mixture covariance is a reasonable SPD starting point.
    let mut s = DMatrix::<f64>::zeros(d, d);
    for (c, &w) in covs.iter().zip(weights) {
        s += c * w;
    }

    let residual_of = |s: &DMatrix<f64>| -> Result<(f64, DMatrix<f64>), OracleError> {
        let root = spd_sqrt(s);
        let mut avg = DMatrix::<f64>::zeros(d, d);
        for (c, &w) in covs.iter().zip(weights) {
            avg += spd_sqrt(&(&root * c * &root)) * w;
        }
        let resid = (s - &avg).norm();
        Ok((resid, avg))
    };

    let mut damping = 1.0;
    let mut prev_resid = f64::INFINITY;
    let mut resid = f64::INFINITY;
    for _ in 0..max_iter {
        let root = spd_sqrt(&s);
        let inv_root = spd_inv_sqrt(&s)?;
        let mut avg = DMatrix::<f64>::zeros(d, d);
        for (c, &w) in covs.iter().zip(weights) {
            avg += spd_sqrt(&(&root * c * &root)) * w;
        }
        resid = (&s - &avg).norm();
        if resid <= tol {
            break;
        }
        if resid > prev_resid {
            damping = 0.5;
        }
        prev_resid = resid;
        let next = &inv_root * (&avg * &avg) * &inv_root;
        let next = (&next + next.transpose()) * 0.5;
        s = if damping < 1.0 { &s * (1.0 - damping) + next * damping } else { next };
    }
    let (final_resid, _) = residual_of(&s)?;
    if final_resid > tol {
        return Err(OracleError::NoConvergence {
            iterations: max_iter,
            residual: resid.min(final_resid),
        });
    }
    Ok(GaussianMeasure::new_unchecked(mean, from_dmatrix(&s)))
}
