//! Batched Euler-Maruyama simulation of drift-plus-Brownian dynamics.
//!
//! One call simulates `M` trajectories in lockstep over a [`TimeSchedule`]:
//! `X_{m+1} = X_m + gamma_{m+1} f(t_m, X_m) + sqrt(gamma_{m+1}) Z_{m+1}`.
//! Noise comes from one ChaCha substream per trajectory, so results are a
//! pure function of the seed no matter how the batch is traversed.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::measures::{MeasureError, SampleSet};
use crate::schedule::TimeSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum SdeError {
    #[error("drift returned a non-finite value at step {step}")]
    NonFiniteDrift { step: usize },
    #[error("step index {step} out of range (N = {n})")]
    StepOutOfRange { step: usize, n: usize },
    #[error("drift dimension {drift} does not match data dimension {data}")]
    DimensionMismatch { drift: usize, data: usize },
}

/// A time-state drift field, evaluated on a whole batch of states at once.
///
/// Implementations must be safe for concurrent read-only use.
pub trait Drift {
    fn dim(&self) -> usize;
    /// Drift at shared time `t` (cumulative time of step index `m`) for each
    /// row of `x`.
    fn eval(&self, m: usize, t: f64, x: &ArrayView2<f64>) -> Array2<f64>;
}

/// The zero drift field: plain Brownian motion.
pub struct ZeroDrift(pub usize);

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, _m: usize, _t: f64, x: &ArrayView2<f64>) -> Array2<f64> {
        Array2::zeros(x.raw_dim())
    }
}

/// `M` trajectories over `N + 1` time points in `d` dimensions.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    states: Array3<f64>,
    schedule: TimeSchedule,
    /// Directed edge this batch was simulated along, when attached to a tree.
    pub direction: Option<(usize, usize)>,
}

impl TrajectoryBatch {
    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    pub fn schedule(&self) -> &TimeSchedule {
        &self.schedule
    }

    pub fn count(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    /// The `M x d` slice at time index `m`.
    pub fn marginal(&self, m: usize) -> Result<SampleSet, SdeError> {
        let n = self.schedule.n_steps();
        if m > n {
            return Err(SdeError::StepOutOfRange { step: m, n });
        }
        let slice = self.states.slice(s![.., m, ..]).to_owned();
        Ok(SampleSet::new(slice).expect("trajectory states are finite"))
    }

    /// Terminal slice, the dataset handed to the next edge.
    pub fn terminal(&self) -> SampleSet {
        self.marginal(self.schedule.n_steps()).expect("in range")
    }
}

/// Simulates the batch and also records every drift evaluation
/// (`M x N x d`), which training reuses as cached transition means.
pub fn em_forward_recorded<D: Drift>(
    drift: &D,
    schedule: &TimeSchedule,
    init: &SampleSet,
    seed: u64,
) -> Result<(TrajectoryBatch, Array3<f64>), SdeError> {
    let d = init.dim();
    if drift.dim() != d {
        return Err(SdeError::DimensionMismatch {
            drift: drift.dim(),
            data: d,
        });
    }
    let m_count = init.count();
    let n = schedule.n_steps();
    let mut states = Array3::zeros((m_count, n + 1, d));
    states.slice_mut(s![.., 0, ..]).assign(init.data());
    let mut drifts = Array3::zeros((m_count, n, d));

    let base = ChaCha8Rng::seed_from_u64(seed);
    let mut rngs: Vec<ChaCha8Rng> = (0..m_count)
        .map(|i| {
            let mut r = base.clone();
            r.set_stream(i as u64);
            r
        })
        .collect();

    let mut x = init.data().clone();
    let mut noise = Array2::zeros((m_count, d));
    for m in 0..n {
        let gamma = schedule.step(m + 1);
        let sqrt_gamma = gamma.sqrt();
        let f = drift.eval(m, schedule.time(m), &x.view());
        if f.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::NonFiniteDrift { step: m });
        }
        for (i, rng) in rngs.iter_mut().enumerate() {
            for j in 0..d {
                noise[[i, j]] = rng.sample(StandardNormal);
            }
        }
        ndarray::Zip::from(&mut x).and(&f).and(&noise).for_each(|xv: &mut f64, &fv: &f64, &zv: &f64| {
            *xv += gamma * fv + sqrt_gamma * zv;
        });
        states.slice_mut(s![.., m + 1, ..]).assign(&x);
        drifts.slice_mut(s![.., m, ..]).assign(&f);
    }
    Ok((
        TrajectoryBatch {
            states,
            schedule: schedule.clone(),
            direction: None,
        },
        drifts,
    ))
}

/// Simulates the Euler-Maruyama dynamics of `drift` from `init`.
pub fn em_forward<D: Drift>(
    drift: &D,
    schedule: &TimeSchedule,
    init: &SampleSet,
    seed: u64,
) -> Result<TrajectoryBatch, SdeError> {
    em_forward_recorded(drift, schedule, init, seed).map(|(batch, _)| batch)
}

/// Brownian motion: `em_forward` with the zero drift field.
pub fn brownian_forward(
    schedule: &TimeSchedule,
    init: &SampleSet,
    seed: u64,
) -> Result<TrajectoryBatch, SdeError> {
    em_forward(&ZeroDrift(init.dim()), schedule, init, seed)
}

/// Convenience wrapper matching the batch slicing used across the crate.
pub fn extract_marginal(batch: &TrajectoryBatch, m: usize) -> Result<SampleSet, SdeError> {
    batch.marginal(m)
}

#[cfg(test)]
fn column_variances(data: &ArrayView2<f64>) -> Vec<f64> {
    let m = data.nrows() as f64;
    data.axis_iter(ndarray::Axis(1))
        .map(|col| {
            let mean = col.sum() / m;
            col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
        })
        .collect()
}

impl From<MeasureError> for SdeError {
    fn from(_: MeasureError) -> Self {
        SdeError::NonFiniteDrift { step: 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{sample_gaussian, GaussianMeasure};
    use approx::assert_relative_eq;
    use ndarray::{array, Array1};

    struct ConstantDrift(Vec<f64>);

    impl Drift for ConstantDrift {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn eval(&self, _m: usize, _t: f64, x: &ArrayView2<f64>) -> Array2<f64> {
            let mut out = Array2::zeros(x.raw_dim());
            for mut row in out.rows_mut() {
                for (j, v) in self.0.iter().enumerate() {
                    row[j] = *v;
                }
            }
            out
        }
    }

    fn unit_schedule(n: usize, horizon: f64) -> TimeSchedule {
        TimeSchedule::new(n, 1e-6, horizon).unwrap()
    }

    #[test]
    fn single_step_is_reproducible() {
        let sched = unit_schedule(2, 0.5);
        let init = SampleSet::new(array![[0.0], [1.0]]).unwrap();
        let a = brownian_forward(&sched, &init, 9).unwrap();
        let b = brownian_forward(&sched, &init, 9).unwrap();
        assert_eq!(a.states(), b.states());
        // X_1 = X_0 + sqrt(gamma_1) Z_1 with Z_1 fixed by the seed.
        let z = (a.states()[[0, 1, 0]] - a.states()[[0, 0, 0]]) / sched.step(1).sqrt();
        assert!(z.is_finite());
    }

    #[test]
    fn brownian_equals_zero_drift_em() {
        let sched = unit_schedule(4, 1.0);
        let init = SampleSet::new(Array2::zeros((16, 3))).unwrap();
        let a = brownian_forward(&sched, &init, 3).unwrap();
        let b = em_forward(&ZeroDrift(3), &sched, &init, 3).unwrap();
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn terminal_variance_matches_elapsed_time() {
        let horizon = 0.8;
        let sched = unit_schedule(10, horizon);
        let m = 100_000;
        let init = SampleSet::new(Array2::zeros((m, 2))).unwrap();
        let batch = brownian_forward(&sched, &init, 12).unwrap();
        let term = batch.terminal();
        let vars = column_variances(&term.data().view());
        // Variance of the variance estimator: 2 T^2 / M.
        let se = horizon * (2.0 / m as f64).sqrt();
        for v in vars {
            assert!((v - horizon).abs() < 3.0 * se, "var {v} vs {horizon}");
        }
    }

    #[test]
    fn constant_drift_shifts_the_mean() {
        let horizon = 0.5;
        let sched = unit_schedule(10, horizon);
        let m = 50_000;
        let init = SampleSet::new(Array2::ones((m, 1))).unwrap();
        let batch = em_forward(&ConstantDrift(vec![2.0]), &sched, &init, 4).unwrap();
        let mean = batch.terminal().data().sum() / m as f64;
        let se = horizon.sqrt() / (m as f64).sqrt();
        assert!((mean - (1.0 + 2.0 * horizon)).abs() < 4.0 * se);
    }

    #[test]
    fn increment_variances_follow_the_schedule() {
        let sched = TimeSchedule::new(6, 1e-3, 0.6).unwrap();
        let m = 60_000;
        let init = SampleSet::new(Array2::zeros((m, 1))).unwrap();
        let batch = brownian_forward(&sched, &init, 21).unwrap();
        for step in 0..sched.n_steps() {
            let prev = batch.states().slice(s![.., step, ..]);
            let next = batch.states().slice(s![.., step + 1, ..]);
            let inc = &next - &prev;
            let vars = column_variances(&inc.view());
            let g = sched.step(step + 1);
            assert_relative_eq!(vars[0], g, max_relative = 0.05);
        }
    }

    #[test]
    fn gaussian_start_adds_time_to_the_variance() {
        let sigma2 = 0.5;
        let g = GaussianMeasure::new(Array1::zeros(1), array![[sigma2]]).unwrap();
        let init = sample_gaussian(&g, 80_000, 7).unwrap();
        let sched = unit_schedule(8, 0.4);
        let batch = brownian_forward(&sched, &init, 8).unwrap();
        for m in [2, 5, 8] {
            let vars = column_variances(&batch.marginal(m).unwrap().data().view());
            assert_relative_eq!(vars[0], sigma2 + sched.time(m), max_relative = 0.05);
        }
    }

    #[test]
    fn marginal_bounds() {
        let sched = unit_schedule(4, 1.0);
        let init = SampleSet::new(array![[1.0, 2.0]]).unwrap();
        let batch = brownian_forward(&sched, &init, 0).unwrap();
        assert_eq!(batch.marginal(0).unwrap(), init);
        assert_eq!(
            extract_marginal(&batch, 9).unwrap_err(),
            SdeError::StepOutOfRange { step: 9, n: 4 }
        );
    }

    #[test]
    fn non_finite_drift_detected() {
        struct BadDrift;
        impl Drift for BadDrift {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _m: usize, _t: f64, x: &ArrayView2<f64>) -> Array2<f64> {
                Array2::from_elem(x.raw_dim(), f64::NAN)
            }
        }
        let sched = unit_schedule(2, 0.5);
        let init = SampleSet::new(array![[0.0]]).unwrap();
        assert_eq!(
            em_forward(&BadDrift, &sched, &init, 0).unwrap_err(),
            SdeError::NonFiniteDrift { step: 0 }
        );
    }

    #[test]
    fn terminal_distribution_looks_gaussian() {
        // Smoke normality check on Brownian terminals: the fraction inside
        // one and two standard deviations matches the normal CDF.
        let horizon = 1.0;
        let sched = unit_schedule(10, horizon);
        let m = 100_000;
        let init = SampleSet::new(Array2::zeros((m, 1))).unwrap();
        let batch = brownian_forward(&sched, &init, 33).unwrap();
        let term = batch.terminal();
        let scale = horizon.sqrt();
        let inside1 = term.data().iter().filter(|x| x.abs() <= scale).count() as f64 / m as f64;
        let inside2 = term.data().iter().filter(|x| x.abs() <= 2.0 * scale).count() as f64 / m as f64;
        assert!((inside1 - 0.6827).abs() < 0.01, "{inside1}");
        assert!((inside2 - 0.9545).abs() < 0.01, "{inside2}");
    }
}
