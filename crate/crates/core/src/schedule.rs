//! Time-reversal-symmetric step-size schedules.
//!
//! A schedule of `N` step sizes covers one edge horizon `T`. Step sizes ramp
//! linearly from just above `gamma0` to a mid value `gamma_bar` and mirror
//! back down, so the grid reads identically in both time directions. The mid
//! value solves the sum constraint `sum(gamma) = T` in closed form.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step count must be even and >= 2, got {0}")]
    OddN(usize),
    #[error("horizon {horizon} too small for {n} steps with floor {gamma0}")]
    HorizonTooSmall { horizon: f64, n: usize, gamma0: f64 },
    #[error("step index {step} out of range (N = {n})")]
    StepOutOfRange { step: usize, n: usize },
}

/// Palindromic discretization of `[0, T]` into `N` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSchedule {
    steps: Vec<f64>,
    cumulative: Vec<f64>,
    horizon: f64,
}

impl TimeSchedule {
    /// Builds the schedule: `gamma_k = gamma0 + (2k/N)(gamma_bar - gamma0)`
    /// for `k = 1..=N/2`, mirrored onto the second half, with `gamma_bar`
    /// chosen so the steps sum to `horizon`.
    pub fn new(n: usize, gamma0: f64, horizon: f64) -> Result<Self, ScheduleError> {
        if n < 2 || n % 2 != 0 {
            return Err(ScheduleError::OddN(n));
        }
        if !(gamma0 > 0.0) || !(horizon > n as f64 * gamma0) {
            return Err(ScheduleError::HorizonTooSmall { horizon, n, gamma0 });
        }
        let half = n / 2;
        // sum = N*gamma0 + (gamma_bar - gamma0) * (N/2 + 1)
        let gamma_bar = gamma0 + (horizon - n as f64 * gamma0) / (half as f64 + 1.0);
        let mut steps = vec![0.0; n];
        for k in 1..=half {
            let g = gamma0 + (2.0 * k as f64 / n as f64) * (gamma_bar - gamma0);
            steps[k - 1] = g;
            steps[n - k] = g;
        }
        let mut cumulative = Vec::with_capacity(n + 1);
        let mut t = 0.0;
        cumulative.push(0.0);
        for &g in &steps {
            t += g;
            cumulative.push(t);
        }
        Ok(Self {
            steps,
            cumulative,
            horizon,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step size `gamma_m` for `m = 1..=N`.
    pub fn step(&self, m: usize) -> f64 {
        self.steps[m - 1]
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Cumulative time `t_m` for `m = 0..=N`; `t_0 = 0`, `t_N = horizon`.
    pub fn time(&self, m: usize) -> f64 {
        self.cumulative[m]
    }

    pub fn times(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn mid_step(&self) -> f64 {
        self.steps[self.steps.len() / 2 - 1]
    }
}
