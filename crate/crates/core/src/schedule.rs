//! Few-step ancestral noise schedule.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("noise schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
}

/// Per-step constants of the ancestral sampler. Timesteps run t = 1..=T;
/// index t-1 into the vectors. `alpha_bar` at t = 0 is 1 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Linear beta schedule from 1e-2 to 0.3 with posterior stddevs.
pub fn build_noise_schedule(steps: usize) -> Result<NoiseSchedule, ScheduleError> {
    if steps < 2 {
        return Err(ScheduleError::TooFewSteps(steps));
    }
    let (beta_lo, beta_hi) = (1e-2, 0.3);
    let mut beta = Vec::with_capacity(steps);
    for t in 0..steps {
        beta.push(beta_lo + (beta_hi - beta_lo) * t as f64 / (steps - 1) as f64);
    }
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for &b in &beta {
        prod *= 1.0 - b;
        alpha_bar.push(prod);
    }
    // sigma_t is the posterior stddev sqrt((1 - abar_{t-1})/(1 - abar_t) * beta_t);
    // abar_0 = 1 makes the final step deterministic (sigma_1 = 0).
    let mut sigma = Vec::with_capacity(steps);
    for t in 1..=steps {
        let prev = if t == 1 { 1.0 } else { alpha_bar[t - 2] };
        sigma.push(((1.0 - prev) / (1.0 - alpha_bar[t - 1]) * beta[t - 1]).sqrt());
    }
    Ok(NoiseSchedule { steps, beta, alpha_bar, sigma })
}

impl NoiseSchedule {
    /// Cumulative signal coefficient at timestep `t` in [0, T].
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn sigma_at(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_step() {
        assert!(matches!(build_noise_schedule(1), Err(ScheduleError::TooFewSteps(1))));
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = build_noise_schedule(8).unwrap();
        for t in 1..8 {
            assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        }
        assert!(s.alpha_bar[7] < s.alpha_bar[0]);
        assert!(s.alpha_bar[0] < 1.0);
    }

    #[test]
    fn two_step_single_product() {
        let s = build_noise_schedule(2).unwrap();
        assert_eq!(s.alpha_bar[0], 1.0 - s.beta[0]);
        assert_eq!(s.beta[0], 1e-2);
        assert_eq!(s.beta[1], 0.3);
    }

    #[test]
    fn alpha_bar_matches_independent_cumulative_product() {
        let s = build_noise_schedule(8).unwrap();
        let mut expect = Vec::new();
        for t in 0..8 {
            let mut prod = 1.0;
            for &b in &s.beta[..=t] {
                prod *= 1.0 - b;
            }
            expect.push(prod);
        }
        for (got, want) in s.alpha_bar.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_zero_only_at_final_step() {
        let s = build_noise_schedule(8).unwrap();
        assert_eq!(s.sigma_at(1), 0.0);
        for t in 2..=8 {
            assert!(s.sigma_at(t) > 0.0);
        }
    }

    #[test]
    fn beta_in_open_unit_interval() {
        let s = build_noise_schedule(16).unwrap();
        assert!(s.beta.iter().all(|&b| b > 0.0 && b < 1.0));
    }
}
