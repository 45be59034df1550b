//! Running reward normalization.
//!
//! Two channels (single-view and joint-view) each track a running mean and
//! variance as an EMA over batch statistics. The first batch seeds the
//! running values with its own statistics, so early normalization matches
//! plain zero-mean unit-variance scaling; afterwards the running values
//! carry cross-epoch signal, which keeps the batch-average joint reward a
//! meaningful controller input. A strict-batch mode normalizes by the
//! current batch alone.

/// One channel of running statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningNormalizer {
    pub mean: f64,
    pub var: f64,
    pub initialized: bool,
    pub decay: f64,
    pub eps: f64,
    pub strict_batch: bool,
}

impl RunningNormalizer {
    pub fn new(decay: f64, eps: f64, strict_batch: bool) -> Self {
        Self { mean: 0.0, var: 0.0, initialized: false, decay, eps, strict_batch }
    }

    fn batch_stats(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var)
    }

    /// Folds a batch into the running statistics; in strict-batch mode the
    /// running values are simply replaced.
    pub fn update(&mut self, values: &[f64]) {
        debug_assert!(!values.is_empty());
        let (bm, bv) = Self::batch_stats(values);
        if self.strict_batch || !self.initialized {
            self.mean = bm;
            self.var = bv.max(self.eps);
            self.initialized = true;
        } else {
            self.mean = self.decay * self.mean + (1.0 - self.decay) * bm;
            self.var = (self.decay * self.var + (1.0 - self.decay) * bv).max(self.eps);
        }
    }

    /// (value - mean) / std with the std floored at `eps`.
    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.mean) / self.var.sqrt().max(self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_batch_is_pure_batch_statistics() {
        let mut norm = RunningNormalizer::new(0.95, 1e-8, false);
        norm.update(&[1.0, 2.0, 3.0]);
        let got: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|v| norm.normalize(*v)).collect();
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((got[0] + expect).abs() < 1e-12);
        assert!(got[1].abs() < 1e-12);
        assert!((got[2] - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_batch_normalizes_to_zero() {
        let mut norm = RunningNormalizer::new(0.95, 1e-8, false);
        norm.update(&[0.4; 5]);
        assert_eq!(norm.normalize(0.4), 0.0);
        assert!(norm.var >= 1e-8);
    }

    #[test]
    fn two_batches_match_independent_ema() {
        let mut norm = RunningNormalizer::new(0.95, 1e-8, false);
        let b1 = [1.0, 2.0, 3.0];
        let b2 = [-2.0, 0.0, 4.0, 6.0];
        norm.update(&b1);
        norm.update(&b2);
        let stats = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            (m, v)
        };
        let (m1, v1) = stats(&b1);
        let (m2, v2) = stats(&b2);
        let expect_mean = 0.95 * m1 + 0.05 * m2;
        let expect_var = 0.95 * v1.max(1e-8) + 0.05 * v2;
        assert!((norm.mean - expect_mean).abs() < 1e-12);
        assert!((norm.var - expect_var).abs() < 1e-12);
    }

    #[test]
    fn strict_batch_forgets_history() {
        let mut norm = RunningNormalizer::new(0.95, 1e-8, true);
        norm.update(&[10.0, 20.0]);
        norm.update(&[1.0, 2.0, 3.0]);
        assert!((norm.mean - 2.0).abs() < 1e-12);
        let normalized: f64 = [1.0, 2.0, 3.0].iter().map(|v| norm.normalize(*v)).sum();
        assert!(normalized.abs() < 1e-12);
    }
}
