use serde::{Deserialize, Serialize};

use crate::datasets::round_half_up;
use crate::error::{PinsError, Result};

/// Cubic sparsity schedule: full density during warmup, cubic decay toward
/// `final_density`, then constant for the cool-down phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityScheduler {
    pub final_density: f64,
    pub warmup_steps: usize,
    pub cooldown_steps: usize,
    pub total_steps: usize,
    pub total_params: usize,
}

impl SparsityScheduler {
    pub const INITIAL_DENSITY: f64 = 1.0;

    pub fn new(
        final_density: f64,
        warmup_steps: usize,
        cooldown_steps: usize,
        total_steps: usize,
        total_params: usize,
    ) -> Result<Self> {
        if !(final_density > 0.0 && final_density <= Self::INITIAL_DENSITY) {
            return Err(PinsError::Config(format!(
                "final density {final_density} must be in (0, 1]"
            )));
        }
        if warmup_steps + cooldown_steps >= total_steps {
            return Err(PinsError::Config(format!(
                "warmup {warmup_steps} + cool-down {cooldown_steps} must be < total steps {total_steps}"
            )));
        }
        Ok(SparsityScheduler {
            final_density,
            warmup_steps,
            cooldown_steps,
            total_steps,
            total_params,
        })
    }

    pub fn remaining_fraction(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return Err(PinsError::rejected(
                "remaining_count",
                format!("step {t} outside [0, {}]", self.total_steps),
            ));
        }
        let (ri, rf) = (Self::INITIAL_DENSITY, self.final_density);
        let decay_end = self.total_steps - self.cooldown_steps;
        Ok(if t < self.warmup_steps {
            ri
        } else if t < decay_end {
            let frac = (decay_end - t) as f64 / (decay_end - self.warmup_steps) as f64;
            rf + (ri - rf) * frac.powi(3)
        } else {
            rf
        })
    }

    /// Number of prunable coordinates kept at step `t`.
    pub fn remaining_count(&self, t: usize) -> Result<usize> {
        let f = self.remaining_fraction(t)?;
        Ok(round_half_up(f * self.total_params as f64).min(self.total_params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_examples() {
        let s = SparsityScheduler::new(0.2, 10, 10, 100, 1000).unwrap();
        assert_eq!(s.remaining_fraction(5).unwrap(), 1.0);
        assert!((s.remaining_fraction(10).unwrap() - 1.0).abs() < 1e-15);
        assert!((s.remaining_fraction(45).unwrap() - 0.3423828125).abs() < 1e-12);
        assert_eq!(s.remaining_fraction(90).unwrap(), 0.2);
        assert_eq!(s.remaining_fraction(100).unwrap(), 0.2);
        assert_eq!(s.remaining_count(95).unwrap(), 200);
        assert_eq!(s.remaining_count(0).unwrap(), 1000);
        assert!(s.remaining_count(101).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(SparsityScheduler::new(0.0, 1, 1, 10, 5).is_err());
        assert!(SparsityScheduler::new(1.5, 1, 1, 10, 5).is_err());
        assert!(SparsityScheduler::new(0.5, 5, 5, 10, 5).is_err());
    }
}
