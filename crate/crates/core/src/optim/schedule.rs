use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cosine decay to zero after a linear warmup from zero.
///
/// `s(t) = t / T_w` for `t < T_w`, then
/// `s(t) = (1 + cos(pi (t - T_w) / (T - T_w))) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl Schedule {
    /// Warmup covers `ceil(total_steps * warmup_fraction)` steps.
    pub fn new(total_steps: usize, warmup_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction must lie in [0, 1), got {warmup_fraction}"
            )));
        }
        // the slack absorbs products like 3000 * (1/3) landing just above an integer
        let warmup_steps = (total_steps as f64 * warmup_fraction - 1e-9).ceil().max(0.0) as usize;
        Ok(Schedule {
            total_steps,
            warmup_steps: warmup_steps.min(total_steps.saturating_sub(1)),
        })
    }

    /// The default: warmup over the first third of training.
    pub fn with_third_warmup(total_steps: usize) -> Self {
        Schedule::new(total_steps, 1.0 / 3.0).expect("valid fraction")
    }

    pub fn multiplier<T: Scalar>(&self, t: usize) -> Result<T> {
        let (total, warm) = (self.total_steps, self.warmup_steps);
        if t > total {
            return Err(Error::invalid(format!("step {t} beyond schedule end {total}")));
        }
        if total == 0 {
            return Ok(T::zero());
        }
        let f = |n: usize| T::from_usize(n).expect("step count");
        if t < warm {
            return Ok(f(t) / f(warm));
        }
        let progress = f(t - warm) / f(total - warm);
        Ok(T::lit(0.5) * (T::one() + (T::PI() * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_points() {
        let s = Schedule::with_third_warmup(38400);
        assert_eq!(s.warmup_steps, 12800);
        assert_eq!(s.multiplier::<f64>(0).unwrap(), 0.0);
        assert_eq!(s.multiplier::<f64>(12800).unwrap(), 1.0);
        assert!((s.multiplier::<f64>(25600).unwrap() - 0.5).abs() < 1e-12);
        assert!(s.multiplier::<f64>(38400).unwrap().abs() < 1e-15);
        assert!(s.multiplier::<f64>(38401).is_err());
    }

    #[test]
    fn warmup_rounds_up() {
        assert_eq!(Schedule::with_third_warmup(10).warmup_steps, 4);
        assert_eq!(Schedule::with_third_warmup(3000).warmup_steps, 1000);
    }

    #[test]
    fn monotone_pieces() {
        let s = Schedule::with_third_warmup(300);
        let v: Vec<f64> = (0..=300).map(|t| s.multiplier(t).unwrap()).collect();
        assert!(v[..=100].windows(2).all(|w| w[0] <= w[1]));
        assert!(v[100..].windows(2).all(|w| w[0] >= w[1]));
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn empty_schedule() {
        let s = Schedule::with_third_warmup(0);
        assert_eq!(s.multiplier::<f64>(0).unwrap(), 0.0);
    }
}
