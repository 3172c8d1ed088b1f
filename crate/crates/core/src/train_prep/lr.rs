use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warm-up, constant, slow linear decay, fast linear decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrScheduleSpec {
    pub peak_lr: f64,
    pub warmup_end: u64,
    pub constant_end: u64,
    pub slow_decay_end: u64,
    /// Rate reached at `slow_decay_end`.
    pub slow_decay_lr: f64,
    pub end: u64,
    pub final_lr: f64,
}

impl LrScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, c, s, e) = (self.warmup_end, self.constant_end, self.slow_decay_end, self.end);
        if !(0 < w && w <= c && c <= s && s <= e) {
            return Err(Error::Config(format!(
                "lr schedule needs 0 < warmup_end <= constant_end <= slow_decay_end <= end, got {w}, {c}, {s}, {e}"
            )));
        }
        let rates = [self.peak_lr, self.slow_decay_lr, self.final_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("lr schedule rates must be finite and >= 0".into()));
        }
        if self.slow_decay_lr > self.peak_lr || self.final_lr > self.slow_decay_lr {
            return Err(Error::Config(
                "lr schedule must not increase after warm-up (peak >= slow >= final)".into(),
            ));
        }
        if s == c && self.slow_decay_lr != self.peak_lr {
            return Err(Error::Config(
                "empty slow-decay phase requires slow_decay_lr == peak_lr".into(),
            ));
        }
        if e == s && self.final_lr != self.slow_decay_lr {
            return Err(Error::Config("empty fast-decay phase requires final_lr == slow_decay_lr".into()));
        }
        if s > c && e > s {
            let slow = (self.peak_lr - self.slow_decay_lr) / (s - c) as f64;
            let fast = (self.slow_decay_lr - self.final_lr) / (e - s) as f64;
            if fast < slow {
                return Err(Error::Config(format!(
                    "fast decay slope {fast:e} is gentler than slow decay slope {slow:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: LrScheduleSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn lerp(from: f64, to: f64, start: u64, end: u64, step: u64) -> f64 {
    if end == start {
        return to;
    }
    from + (to - from) * ((step - start) as f64 / (end - start) as f64)
}

/// Learning rate at `step`; `step > end` is an error.
pub fn lr_at(step: u64, spec: &LrScheduleSpec) -> Result<f64> {
    if step > spec.end {
        return Err(Error::Invalid(format!("step {step} is past schedule end {}", spec.end)));
    }
    let lr = if step <= spec.warmup_end {
        lerp(0.0, spec.peak_lr, 0, spec.warmup_end, step)
    } else if step <= spec.constant_end {
        spec.peak_lr
    } else if step <= spec.slow_decay_end {
        lerp(spec.peak_lr, spec.slow_decay_lr, spec.constant_end, spec.slow_decay_end, step)
    } else {
        lerp(spec.slow_decay_lr, spec.final_lr, spec.slow_decay_end, spec.end, step)
    };
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> LrScheduleSpec {
        LrScheduleSpec {
            peak_lr: 1e-3,
            warmup_end: 100,
            constant_end: 200,
            slow_decay_end: 300,
            slow_decay_lr: 5e-4,
            end: 350,
            final_lr: 0.0,
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = spec();
        s.validate().unwrap();
        assert_eq!(lr_at(0, &s).unwrap(), 0.0);
        assert_eq!(lr_at(100, &s).unwrap(), 1e-3);
        assert_eq!(lr_at(150, &s).unwrap(), 1e-3);
        assert!((lr_at(250, &s).unwrap() - 7.5e-4).abs() < 1e-18);
        assert_eq!(lr_at(300, &s).unwrap(), 5e-4);
        assert_eq!(lr_at(350, &s).unwrap(), 0.0);
        assert!(lr_at(351, &s).is_err());
    }

    #[test]
    fn validation() {
        assert!(LrScheduleSpec { warmup_end: 0, ..spec() }.validate().is_err());
        assert!(LrScheduleSpec { constant_end: 50, ..spec() }.validate().is_err());
        assert!(LrScheduleSpec { final_lr: 6e-4, ..spec() }.validate().is_err());
        // fast phase gentler than slow phase
        assert!(LrScheduleSpec { end: 1000, ..spec() }.validate().is_err());
    }

    #[test]
    fn degenerate_phases() {
        let s = LrScheduleSpec { constant_end: 100, slow_decay_end: 100, ..spec() };
        assert!(s.validate().is_err());
        let s = LrScheduleSpec { slow_decay_lr: 1e-3, ..s };
        s.validate().unwrap();
        assert_eq!(lr_at(100, &s).unwrap(), 1e-3);
        assert_eq!(lr_at(350, &s).unwrap(), 0.0);
    }
}
