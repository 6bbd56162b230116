use std::f64::consts::PI;

use crate::error::{NumError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    WarmupCosine,
    Constant,
}

/// Learning rate as a function of the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_ratio: f64,
}

impl LrSchedule {
    pub fn warmup_cosine(peak_lr: f64, total_steps: usize, warmup_ratio: f64) -> Self {
        Self {
            kind: ScheduleKind::WarmupCosine,
            peak_lr,
            total_steps,
            warmup_ratio,
        }
    }

    pub fn constant(peak_lr: f64, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            peak_lr,
            total_steps,
            warmup_ratio: 0.0,
        }
    }

    /// `ceil(warmup_ratio * total_steps)`.
    pub fn warmup_steps(&self) -> usize {
        match self.kind {
            ScheduleKind::Constant => 0,
            ScheduleKind::WarmupCosine => {
                // guard against 0.1 * 100 = 10.000000000000002
                let raw = self.warmup_ratio * self.total_steps as f64;
                let rounded = raw.round();
                if (raw - rounded).abs() < 1e-9 {
                    rounded as usize
                } else {
                    raw.ceil() as usize
                }
            }
        }
    }

    pub fn lr_at_step(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(NumError::Contract(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(NumError::Contract(format!(
                "warmup ratio {} not in [0, 1]",
                self.warmup_ratio
            )));
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.peak_lr,
            ScheduleKind::WarmupCosine => {
                let warm = self.warmup_steps();
                if step < warm {
                    self.peak_lr * step as f64 / warm as f64
                } else if warm >= self.total_steps {
                    self.peak_lr
                } else {
                    let progress = (step - warm) as f64 / (self.total_steps - warm) as f64;
                    self.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
                }
            }
        })
    }
}
