//! Minimal dense-array engine with tape-based reverse-mode automatic
//! differentiation, an AdamW optimizer and learning-rate schedules.
//!
//! Everything is generic over [`Real`] so the same graph can run in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod array;
mod error;
pub mod gradcheck;
mod optim;
mod params;
mod real;
mod schedule;
mod tape;

pub use array::NdArray;
pub use error::{NumError, Result};
pub use optim::{adamw_step, clip_grad_norm, AdamWConfig, AdamWState};
pub use params::{ParamId, ParamStore};
pub use real::{Precision, Real};
pub use schedule::{LrSchedule, ScheduleKind};
pub use tape::{CrossEntropy, Tape, Var};
