//! Tree-search path steering for diffusion and masked discrete flow samplers.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical core:
//! noise schedules, the continuous DDPM and masked-flow samplers with exact
//! desk-scale denoisers, objective functions, the branch-out/value design
//! space and the active-set tree search. IO, configuration and the CLI live
//! in the companion `steer` crate.
//!
//! All randomness flows through explicit [`rng::StreamRng`] streams derived
//! from a master seed, so every result is replayable and independent of the
//! order in which candidates are evaluated.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod continuous;
pub mod discrete;
mod error;
pub mod guidance;
pub mod objective;
pub mod rng;
pub mod schedule;
pub mod search;
pub mod task;

pub use error::{Error, Result};
pub use schedule::{NoiseSchedule, ScheduleKind, StepCoeffs};
