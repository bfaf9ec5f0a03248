//! Diffusion recommender with classifier-free guidance.
//!
//! Users are multi-hot rows over the item catalogue. Training noises a user's
//! row with the linear-β forward process and teaches a one-hidden-layer network
//! to predict that noise, conditioned on the clean row (the guidance) which is
//! dropped to an all-zero null token for a fraction `p_uncond` of rows. At
//! inference the reverse chain starts from the noised history and each step
//! removes the predicted noise, optionally mixing conditional and
//! unconditional predictions. The final state scores every item.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the
//! command-line driver and dataset ingestion live in the `cfrec` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod math;
pub mod schedule;
pub mod trainer;

pub use data::{InteractionSet, Mode, MultiHotMatrix, RawReview, SplitRatios, SplitTag};
pub use denoiser::{DenoiserParams, NoisePredictor};
pub use diffusion::{DiffusionConfig, SampleStart};
pub use error::{Error, Result};
pub use eval::{MetricsReport, RankedList};
pub use math::{Matrix, Real, Rng};
pub use schedule::NoiseSchedule;
pub use trainer::{FitData, FitOutcome, TrainConfig};
