//! Behavioral evaluations: perplexity, the verbatim-repeat localization task,
//! belief-task scoring, and the κ sweep protocol.

mod localization;
mod ppl;
mod sweep;
mod tom;

pub use localization::{
    default_lengths, localization_eval, similarity, LocalizationCase, LocalizationCurve,
};
pub use ppl::perplexity;
pub use sweep::{kappa_sweep, KappaGrid, SweepEvalSpec, SweepPoint, SweepResult};
pub use tom::{tom_eval, BucketScore, ToMScores};
