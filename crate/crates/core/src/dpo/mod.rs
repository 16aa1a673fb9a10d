//! Diffusion DPO objective: noise schedule, forward diffusion, the pairwise
//! loss with its analytic gradient, and export of training pairs.

mod export;
mod gradcheck;
mod loss;
mod schedule;

pub use export::{
    export_dpo_batches, read_dpo_batches, to_bytes, write_dpo_batches, DpoExport, EncoderSpec, ExportError, ExportHeader, ImageEncoder, ItemFailure,
    LumaFlatten, EXPORT_FORMAT, EXPORT_VERSION,
};
pub use gradcheck::{
    analytic_gradient, grad_check, random_batch, GradCheck, LinearPredictor, ParametricPredictor, DEFAULT_STEP,
};
pub use loss::{
    dpo_inner, dpo_loss_batch, dpo_loss_item, DpoBatchItem, DpoConfig, DpoPair, Draw, DrawKey, EpsPredictor, Sampler,
    SeededSampler,
};
pub use schedule::{forward_diffuse, make_linear_schedule, NoiseSchedule};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DpoError {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("timestep {t} out of range for T = {timesteps}")]
    Timestep { t: usize, timesteps: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("beta must be positive and finite, got {0}")]
    Beta(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("finite-difference step must be positive and finite, got {0}")]
    Step(f64),
    #[error("parameter vector has length {actual}, expected {expected}")]
    ParamCount { expected: usize, actual: usize },
}

/// Squared Euclidean distance; callers check lengths.
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_dim(what: &'static str, expected: usize, v: &[f64]) -> Result<(), DpoError> {
    if v.len() != expected {
        return Err(DpoError::DimMismatch { what, expected, actual: v.len() });
    }
    Ok(())
}
