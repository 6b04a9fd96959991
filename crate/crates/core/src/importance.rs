//! Per-feature importance deltas fed into the sketch.

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ImportanceError {
    #[error("gradient component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
}

/// How a training step turns a feature occurrence into a score delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImportanceMode {
    /// L2 norm of the feature's embedding gradient.
    #[default]
    GradientNorm,
    /// One unit per occurrence.
    Frequency,
}

/// Euclidean norm of an embedding gradient.
pub fn score_from_gradient(grad: &[f64]) -> Result<f64, ImportanceError> {
    let mut sum = 0.0;
    for (index, &value) in grad.iter().enumerate() {
        if !value.is_finite() {
            return Err(ImportanceError::NonFinite { index, value });
        }
        sum += value * value;
    }
    Ok(sum.sqrt())
}

pub fn score_from_frequency(count_delta: u64) -> f64 {
    count_delta as f64
}
