//! Dense vector helpers shared by the index, the scorers and the metrics.
//!
//! All reductions accumulate in `f64` regardless of the storage type, so a
//! dot product of two stored `f32` vectors is reproducible bit for bit.

use alloc::vec::Vec;

/// Dot product accumulated in `f64`.
///
/// Panics in debug builds if the lengths differ; callers validate dimensions.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (&x, &y)| acc + f64::from(x) * f64::from(y))
}

pub fn l2_norm(v: &[f32]) -> f64 {
    libm::sqrt(v.iter().map(|&x| f64::from(x) * f64::from(x)).sum())
}

/// Why a vector could not be normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeError {
    ZeroNorm,
    NonFinite,
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>, NormalizeError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(NormalizeError::NonFinite);
    }
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(NormalizeError::ZeroNorm);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Cosine similarity of two arbitrary non-zero vectors, computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, NormalizeError> {
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(NormalizeError::NonFinite);
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(NormalizeError::ZeroNorm);
    }
    Ok(dot(a, b) / (na * nb))
}
