//! Flat-vector algebra behind every projection in the crate.
//!
//! A [`ParamVector`] holds model parameters or (pseudo-)gradients as a flat
//! `f64` slice. All binary operations check dimensions and report a
//! [`VecError`] rather than panicking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VecError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("operand has zero norm")]
    ZeroNorm,
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("target length must be non-negative and finite, got {0}")]
    InvalidLength(f64),
}

/// Flat vector of model parameters or gradient components.
///
/// Entries are always finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VecError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VecError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamVector) -> Result<(), VecError> {
        check_dims(self, other)?;
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s += alpha * o;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self - other`
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector, VecError> {
        check_dims(self, other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + other`
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector, VecError> {
        check_dims(self, other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = VecError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<(), VecError> {
    if a.dim() != b.dim() {
        return Err(VecError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64, VecError> {
    check_dims(a, b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

pub fn norm(a: &ParamVector) -> f64 {
    a.0.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &ParamVector, b: &ParamVector) -> Result<f64, VecError> {
    let d = dot(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(VecError::ZeroNorm);
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Two gradients conflict iff their dot product is strictly negative.
pub fn conflicts(a: &ParamVector, b: &ParamVector) -> Result<bool, VecError> {
    Ok(dot(a, b)? < 0.0)
}

/// Removes from `v` its component along `target`:
/// `v - (v·target / ‖target‖²) target`.
pub fn project_to_normal_plane(
    v: &ParamVector,
    target: &ParamVector,
) -> Result<ParamVector, VecError> {
    let d = dot(v, target)?;
    let tt = dot(target, target)?;
    if tt == 0.0 {
        return Err(VecError::ZeroNorm);
    }
    let coef = d / tt;
    Ok(ParamVector(
        v.0.iter()
            .zip(&target.0)
            .map(|(x, t)| x - coef * t)
            .collect(),
    ))
}

/// Rescales `v` to have Euclidean length `length`.
///
/// A zero `length` always yields the zero vector. A zero `v` with positive
/// `length` has no direction to keep and is an error.
pub fn rescale_to(v: &ParamVector, length: f64) -> Result<ParamVector, VecError> {
    if !(length >= 0.0 && length.is_finite()) {
        return Err(VecError::InvalidLength(length));
    }
    if length == 0.0 {
        return Ok(ParamVector::zeros(v.dim()));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(VecError::ZeroNorm);
    }
    Ok(v.scaled(length / n))
}
