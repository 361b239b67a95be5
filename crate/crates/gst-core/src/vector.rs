//! Dense parameter vectors.

use crate::error::{Error, Result};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// A model parameter point: a dense real vector of fixed dimension.
///
/// The dimension is fixed for the lifetime of an experiment and all entries
/// are finite; oracle boundaries enforce the latter via [`ParamVector::validated`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Array1<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(Array1::from_vec(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Array1::zeros(dim))
    }

    pub fn from_array(values: Array1<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.dot(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Returns the vector unchanged if every entry is finite, otherwise a
    /// numeric error naming the offending context.
    pub fn validated(self, context: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimMismatch { expected, got: self.dim() })
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    /// In-place `self += factor * other`; the SGD inner step.
    pub fn axpy(&mut self, factor: f64, other: &Self) {
        self.0.scaled_add(factor, &other.0);
    }

    /// Little-endian byte image of the entries, used for trace fingerprints.
    pub fn le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.dim() * 8);
        for x in self.0.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }
}

/// Mean of a non-empty set of vectors of equal dimension.
pub fn mean(vectors: &[ParamVector]) -> Result<ParamVector> {
    let first = vectors.first().ok_or(Error::EmptyTasks)?;
    let mut acc = Array1::<f64>::zeros(first.dim());
    for v in vectors {
        v.check_dim(first.dim())?;
        acc += v.as_array();
    }
    Ok(ParamVector(acc / vectors.len() as f64))
}

impl Add<&ParamVector> for &ParamVector {
    type Output = ParamVector;
    fn add(self, rhs: &ParamVector) -> ParamVector {
        ParamVector(&self.0 + &rhs.0)
    }
}

impl Sub<&ParamVector> for &ParamVector {
    type Output = ParamVector;
    fn sub(self, rhs: &ParamVector) -> ParamVector {
        ParamVector(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &ParamVector {
    type Output = ParamVector;
    fn mul(self, rhs: f64) -> ParamVector {
        self.scaled(rhs)
    }
}

impl Neg for &ParamVector {
    type Output = ParamVector;
    fn neg(self) -> ParamVector {
        ParamVector(-&self.0)
    }
}

impl AddAssign<&ParamVector> for ParamVector {
    fn add_assign(&mut self, rhs: &ParamVector) {
        self.0 += &rhs.0;
    }
}

impl SubAssign<&ParamVector> for ParamVector {
    fn sub_assign(&mut self, rhs: &ParamVector) {
        self.0 -= &rhs.0;
    }
}
