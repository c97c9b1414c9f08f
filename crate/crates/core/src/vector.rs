//! Dense real vectors: embeddings, dot products, cosine similarity and ℓ2 normalization.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A fixed-length appearance vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Embedding<T>(pub Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> T {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// ℓ2-normalized copy; a zero vector stays zero.
    pub fn normalized(&self) -> Self {
        l2_normalize(&self.0).vector
    }

    pub fn cast<U: Scalar>(&self) -> Embedding<U> {
        Embedding(self.0.iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

impl<T> From<Vec<T>> for Embedding<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

impl<T> Deref for Embedding<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for Embedding<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

/// Output of [`l2_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub vector: Embedding<T>,
    /// Set when the input norm fell below the zero-norm guard.
    pub degenerate: bool,
}

#[inline]
pub fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

#[inline]
pub fn norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// `u·v / (‖u‖‖v‖)`, or 0 when either norm is below the guard.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu < T::norm_eps() || nv < T::norm_eps() {
        return Ok(T::zero());
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-T::one()).min(T::one()))
}

pub fn l2_normalize<T: Scalar>(v: &[T]) -> Normalized<T> {
    let n = norm(v);
    if n < T::norm_eps() {
        return Normalized {
            vector: Embedding(vec![T::zero(); v.len()]),
            degenerate: true,
        };
    }
    Normalized {
        vector: Embedding(v.iter().map(|&x| x / n).collect()),
        degenerate: false,
    }
}

/// Vector-Jacobian product of `x ↦ x/‖x‖`: maps `dL/dy` to `dL/dx`.
/// Returns zeros for inputs under the zero-norm guard.
pub fn l2_normalize_backward<T: Scalar>(x: &[T], grad_out: &[T]) -> Vec<T> {
    let n = norm(x);
    if n < T::norm_eps() {
        return vec![T::zero(); x.len()];
    }
    let y_dot_g = dot(x, grad_out) / n;
    x.iter()
        .zip(grad_out)
        .map(|(&xi, &gi)| (gi - xi / n * y_dot_g) / n)
        .collect()
}
