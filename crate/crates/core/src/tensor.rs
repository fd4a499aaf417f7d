//! Flat pixel buffers with shape metadata.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Logical layout of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    /// A flat vector of `n` values.
    Vector([usize; 1]),
    /// A row-major `height x width` image.
    Grid([usize; 2]),
}

impl Shape {
    pub fn vector(n: usize) -> Self {
        Shape::Vector([n])
    }

    pub fn grid(height: usize, width: usize) -> Self {
        Shape::Grid([height, width])
    }

    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector([n]) => n,
            Shape::Grid([h, w]) => h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(height, width)`, treating a vector as a single row.
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Shape::Vector([n]) => (1, n),
            Shape::Grid([h, w]) => (h, w),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector([n]) => write!(f, "({n},)"),
            Shape::Grid([h, w]) => write!(f, "({h}, {w})"),
        }
    }
}

/// A flat sequence of pixel values together with its shape.
///
/// Carries clean images `x`, measurements `y` and the recorrupted pair `(y1, y2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ImageTensor<T: Scalar> {
    data: Vec<T>,
    shape: Shape,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(data: Vec<T>, shape: Shape) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for shape {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { data, shape })
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        let shape = Shape::vector(data.len());
        Self { data, shape }
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(vec![v])
    }

    pub fn filled(shape: Shape, v: T) -> Self {
        Self {
            data: vec![v; shape.len()],
            shape,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn from_f64(values: &[f64], shape: Shape) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::lit(v)).collect(), shape)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Converts to a different scalar type.
    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            shape: self.shape,
        }
    }

    /// Same data with a new shape of equal length.
    pub fn reshaped(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(shape, self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        let (_, w) = self.shape.dims();
        self.data[row * w + col]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            shape: self.shape,
        }
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            shape: self.shape,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    /// `||self - other||^2`.
    pub fn dist_sq(&self, other: &Self) -> Result<T> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| {
                let d = a - b;
                acc + d * d
            }))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> std::ops::Index<usize> for ImageTensor<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T: Scalar> std::ops::IndexMut<usize> for ImageTensor<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}
