use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape5;

/// Dense 5-D array of shape `(N, C, T, H, W)`, row-major with W fastest.
///
/// The buffer is behind an `Arc`, so cloning a tensor is cheap and values
/// are immutable once produced; mutation during construction goes through
/// [`Tensor5::data_mut`], which copies only when the buffer is shared.
#[derive(Clone, Debug)]
pub struct Tensor5<T> {
    shape: Shape5,
    data: Arc<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(shape: Shape5) -> Self {
        Tensor5 {
            shape,
            data: Arc::new(vec![T::zero(); shape.len()]),
            requires_grad: false,
        }
    }

    pub fn filled(shape: Shape5, value: T) -> Self {
        Tensor5 {
            shape,
            data: Arc::new(vec![value; shape.len()]),
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: Shape5, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::config(format!(
                "data length {} does not match shape {} = {} elements",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor5 { shape, data: Arc::new(data), requires_grad: false })
    }

    /// A `(1,1,1,1,1)` tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Tensor5::filled(Shape5::scalar(), value)
    }

    /// Uniform values in `[lo, hi)`, drawn as f64 so the stream of random
    /// draws is identical for every element type.
    pub fn uniform(shape: Shape5, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.len())
            .map(|_| T::from_f64(lo + rng.gen::<f64>() * (hi - lo)))
            .collect();
        Tensor5 { shape, data: Arc::new(data), requires_grad: false }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the buffer; copies if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::<Vec<T>>::make_mut(&mut self.data)
    }

    pub fn is_scalar(&self) -> bool {
        self.shape == Shape5::scalar()
    }

    pub fn scalar_value(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, t, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, t: usize, h: usize, w: usize, v: T) {
        let i = self.shape.index(n, c, t, h, w);
        self.data_mut()[i] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor5 { shape: self.shape, data: Arc::new(data), requires_grad: false }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::config(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor5 { shape: self.shape, data: Arc::new(data), requires_grad: false })
    }

    /// `self += other`, in place when the buffer is unshared.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::config(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        let dst = self.data_mut();
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d = *d + s;
        }
        Ok(())
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Exact elementwise (and shape) equality; used by determinism tests.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.as_f32()).collect()
    }

    pub fn from_f32_slice(shape: Shape5, data: &[f32]) -> Result<Self> {
        Tensor5::from_vec(shape, data.iter().map(|&v| T::from_f32(v)).collect())
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor5::<f64>::from_vec(Shape5::new(1, 2, 1, 1, 1), vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn from_vec_rejects_zero_dim() {
        let err = Tensor5::<f64>::from_vec(Shape5::new(1, 0, 1, 1, 1), vec![]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn indexing_is_row_major_w_fastest() {
        let s = Shape5::new(1, 1, 2, 2, 3);
        let t = Tensor5::from_vec(s, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(0, 0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 0, 0, 1, 0), 3.0);
        assert_eq!(t.at(0, 0, 1, 0, 0), 6.0);
    }

    #[test]
    fn clone_shares_until_mutated() {
        let mut a = Tensor5::<f64>::zeros(Shape5::new(1, 1, 1, 1, 4));
        let b = a.clone();
        a.set(0, 0, 0, 0, 0, 5.0);
        assert_eq!(b.at(0, 0, 0, 0, 0), 0.0);
        assert_eq!(a.at(0, 0, 0, 0, 0), 5.0);
    }
}
