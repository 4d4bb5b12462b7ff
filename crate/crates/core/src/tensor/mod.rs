//! Dense row-major tensors, the kernels that operate on them, and the
//! gradient tape used for reverse-mode differentiation.
//!
//! Training runs in `f32`. Every kernel is generic over [`Element`] so the
//! same code path can be instantiated in `f64` for finite-difference
//! gradient checks.

pub mod gradcheck;
pub mod kernels;
mod rng;
mod tape;

use std::fmt;

pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Scalar type a [`Tensor`] can hold.
pub trait Element:
    num_traits::Float
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + std::ops::AddAssign
    + std::ops::MulAssign
    + 'static
{
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Initial contents for [`Tensor::create`].
#[derive(Debug)]
pub enum Fill<'a> {
    Zeros,
    Ones,
    Constant(f64),
    Normal {
        mean: f64,
        std: f64,
        rng: &'a mut Rng,
    },
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("shape must have at least one dimension"));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn create(shape: &[usize], fill: Fill<'_>) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match fill {
            Fill::Zeros => vec![T::zero(); len],
            Fill::Ones => vec![T::one(); len],
            Fill::Constant(c) => vec![T::from_f64(c); len],
            Fill::Normal { mean, std, rng } => (0..len)
                .map(|_| T::from_f64(mean + std * rng.next_normal()))
                .collect(),
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Zeros)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Ones)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::create(shape, Fill::Constant(value))
    }

    pub fn randn(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Result<Self> {
        Self::create(shape, Fill::Normal { mean, std, rng })
    }

    /// Uniform samples in `[low, high)`.
    pub fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut Rng) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = (0..len)
            .map(|_| T::from_f64(low + (high - low) * rng.next_f64()))
            .collect();
        Self::from_vec(shape, data)
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// In-place access. Only optimizers and layer state updates use this,
    /// and only between forward passes.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            requires_grad: self.requires_grad,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "item() needs a single element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Sequential sum over the flat index.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &x in &self.data {
            acc += x;
        }
        acc
    }

    /// Errors if any element is NaN or infinite.
    pub fn validate_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} is {}",
                self.data[i]
            ))),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "compare {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            requires_grad: false,
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Tensor::from_parts(self.shape.clone(), vec![T::zero(); self.numel()])
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, x) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        if self.numel() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_fills() {
        let z = Tensor::<f32>::create(&[2, 2], Fill::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::<f32>::create(&[3], Fill::Constant(5.0)).unwrap();
        assert_eq!(c.data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn normal_fill_is_seeded() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let x = Tensor::<f32>::randn(&[4], 0.0, 1.0, &mut a).unwrap();
        let y = Tensor::<f32>::randn(&[4], 0.0, 1.0, &mut b).unwrap();
        assert_eq!(x, y);
        let mut c = Rng::new(8);
        let z = Tensor::<f32>::randn(&[4], 0.0, 1.0, &mut c).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(Tensor::<f32>::zeros(&[]).is_err());
        assert!(Tensor::<f32>::zeros(&[3, 0]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn reshape_keeps_count() {
        let t = Tensor::<f32>::from_vec(&[2, 3], (0..6).map(|x| x as f32).collect()).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert_eq!(t.shape(), &[2, 3]);
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn validate_finite_flags_nan() {
        let t = Tensor::<f32>::from_vec(&[3], vec![1.0, f32::NAN, 2.0]).unwrap();
        assert!(matches!(t.validate_finite("x"), Err(Error::NonFinite(_))));
    }
}
