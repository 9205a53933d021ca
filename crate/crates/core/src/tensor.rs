//! Minimal dense array types: real tensors, complex images, and multi-channel
//! rasters. Everything is row-major and double-precision by default; all
//! operations return new values rather than mutating their inputs.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense real-valued n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R: Real> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    /// Builds a tensor, checking that the extents multiply out to the data length.
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expected} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape,
            data: vec![R::zero(); len],
        }
    }

    /// Rank-1 tensor from a flat vector.
    pub fn from_vec(data: Vec<R>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() requires rank 2");
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() requires rank 2");
        self.shape[1]
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[R] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> R {
        self.data[i * self.cols() + j]
    }

    pub fn scaled(&self, alpha: R) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * alpha).collect(),
        }
    }

    /// `self + alpha * other`, entrywise.
    pub fn add_scaled(&self, alpha: R, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "add_scaled shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + alpha * b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Euclidean norm: the square root of the sum of the squares of the entries.
pub fn euclidean_norm<R: Real>(v: &Tensor<R>) -> R {
    sum_of_squares(v.data()).sqrt()
}

/// Frobenius norm of a rank-2 tensor; identical to the Euclidean norm of the
/// flattened entries.
pub fn frobenius_norm<R: Real>(a: &Tensor<R>) -> R {
    assert_eq!(a.rank(), 2, "frobenius_norm requires rank 2");
    sum_of_squares(a.data()).sqrt()
}

fn sum_of_squares<R: Real>(data: &[R]) -> R {
    data.iter().fold(R::zero(), |acc, &v| acc + v * v)
}

/// Standard matrix-vector product `A x` for a rank-2 `A` and rank-1 `x`.
pub fn matvec<R: Real>(a: &Tensor<R>, x: &Tensor<R>) -> Result<Tensor<R>> {
    if a.rank() != 2 || x.rank() != 1 {
        return Err(Error::Dimension(format!(
            "matvec expects ranks (2, 1), got ({}, {})",
            a.rank(),
            x.rank()
        )));
    }
    if a.cols() != x.len() {
        return Err(Error::Dimension(format!(
            "matvec: {}x{} matrix against length-{} vector",
            a.rows(),
            a.cols(),
            x.len()
        )));
    }
    let xs = x.data();
    let data = (0..a.rows()).map(|i| dot(a.row(i), xs)).collect();
    Ok(Tensor {
        shape: vec![a.rows()],
        data,
    })
}

/// Inner product of two equal-length slices.
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(R::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Dense 2-D array of complex values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage<R: Real> {
    height: usize,
    width: usize,
    data: Vec<Complex<R>>,
}

impl<R: Real> ComplexImage<R> {
    pub fn new(height: usize, width: usize, data: Vec<Complex<R>>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "complex image extents must be positive, got {height}x{width}"
            )));
        }
        if height * width != data.len() {
            return Err(Error::Dimension(format!(
                "{height}x{width} image needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex::new(R::zero(), R::zero()); height * width],
        }
    }

    /// Embeds a real rank-2 tensor as a complex image with zero imaginary part.
    pub fn from_real(plane: &Tensor<R>) -> Self {
        assert_eq!(plane.rank(), 2);
        Self {
            height: plane.rows(),
            width: plane.cols(),
            data: plane
                .data()
                .iter()
                .map(|&v| Complex::new(v, R::zero()))
                .collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex<R>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<R>] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<R> {
        self.data[i * self.width + j]
    }

    pub fn row(&self, i: usize) -> &[Complex<R>] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Real multi-channel raster: `channels` planes of `height x width` pixels,
/// stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<R: Real> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<R>,
}

impl<R: Real> Image<R> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<R>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image extents must be positive, got {channels}x{height}x{width}"
            )));
        }
        if channels * height * width != data.len() {
            return Err(Error::Dimension(format!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[R] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn scaled(&self, alpha: R) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v * alpha).collect(),
        }
    }
}
