//! Dense `h × w × c` tensors stored row-major in 64-bit floats.
//!
//! Images, noise maps, masks and blur kernels all use this one layout, with
//! the channel index varying fastest.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Shape triple `(height, width, channels)`.
pub type Shape = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    /// Builds a tensor, checking the length and finiteness invariants.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let (h, w, c) = shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::format("dims", format!("zero dimension in {shape:?}")));
        }
        if data.len() != h * w * c {
            return Err(Error::format(
                "payload",
                format!("expected {} values, got {}", h * w * c, data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }

    /// Zero tensor. Panics on a zero dimension.
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let (h, w, c) = shape;
        assert!(h > 0 && w > 0 && c > 0, "zero dimension in {shape:?}");
        Self {
            height: h,
            width: w,
            channels: c,
            data: vec![value; h * w * c],
        }
    }

    /// Builds a tensor by evaluating `f(row, col, channel)` at every position.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                for v in 0..shape.2 {
                    t[(i, j, v)] = f(i, j, v);
                }
            }
        }
        t
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    pub fn same_shape(&self, other: &Tensor3) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: self.shape(),
                actual: other.shape(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.same_shape(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// `self + scale · other`, in place.
    pub fn axpy(&mut self, scale: f64, other: &Tensor3) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Sum of squared differences.
    pub fn sq_dist(&self, other: &Tensor3) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Copies the `size × size` block of one channel with its top-left corner at
    /// `(row, col)` into a row-major vector.
    pub fn tile(&self, row: usize, col: usize, channel: usize, size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for i in row..row + size {
            for j in col..col + size {
                out.push(self[(i, j, channel)]);
            }
        }
        out
    }

    pub fn set_tile(&mut self, row: usize, col: usize, channel: usize, size: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), size * size);
        let mut it = values.iter();
        for i in row..row + size {
            for j in col..col + size {
                self[(i, j, channel)] = *it.next().unwrap();
            }
        }
    }

    /// Flattens the `size × size × c` window at `(row, col)` across all channels.
    pub fn window(&self, row: usize, col: usize, size: usize) -> Vec<f64> {
        let c = self.channels;
        let mut out = Vec::with_capacity(size * size * c);
        for i in row..row + size {
            let start = self.offset(i, col, 0);
            out.extend_from_slice(&self.data[start..start + size * c]);
        }
        out
    }

    /// Same shape, new payload. The caller guarantees the length.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Tensor3 {
        debug_assert_eq!(data.len(), self.data.len());
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j, v): (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(i, j, v)]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    #[inline]
    fn index_mut(&mut self, (i, j, v): (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(i, j, v);
        &mut self.data[o]
    }
}
