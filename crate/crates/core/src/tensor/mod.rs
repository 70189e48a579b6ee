//! Dense rank-4 tensors in NCHW layout and the differentiable ops built on
//! them. Everything runs on the CPU; there is no autograd graph. Each op has
//! an explicit forward function here and a matching backward function in
//! [`backward`] that consumes whatever the forward pass cached.

mod backward;
mod conv;
pub mod gradcheck;
mod ops;
mod scalar;

pub use backward::*;
pub use conv::{conv2d, conv2d_backward, conv2d_naive, ConvGrads};
pub use ops::*;
pub use scalar::Scalar;

use crate::error::{Error, Result};

/// Shape as `[n, c, h, w]`.
pub type Shape = [usize; 4];

/// Dense rank-4 tensor, NCHW, row-major (`w` fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::shape(
                "from_vec",
                format!("shape {shape:?} needs {want} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Single-sample single-channel tensor from a flat `h*w` buffer.
    pub fn from_plane(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        Tensor::from_vec([1, 1, h, w], data)
    }

    #[inline(always)]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline(always)]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline(always)]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline(always)]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline(always)]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline(always)]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline(always)]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline(always)]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline(always)]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.idx(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `h*w` slice of one channel of one sample.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise conversion between scalar types (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64s())).collect(),
        }
    }

    /// Errors if any element is NaN or infinite. `op` names the producer.
    pub fn check_finite(&self, op: &'static str, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op,
                    context: if context.is_empty() {
                        format!("element {i} of shape {:?}", self.shape)
                    } else {
                        format!("{context}, element {i} of shape {:?}", self.shape)
                    },
                });
            }
        }
        Ok(())
    }

    /// Sum of all elements, accumulated in f64 in index order.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &v| a + v.to_f64s())
    }

    /// Extract one sample as an `[1, c, h, w]` tensor.
    pub fn sample(&self, n: usize) -> Tensor<T> {
        let chw = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * chw..(n + 1) * chw].to_vec(),
        }
    }

    /// Stack `[1, c, h, w]` tensors along the batch axis.
    pub fn stack(samples: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::arg("stack", "empty sample list"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            if s.shape != [1, c, h, w] {
                return Err(Error::shape(
                    "stack",
                    format!("expected [1, {c}, {h}, {w}], got {:?}", s.shape),
                ));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor {
            shape: [samples.len(), c, h, w],
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_nchw() {
        let t = Tensor::<f32>::from_vec([2, 3, 4, 5], (0..120).map(|i| i as f32).collect()).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 0, 4), 4.0);
        assert_eq!(t.at(0, 0, 1, 0), 5.0);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.at(1, 0, 0, 0), 60.0);
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn plane_slices_one_channel() {
        let t = Tensor::<f32>::from_vec([1, 2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        assert_eq!(t.plane(0, 0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.plane(0, 1), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn check_finite_reports_nan() {
        let mut t = Tensor::<f32>::zeros([1, 1, 2, 2]);
        t.data_mut()[3] = f32::NAN;
        let err = t.check_finite("relu", "unit test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("relu"), "{msg}");
        assert!(msg.contains("element 3"), "{msg}");
    }

    #[test]
    fn cast_roundtrip_preserves_f32() {
        let t = Tensor::<f32>::from_vec([1, 1, 1, 3], vec![0.5, -1.25, 3.75]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast::<f32>();
        assert_eq!(t, back);
    }

    #[test]
    fn stack_and_sample_are_inverse() {
        let a = Tensor::<f32>::filled([1, 2, 2, 2], 1.0);
        let b = Tensor::<f32>::filled([1, 2, 2, 2], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), [2, 2, 2, 2]);
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
    }
}
