//! Dense f32 tensors and the handful of differentiable operations the two
//! generative models are built from.
//!
//! There is no graph or tape: every operation comes as a forward function
//! and an explicit backward function, and the models chain them by hand.

mod adam;
mod conv;
pub mod io;
mod ops;

use rand::Rng;

use crate::error::{Error, Result};

pub use adam::Adam;
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvGrads};
pub use ops::{mse, relu, relu_backward, softmax_cross_entropy, upsample_nearest, upsample_nearest_backward, Loss};

/// Row-major tensor of rank at most 4. Images use batch×channels×height×width.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

pub const MAX_RANK: usize = 4;

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::invalid(format!("tensor rank {} outside 1..=4", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("tensor dims {dims:?} contain a zero")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape("data length", expected, data.len()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f32) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    /// I.i.d. uniform entries in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(dims: &[usize], bound: f32, rng: &mut R) -> Self {
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
            .collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Dims of a rank-4 tensor as `(batch, channels, height, width)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("rank", 4, self.dims.len())),
        }
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Tensor::new(dims.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_dims(&self, other: &Tensor) -> Result<()> {
        if self.dims.len() != other.dims.len() {
            return Err(Error::shape("rank", self.dims.len(), other.dims.len()));
        }
        const AXES: [&str; 4] = ["axis 0", "axis 1", "axis 2", "axis 3"];
        for (i, (&a, &b)) in self.dims.iter().zip(&other.dims).enumerate() {
            if a != b {
                return Err(Error::shape(AXES[i], a, b));
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.check_same_dims(other)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Copies out image `index` of a rank-4 batch as a batch of one.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if index >= n {
            return Err(Error::invalid(format!("batch index {index} out of range for batch {n}")));
        }
        let stride = c * h * w;
        Ok(Tensor {
            dims: vec![1, c, h, w],
            data: self.data[index * stride..(index + 1) * stride].to_vec(),
        })
    }

    /// Stacks rank-4 tensors with identical per-item dims along the batch axis.
    pub fn concat_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty batch"))?;
        let (_, c, h, w) = first.dims4()?;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for item in items {
            let (bn, bc, bh, bw) = item.dims4()?;
            if (bc, bh, bw) != (c, h, w) {
                let (axis, e, a) = if bc != c {
                    ("channels", c, bc)
                } else if bh != h {
                    ("height", h, bh)
                } else {
                    ("width", w, bw)
                };
                return Err(Error::shape(axis, e, a));
            }
            n += bn;
            data.extend_from_slice(&item.data);
        }
        Ok(Tensor {
            dims: vec![n, c, h, w],
            data,
        })
    }
}

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub(crate) first_moment: Tensor,
    pub(crate) second_moment: Tensor,
    pub(crate) step: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.dims());
        Parameter {
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            step: 0,
        }
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn accumulate_grad(&mut self, grad: &Tensor) -> Result<()> {
        self.grad.add_assign(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 6, actual: 5, .. }));
    }

    #[test]
    fn new_rejects_rank_five() {
        assert!(Tensor::new(vec![1; 5], vec![0.0]).is_err());
    }

    #[test]
    fn add_names_offending_axis() {
        let a = Tensor::zeros(&[1, 2, 3, 3]);
        let b = Tensor::zeros(&[1, 2, 3, 4]);
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("axis 3"), "{msg}");
    }

    #[test]
    fn batch_roundtrip() {
        let t = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let items = [t.batch_item(0).unwrap(), t.batch_item(1).unwrap()];
        assert_eq!(Tensor::concat_batch(&items).unwrap(), t);
    }

    #[test]
    fn parameter_grad_matches_value_dims() {
        let p = Parameter::new(Tensor::zeros(&[3, 2, 1, 1]));
        assert_eq!(p.grad.dims(), p.value.dims());
        assert_eq!(p.step(), 0);
    }
}
