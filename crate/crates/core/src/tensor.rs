//! Dense n-dimensional f32 tensor, row-major.
//!
//! Image tensors are laid out `[batch, channels, height, width]`. Values are
//! stored in 32-bit floats; reductions that may grow long accumulate in
//! 64-bit (see [`crate::losses`] and the dense layer in [`crate::nn`]).

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// A tensor of zeros. Every dimension must be >= 1.
    pub fn zeros(shape: &[usize]) -> Tensor {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d >= 1),
            "tensor dimensions must all be >= 1, got {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "tensor dimensions must all be >= 1, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape:?} (expected {expected})",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: f32) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Same data, new shape; element counts must match.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flat index for a `[B, C, H, W]` tensor.
    #[inline]
    pub fn idx4(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx4(b, c, y, x)]
    }

    /// Extract sample `j` of a batch tensor as a batch of one.
    pub fn sample(&self, j: usize) -> Tensor {
        assert!(self.shape.len() >= 2, "sample() needs a batch dimension");
        let per = self.len() / self.shape[0];
        assert!(j < self.shape[0], "sample index {j} out of range");
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[j * per..(j + 1) * per].to_vec(),
        }
    }

    /// Concatenate tensors along the batch dimension; non-batch dims must
    /// match, batch sizes may differ.
    pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut batch = 0usize;
        let mut data = Vec::new();
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!(
                    "stack: shape {:?} incompatible with {:?}",
                    s.shape, first.shape
                )));
            }
            batch += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Tensor::from_vec(&shape, data)
    }
}
