//! Dense f64 tensors in batch-height-width-channel layout.
//!
//! All activations, weights and gradients in this crate are rank 1..=4
//! tensors of 64-bit floats stored contiguously in row-major NHWC order.
//! Math runs in f64 so gradient checks can be tight; model files downcast
//! to f32 on disk.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense numeric array, rank 1 to 4, row-major NHWC.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Tensor> {
        Self::check_shape(shape)?;
        let len = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    /// All-zero tensor.
    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Self::new(shape, 0.0)
    }

    /// Tensor wrapping existing data; length must match the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::check_shape(shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} (product {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    fn check_shape(shape: &[usize]) -> Result<()> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::Shape(format!(
                "rank must be 1..=4, got shape {:?}",
                shape
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in shape {:?}", shape)));
        }
        Ok(())
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat index for a rank-4 tensor.
    #[inline(always)]
    pub fn idx4(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((n * self.shape[1] + h) * self.shape[2] + w) * self.shape[3] + c
    }

    #[inline(always)]
    pub fn at4(&self, n: usize, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.idx4(n, h, w, c)]
    }

    #[inline(always)]
    pub fn set4(&mut self, n: usize, h: usize, w: usize, c: usize, v: f64) {
        let i = self.idx4(n, h, w, c);
        self.data[i] = v;
    }

    /// Flat index for a rank-2 tensor.
    #[inline(always)]
    pub fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        r * self.shape[1] + c
    }

    #[inline(always)]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[self.idx2(r, c)]
    }

    #[inline(always)]
    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let i = self.idx2(r, c);
        self.data[i] = v;
    }

    /// Same data under a new shape with an identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Self::check_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elems) to {:?} ({} elems)",
                self.shape,
                self.data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Zero tensor with this tensor's shape.
    pub fn zeros_like(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite values in {context}")))
        }
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Glorot (Xavier) uniform initialization: i.i.d. U[-L, L] with
/// L = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform_init(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Config("glorot fans must be >= 1".into()));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = rng.uniform(-limit, limit);
    }
    Ok(t)
}

/// Zero-pad the two spatial dimensions of an NHWC tensor by `pad` on each side.
pub fn pad_spatial(x: &Tensor, pad: usize) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "pad_spatial expects rank 4, got {:?}",
            x.shape()
        )));
    }
    if pad == 0 {
        return Ok(x.clone());
    }
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Tensor::zeros(&[n, h + 2 * pad, w + 2 * pad, c])?;
    for b in 0..n {
        for i in 0..h {
            let src = x.idx4(b, i, 0, 0);
            let dst = out.idx4(b, i + pad, pad, 0);
            out.data_mut()[dst..dst + w * c].copy_from_slice(&x.data()[src..src + w * c]);
        }
    }
    Ok(out)
}
