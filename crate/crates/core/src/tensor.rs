//! Dense NCHW `f32` tensor.

use crate::error::{Error, Result};

/// Rank-4 tensor stored row-major as `[batch, channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::dim("Tensor::new", "data length", len, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: [usize; 4], value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([ni, ci, y, x]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
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

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, ch, h, w] = self.dims;
        ((n * ch + c) * h + y) * w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous `H*W` plane for one `(batch, channel)` pair.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_dims(other, "add")?;
        Ok(Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.dims, other.dims, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Channel-wise concatenation of tensors sharing batch and spatial dims.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat_channels of zero tensors".into()))?;
        let [n, _, h, w] = first.dims;
        for p in parts {
            if p.dims[0] != n {
                return Err(Error::dim("concat_channels", "batch", n, p.dims[0]));
            }
            if p.dims[2] != h {
                return Err(Error::dim("concat_channels", "height", h, p.dims[2]));
            }
            if p.dims[3] != w {
                return Err(Error::dim("concat_channels", "width", w, p.dims[3]));
            }
        }
        let c_total = parts.iter().map(|p| p.dims[1]).sum();
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for ni in 0..n {
            for p in parts {
                let block = p.dims[1] * h * w;
                data.extend_from_slice(&p.data[ni * block..(ni + 1) * block]);
            }
        }
        Ok(Tensor {
            dims: [n, c_total, h, w],
            data,
        })
    }

    /// Copy of channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.dims;
        if start > end || end > c {
            return Err(Error::dim("slice_channels", "channels", c, end));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (end - start) * hw);
        for ni in 0..n {
            let base = ni * c * hw;
            data.extend_from_slice(&self.data[base + start * hw..base + end * hw]);
        }
        Ok(Tensor {
            dims: [n, end - start, h, w],
            data,
        })
    }

    fn check_same_dims(&self, other: &Tensor, op: &'static str) -> Result<()> {
        const AXES: [&str; 4] = ["batch", "channels", "height", "width"];
        for (i, axis) in AXES.iter().enumerate() {
            if self.dims[i] != other.dims[i] {
                return Err(Error::dim(op, axis, self.dims[i], other.dims[i]));
            }
        }
        Ok(())
    }
}
