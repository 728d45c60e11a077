use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar `channels x height x width` image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DataLength {
                shape: vec![channels, height, width],
                len: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Rounds every value to the nearest of 256 levels (round half up).
    pub fn quantized_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    /// Interleaved RGB bytes in row-major order.
    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.push(to_u8(self.get(c, y, x)));
                }
            }
        }
        out
    }

    pub fn from_interleaved_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != channels * height * width {
            return Err(Error::DataLength {
                shape: vec![height, width, channels],
                len: bytes.len(),
            });
        }
        Ok(Self::from_fn(channels, height, width, |c, y, x| {
            bytes[(y * width + x) * channels + c] as f32 / 255.0
        }))
    }

    /// Wraps a `1 x c x h x w` tensor.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match t.dims4() {
            Some((1, c, h, w)) => Self::new(c, h, w, t.data().to_vec()),
            _ => Err(Error::shape(
                "image",
                format!("expected a single-image tensor, got {:?}", t.shape()),
            )),
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, self.channels, self.height, self.width], self.data.clone())
            .expect("image data matches its extents")
    }
}

/// `round(v * 255)` with halves rounded up, clamped to `0..=255`.
pub fn to_u8(v: f32) -> u8 {
    let scaled = (v.clamp(0.0, 1.0) as f64) * 255.0;
    num_traits::Float::floor(scaled + 0.5) as u8
}
