//! Residual convolutional denoiser with hand-written forward and backward passes.

mod adam;
mod batchnorm;
mod conv;
mod gradcheck;
mod network;

pub use adam::{adam_step, lr_schedule, AdamState, LearningRateSchedule};
pub use batchnorm::BatchNormLayer;
pub use conv::{xavier_bound, ConvLayer};
pub use gradcheck::{gradient_check, GradientCheckReport};
pub use network::{init_network, ForwardCache, Gradients, Mode, NetworkParams};

use crate::error::{Error, Result};
use crate::imaging::{Image, RealImage};

/// Dense `n x c x h x w` batch, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty tensor shape {:?}",
                (n, c, h, w)
            )));
        }
        if data.len() != n * c * h * w {
            return Err(Error::dims(n * c * h * w, data.len()));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(n, c, h, w, vec![0.0; n * c * h * w])
    }

    /// Single-channel batch from equally sized images.
    pub fn from_images(images: &[RealImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            first.ensure_same_dims(img)?;
            data.extend_from_slice(img.data());
        }
        Self::new(images.len(), 1, h, w, data)
    }

    /// Splits a single-channel batch back into images.
    pub fn to_images(&self) -> Result<Vec<RealImage>> {
        if self.c != 1 {
            return Err(Error::dims(1, self.c));
        }
        self.data
            .chunks(self.h * self.w)
            .map(|p| Image::from_vec(self.h, self.w, p.to_vec()))
            .collect()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// All channels of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.c * self.h * self.w;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.c * self.h * self.w;
        &mut self.data[i * len..(i + 1) * len]
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Number of convolution layers, including the first and last.
    pub depth: usize,
    pub features: usize,
    pub kernel: usize,
    pub slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl NetworkConfig {
    /// CPU-friendly default: 6 layers, 16 features, 3x3.
    pub fn desk() -> Self {
        Self {
            depth: 6,
            features: 16,
            kernel: 3,
            slope: 0.1,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// Full-size preset: 18 layers, 64 features, 5x5.
    pub fn full_scale() -> Self {
        Self {
            depth: 18,
            features: 64,
            kernel: 5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.depth < 2 {
            return bad("depth must be at least 2");
        }
        if self.features == 0 {
            return bad("features must be positive");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("kernel size must be odd");
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("batch-norm momentum must lie in [0, 1)");
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return bad("batch-norm epsilon must be positive");
        }
        Ok(())
    }

    /// Voxels at the image edge whose outputs see zero padding.
    pub fn receptive_radius(&self) -> usize {
        self.depth * (self.kernel - 1) / 2
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky(-1.0, 0.1), -0.1);
        assert_eq!(leaky(2.0, 0.1), 2.0);
        assert_eq!(leaky(0.0, 0.1), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::desk().validate().is_ok());
        assert!(NetworkConfig::full_scale().validate().is_ok());
        for bad in [
            NetworkConfig {
                depth: 1,
                ..NetworkConfig::desk()
            },
            NetworkConfig {
                kernel: 4,
                ..NetworkConfig::desk()
            },
            NetworkConfig {
                slope: 1.0,
                ..NetworkConfig::desk()
            },
            NetworkConfig {
                features: 0,
                ..NetworkConfig::desk()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn tensor_image_round_trip() {
        let a = Image::from_fn(3, 4, |r, c| (r * 4 + c) as f64).unwrap();
        let b = a.scale(2.0);
        let t = Tensor::from_images(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.shape(), (2, 1, 3, 4));
        assert_eq!(t.to_images().unwrap(), vec![a, b]);
        assert!(Tensor::from_images(&[]).is_err());
    }
}
