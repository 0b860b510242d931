use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Same-size 2-D convolution (cross-correlation) with zero padding.
///
/// `weight` is laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Xavier/Glorot uniform bound for a `k x k` kernel.
pub fn xavier_bound(in_channels: usize, out_channels: usize, kernel: usize) -> f64 {
    let fan_in = (in_channels * kernel * kernel) as f64;
    let fan_out = (out_channels * kernel * kernel) as f64;
    (6.0 / (fan_in + fan_out)).sqrt()
}

impl ConvLayer {
    pub fn xavier<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = xavier_bound(in_channels, out_channels, kernel);
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: with_bias.then(|| vec![0.0; out_channels]),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.weight.len() != n {
            return Err(Error::dims(n, self.weight.len()));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::dims(self.out_channels, b.len()));
            }
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument("kernel size must be odd".into()));
        }
        Ok(())
    }

    fn taps(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unrolls one sample into `[in*k*k][h*w]` patch rows.
    fn im2col(&self, sample: &[f64], h: usize, w: usize, col: &mut [f64]) {
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        col.fill(0.0);
        for i in 0..self.in_channels {
            let plane = &sample[i * hw..(i + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((i * k + ky) * k + kx) * hw..][..hw];
                    let (x_lo, x_hi) =
                        (pad.saturating_sub(kx), (w + pad).saturating_sub(kx).min(w));
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < pad || sy - pad >= h || x_lo >= x_hi {
                            continue;
                        }
                        let src = &plane[(sy - pad) * w..];
                        let dst = &mut row[y * w..];
                        for x in x_lo..x_hi {
                            dst[x] = src[x + kx - pad];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters patch-row gradients back onto the sample.
    fn col2im(&self, col: &[f64], h: usize, w: usize, sample: &mut [f64]) {
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        for i in 0..self.in_channels {
            let plane = &mut sample[i * hw..(i + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((i * k + ky) * k + kx) * hw..][..hw];
                    let (x_lo, x_hi) =
                        (pad.saturating_sub(kx), (w + pad).saturating_sub(kx).min(w));
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < pad || sy - pad >= h || x_lo >= x_hi {
                            continue;
                        }
                        let dst = &mut plane[(sy - pad) * w..];
                        let src = &row[y * w..];
                        for x in x_lo..x_hi {
                            dst[x + kx - pad] += src[x];
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = input.shape();
        if c != self.in_channels {
            return Err(Error::dims(self.in_channels, c));
        }
        let hw = h * w;
        let taps = self.taps();
        let mut out = Tensor::zeros(n, self.out_channels, h, w)?;
        let mut col = vec![0.0; taps * hw];
        for s in 0..n {
            self.im2col(input.sample(s), h, w, &mut col);
            let dst = out.sample_mut(s);
            for o in 0..self.out_channels {
                let orow = &mut dst[o * hw..(o + 1) * hw];
                if let Some(b) = &self.bias {
                    orow.fill(b[o]);
                }
                let wrow = &self.weight[o * taps..(o + 1) * taps];
                for (r, &wv) in wrow.iter().enumerate() {
                    let crow = &col[r * hw..(r + 1) * hw];
                    for (d, &x) in orow.iter_mut().zip(crow) {
                        *d += wv * x;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients into `grad_weight`/`grad_bias` and
    /// returns the gradient with respect to `input`.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_output: &Tensor,
        grad_weight: &mut [f64],
        grad_bias: Option<&mut [f64]>,
    ) -> Result<Tensor> {
        let (n, c, h, w) = input.shape();
        if grad_output.shape() != (n, self.out_channels, h, w) {
            return Err(Error::dims(
                (n, self.out_channels, h, w),
                grad_output.shape(),
            ));
        }
        if c != self.in_channels {
            return Err(Error::dims(self.in_channels, c));
        }
        let hw = h * w;
        let taps = self.taps();
        let mut grad_input = Tensor::zeros(n, c, h, w)?;
        let mut col = vec![0.0; taps * hw];
        let mut grad_col = vec![0.0; taps * hw];
        let mut grad_bias = grad_bias;
        for s in 0..n {
            self.im2col(input.sample(s), h, w, &mut col);
            grad_col.fill(0.0);
            let gout = grad_output.sample(s);
            for o in 0..self.out_channels {
                let grow = &gout[o * hw..(o + 1) * hw];
                if let Some(gb) = grad_bias.as_deref_mut() {
                    gb[o] += grow.iter().sum::<f64>();
                }
                let wrow = &self.weight[o * taps..(o + 1) * taps];
                let gwrow = &mut grad_weight[o * taps..(o + 1) * taps];
                for r in 0..taps {
                    let crow = &col[r * hw..(r + 1) * hw];
                    gwrow[r] += crow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    let gcrow = &mut grad_col[r * hw..(r + 1) * hw];
                    let wv = wrow[r];
                    for (d, &g) in gcrow.iter_mut().zip(grow) {
                        *d += wv * g;
                    }
                }
            }
            self.col2im(&grad_col, h, w, grad_input.sample_mut(s));
        }
        Ok(grad_input)
    }
}
