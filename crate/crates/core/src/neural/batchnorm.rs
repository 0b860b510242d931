use super::Tensor;
use crate::error::{Error, Result};

/// Per-channel batch normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    /// Unbiased batch variance, exponentially averaged.
    pub running_var: Vec<f64>,
}

/// Train-mode intermediates needed by the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub count: usize,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let c = self.channels();
        for v in [&self.beta, &self.running_mean, &self.running_var] {
            if v.len() != c {
                return Err(Error::dims(c, v.len()));
            }
        }
        if let Some(i) = self.running_var.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "negative running variance in channel {i}"
            )));
        }
        Ok(())
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        if input.channels() != self.channels() {
            return Err(Error::dims(self.channels(), input.channels()));
        }
        Ok(())
    }

    pub(crate) fn forward_train(
        &self,
        input: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, BatchNormCache)> {
        self.check(input)?;
        let (n, c, _, _) = input.shape();
        let hw = input.plane_len();
        let count = n * hw;
        let plane = |s: usize, ch: usize| &input.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let sum: f64 = (0..n).map(|s| plane(s, ch).iter().sum::<f64>()).sum();
            mean[ch] = sum / count as f64;
            let sq: f64 = (0..n)
                .map(|s| {
                    plane(s, ch)
                        .iter()
                        .map(|x| (x - mean[ch]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            var[ch] = sq / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = input.clone();
        let mut out = input.clone();
        for s in 0..n {
            for ch in 0..c {
                let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                let (m, is, g, b) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
                for (xh, o) in xhat.data_mut()[range.clone()]
                    .iter_mut()
                    .zip(&mut out.data_mut()[range])
                {
                    *xh = (*xh - m) * is;
                    *o = g * *xh + b;
                }
            }
        }
        Ok((
            out,
            BatchNormCache {
                xhat,
                inv_std,
                mean,
                var,
                count,
            },
        ))
    }

    pub(crate) fn forward_eval(&self, input: &Tensor, eps: f64) -> Result<Tensor> {
        self.check(input)?;
        let (n, c, _, _) = input.shape();
        let hw = input.plane_len();
        let mut out = input.clone();
        for ch in 0..c {
            let scale = self.gamma[ch] / (self.running_var[ch] + eps).sqrt();
            let shift = self.beta[ch] - scale * self.running_mean[ch];
            for s in 0..n {
                for v in &mut out.data_mut()[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                    *v = scale * *v + shift;
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn update_running(&mut self, cache: &BatchNormCache, momentum: f64) {
        let unbias = if cache.count > 1 {
            cache.count as f64 / (cache.count - 1) as f64
        } else {
            1.0
        };
        for ch in 0..self.channels() {
            self.running_mean[ch] =
                momentum * self.running_mean[ch] + (1.0 - momentum) * cache.mean[ch];
            self.running_var[ch] =
                momentum * self.running_var[ch] + (1.0 - momentum) * cache.var[ch] * unbias;
        }
    }

    /// Gradient through the batch statistics; accumulates into `grad_gamma` and `grad_beta`.
    pub(crate) fn backward(
        &self,
        cache: &BatchNormCache,
        grad_output: &Tensor,
        grad_gamma: &mut [f64],
        grad_beta: &mut [f64],
    ) -> Result<Tensor> {
        if grad_output.shape() != cache.xhat.shape() {
            return Err(Error::dims(cache.xhat.shape(), grad_output.shape()));
        }
        let (n, c, _, _) = grad_output.shape();
        let hw = grad_output.plane_len();
        let m = cache.count as f64;
        let mut grad_input = grad_output.clone();
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for s in 0..n {
                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                for (g, xh) in grad_output.data()[r.clone()]
                    .iter()
                    .zip(&cache.xhat.data()[r])
                {
                    sum_g += g;
                    sum_gx += g * xh;
                }
            }
            grad_gamma[ch] += sum_gx;
            grad_beta[ch] += sum_g;
            // dx = gamma * inv_std / m * (m * g - sum(g) - xhat * sum(g * xhat))
            let k = self.gamma[ch] * cache.inv_std[ch] / m;
            for s in 0..n {
                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                for (gi, xh) in grad_input.data_mut()[r.clone()]
                    .iter_mut()
                    .zip(&cache.xhat.data()[r])
                {
                    *gi = k * (m * *gi - sum_g - xh * sum_gx);
                }
            }
        }
        Ok(grad_input)
    }
}
