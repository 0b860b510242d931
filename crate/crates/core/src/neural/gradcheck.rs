use rand::Rng;

use super::{init_network, Mode, NetworkConfig, NetworkParams, Tensor};
use crate::error::Result;
use crate::imaging::{Image, Mask};
use crate::training::{batch_loss, LossTarget};

/// Worst-case agreement between backprop and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    /// Parameter tensor index (in `NetworkParams::parameters` order) and
    /// element of the worst entry; `None` when the worst entry is an input gradient.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub step: f64,
}

const STEP: f64 = 1e-5;
/// Denominator floor; below it differences are compared absolutely.
const FLOOR: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Compares every parameter gradient and every input gradient of a
/// train-mode forward under the weighted masked loss against central
/// differences with step `1e-5`.
///
/// The instance is a batch of 2 random 8x8 images with random positive
/// weight maps and a random mask; `config` should be small.
pub fn gradient_check<R: Rng + ?Sized>(
    config: &NetworkConfig,
    rng: &mut R,
) -> Result<GradientCheckReport> {
    let (n, h, w) = (2, 8, 8);
    let mut net = init_network(config, rng)?;
    // Non-trivial BN affine and biases so every term is exercised.
    for p in net.parameters_mut() {
        for v in p.iter_mut() {
            if *v == 0.0 || *v == 1.0 {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
    }
    let input = Tensor::new(
        n,
        1,
        h,
        w,
        (0..n * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let weight = Image::from_fn(h, w, |_, _| rng.gen_range(0.5..1.5))?;
        let target = Image::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))?;
        let mut mask: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.8)).collect();
        mask[0] = true;
        targets.push(LossTarget::new(
            weight,
            target,
            Mask::from_vec(h, w, mask)?,
        )?);
    }

    let loss_at = |net: &NetworkParams, x: &Tensor| -> Result<f64> {
        let (out, _) = net.forward(x, Mode::Train)?;
        Ok(batch_loss(&out, &targets)?.0)
    };

    let (out, cache) = net.forward(&input, Mode::Train)?;
    let (_, grad_out) = batch_loss(&out, &targets)?;
    let grads = net.backward(&cache, &grad_out)?;

    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        step: STEP,
    };
    let sizes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for e in 0..len {
            let orig = net.parameters()[t][e];
            net.parameters_mut()[t][e] = orig + STEP;
            let up = loss_at(&net, &input)?;
            net.parameters_mut()[t][e] = orig - STEP;
            let down = loss_at(&net, &input)?;
            net.parameters_mut()[t][e] = orig;
            let err = relative_error(grads.params[t][e], (up - down) / (2.0 * STEP));
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((t, e));
            }
        }
    }
    let mut x = input.clone();
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let up = loss_at(&net, &x)?;
        x.data_mut()[i] = orig - STEP;
        let down = loss_at(&net, &x)?;
        x.data_mut()[i] = orig;
        let err = relative_error(grads.input.data()[i], (up - down) / (2.0 * STEP));
        report.checked += 1;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = None;
        }
    }
    Ok(report)
}

impl NetworkConfig {
    /// Small instance for gradient checks: three layers so one BN block is present.
    pub fn gradcheck() -> Self {
        Self {
            depth: 3,
            features: 3,
            kernel: 3,
            ..Self::desk()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_networks_pass() {
        for (cfg, seed) in [
            (NetworkConfig::gradcheck(), 0),
            (
                NetworkConfig {
                    depth: 2,
                    features: 2,
                    ..NetworkConfig::desk()
                },
                1,
            ),
            (
                NetworkConfig {
                    depth: 4,
                    features: 2,
                    kernel: 1,
                    ..NetworkConfig::desk()
                },
                2,
            ),
        ] {
            let r = gradient_check(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(r.max_relative_error <= 1e-4, "{cfg:?}: {r:?}");
            assert!(r.checked > 128);
        }
    }
}
