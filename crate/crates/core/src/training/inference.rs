use rand::Rng;

use super::SliceNormalization;
use crate::error::{Error, Result};
use crate::imaging::{
    coil_combine, effective_sensitivity, magnitude, ChannelStack, Mask, RealImage, SensitivityMap,
};
use crate::neural::{NetworkParams, Tensor};
use crate::pairgen::{combine_all, split_channels};

/// Eval-mode denoising of a pre-combined magnitude image.
///
/// The input is z-scored with masked statistics; the residual branch is
/// mapped back as `image + std * residual`, so an identity network returns
/// `image` unchanged.
pub fn denoise_image(params: &NetworkParams, image: &RealImage, mask: &Mask) -> Result<RealImage> {
    if mask.dims() != image.dims() {
        return Err(Error::dims(image.dims(), mask.dims()));
    }
    let norm = SliceNormalization::from_masked(image, mask)?;
    let z = norm.apply(image);
    let out = params.infer(&Tensor::from_images(std::slice::from_ref(&z))?)?;
    let data = image
        .data()
        .iter()
        .zip(z.data())
        .zip(out.data())
        .map(|((&x, &zi), &o)| x + norm.std * (o - zi))
        .collect();
    let result = RealImage::from_vec(image.height(), image.width(), data)?;
    if let Some(i) = result.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(result)
}

/// Denoises the full matched-filter combination of `stack`.
pub fn denoise(
    params: &NetworkParams,
    stack: &ChannelStack,
    sens: &SensitivityMap,
    mask: &Mask,
) -> Result<RealImage> {
    denoise_image(params, &combine_all(stack, sens)?, mask)
}

/// Splits the channels at random into two groups, denoises each group's
/// combination, rescales both to full-combination sensitivity with
/// `S_all / S_group` and averages them. Voxels where a group has zero
/// sensitivity take the other branch only.
pub fn denoise_two_group_average<R: Rng + ?Sized>(
    params: &NetworkParams,
    stack: &ChannelStack,
    sens: &SensitivityMap,
    mask: &Mask,
    rng: &mut R,
) -> Result<RealImage> {
    let split = split_channels(stack.channel_count(), rng)?;
    let all: Vec<usize> = (0..stack.channel_count()).collect();
    let s_all = effective_sensitivity(sens, &all)?;
    let mut branches = Vec::with_capacity(2);
    for group in [split.group_j(), split.group_k()] {
        let img = magnitude(&coil_combine(stack, sens, group)?);
        let out = denoise_image(params, &img, mask)?;
        branches.push((out, effective_sensitivity(sens, group)?));
    }
    let (h, w) = stack.dims();
    let data = (0..h * w)
        .map(|v| {
            let (mut sum, mut n) = (0.0, 0.0);
            for (out, s) in &branches {
                if s.data()[v] > 0.0 {
                    sum += s_all.data()[v] / s.data()[v] * out.data()[v];
                    n += 1.0;
                }
            }
            if n > 0.0 {
                sum / n
            } else {
                0.0
            }
        })
        .collect();
    RealImage::from_vec(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{ComplexImage, Image, NoiseCovariance};
    use crate::neural::{init_network, NetworkConfig};
    use crate::simulator::{
        clean_channels, make_phantom, make_sensitivities, synthesize_acquisition, CoilSpec,
        PhantomSpec,
    };
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (ComplexImage, SensitivityMap, Mask) {
        let x = make_phantom(&PhantomSpec::shepp_logan(16)).unwrap();
        let sens = make_sensitivities(&CoilSpec::ring(4, 1.2, 0.8, 0.3), 16).unwrap();
        let mask = Mask::from_threshold(&magnitude(&x), 0.05).unwrap();
        (x, sens, mask)
    }

    fn identity_net() -> NetworkParams {
        let mut net =
            init_network(&NetworkConfig::desk(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        net.zero_final_layer();
        net
    }

    #[test]
    fn identity_network_returns_combination() {
        let (x, sens, mask) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = NoiseCovariance::identity(4).unwrap().scaled(0.01);
        let stack = synthesize_acquisition(&x, &sens, &psi, &mut rng).unwrap();
        let net = identity_net();
        let full = combine_all(&stack, &sens).unwrap();
        let out = denoise(&net, &stack, &sens, &mask).unwrap();
        for (a, b) in out.data().iter().zip(full.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(denoise_image(&net, &full, &mask).unwrap(), out);
    }

    #[test]
    fn trained_like_network_gives_finite_output() {
        let (x, sens, mask) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = init_network(&NetworkConfig::desk(), &mut rng).unwrap();
        let stack =
            synthesize_acquisition(&x, &sens, &NoiseCovariance::identity(4).unwrap(), &mut rng)
                .unwrap();
        let out = denoise(&net, &stack, &sens, &mask).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn two_group_identity_noise_free_recovers_full_combination() {
        let (x, sens, mask) = fixture();
        let clean = clean_channels(&x, &sens).unwrap();
        let full = combine_all(&clean, &sens).unwrap();
        let out = denoise_two_group_average(
            &identity_net(),
            &clean,
            &sens,
            &mask,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        for (a, b) in out.data().iter().zip(full.data()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn symmetric_channels_collapse_to_one_branch() {
        let (h, w) = (8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Image::filled(h, w, Complex64::new(0.8, 0.0)).unwrap();
        let sens = SensitivityMap::new(vec![s.clone(), s]).unwrap();
        let y = Image::from_fn(h, w, |_, _| {
            Complex64::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.2..0.2))
        })
        .unwrap();
        let stack = ChannelStack::new(vec![y.clone(), y]).unwrap();
        let mask = Mask::full(h, w).unwrap();
        let net = init_network(&NetworkConfig::desk(), &mut rng).unwrap();
        let single = denoise_image(
            &net,
            &magnitude(&coil_combine(&stack, &sens, &[0]).unwrap()),
            &mask,
        )
        .unwrap();
        let out = denoise_two_group_average(&net, &stack, &sens, &mask, &mut rng).unwrap();
        // S_all / S_group = 2 for every voxel.
        for (a, b) in out.data().iter().zip(single.data()) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_channel_rejected_for_two_group() {
        let (x, _, mask) = fixture();
        let sens = make_sensitivities(&CoilSpec::ring(1, 1.2, 0.8, 0.0), 16).unwrap();
        let stack = clean_channels(&x, &sens).unwrap();
        assert!(denoise_two_group_average(
            &identity_net(),
            &stack,
            &sens,
            &mask,
            &mut ChaCha8Rng::seed_from_u64(5)
        )
        .is_err());
    }
}
