//! pSNR, SSIM and a paired t-test on smoothed versus noisy images.
//!
//!     cargo run --example evaluate_metrics

use coil2coil::imaging::{Image, Mask, RealImage};
use coil2coil::metrics::{paired_t_test, MetricReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn box_blur(img: &RealImage) -> RealImage {
    let (h, w) = img.dims();
    Image::from_fn(h, w, |r, c| {
        let (mut sum, mut n) = (0.0, 0.0);
        for y in r.saturating_sub(1)..(r + 2).min(h) {
            for x in c.saturating_sub(1)..(c + 2).min(w) {
                sum += img.get(y, x);
                n += 1.0;
            }
        }
        sum / n
    })
    .expect("same shape")
}

fn main() -> coil2coil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.15).expect("valid std");
    let (mut refs, mut noisy, mut smooth, mut masks) = (vec![], vec![], vec![], vec![]);
    for k in 0..12 {
        let clean = Image::from_fn(32, 32, |r, c| {
            1.0 + ((r as f64 + k as f64) / 6.0).sin() * ((c as f64) / 9.0).cos()
        })?;
        let draws: Vec<f64> = (0..32 * 32).map(|_| noise.sample(&mut rng)).collect();
        let n = Image::from_fn(32, 32, |r, c| clean.get(r, c) + draws[r * 32 + c])?;
        smooth.push(box_blur(&n));
        noisy.push(n);
        refs.push(clean);
        masks.push(Mask::full(32, 32)?);
    }
    let a = MetricReport::evaluate(&smooth, &refs, &masks)?;
    let b = MetricReport::evaluate(&noisy, &refs, &masks)?;
    let (pa, pb) = (a.psnr_summary(), b.psnr_summary());
    let (sa, sb) = (a.ssim_summary(), b.ssim_summary());
    println!(
        "smoothed pSNR {:.2} +- {:.2} dB, SSIM {:.3} +- {:.3}",
        pa.mean, pa.std, sa.mean, sa.std
    );
    println!(
        "noisy    pSNR {:.2} +- {:.2} dB, SSIM {:.3} +- {:.3}",
        pb.mean, pb.std, sb.mean, sb.std
    );
    let t = paired_t_test(&a.psnr, &b.psnr)?;
    println!(
        "paired t-test on pSNR: t = {:.3}, p = {:.3e}, dof {}",
        t.t, t.p, t.dof
    );
    Ok(())
}
