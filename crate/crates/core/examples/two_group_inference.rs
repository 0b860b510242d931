//! Compares full-combination inference with the two-group average.
//!
//!     cargo run --release --example two_group_inference [epochs]

use coil2coil::metrics::psnr;
use coil2coil::neural::{LearningRateSchedule, NetworkConfig};
use coil2coil::simulator::{simulate_dataset, DatasetSpec};
use coil2coil::training::{denoise, denoise_two_group_average, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coil2coil::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let train_set = simulate_dataset(&DatasetSpec::desk(100), &mut ChaCha8Rng::seed_from_u64(1))?;
    let val = simulate_dataset(&DatasetSpec::desk(20), &mut ChaCha8Rng::seed_from_u64(2))?;
    let cfg = TrainConfig {
        epochs,
        schedule: LearningRateSchedule {
            base: 1e-3,
            ..LearningRateSchedule::default()
        },
        ..TrainConfig::desk()
    };
    let (params, _) = train(&train_set, None, &NetworkConfig::desk(), &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut full, mut two) = (0.0, 0.0);
    for s in &val.slices {
        full += psnr(
            &denoise(&params, &s.noisy, &val.sens, &s.mask)?,
            &s.clean,
            &s.mask,
        )?;
        two += psnr(
            &denoise_two_group_average(&params, &s.noisy, &val.sens, &s.mask, &mut rng)?,
            &s.clean,
            &s.mask,
        )?;
    }
    let n = val.slices.len() as f64;
    println!(
        "full combination {:.2} dB, two-group average {:.2} dB",
        full / n,
        two / n
    );
    Ok(())
}
