//! Trains the desk denoiser from channel-split pairs and reports validation
//! pSNR per epoch.
//!
//!     cargo run --release --example train_c2c [epochs] [c2c|n2n|n2cl]

use coil2coil::neural::{LearningRateSchedule, NetworkConfig};
use coil2coil::simulator::{simulate_dataset, DatasetSpec};
use coil2coil::training::{input_psnr, train, TrainConfig, TrainMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coil2coil::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let mode: TrainMode = args.next().as_deref().unwrap_or("c2c").parse()?;
    let train_set = simulate_dataset(&DatasetSpec::desk(100), &mut ChaCha8Rng::seed_from_u64(1))?;
    let val = simulate_dataset(&DatasetSpec::desk(20), &mut ChaCha8Rng::seed_from_u64(2))?;
    let cfg = TrainConfig {
        epochs,
        mode,
        schedule: LearningRateSchedule {
            base: 1e-3,
            ..LearningRateSchedule::default()
        },
        ..TrainConfig::desk()
    };
    println!("noisy input: {:.2} dB", input_psnr(&val)?);
    let (_, log) = train(&train_set, Some(&val), &NetworkConfig::desk(), &cfg)?;
    for e in &log.epochs {
        println!(
            "epoch {:>2}  loss {:.5}  lr {:.2e}  val {:.2} dB  ({:.1}s)",
            e.epoch,
            e.mean_loss,
            e.learning_rate,
            e.validation_psnr.unwrap_or(f64::NAN),
            e.wall_seconds
        );
    }
    Ok(())
}
