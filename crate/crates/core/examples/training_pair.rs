//! Builds coil-split training pairs from one acquisition and shows how the
//! label is whitened and rescaled to the input's sensitivity.
//!
//!     cargo run --example training_pair

use coil2coil::pairgen::{make_training_pair, split_channels, PairOptions};
use coil2coil::simulator::{simulate_dataset, DatasetSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coil2coil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = simulate_dataset(&DatasetSpec::desk(1), &mut rng)?;
    let slice = &data.slices[0];
    for _ in 0..3 {
        let split = split_channels(data.sens.channel_count(), &mut rng)?;
        let pair = make_training_pair(
            &slice.noisy,
            &data.sens,
            &slice.psi,
            &split,
            &slice.mask,
            PairOptions::default(),
        )?;
        let label = pair.normalized_label();
        let mask = &pair.mask;
        println!("J = {:?}\nK = {:?}", split.group_j(), split.group_k());
        println!(
            "  mean input {:.3}, mean rescaled label {:.3}, mean S_J {:.3}, mean S'_label {:.3}, fallback voxels {}",
            mask.mean_of(&pair.input)?,
            mask.mean_of(&label)?,
            mask.mean_of(&pair.sens_input)?,
            mask.mean_of(&pair.sens_label)?,
            pair.diagnostics.fallback_voxels
        );
    }
    Ok(())
}
