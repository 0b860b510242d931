//! Writes a simulated dataset bundle and a checkpoint, reads both back, and
//! shows that the stored tensors survive unchanged.
//!
//!     cargo run --example tensor_io

use coil2coil::io::{
    load_checkpoint, load_dataset, read_tensor, save_checkpoint, save_dataset, StoredTensor,
};
use coil2coil::neural::{init_network, NetworkConfig};
use coil2coil::simulator::{simulate_dataset, DatasetSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coil2coil::Result<()> {
    let dir = std::env::temp_dir().join("c2c_tensor_io_example");
    let data = simulate_dataset(&DatasetSpec::desk(2), &mut ChaCha8Rng::seed_from_u64(0))?;
    save_dataset(&dir, &data)?;
    let back = load_dataset(&dir)?;
    let noisy = read_tensor(dir.join("noisy.c2c"))?;
    println!(
        "noisy.c2c dims {:?}, {} bytes",
        noisy.dims(),
        std::fs::metadata(dir.join("noisy.c2c"))
            .map(|m| m.len())
            .unwrap_or(0)
    );
    let again = StoredTensor::from_stacks(
        &back
            .slices
            .iter()
            .map(|s| s.noisy.clone())
            .collect::<Vec<_>>(),
    )?;
    println!("reloaded stacks re-encode identically: {}", again == noisy);

    let params = init_network(&NetworkConfig::desk(), &mut ChaCha8Rng::seed_from_u64(1))?;
    let ckpt = dir.join("model.c2ck");
    save_checkpoint(&ckpt, &params)?;
    let loaded = load_checkpoint(&ckpt)?;
    let worst = params
        .parameters()
        .iter()
        .zip(loaded.parameters())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!(
        "checkpoint: {} parameters, max |saved - loaded| {worst:.1e} (f32 storage)",
        loaded.parameter_count()
    );
    Ok(())
}
