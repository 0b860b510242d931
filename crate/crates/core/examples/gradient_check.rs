//! Finite-difference check of the network and loss gradients.
//!
//!     cargo run --release --example gradient_check

use coil2coil::neural::{gradient_check, NetworkConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coil2coil::Result<()> {
    for (name, cfg) in [
        ("small", NetworkConfig::gradcheck()),
        (
            "deeper",
            NetworkConfig {
                depth: 5,
                features: 4,
                ..NetworkConfig::gradcheck()
            },
        ),
        (
            "5x5",
            NetworkConfig {
                kernel: 5,
                ..NetworkConfig::gradcheck()
            },
        ),
    ] {
        let r = gradient_check(&cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        println!(
            "{name:>6}: max relative error {:.2e} over {} derivatives, worst at {}",
            r.max_relative_error,
            r.checked,
            match r.worst {
                Some((t, e)) => format!("parameter tensor {t}, element {e}"),
                None => "the input gradient".to_string(),
            }
        );
    }
    Ok(())
}
