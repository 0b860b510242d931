//! A simulated dataset as a directory of tensor files.
//!
//! | file                  | element | dims         |
//! |-----------------------|---------|--------------|
//! | `phantom.c2c`         | complex | [n, h, w]    |
//! | `mask.c2c`            | bool    | [n, h, w]    |
//! | `sens.c2c`            | complex | [m, h, w]    |
//! | `psi.c2c`             | complex | [n, m, m]    |
//! | `clean_channels.c2c`  | complex | [n, m, h, w] |
//! | `noisy.c2c`           | complex | [n, m, h, w] |
//! | `noisy_repeat.c2c`    | complex | [n, m, h, w] |
//! | `clean.c2c`           | real    | [n, h, w]    |
//! | `noisy_combined.c2c`  | real    | [n, h, w]    |

use std::path::Path;

use num_complex::Complex64;

use super::container::{read_tensor, write_tensor, StoredTensor, TensorData};
use crate::error::{Error, Result};
use crate::imaging::{NoiseCovariance, SensitivityMap};
use crate::pairgen::combine_all;
use crate::simulator::{clean_channels, Dataset, SimulatedSlice};

pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let slices = &data.slices;
    let m = data.sens.channel_count();
    let phantoms: Vec<_> = slices.iter().map(|s| s.phantom.clone()).collect();
    let masks: Vec<_> = slices.iter().map(|s| s.mask.clone()).collect();
    let clean: Vec<_> = slices.iter().map(|s| s.clean.clone()).collect();
    let noisy: Vec<_> = slices.iter().map(|s| s.noisy.clone()).collect();
    let repeat: Vec<_> = slices.iter().map(|s| s.noisy_repeat.clone()).collect();
    let channels = slices
        .iter()
        .map(|s| clean_channels(&s.phantom, &data.sens))
        .collect::<Result<Vec<_>>>()?;
    let combined = slices
        .iter()
        .map(|s| combine_all(&s.noisy, &data.sens))
        .collect::<Result<Vec<_>>>()?;
    let psi: Vec<Complex64> = slices
        .iter()
        .flat_map(|s| s.psi.data().iter().copied())
        .collect();
    let psi = StoredTensor::new(
        vec![slices.len(), m, m],
        TensorData::Complex(
            psi.iter()
                .map(|c| num_complex::Complex32::new(c.re as f32, c.im as f32))
                .collect(),
        ),
    )?;

    let files = [
        ("phantom.c2c", StoredTensor::from_complex_images(&phantoms)?),
        ("mask.c2c", StoredTensor::from_masks(&masks)?),
        (
            "sens.c2c",
            StoredTensor::from_complex_images(data.sens.as_stack().channels())?,
        ),
        ("psi.c2c", psi),
        ("clean_channels.c2c", StoredTensor::from_stacks(&channels)?),
        ("noisy.c2c", StoredTensor::from_stacks(&noisy)?),
        ("noisy_repeat.c2c", StoredTensor::from_stacks(&repeat)?),
        ("clean.c2c", StoredTensor::from_real_images(&clean)?),
        (
            "noisy_combined.c2c",
            StoredTensor::from_real_images(&combined)?,
        ),
    ];
    for (name, tensor) in files {
        write_tensor(dir.join(name), &tensor)?;
    }
    Ok(())
}

/// Reads a bundle written by [`save_dataset`]. Values come back at single
/// precision; each `Psi` is re-symmetrized from its upper triangle.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let sens = SensitivityMap::new(read_tensor(dir.join("sens.c2c"))?.to_complex_images()?)?;
    let m = sens.channel_count();
    let phantoms = read_tensor(dir.join("phantom.c2c"))?.to_complex_images()?;
    let n = phantoms.len();
    let masks = read_tensor(dir.join("mask.c2c"))?.to_masks()?;
    let noisy = read_tensor(dir.join("noisy.c2c"))?.to_stacks()?;
    let repeat = read_tensor(dir.join("noisy_repeat.c2c"))?.to_stacks()?;
    let clean = read_tensor(dir.join("clean.c2c"))?.to_real_images()?;
    let psi = read_tensor(dir.join("psi.c2c"))?;
    if psi.dims() != [n, m, m] {
        return Err(Error::dims([n, m, m], psi.dims()));
    }
    let TensorData::Complex(psi) = psi.data() else {
        return Err(Error::Format("psi.c2c must be complex".into()));
    };
    for (name, len) in [
        ("mask", masks.len()),
        ("noisy", noisy.len()),
        ("noisy_repeat", repeat.len()),
        ("clean", clean.len()),
    ] {
        if len != n {
            return Err(Error::Format(format!(
                "{name} has {len} slices, phantom has {n}"
            )));
        }
    }
    let mut slices = Vec::with_capacity(n);
    for (i, ((((phantom, mask), noisy), noisy_repeat), clean)) in phantoms
        .into_iter()
        .zip(masks)
        .zip(noisy)
        .zip(repeat)
        .zip(clean)
        .enumerate()
    {
        let block = &psi[i * m * m..(i + 1) * m * m];
        let mut entries = vec![Complex64::default(); m * m];
        for a in 0..m {
            for b in a..m {
                let v = block[a * m + b];
                let v = Complex64::new(v.re as f64, if a == b { 0.0 } else { v.im as f64 });
                entries[a * m + b] = v;
                entries[b * m + a] = v.conj();
            }
        }
        if noisy.channel_count() != m {
            return Err(Error::dims(m, noisy.channel_count()));
        }
        slices.push(SimulatedSlice {
            phantom,
            mask,
            psi: NoiseCovariance::new(m, entries)?,
            noisy,
            noisy_repeat,
            clean,
        });
    }
    Ok(Dataset { sens, slices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate_dataset, DatasetSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_round_trip_at_single_precision() {
        let mut spec = DatasetSpec::desk(2);
        spec.grid = 8;
        let data = simulate_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.slices.len(), 2);
        for (a, b) in data.slices.iter().zip(&back.slices) {
            assert_eq!(a.mask, b.mask);
            for (x, y) in a.clean.data().iter().zip(b.clean.data()) {
                assert_eq!(*y, *x as f32 as f64);
            }
            for (x, y) in a.psi.data().iter().zip(b.psi.data()) {
                assert!((x - y).norm() <= 1e-6 * x.norm().max(1.0));
            }
        }
        save_dataset(dir.path().join("again"), &back).unwrap();
        for name in ["noisy.c2c", "clean.c2c", "mask.c2c", "sens.c2c"] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(dir.path().join("again").join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }
}
