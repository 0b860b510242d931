//! Synthetic phased-array acquisitions: ellipse phantoms, Gaussian-falloff coil
//! sensitivities, scaled-correlation channel noise and correlated noise draws.
//!
//! Spatial coordinates are normalized to `[-1, 1]` across the grid, with the
//! voxel at (row, col) centred at `((col + 0.5) / n * 2 - 1, (row + 0.5) / n * 2 - 1)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::imaging::{
    ChannelStack, ComplexImage, Image, Mask, NoiseCovariance, RealImage, SensitivityMap,
};
use crate::pairgen::combine_all;

#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
    pub amplitude: Complex64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_axes.0).powi(2) + (v / self.semi_axes.1).powi(2) <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub grid: usize,
    pub ellipses: Vec<Ellipse>,
    pub background: Complex64,
}

fn voxel_coord(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 * 2.0 - 1.0
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 {
            return Err(Error::InvalidArgument(format!(
                "phantom grid must be >= 8, got {}",
                self.grid
            )));
        }
        if self.ellipses.is_empty() {
            return Err(Error::InvalidArgument(
                "phantom needs at least one ellipse".into(),
            ));
        }
        for e in &self.ellipses {
            if !(e.semi_axes.0 > 0.0 && e.semi_axes.1 > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "ellipse semi-axes must be > 0: {e:?}"
                )));
            }
        }
        Ok(())
    }

    /// The modified (high-contrast) Shepp-Logan head.
    pub fn shepp_logan(grid: usize) -> Self {
        #[rustfmt::skip]
        const TABLE: [[f64; 6]; 10] = [
            // amplitude, a, b, x0, y0, rotation (deg); y points down the rows
            [ 1.0, 0.69,   0.92,   0.0,   0.0,     0.0],
            [-0.8, 0.6624, 0.8740, 0.0,   0.0184,  0.0],
            [-0.2, 0.11,   0.31,   0.22,  0.0,    18.0],
            [-0.2, 0.16,   0.41,  -0.22,  0.0,   -18.0],
            [ 0.1, 0.21,   0.25,   0.0,  -0.35,    0.0],
            [ 0.1, 0.046,  0.046,  0.0,  -0.1,     0.0],
            [ 0.1, 0.046,  0.046,  0.0,   0.1,     0.0],
            [ 0.1, 0.046,  0.023, -0.08,  0.605,   0.0],
            [ 0.1, 0.023,  0.023,  0.0,   0.606,   0.0],
            [ 0.1, 0.023,  0.046,  0.06,  0.605,   0.0],
        ];
        let ellipses = TABLE
            .iter()
            .map(|r| Ellipse {
                center: (r[3], r[4]),
                semi_axes: (r[1], r[2]),
                rotation: r[5].to_radians(),
                amplitude: Complex64::new(r[0], 0.0),
            })
            .collect();
        Self {
            grid,
            ellipses,
            background: Complex64::default(),
        }
    }

    /// A randomized head: one bright outer ellipse plus 3 to 6 interior
    /// structures of either contrast sign.
    pub fn random_head<R: Rng + ?Sized>(grid: usize, rng: &mut R) -> Self {
        let head = Ellipse {
            center: (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)),
            semi_axes: (rng.gen_range(0.62..0.78), rng.gen_range(0.72..0.88)),
            rotation: rng.gen_range(-0.2..0.2),
            amplitude: Complex64::new(1.0, 0.0),
        };
        let mut ellipses = vec![head.clone()];
        let inner = rng.gen_range(3..=6);
        for _ in 0..inner {
            let r = rng.gen_range(0.0..0.55);
            let t = rng.gen_range(0.0..2.0 * PI);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            ellipses.push(Ellipse {
                center: (
                    head.center.0 + r * head.semi_axes.0 * t.cos(),
                    head.center.1 + r * head.semi_axes.1 * t.sin(),
                ),
                semi_axes: (rng.gen_range(0.06..0.28), rng.gen_range(0.06..0.28)),
                rotation: rng.gen_range(0.0..PI),
                amplitude: Complex64::new(sign * rng.gen_range(0.15..0.35), 0.0),
            });
        }
        Self {
            grid,
            ellipses,
            background: Complex64::default(),
        }
    }
}

/// Rasterizes the phantom: each voxel centre receives the background plus the
/// amplitudes of every ellipse containing it.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let n = spec.grid;
    Image::from_fn(n, n, |r, c| {
        let (x, y) = (voxel_coord(c, n), voxel_coord(r, n));
        spec.ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .fold(spec.background, |acc, e| acc + e.amplitude)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoilSpec {
    pub centers: Vec<(f64, f64)>,
    /// Gaussian falloff width in normalized units; `f64::INFINITY` gives a flat profile.
    pub width: f64,
    pub phases: Vec<f64>,
}

impl CoilSpec {
    /// `channels` coils evenly spaced on a circle of `radius`, channel i with phase `i * phase_step`.
    pub fn ring(channels: usize, radius: f64, width: f64, phase_step: f64) -> Self {
        let centers = (0..channels)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / channels as f64;
                (radius * t.cos(), radius * t.sin())
            })
            .collect();
        let phases = (0..channels).map(|i| i as f64 * phase_step).collect();
        Self {
            centers,
            width,
            phases,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::InvalidArgument(
                "coil spec needs at least one channel".into(),
            ));
        }
        if self.phases.len() != self.centers.len() {
            return Err(Error::dims(self.centers.len(), self.phases.len()));
        }
        if !(self.width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "coil falloff width must be > 0, got {}",
                self.width
            )));
        }
        Ok(())
    }
}

/// `s_i(v) = exp(-|v - c_i|^2 / (2 w^2)) * exp(i phi_i)`.
pub fn make_sensitivities(spec: &CoilSpec, grid: usize) -> Result<SensitivityMap> {
    spec.validate()?;
    let channels = spec
        .centers
        .iter()
        .zip(&spec.phases)
        .map(|(&(cx, cy), &phi)| {
            let phase = Complex64::from_polar(1.0, phi);
            Image::from_fn(grid, grid, |r, c| {
                let d2 = (voxel_coord(c, grid) - cx).powi(2) + (voxel_coord(r, grid) - cy).powi(2);
                phase * (-d2 / (2.0 * spec.width * spec.width)).exp()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SensitivityMap::new(channels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            rho_min: 0.0,
            rho_max: 0.2,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(0.0 <= self.rho_min && self.rho_min <= self.rho_max && self.rho_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= rho_min <= rho_max < 1, got [{}, {}]",
                self.rho_min, self.rho_max
            )));
        }
        Ok(())
    }
}

/// Per-channel noise std `tau_i = mean_mask |s_i x| / sqrt(2) * sigma` on each
/// axis, with pairwise correlations drawn uniformly from `[rho_min, rho_max]`.
/// Indefinite draws are projected onto the PSD cone.
pub fn make_noise_covariance<R: Rng + ?Sized>(
    sens: &SensitivityMap,
    phantom: &ComplexImage,
    mask: &Mask,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<NoiseCovariance> {
    spec.validate()?;
    phantom.ensure_same_dims(mask.image())?;
    if sens.dims() != phantom.dims() {
        return Err(Error::dims(phantom.dims(), sens.dims()));
    }
    let m = sens.channel_count();
    let tau: Vec<f64> = (0..m)
        .map(|i| {
            let s = sens.channel(i).data();
            let sum: f64 = mask
                .indices()
                .map(|v| (s[v] * phantom.data()[v]).norm())
                .sum();
            sum / mask.count() as f64 * FRAC_1_SQRT_2 * spec.sigma
        })
        .collect();
    let mut data = vec![0.0; m * m];
    for a in 0..m {
        data[a * m + a] = tau[a] * tau[a];
        for b in a + 1..m {
            let rho = if spec.rho_max > spec.rho_min {
                rng.gen_range(spec.rho_min..spec.rho_max)
            } else {
                spec.rho_min
            };
            data[a * m + b] = rho * tau[a] * tau[b];
            data[b * m + a] = data[a * m + b];
        }
    }
    Ok(NoiseCovariance::from_real(m, &data)?.project_psd())
}

/// Correlated complex channel noise `n = L z` with `L L^H = Psi` and `z` having
/// independent standard-normal real and imaginary parts, so each axis carries
/// covariance `Re(Psi)`. Draw order is voxel-major, then channel, real before imaginary.
pub fn sample_noise<R: Rng + ?Sized>(
    psi: &NoiseCovariance,
    dims: (usize, usize),
    rng: &mut R,
) -> Result<ChannelStack> {
    let l = psi.cholesky()?;
    let m = psi.channel_count();
    let (h, w) = dims;
    let mut channels = vec![vec![Complex64::default(); h * w]; m];
    let mut z = vec![Complex64::default(); m];
    for v in 0..h * w {
        for zk in z.iter_mut() {
            *zk = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        for (i, ch) in channels.iter_mut().enumerate() {
            let mut acc = Complex64::default();
            for k in 0..=i {
                acc += l[i * m + k] * z[k];
            }
            ch[v] = acc;
        }
    }
    ChannelStack::new(
        channels
            .into_iter()
            .map(|d| Image::from_vec(h, w, d))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Noise-free channel images `s_i x`.
pub fn clean_channels(phantom: &ComplexImage, sens: &SensitivityMap) -> Result<ChannelStack> {
    if sens.dims() != phantom.dims() {
        return Err(Error::dims(phantom.dims(), sens.dims()));
    }
    ChannelStack::new(
        (0..sens.channel_count())
            .map(|i| sens.channel(i).zip_map(phantom, |s, x| s * x))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// `y_i = s_i x + n_i` with `n` drawn by [`sample_noise`].
pub fn synthesize_acquisition<R: Rng + ?Sized>(
    phantom: &ComplexImage,
    sens: &SensitivityMap,
    psi: &NoiseCovariance,
    rng: &mut R,
) -> Result<ChannelStack> {
    if psi.channel_count() != sens.channel_count() {
        return Err(Error::dims(sens.channel_count(), psi.channel_count()));
    }
    let clean = clean_channels(phantom, sens)?;
    if psi.is_zero() {
        // Exact: adding +0.0 would flip the sign of negative zeros.
        return Ok(clean);
    }
    let noise = sample_noise(psi, phantom.dims(), rng)?;
    clean.add(&noise)
}

/// Everything generated for one simulated slice.
#[derive(Clone, Debug)]
pub struct SimulatedSlice {
    pub phantom: ComplexImage,
    pub mask: Mask,
    pub psi: NoiseCovariance,
    /// Noisy channel images.
    pub noisy: ChannelStack,
    /// A second, independent noisy realization of the same slice.
    pub noisy_repeat: ChannelStack,
    /// Noise-free full combination `|sum_l s_l^H s_l x|`, the reference for metrics.
    pub clean: RealImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub slices: usize,
    pub grid: usize,
    pub coils: CoilSpec,
    pub noise: NoiseSpec,
    /// Mask keeps voxels above this fraction of the phantom's peak magnitude.
    pub mask_threshold: f64,
}

impl DatasetSpec {
    pub const DESK_CHANNELS: usize = 16;
    pub const DESK_RING_RADIUS: f64 = 1.2;
    pub const DESK_COIL_WIDTH: f64 = 1.6;
    pub const DESK_PHASE_STEP: f64 = 0.25;

    /// 32x32 randomized heads seen by a 16-channel ring array.
    ///
    /// Broad, overlapping coil profiles keep a random half of the array
    /// covering the whole head, so half-array images look like full ones.
    pub fn desk(slices: usize) -> Self {
        Self {
            slices,
            grid: 32,
            coils: CoilSpec::ring(
                Self::DESK_CHANNELS,
                Self::DESK_RING_RADIUS,
                Self::DESK_COIL_WIDTH,
                Self::DESK_PHASE_STEP,
            ),
            noise: NoiseSpec::default(),
            mask_threshold: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub sens: SensitivityMap,
    pub slices: Vec<SimulatedSlice>,
}

/// Simulates one slice of `phantom` with noise at `spec.sigma`.
pub fn simulate_slice<R: Rng + ?Sized>(
    phantom: ComplexImage,
    sens: &SensitivityMap,
    noise: &NoiseSpec,
    mask_threshold: f64,
    rng: &mut R,
) -> Result<SimulatedSlice> {
    let mask = Mask::from_threshold(&crate::imaging::magnitude(&phantom), mask_threshold)?;
    let psi = make_noise_covariance(sens, &phantom, &mask, noise, rng)?;
    let noisy = synthesize_acquisition(&phantom, sens, &psi, rng)?;
    let noisy_repeat = synthesize_acquisition(&phantom, sens, &psi, rng)?;
    let clean = combine_all(&clean_channels(&phantom, sens)?, sens)?;
    Ok(SimulatedSlice {
        phantom,
        mask,
        psi,
        noisy,
        noisy_repeat,
        clean,
    })
}

/// Random-head dataset; deterministic for a given RNG state.
pub fn simulate_dataset<R: Rng + ?Sized>(spec: &DatasetSpec, rng: &mut R) -> Result<Dataset> {
    if spec.slices == 0 {
        return Err(Error::InvalidArgument(
            "dataset needs at least one slice".into(),
        ));
    }
    let sens = make_sensitivities(&spec.coils, spec.grid)?;
    let slices = (0..spec.slices)
        .map(|_| {
            let phantom = make_phantom(&PhantomSpec::random_head(spec.grid, rng))?;
            simulate_slice(phantom, &sens, &spec.noise, spec.mask_threshold, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { sens, slices })
}

impl SimulatedSlice {
    /// The same slice with channel noise rescaled to level `sigma`, given the
    /// level `base_sigma` it was generated at. Correlations are kept.
    pub fn at_noise_level<R: Rng + ?Sized>(
        &self,
        sens: &SensitivityMap,
        base_sigma: f64,
        sigma: f64,
        rng: &mut R,
    ) -> Result<SimulatedSlice> {
        if !(base_sigma > 0.0) {
            return Err(Error::InvalidArgument(
                "base noise level must be > 0".into(),
            ));
        }
        let psi = self.psi.scaled((sigma / base_sigma).powi(2));
        let noisy = synthesize_acquisition(&self.phantom, sens, &psi, rng)?;
        let noisy_repeat = synthesize_acquisition(&self.phantom, sens, &psi, rng)?;
        Ok(SimulatedSlice {
            phantom: self.phantom.clone(),
            mask: self.mask.clone(),
            psi,
            noisy,
            noisy_repeat,
            clean: self.clean.clone(),
        })
    }
}
