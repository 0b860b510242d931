//! Training-pair generation from one multi-channel acquisition.
//!
//! The channels are split into two groups J and K. Each group is combined
//! into a magnitude image (`I_input` from J, `I_label` from K). The label is
//! then decorrelated from the input per voxel with the 2x2 Cholesky whitening
//! `I'_label = alpha * I_input + beta * I_label`, where
//!
//! ```text
//! D     = var_j * var_k - cov_jk^2
//! alpha = -cov_jk / sqrt(D)
//! beta  =  var_j  / sqrt(D)
//! ```
//!
//! which zeroes `cov(I_input, I'_label)` and keeps `var(I'_label) = var_j`.
//! The label's effective sensitivity follows the same linear map,
//! `S'_label = alpha * S_J + beta * S_K`, so `(S_J / S'_label) * I'_label` and
//! `I_input` share one noise-free image. The ratio is applied inside the loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{
    coil_combine, effective_sensitivity, magnitude, propagate_noise_stats, ChannelStack, Image,
    Mask, NoiseCovariance, RealImage, SensitivityMap, VoxelStats,
};
use crate::simulator::sample_noise;

/// Relative determinant below which a voxel is treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-9;

/// Fraction of the peak group sensitivity below which a voxel counts as uncovered.
pub const COVERAGE_FRACTION: f64 = 1e-3;

/// Disjoint channel groups covering all channels, sizes differing by at most one.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChannelSplit {
    group_j: Vec<usize>,
    group_k: Vec<usize>,
}

impl ChannelSplit {
    pub fn new(channels: usize, mut group_j: Vec<usize>, mut group_k: Vec<usize>) -> Result<Self> {
        group_j.sort_unstable();
        group_k.sort_unstable();
        let mut seen = vec![false; channels];
        for &c in group_j.iter().chain(&group_k) {
            if c >= channels {
                return Err(Error::ChannelOutOfRange { index: c, channels });
            }
            if seen[c] {
                return Err(Error::OverlappingGroups(c));
            }
            seen[c] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "channel split must cover every channel".into(),
            ));
        }
        if group_j.len().abs_diff(group_k.len()) > 1 {
            return Err(Error::InvalidArgument(format!(
                "unbalanced split {} / {}",
                group_j.len(),
                group_k.len()
            )));
        }
        if group_j.is_empty() || group_k.is_empty() {
            return Err(Error::EmptyGroup);
        }
        Ok(Self { group_j, group_k })
    }

    pub fn group_j(&self) -> &[usize] {
        &self.group_j
    }

    pub fn group_k(&self) -> &[usize] {
        &self.group_k
    }

    pub fn channel_count(&self) -> usize {
        self.group_j.len() + self.group_k.len()
    }

    pub fn swapped(&self) -> Self {
        Self {
            group_j: self.group_k.clone(),
            group_k: self.group_j.clone(),
        }
    }
}

/// Uniformly random balanced partition. For odd `m` the extra channel goes to
/// either group with equal probability.
pub fn split_channels<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<ChannelSplit> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 channels to split, got {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let size_j = if m % 2 == 1 && rng.gen_bool(0.5) {
        m / 2 + 1
    } else {
        m / 2
    };
    let group_k = order.split_off(size_j);
    ChannelSplit::new(m, order, group_k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningMaps {
    pub alpha: RealImage,
    pub beta: RealImage,
    /// Voxels that took the degenerate fallback.
    pub fallback: Image<bool>,
}

impl WhiteningMaps {
    pub fn fallback_count(&self) -> usize {
        self.fallback.data().iter().filter(|&&b| b).count()
    }
}

/// Per-voxel whitening coefficients from the propagated noise statistics.
///
/// Degenerate voxels (`D <= eps * var_j * var_k`, or `var_k = 0`) fall back to
/// pure variance matching `alpha = 0, beta = sqrt(var_j / var_k)`, or to
/// `alpha = 0, beta = 1` when `var_k = 0`.
pub fn whitening_coefficients(stats: &VoxelStats) -> Result<WhiteningMaps> {
    stats.var_j.ensure_same_dims(&stats.var_k)?;
    stats.var_j.ensure_same_dims(&stats.cov_jk)?;
    let (h, w) = stats.var_j.dims();
    let n = h * w;
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut fallback = vec![false; n];
    for v in 0..n {
        let (sj, sk, sjk) = (
            stats.var_j.data()[v],
            stats.var_k.data()[v],
            stats.cov_jk.data()[v],
        );
        let det = sj * sk - sjk * sjk;
        if sk > 0.0 && det > DEGENERACY_EPS * sj * sk {
            let root = det.sqrt();
            alpha[v] = -sjk / root;
            beta[v] = sj / root;
        } else {
            fallback[v] = true;
            beta[v] = if sk > 0.0 { (sj / sk).sqrt() } else { 1.0 };
        }
    }
    Ok(WhiteningMaps {
        alpha: Image::from_vec(h, w, alpha)?,
        beta: Image::from_vec(h, w, beta)?,
        fallback: Image::from_vec(h, w, fallback)?,
    })
}

/// Analytic `cov(I_input, alpha I_input + beta I_label)` per voxel.
pub fn whitened_cross_covariance(stats: &VoxelStats, maps: &WhiteningMaps) -> RealImage {
    let n = stats.var_j.len();
    let data = (0..n)
        .map(|v| {
            maps.alpha.data()[v] * stats.var_j.data()[v]
                + maps.beta.data()[v] * stats.cov_jk.data()[v]
        })
        .collect();
    Image::from_vec(stats.var_j.height(), stats.var_j.width(), data).expect("shape preserved")
}

/// Analytic `var(alpha I_input + beta I_label)` per voxel.
pub fn whitened_label_variance(stats: &VoxelStats, maps: &WhiteningMaps) -> RealImage {
    let n = stats.var_j.len();
    let data = (0..n)
        .map(|v| {
            let (a, b) = (maps.alpha.data()[v], maps.beta.data()[v]);
            let (sj, sk, sjk) = (
                stats.var_j.data()[v],
                stats.var_k.data()[v],
                stats.cov_jk.data()[v],
            );
            a * a * sj + b * b * sk + 2.0 * a * b * sjk
        })
        .collect();
    Image::from_vec(stats.var_j.height(), stats.var_j.width(), data).expect("shape preserved")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairOptions {
    /// Decorrelate the label from the input.
    pub whiten: bool,
    /// Carry the sensitivity maps; when off both maps are 1.
    pub normalize: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            whiten: true,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairDiagnostics {
    /// Masked voxels that took the whitening fallback.
    pub fallback_voxels: usize,
    /// Masked voxels with `S'_label <= 0`.
    pub nonpositive_label_sensitivity: usize,
    /// Masked fraction where `S_J < COVERAGE_FRACTION * max(S_J)`.
    pub uncovered_fraction_j: f64,
    /// Masked fraction where `S_K < COVERAGE_FRACTION * max(S_K)`.
    pub uncovered_fraction_k: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub input: RealImage,
    pub label: RealImage,
    pub sens_input: RealImage,
    pub sens_label: RealImage,
    pub mask: Mask,
    pub diagnostics: PairDiagnostics,
}

impl TrainingPair {
    /// Label rescaled onto the input's sensitivity, `(S_J / S'_label) * I'_label`.
    /// Voxels with `S'_label = 0` map to 0.
    pub fn normalized_label(&self) -> RealImage {
        let data = (0..self.label.len())
            .map(|v| {
                let sl = self.sens_label.data()[v];
                if sl == 0.0 {
                    0.0
                } else {
                    self.sens_input.data()[v] / sl * self.label.data()[v]
                }
            })
            .collect();
        Image::from_vec(self.label.height(), self.label.width(), data)
            .unwrap_or_else(|_| self.label.clone())
    }
}

fn masked_fraction_below(img: &RealImage, mask: &Mask, fraction: f64) -> f64 {
    let level = fraction * img.max_value();
    mask.indices().filter(|&v| img.data()[v] < level).count() as f64 / mask.count() as f64
}

/// Builds one training pair from the acquisition `stack` under `split`.
pub fn make_training_pair(
    stack: &ChannelStack,
    sens: &SensitivityMap,
    psi: &NoiseCovariance,
    split: &ChannelSplit,
    mask: &Mask,
    options: PairOptions,
) -> Result<TrainingPair> {
    if split.channel_count() != stack.channel_count() {
        return Err(Error::dims(stack.channel_count(), split.channel_count()));
    }
    if mask.dims() != stack.dims() {
        return Err(Error::dims(stack.dims(), mask.dims()));
    }
    let (gj, gk) = (split.group_j(), split.group_k());
    let input = magnitude(&coil_combine(stack, sens, gj)?);
    let raw_label = magnitude(&coil_combine(stack, sens, gk)?);
    let sens_j = effective_sensitivity(sens, gj)?;
    let sens_k = effective_sensitivity(sens, gk)?;

    let mut diagnostics = PairDiagnostics {
        uncovered_fraction_j: masked_fraction_below(&sens_j, mask, COVERAGE_FRACTION),
        uncovered_fraction_k: masked_fraction_below(&sens_k, mask, COVERAGE_FRACTION),
        ..PairDiagnostics::default()
    };

    let (label, sens_label) = if options.whiten {
        let stats = propagate_noise_stats(sens, psi, gj, gk)?;
        let maps = whitening_coefficients(&stats)?;
        diagnostics.fallback_voxels = mask.indices().filter(|&v| maps.fallback.data()[v]).count();
        let lin = |a: &RealImage, b: &RealImage| -> Result<RealImage> {
            let ab = maps.alpha.zip_map(a, |al, x| al * x)?;
            let bb = maps.beta.zip_map(b, |be, x| be * x)?;
            ab.zip_map(&bb, |p, q| p + q)
        };
        (lin(&input, &raw_label)?, lin(&sens_j, &sens_k)?)
    } else {
        (raw_label, sens_k)
    };

    diagnostics.nonpositive_label_sensitivity = mask
        .indices()
        .filter(|&v| sens_label.data()[v] <= 0.0)
        .count();
    if diagnostics.nonpositive_label_sensitivity > 0 {
        log::warn!(
            "degenerate pair: {} masked voxels with non-positive label sensitivity",
            diagnostics.nonpositive_label_sensitivity
        );
    }

    let (sens_input, sens_label) = if options.normalize {
        (sens_j, sens_label)
    } else {
        let ones = Image::filled(input.height(), input.width(), 1.0)?;
        (ones.clone(), ones)
    };

    Ok(TrainingPair {
        input,
        label,
        sens_input,
        sens_label,
        mask: mask.clone(),
        diagnostics,
    })
}

/// Inference input: magnitude of the matched-filter combination of every channel.
pub fn combine_all(stack: &ChannelStack, sens: &SensitivityMap) -> Result<RealImage> {
    let all: Vec<usize> = (0..stack.channel_count()).collect();
    Ok(magnitude(&coil_combine(stack, sens, &all)?))
}

/// Empirical noise correlation between `I_input` and the label, before and after whitening.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningDiagnostic {
    pub realizations: usize,
    /// Masked voxels that did not take the whitening fallback.
    pub voxels: usize,
    /// Mean |rho| between `I_input` and `I_label`.
    pub mean_abs_corr_raw: f64,
    /// Mean |rho| between `I_input` and `I'_label`.
    pub mean_abs_corr_whitened: f64,
    /// Mean analytic rho between `I_input` and `I_label`.
    pub mean_predicted_corr_raw: f64,
}

#[derive(Clone, Default)]
struct PairMoments {
    a: Vec<f64>,
    b: Vec<f64>,
    aa: Vec<f64>,
    bb: Vec<f64>,
    ab: Vec<f64>,
}

impl PairMoments {
    fn new(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            b: vec![0.0; n],
            aa: vec![0.0; n],
            bb: vec![0.0; n],
            ab: vec![0.0; n],
        }
    }
}

/// Monte-Carlo check of the whitening: draws `realizations` independent noise
/// fields on top of `clean` (noise-free channel images), forms `I_input` and
/// `I_label` for `split`, and measures their per-voxel noise correlation
/// before and after applying the analytic whitening coefficients.
pub fn whitening_diagnostic(
    clean: &ChannelStack,
    sens: &SensitivityMap,
    psi: &NoiseCovariance,
    split: &ChannelSplit,
    mask: &Mask,
    realizations: usize,
    seed: u64,
) -> Result<WhiteningDiagnostic> {
    if realizations < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 noise realizations".into(),
        ));
    }
    let (gj, gk) = (split.group_j(), split.group_k());
    let stats = propagate_noise_stats(sens, psi, gj, gk)?;
    let maps = whitening_coefficients(&stats)?;
    let ref_j = magnitude(&coil_combine(clean, sens, gj)?);
    let ref_k = magnitude(&coil_combine(clean, sens, gk)?);
    let n = ref_j.len();
    let mut mom = PairMoments::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..realizations {
        let noisy = clean.add(&sample_noise(psi, clean.dims(), &mut rng)?)?;
        let ij = magnitude(&coil_combine(&noisy, sens, gj)?);
        let ik = magnitude(&coil_combine(&noisy, sens, gk)?);
        // Centre on the noise-free magnitudes to keep the sums well conditioned.
        for v in 0..n {
            let a = ij.data()[v] - ref_j.data()[v];
            let b = ik.data()[v] - ref_k.data()[v];
            mom.a[v] += a;
            mom.b[v] += b;
            mom.aa[v] += a * a;
            mom.bb[v] += b * b;
            mom.ab[v] += a * b;
        }
    }
    let nf = realizations as f64;
    let (mut raw, mut white, mut pred, mut count) = (0.0, 0.0, 0.0, 0usize);
    for v in mask.indices() {
        if maps.fallback.data()[v] {
            continue;
        }
        let (ma, mb) = (mom.a[v] / nf, mom.b[v] / nf);
        let var_a = mom.aa[v] / nf - ma * ma;
        let var_b = mom.bb[v] / nf - mb * mb;
        let cov_ab = mom.ab[v] / nf - ma * mb;
        let (al, be) = (maps.alpha.data()[v], maps.beta.data()[v]);
        let cov_aw = al * var_a + be * cov_ab;
        let var_w = al * al * var_a + be * be * var_b + 2.0 * al * be * cov_ab;
        raw += (cov_ab / (var_a * var_b).sqrt()).abs();
        white += (cov_aw / (var_a * var_w).sqrt()).abs();
        pred += stats.cov_jk.data()[v] / (stats.var_j.data()[v] * stats.var_k.data()[v]).sqrt();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "no non-degenerate masked voxels".into(),
        ));
    }
    let c = count as f64;
    Ok(WhiteningDiagnostic {
        realizations,
        voxels: count,
        mean_abs_corr_raw: raw / c,
        mean_abs_corr_whitened: white / c,
        mean_predicted_corr_raw: pred / c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ComplexImage;
    use crate::simulator::{
        clean_channels, make_phantom, make_sensitivities, CoilSpec, PhantomSpec,
    };
    use num_complex::Complex64;
    use std::collections::HashSet;

    fn real(h: usize, w: usize, v: f64) -> RealImage {
        Image::filled(h, w, v).unwrap()
    }

    fn stats(sj: f64, sk: f64, sjk: f64) -> VoxelStats {
        VoxelStats {
            var_j: real(1, 1, sj),
            var_k: real(1, 1, sk),
            cov_jk: real(1, 1, sjk),
        }
    }

    #[test]
    fn two_channel_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = HashSet::new();
        for _ in 0..50 {
            let s = split_channels(2, &mut rng).unwrap();
            assert_eq!(s.group_j().len(), 1);
            seen.insert(s);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn odd_split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sizes = HashSet::new();
        for _ in 0..100 {
            let s = split_channels(5, &mut rng).unwrap();
            sizes.insert((s.group_j().len(), s.group_k().len()));
        }
        assert_eq!(sizes, HashSet::from([(2, 3), (3, 2)]));
    }

    #[test]
    fn split_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = [0usize; 8];
        let draws = 10_000;
        for _ in 0..draws {
            for &c in split_channels(8, &mut rng).unwrap().group_j() {
                hits[c] += 1;
            }
        }
        for h in hits {
            assert!((h as f64 / draws as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn split_errors_and_determinism() {
        assert!(split_channels(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let a = split_channels(9, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = split_channels(9, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(ChannelSplit::new(4, vec![0, 1], vec![1, 2]).is_err());
        assert!(ChannelSplit::new(4, vec![0], vec![1, 2, 3]).is_err());
        assert!(ChannelSplit::new(4, vec![0, 1], vec![2]).is_err());
    }

    #[test]
    fn whitening_independent_equal_variance() {
        let m = whitening_coefficients(&stats(1.0, 1.0, 0.0)).unwrap();
        assert_eq!((m.alpha.data()[0], m.beta.data()[0]), (0.0, 1.0));
    }

    #[test]
    fn whitening_pure_variance_matching() {
        let m = whitening_coefficients(&stats(4.0, 1.0, 0.0)).unwrap();
        assert!(m.alpha.data()[0] == 0.0);
        assert!((m.beta.data()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn whitening_correlated_closed_form_and_monte_carlo() {
        let st = stats(1.0, 1.0, 0.5);
        let m = whitening_coefficients(&st).unwrap();
        let (a, b) = (m.alpha.data()[0], m.beta.data()[0]);
        assert!((a + 0.57735).abs() < 1e-5);
        assert!((b - 1.15470).abs() < 1e-5);

        // MC oracle: draw (u, w) with unit variances and covariance 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        let (mut s_uv, mut s_uu) = (0.0, 0.0);
        for _ in 0..n {
            let z1: f64 = rng.sample(rand_distr::StandardNormal);
            let z2: f64 = rng.sample(rand_distr::StandardNormal);
            let u = z1;
            let w = 0.5 * z1 + 0.75f64.sqrt() * z2;
            let v = a * u + b * w;
            s_uv += u * v;
            s_uu += u * u;
        }
        assert!((s_uv / n as f64).abs() < 0.01 * (s_uu / n as f64));
    }

    #[test]
    fn whitening_fallbacks() {
        let m = whitening_coefficients(&stats(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            (m.alpha.data()[0], m.beta.data()[0], m.fallback_count()),
            (0.0, 1.0, 1)
        );
        let m = whitening_coefficients(&stats(2.0, 0.5, 1.0)).unwrap();
        assert_eq!(m.fallback_count(), 1);
        assert_eq!(m.alpha.data()[0], 0.0);
        assert!((m.beta.data()[0] - 2.0).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn whitening_decorrelates_and_preserves_variance(
                sj in 0.01f64..10.0, sk in 0.01f64..10.0, r in -0.95f64..0.95, c in 0.01f64..100.0,
            ) {
                let st = stats(sj, sk, r * (sj * sk).sqrt());
                let m = whitening_coefficients(&st).unwrap();
                prop_assert_eq!(m.fallback_count(), 0);
                let cov = whitened_cross_covariance(&st, &m).data()[0];
                prop_assert!(cov.abs() <= 1e-10 * sj.max(1.0));
                let var = whitened_label_variance(&st, &m).data()[0];
                prop_assert!((var - sj).abs() <= 1e-10 * sj);

                let scaled = stats(sj * c, sk * c, r * (sj * sk).sqrt() * c);
                let ms = whitening_coefficients(&scaled).unwrap();
                prop_assert!((ms.alpha.data()[0] - m.alpha.data()[0]).abs() <= 1e-12 * (1.0 + m.alpha.data()[0].abs()));
                prop_assert!((ms.beta.data()[0] - m.beta.data()[0]).abs() <= 1e-12 * (1.0 + m.beta.data()[0].abs()));
            }
        }
    }

    fn fixture(m: usize) -> (ComplexImage, SensitivityMap, Mask) {
        let phantom = make_phantom(&PhantomSpec::shepp_logan(16)).unwrap();
        let sens = make_sensitivities(&CoilSpec::ring(m, 1.2, 0.8, 0.3), 16).unwrap();
        let mask = Mask::from_threshold(&magnitude(&phantom), 0.05).unwrap();
        (phantom, sens, mask)
    }

    #[test]
    fn noise_free_pairs_are_consistent() {
        let (x, sens, mask) = fixture(6);
        let stack = clean_channels(&x, &sens).unwrap();
        let split = split_channels(6, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let pair = make_training_pair(
            &stack,
            &sens,
            &NoiseCovariance::zeros(6).unwrap(),
            &split,
            &mask,
            PairOptions::default(),
        )
        .unwrap();
        let lhs = pair.normalized_label();
        for v in mask.indices() {
            let want = pair.input.data()[v];
            assert!((lhs.data()[v] - want).abs() <= 1e-10 * want.abs().max(1e-300));
        }
    }

    #[test]
    fn independent_equal_noise_leaves_label_alone() {
        let (h, w) = (4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: ComplexImage =
            Image::from_fn(h, w, |_, _| Complex64::new(rng.gen_range(1.0..2.0), 0.0)).unwrap();
        let ones = Image::filled(h, w, Complex64::new(1.0, 0.0)).unwrap();
        let sens = SensitivityMap::new(vec![ones.clone(), ones]).unwrap();
        let psi = NoiseCovariance::identity(2).unwrap();
        let stack = crate::simulator::synthesize_acquisition(&x, &sens, &psi, &mut rng).unwrap();
        let split = ChannelSplit::new(2, vec![0], vec![1]).unwrap();
        let mask = Mask::full(h, w).unwrap();
        let pair =
            make_training_pair(&stack, &sens, &psi, &split, &mask, PairOptions::default()).unwrap();
        let raw = magnitude(stack.channel(1));
        assert_eq!(pair.label, raw);
        assert!(pair.sens_label.data().iter().all(|&v| v == 1.0));
        assert!(pair.sens_input.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn whiten_off_keeps_raw_label_and_normalize_off_drops_maps() {
        let (x, sens, mask) = fixture(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let psi = NoiseCovariance::from_real(
            4,
            &[
                1.0, 0.2, 0.2, 0.2, 0.2, 1.0, 0.2, 0.2, 0.2, 0.2, 1.0, 0.2, 0.2, 0.2, 0.2, 1.0,
            ],
        )
        .unwrap()
        .scaled(0.01);
        let stack = crate::simulator::synthesize_acquisition(&x, &sens, &psi, &mut rng).unwrap();
        let split = ChannelSplit::new(4, vec![0, 2], vec![1, 3]).unwrap();
        let off = PairOptions {
            whiten: false,
            normalize: true,
        };
        let pair = make_training_pair(&stack, &sens, &psi, &split, &mask, off).unwrap();
        assert_eq!(
            pair.label,
            magnitude(&coil_combine(&stack, &sens, &[1, 3]).unwrap())
        );
        assert_eq!(
            pair.sens_label,
            effective_sensitivity(&sens, &[1, 3]).unwrap()
        );
        let unnorm = PairOptions {
            whiten: true,
            normalize: false,
        };
        let pair = make_training_pair(&stack, &sens, &psi, &split, &mask, unnorm).unwrap();
        assert!(pair
            .sens_input
            .data()
            .iter()
            .chain(pair.sens_label.data())
            .all(|&v| v == 1.0));
    }

    #[test]
    fn pair_rejects_mismatched_split() {
        let (x, sens, mask) = fixture(4);
        let stack = clean_channels(&x, &sens).unwrap();
        let split = ChannelSplit::new(2, vec![0], vec![1]).unwrap();
        assert!(make_training_pair(
            &stack,
            &sens,
            &NoiseCovariance::zeros(4).unwrap(),
            &split,
            &mask,
            PairOptions::default()
        )
        .is_err());
    }

    #[test]
    fn combine_all_definitions() {
        let (x, sens, _) = fixture(4);
        let clean = clean_channels(&x, &sens).unwrap();
        let out = combine_all(&clean, &sens).unwrap();
        let two_step = magnitude(&coil_combine(&clean, &sens, &[0, 1, 2, 3]).unwrap());
        assert_eq!(out, two_step);
        let gain = effective_sensitivity(&sens, &[0, 1, 2, 3]).unwrap();
        for v in 0..out.len() {
            let want = gain.data()[v] * x.data()[v].norm();
            assert!((out.data()[v] - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }

    #[test]
    fn whitening_removes_correlation_empirically() {
        let (x, sens, mask) = fixture(4);
        let clean = clean_channels(&x, &sens).unwrap();
        let rho = 0.2;
        let mut p = vec![rho; 16];
        for i in 0..4 {
            p[i * 4 + i] = 1.0;
        }
        // High-SNR regime keeps the magnitude noise Gaussian.
        let psi = NoiseCovariance::from_real(4, &p).unwrap().scaled(1e-4);
        let split = ChannelSplit::new(4, vec![0, 1], vec![2, 3]).unwrap();
        let d = whitening_diagnostic(&clean, &sens, &psi, &split, &mask, 100_000, 8).unwrap();
        assert!(d.mean_abs_corr_whitened < 0.01, "{d:?}");
        assert!(d.mean_abs_corr_raw > 0.05, "{d:?}");
    }
}
