//! Loss, training loop and inference paths.

mod inference;
mod loss;

pub use inference::{denoise, denoise_image, denoise_two_group_average};
pub use loss::{batch_loss, c2c_loss, masked_mse, LossTarget};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{Mask, RealImage};
use crate::metrics::psnr;
use crate::neural::{
    adam_step, init_network, AdamState, LearningRateSchedule, NetworkConfig, NetworkParams, Tensor,
};
use crate::pairgen::{
    combine_all, make_training_pair, split_channels, ChannelSplit, PairOptions, TrainingPair,
};
use crate::simulator::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Channel-split pairs regenerated every epoch.
    Coil2Coil,
    /// Two independent noisy full combinations.
    Noise2Noise,
    /// Noisy full combination against the clean image.
    Noise2Clean,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Coil2Coil => "c2c",
            TrainMode::Noise2Noise => "n2n",
            TrainMode::Noise2Clean => "n2cl",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c2c" => Ok(TrainMode::Coil2Coil),
            "n2n" => Ok(TrainMode::Noise2Noise),
            "n2cl" => Ok(TrainMode::Noise2Clean),
            other => Err(Error::InvalidArgument(format!(
                "unknown training mode {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LearningRateSchedule,
    pub mode: TrainMode,
    pub whiten: bool,
    pub normalize: bool,
    pub seed: u64,
    /// Checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// 30 epochs, batch 8, `1e-4 * 0.87^epoch`.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            schedule: LearningRateSchedule::default(),
            mode: TrainMode::Coil2Coil,
            whiten: true,
            normalize: true,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.schedule.base >= 0.0 && self.schedule.base.is_finite())
            || !(self.schedule.decay > 0.0)
        {
            return Err(Error::InvalidArgument(
                "learning-rate schedule must be non-negative and finite".into(),
            ));
        }
        Ok(())
    }

    fn pair_options(&self) -> PairOptions {
        PairOptions {
            whiten: self.whiten,
            normalize: self.normalize,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub wall_seconds: f64,
    pub validation_psnr: Option<f64>,
    /// Split drawn for the first slice (C2C only).
    pub first_split: Option<ChannelSplit>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// Per-slice z-score from masked statistics of the network input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceNormalization {
    pub mean: f64,
    pub std: f64,
}

impl SliceNormalization {
    /// A constant input gets unit scale.
    pub fn from_masked(image: &RealImage, mask: &Mask) -> Result<Self> {
        let mean = mask.mean_of(image)?;
        let var = mask
            .indices()
            .map(|v| (image.data()[v] - mean).powi(2))
            .sum::<f64>()
            / mask.count() as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn apply(&self, image: &RealImage) -> RealImage {
        image.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert(&self, image: &RealImage) -> RealImage {
        image.map(|v| v * self.std + self.mean)
    }
}

/// One z-scored training example.
#[derive(Clone, Debug)]
pub(crate) struct Sample {
    input: RealImage,
    target: LossTarget,
}

impl Sample {
    /// `(S'·(s·p + mu) - S_J·I')^2 = s^2 (S'·p - (S_J·I' - S'·mu)/s)^2`, so the
    /// z-scored target is `(S_J·I' - S'·mu)/s` with the same weight `S'`.
    pub(crate) fn from_pair(pair: &TrainingPair) -> Result<Self> {
        let norm = SliceNormalization::from_masked(&pair.input, &pair.mask)?;
        let weighted = pair.sens_input.zip_map(&pair.label, |s, l| s * l)?;
        let target = weighted.zip_map(&pair.sens_label, |t, sl| (t - sl * norm.mean) / norm.std)?;
        Ok(Self {
            input: norm.apply(&pair.input),
            target: LossTarget::new(pair.sens_label.clone(), target, pair.mask.clone())?,
        })
    }

    pub(crate) fn supervised(input: &RealImage, label: &RealImage, mask: &Mask) -> Result<Self> {
        input.ensure_same_dims(label)?;
        let norm = SliceNormalization::from_masked(input, mask)?;
        Ok(Self {
            input: norm.apply(input),
            target: LossTarget::mse(norm.apply(label), mask.clone())?,
        })
    }
}

fn epoch_samples<R: Rng + ?Sized>(
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(Vec<Sample>, Option<ChannelSplit>)> {
    let mut first_split = None;
    let mut out = Vec::with_capacity(data.slices.len());
    for slice in &data.slices {
        let sample = match config.mode {
            TrainMode::Coil2Coil => {
                let split = split_channels(slice.noisy.channel_count(), rng)?;
                let pair = make_training_pair(
                    &slice.noisy,
                    &data.sens,
                    &slice.psi,
                    &split,
                    &slice.mask,
                    config.pair_options(),
                )?;
                first_split.get_or_insert(split);
                Sample::from_pair(&pair)?
            }
            TrainMode::Noise2Noise => {
                let a = combine_all(&slice.noisy, &data.sens)?;
                let b = combine_all(&slice.noisy_repeat, &data.sens)?;
                Sample::supervised(&a, &b, &slice.mask)?
            }
            TrainMode::Noise2Clean => {
                let a = combine_all(&slice.noisy, &data.sens)?;
                Sample::supervised(&a, &slice.clean, &slice.mask)?
            }
        };
        out.push(sample);
    }
    Ok((out, first_split))
}

/// Mean pSNR of the full-combination denoised images against the clean references.
pub fn validation_psnr(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for slice in &data.slices {
        let out = denoise(params, &slice.noisy, &data.sens, &slice.mask)?;
        total += psnr(&out, &slice.clean, &slice.mask)?;
    }
    Ok(total / data.slices.len() as f64)
}

/// Mean pSNR of the noisy full combinations against the clean references.
pub fn input_psnr(data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for slice in &data.slices {
        total += psnr(
            &combine_all(&slice.noisy, &data.sens)?,
            &slice.clean,
            &slice.mask,
        )?;
    }
    Ok(total / data.slices.len() as f64)
}

/// Trains a fresh network. See [`train_with`].
pub fn train(
    data: &Dataset,
    validation: Option<&Dataset>,
    net_config: &NetworkConfig,
    config: &TrainConfig,
) -> Result<(NetworkParams, TrainLog)> {
    train_with(data, validation, net_config, config, |_, _| Ok(()))
}

/// Trains a fresh network, calling `on_checkpoint(epoch, params)` after every
/// `checkpoint_every`-th epoch and after the last.
///
/// The initial weights and all data-side randomness come from two
/// independent streams of `ChaCha8Rng::seed_from_u64(config.seed)`.
pub fn train_with(
    data: &Dataset,
    validation: Option<&Dataset>,
    net_config: &NetworkConfig,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &NetworkParams) -> Result<()>,
) -> Result<(NetworkParams, TrainLog)> {
    config.validate()?;
    if data.slices.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.mode == TrainMode::Coil2Coil && data.sens.channel_count() < 2 {
        return Err(Error::InvalidArgument(
            "coil-split training needs at least 2 channels".into(),
        ));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(1);

    let mut params = init_network(net_config, &mut init_rng)?;
    let mut adam = AdamState::new(&params);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.slices.len()).collect();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.schedule.at(epoch);
        let (samples, first_split) = epoch_samples(data, config, &mut data_rng)?;
        order.shuffle(&mut data_rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<RealImage> = chunk.iter().map(|&i| samples[i].input.clone()).collect();
            let targets: Vec<LossTarget> =
                chunk.iter().map(|&i| samples[i].target.clone()).collect();
            let x = Tensor::from_images(&inputs)?;
            let (out, cache) = params.forward_train(&x)?;
            let (loss, grad) = batch_loss(&out, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(epoch));
            }
            let grads = params.backward(&cache, &grad)?;
            adam_step(&mut params, &grads, &mut adam, lr)?;
            loss_sum += loss;
            batches += 1;
        }
        let validation_psnr = validation
            .map(|v| validation_psnr(&params, v))
            .transpose()?;
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / batches as f64,
            learning_rate: lr,
            wall_seconds: start.elapsed().as_secs_f64(),
            validation_psnr,
            first_split,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} lr {:.3e}{}",
            entry.mean_loss,
            lr,
            validation_psnr.map_or(String::new(), |p| format!(" val pSNR {p:.3} dB"))
        );
        log.epochs.push(entry);
        let last = epoch + 1 == config.epochs;
        if last || (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
            on_checkpoint(epoch, &params)?;
        }
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{magnitude, Image, NoiseCovariance, SensitivityMap};
    use crate::neural::Mode;
    use crate::pairgen::ChannelSplit;
    use crate::simulator::{simulate_dataset, synthesize_acquisition, DatasetSpec};
    use num_complex::Complex64;
    use std::collections::HashSet;

    fn tiny_dataset(slices: usize, seed: u64) -> Dataset {
        let mut spec = DatasetSpec::desk(slices);
        spec.grid = 16;
        simulate_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn tiny_net() -> NetworkConfig {
        NetworkConfig {
            depth: 3,
            features: 4,
            ..NetworkConfig::desk()
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            TrainMode::Coil2Coil,
            TrainMode::Noise2Noise,
            TrainMode::Noise2Clean,
        ] {
            assert_eq!(m.to_string().parse::<TrainMode>().unwrap(), m);
        }
        assert!("n2v".parse::<TrainMode>().is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::desk()
        };
        assert!(train(&tiny_dataset(2, 0), None, &tiny_net(), &cfg).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = tiny_dataset(4, 1);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            schedule: LearningRateSchedule {
                base: 0.0,
                decay: 0.87,
            },
            ..TrainConfig::desk()
        };
        let (params, log) = train(&data, None, &tiny_net(), &cfg).unwrap();
        let init = init_network(&tiny_net(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        assert_eq!(params.parameters(), init.parameters());
        assert_eq!(log.epochs.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(6, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            schedule: LearningRateSchedule {
                base: 1e-3,
                decay: 0.87,
            },
            seed: 11,
            ..TrainConfig::desk()
        };
        let (pa, la) = train(&data, Some(&data), &tiny_net(), &cfg).unwrap();
        let (pb, lb) = train(&data, Some(&data), &tiny_net(), &cfg).unwrap();
        assert_eq!(pa, pb);
        let strip = |l: &TrainLog| {
            l.epochs
                .iter()
                .map(|e| {
                    (
                        e.mean_loss,
                        e.learning_rate,
                        e.validation_psnr,
                        e.first_split.clone(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&la), strip(&lb));
    }

    #[test]
    fn epochs_regroup_channels() {
        let data = tiny_dataset(2, 3);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 2,
            ..TrainConfig::desk()
        };
        let tiny = NetworkConfig {
            depth: 2,
            features: 1,
            kernel: 1,
            ..NetworkConfig::desk()
        };
        let (_, log) = train(&data, None, &tiny, &cfg).unwrap();
        let distinct: HashSet<ChannelSplit> = log
            .epochs
            .iter()
            .filter_map(|e| e.first_split.clone())
            .collect();
        assert_eq!(data.sens.channel_count(), DatasetSpec::DESK_CHANNELS);
        assert!(distinct.len() >= 5, "{}", distinct.len());
    }

    #[test]
    fn small_step_reduces_loss() {
        let data = tiny_dataset(4, 4);
        let cfg = TrainConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (samples, _) = epoch_samples(&data, &cfg, &mut rng).unwrap();
        let mut params = init_network(&tiny_net(), &mut rng).unwrap();
        let x = Tensor::from_images(&samples.iter().map(|s| s.input.clone()).collect::<Vec<_>>())
            .unwrap();
        let targets: Vec<LossTarget> = samples.iter().map(|s| s.target.clone()).collect();
        let (out, cache) = params.forward(&x, Mode::Train).unwrap();
        let (before, grad) = batch_loss(&out, &targets).unwrap();
        let grads = params.backward(&cache, &grad).unwrap();
        let mut adam = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut adam, 1e-7).unwrap();
        let after = batch_loss(&params.forward(&x, Mode::Train).unwrap().0, &targets)
            .unwrap()
            .0;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn unit_map_c2c_equals_mse_against_raw_label() {
        // Diagonal noise, disjoint groups: whitening is the identity map.
        let (h, w) = (6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x =
            Image::from_fn(h, w, |r, c| Complex64::new(1.0 + (r + c) as f64 * 0.1, 0.0)).unwrap();
        let ones = Image::filled(h, w, Complex64::new(1.0, 0.0)).unwrap();
        let sens =
            SensitivityMap::new(vec![ones.clone(), ones.clone(), ones.clone(), ones]).unwrap();
        let psi = NoiseCovariance::identity(4).unwrap().scaled(0.04);
        let stack = synthesize_acquisition(&x, &sens, &psi, &mut rng).unwrap();
        let split = ChannelSplit::new(4, vec![0, 3], vec![1, 2]).unwrap();
        let mask = Mask::full(h, w).unwrap();
        let opts = PairOptions {
            whiten: true,
            normalize: false,
        };
        let pair = make_training_pair(&stack, &sens, &psi, &split, &mask, opts).unwrap();
        let raw = magnitude(&crate::imaging::coil_combine(&stack, &sens, &[1, 2]).unwrap());
        let pred = Image::from_fn(h, w, |_, _| rng.gen_range(0.0..4.0)).unwrap();
        let (a, _) = c2c_loss(&pred, &pair).unwrap();
        let (b, _) = masked_mse(&pred, &raw, &mask).unwrap();
        assert!((a - b).abs() <= 1e-12 * b);
    }

    #[test]
    fn z_scored_sample_matches_original_units() {
        let data = tiny_dataset(1, 7);
        let slice = &data.slices[0];
        let m = data.sens.channel_count();
        let split =
            ChannelSplit::new(m, (0..m).step_by(2).collect(), (1..m).step_by(2).collect()).unwrap();
        let pair = make_training_pair(
            &slice.noisy,
            &data.sens,
            &slice.psi,
            &split,
            &slice.mask,
            PairOptions::default(),
        )
        .unwrap();
        let sample = Sample::from_pair(&pair).unwrap();
        let norm = SliceNormalization::from_masked(&pair.input, &pair.mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Image::from_fn(16, 16, |_, _| rng.gen_range(-2.0..2.0)).unwrap();
        let z = sample.target.evaluate(p.data()).unwrap().0;
        let orig = c2c_loss(&norm.invert(&p), &pair).unwrap().0;
        assert!((orig - z * norm.std * norm.std).abs() <= 1e-10 * orig);
    }

    #[test]
    fn supervised_modes_need_no_split() {
        let data = tiny_dataset(3, 9);
        for mode in [TrainMode::Noise2Noise, TrainMode::Noise2Clean] {
            let cfg = TrainConfig {
                epochs: 1,
                batch_size: 2,
                mode,
                ..TrainConfig::desk()
            };
            let (_, log) = train(&data, None, &tiny_net(), &cfg).unwrap();
            assert!(log.epochs[0].first_split.is_none());
            assert!(log.epochs[0].mean_loss.is_finite());
        }
    }
}
