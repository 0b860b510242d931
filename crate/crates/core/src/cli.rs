//! Command-line front end. Every subcommand is deterministic given `--seed`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 acceptance threshold missed (`gradcheck`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::Mask;
use crate::io::{
    load_checkpoint, load_dataset, metric_report_csv, read_tensor, save_checkpoint, save_dataset,
    t_test_csv, train_log_csv, write_pgm, write_tensor, write_text, PhantomKind, RunConfig,
    StoredTensor,
};
use crate::metrics::{paired_t_test, MetricReport, TTest};
use crate::neural::{gradient_check, NetworkConfig};
use crate::pairgen::{make_training_pair, split_channels, whitening_diagnostic, PairOptions};
use crate::simulator::{
    clean_channels, make_phantom, make_sensitivities, simulate_dataset, simulate_slice, Dataset,
    PhantomSpec,
};
use crate::training::{denoise, denoise_image, denoise_two_group_average, train_with};

/// Gradient checks above this relative error exit with code 3.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_THRESHOLD: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "c2c",
    about = "Self-supervised multi-coil MR denoising on simulated data"
)]
struct Cli {
    /// Seed for every random draw made by the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Run config; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate phantoms, coil sensitivities, noise covariances and noisy stacks.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory for the dataset bundle.
        #[arg(long)]
        out: PathBuf,
        /// Number of slices; defaults to `[phantom] slices`.
        #[arg(long)]
        slices: Option<usize>,
        /// Overrides `[noise] sigma`.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Build one coil-split training pair and measure its noise correlation.
    Pairgen {
        /// Dataset bundle written by `simulate`
        #[arg(long)]
        data: PathBuf,
        /// Slice index within the bundle
        #[arg(long, default_value_t = 0)]
        slice: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Noise realizations for the correlation diagnostic.
        #[arg(long, default_value_t = 2000)]
        realizations: usize,
        /// Use the unwhitened label (ablation)
        #[arg(long)]
        no_whiten: bool,
        /// Skip sensitivity normalization (ablation)
        #[arg(long)]
        no_normalize: bool,
    },
    /// Train a denoiser; writes a checkpoint and the per-epoch log.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Training dataset bundle
        #[arg(long)]
        data: PathBuf,
        /// Dataset bundle scored after every epoch.
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Output directory for checkpoints, log and config
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise a dataset bundle or a pre-combined magnitude tensor.
    Denoise {
        /// Checkpoint written by `train`
        #[arg(long)]
        model: PathBuf,
        /// Dataset bundle; the full combination of `noisy.c2c` is denoised.
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        data: Option<PathBuf>,
        /// Real `[n, h, w]` or `[h, w]` magnitude tensor.
        #[arg(long, requires = "mask")]
        image: Option<PathBuf>,
        /// Bool mask matching `--image`.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Average two channel-group denoisings instead (needs `--data`).
        #[arg(long, requires = "data")]
        two_group: bool,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Score images against references; with a baseline, also run paired t-tests.
    Eval {
        /// Real `[n, h, w]` tensor to score
        #[arg(long)]
        test: PathBuf,
        /// Real reference tensor of the same shape
        #[arg(long)]
        reference: PathBuf,
        /// Bool mask, `[h, w]` or `[n, h, w]`
        #[arg(long)]
        mask: PathBuf,
        /// Second real tensor, compared against `--test` with paired t-tests
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        /// Use the desk network instead of the small check network.
        #[arg(long)]
        desk: bool,
    },
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<i32> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate {
            config,
            out,
            slices,
            sigma,
        } => {
            let mut cfg = config.load()?;
            if let Some(s) = sigma {
                cfg.noise.sigma = s;
            }
            cfg.training.seed = seed;
            cfg.validate()?;
            let data = simulate(&cfg, slices.unwrap_or(cfg.phantom.slices), seed)?;
            save_dataset(&out, &data)?;
            write_text(out.join("config.txt"), &cfg.to_text())?;
            println!(
                "wrote {} slices x {} channels to {}",
                data.slices.len(),
                data.sens.channel_count(),
                out.display()
            );
        }
        Command::Pairgen {
            data,
            slice,
            out,
            realizations,
            no_whiten,
            no_normalize,
        } => {
            let data = load_dataset(&data)?;
            let s = data.slices.get(slice).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "slice {slice} out of range for {}",
                    data.slices.len()
                ))
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let split = split_channels(data.sens.channel_count(), &mut rng)?;
            let options = PairOptions {
                whiten: !no_whiten,
                normalize: !no_normalize,
            };
            let pair = make_training_pair(&s.noisy, &data.sens, &s.psi, &split, &s.mask, options)?;
            let clean = clean_channels(&s.phantom, &data.sens)?;
            let diag = whitening_diagnostic(
                &clean,
                &data.sens,
                &s.psi,
                &split,
                &s.mask,
                realizations,
                seed,
            )?;
            ensure_dir(&out)?;
            for (name, img) in [
                ("input.c2c", &pair.input),
                ("label.c2c", &pair.label),
                ("sens_input.c2c", &pair.sens_input),
                ("sens_label.c2c", &pair.sens_label),
            ] {
                write_tensor(out.join(name), &StoredTensor::from_real_image(img))?;
            }
            write_tensor(
                out.join("mask.c2c"),
                &StoredTensor::from_masks(std::slice::from_ref(&pair.mask))?,
            )?;
            let join = |g: &[usize]| g.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            write_text(
                out.join("pair.csv"),
                &format!(
                    "group_j,group_k,fallback_voxels,nonpositive_label_sensitivity,uncovered_fraction_j,uncovered_fraction_k\n{},{},{},{},{},{}\n",
                    join(split.group_j()),
                    join(split.group_k()),
                    pair.diagnostics.fallback_voxels,
                    pair.diagnostics.nonpositive_label_sensitivity,
                    pair.diagnostics.uncovered_fraction_j,
                    pair.diagnostics.uncovered_fraction_k,
                ),
            )?;
            write_text(
                out.join("whitening.csv"),
                &format!(
                    "realizations,voxels,mean_abs_corr_raw,mean_abs_corr_whitened,mean_predicted_corr_raw\n{},{},{},{},{}\n",
                    diag.realizations,
                    diag.voxels,
                    diag.mean_abs_corr_raw,
                    diag.mean_abs_corr_whitened,
                    diag.mean_predicted_corr_raw
                ),
            )?;
            println!(
                "split J={:?} K={:?}; mean |corr| raw {:.4}, whitened {:.4} over {} realizations",
                split.group_j(),
                split.group_k(),
                diag.mean_abs_corr_raw,
                diag.mean_abs_corr_whitened,
                diag.realizations
            );
        }
        Command::Train {
            config,
            data,
            validation,
            out,
        } => {
            let mut cfg = config.load()?;
            cfg.training.seed = seed;
            cfg.validate()?;
            let train_set = load_dataset(&data)?;
            let val = validation.map(load_dataset).transpose()?;
            ensure_dir(&out)?;
            let total = cfg.training.epochs;
            let (params, log) = train_with(
                &train_set,
                val.as_ref(),
                &cfg.network,
                &cfg.training,
                |epoch, p| {
                    if epoch + 1 < total {
                        save_checkpoint(out.join(format!("model_epoch{:03}.c2ck", epoch + 1)), p)?;
                    }
                    Ok(())
                },
            )?;
            save_checkpoint(out.join("model.c2ck"), &params)?;
            write_text(out.join("train_log.csv"), &train_log_csv(&log))?;
            write_text(out.join("config.txt"), &cfg.to_text())?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "trained {} epochs ({}), final loss {:.6}{}",
                    log.epochs.len(),
                    cfg.training.mode,
                    last.mean_loss,
                    last.validation_psnr
                        .map_or(String::new(), |p| format!(", validation pSNR {p:.3} dB"))
                );
            }
        }
        Command::Denoise {
            model,
            data,
            image,
            mask,
            two_group,
            out,
        } => {
            let params = load_checkpoint(&model)?;
            let (outputs, masks) = match (data, image, mask) {
                (Some(dir), _, _) => {
                    let data = load_dataset(&dir)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let outputs = data
                        .slices
                        .iter()
                        .map(|s| {
                            if two_group {
                                denoise_two_group_average(
                                    &params, &s.noisy, &data.sens, &s.mask, &mut rng,
                                )
                            } else {
                                denoise(&params, &s.noisy, &data.sens, &s.mask)
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (
                        outputs,
                        data.slices.iter().map(|s| s.mask.clone()).collect(),
                    )
                }
                (None, Some(image), Some(mask)) => {
                    let images = read_tensor(&image)?.to_real_images()?;
                    let masks = read_tensor(&mask)?.to_masks()?;
                    let masks = broadcast_masks(masks, images.len())?;
                    let outputs = images
                        .iter()
                        .zip(&masks)
                        .map(|(img, m)| denoise_image(&params, img, m))
                        .collect::<Result<Vec<_>>>()?;
                    (outputs, masks)
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "denoise needs --data, or --image with --mask".into(),
                    ))
                }
            };
            ensure_dir(&out)?;
            write_tensor(
                out.join("denoised.c2c"),
                &StoredTensor::from_real_images(&outputs)?,
            )?;
            for (i, (img, m)) in outputs.iter().zip(&masks).enumerate() {
                write_pgm(out.join(format!("denoised_{i:03}.pgm")), img, m)?;
            }
            println!("denoised {} images into {}", outputs.len(), out.display());
        }
        Command::Eval {
            test,
            reference,
            mask,
            baseline,
            out,
        } => {
            let tests = read_tensor(&test)?.to_real_images()?;
            let refs = read_tensor(&reference)?.to_real_images()?;
            let masks = broadcast_masks(read_tensor(&mask)?.to_masks()?, tests.len())?;
            let report = MetricReport::evaluate(&tests, &refs, &masks)?;
            ensure_dir(&out)?;
            write_text(out.join("metrics.csv"), &metric_report_csv(&report))?;
            let (p, s) = (report.psnr_summary(), report.ssim_summary());
            println!(
                "pSNR {:.3} +- {:.3} dB, SSIM {:.4} +- {:.4}",
                p.mean, p.std, s.mean, s.std
            );
            if let Some(b) = baseline {
                let base =
                    MetricReport::evaluate(&read_tensor(&b)?.to_real_images()?, &refs, &masks)?;
                write_text(out.join("baseline_metrics.csv"), &metric_report_csv(&base))?;
                let rows = [
                    ("psnr_db", t_test_or_none(&report.psnr, &base.psnr)?),
                    ("ssim", t_test_or_none(&report.ssim, &base.ssim)?),
                ];
                write_text(out.join("t_test.csv"), &t_test_csv(&rows))?;
                for (name, t) in &rows {
                    if let Some(t) = t {
                        println!("{name}: t = {:.4}, p = {:.4e}, dof {}", t.t, t.p, t.dof);
                    }
                }
            }
        }
        Command::Gradcheck { desk } => {
            let config = if desk {
                NetworkConfig::desk()
            } else {
                NetworkConfig::gradcheck()
            };
            let report = gradient_check(&config, &mut ChaCha8Rng::seed_from_u64(seed))?;
            println!(
                "max relative error {:.3e} over {} derivatives (h = {:e})",
                report.max_relative_error, report.checked, report.step
            );
            if !(report.max_relative_error <= GRADCHECK_TOLERANCE) {
                eprintln!("gradient check failed: tolerance {GRADCHECK_TOLERANCE:e}");
                return Ok(EXIT_THRESHOLD);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Simulates `slices` slices from a run config. `shepp_logan` repeats the
/// fixed phantom with fresh noise per slice.
pub fn simulate(cfg: &RunConfig, slices: usize, seed: u64) -> Result<Dataset> {
    let spec = cfg.dataset_spec(slices);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match cfg.phantom.kind {
        PhantomKind::Random => simulate_dataset(&spec, &mut rng),
        PhantomKind::SheppLogan => {
            if slices == 0 {
                return Err(Error::InvalidArgument(
                    "dataset needs at least one slice".into(),
                ));
            }
            let sens = make_sensitivities(&spec.coils, spec.grid)?;
            let phantom = make_phantom(&PhantomSpec::shepp_logan(spec.grid))?;
            let slices = (0..slices)
                .map(|_| {
                    simulate_slice(
                        phantom.clone(),
                        &sens,
                        &spec.noise,
                        spec.mask_threshold,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset { sens, slices })
        }
    }
}

/// A single mask applies to every image.
fn broadcast_masks(masks: Vec<Mask>, n: usize) -> Result<Vec<Mask>> {
    match masks.len() {
        1 if n > 1 => Ok(vec![masks[0].clone(); n]),
        len if len == n => Ok(masks),
        len => Err(Error::dims(n, len)),
    }
}

/// `None` when the differences have zero variance or contain infinities.
fn t_test_or_none(a: &[f64], b: &[f64]) -> Result<Option<TTest>> {
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Ok(None);
    }
    match paired_t_test(a, b) {
        Ok(t) => Ok(Some(t)),
        Err(Error::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}
