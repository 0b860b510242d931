//! Sectioned `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid config. Unknown sections and keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::neural::{LearningRateSchedule, NetworkConfig};
use crate::simulator::{CoilSpec, DatasetSpec, NoiseSpec};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    /// Randomized head-like ellipses, one draw per slice.
    Random,
    /// The fixed Shepp-Logan layout on every slice.
    SheppLogan,
}

impl FromStr for PhantomKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(PhantomKind::Random),
            "shepp_logan" => Ok(PhantomKind::SheppLogan),
            other => Err(format!("unknown phantom kind {other:?}")),
        }
    }
}

impl PhantomKind {
    fn name(self) -> &'static str {
        match self {
            PhantomKind::Random => "random",
            PhantomKind::SheppLogan => "shepp_logan",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSection {
    pub kind: PhantomKind,
    pub grid: usize,
    pub slices: usize,
    pub validation_slices: usize,
    pub mask_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoilSection {
    pub channels: usize,
    pub radius: f64,
    pub width: f64,
    pub phase_step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSection {
    pub sigma: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSection {
    /// Noise levels for the robustness sweep.
    pub noise_levels: Vec<f64>,
    pub two_group: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub phantom: PhantomSection,
    pub coils: CoilSection,
    pub noise: NoiseSection,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::desk(200);
        let ring = &data.coils;
        Self {
            phantom: PhantomSection {
                kind: PhantomKind::Random,
                grid: data.grid,
                slices: data.slices,
                validation_slices: 40,
                mask_threshold: data.mask_threshold,
            },
            coils: CoilSection {
                channels: ring.channel_count(),
                radius: DatasetSpec::DESK_RING_RADIUS,
                width: ring.width,
                phase_step: DatasetSpec::DESK_PHASE_STEP,
            },
            noise: NoiseSection {
                sigma: data.noise.sigma,
                rho_min: data.noise.rho_min,
                rho_max: data.noise.rho_max,
            },
            network: NetworkConfig::desk(),
            training: TrainConfig::desk(),
            evaluation: EvaluationSection {
                noise_levels: vec![0.5, 1.0, 1.5],
                two_group: false,
            },
        }
    }
}

fn parse_value<T: FromStr>(value: &str, line: usize, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config {
        line,
        message: format!("{key}: {e}"),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                    line,
                    message: format!("malformed section header {content:?}"),
                })?;
                match name.trim() {
                    s @ ("phantom" | "coils" | "noise" | "network" | "training" | "evaluation") => {
                        section = Some(s.to_string())
                    }
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown section [{other}]"),
                        })
                    }
                }
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key = value, found {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let Some(sec) = section.as_deref() else {
                return Err(Error::Config {
                    line,
                    message: format!("key {key:?} outside any section"),
                });
            };
            cfg.set(sec, key, value, line)?;
        }
        cfg.validate().map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str, line: usize) -> Result<()> {
        let p = |k: &str| format!("{section}.{k}");
        match (section, key) {
            ("phantom", "kind") => self.phantom.kind = parse_value(v, line, &p(key))?,
            ("phantom", "grid") => self.phantom.grid = parse_value(v, line, &p(key))?,
            ("phantom", "slices") => self.phantom.slices = parse_value(v, line, &p(key))?,
            ("phantom", "validation_slices") => {
                self.phantom.validation_slices = parse_value(v, line, &p(key))?
            }
            ("phantom", "mask_threshold") => {
                self.phantom.mask_threshold = parse_value(v, line, &p(key))?
            }
            ("coils", "channels") => self.coils.channels = parse_value(v, line, &p(key))?,
            ("coils", "radius") => self.coils.radius = parse_value(v, line, &p(key))?,
            ("coils", "width") => self.coils.width = parse_value(v, line, &p(key))?,
            ("coils", "phase_step") => self.coils.phase_step = parse_value(v, line, &p(key))?,
            ("noise", "sigma") => self.noise.sigma = parse_value(v, line, &p(key))?,
            ("noise", "rho_min") => self.noise.rho_min = parse_value(v, line, &p(key))?,
            ("noise", "rho_max") => self.noise.rho_max = parse_value(v, line, &p(key))?,
            ("network", "depth") => self.network.depth = parse_value(v, line, &p(key))?,
            ("network", "features") => self.network.features = parse_value(v, line, &p(key))?,
            ("network", "kernel") => self.network.kernel = parse_value(v, line, &p(key))?,
            ("network", "slope") => self.network.slope = parse_value(v, line, &p(key))?,
            ("network", "bn_momentum") => self.network.bn_momentum = parse_value(v, line, &p(key))?,
            ("network", "bn_eps") => self.network.bn_eps = parse_value(v, line, &p(key))?,
            ("training", "epochs") => self.training.epochs = parse_value(v, line, &p(key))?,
            ("training", "batch_size") => self.training.batch_size = parse_value(v, line, &p(key))?,
            ("training", "learning_rate") => {
                self.training.schedule.base = parse_value(v, line, &p(key))?
            }
            ("training", "lr_decay") => {
                self.training.schedule.decay = parse_value(v, line, &p(key))?
            }
            ("training", "mode") => self.training.mode = parse_value(v, line, &p(key))?,
            ("training", "whiten") => self.training.whiten = parse_value(v, line, &p(key))?,
            ("training", "normalize") => self.training.normalize = parse_value(v, line, &p(key))?,
            ("training", "seed") => self.training.seed = parse_value(v, line, &p(key))?,
            ("training", "checkpoint_every") => {
                self.training.checkpoint_every = parse_value(v, line, &p(key))?
            }
            ("evaluation", "noise_levels") => {
                self.evaluation.noise_levels = v
                    .split(',')
                    .map(|s| parse_value(s.trim(), line, &p(key)))
                    .collect::<Result<_>>()?
            }
            ("evaluation", "two_group") => {
                self.evaluation.two_group = parse_value(v, line, &p(key))?
            }
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key {key:?} in [{section}]"),
                })
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phantom.grid == 0 || self.phantom.slices == 0 {
            return Err(Error::InvalidArgument(
                "phantom grid and slices must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.phantom.mask_threshold) {
            return Err(Error::InvalidArgument(
                "mask threshold must lie in [0, 1)".into(),
            ));
        }
        if self.evaluation.noise_levels.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "evaluation noise levels must be >= 0".into(),
            ));
        }
        self.coil_spec().validate()?;
        self.noise_spec(0).validate()?;
        self.network.validate()?;
        self.training.validate()
    }

    pub fn coil_spec(&self) -> CoilSpec {
        let c = &self.coils;
        CoilSpec::ring(c.channels, c.radius, c.width, c.phase_step)
    }

    pub fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            sigma: self.noise.sigma,
            rho_min: self.noise.rho_min,
            rho_max: self.noise.rho_max,
            seed,
        }
    }

    pub fn dataset_spec(&self, slices: usize) -> DatasetSpec {
        DatasetSpec {
            slices,
            grid: self.phantom.grid,
            coils: self.coil_spec(),
            noise: self.noise_spec(self.training.seed),
            mask_threshold: self.phantom.mask_threshold,
        }
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (ph, co, no, ne, tr, ev) = (
            &self.phantom,
            &self.coils,
            &self.noise,
            &self.network,
            &self.training,
            &self.evaluation,
        );
        let _ = write!(
            s,
            "[phantom]\nkind = {}\ngrid = {}\nslices = {}\nvalidation_slices = {}\nmask_threshold = {:?}\n\n",
            ph.kind.name(),
            ph.grid,
            ph.slices,
            ph.validation_slices,
            ph.mask_threshold
        );
        let _ = write!(
            s,
            "[coils]\nchannels = {}\nradius = {:?}\nwidth = {:?}\nphase_step = {:?}\n\n",
            co.channels, co.radius, co.width, co.phase_step
        );
        let _ = write!(
            s,
            "[noise]\nsigma = {:?}\nrho_min = {:?}\nrho_max = {:?}\n\n",
            no.sigma, no.rho_min, no.rho_max
        );
        let _ = writeln!(s, "{}", network_text(ne));
        let LearningRateSchedule { base, decay } = tr.schedule;
        let _ = write!(
            s,
            "[training]\nepochs = {}\nbatch_size = {}\nlearning_rate = {:?}\nlr_decay = {:?}\nmode = {}\nwhiten = {}\nnormalize = {}\nseed = {}\ncheckpoint_every = {}\n\n",
            tr.epochs, tr.batch_size, base, decay, tr.mode, tr.whiten, tr.normalize, tr.seed, tr.checkpoint_every
        );
        let levels: Vec<String> = ev.noise_levels.iter().map(|v| format!("{v:?}")).collect();
        let _ = write!(
            s,
            "[evaluation]\nnoise_levels = {}\ntwo_group = {}\n",
            levels.join(", "),
            ev.two_group
        );
        s
    }
}

/// `[network]` section alone; also the checkpoint header.
pub fn network_text(n: &NetworkConfig) -> String {
    format!(
        "[network]\ndepth = {}\nfeatures = {}\nkernel = {}\nslope = {:?}\nbn_momentum = {:?}\nbn_eps = {:?}\n",
        n.depth, n.features, n.kernel, n.slope, n.bn_momentum, n.bn_eps
    )
}

/// Parses text that may only contain a `[network]` section.
pub fn parse_network(text: &str) -> Result<NetworkConfig> {
    if let Some((idx, _)) = text
        .lines()
        .enumerate()
        .find(|(_, l)| l.trim().starts_with('[') && l.trim() != "[network]")
    {
        return Err(Error::Config {
            line: idx + 1,
            message: "only [network] is allowed here".into(),
        });
    }
    Ok(RunConfig::parse(text)?.network)
}
