//! Run configuration: a flat TOML file, overridden key by key by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{Frame, KerrScenario, SingleModeScenario};
use crate::output::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SingleMode,
    Kerr,
    MeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Homodyne,
    Photodetect,
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Sme,
    Sse,
}

/// Output families a run may write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    /// Ensemble mean and standard error (or the ME solution).
    Mean,
    /// Per-trajectory observables.
    Trajectories,
    /// Measurement records (`t,dY` or jump times).
    Records,
    /// Rate series `t,nu` or `t,K`.
    Rates,
    /// Max-shift values and histogram (Kerr).
    Shifts,
}

pub const ALL_SERIES: [Series; 5] = [
    Series::Mean,
    Series::Trajectories,
    Series::Records,
    Series::Rates,
    Series::Shifts,
];

/// Everything optional, as read from a file or from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    #[arg(long, value_enum)]
    pub experiment: Option<Experiment>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeChoice>,
    #[arg(long, value_enum)]
    pub representation: Option<Representation>,

    /// Photon rate (defaults to kappa_a).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Decay rate of the monitored mode.
    #[serde(alias = "kappa")]
    #[arg(long, visible_alias = "kappa")]
    pub kappa_a: Option<f64>,
    #[arg(long)]
    pub kappa_b: Option<f64>,
    #[arg(long)]
    pub chi: Option<f64>,
    /// Drive of mode b (defaults to kappa_b²/(4 kappa_a)).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Pulse onset.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Sampled pulse `t,re,im` replacing the exponential one (single mode).
    #[arg(long)]
    pub pulse_file: Option<PathBuf>,
    #[arg(long)]
    pub feedback: Option<bool>,

    /// Step size (defaults to 1e-3/kappa_a).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Final time (defaults to 12/kappa_a).
    #[serde(alias = "T")]
    #[arg(long = "t-end", visible_alias = "T")]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub sample_stride: Option<usize>,
    #[arg(long)]
    pub dim_a: Option<usize>,
    #[arg(long)]
    pub dim_b: Option<usize>,
    #[arg(long, value_enum)]
    pub frame: Option<Frame>,
    /// End each trajectory at its first click (shift statistics only).
    #[arg(long)]
    pub stop_after_jump: Option<bool>,

    #[arg(long)]
    pub n_traj: Option<usize>,
    #[serde(alias = "seed")]
    #[arg(long = "seed", visible_alias = "master-seed")]
    pub master_seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,

    #[arg(long)]
    pub hist_bin_width: Option<f64>,
    #[arg(long)]
    pub hist_bins: Option<usize>,

    #[serde(alias = "output")]
    #[arg(long = "out", short = 'o')]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub series: Option<Vec<Series>>,
    /// How many individual trajectories are written out.
    #[arg(long)]
    pub saved_trajectories: Option<usize>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Keys set in `over` win.
    pub fn overlay(self, over: ConfigLayer) -> ConfigLayer {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigLayer { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            experiment,
            scheme,
            representation,
            gamma,
            kappa_a,
            kappa_b,
            chi,
            beta,
            t0,
            pulse_file,
            feedback,
            dt,
            t_end,
            sample_stride,
            dim_a,
            dim_b,
            frame,
            stop_after_jump,
            n_traj,
            master_seed,
            workers,
            hist_bin_width,
            hist_bins,
            output_dir,
            format,
            series,
            saved_trajectories
        )
    }
}

/// A complete, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub scheme: SchemeChoice,
    pub representation: Representation,
    pub gamma: f64,
    pub kappa_a: f64,
    pub kappa_b: Option<f64>,
    pub chi: Option<f64>,
    pub beta: Option<f64>,
    pub t0: f64,
    pub pulse_file: Option<PathBuf>,
    pub feedback: bool,
    pub dt: f64,
    pub t_end: f64,
    pub sample_stride: usize,
    pub dim_a: usize,
    pub dim_b: Option<usize>,
    pub frame: Frame,
    pub stop_after_jump: bool,
    pub n_traj: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub hist_bin_width: f64,
    pub hist_bins: usize,
    pub output_dir: PathBuf,
    pub format: Format,
    pub series: Vec<Series>,
    pub saved_trajectories: usize,
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::validation(
            field,
            format!("must be positive, got {v}"),
        ))
    }
}

impl RunConfig {
    /// Fills defaults and checks the physical invariants.
    pub fn resolve(l: ConfigLayer) -> Result<Self> {
        let experiment = l.experiment.unwrap_or(Experiment::SingleMode);
        let scheme = match experiment {
            Experiment::MeOnly => match l.scheme {
                None | Some(SchemeChoice::Unconditional) => SchemeChoice::Unconditional,
                Some(s) => {
                    return Err(Error::validation(
                        "scheme",
                        format!("me_only runs are unconditional, got {s:?}"),
                    ))
                }
            },
            _ => l.scheme.unwrap_or(SchemeChoice::Photodetect),
        };
        let kappa_a = positive("kappa_a", l.kappa_a.unwrap_or(1.0))?;
        let gamma = positive("gamma", l.gamma.unwrap_or(kappa_a))?;
        let (kappa_b, chi, beta) = if experiment == Experiment::Kerr {
            let kb = positive("kappa_b", l.kappa_b.unwrap_or(4.0 * kappa_a))?;
            let chi = l.chi.unwrap_or(0.1 * kappa_a);
            if !(chi >= 0.0 && chi.is_finite()) {
                return Err(Error::validation(
                    "chi",
                    format!("must be non-negative, got {chi}"),
                ));
            }
            let beta = l.beta.unwrap_or(kb * kb / (4.0 * kappa_a));
            if !beta.is_finite() {
                return Err(Error::validation("beta", "must be finite"));
            }
            (Some(kb), Some(chi), Some(beta))
        } else {
            for (name, v) in [("kappa_b", l.kappa_b), ("chi", l.chi), ("beta", l.beta)] {
                if v.is_some() {
                    return Err(Error::validation(
                        name,
                        "only applies to the kerr experiment",
                    ));
                }
            }
            (None, None, None)
        };
        let dt = positive("dt", l.dt.unwrap_or(1e-3 / kappa_a))?;
        let t_end = positive("t_end", l.t_end.unwrap_or(12.0 / kappa_a))?;
        let t0 = l.t0.unwrap_or(0.0);
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(Error::validation(
                "t0",
                format!("must be non-negative, got {t0}"),
            ));
        }
        let sample_stride = l.sample_stride.unwrap_or(10);
        if sample_stride == 0 {
            return Err(Error::validation("sample_stride", "must be at least 1"));
        }
        let dim_a = l.dim_a.unwrap_or(3);
        if dim_a < 2 {
            return Err(Error::validation("dim_a", "must be at least 2"));
        }
        let n_traj = l.n_traj.unwrap_or(1);
        if n_traj == 0 {
            return Err(Error::validation("n_traj", "must be at least 1"));
        }
        let representation = l.representation.unwrap_or_default();
        if representation == Representation::Sse {
            if experiment == Experiment::Kerr {
                return Err(Error::Unsupported(
                    "representation = sse needs a single monitored channel; the kerr model also has the \
                     unmonitored decay of mode b"
                        .into(),
                ));
            }
            if scheme == SchemeChoice::Unconditional {
                return Err(Error::validation(
                    "representation",
                    "sse applies to conditional schemes only",
                ));
            }
        }
        if l.pulse_file.is_some() && experiment == Experiment::Kerr {
            return Err(Error::validation(
                "pulse_file",
                "only applies to single-mode experiments",
            ));
        }
        let hist_bin_width = positive("hist_bin_width", l.hist_bin_width.unwrap_or(0.005))?;
        let hist_bins = l.hist_bins.unwrap_or(40);
        if hist_bins == 0 {
            return Err(Error::validation("hist_bins", "must be at least 1"));
        }
        let mut series = l.series.unwrap_or_else(|| ALL_SERIES.to_vec());
        series.sort_by_key(|s| ALL_SERIES.iter().position(|x| x == s));
        series.dedup();
        Ok(Self {
            experiment,
            scheme,
            representation,
            gamma,
            kappa_a,
            kappa_b,
            chi,
            beta,
            t0,
            pulse_file: l.pulse_file,
            feedback: l.feedback.unwrap_or(true),
            dt,
            t_end,
            sample_stride,
            dim_a,
            dim_b: l.dim_b,
            frame: l.frame.unwrap_or_default(),
            stop_after_jump: l.stop_after_jump.unwrap_or(false),
            n_traj,
            master_seed: l.master_seed.unwrap_or(0),
            workers: l.workers.unwrap_or(0),
            hist_bin_width,
            hist_bins,
            output_dir: l.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            format: l.format.unwrap_or(Format::Csv),
            series,
            saved_trajectories: l.saved_trajectories.unwrap_or(10),
        })
    }

    pub fn single_mode(&self) -> SingleModeScenario {
        SingleModeScenario {
            gamma: self.gamma,
            kappa: self.kappa_a,
            dim_a: self.dim_a,
            t0: self.t0,
        }
    }

    /// `None` unless the experiment is `kerr`.
    pub fn kerr(&self) -> Option<KerrScenario> {
        let (kappa_b, chi, beta) = (self.kappa_b?, self.chi?, self.beta?);
        Some(KerrScenario {
            chi,
            kappa_a: self.kappa_a,
            kappa_b,
            beta,
            gamma: self.gamma,
            dim_a: self.dim_a,
            dim_b: self.dim_b,
            frame: self.frame,
            feedback: self.feedback,
            t0: self.t0,
        })
    }

    pub fn wants(&self, s: Series) -> bool {
        self.series.contains(&s)
    }

    /// The physics-and-numerics part of the configuration as TOML; output
    /// location, format and worker count do not change results.
    pub fn canonical_toml(&self) -> String {
        let mut v = toml::Value::try_from(self).expect("config serializes");
        if let toml::Value::Table(t) = &mut v {
            for k in [
                "output_dir",
                "format",
                "series",
                "saved_trajectories",
                "workers",
            ] {
                t.remove(k);
            }
        }
        toml::to_string(&v).expect("config serializes")
    }

    /// Git-style content hash: SHA-256 over `blob <len>\0` and the canonical text.
    pub fn content_hash(&self) -> String {
        let text = self.canonical_toml();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", text.len()));
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    }
}

/// File (if any) overlaid with flags, then resolved.
pub fn parse_config(path: Option<&Path>, flags: ConfigLayer) -> Result<RunConfig> {
    let base = match path {
        Some(p) => ConfigLayer::from_path(p)?,
        None => ConfigLayer::default(),
    };
    RunConfig::resolve(base.overlay(flags))
}
