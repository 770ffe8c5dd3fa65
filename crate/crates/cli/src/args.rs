use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qeraser_core::{ApparatusConfig, Binning};

use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "qeraser", version, about = "Delayed-choice quantum eraser simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one of the preset configurations and analyse it.
    Run(RunArgs),
    /// Paired runs under both choices: the signal screen cannot tell them apart.
    Nosignal(CommonArgs),
    /// Record signal photons only and checkpoint the idler stream.
    RedsoxPhase1(CommonArgs),
    /// Resolve a phase-1 checkpoint with the choice made afterwards.
    RedsoxPhase2(Phase2Args),
    /// Stream live events over TCP and accept beam-splitter toggles.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Beam splitter out, coincidence-gated analysis.
    Fig1,
    /// Beam splitter in, ungated analysis only.
    Fig2,
    /// Beam splitter in, coincidence-gated analysis.
    Fig3,
    /// Paired runs under both choices.
    Nosignal,
    /// Two-phase deferred choice, resolved both ways.
    Redsox,
}

impl Preset {
    pub fn label(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Nosignal => "nosignal",
            Preset::Redsox => "redsox",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GeometryArgs {
    /// Wavelength in nm.
    #[arg(long = "lambda-nm")]
    pub lambda_nm: Option<f64>,
    /// Slit separation in µm.
    #[arg(long = "slit-sep-um")]
    pub slit_sep_um: Option<f64>,
    /// Slit width in µm.
    #[arg(long = "slit-width-um")]
    pub slit_width_um: Option<f64>,
    /// Slit-to-screen distance in m.
    #[arg(long = "distance-m")]
    pub distance_m: Option<f64>,
    /// Offset of the single-slit envelope centres, in fringe periods.
    #[arg(long = "envelope-offset", allow_hyphen_values = true)]
    pub envelope_offset: Option<f64>,
    /// Half-width of the D0 scan, in fringe periods.
    #[arg(long)]
    pub range: Option<f64>,
}

impl GeometryArgs {
    pub fn apparatus(&self) -> Result<ApparatusConfig, UsageError> {
        let mut cfg = ApparatusConfig::default();
        if let Some(v) = self.lambda_nm {
            cfg.wavelength_nm = v;
        }
        if let Some(v) = self.slit_sep_um {
            cfg.slit_separation_um = v;
        }
        if let Some(v) = self.slit_width_um {
            cfg.slit_width_um = v;
        }
        if let Some(v) = self.distance_m {
            cfg.screen_distance_m = v;
        }
        if let Some(v) = self.envelope_offset {
            cfg.envelope_offset = v;
        }
        if let Some(v) = self.range {
            cfg.detector_range = v;
        }
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output root; artifacts land in a per-command subdirectory.
    #[arg(long = "out-dir", env = "QERASER_OUT_DIR", default_value = "qeraser-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub pairs: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub bins: usize,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl CommonArgs {
    pub fn apparatus(&self) -> Result<ApparatusConfig, UsageError> {
        if self.pairs == 0 {
            return Err(UsageError("--pairs must be positive".into()));
        }
        self.geometry.apparatus()
    }

    pub fn binning(&self, cfg: &ApparatusConfig) -> Result<Binning, UsageError> {
        Binning::new(cfg.detector_range, self.bins).map_err(|e| UsageError(e.to_string()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct Phase2Args {
    /// Whether the beam splitter is inserted for the recorded idlers.
    #[arg(long, action = clap::ArgAction::Set)]
    pub choice: bool,
    /// Phase-1 log; defaults to the one under the output root.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    /// Events emitted per second.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub bins: usize,
    /// Stop after this many events; unlimited when absent.
    #[arg(long)]
    pub pairs: Option<u64>,
    /// Signals detected ahead of their idler resolution.
    #[arg(long, default_value_t = 16)]
    pub lookahead: usize,
    /// Initial beam-splitter setting.
    #[arg(long = "bs-in", default_value_t = true, action = clap::ArgAction::Set)]
    pub bs_in: bool,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}
