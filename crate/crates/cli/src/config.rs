//! Effective run configuration: defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use dpca_core::dpca::{DpcaConfig, DEFAULT_SMOOTHING_WINDOW, DEFAULT_WINDOW};
use dpca_core::diagnostics::DEFAULT_ALPHA;
use dpca_core::impute::DEFAULT_SHORT_GAP_MAX;
use dpca_core::ingest::{DEFAULT_POLLUTANTS, HOURS_PER_DAY};
use dpca_core::panel::{Aggregator, Stage};
use dpca_core::summarize::{PartitionBounds, PartitionScheme};
use dpca_core::synth::SynthSpec;
use dpca_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub window: usize,
    pub smoothing_window: usize,
    pub hours: Vec<usize>,
    pub aggregator: Aggregator,
    pub transform: Stage,
    pub alpha: f64,
    pub short_gap_max: usize,
    pub pollutants: Vec<String>,
    pub qc_codes: Vec<String>,
    pub zone_rules: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub schemes: Vec<PartitionScheme>,
    pub partition: PartitionBounds,
    pub synth: SynthSpec,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            hours: (0..HOURS_PER_DAY).collect(),
            aggregator: Aggregator::Median,
            transform: Stage::Nsao,
            alpha: DEFAULT_ALPHA,
            short_gap_max: DEFAULT_SHORT_GAP_MAX,
            pollutants: DEFAULT_POLLUTANTS.iter().map(|s| s.to_string()).collect(),
            qc_codes: Vec::new(),
            zone_rules: None,
            workers: 0,
            schemes: vec![PartitionScheme::Whole, PartitionScheme::SummerWinter, PartitionScheme::DayNight],
            partition: PartitionBounds::default(),
            synth: SynthSpec::default(),
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Stage input: a file, or a directory for per-hour stages.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// TOML file with configuration keys; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub smoothing_window: Option<usize>,
    /// Restrict to one hour of day; repeat for several.
    #[arg(long = "hour")]
    pub hours: Vec<usize>,
    #[arg(long, value_parser = ["median", "mean"])]
    pub aggregator: Option<String>,
    #[arg(long, value_parser = ["sao", "lsao", "nsao"])]
    pub transform: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub short_gap_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic days to generate.
    #[arg(long)]
    pub days: Option<usize>,
    /// Comma-separated quality-control codes that invalidate a value.
    #[arg(long, value_delimiter = ',')]
    pub qc_codes: Option<Vec<String>>,
    /// JSON list of daylight-saving transitions applied during ingest.
    #[arg(long)]
    pub zone_rules: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Partition scheme for compare-static: whole, summer-winter or day-night.
    #[arg(long = "scheme")]
    pub schemes: Vec<String>,
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

impl Config {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => toml::from_str(&read_to_string(path)?)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?,
            None => Config::default(),
        };
        if let Some(v) = args.window {
            cfg.window = v;
        }
        if let Some(v) = args.smoothing_window {
            cfg.smoothing_window = v;
        }
        if !args.hours.is_empty() {
            cfg.hours = args.hours.clone();
        }
        if let Some(v) = &args.aggregator {
            cfg.aggregator = v.parse()?;
        }
        if let Some(v) = &args.transform {
            cfg.transform = v.parse()?;
        }
        if let Some(v) = args.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = args.short_gap_max {
            cfg.short_gap_max = v;
        }
        if let Some(v) = args.seed {
            cfg.synth.seed = v;
        }
        if let Some(v) = args.days {
            cfg.synth.days = v;
        }
        if let Some(v) = &args.qc_codes {
            cfg.qc_codes = v.clone();
        }
        if let Some(v) = &args.zone_rules {
            cfg.zone_rules = Some(v.clone());
        }
        if let Some(v) = args.workers {
            cfg.workers = v;
        }
        if !args.schemes.is_empty() {
            cfg.schemes = args.schemes.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.hours.is_empty() {
            return Err(Error::Config("no hours selected".into()));
        }
        if let Some(h) = self.hours.iter().find(|h| **h >= HOURS_PER_DAY) {
            return Err(Error::Config(format!("hour {h} is outside 0..23")));
        }
        let mut sorted = self.hours.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.hours.len() {
            return Err(Error::Config("hours are listed more than once".into()));
        }
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} must lie in [0.5, 1]", self.alpha)));
        }
        if self.short_gap_max == 0 {
            return Err(Error::Config("short_gap_max must be at least 1".into()));
        }
        if self.pollutants.is_empty() {
            return Err(Error::Config("pollutant list is empty".into()));
        }
        self.dpca().validate(self.pollutants.len())
    }

    /// Hours in ascending order.
    pub fn sorted_hours(&self) -> Vec<usize> {
        let mut hours = self.hours.clone();
        hours.sort_unstable();
        hours
    }

    pub fn dpca(&self) -> DpcaConfig {
        DpcaConfig {
            window: self.window,
            smoothing_window: self.smoothing_window,
            ..DpcaConfig::default()
        }
    }
}
