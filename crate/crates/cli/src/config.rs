//! Experiment configuration: a TOML file merged with command-line flags.
//! Flags win over the file, the file wins over defaults.

use std::path::{Path, PathBuf};

use airpath_core::schedule::{MAX_CLIENT_CHANNELS, MAX_SERVER_CHANNELS};
use airpath_core::sim::SimMode;
use airpath_core::QueryPath;
use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::sweep::Sweep;
use crate::Failure;

pub const DEFAULT_SAMPLES: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Exhaustive,
    Mc,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// TOML file with any of the options below (underscored keys).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// XML document to broadcast.
    #[arg(long, value_name = "PATH")]
    pub xml: Option<PathBuf>,
    /// Fanout of a generated full tree.
    #[arg(long, value_name = "N")]
    pub fanout: Option<usize>,
    /// Deepest level of a generated full tree (root is level 0).
    #[arg(long, value_name = "H")]
    pub height: Option<usize>,
    /// Replication level.
    #[arg(long = "h", value_name = "LEVEL")]
    pub level: Option<usize>,
    /// Index bucket size in slots.
    #[arg(long, value_name = "INT")]
    pub k: Option<u64>,
    /// Data bucket size in slots.
    #[arg(long, value_name = "INT")]
    pub w: Option<u64>,
    #[arg(long, value_name = "INT")]
    pub server_channels: Option<usize>,
    #[arg(long, value_name = "INT")]
    pub client_channels: Option<usize>,
    /// Layout strategy by registered name; repeat to compare several.
    #[arg(long, value_name = "NAME")]
    pub strategy: Vec<String>,
    /// Index copies per cycle for the flat strategy.
    #[arg(long, value_name = "INT")]
    pub x: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Monte Carlo draws.
    #[arg(long, value_name = "INT")]
    pub samples: Option<u64>,
    /// One swept axis: h, n, H or channels, e.g. `h=1..6` (inclusive).
    #[arg(long, value_name = "AXIS=LO..HI")]
    pub sweep: Option<String>,
    /// Output file (CSV commands, dump) or directory (build).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Fixed query path such as `Root/a2/b5/c14`; default is every leaf.
    #[arg(long, value_name = "PATH")]
    pub query: Option<String>,
    /// Write the read-by-read trace of the fixed query to this file.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Tune-in slot for the traced run.
    #[arg(long, value_name = "SLOT")]
    pub tune_in: Option<u64>,
    #[arg(long, value_name = "INT")]
    pub home_channel: Option<usize>,
    /// Dump only this channel.
    #[arg(long, value_name = "INT")]
    pub channel: Option<usize>,
    /// Dump the document-order traversal listing instead of the stream.
    #[arg(long)]
    pub listing: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub xml: Option<PathBuf>,
    pub fanout: Option<usize>,
    pub height: Option<usize>,
    pub h: Option<usize>,
    pub k: Option<u64>,
    pub w: Option<u64>,
    pub server_channels: Option<usize>,
    pub client_channels: Option<usize>,
    pub strategy: Option<Vec<String>>,
    pub x: Option<usize>,
    pub mode: Option<ModeName>,
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    pub sweep: Option<String>,
    pub out: Option<PathBuf>,
    pub query: Option<String>,
    pub home_channel: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::runtime(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeSource {
    Xml(PathBuf),
    Synthetic { fanout: usize, height: usize },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub tree: TreeSource,
    pub h: usize,
    pub k: u64,
    pub w: u64,
    pub server_channels: usize,
    pub client_channels: usize,
    pub strategies: Vec<String>,
    pub x: usize,
    pub mode: SimMode,
    pub seed: u64,
    pub sweep: Option<Sweep>,
    pub out: Option<PathBuf>,
    pub query: Option<QueryPath>,
    pub trace: Option<PathBuf>,
    pub tune_in: u64,
    pub home_channel: usize,
    pub channel: Option<usize>,
    pub listing: bool,
}

impl ExperimentConfig {
    pub fn resolve(opts: &Opts) -> Result<Self, Failure> {
        let file = match &opts.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Self::merge(opts, file)
    }

    pub fn merge(opts: &Opts, file: FileConfig) -> Result<Self, Failure> {
        let synthetic_flags = opts.fanout.is_some() || opts.height.is_some();
        if opts.xml.is_some() && synthetic_flags {
            return Err(Failure::usage("--xml conflicts with --fanout/--height"));
        }
        let tree = match (&opts.xml, synthetic_flags, &file.xml) {
            (Some(p), _, _) => TreeSource::Xml(p.clone()),
            (None, false, Some(p)) => TreeSource::Xml(p.clone()),
            _ => TreeSource::Synthetic {
                fanout: opts.fanout.or(file.fanout).unwrap_or(3),
                height: opts.height.or(file.height).unwrap_or(3),
            },
        };

        let mode = match opts.mode.or(file.mode).unwrap_or(ModeName::Exhaustive) {
            ModeName::Exhaustive => SimMode::Exhaustive,
            ModeName::Mc => SimMode::MonteCarlo {
                samples: opts.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
            },
        };
        let sweep = opts
            .sweep
            .as_deref()
            .or(file.sweep.as_deref())
            .map(str::parse::<Sweep>)
            .transpose()
            .map_err(Failure::usage)?;
        let query = opts
            .query
            .as_deref()
            .or(file.query.as_deref())
            .map(str::parse::<QueryPath>)
            .transpose()
            .map_err(|e| Failure::usage(e.to_string()))?;
        let strategies = if opts.strategy.is_empty() {
            file.strategy.unwrap_or_else(|| vec!["tp".to_string()])
        } else {
            opts.strategy.clone()
        };

        let cfg = Self {
            tree,
            h: opts.level.or(file.h).unwrap_or(2),
            k: opts.k.or(file.k).unwrap_or(1),
            w: opts.w.or(file.w).unwrap_or(1),
            server_channels: opts.server_channels.or(file.server_channels).unwrap_or(3),
            client_channels: opts.client_channels.or(file.client_channels).unwrap_or(3),
            strategies,
            x: opts.x.or(file.x).unwrap_or(1),
            mode,
            seed: opts.seed.or(file.seed).unwrap_or(0),
            sweep,
            out: opts.out.clone().or(file.out),
            query,
            trace: opts.trace.clone(),
            tune_in: opts.tune_in.unwrap_or(0),
            home_channel: opts.home_channel.or(file.home_channel).unwrap_or(0),
            channel: opts.channel,
            listing: opts.listing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        if !(1..=MAX_SERVER_CHANNELS).contains(&self.server_channels) {
            return Err(Failure::usage(format!(
                "--server-channels must be in 1..={MAX_SERVER_CHANNELS}"
            )));
        }
        if !(1..=MAX_CLIENT_CHANNELS).contains(&self.client_channels) {
            return Err(Failure::usage(format!(
                "--client-channels must be in 1..={MAX_CLIENT_CHANNELS}"
            )));
        }
        if self.k == 0 || self.w == 0 {
            return Err(Failure::usage("--k and --w must be positive"));
        }
        if self.x == 0 {
            return Err(Failure::usage("--x must be positive"));
        }
        if let TreeSource::Synthetic { fanout: 0, .. } = self.tree {
            return Err(Failure::usage("--fanout must be positive"));
        }
        if self.mode == (SimMode::MonteCarlo { samples: 0 }) {
            return Err(Failure::usage("--samples must be positive"));
        }
        if let Some(s) = &self.sweep {
            s.check(self)?;
        }
        Ok(())
    }

    /// One config per sweep point, in sweep order; the config itself when
    /// nothing is swept.
    pub fn points(&self) -> Vec<ExperimentConfig> {
        match &self.sweep {
            None => vec![self.clone()],
            Some(s) => s.values().map(|v| s.axis.apply(self, v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig =
            toml::from_str("fanout = 6\nheight = 2\nh = 1\nk = 3\nstrategy = [\"onex\"]").unwrap();
        let opts = Opts {
            level: Some(0),
            ..Opts::default()
        };
        let cfg = ExperimentConfig::merge(&opts, file).unwrap();
        assert_eq!(
            cfg.tree,
            TreeSource::Synthetic {
                fanout: 6,
                height: 2
            }
        );
        assert_eq!((cfg.h, cfg.k, cfg.w), (0, 3, 1));
        assert_eq!(cfg.strategies, ["onex"]);
    }

    #[test]
    fn synthetic_flags_beat_file_xml() {
        let file: FileConfig = toml::from_str("xml = \"doc.xml\"").unwrap();
        let opts = Opts {
            fanout: Some(2),
            ..Opts::default()
        };
        let cfg = ExperimentConfig::merge(&opts, file).unwrap();
        assert_eq!(
            cfg.tree,
            TreeSource::Synthetic {
                fanout: 2,
                height: 3
            }
        );
    }

    #[test]
    fn rejects_bad_values() {
        for opts in [
            Opts {
                server_channels: Some(12),
                ..Opts::default()
            },
            Opts {
                client_channels: Some(4),
                ..Opts::default()
            },
            Opts {
                k: Some(0),
                ..Opts::default()
            },
            Opts {
                sweep: Some("q=1..2".into()),
                ..Opts::default()
            },
            Opts {
                xml: Some("a.xml".into()),
                fanout: Some(2),
                ..Opts::default()
            },
        ] {
            assert!(matches!(
                ExperimentConfig::merge(&opts, FileConfig::default()),
                Err(Failure::Usage(_))
            ));
        }
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
    }
}
