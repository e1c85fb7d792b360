use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{cmd_marginal, cmd_synth, cmd_tabular, MarginalSettings, SynthSettings, TabularSettings};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::synth::TruthKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Marginal,
    Synth,
    Tabular,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Marginal => "marginal",
            Command::Synth => "synth",
            Command::Tabular => "tabular",
        }
    }
}

/// Contents of a `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub marginal: MarginalSettings,
    pub synth: SynthSettings,
    pub tabular: TabularSettings,
}

impl FileConfig {
    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut config: FileConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(data) = &config.tabular.data {
            if data.is_relative() {
                config.tabular.data = Some(base.join(data));
            }
        }
        if let Some(out) = &config.out {
            if out.is_relative() {
                config.out = Some(base.join(out));
            }
        }
        Ok(config)
    }
}

/// Command-line flags that override file and default values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub heads: Option<Vec<HeadKind>>,
    pub radius: Option<usize>,
    pub lambda: Option<f64>,
    pub order: Option<usize>,
    pub samples: Option<usize>,
    pub bins: Option<Vec<usize>>,
    pub folds: Option<usize>,
    pub workers: Option<usize>,
    pub steps: Option<usize>,
    pub truths: Option<Vec<TruthKind>>,
    pub data: Option<PathBuf>,
    pub features: Option<Vec<String>>,
    pub targets: Option<Vec<String>>,
}

/// Fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    Marginal { out: PathBuf, settings: MarginalSettings },
    Synth { out: PathBuf, settings: SynthSettings },
    Tabular { out: PathBuf, settings: TabularSettings },
}

fn reject(command: Command, flag: &str, given: bool) -> Result<()> {
    if given {
        return Err(Error::config(format!("--{flag} does not apply to '{}'", command.name())));
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file, then the flags.
    pub fn resolve(command: Command, file: Option<FileConfig>, flags: Overrides) -> Result<Self> {
        let file = file.unwrap_or_default();
        let out = flags
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("results").join(command.name()));
        let f = flags;
        match command {
            Command::Marginal => {
                reject(command, "heads", f.heads.is_some())?;
                reject(command, "bins", f.bins.is_some())?;
                reject(command, "folds", f.folds.is_some())?;
                reject(command, "truths", f.truths.is_some())?;
                reject(command, "data", f.data.is_some() || f.features.is_some() || f.targets.is_some())?;
                let mut s = file.marginal;
                if let Some(v) = f.seed {
                    s.seed = v;
                }
                if let Some(v) = f.trials {
                    s.trials = v;
                }
                if let Some(v) = f.radius {
                    s.radii = vec![v];
                }
                if let Some(v) = f.lambda {
                    s.lambda = v;
                }
                if let Some(v) = f.order {
                    s.order = v;
                }
                if let Some(v) = f.samples {
                    s.samples = v;
                }
                if let Some(v) = f.workers {
                    s.workers = v;
                }
                if let Some(v) = f.steps {
                    s.steps = v;
                }
                s.validate()?;
                Ok(RunConfig::Marginal { out, settings: s })
            }
            Command::Synth => {
                reject(command, "bins", f.bins.is_some())?;
                reject(command, "folds", f.folds.is_some())?;
                reject(command, "data", f.data.is_some() || f.features.is_some() || f.targets.is_some())?;
                let mut s = file.synth;
                if let Some(v) = f.seed {
                    s.seed = v;
                }
                if let Some(v) = f.trials {
                    s.trials = v;
                }
                if let Some(v) = f.heads {
                    s.heads = v;
                }
                if let Some(v) = f.radius {
                    s.grid.radius = v;
                }
                if let Some(v) = f.lambda {
                    s.grid.lambdas = vec![v];
                }
                if let Some(v) = f.order {
                    s.grid.orders = vec![v];
                }
                if let Some(v) = f.samples {
                    s.sizes = vec![v];
                }
                if let Some(v) = f.workers {
                    s.workers = v;
                }
                if let Some(v) = f.steps {
                    s.max_steps = v;
                }
                if let Some(v) = f.truths {
                    s.truths = v;
                }
                s.validate()?;
                Ok(RunConfig::Synth { out, settings: s })
            }
            Command::Tabular => {
                reject(command, "trials", f.trials.is_some())?;
                reject(command, "samples", f.samples.is_some())?;
                reject(command, "truths", f.truths.is_some())?;
                reject(command, "steps", f.steps.is_some())?;
                let mut s = file.tabular;
                if let Some(v) = f.seed {
                    s.seed = v;
                }
                if let Some(v) = f.heads {
                    s.heads = v;
                }
                if let Some(v) = f.radius {
                    s.grid.radius = v;
                }
                if let Some(v) = f.lambda {
                    s.grid.lambdas = vec![v];
                }
                if let Some(v) = f.order {
                    s.grid.orders = vec![v];
                }
                if let Some(v) = f.bins {
                    s.bins = Some(v);
                }
                if let Some(v) = f.folds {
                    s.folds = v;
                }
                if let Some(v) = f.workers {
                    s.workers = v;
                }
                if let Some(v) = f.data {
                    s.data = Some(v);
                }
                if let Some(v) = f.features {
                    s.features = v;
                }
                if let Some(v) = f.targets {
                    s.targets = v;
                }
                s.validate()?;
                Ok(RunConfig::Tabular { out, settings: s })
            }
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            RunConfig::Marginal { out, .. } | RunConfig::Synth { out, .. } | RunConfig::Tabular { out, .. } => out,
        }
    }

    /// Runs the command, writing its tables under the output directory.
    pub fn run(&self) -> Result<()> {
        match self {
            RunConfig::Marginal { out, settings } => cmd_marginal(settings, Some(out)).map(|_| ()),
            RunConfig::Synth { out, settings } => cmd_synth(settings, Some(out)).map(|_| ()),
            RunConfig::Tabular { out, settings } => cmd_tabular(settings, Some(out)).map(|_| ()),
        }
    }
}

fn parse_list<T: FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(format!("empty list '{s}'")));
    }
    Ok(items)
}

/// `"mn,sdp"` or `"all"`.
pub fn parse_heads(s: &str) -> Result<Vec<HeadKind>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(HeadKind::ALL.to_vec());
    }
    parse_list(s)
}

pub fn parse_truths(s: &str) -> Result<Vec<TruthKind>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(TruthKind::ALL.to_vec());
    }
    parse_list(s)
}

/// `"32"` or `"38x38"`.
pub fn parse_bins(s: &str) -> Result<Vec<usize>> {
    s.split(['x', 'X', ','])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad bin count '{p}' in '{s}'")))
        })
        .collect()
}
