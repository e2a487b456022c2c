//! Run configuration shared by all subcommands.
//!
//! One TOML file holds the `[scenario]`, `[learning]` and `[classifier]`
//! sections plus the `[inputs]` used by a run. Every subcommand writes the
//! resolved file (defaults expanded, command-line overrides applied) to
//! `config.toml` in its output directory; feeding that file back reproduces
//! the run.

use std::path::{Path, PathBuf};

use oscloc_core::dtw::DtwOptions;
use oscloc_core::io::write_atomic;
use oscloc_core::learning::LearnConfig;
use oscloc_powersim::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub k: usize,
    /// Align test series against the best-matching stretch of each training
    /// series instead of all of it.
    pub subsequence: bool,
    /// Sakoe-Chiba band half-width.
    pub window: Option<usize>,
    /// Delays (seconds) at which test windows are re-cut during `evaluate`.
    pub delay_sweep: Option<Vec<f64>>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            k: 1,
            subsequence: false,
            window: None,
            delay_sweep: None,
        }
    }
}

impl ClassifierConfig {
    pub fn dtw_options(&self) -> DtwOptions {
        DtwOptions {
            window: self.window,
            subsequence: self.subsequence,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub grid: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub training: Option<PathBuf>,
    pub testing: Option<PathBuf>,
    pub metric: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub learning: LearnConfig,
    pub classifier: ClassifierConfig,
    pub inputs: Inputs,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::input(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serialises")
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("run config always serialises")
    }

    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(CONFIG_FILE);
        write_atomic(&path, self.to_toml())?;
        Ok(path)
    }
}

/// `"3,4,5"` → `[3.0, 4.0, 5.0]`.
pub fn parse_delay_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|d| d.is_finite() && *d >= 0.0)
                .ok_or_else(|| CliError::input(format!("invalid delay {s:?} in --delay-sweep")))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(CliError::input("--delay-sweep needs at least one delay"))
            } else {
                Ok(v)
            }
        })
}
