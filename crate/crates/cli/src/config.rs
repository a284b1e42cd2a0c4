//! The TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use treevo_core::backtest::BacktestConfig;
use treevo_core::data::{split, split_by_fraction, DateRange, SplitPanels, SplitSpec};
use treevo_core::evolution::EvolutionConfig;
use treevo_core::gp::GpConfig;
use treevo_core::llm::BackendConfig;
use treevo_core::Panel;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
    /// Ignore the dates and cut the panel 50/25/25 by position.
    pub by_fraction: bool,
    /// Warm-up days prepended to each split; defaults to horizon plus the longest window.
    pub context: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitConfig {
            train: s.train,
            validation: s.validation,
            test: s.test,
            by_fraction: false,
            context: None,
        }
    }
}

impl SplitConfig {
    pub fn apply(&self, panel: &Panel, horizon: usize) -> Result<SplitPanels, CliError> {
        let context = self.context.unwrap_or_else(|| SplitSpec::default_context(horizon));
        let r = if self.by_fraction {
            split_by_fraction(panel, context)
        } else {
            let spec = SplitSpec {
                train: self.train,
                validation: self.validation,
                test: self.test,
            };
            split(panel, &spec, context)
        };
        r.map_err(|e| CliError::Data(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub evolution: EvolutionConfig,
    pub split: SplitConfig,
    pub backend: BackendConfig,
    pub gp: GpConfig,
    pub backtest: BacktestConfig,
    /// Directory with replacement prompt templates.
    pub templates: Option<PathBuf>,
}

impl AppConfig {
    /// Reads a config file; `None` gives the defaults. Relative paths inside
    /// the file resolve against its directory.
    pub fn load(path: Option<&Path>) -> Result<AppConfig, CliError> {
        let Some(path) = path else {
            return Ok(AppConfig::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg: AppConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.backend.script.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.templates.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.evolution.seed = seed;
        self.gp.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_with_defaults() {
        let text = r#"
[evolution]
population_size = 4
evaluation_budget = 40
operators = "flat"

[split]
by_fraction = true
context = 30

[backend]
kind = "mock"

[backtest]
top_k = 10
drop_m = 2
"#;
        let cfg: AppConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.evolution.population_size, 4);
        assert!(cfg.split.by_fraction);
        assert_eq!(cfg.backtest.top_k, 10);
        assert_eq!(cfg.gp, GpConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<AppConfig>("[evolution]\npopulation = 3\n").is_err());
        assert!(toml::from_str::<AppConfig>("[nonsense]\n").is_err());
    }

    #[test]
    fn explicit_dates_parse() {
        let text = "[split]\ntrain = { start = \"2016-01-01\", end = \"2017-01-01\" }\n";
        let cfg: AppConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.split.train.end.to_string(), "2017-01-01");
    }
}
