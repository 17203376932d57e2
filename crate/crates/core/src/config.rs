//! TOML experiment configuration files.
//!
//! Every hyperparameter is a named key with a default, so a file only needs
//! the environment list; `preset` renders the published setups in full.

use std::path::Path;

use crate::dynsys::SystemKind;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;

pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate().map_err(|e| match e {
        Error::Contract(msg) => Error::Config(msg),
        other => other,
    })?;
    Ok(cfg)
}

pub fn to_toml_string(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Published setup for a system named `vdp`, `l63` or `l96` (case-insensitive).
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let kind: SystemKind = name.parse()?;
    Ok(ExperimentConfig::standard(kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::SystemSpec;
    use crate::experiment::Setting;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in ["vdp", "L63", "l96"] {
            let cfg = preset(name).unwrap();
            let text = to_toml_string(&cfg).unwrap();
            assert_eq!(from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = from_toml_str(
            r#"
            setting = "multi_task"
            [[environments]]
            kind = "van_der_pol"
            mu = "1.5"
            [[environments]]
            kind = "van_der_pol"
            mu = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.setting, Setting::MultiTask);
        assert_eq!(cfg.num_seeds, 10);
        assert_eq!(cfg.reservoir.size, 1000);
        assert_eq!(cfg.learner.num_heads, 10);
        assert_eq!(cfg.environments[1], SystemSpec::VanDerPol { mu: 3.0 });
    }

    #[test]
    fn invalid_files_are_config_errors() {
        for text in [
            "environments = []",
            "num_seeds = 0\n[[environments]]\nkind = \"van_der_pol\"\nmu = 1",
            "[[environments]]\nkind = \"van_der_pol\"\nmu = 1\n[learner]\ndrift_threshold = 0.5",
            "[[environments]]\nkind = \"pendulum\"",
            "[[environments]]\nkind = \"van_der_pol\"\nmu = 1\n[[environments]]\nkind = \"lorenz63\"\nrho = 28\nsigma = 10\nbeta = 2.66",
        ] {
            let err = from_toml_str(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
        assert!(preset("pendulum").is_err());
    }
}
