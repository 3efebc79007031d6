//! Strict TOML run configuration.
//!
//! The file mirrors `RunConfig` one to one: top-level keys for the loop
//! settings and one table per module (`[env]`, `[model.gp]`,
//! `[explorer.icem]`, `[[downstream]]`, ...). Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use opax::experiment::RunConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Syntax or schema error; `key` is the dotted path of the offending
    /// entry (`.` for the document root).
    #[error("{origin}: at `{key}`: {message}")]
    Parse { origin: String, key: String, message: String },

    #[error("{origin}: {source}")]
    Invalid {
        origin: String,
        #[source]
        source: opax::Error,
    },
}

/// Parses and validates a configuration document. `origin` names it in
/// error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    let parse_err = |key: String, message: String| ConfigError::Parse { origin: origin.to_string(), key, message };
    let de = toml::Deserializer::parse(text).map_err(|e| parse_err(".".into(), e.to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        parse_err(key, e.into_inner().message().trim().to_string())
    })?;
    cfg.validate().map_err(|source| ConfigError::Invalid { origin: origin.to_string(), source })?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text, &path.display().to_string())
}

/// Renders a configuration back to TOML.
pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("run configurations are representable in TOML")
}

/// The fully spelled-out default configuration (pendulum, GP backend) with
/// every key present.
pub fn reference_config() -> String {
    let cfg = parse_config_str(REFERENCE_SEED, "reference").expect("reference seed is valid");
    let mut out = String::from(REFERENCE_HEADER);
    out.push_str(&to_toml(&cfg));
    out
}

const REFERENCE_HEADER: &str = "\
# Reference configuration: every key with its default value.
#
# Generated by `opax_cli::config::reference_config`; keep it in sync with
# `cargo test -p opax-cli reference`.
#
# Required keys: env.kind, explorer.mode, explorer.objective, episodes,
# horizon, beta. Everything else may be omitted.
#
# env.kind            pendulum | mountain_car | point_mass
# env.reset           fixed | random (start state of exploration episodes)
# model.backend       gp | ensemble
# model.gp.kernel.kind  rbf | matern52 | linear
# explorer.mode       optimistic | mean | ts1 | random | true_env
# explorer.objective  { intrinsic = { kind = log_ratio | sum_sq, noise_sigma } }
#                     or { task = { kind = ..., goal = [...] } }
# explorer.aggregation  sum | mean | min
# downstream.task.kind  pendulum_swingup | pendulum_keepdown | mountaincar_goal | pointmass_goto
# downstream.mode     mean | true_env
#
# explorer.halluc_beta is overridden by `beta` for optimistic exploration.

";

const REFERENCE_SEED: &str = r#"
episodes = 20
horizon = 100
beta = 2.0

[env]
kind = "pendulum"

[model]
backend = "gp"

[model.gp]
noise_sigma = 0.01

[model.gp.kernel]
kind = "rbf"
lengthscale = [1.0, 1.0, 4.0, 2.0]
signal_variance = 1.0

[explorer]
mode = "optimistic"

[explorer.objective.intrinsic]
kind = "log_ratio"
noise_sigma = 0.01

[[downstream]]
task = { kind = "pendulum_swingup" }

[[downstream]]
task = { kind = "pendulum_keepdown" }
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parses_and_round_trips() {
        let text = reference_config();
        let cfg = parse_config_str(&text, "reference").unwrap();
        assert_eq!(parse_config_str(&to_toml(&cfg), "again").unwrap(), cfg);
    }

    #[test]
    fn syntax_errors_are_reported() {
        let e = parse_config_str("episodes = = 3", "bad.toml").unwrap_err();
        assert!(matches!(e, ConfigError::Parse { .. }), "{e}");
        assert!(e.to_string().starts_with("bad.toml"));
    }
}
