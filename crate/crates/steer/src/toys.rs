//! The shipped toy experiments.

use crate::config::ExperimentConfig;

pub const CONTINUOUS_COUNT: &str = include_str!("../configs/continuous_count.toml");
pub const TOKEN_COUNT: &str = include_str!("../configs/token_count.toml");
pub const CLASSIFIER: &str = include_str!("../configs/classifier.toml");

/// `(name, config text)` of every toy.
pub const ALL: [(&str, &str); 3] =
    [("continuous-count", CONTINUOUS_COUNT), ("token-count", TOKEN_COUNT), ("classifier", CLASSIFIER)];

/// Parses a shipped toy config.
pub fn load(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("shipped configs are valid")
}
