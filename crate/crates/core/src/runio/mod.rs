//! Random streams, scenario configuration, simulation driving and CSV output.

mod config;
mod rng;
mod scenario;

use std::ops::RangeInclusive;

use thiserror::Error;

pub use config::{load_config, parse_config, Backend, ScenarioConfig};
pub use rng::{
    condition_inf, gaussian_vector, random_matrix, random_spd, random_transition, sample_noise,
    RandomStream, RNG_ALGORITHM,
};
pub use scenario::{
    format_float, monte_carlo_nees, run_repetition, run_scenario, BackendEstimate, EpochRow,
    NeesSeries, ScenarioResult,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {message}", line.map_or_else(|| "config".to_string(), |l| format!("line {l}")))]
    Parse {
        line: Option<usize>,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Name of the offending field for validation errors.
    pub fn field_name(&self) -> Option<&str> {
        match self {
            ConfigError::Field { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid range {input:?}: {reason}")]
pub struct RangeError {
    pub input: String,
    pub reason: &'static str,
}

/// Parses `a..b` (inclusive on both ends) or a single integer `a`.
pub fn parse_inclusive_range(input: &str) -> Result<RangeInclusive<usize>, RangeError> {
    let err = |reason| RangeError {
        input: input.to_string(),
        reason,
    };
    let number = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| err("bounds must be non-negative integers"))
    };
    let (lo, hi) = match input.split_once("..") {
        Some((a, b)) => (number(a)?, number(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let v = number(input)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(err("lower bound exceeds upper bound"));
    }
    Ok(lo..=hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_inclusive_range("1..4").unwrap(), 1..=4);
        assert_eq!(parse_inclusive_range("3").unwrap(), 3..=3);
        assert_eq!(parse_inclusive_range("2..=5").unwrap(), 2..=5);
        assert_eq!(parse_inclusive_range(" 0 .. 2 ").unwrap(), 0..=2);
        for bad in ["", "..", "4..1", "a..b", "-1..2", "1...3", "1..2..3"] {
            assert!(parse_inclusive_range(bad).is_err(), "{bad}");
        }
    }
}
