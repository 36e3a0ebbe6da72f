//! Experiment configuration: a flat key-value file format plus typed
//! validation. CLI flags override file values; flag names mirror the field
//! names exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::relay::{ProtocolParams, RelayStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!(
                "report_format must be json or csv, got `{other}`"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

/// Everything a run needs. All fields are validated before any computation
/// starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub v_a: f64,
    pub v_b: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub excess_noise: f64,
    pub n_rounds: usize,
    pub seed: u64,
    pub relay_strategy: RelayStrategy,
    pub baseline_f: f64,
    pub confidence: f64,
    pub output_path: String,
    pub report_format: ReportFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            v_a: 2.0,
            v_b: 2.0,
            eta_a: 0.5,
            eta_b: 0.5,
            excess_noise: 0.0,
            n_rounds: 100_000,
            seed: 42,
            relay_strategy: RelayStrategy::Honest,
            baseline_f: 0.1,
            confidence: 0.95,
            output_path: "-".into(),
            report_format: ReportFormat::Json,
        }
    }
}

impl ExperimentConfig {
    /// Set one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_f64 = |v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` expects a real number, got `{v}`")))
        };
        match key {
            "v_a" => self.v_a = parse_f64(value)?,
            "v_b" => self.v_b = parse_f64(value)?,
            "eta_a" => self.eta_a = parse_f64(value)?,
            "eta_b" => self.eta_b = parse_f64(value)?,
            "excess_noise" => self.excess_noise = parse_f64(value)?,
            "n_rounds" => {
                self.n_rounds = value.trim().parse().map_err(|_| {
                    Error::Config(format!("`n_rounds` expects a positive integer, got `{value}`"))
                })?
            }
            "seed" => {
                self.seed = value.trim().parse().map_err(|_| {
                    Error::Config(format!("`seed` expects a 64-bit integer, got `{value}`"))
                })?
            }
            "relay_strategy" => self.relay_strategy = RelayStrategy::parse(value)?,
            "baseline_f" => self.baseline_f = parse_f64(value)?,
            "confidence" => self.confidence = parse_f64(value)?,
            "output_path" => self.output_path = value.trim().to_string(),
            "report_format" => self.report_format = ReportFormat::parse(value)?,
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse the flat key-value format: one `key = value` per line, `#`
    /// starts a comment.
    pub fn apply_str(&mut self, content: &str) -> Result<()> {
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let content = std::fs::read_to_string(path)?;
        self.apply_str(&content)
    }

    /// Validate every field and produce the physical-channel parameters.
    pub fn validate(&self) -> Result<ProtocolParams> {
        let params = ProtocolParams {
            v_a: self.v_a,
            v_b: self.v_b,
            eta_a: self.eta_a,
            eta_b: self.eta_b,
            excess_noise: self.excess_noise,
            n_rounds: self.n_rounds,
            seed: self.seed,
        };
        params.validate()?;
        if self.n_rounds < 2 {
            return Err(Error::InvalidParameter {
                name: "n_rounds".into(),
                reason: "estimation needs at least 2 rounds".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.baseline_f) || !self.baseline_f.is_finite() {
            return Err(Error::InvalidParameter {
                name: "baseline_f".into(),
                reason: "must lie in [0, 1]".into(),
            });
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter {
                name: "confidence".into(),
                reason: "must lie in (0, 1)".into(),
            });
        }
        if self.output_path.is_empty() {
            return Err(Error::InvalidParameter {
                name: "output_path".into(),
                reason: "must be a path or `-`".into(),
            });
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_parse_and_validate() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_str(
            "# experiment\n\
             v_a = 4.0\n\
             eta_a = 0.9   # strong link\n\
             n_rounds = 5000\n\
             relay_strategy = rescaled:2\n\
             report_format = csv\n",
        )
        .unwrap();
        assert_eq!(cfg.v_a, 4.0);
        assert_eq!(cfg.eta_a, 0.9);
        assert_eq!(cfg.n_rounds, 5000);
        assert_eq!(cfg.relay_strategy, RelayStrategy::Rescaled { k: 2.0 });
        assert_eq!(cfg.report_format, ReportFormat::Csv);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(
            cfg.apply_str("bogus_key = 1\n").unwrap_err(),
            Error::Config(_)
        ));
        assert!(cfg.apply_str("v_a 2.0\n").is_err());
        assert!(cfg.set("v_a", "not_a_number").is_err());
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("eta_a", "1.5").unwrap();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.set("baseline_f", "1.5").unwrap();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.set("confidence", "0").unwrap();
        assert!(cfg.validate().is_err());
    }
}
