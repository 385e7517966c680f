//! Line-oriented `key = value` problem configuration.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::{build_extraction_model, build_logistic_model, CaseStudyParams, ProblemSpec};
use crate::error::{Error, Result};

/// Which preset the configuration selects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelKind {
    #[default]
    Extraction,
    Logistic,
    /// Handles supplied programmatically; cannot be built from a file alone.
    Custom,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Extraction => "extraction",
            ModelKind::Logistic => "logistic",
            ModelKind::Custom => "custom",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "extraction" => Ok(ModelKind::Extraction),
            "logistic" => Ok(ModelKind::Logistic),
            "custom" => Ok(ModelKind::Custom),
            other => Err(format!(
                "unknown model `{other}` (expected extraction, logistic or custom)"
            )),
        }
    }
}

/// Parsed configuration file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemConfig {
    pub model: ModelKind,
    pub params: CaseStudyParams,
    pub x_min_rel: f64,
    pub tol_root: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let tol = super::Tolerances::default();
        Self {
            model: ModelKind::Extraction,
            params: CaseStudyParams::default(),
            x_min_rel: tol.x_min_rel,
            tol_root: tol.root,
        }
    }
}

impl ProblemConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ProblemConfig::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line: line_no,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            let num = || -> Result<f64> {
                value.parse::<f64>().map_err(|_| Error::Config {
                    line: line_no,
                    reason: format!("`{key}` expects a number, got `{value}`"),
                })
            };
            match key {
                "model" => {
                    cfg.model = value.parse().map_err(|reason| Error::Config {
                        line: line_no,
                        reason,
                    })?
                }
                "kappa" => cfg.params.kappa = num()?,
                "alpha" => cfg.params.alpha = num()?,
                "sigma" => cfg.params.sigma = num()?,
                "eta" => cfg.params.eta = num()?,
                "cost" => cfg.params.cost = num()?,
                "delta" => cfg.params.delta = num()?,
                "epsilon" => cfg.params.epsilon = num()?,
                "x_min_rel" => cfg.x_min_rel = num()?,
                "tol_root" => cfg.tol_root = num()?,
                other => {
                    return Err(Error::Config {
                        line: line_no,
                        reason: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    /// Builds the problem described by the configuration.
    pub fn build(&self) -> Result<ProblemSpec> {
        for (name, v) in [("x_min_rel", self.x_min_rel), ("tol_root", self.tol_root)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        let mut spec = match self.model {
            ModelKind::Extraction => build_extraction_model(self.params)?,
            ModelKind::Logistic => build_logistic_model(self.params)?,
            ModelKind::Custom => {
                return Err(Error::InvalidParameter {
                    name: "model",
                    reason: "custom models need programmatic function handles".into(),
                })
            }
        };
        spec.tol.x_min_rel = self.x_min_rel;
        spec.tol.root = self.tol_root;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let text = "# case study\nmodel = logistic\nkappa = 2\nalpha=0.5\nsigma = 1.5\n\
                    eta = 1\ncost = 0.5\ndelta = 0.4\nepsilon = 2 # comment\n\
                    x_min_rel = 1e-9\ntol_root = 1e-11\n";
        let cfg = ProblemConfig::parse(text).unwrap();
        assert_eq!(cfg.model, ModelKind::Logistic);
        assert_eq!(cfg.params.kappa, 2.0);
        assert_eq!(cfg.params.alpha, 0.5);
        assert_eq!(cfg.params.sigma, 1.5);
        assert_eq!(cfg.params.cost, 0.5);
        assert_eq!(cfg.params.delta, 0.4);
        assert_eq!(cfg.params.epsilon, 2.0);
        assert_eq!(cfg.x_min_rel, 1e-9);
        assert_eq!(cfg.tol_root, 1e-11);
        let spec = cfg.build().unwrap();
        assert_eq!(spec.tol.root, 1e-11);
    }

    #[test]
    fn rejects_unknown_and_malformed_lines() {
        assert!(matches!(
            ProblemConfig::parse("gamma = 1"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            ProblemConfig::parse("kappa = 1\nkappa 2"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            ProblemConfig::parse("sigma = abc"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            ProblemConfig::parse("eta = 1\neta = 2"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(ProblemConfig::parse("model = custom").unwrap().build().is_err());
    }

    #[test]
    fn empty_file_is_the_case_study() {
        let cfg = ProblemConfig::parse("").unwrap();
        assert_eq!(cfg, ProblemConfig::default());
    }
}
