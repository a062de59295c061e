//! Run configuration: TOML in, validated [`RunConfig`] out.
//!
//! Parsing is two-stage. [`RawConfig`] mirrors the file with every key
//! optional so command-line flags can be layered on top, then
//! [`RawConfig::validate`] checks everything against the library's
//! preconditions and names the offending key on failure.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spectral_em::spectral::power_law;
use spectral_em::{
    AdditiveDiagonal, ConstantDense, DiffusionOperator, Eigensystem, LevelGrids, LinearDiagonal,
    Problem, SpectralVector,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {reason}")]
    Validation { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Self::Validation { key: key.to_string(), reason: reason.into() }
    }
}

/// A sequence given either explicitly or as `scale · k^(±exponent)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SeqSpec {
    Powerlaw { scale: f64, exponent: f64 },
    Explicit { values: Vec<f64> },
}

/// `n_ℓ = ceil(base · ratio^(ℓ−1))` for `ℓ = 1..=levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NRule {
    Geometric { base: f64, ratio: f64, levels: usize },
}

/// One value for every level, or one per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerLevel {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerLevel {
    fn expand(&self, key: &str, levels: usize) -> Result<Vec<f64>, ConfigError> {
        let v = match self {
            PerLevel::Scalar(x) => vec![*x; levels],
            PerLevel::Vector(v) if v.len() == levels => v.clone(),
            PerLevel::Vector(v) => {
                return Err(ConfigError::invalid(
                    key,
                    format!("expected {levels} values (one per level), got {}", v.len()),
                ))
            }
        };
        finite(key, &v)?;
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DiffusionSpec {
    /// `b_{jℓ} = σ_ℓ δ_{jℓ}`.
    Additive { sigma: PerLevel },
    /// `b_{jℓ} = (γ_ℓ + ρ_ℓ x_ℓ) δ_{jℓ}`.
    Linear { gamma: PerLevel, rho: PerLevel },
    /// Constant `b_{jℓ}`, one row per mode.
    Dense { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum XiSpec {
    Explicit { values: Vec<f64> },
    /// `ξ_j = scale · j^(−exponent)`.
    Powerlaw { scale: f64, exponent: f64 },
    Zero,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    /// Also write `increments.csv`.
    #[serde(default)]
    pub increments: bool,
}

/// The file as written, every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub paths: Option<u64>,
    pub iota: Option<f64>,
    pub modes: Option<usize>,
    pub lambda: Option<SeqSpec>,
    pub q: Option<SeqSpec>,
    pub n_levels: Option<Vec<usize>>,
    pub n_rule: Option<NRule>,
    pub diffusion: Option<DiffusionSpec>,
    pub xi: Option<XiSpec>,
    pub out_dir: Option<String>,
    pub threads: Option<usize>,
    pub simulate: Option<SimulateOptions>,
}

pub const DEFAULT_PATHS: u64 = 1000;
pub const DEFAULT_OUT_DIR: &str = "out";

/// Validated configuration. Field order fixes the canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: u64,
    pub iota: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    pub lambda: SeqSpec,
    pub q: SeqSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_levels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rule: Option<NRule>,
    pub diffusion: DiffusionSpec,
    pub xi: XiSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulate: SimulateOptions,
}

fn finite(key: &str, v: &[f64]) -> Result<(), ConfigError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(ConfigError::invalid(key, format!("entry {} is not finite", k + 1))),
        None => Ok(()),
    }
}

pub fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_raw(text)?.validate()
}

impl RawConfig {
    pub fn validate(self) -> Result<RunConfig, ConfigError> {
        let seed = self.seed.ok_or_else(|| ConfigError::invalid("seed", "required key is missing"))?;
        let paths = self.paths.unwrap_or(DEFAULT_PATHS);
        if paths < 2 {
            return Err(ConfigError::invalid("paths", format!("at least 2 paths required, got {paths}")));
        }
        let iota = self.iota.ok_or_else(|| ConfigError::invalid("iota", "required key is missing"))?;
        spectral_em::diffusion::validate_iota(iota)
            .map_err(|_| ConfigError::invalid("iota", format!("iota must lie in [0, 0.5], got {iota}")))?;
        if let Some(0) = self.threads {
            return Err(ConfigError::invalid("threads", "must be at least 1"));
        }
        let cfg = RunConfig {
            seed,
            paths,
            iota,
            modes: self.modes,
            lambda: self.lambda.ok_or_else(|| ConfigError::invalid("lambda", "required table is missing"))?,
            q: self.q.ok_or_else(|| ConfigError::invalid("q", "required table is missing"))?,
            n_levels: self.n_levels,
            n_rule: self.n_rule,
            diffusion: self
                .diffusion
                .ok_or_else(|| ConfigError::invalid("diffusion", "required table is missing"))?,
            xi: self.xi.ok_or_else(|| ConfigError::invalid("xi", "required table is missing"))?,
            out_dir: self.out_dir,
            threads: self.threads,
            simulate: self.simulate.unwrap_or_default(),
        };
        cfg.build_problem()?;
        Ok(cfg)
    }
}

impl RunConfig {
    /// Canonical TOML; parsing it back gives the same configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical form without `out_dir` and `threads`, which
    /// do not influence any result.
    pub fn digest(&self) -> String {
        let mut view = self.clone();
        view.out_dir = None;
        view.threads = None;
        let hash = Sha256::digest(view.canonical().as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }

    pub fn out_dir(&self) -> &str {
        self.out_dir.as_deref().unwrap_or(DEFAULT_OUT_DIR)
    }

    pub fn step_counts(&self) -> Result<Vec<usize>, ConfigError> {
        let n = match (&self.n_levels, &self.n_rule) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid("n_rule", "give either n_levels or n_rule, not both"))
            }
            (None, None) => return Err(ConfigError::invalid("n_levels", "required key is missing")),
            (Some(n), None) => n.clone(),
            (None, Some(NRule::Geometric { base, ratio, levels })) => {
                if !(base.is_finite() && *base > 0.0 && ratio.is_finite() && *ratio > 0.0) {
                    return Err(ConfigError::invalid("n_rule", "base and ratio must be positive"));
                }
                (0..*levels)
                    .map(|l| {
                        let v = (base * ratio.powi(l as i32)).ceil();
                        if v > u32::MAX as f64 {
                            Err(ConfigError::invalid("n_rule", format!("level {} has too many steps", l + 1)))
                        } else {
                            Ok(v as usize)
                        }
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        if n.is_empty() {
            return Err(ConfigError::invalid("n_levels", "at least one level is required"));
        }
        if let Some(k) = n.iter().position(|&x| x == 0) {
            return Err(ConfigError::invalid("n_levels", format!("level {} has zero steps", k + 1)));
        }
        if n.iter().any(|&x| x > u32::MAX as usize) {
            return Err(ConfigError::invalid("n_levels", "step count too large"));
        }
        Ok(n)
    }

    fn lambdas(&self) -> Result<Vec<f64>, ConfigError> {
        let v = match &self.lambda {
            SeqSpec::Explicit { values } => {
                if let Some(m) = self.modes {
                    if m != values.len() {
                        return Err(ConfigError::invalid(
                            "modes",
                            format!("{m} modes but {} lambda values", values.len()),
                        ));
                    }
                }
                values.clone()
            }
            SeqSpec::Powerlaw { scale, exponent } => {
                let modes = self
                    .modes
                    .ok_or_else(|| ConfigError::invalid("modes", "required with a power-law lambda"))?;
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(ConfigError::invalid("lambda.scale", "must be positive"));
                }
                if !(exponent.is_finite() && *exponent > 0.0) {
                    return Err(ConfigError::invalid("lambda.exponent", "must be positive"));
                }
                power_law(*scale, *exponent, modes)
            }
        };
        if v.is_empty() {
            return Err(ConfigError::invalid("lambda", "at least one mode is required"));
        }
        finite("lambda.values", &v)?;
        if v[0] <= 0.0 {
            return Err(ConfigError::invalid("lambda", "eigenvalues must be positive"));
        }
        if let Some(k) = v.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ConfigError::invalid(
                "lambda",
                format!("eigenvalues must strictly increase (entry {})", k + 2),
            ));
        }
        Ok(v)
    }

    fn qs(&self, levels: usize) -> Result<Vec<f64>, ConfigError> {
        let v = match &self.q {
            SeqSpec::Explicit { values } => {
                if values.len() != levels {
                    return Err(ConfigError::invalid(
                        "q.values",
                        format!("expected {levels} values (one per level), got {}", values.len()),
                    ));
                }
                values.clone()
            }
            SeqSpec::Powerlaw { scale, exponent } => {
                if !(scale.is_finite() && *scale >= 0.0) {
                    return Err(ConfigError::invalid("q.scale", "must be non-negative"));
                }
                if !exponent.is_finite() {
                    return Err(ConfigError::invalid("q.exponent", "must be finite"));
                }
                power_law(*scale, -exponent, levels)
            }
        };
        finite("q.values", &v)?;
        if let Some(k) = v.iter().position(|&x| x < 0.0) {
            return Err(ConfigError::invalid("q", format!("entry {} is negative", k + 1)));
        }
        Ok(v)
    }

    fn initial_value(&self, modes: usize) -> Result<Vec<f64>, ConfigError> {
        let v = match &self.xi {
            XiSpec::Zero => vec![0.0; modes],
            XiSpec::Explicit { values } => {
                if values.len() != modes {
                    return Err(ConfigError::invalid(
                        "xi.values",
                        format!("expected {modes} values (one per mode), got {}", values.len()),
                    ));
                }
                values.clone()
            }
            XiSpec::Powerlaw { scale, exponent } => power_law(*scale, -exponent, modes),
        };
        finite("xi", &v)?;
        Ok(v)
    }

    fn operator(&self, modes: usize, levels: usize) -> Result<Arc<dyn DiffusionOperator>, ConfigError> {
        let core = |key: &str, e: spectral_em::Error| ConfigError::invalid(key, e.to_string());
        Ok(match &self.diffusion {
            DiffusionSpec::Additive { sigma } => Arc::new(
                AdditiveDiagonal::new(sigma.expand("diffusion.sigma", levels)?, self.iota)
                    .map_err(|e| core("iota", e))?,
            ),
            DiffusionSpec::Linear { gamma, rho } => Arc::new(
                LinearDiagonal::new(
                    gamma.expand("diffusion.gamma", levels)?,
                    rho.expand("diffusion.rho", levels)?,
                    self.iota,
                )
                .map_err(|e| core("diffusion", e))?,
            ),
            DiffusionSpec::Dense { matrix } => {
                if matrix.len() != modes || matrix.iter().any(|row| row.len() != levels) {
                    return Err(ConfigError::invalid(
                        "diffusion.matrix",
                        format!("expected {modes} rows of {levels} values"),
                    ));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                finite("diffusion.matrix", &flat)?;
                let m = Array2::from_shape_vec((modes, levels), flat).expect("shape checked");
                Arc::new(ConstantDense::new(m, self.iota).map_err(|e| core("iota", e))?)
            }
        })
    }

    /// Eigensystem, grids, operator and initial value assembled into a problem.
    pub fn build_problem(&self) -> Result<Problem, ConfigError> {
        let n = self.step_counts()?;
        let lambdas = self.lambdas()?;
        let modes = lambdas.len();
        let qs = self.qs(n.len())?;
        let es = Eigensystem::new(lambdas, qs).map_err(|e| ConfigError::invalid("lambda", e.to_string()))?;
        let grids = LevelGrids::uniform(&n).map_err(|e| ConfigError::invalid("n_levels", e.to_string()))?;
        let op = self.operator(modes, n.len())?;
        let xi = SpectralVector::new(self.initial_value(modes)?)
            .map_err(|e| ConfigError::invalid("xi", e.to_string()))?;
        Problem::new(es, grids, op, xi).map_err(|e| ConfigError::invalid("diffusion", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
paths = 100
iota = 0.25
n_levels = [2, 3]

[lambda]
type = "explicit"
values = [1.0, 4.0]

[q]
type = "powerlaw"
scale = 1.0
exponent = 2.0

[diffusion]
type = "additive"
sigma = 1.0

[xi]
type = "zero"
"#;

    #[test]
    fn iota_out_of_range() {
        let text = BASE.replace("iota = 0.25", "iota = 0.7");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("iota must lie in [0, 0.5]"), "{err}");
        assert!(matches!(err, ConfigError::Validation { ref key, .. } if key == "iota"));
    }

    #[test]
    fn missing_seed_is_named() {
        let err = parse_config(&BASE.replace("seed = 7", "")).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref key, .. } if key == "seed"));
    }

    #[test]
    fn canonical_form_is_idempotent() {
        let cfg = parse_config(BASE).unwrap();
        let once = cfg.canonical();
        let again = parse_config(&once).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), once);
        assert_eq!(again.n_levels, Some(vec![2, 3]));
        assert!(once.contains("n_levels = [2, 3]"), "{once}");
    }

    #[test]
    fn digest_ignores_output_location() {
        let mut cfg = parse_config(BASE).unwrap();
        let d = cfg.digest();
        cfg.out_dir = Some("elsewhere".into());
        cfg.threads = Some(8);
        assert_eq!(cfg.digest(), d);
        cfg.seed = 8;
        assert_ne!(cfg.digest(), d);
    }

    #[test]
    fn geometric_rule() {
        let text = BASE.replace(
            "n_levels = [2, 3]",
            "n_rule = { type = \"geometric\", base = 1.5, ratio = 2.0, levels = 3 }",
        );
        let text = text.replace("values = [1.0, 4.0]", "values = [1.0, 4.0, 9.0]");
        assert_eq!(parse_config(&text).unwrap().step_counts().unwrap(), vec![2, 3, 6]);
    }

    #[test]
    fn syntax_and_unknown_keys() {
        assert!(matches!(parse_config("seed = "), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config(&format!("bogus = 1\n{BASE}")), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn shape_errors_name_keys() {
        let key = |text: String| match parse_config(&text).unwrap_err() {
            ConfigError::Validation { key, .. } => key,
            e => panic!("{e}"),
        };
        assert_eq!(key(BASE.replace("sigma = 1.0", "sigma = [1.0]")), "diffusion.sigma");
        assert_eq!(key(BASE.replace("values = [1.0, 4.0]", "values = [4.0, 1.0]")), "lambda");
        assert_eq!(key(BASE.replace("n_levels = [2, 3]", "n_levels = [2, 0]")), "n_levels");
        assert_eq!(key(BASE.replace("paths = 100", "paths = 1")), "paths");
    }
}
