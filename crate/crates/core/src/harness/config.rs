//! Declarative experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Windmill regression; `design` selects M0..M3.
    Regression {
        design: usize,
        g: f64,
        #[serde(default = "default_a0")]
        a0: f64,
        #[serde(default = "default_b0")]
        b0: f64,
    },
    /// Galaxy velocity mixture.
    Mixture { k: usize, equal_variance: bool },
    /// Epilepsy seizure counts.
    Poisson { with_time_effect: bool },
}

fn default_a0() -> f64 {
    crate::models::regression::DEFAULT_A0
}

fn default_b0() -> f64 {
    crate::models::regression::DEFAULT_B0
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::Regression { .. } => "regression",
            ModelConfig::Mixture { .. } => "mixture",
            ModelConfig::Poisson { .. } => "poisson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn kept(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in)
    }
}

/// Estimates an experiment can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Closed-form evidence (regression only).
    Target,
    /// Product-marginal estimator with the exact marginals.
    Exact,
    /// Product-marginal estimator with Rao-Blackwellized marginals.
    RaoBlackwell,
    /// Moment-matched normal for beta, inverse gamma for the variance.
    Moment,
    /// Moment-matched normal for beta, log-normal for the variance.
    TransformedNormal,
    /// Rao-Blackwell run re-weighted to each `reuse_g`.
    PriorReuse,
    LaplaceMetropolis,
    Chib,
    NaivePriorMc,
    /// Mixture estimate from the chain as sampled.
    Simple,
    /// `Simple` plus `log k!`.
    BiasCorrected,
    /// Mixture estimate from a randomly relabelled chain.
    RandomPermutation,
    /// Poisson estimate with the random effects integrated out.
    ThreeBlock,
    /// Poisson estimate with the random effects as a fourth block.
    FourBlock,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Target => "target",
            Variant::Exact => "exact-marginals",
            Variant::RaoBlackwell => "rao-blackwell",
            Variant::Moment => "moment-matched",
            Variant::TransformedNormal => "transformed-normal",
            Variant::PriorReuse => "prior-reuse",
            Variant::LaplaceMetropolis => "laplace-metropolis",
            Variant::Chib => "chib",
            Variant::NaivePriorMc => "naive-prior-mc",
            Variant::Simple => "simple",
            Variant::BiasCorrected => "bias-corrected",
            Variant::RandomPermutation => "random-permutation",
            Variant::ThreeBlock => "three-block",
            Variant::FourBlock => "four-block",
        }
    }

    fn families(self) -> &'static [&'static str] {
        match self {
            Variant::Target
            | Variant::Exact
            | Variant::Moment
            | Variant::TransformedNormal
            | Variant::PriorReuse
            | Variant::Chib
            | Variant::NaivePriorMc
            | Variant::RaoBlackwell
            | Variant::LaplaceMetropolis => &["regression"],
            Variant::Simple | Variant::BiasCorrected | Variant::RandomPermutation => &["mixture"],
            Variant::ThreeBlock | Variant::FourBlock => &["poisson"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reorder {
    /// Deterministic lagged shift of each block.
    Systematic,
    /// Independent random permutation of every block but the first.
    RandomPermute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub variants: Vec<Variant>,
    /// Number of batches `K`.
    pub batches: usize,
    /// Rao-Blackwell reduced sample size `L`; family default when absent.
    #[serde(default)]
    pub reduced_draws: Option<usize>,
    /// Re-ordering scheme; family default when absent.
    #[serde(default)]
    pub reorder: Option<Reorder>,
    /// Importance draws per subject for the integrated Poisson likelihood.
    #[serde(default)]
    pub n_is: Option<usize>,
    /// Target g values for `prior-reuse`.
    #[serde(default)]
    pub reuse_g: Vec<f64>,
    /// Prior draws for `naive-prior-mc`; defaults to the chain length.
    #[serde(default)]
    pub naive_draws: Option<usize>,
    /// Appended to estimator labels, e.g. `g=1000`; re-weighted rows keep
    /// their own `g=` label.
    #[serde(default)]
    pub label_suffix: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Column label in tables, e.g. `M1`.
    pub name: String,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetKind {
    /// One evidence estimate per (variant, experiment).
    #[default]
    Evidence,
    /// Error-ratio diagnostics at `N` and `2N`.
    Variance,
}

/// A group of experiments rendered as one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub kind: PresetKind,
    /// Decimals for estimates in rendered tables.
    #[serde(default = "default_decimals")]
    pub decimals: usize,
    pub experiments: Vec<ExperimentConfig>,
}

fn default_decimals() -> usize {
    4
}

/// A config file holds either one experiment or a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigFile {
    Preset(Preset),
    Experiment(ExperimentConfig),
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        // try the two shapes separately so the error names the right one
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let parsed = if value.get("experiments").is_some() {
            serde_json::from_value(value).map(ConfigFile::Preset)
        } else {
            serde_json::from_value(value).map(ConfigFile::Experiment)
        };
        let cfg = parsed.map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConfigFile::Experiment(e) => e.validate(),
            ConfigFile::Preset(p) => p.validate(),
        }
    }

    /// The experiments as a preset; a single experiment becomes a preset of
    /// one.
    pub fn into_preset(self) -> Preset {
        match self {
            ConfigFile::Preset(p) => p,
            ConfigFile::Experiment(e) => Preset {
                name: e.name.clone(),
                title: String::new(),
                kind: PresetKind::Evidence,
                decimals: match e.model {
                    ModelConfig::Regression { .. } => 4,
                    _ => 3,
                },
                experiments: vec![e],
            },
        }
    }
}

impl Preset {
    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return Err(Error::config("experiments", "a preset needs at least one experiment"));
        }
        for (i, e) in self.experiments.iter().enumerate() {
            e.validate().map_err(|err| match err {
                Error::Config { field, message } => Error::config(format!("experiments[{i}].{field}"), message),
                other => other,
            })?;
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Checks every constraint that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if s.iterations <= s.burn_in {
            return Err(Error::config(
                "sampler.iterations",
                format!("iterations ({}) must exceed burn_in ({})", s.iterations, s.burn_in),
            ));
        }
        let e = &self.estimator;
        if e.batches < 2 {
            return Err(Error::config("estimator.batches", "at least two batches are required"));
        }
        if s.kept() % e.batches != 0 {
            return Err(Error::config(
                "estimator.batches",
                format!("{} batches do not divide the {} kept draws", e.batches, s.kept()),
            ));
        }
        if e.variants.is_empty() {
            return Err(Error::config("estimator.variants", "no variants requested"));
        }
        let family = self.model.family();
        for v in &e.variants {
            if !v.families().contains(&family) {
                return Err(Error::config(
                    "estimator.variants",
                    format!("`{}` does not apply to the {family} model", v.label()),
                ));
            }
        }
        if let Some(l) = e.reduced_draws {
            if l == 0 || l > s.kept() {
                return Err(Error::config(
                    "estimator.reduced_draws",
                    format!("must be between 1 and the {} kept draws", s.kept()),
                ));
            }
        }
        if e.n_is == Some(0) {
            return Err(Error::config("estimator.n_is", "must be positive"));
        }
        if e.variants.contains(&Variant::PriorReuse) && e.reuse_g.is_empty() {
            return Err(Error::config("estimator.reuse_g", "prior-reuse needs at least one target g"));
        }
        if e.reuse_g.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::config("estimator.reuse_g", "g values must be positive"));
        }
        if let Some(n) = e.naive_draws {
            if n < e.batches || n % e.batches != 0 {
                return Err(Error::config("estimator.naive_draws", "must be a positive multiple of batches"));
            }
        }
        match self.model {
            ModelConfig::Regression { design, g, a0, b0 } => {
                if design > 3 {
                    return Err(Error::config("model.design", "wind designs are 0..=3"));
                }
                if !(g > 0.0) {
                    return Err(Error::config("model.g", "must be positive"));
                }
                if !(a0 > 0.0 && b0 > 0.0) {
                    return Err(Error::config("model.a0", "a0 and b0 must be positive"));
                }
            }
            ModelConfig::Mixture { k, .. } => {
                if !(1..=4).contains(&k) {
                    return Err(Error::config("model.k", "components must be between 1 and 4"));
                }
            }
            ModelConfig::Poisson { .. } => {}
        }
        Ok(())
    }
}
