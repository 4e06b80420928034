//! Run configuration read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{GenConfig, SplitConfig};
use crate::error::{Error, Result};
use crate::graph::{ShiftDomain, ShiftKind, SplitTag};
use crate::gvag::ExplainerConfig;
use crate::npaf::NpafConfig;
use crate::target::TargetConfig;
use crate::tensor::params::read_to_string;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub kind: ShiftKind,
    pub domain: ShiftDomain,
    pub seed: u64,
    pub id_test_fraction: f64,
    pub test_fraction: f64,
    pub train_corr: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let c = SplitConfig::default();
        Self {
            kind: ShiftKind::Covariate,
            domain: ShiftDomain::Basis,
            seed: c.seed,
            id_test_fraction: c.id_test_fraction,
            test_fraction: c.test_fraction,
            train_corr: c.train_corr,
        }
    }
}

impl SplitSection {
    pub fn config(&self) -> SplitConfig {
        SplitConfig {
            seed: self.seed,
            id_test_fraction: self.id_test_fraction,
            test_fraction: self.test_fraction,
            train_corr: self.train_corr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: SplitTag,
    /// Seed of the random baseline.
    pub seed: u64,
    /// Number of explanations rendered to DOT.
    pub dot_count: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: SplitTag::Test,
            seed: 0,
            dot_count: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub densities: Vec<f64>,
    pub lar_weights: Vec<f64>,
    pub recon_weights: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            densities: vec![0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            lar_weights: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            recon_weights: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    pub max_iter: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            sizes: vec![200, 400, 800, 1600],
            max_iter: 20,
            repeats: 5,
            seed: 0,
        }
    }
}

/// Every knob of a run; unknown keys are rejected at parse time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub split: SplitSection,
    pub target: TargetConfig,
    pub npaf: NpafConfig,
    pub explainer: ExplainerConfig,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub bench: BenchSection,
}

fn within(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { key, message } if !key.starts_with(&format!("{section}.")) => Error::Config {
            key: format!("{section}.{key}"),
            message,
        },
        other => other,
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".to_string());
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::structural(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        within("gen", self.gen.validate())?;
        within("split", self.split.config().validate())?;
        within("target", self.target.validate())?;
        within("npaf", self.npaf.validate())?;
        within("explainer", self.explainer.validate())?;
        if self.sweep.densities.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            return Err(Error::config("sweep.densities", "each must lie in (0, 1]"));
        }
        for (key, v) in [("sweep.lar_weights", &self.sweep.lar_weights), ("sweep.recon_weights", &self.sweep.recon_weights)] {
            if v.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return Err(Error::config(key, "each must be finite and non-negative"));
            }
        }
        if self.bench.sizes.is_empty() || self.bench.sizes.contains(&0) {
            return Err(Error::config("bench.sizes", "must be a nonempty list of positive sizes"));
        }
        if self.bench.max_iter == 0 || self.bench.repeats == 0 {
            return Err(Error::config("bench", "max_iter and repeats must be positive"));
        }
        Ok(())
    }

    /// Sets every seed in the configuration to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gen.seed = seed;
        self.split.seed = seed;
        self.target.seed = seed;
        self.npaf.seed = seed;
        self.explainer.seed = seed;
        self.eval.seed = seed;
        self.bench.seed = seed;
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[explainer]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "learning_rate"), "{err}");
        assert!(RunConfig::from_toml("[nope]\n").is_err());
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = RunConfig::from_toml("[explainer]\nlr = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "explainer.lr"), "{err}");
        let err = RunConfig::from_toml("[explainer.recon]\ndensity = 2.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key.ends_with("density")), "{err}");
        let err = RunConfig::from_toml("[gen]\nnum_graphs = 0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key.starts_with("gen.")), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = a.clone().with_seed(1);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = RunConfig::from_toml(
            "[split]\nkind = \"concept\"\ndomain = \"size\"\n[explainer.weights]\nmi = 0.0\n[eval]\nsplit = \"id_test\"\n",
        )
        .unwrap();
        assert_eq!(cfg.split.kind, ShiftKind::Concept);
        assert_eq!(cfg.explainer.weights.mi, 0.0);
        assert_eq!(cfg.eval.split, SplitTag::IdTest);
    }
}
