//! Run configuration: a JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mfam_core::model::ModelConfig;
use mfam_core::{Aggregator, BandSet, TrainConfig};
use serde::{Deserialize, Serialize};

/// Architecture settings that do not depend on the data. Channel, class and
/// domain counts are filled in once the dataset is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub hidden_dim: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub attention_hidden: usize,
    pub instance_window: usize,
    pub instance_stride: usize,
    pub topk_ratio: f64,
    pub channel_reduction: usize,
    pub discr_hidden: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let m = ModelConfig::new(1, 2, 1);
        Self {
            hidden_dim: m.hidden_dim,
            kernel_size: m.kernel_size,
            dilations: m.dilations,
            attention_hidden: m.attention_hidden,
            instance_window: m.instance_window,
            instance_stride: m.instance_stride,
            topk_ratio: m.topk_ratio,
            channel_reduction: m.channel_reduction,
            discr_hidden: m.discr_hidden,
        }
    }
}

impl ModelOptions {
    pub fn to_config(
        &self,
        in_channels: usize,
        num_classes: usize,
        num_domains: usize,
        aggregator: Aggregator,
    ) -> ModelConfig {
        ModelConfig {
            in_channels,
            hidden_dim: self.hidden_dim,
            kernel_size: self.kernel_size,
            dilations: self.dilations.clone(),
            attention_hidden: self.attention_hidden,
            num_classes,
            num_domains,
            instance_window: self.instance_window,
            instance_stride: self.instance_stride,
            topk_ratio: self.topk_ratio,
            channel_reduction: self.channel_reduction,
            discr_hidden: self.discr_hidden,
            aggregator,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub bands: BandSet,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Restricts the run to one activity; otherwise each activity is
    /// trained separately.
    pub activity: Option<String>,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelOptions::default(),
            train: TrainConfig::default(),
            bands: BandSet::default(),
            data: None,
            out: None,
            activity: None,
            folds: 4,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Used only when neither the flag nor the file sets a seed.
    pub env_seed: Option<u64>,
    pub aggregator: Option<Aggregator>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr: Option<f64>,
    pub hidden_dim: Option<usize>,
    pub bands: Option<String>,
    pub activity: Option<String>,
    pub folds: Option<usize>,
}

impl RunConfig {
    /// The parsed config and whether it sets the seed explicitly.
    fn load(path: &Path) -> Result<(Self, bool)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let parse = || format!("parsing config {}", path.display());
        let raw: serde_json::Value = serde_json::from_str(&text).with_context(parse)?;
        let has_seed = raw.pointer("/train/seed").is_some();
        Ok((serde_json::from_value(raw).with_context(parse)?, has_seed))
    }

    /// Defaults, then the environment seed, then the file, then flags.
    pub fn resolve(path: Option<&Path>, o: Overrides) -> Result<Self> {
        let (mut cfg, file_seed) = match path {
            Some(p) => Self::load(p)?,
            None => (Self::default(), false),
        };
        if let (Some(v), false) = (o.env_seed, file_seed) {
            cfg.train.seed = v;
        }
        if let Some(v) = o.data {
            cfg.data = Some(v);
        }
        if let Some(v) = o.out {
            cfg.out = Some(v);
        }
        if let Some(v) = o.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = o.aggregator {
            cfg.train.aggregator = v;
        }
        if let Some(v) = o.epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = o.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = o.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = o.hidden_dim {
            cfg.model.hidden_dim = v;
        }
        if let Some(v) = o.bands {
            cfg.bands = BandSet::parse(&v)?;
        }
        if let Some(v) = o.activity {
            cfg.activity = Some(v);
        }
        if let Some(v) = o.folds {
            cfg.folds = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without the data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        BandSet::new(self.bands.bands().to_vec())?;
        self.model
            .to_config(self.bands.len(), 2, 1, self.train.aggregator)
            .validate()?;
        if self.folds < 2 {
            bail!("folds must be at least 2, got {}", self.folds);
        }
        if self.data.is_none() {
            bail!("no data directory given (--data or \"data\" in the config)");
        }
        if self.out.is_none() {
            bail!("no output directory given (--out or \"out\" in the config)");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> &Path {
        self.data.as_deref().expect("validated")
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Overrides {
        Overrides {
            data: Some("d".into()),
            out: Some("o".into()),
            ..Overrides::default()
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"seed": 1, "max_epochs": 7}, "folds": 3}"#).unwrap();
        let cfg = RunConfig::resolve(
            Some(&p),
            Overrides {
                seed: Some(9),
                ..base()
            },
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.folds, 3);
    }

    #[test]
    fn environment_seed_is_a_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"seed": 1}}"#).unwrap();
        let env = |path: Option<&Path>| {
            let o = Overrides {
                env_seed: Some(5),
                ..base()
            };
            RunConfig::resolve(path, o).unwrap().train.seed
        };
        assert_eq!(env(Some(&p)), 1);
        assert_eq!(env(None), 5);
        std::fs::write(&p, r#"{"folds": 3}"#).unwrap();
        assert_eq!(env(Some(&p)), 5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&p), base()).is_err());
        std::fs::write(&p, r#"{"epochs": 3}"#).unwrap();
        assert!(RunConfig::resolve(Some(&p), base()).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            Overrides { lr: Some(0.0), ..base() },
            Overrides { bands: Some("3-7,5-9".into()), ..base() },
            Overrides { folds: Some(1), ..base() },
            Overrides { hidden_dim: Some(6), ..base() },
            Overrides { data: None, ..base() },
        ];
        for o in bad {
            assert!(RunConfig::resolve(None, o).is_err());
        }
    }
}
