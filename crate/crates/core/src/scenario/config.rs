//! TOML scenario configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{PartitionMode, PartitionSpec};
use crate::defense::{DefenseKind, DefenseParams};
use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::threat::ThreatPlan;
use crate::zk::ZkConfig;

/// Environment variable that re-roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "FEDSENTRY_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian class clusters; `test_samples` extra rows are held out.
    Blobs {
        n_classes: usize,
        n_features: usize,
        n_samples: usize,
        test_samples: usize,
    },
    /// IDX image/label files (MNIST layout).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Use only the first `limit` training rows.
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs {
            n_classes: 5,
            n_features: 20,
            n_samples: 4000,
            test_samples: 1000,
        }
    }
}

/// The `[defense]` table: the aggregator plus its parameters, side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(from = "DefenseTable", into = "DefenseTable")]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    pub params: DefenseParams,
}

// serde ignores deny_unknown_fields under flatten, so the table is spelled
// out field by field.
#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DefenseTable {
    kind: DefenseKind,
    gamma: f64,
    lambda: f64,
    krum_m: usize,
    krum_f: Option<usize>,
    rfa_max_iters: usize,
    rfa_epsilon: f64,
}

impl Default for DefenseTable {
    fn default() -> Self {
        DefenseConfig::default().into()
    }
}

impl From<DefenseConfig> for DefenseTable {
    fn from(c: DefenseConfig) -> Self {
        let p = c.params;
        Self {
            kind: c.kind,
            gamma: p.gamma,
            lambda: p.lambda,
            krum_m: p.krum_m,
            krum_f: p.krum_f,
            rfa_max_iters: p.rfa_max_iters,
            rfa_epsilon: p.rfa_epsilon,
        }
    }
}

impl From<DefenseTable> for DefenseConfig {
    fn from(t: DefenseTable) -> Self {
        Self {
            kind: t.kind,
            params: DefenseParams {
                gamma: t.gamma,
                lambda: t.lambda,
                krum_m: t.krum_m,
                krum_f: t.krum_f,
                rfa_max_iters: t.rfa_max_iters,
                rfa_epsilon: t.rfa_epsilon,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Root seed. Data, partition, threat and training streams are derived
    /// from it; the `seed` fields of `train` and `threat` are overwritten.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub verify: bool,
    pub data: DataSource,
    /// Z-score features with moments of the training split.
    pub standardize: bool,
    pub train: TrainConfig,
    pub partition: PartitionSpec,
    pub threat: ThreatPlan,
    pub defense: DefenseConfig,
    pub zk: ZkConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
            verify: false,
            data: DataSource::default(),
            standardize: false,
            train: TrainConfig::default(),
            partition: PartitionSpec {
                n_clients: 10,
                mode: PartitionMode::Iid,
                alpha: 0.5,
            },
            threat: ThreatPlan::default(),
            defense: DefenseConfig::default(),
            zk: ZkConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolved()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fills derived fields and validates.
    pub fn resolved(mut self) -> Result<Self> {
        self.train.seed = crate::seeds::derive(self.seed, "train", 0, 0);
        self.threat.seed = crate::seeds::derive(self.seed, "threat", 0, 0);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.partition.validate()?;
        if self.partition.n_clients != self.train.n_clients {
            return Err(Error::Config(format!(
                "partition.n_clients = {} but train.n_clients = {}",
                self.partition.n_clients, self.train.n_clients
            )));
        }
        self.threat.validate(self.train.n_clients)?;
        self.defense.params.validate()?;
        self.zk.validate()?;
        if let DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &self.data
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if !p.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Output directory, re-rooted under `FEDSENTRY_OUTPUT_ROOT` when that is
    /// set and the configured path is relative.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ScenarioConfig::default().resolved().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ScenarioConfig::from_toml(
            r#"
            name = "x"
            seed = 3
            [defense]
            kind = "two_stage"
            lambda = 1.0
            [threat]
            attack_kind = "byzantine_random"
            malicious_ids = [0, 1]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.defense.kind, DefenseKind::TwoStage);
        assert_eq!(cfg.defense.params.lambda, 1.0);
        assert_eq!(cfg.defense.params.gamma, 0.5);
        assert_eq!(cfg.train.n_clients, 10);
        assert_ne!(cfg.threat.seed, 0);
    }

    #[test]
    fn bad_fields_are_reported() {
        let err = ScenarioConfig::from_toml("bogus = 1").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = ScenarioConfig::from_toml("[defense]\ngamma = 1.5").unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        for table in ["defense", "train", "threat", "partition", "zk", "data"] {
            let head = if table == "data" { "[data]\nsource = \"blobs\"" } else { "" };
            let toml = if head.is_empty() {
                format!("[{table}]\ntypo = 1")
            } else {
                format!("{head}\ntypo = 1")
            };
            let err = ScenarioConfig::from_toml(&toml).unwrap_err();
            assert!(err.to_string().contains("typo"), "{table}: {err}");
        }
    }
}
