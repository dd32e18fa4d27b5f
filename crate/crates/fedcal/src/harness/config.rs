//! Experiment configuration: JSON schema, validation, and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fedsim::{FedConfig, ScalerKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic {
        num_classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub beta: f64,
    pub val_fraction: f64,
}

/// Federation hyperparameters; the scaler kind and ablation toggles are
/// derived from the method being run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FedParams {
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub scaler_hidden_width: usize,
    pub scaler_epochs: usize,
    pub scaler_lr: f64,
    pub classifier_hidden: Vec<usize>,
    pub fedprox_mu: Option<f64>,
    /// Restart each client's scaler from the global one every round instead
    /// of continuing from its aligned local parameters.
    #[serde(default)]
    pub reset_scaler_to_global: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Uncal,
    ValTs,
    Ens,
    Avgt,
    Lrts,
    Fedcal,
    FedcalNoWm,
    FedcalSmall,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Uncal => "uncal",
            Method::ValTs => "val_ts",
            Method::Ens => "ens",
            Method::Avgt => "avgt",
            Method::Lrts => "lrts",
            Method::Fedcal => "fedcal",
            Method::FedcalNoWm => "fedcal_no_wm",
            Method::FedcalSmall => "fedcal_small",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "uncal" => Method::Uncal,
            "val_ts" => Method::ValTs,
            "ens" => Method::Ens,
            "avgt" => Method::Avgt,
            "lrts" => Method::Lrts,
            "fedcal" => Method::Fedcal,
            "fedcal_no_wm" => Method::FedcalNoWm,
            "fedcal_small" => Method::FedcalSmall,
            other => return Err(Error::Config(format!("unknown method '{other}'"))),
        })
    }

    /// Methods evaluated post hoc on the scaler-free run.
    pub fn is_post_hoc(self) -> bool {
        matches!(
            self,
            Method::Uncal | Method::ValTs | Method::Ens | Method::Avgt | Method::Lrts
        )
    }
}

pub const ALL_METHODS: [Method; 8] = [
    Method::Uncal,
    Method::ValTs,
    Method::Ens,
    Method::Avgt,
    Method::Lrts,
    Method::Fedcal,
    Method::FedcalNoWm,
    Method::FedcalSmall,
];

/// Hidden width of the reduced-capacity scaler ablation.
pub const SMALL_SCALER_WIDTH: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub bins: usize,
    pub eval_every: usize,
    pub test_fraction: f64,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub fed: FedParams,
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            bins: 15,
            eval_every: 5,
            test_fraction: 0.2,
            dataset: DatasetConfig::Synthetic {
                num_classes: 10,
                dim: 16,
                per_class: 800,
                spread: 0.28,
            },
            partition: PartitionConfig {
                num_clients: 20,
                beta: 0.1,
                val_fraction: 0.2,
            },
            fed: FedParams {
                clients_per_round: 5,
                rounds: 60,
                local_epochs: 3,
                lr: 0.1,
                batch_size: 32,
                scaler_hidden_width: crate::scalers::DEFAULT_SCALER_HIDDEN,
                // Light per-round refits: local scalers accumulate training
                // across participations, and heavier schedules let them
                // specialize past the point where averaging stays calibrated.
                scaler_epochs: 5,
                scaler_lr: crate::scalers::DEFAULT_SCALER_LR,
                classifier_hidden: vec![32],
                fedprox_mu: None,
                reset_scaler_to_global: false,
            },
            methods: vec![
                Method::Uncal,
                Method::ValTs,
                Method::Ens,
                Method::Avgt,
                Method::Lrts,
                Method::Fedcal,
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0,1)".into()));
        }
        match &self.dataset {
            DatasetConfig::Synthetic { num_classes, dim, per_class, spread } => {
                if *num_classes < 2 || *dim == 0 || *per_class == 0 || !(*spread >= 0.0) {
                    return Err(Error::Config("bad synthetic dataset parameters".into()));
                }
            }
            DatasetConfig::Idx { images, labels } => {
                if !images.exists() {
                    return Err(Error::Config(format!("missing IDX file {}", images.display())));
                }
                if !labels.exists() {
                    return Err(Error::Config(format!("missing IDX file {}", labels.display())));
                }
            }
        }
        if self.partition.num_clients == 0 {
            return Err(Error::Config("num_clients must be >= 1".into()));
        }
        if !(self.partition.beta > 0.0) {
            return Err(Error::Config("beta must be > 0".into()));
        }
        if !(self.partition.val_fraction > 0.0 && self.partition.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0,1)".into()));
        }
        self.fed_config(ScalerKind::None, self.fed.scaler_hidden_width, true)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// The engine configuration for one federated run.
    pub fn fed_config(
        &self,
        scaler_kind: ScalerKind,
        scaler_width: usize,
        weight_matching: bool,
    ) -> FedConfig {
        FedConfig {
            num_clients: self.partition.num_clients,
            clients_per_round: self.fed.clients_per_round,
            rounds: self.fed.rounds,
            local_epochs: self.fed.local_epochs,
            lr: self.fed.lr,
            batch_size: self.fed.batch_size,
            scaler_kind,
            scaler_hidden_width: scaler_width,
            fedprox_mu: self.fed.fedprox_mu,
            master_seed: self.seed,
            classifier_hidden: self.fed.classifier_hidden.clone(),
            weight_matching,
            reset_scaler_to_global: self.fed.reset_scaler_to_global,
            scaler_epochs: self.fed.scaler_epochs,
            scaler_lr: self.fed.scaler_lr,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
    pub metrics_path: PathBuf,
    pub wall_clock_seconds: f64,
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_empty_methods_and_bad_fractions() {
        let mut cfg = ExperimentConfig::default();
        cfg.methods.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.test_fraction = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn missing_idx_files_fail_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset = DatasetConfig::Idx {
            images: PathBuf::from("/nonexistent/images.idx"),
            labels: PathBuf::from("/nonexistent/labels.idx"),
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in ALL_METHODS {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("bogus").is_err());
    }
}
