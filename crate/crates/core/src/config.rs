//! The appliance configuration file.
//!
//! ```toml
//! [cluster]                 # required: the three node counts
//! data_nodes = 4
//! grid_nodes = 2
//! cluster_nodes = 3
//! partitions = 64           # optional keys fall back to defaults
//!
//! [replication]
//! user_base = 2
//!
//! [cost_model]
//! gamma = 0.001
//! [cost_model.ops.index_scan]
//! alpha = 1.0
//! beta = 0.5
//!
//! [annotators]
//! defaults = true           # load the shipped annotators
//! file = "extra.toml"       # optional, relative to the config file
//!
//! [scheduler]
//! aging_threshold = 1000
//! background_slots = 1
//!
//! [store]
//! max_document_bytes = 1048576
//!
//! [schema]
//! synonyms = [["/row/cust_name", "/order/customer/name"]]
//!
//! [[groups]]
//! group_id = 0
//! role = "grid_compute"
//! spec = { min_throughput = 20 }
//! ```

use std::collections::BTreeMap;
use std::path::{Path as FsPath, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::fabric::cost::Coefficients;
use crate::fabric::{ClusterConfig, CostModel};
use crate::model::Path;
use crate::stewardship::GroupConfig;
use crate::store::{ReplicationConfig, StoreConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config: {0}")]
    Syntax(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerSettings {
    pub aging_threshold: u64,
    pub background_slots: usize,
    /// Run outstanding work to completion before answering reads issued
    /// through the gateway.
    pub settle_before_read: bool,
    /// Upper bound on ticks a quiesce may advance.
    pub quiesce_limit: u64,
}

impl Default for SchedulerSettings {
    fn default() -> Self {
        SchedulerSettings {
            aging_threshold: 1000,
            background_slots: 1,
            settle_before_read: true,
            quiesce_limit: 10_000_000,
        }
    }
}

/// Where annotator definitions come from.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatorSettings {
    pub defaults: bool,
    pub file: Option<PathBuf>,
}

impl Default for AnnotatorSettings {
    fn default() -> Self {
        AnnotatorSettings { defaults: true, file: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApplianceConfig {
    pub cluster: ClusterConfig,
    pub store: StoreConfig,
    pub cost_model: CostModel,
    pub annotators: AnnotatorSettings,
    pub scheduler: SchedulerSettings,
    pub synonyms: Vec<Vec<Path>>,
    pub groups: Vec<GroupConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    cluster: ClusterFile,
    #[serde(default)]
    replication: ReplicationConfig,
    #[serde(default)]
    cost_model: CostFile,
    #[serde(default)]
    annotators: AnnotatorFile,
    #[serde(default)]
    scheduler: SchedulerFile,
    #[serde(default)]
    store: StoreFile,
    #[serde(default)]
    schema: SchemaFile,
    #[serde(default)]
    groups: Vec<GroupConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    data_nodes: u32,
    grid_nodes: u32,
    cluster_nodes: u32,
    partitions: Option<u32>,
    group_size: Option<u32>,
    data_capacity: Option<u64>,
    grid_capacity: Option<u64>,
    cluster_capacity: Option<u64>,
    io_bandwidth: Option<u64>,
    storage_capacity: Option<u64>,
    heartbeat_period: Option<u64>,
    missed_heartbeats: Option<u32>,
    max_hops: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    gamma: Option<f64>,
    #[serde(default)]
    ops: BTreeMap<String, Coefficients>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotatorFile {
    defaults: Option<bool>,
    file: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulerFile {
    aging_threshold: Option<u64>,
    background_slots: Option<usize>,
    settle_before_read: Option<bool>,
    quiesce_limit: Option<u64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreFile {
    max_document_bytes: Option<usize>,
    max_depth: Option<usize>,
    data_dir: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    #[serde(default)]
    synonyms: Vec<Vec<String>>,
}

impl ApplianceConfig {
    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&FsPath>) -> Result<ApplianceConfig, ConfigError> {
        let file: File = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;
        let d = ClusterConfig::default();
        let c = file.cluster;
        let cluster = ClusterConfig {
            data_nodes: c.data_nodes,
            grid_nodes: c.grid_nodes,
            cluster_nodes: c.cluster_nodes,
            partitions: c.partitions.unwrap_or(d.partitions),
            group_size: c.group_size.unwrap_or(d.group_size),
            data_capacity: c.data_capacity.unwrap_or(d.data_capacity),
            grid_capacity: c.grid_capacity.unwrap_or(d.grid_capacity),
            cluster_capacity: c.cluster_capacity.unwrap_or(d.cluster_capacity),
            io_bandwidth: c.io_bandwidth.unwrap_or(d.io_bandwidth),
            storage_capacity: c.storage_capacity.unwrap_or(d.storage_capacity),
            heartbeat_period: c.heartbeat_period.unwrap_or(d.heartbeat_period),
            missed_heartbeats: c.missed_heartbeats.unwrap_or(d.missed_heartbeats),
            max_hops: c.max_hops.unwrap_or(d.max_hops),
        };

        let mut cost_model = CostModel::default();
        if let Some(g) = file.cost_model.gamma {
            cost_model.gamma = g;
        }
        for (name, coefficients) in file.cost_model.ops {
            if !cost_model.ops.contains_key(&name) {
                return Err(ConfigError::Invalid(format!("cost_model.ops: unknown operation {name:?}")));
            }
            cost_model.ops.insert(name, coefficients);
        }

        let resolve = |p: PathBuf| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        };
        let sd = StoreConfig::default();
        let store = StoreConfig {
            max_document_bytes: file.store.max_document_bytes.unwrap_or(sd.max_document_bytes),
            max_depth: file.store.max_depth.unwrap_or(sd.max_depth),
            replication: file.replication,
            data_dir: file.store.data_dir.map(resolve),
        };
        let annotators = AnnotatorSettings {
            defaults: file.annotators.defaults.unwrap_or(true),
            file: file.annotators.file.map(resolve),
        };
        let ss = SchedulerSettings::default();
        let scheduler = SchedulerSettings {
            aging_threshold: file.scheduler.aging_threshold.unwrap_or(ss.aging_threshold),
            background_slots: file.scheduler.background_slots.unwrap_or(ss.background_slots),
            settle_before_read: file.scheduler.settle_before_read.unwrap_or(ss.settle_before_read),
            quiesce_limit: file.scheduler.quiesce_limit.unwrap_or(ss.quiesce_limit),
        };
        let mut synonyms = Vec::new();
        for class in file.schema.synonyms {
            let paths = class
                .iter()
                .map(|p| Path::parse(p).map_err(|e| ConfigError::Invalid(format!("schema.synonyms: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            synonyms.push(paths);
        }
        let config =
            ApplianceConfig { cluster, store, cost_model, annotators, scheduler, synonyms, groups: file.groups };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &FsPath) -> Result<ApplianceConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        ApplianceConfig::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cluster.validate().map_err(ConfigError::Invalid)?;
        self.store
            .replication
            .validate()
            .map_err(|e| ConfigError::Invalid(e.replace("derived", "replication: derived")))?;
        self.cost_model.validate().map_err(ConfigError::Invalid)?;
        if self.scheduler.background_slots == 0 {
            return Err(ConfigError::Invalid("scheduler.background_slots must be at least 1".into()));
        }
        if self.store.max_depth == 0 || self.store.max_document_bytes == 0 {
            return Err(ConfigError::Invalid("store limits must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[cluster]\ndata_nodes = 4\ngrid_nodes = 2\ncluster_nodes = 3\n";

    #[test]
    fn minimal_file_takes_defaults() {
        let c = ApplianceConfig::parse(MINIMAL, None).unwrap();
        assert_eq!(c.cluster, ClusterConfig::default());
        assert_eq!(c.scheduler.aging_threshold, 1000);
        assert_eq!(c.store.replication.user_base, 2);
    }

    #[test]
    fn missing_field_is_named() {
        let err = ApplianceConfig::parse("[cluster]\ndata_nodes = 4\ngrid_nodes = 2\n", None).unwrap_err();
        assert!(err.to_string().contains("cluster_nodes"), "{err}");
        let err = ApplianceConfig::parse("", None).unwrap_err();
        assert!(err.to_string().contains("cluster"), "{err}");
    }

    #[test]
    fn zero_cluster_nodes_is_rejected() {
        let err =
            ApplianceConfig::parse("[cluster]\ndata_nodes = 1\ngrid_nodes = 0\ncluster_nodes = 0\n", None).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(ref m) if m.contains("cluster_nodes")), "{err}");
    }

    #[test]
    fn unknown_keys_and_ops_report_their_location() {
        let err = ApplianceConfig::parse(&format!("{MINIMAL}[scheduler]\naging = 3\n"), None).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("aging") && text.contains("line"), "{text}");
        let err = ApplianceConfig::parse(&format!("{MINIMAL}[cost_model.ops.warp]\nalpha = 1.0\nbeta = 1.0\n"), None);
        assert!(err.unwrap_err().to_string().contains("warp"));
    }

    #[test]
    fn overrides_apply() {
        let text = format!(
            "{MINIMAL}[cost_model]\ngamma = 0.5\n[cost_model.ops.fetch]\nalpha = 3.0\nbeta = 1.0\n[schema]\nsynonyms = [[\"/a/b\", \"/c\"]]\n"
        );
        let c = ApplianceConfig::parse(&text, None).unwrap();
        assert_eq!(c.cost_model.gamma, 0.5);
        assert_eq!(c.cost_model.ops["fetch"].alpha, 3.0);
        assert_eq!(c.synonyms.len(), 1);
    }
}
