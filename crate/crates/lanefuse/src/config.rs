//! Engine configuration file: one TOML document holding the hardware
//! profile and the runtime topology. Every field is optional; omitted
//! values keep their defaults, so a partial file like
//!
//! ```toml
//! [topology]
//! executors_per_node = 8
//!
//! [hardware]
//! lane_width_bits = 128
//!
//! [hardware.cpi]
//! div = 3.0
//! ```
//!
//! only overrides what it names.

use crate::analyzer::HardwareProfile;
use crate::exec::TierTopology;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Profile(#[from] crate::analyzer::AnalyzerError),
    #[error(transparent)]
    Topology(#[from] crate::exec::ExecError),
}

#[derive(Debug, Clone, Default)]
pub struct EngineConfig {
    pub hardware: HardwareProfile,
    pub topology: TierTopology,
}

impl EngineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        #[derive(Deserialize, Default)]
        #[serde(deny_unknown_fields)]
        struct RawHw {
            clock_hz: Option<f64>,
            bandwidth_per_core_bytes_per_s: Option<f64>,
            lane_width_bits: Option<u32>,
            cache_block_bytes: Option<usize>,
            worker_threads: Option<usize>,
            #[serde(default)]
            cpi: BTreeMap<String, f64>,
        }
        #[derive(Deserialize, Default)]
        #[serde(deny_unknown_fields)]
        struct RawTopo {
            node_count: Option<usize>,
            executors_per_node: Option<usize>,
            gm_block_bytes: Option<usize>,
            exec_block_bytes: Option<usize>,
            prefetch_depth: Option<usize>,
        }
        #[derive(Deserialize, Default)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(default)]
            hardware: RawHw,
            #[serde(default)]
            topology: RawTopo,
        }

        let raw: Raw = toml::from_str(text)?;
        let mut cfg = EngineConfig::default();

        let hw = &mut cfg.hardware;
        if let Some(v) = raw.hardware.clock_hz {
            hw.clock_hz = v;
        }
        if let Some(v) = raw.hardware.bandwidth_per_core_bytes_per_s {
            hw.bandwidth_per_core_bytes_per_s = v;
        }
        if let Some(v) = raw.hardware.lane_width_bits {
            hw.lane_width_bits = v;
        }
        if let Some(v) = raw.hardware.cache_block_bytes {
            hw.cache_block_bytes = v;
        }
        if let Some(v) = raw.hardware.worker_threads {
            hw.worker_threads = v;
        }
        for (k, v) in raw.hardware.cpi {
            hw.cpi_table.insert(k, v);
        }
        hw.validate()?;

        let t = &mut cfg.topology;
        if let Some(v) = raw.topology.node_count {
            t.node_count = v;
        }
        if let Some(v) = raw.topology.executors_per_node {
            t.executors_per_node = v;
        }
        if let Some(v) = raw.topology.gm_block_bytes {
            t.gm_block_bytes = v;
        }
        if let Some(v) = raw.topology.exec_block_bytes {
            t.exec_block_bytes = v;
        }
        if let Some(v) = raw.topology.prefetch_depth {
            t.prefetch_depth = v;
        }
        t.validate()?;

        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = EngineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.topology.prefetch_depth, 2);
        assert_eq!(cfg.hardware.clock_hz, HardwareProfile::default().clock_hz);
    }

    #[test]
    fn partial_override_keeps_rest() {
        let cfg = EngineConfig::from_toml_str(
            "[topology]\nexecutors_per_node = 8\n\n[hardware.cpi]\ndiv = 3.0\n",
        )
        .unwrap();
        assert_eq!(cfg.topology.executors_per_node, 8);
        assert_eq!(cfg.topology.node_count, 1);
        assert_eq!(cfg.hardware.cpi_table["div"], 3.0);
        assert_eq!(cfg.hardware.cpi_table["add"], 1.0);
    }

    #[test]
    fn bad_topology_rejected() {
        let err = EngineConfig::from_toml_str(
            "[topology]\ngm_block_bytes = 64\nexec_block_bytes = 4096\n",
        );
        assert!(err.is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(EngineConfig::from_toml_str("[topology]\nthreads = 4\n").is_err());
    }
}
