//! Optional TOML defaults. Command-line flags override every key.
//!
//! ```toml
//! [store]
//! path = "/var/lib/emlog"
//! blocks_per_group = 10
//! messages_per_block = 100
//! durable = true
//!
//! [ingest]
//! source = "apache-access"
//! epoch_seconds = 60
//! queue_policy = "block"        # or "drop-with-count"
//! queue_capacity = 1024
//!
//! [serve]
//! listen = "127.0.0.1:7414"
//! trust_dir = "/etc/emlog/verifiers"
//!
//! [fetch]
//! connect = "device.local:7414"
//! identity = "verifier.pem"
//! device_cert = "device.cert"
//!
//! [bench]
//! entries = 100000
//! repetitions = 3
//! work_dir = "/tmp/emlog-bench"
//! block_ms = [10, 100, 250, 500]
//! group_cs = [1, 10, 25, 50]
//! group_m = 100
//! storage_ms = [10, 50, 100, 250, 500, 750, 1000, 2500]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Usage;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub serve: ServeSection,
    #[serde(default)]
    pub fetch: FetchSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    pub path: Option<PathBuf>,
    pub blocks_per_group: Option<u32>,
    pub messages_per_block: Option<u32>,
    pub durable: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub source: Option<String>,
    pub epoch_seconds: Option<u64>,
    pub queue_policy: Option<String>,
    pub queue_capacity: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub listen: Option<String>,
    pub trust_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchSection {
    pub connect: Option<String>,
    pub identity: Option<PathBuf>,
    pub device_cert: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub entries: Option<usize>,
    pub repetitions: Option<usize>,
    pub work_dir: Option<PathBuf>,
    pub block_ms: Option<Vec<u32>>,
    pub group_cs: Option<Vec<u32>>,
    pub group_m: Option<u32>,
    pub storage_ms: Option<Vec<u32>>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
    }
}
