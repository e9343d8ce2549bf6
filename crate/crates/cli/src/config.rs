//! Experiment configuration files and their hashes.

use std::path::{Path, PathBuf};

use fencesim::workload::{ComputeModel, DEFAULT_TILE_BYTES};
use fencesim::{
    ClusterConfig, LatencyModel, ModelConfig, Ordering, ProtocolConfig, Signaling, TransportKind,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::output::short_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Root of all outputs; not part of the hash.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    /// A preset name such as `qwen3-30b`.
    Preset(String),
    Explicit(ModelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub model: ModelChoice,
    pub cluster: ClusterConfig,
    /// Tokens per PE.
    #[serde(default = "default_tokens")]
    pub tokens: u64,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub tile_mode: bool,
    #[serde(default = "default_tile_bytes")]
    pub tile_bytes: u64,
    #[serde(default)]
    pub compute: ComputeModel,
}

fn default_tokens() -> u64 {
    1024
}

fn default_tile_bytes() -> u64 {
    DEFAULT_TILE_BYTES
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// MoE dispatch built from the workload section.
    #[default]
    Dispatch,
    /// Fixed-size transfers round-robin over remote PEs, with a put-only twin.
    Microbenchmark,
}

/// Grid axes. An empty axis keeps the value from the workload section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Protocol names; empty runs the `[protocol]` section as given.
    pub protocols: Vec<String>,
    pub tokens: Vec<u64>,
    pub concurrency: Vec<u32>,
    pub size: Vec<u64>,
    pub nodes: Vec<u32>,
    pub group_size: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub trials: u32,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { trials: 1000 }
    }
}

pub const PROTOCOL_NAMES: [&str; 6] = [
    "vanilla",
    "decoupled",
    "nic_ordering",
    "combined",
    "gpu_direct",
    "gpu_direct_decoupled",
];

/// `base` with its signaling, ordering and transport replaced by the named variant.
pub fn named_protocol(name: &str, base: &ProtocolConfig) -> Result<ProtocolConfig, CliError> {
    let (signaling, ordering, transport) = match name {
        "vanilla" => (
            Signaling::Coupled,
            Ordering::ProxyFence,
            TransportKind::Proxy,
        ),
        "decoupled" => (
            Signaling::Decoupled,
            Ordering::ProxyFence,
            TransportKind::Proxy,
        ),
        "nic_ordering" => (Signaling::Coupled, Ordering::NicFence, TransportKind::Proxy),
        "combined" => (
            Signaling::Decoupled,
            Ordering::NicFence,
            TransportKind::Proxy,
        ),
        "gpu_direct" => (Signaling::Coupled, base.ordering, TransportKind::GpuDirect),
        "gpu_direct_decoupled" => (
            Signaling::Decoupled,
            base.ordering,
            TransportKind::GpuDirect,
        ),
        other => {
            return Err(CliError::Config(format!(
                "unknown protocol {other:?}; expected one of {}",
                PROTOCOL_NAMES.join(", ")
            )))
        }
    };
    Ok(ProtocolConfig {
        signaling,
        ordering,
        transport,
        ..base.clone()
    })
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply(ov);
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(out) = &ov.out {
            self.out = out.clone();
        }
    }

    /// Replace a preset name by its parameters and check every section.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        if let ModelChoice::Preset(name) = &self.workload.model {
            self.workload.model = ModelChoice::Explicit(ModelConfig::preset(name)?);
        }
        self.model().validate()?;
        self.workload.cluster.validate()?;
        self.protocol.validate()?;
        self.latency.validate()?;
        if self.workload.tile_bytes == 0 {
            return Err(CliError::Config("tile_bytes must be positive".into()));
        }
        if !self.workload.skew.is_finite() || self.workload.skew < 0.0 {
            return Err(CliError::Config(
                "skew must be a finite non-negative number".into(),
            ));
        }
        for name in &self.sweep.protocols {
            named_protocol(name, &self.protocol)?;
        }
        if self.verify.trials == 0 {
            return Err(CliError::Config("verify.trials must be >= 1".into()));
        }
        Ok(())
    }

    /// The model after [`resolve`](Self::resolve).
    pub fn model(&self) -> ModelConfig {
        match &self.workload.model {
            ModelChoice::Explicit(m) => m.clone(),
            ModelChoice::Preset(name) => ModelConfig::preset(name).expect("resolved preset"),
        }
    }

    /// SHA-256 over every effective value except the output directory.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.hash())
    }
}
