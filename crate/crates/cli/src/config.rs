use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use simflow_core::generators::{VelocityRanges, WarpRanges};
use simflow_core::{FlowEstimatorConfig, GenerationConfig, NetworkConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Identity,
    Warp,
    Synthetic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Built-in coarse-to-fine variational estimator.
    Builtin,
    /// Learned estimator behind an exchange directory.
    External,
    /// Exact flow reported by the generator (warp and synthetic only).
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairFactoryConfig {
    pub generator: GeneratorKind,
    pub estimator: EstimatorKind,
    pub one_per_source: bool,
    pub frame_exchange: Option<PathBuf>,
    pub flow_exchange: Option<PathBuf>,
    pub backend_timeout_secs: u64,
}

impl Default for PairFactoryConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorKind::External,
            estimator: EstimatorKind::Builtin,
            one_per_source: false,
            frame_exchange: None,
            flow_exchange: None,
            backend_timeout_secs: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Weight of the object term in the S-measure.
    pub s_alpha: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            s_alpha: simflow_core::metrics::S_ALPHA,
        }
    }
}

/// Every tunable of the pipeline. Sections mirror the core modules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds generation, sampling and initialization.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub generation: GenerationConfig,
    pub warp: WarpRanges,
    pub synthetic: VelocityRanges,
    pub flow_estimation: FlowEstimatorConfig,
    pub pair_factory: PairFactoryConfig,
    pub segnet: NetworkConfig,
    pub training: TrainConfig,
    pub metrics: MetricsConfig,
}

impl PipelineConfig {
    /// Reads a TOML file, or returns defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Propagates the global seed into the sections that carry their own.
    pub fn resolve(mut self) -> Self {
        self.generation.seed = self.seed;
        self.training.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.flow_estimation.validate()?;
        self.segnet.validate()?;
        self.training.validate()?;
        if !(0.0..=1.0).contains(&self.metrics.s_alpha) {
            bail!("metrics.s_alpha must lie in [0, 1]");
        }
        if self.warp.tps_grid < 2 {
            bail!("warp.tps_grid must be >= 2");
        }
        let v = &self.synthetic;
        if v.fg_speed.0 > v.fg_speed.1 || v.bg_speed.0 > v.bg_speed.1 || v.fg_speed.0 < 0.0 || v.bg_speed.0 < 0.0 {
            bail!("synthetic speed ranges must be ordered and non-negative");
        }
        Ok(())
    }

    /// Settings that shape outputs. The worker count is left out so that
    /// artifacts do not depend on it.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("workers");
        }
        v
    }
}

/// Splits `name=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected NAME=VALUE, got {s:?}")),
    }
}

/// Parses `HxW` or a single side length.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}
