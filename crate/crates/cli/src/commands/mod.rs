pub mod build_dataset;
pub mod eval;
pub mod simulate;
pub mod train;
pub mod viz_flow;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use simflow_core::{Exchange, ExternalEstimator, FlowEstimator, HornSchunck};

use crate::config::{EstimatorKind, PipelineConfig};

pub const BUILD_REPORT: &str = "build_report.json";

pub(crate) fn exchange(root: &Path, config: &PipelineConfig) -> Result<Exchange> {
    if !root.is_dir() {
        bail!("exchange directory {} does not exist", root.display());
    }
    Ok(Exchange::new(root).with_timeout(Duration::from_secs(config.pair_factory.backend_timeout_secs)))
}

pub(crate) fn estimator(kind: EstimatorKind, flow_exchange: Option<&PathBuf>, config: &PipelineConfig) -> Result<Box<dyn FlowEstimator>> {
    Ok(match kind {
        EstimatorKind::Builtin => Box::new(HornSchunck {
            config: config.flow_estimation.clone(),
        }),
        EstimatorKind::External => {
            let root = flow_exchange.context("--estimator external needs --flow-exchange")?;
            Box::new(ExternalEstimator::new(exchange(root, config)?))
        }
        EstimatorKind::Analytic => bail!("analytic flow is only available from the warp and synthetic generators"),
    })
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} directory {} does not exist", path.display());
    }
    Ok(())
}
