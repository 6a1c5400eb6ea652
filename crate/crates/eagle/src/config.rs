//! Run configuration, loaded from JSON and overridden by command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use eagle_core::hallucination::CAPTION_PROMPT;
use eagle_core::{AreaMode, InfluenceVariant, ObjectiveMode, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::GatewayConfig;
use crate::synthetic::OracleDescriptor;

pub const ORACLE_URL_ENV: &str = "EAGLE_ORACLE_URL";
/// Bearer token sent to the shim, read from the environment only so it never
/// lands in a bundle's config snapshot.
pub const ORACLE_TOKEN_ENV: &str = "EAGLE_ORACLE_TOKEN";

/// Where probabilities come from: a shim URL or a synthetic oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<OracleDescriptor>,
    pub max_in_flight: usize,
    pub cache_capacity: usize,
    pub max_batch: usize,
    pub timeout_secs: f64,
    /// Use `/v1/token_probs_batch` for multi-image requests.
    pub batch_endpoint: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let g = GatewayConfig::default();
        Self {
            url: None,
            synthetic: None,
            max_in_flight: g.max_in_flight,
            cache_capacity: g.cache_capacity,
            max_batch: g.max_batch,
            timeout_secs: 120.0,
            batch_endpoint: true,
        }
    }
}

impl OracleConfig {
    pub fn gateway(&self) -> GatewayConfig {
        GatewayConfig {
            max_in_flight: self.max_in_flight,
            cache_capacity: self.cache_capacity,
            max_batch: self.max_batch,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Horizontal axis of the insertion and deletion curves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XAxis {
    /// `r / |V|` after `r` regions.
    #[default]
    RegionFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub x_axis: XAxis,
    pub amcr_mode: AreaMode,
    /// Removal budget of the correction success rate.
    pub csr_budget: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            x_axis: XAxis::RegionFraction,
            amcr_mode: AreaMode::Area,
            csr_budget: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub oracle: OracleConfig,
    pub region_count: usize,
    pub slico_iterations: usize,
    pub fill: Rgb,
    /// Regions to rank; `None` ranks all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub objective: ObjectiveMode,
    pub influence_variant: InfluenceVariant,
    pub metrics: MetricOptions,
    pub sensitivity_threshold: f64,
    pub caption_prompt: String,
    pub max_new_tokens: usize,
    pub out_dir: PathBuf,
    /// Reserved; every computation is deterministic.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            oracle: OracleConfig::default(),
            region_count: 64,
            slico_iterations: 10,
            fill: [128, 128, 128],
            budget: None,
            objective: ObjectiveMode::Full,
            influence_variant: InfluenceVariant::MinAnchored,
            metrics: MetricOptions::default(),
            sensitivity_threshold: 0.2,
            caption_prompt: CAPTION_PROMPT.to_string(),
            max_new_tokens: 32,
            out_dir: PathBuf::from("eagle-out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = crate::canonical::read_file(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.oracle;
        if o.max_in_flight == 0 {
            return Err(Error::Invalid(
                "oracle.max_in_flight must be at least 1".into(),
            ));
        }
        if o.max_batch == 0 {
            return Err(Error::Invalid("oracle.max_batch must be at least 1".into()));
        }
        if !(o.timeout_secs.is_finite() && o.timeout_secs > 0.0) {
            return Err(Error::Invalid(format!(
                "oracle.timeout_secs {} must be positive",
                o.timeout_secs
            )));
        }
        if o.url.is_some() && o.synthetic.is_some() {
            return Err(Error::Invalid(
                "oracle takes a url or a synthetic descriptor, not both".into(),
            ));
        }
        if self.region_count == 0 {
            return Err(Error::Invalid("region_count must be at least 1".into()));
        }
        if self.budget == Some(0) {
            return Err(Error::Invalid("budget must be at least 1".into()));
        }
        if !(self.sensitivity_threshold > 0.0 && self.sensitivity_threshold < 1.0) {
            return Err(Error::Invalid(format!(
                "sensitivity_threshold {} outside (0, 1)",
                self.sensitivity_threshold
            )));
        }
        let b = self.metrics.csr_budget;
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::Invalid(format!(
                "metrics.csr_budget {b} outside (0, 1]"
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Invalid("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses `R,G,B` or `#rrggbb`.
pub fn parse_fill(text: &str) -> Result<Rgb> {
    let bad = || Error::Usage(format!("fill color {text:?} is not R,G,B or #rrggbb"));
    if let Some(hex) = text.strip_prefix('#') {
        if hex.len() != 6 {
            return Err(bad());
        }
        let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
        return Ok([channel(0)?, channel(2)?, channel(4)?]);
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0u8; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part.parse().map_err(|_| bad())?;
    }
    Ok(out)
}
