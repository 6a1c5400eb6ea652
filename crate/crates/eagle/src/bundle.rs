//! Result bundles written by the subcommands.
//!
//! Bundles are canonical JSON and fully determined by their inputs: wall-clock
//! timings go to a separate `timing.json` next to the bundle.

use std::path::{Path, PathBuf};

use eagle_core::{
    Answer, CorrectionOutcome, FaithfulnessCurve, InfluenceReport, OrderedAttribution, Target,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical;
use crate::config::{RunConfig, XAxis};
use crate::error::{Error, Result};
use crate::gateway::GatewayStats;
use crate::targets::TargetSpec;

pub const SCHEMA_VERSION: &str = "1";

pub const BUNDLE_FILE: &str = "bundle.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const PARTITION_PREVIEW_FILE: &str = "partition.png";
pub const SALIENCY_FILE: &str = "saliency.png";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const SCORES_FILE: &str = "scores.json";
pub const TOKEN_REPORT_FILE: &str = "tokens.html";
pub const TIMING_FILE: &str = "timing.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const HALLUCINATION_FILE: &str = "hallucination.json";
pub const SYNTH_BENCH_FILE: &str = "synth_bench.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageInfo {
    /// Path or label the image was loaded from.
    pub source: String,
    pub width: usize,
    pub height: usize,
    /// Hash of the decoded RGB pixels.
    pub pixel_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionRef {
    /// Partition file, relative to the bundle.
    pub path: String,
    pub region_count: usize,
    pub labels_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub prompt: String,
    pub generated_text: String,
    pub generated_ids: Vec<u32>,
    pub selection: TargetSpec,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesRecord {
    pub x_axis: XAxis,
    pub insertion: FaithfulnessCurve,
    pub deletion: FaithfulnessCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaithfulnessRecord {
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub avg_highest: f64,
}

impl FaithfulnessRecord {
    pub fn from_curves(curves: &CurvesRecord) -> Self {
        Self {
            insertion_auc: curves.insertion.auc(),
            deletion_auc: curves.deletion.auc(),
            avg_highest: curves.insertion.average_highest(),
        }
    }
}

/// Oracle traffic of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model_id: Option<String>,
    pub query_count: usize,
    pub cache_hits: usize,
    pub upstream_forwards: usize,
    pub upstream_calls: usize,
    pub generate_calls: usize,
}

impl OracleRecord {
    pub fn new(model_id: Option<String>, stats: GatewayStats) -> Self {
        Self {
            model_id,
            query_count: stats.queries,
            cache_hits: stats.cache_hits,
            upstream_forwards: stats.upstream_forwards,
            upstream_calls: stats.upstream_calls,
            generate_calls: stats.generate_calls,
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.query_count += other.query_count;
        self.cache_hits += other.cache_hits;
        self.upstream_forwards += other.upstream_forwards;
        self.upstream_calls += other.upstream_calls;
        self.generate_calls += other.generate_calls;
        if other.model_id.is_some() {
            self.model_id.clone_from(&other.model_id);
        }
    }
}

/// Files written next to the bundle, relative to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifacts {
    pub saliency_png: String,
    pub overlay_png: String,
    pub scores: String,
    pub token_report: String,
    pub timing: String,
}

impl Default for Artifacts {
    fn default() -> Self {
        Self {
            saliency_png: SALIENCY_FILE.into(),
            overlay_png: OVERLAY_FILE.into(),
            scores: SCORES_FILE.into(),
            token_report: TOKEN_REPORT_FILE.into(),
            timing: TIMING_FILE.into(),
        }
    }
}

/// Everything one attribution run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub schema_version: String,
    pub config: RunConfig,
    pub image: ImageInfo,
    pub partition_ref: PartitionRef,
    pub targets: TargetRecord,
    #[serde(flatten)]
    pub attribution: OrderedAttribution,
    /// Normalized score per region index; unranked regions get 0.
    pub region_scores: Vec<f64>,
    /// Present for full orderings only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub curves: Option<CurvesRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<FaithfulnessRecord>,
    pub influence: InfluenceReport,
    /// The other influence anchor, for comparison.
    pub influence_alternate: InfluenceReport,
    pub oracle: OracleRecord,
    pub artifacts: Artifacts,
}

impl ResultBundle {
    pub fn check_schema(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "bundle schema_version {:?}, expected {SCHEMA_VERSION:?}",
                self.schema_version
            )));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bundle: Self = canonical::read_file(path)?;
        bundle.check_schema()?;
        Ok(bundle)
    }
}

/// Wall-clock durations in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub partition_secs: f64,
    pub generation_secs: f64,
    pub attribution_secs: f64,
    pub metrics_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseResult {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub image: String,
    pub region_count: usize,
    pub model_answer: Answer,
    pub ground_truth: Answer,
    /// Counterfactual greedy ordering.
    pub order: Vec<usize>,
    pub outcome: CorrectionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallucinationBundle {
    pub schema_version: String,
    pub config: RunConfig,
    pub cases: Vec<CaseResult>,
    pub case_count: usize,
    pub corrected_count: usize,
    pub amcr: f64,
    pub csr_at_10pct: f64,
    pub csr_budget: f64,
    pub csr_at_budget: f64,
    pub oracle: OracleRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointingRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bbox_hit: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_hit: Option<bool>,
    pub point: [usize; 2],
    pub region: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMetrics {
    pub bundle: PathBuf,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub avg_highest: f64,
    pub pointing: PointingRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricMeans {
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub avg_highest: f64,
    /// Hit rate over the samples that have a box annotation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pointing_bbox: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pointing_mask: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricAggregate {
    pub means: MetricMeans,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsBundle {
    pub schema_version: String,
    pub x_axis: XAxis,
    pub samples: Vec<SampleMetrics>,
    pub aggregate: MetricAggregate,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

impl MetricAggregate {
    pub fn of(samples: &[SampleMetrics]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Usage("no samples to aggregate".into()));
        }
        let rate = |hits: Vec<bool>| mean(hits.into_iter().map(|h| if h { 1.0 } else { 0.0 }));
        let means = MetricMeans {
            insertion_auc: mean(samples.iter().map(|s| s.insertion_auc)).unwrap_or_default(),
            deletion_auc: mean(samples.iter().map(|s| s.deletion_auc)).unwrap_or_default(),
            avg_highest: mean(samples.iter().map(|s| s.avg_highest)).unwrap_or_default(),
            pointing_bbox: rate(samples.iter().filter_map(|s| s.pointing.bbox_hit).collect()),
            pointing_mask: rate(samples.iter().filter_map(|s| s.pointing.mask_hit).collect()),
        };
        Ok(Self {
            means,
            sample_count: samples.len(),
        })
    }
}
