//! The work behind each subcommand, separated from argument parsing so the
//! serve mode and tests can drive it directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use eagle_core::{
    amcr, counterfactual_attribute, csr_at_budget, deletion_curve, insertion_curve,
    minimal_correction, pointing_game, rasterize_saliency, slico_partition, Explainer,
    GenerateRequest, Generation, Image, InfluenceReport, KeepSet, OrderedAttribution, ProbOracle,
    RegionPartition, SaliencyMap, Scene, TokenTargets,
};

use crate::bundle::{
    sha256_hex, Artifacts, CaseResult, CurvesRecord, FaithfulnessRecord, HallucinationBundle,
    ImageInfo, MetricAggregate, MetricsBundle, OracleRecord, PartitionRef, PointingRecord,
    ResultBundle, SampleMetrics, TargetRecord, Timing, BUNDLE_FILE, HALLUCINATION_FILE,
    METRICS_FILE, OVERLAY_FILE, PARTITION_FILE, PARTITION_PREVIEW_FILE, SALIENCY_FILE,
    SCHEMA_VERSION, SCORES_FILE, TIMING_FILE, TOKEN_REPORT_FILE,
};
use crate::canonical;
use crate::config::{OracleConfig, RunConfig, ORACLE_TOKEN_ENV, ORACLE_URL_ENV};
use crate::error::{Error, Result};
use crate::formats::{
    read_cases, CaseRecord, GroundTruthFile, Manifest, PartitionFile, ScoresFile,
};
use crate::gateway::Gateway;
use crate::http::HttpOracle;
use crate::imaging::{
    boundary_overlay, encode_png, heat_color, heatmap_overlay, load_image, saliency_png, write_png,
    BOUNDARY_COLOR, OVERLAY_ALPHA,
};
use crate::synthetic::{OracleDescriptor, SharedOracle};
use crate::targets::{resolve_targets, TargetSpec, Tokenizer, WhitespaceTokenizer};

pub type OracleGateway = Gateway<SharedOracle>;

/// Where a run's probabilities come from.
#[derive(Clone)]
pub enum OracleSource {
    Http(Arc<HttpOracle>),
    /// Built per image, against that image's partition.
    Synthetic(OracleDescriptor),
    /// A ready-made oracle used as is.
    Shared(SharedOracle),
}

impl OracleSource {
    pub fn from_config(config: &OracleConfig) -> Result<Self> {
        if let Some(url) = &config.url {
            let token = std::env::var(ORACLE_TOKEN_ENV)
                .ok()
                .filter(|t| !t.is_empty());
            let mut http = HttpOracle::new(url, config.timeout(), token);
            if !config.batch_endpoint {
                http = http.without_batch_endpoint();
            }
            return Ok(Self::Http(Arc::new(http)));
        }
        if let Some(descriptor) = &config.synthetic {
            return Ok(Self::Synthetic(descriptor.clone()));
        }
        Err(Error::Usage(format!(
            "no oracle configured: pass --oracle-url, set {ORACLE_URL_ENV}, or give oracle.synthetic in the config"
        )))
    }

    pub fn connect(
        &self,
        partition: &RegionPartition,
        fill: eagle_core::Rgb,
    ) -> Result<SharedOracle> {
        Ok(match self {
            Self::Http(http) => http.clone(),
            Self::Synthetic(descriptor) => descriptor.build(partition, fill)?,
            Self::Shared(oracle) => oracle.clone(),
        })
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        match self {
            Self::Http(http) => http.as_ref(),
            Self::Synthetic(_) | Self::Shared(_) => &WhitespaceTokenizer,
        }
    }
}

pub fn partition_image(config: &RunConfig, image: &Image) -> Result<RegionPartition> {
    Ok(slico_partition(
        image,
        config.region_count,
        config.slico_iterations,
    )?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Files written by [`run_partition`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionOutput {
    pub partition: PathBuf,
    pub preview: PathBuf,
    pub region_count: usize,
}

pub fn run_partition(config: &RunConfig, image_path: &Path) -> Result<PartitionOutput> {
    let image = load_image(image_path)?;
    let partition = partition_image(config, &image)?;
    create_dir(&config.out_dir)?;
    let out = PartitionOutput {
        partition: config.out_dir.join(PARTITION_FILE),
        preview: config.out_dir.join(PARTITION_PREVIEW_FILE),
        region_count: partition.region_count(),
    };
    canonical::write_file(&out.partition, &PartitionFile::from_partition(&partition))?;
    write_png(
        &out.preview,
        &encode_png(&boundary_overlay(&image, &partition, BOUNDARY_COLOR)?),
    )?;
    Ok(out)
}

/// What to explain: the prompt, optionally a known generation, and which of
/// its tokens to target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRequest {
    /// Defaults to the configured caption prompt.
    pub prompt: Option<String>,
    /// Generated text and token ids; produced with the oracle when absent.
    pub generation: Option<Generation>,
    pub selection: TargetSpec,
}

impl Default for TargetRequest {
    fn default() -> Self {
        Self {
            prompt: None,
            generation: None,
            selection: TargetSpec::All,
        }
    }
}

/// Output of the search plus everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub attribution: OrderedAttribution,
    pub region_scores: Vec<f64>,
    pub curves: Option<CurvesRecord>,
    pub influence: InfluenceReport,
    pub influence_alternate: InfluenceReport,
    pub metrics_secs: f64,
}

/// Greedy ordering, curves (full orderings only), and both influence variants.
pub fn explain<O: ProbOracle + ?Sized>(
    config: &RunConfig,
    oracle: &O,
    scene: Scene<'_>,
    targets: &TokenTargets,
) -> Result<Explanation> {
    let n = scene.region_count();
    let explainer = Explainer::new(oracle, scene, targets)?.with_mode(config.objective);
    let attribution = explainer.greedy(config.budget.unwrap_or(n).min(n))?;
    let started = Instant::now();
    let prefix_probs = if attribution.prefix_probs.is_empty() {
        explainer.prefix_probs(&attribution.order)?
    } else {
        attribution.prefix_probs.clone()
    };
    let influence =
        eagle_core::influence_from_prefix_probs(&prefix_probs, config.influence_variant)?;
    let influence_alternate =
        eagle_core::influence_from_prefix_probs(&prefix_probs, config.influence_variant.other())?;
    let curves = if attribution.order.len() == n {
        Some(CurvesRecord {
            x_axis: config.metrics.x_axis,
            insertion: insertion_curve(&explainer, &attribution.order)?,
            deletion: deletion_curve(&explainer, &attribution.order)?,
        })
    } else {
        None
    };
    Ok(Explanation {
        region_scores: attribution.region_scores(n),
        attribution,
        curves,
        influence,
        influence_alternate,
        metrics_secs: started.elapsed().as_secs_f64(),
    })
}

/// Greedy decoding on the full image.
pub fn generate_caption<O: ProbOracle + ?Sized>(
    oracle: &O,
    scene: Scene<'_>,
    prompt: &str,
    max_tokens: usize,
) -> Result<Generation> {
    let keep = KeepSet::full(scene.region_count());
    Ok(oracle.generate(&GenerateRequest {
        image: scene.masked(&keep)?,
        prompt,
        max_tokens,
        keep: Some(keep),
    })?)
}

/// Targets for `request` over `generation`, including the sensitive-token rule.
pub fn select_targets<O: ProbOracle + ?Sized>(
    config: &RunConfig,
    oracle: &O,
    scene: Scene<'_>,
    tokenizer: &dyn Tokenizer,
    prompt: &str,
    generation: &Generation,
    selection: &TargetSpec,
) -> Result<TokenTargets> {
    let targets = resolve_targets(
        selection,
        prompt,
        &generation.token_ids,
        &generation.text,
        tokenizer,
    )?;
    if *selection != TargetSpec::Sensitive {
        return Ok(targets);
    }
    let sensitive =
        Explainer::new(oracle, scene, &targets)?.sensitive_tokens(config.sensitivity_threshold)?;
    if sensitive.is_empty() {
        return Err(Error::Usage(format!(
            "no token changes by more than {} when the image is masked",
            config.sensitivity_threshold
        )));
    }
    Ok(sensitive)
}

/// A finished attribution held in memory.
#[derive(Debug, Clone)]
pub struct AttributionRun {
    pub bundle: ResultBundle,
    pub partition: RegionPartition,
    pub saliency: SaliencyMap,
    /// Text of each generated token, when the tokenizer could align them.
    pub token_texts: Option<Vec<String>>,
    pub timing: Timing,
}

/// Token pieces of `generation` cut at the tokenizer's character offsets.
fn token_texts(tokenizer: &dyn Tokenizer, generation: &Generation) -> Option<Vec<String>> {
    let tokens = tokenizer.tokenize(&generation.text).ok()?;
    if tokens.offsets.len() != generation.token_ids.len() {
        return None;
    }
    let chars: Vec<char> = generation.text.chars().collect();
    tokens
        .offsets
        .iter()
        .map(|&[s, e]| (s <= e && e <= chars.len()).then(|| chars[s..e].iter().collect()))
        .collect()
}

/// Attribution of one image whose partition and oracle are already set up.
pub fn attribute_prepared(
    config: &RunConfig,
    image: &Image,
    image_source: &str,
    partition: &RegionPartition,
    oracle: &OracleGateway,
    tokenizer: &dyn Tokenizer,
    request: &TargetRequest,
) -> Result<AttributionRun> {
    let started = Instant::now();
    let before = oracle.stats();
    let scene = Scene::new(image, partition, config.fill)?;
    let prompt = request
        .prompt
        .clone()
        .unwrap_or_else(|| config.caption_prompt.clone());
    let generation = match &request.generation {
        Some(g) => g.clone(),
        None => generate_caption(oracle, scene, &prompt, config.max_new_tokens)?,
    };
    let generation_secs = started.elapsed().as_secs_f64();
    let targets = select_targets(
        config,
        oracle,
        scene,
        tokenizer,
        &prompt,
        &generation,
        &request.selection,
    )?;
    let explanation = explain(config, oracle, scene, &targets)?;
    let attribution_secs =
        started.elapsed().as_secs_f64() - generation_secs - explanation.metrics_secs;

    let saliency = rasterize_saliency(partition, &explanation.region_scores)?;
    let mut snapshot = config.clone();
    snapshot.out_dir = PathBuf::from(".");
    let metrics = explanation
        .curves
        .as_ref()
        .map(FaithfulnessRecord::from_curves);
    let bundle = ResultBundle {
        schema_version: SCHEMA_VERSION.into(),
        config: snapshot,
        image: ImageInfo {
            source: image_source.into(),
            width: image.width(),
            height: image.height(),
            pixel_sha256: sha256_hex(image.as_bytes()),
        },
        partition_ref: PartitionRef {
            path: PARTITION_FILE.into(),
            region_count: partition.region_count(),
            labels_sha256: sha256_hex(
                &partition
                    .labels()
                    .iter()
                    .flat_map(|l| l.to_le_bytes())
                    .collect::<Vec<u8>>(),
            ),
        },
        targets: TargetRecord {
            prompt,
            generated_text: generation.text.clone(),
            generated_ids: generation.token_ids.clone(),
            selection: request.selection.clone(),
            targets: targets.targets.clone(),
        },
        attribution: explanation.attribution,
        region_scores: explanation.region_scores,
        curves: explanation.curves,
        metrics,
        influence: explanation.influence,
        influence_alternate: explanation.influence_alternate,
        oracle: OracleRecord::new(oracle.model_id(), oracle.stats().since(before)),
        artifacts: Artifacts::default(),
    };
    let timing = Timing {
        partition_secs: 0.0,
        generation_secs,
        attribution_secs,
        metrics_secs: explanation.metrics_secs,
        total_secs: started.elapsed().as_secs_f64(),
    };
    Ok(AttributionRun {
        bundle,
        partition: partition.clone(),
        saliency,
        token_texts: token_texts(tokenizer, &generation),
        timing,
    })
}

/// Partitions `image`, connects the oracle, and runs [`attribute_prepared`].
pub fn attribute(
    config: &RunConfig,
    image: &Image,
    image_source: &str,
    source: &OracleSource,
    request: &TargetRequest,
) -> Result<AttributionRun> {
    let started = Instant::now();
    let partition = partition_image(config, image)?;
    let partition_secs = started.elapsed().as_secs_f64();
    let gateway = Gateway::new(
        source.connect(&partition, config.fill)?,
        config.oracle.gateway(),
    );
    let mut run = attribute_prepared(
        config,
        image,
        image_source,
        &partition,
        &gateway,
        source.tokenizer(),
        request,
    )?;
    run.timing.partition_secs = partition_secs;
    run.timing.total_secs = started.elapsed().as_secs_f64();
    Ok(run)
}

fn html_escape(text: &str) -> String {
    text.chars().fold(String::new(), |mut out, c| {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
        out
    })
}

/// HTML page showing each generated token over a background colored by its
/// normalized influence. Non-target tokens stay uncolored.
pub fn token_report(bundle: &ResultBundle, token_texts: Option<&[String]>) -> String {
    let t = &bundle.targets;
    let mut html = String::from(
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Token influence</title>\n\
         <style>body{font-family:sans-serif}span.tok{padding:2px 3px;margin:1px;border-radius:3px;display:inline-block}</style>\n\
         </head><body>\n",
    );
    let _ = writeln!(html, "<p>Prompt: {}</p>", html_escape(&t.prompt));
    let _ = writeln!(
        html,
        "<p>Influence variant: {:?}</p>\n<div>",
        bundle.influence.variant
    );
    for (pos, id) in t.generated_ids.iter().enumerate() {
        let text = match token_texts {
            Some(texts) => html_escape(&texts[pos]),
            None => format!("#{id}"),
        };
        match t.targets.iter().position(|tg| tg.position == pos) {
            Some(k) => {
                let [r, g, b] = heat_color(bundle.influence.norm[k]);
                let _ = writeln!(
                    html,
                    "<span class=\"tok\" style=\"background:rgb({r},{g},{b})\" title=\"position {pos}, influence {:.4}\">{text}</span>",
                    bundle.influence.norm[k]
                );
            }
            None => {
                let _ = writeln!(
                    html,
                    "<span class=\"tok\" title=\"position {pos}\">{text}</span>"
                );
            }
        }
    }
    html.push_str("</div>\n</body></html>\n");
    html
}

/// Writes the bundle and its artifacts into `out_dir`; returns the bundle path.
pub fn write_attribution(run: &AttributionRun, image: &Image, out_dir: &Path) -> Result<PathBuf> {
    create_dir(out_dir)?;
    let b = &run.bundle;
    canonical::write_file(
        &out_dir.join(PARTITION_FILE),
        &PartitionFile::from_partition(&run.partition),
    )?;
    write_png(&out_dir.join(SALIENCY_FILE), &saliency_png(&run.saliency))?;
    write_png(
        &out_dir.join(OVERLAY_FILE),
        &encode_png(&heatmap_overlay(image, &run.saliency, OVERLAY_ALPHA)?),
    )?;
    let scores = ScoresFile {
        region_count: run.partition.region_count(),
        order: b.attribution.order.clone(),
        raw_scores: b.attribution.raw_scores.clone(),
        norm_scores: b.attribution.norm_scores.clone(),
        region_scores: b.region_scores.clone(),
    };
    canonical::write_file(&out_dir.join(SCORES_FILE), &scores)?;
    let report = token_report(b, run.token_texts.as_deref());
    let report_path = out_dir.join(TOKEN_REPORT_FILE);
    std::fs::write(&report_path, report).map_err(|e| Error::io(&report_path, e))?;
    canonical::write_file(&out_dir.join(TIMING_FILE), &run.timing)?;
    let path = out_dir.join(BUNDLE_FILE);
    canonical::write_file(&path, b)?;
    Ok(path)
}

pub fn run_attribute(
    config: &RunConfig,
    image_path: &Path,
    source: &OracleSource,
    request: &TargetRequest,
) -> Result<PathBuf> {
    let image = load_image(image_path)?;
    let run = attribute(
        config,
        &image,
        &image_path.display().to_string(),
        source,
        request,
    )?;
    write_attribution(&run, &image, &config.out_dir)
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Faithfulness and pointing metrics of one stored bundle.
pub fn sample_metrics(bundle_path: &Path, truth: &GroundTruthFile) -> Result<SampleMetrics> {
    let bundle = ResultBundle::read(bundle_path)?;
    let dir = bundle_path.parent().unwrap_or(Path::new("."));
    let partition: PartitionFile =
        canonical::read_file(&resolve(dir, Path::new(&bundle.partition_ref.path)))?;
    let partition = partition.into_partition()?;
    let curves = bundle.curves.as_ref().ok_or_else(|| {
        Error::Invalid(format!(
            "{} has no curves; metrics need a full ordering",
            bundle_path.display()
        ))
    })?;
    let faithfulness = FaithfulnessRecord::from_curves(curves);
    let saliency = rasterize_saliency(&partition, &bundle.region_scores)?;
    let (bbox, mask) = truth.regions()?;
    let mut record = PointingRecord {
        bbox_hit: None,
        mask_hit: None,
        point: [0, 0],
        region: 0,
    };
    for (region, slot) in [(bbox, &mut record.bbox_hit), (mask, &mut record.mask_hit)] {
        if let Some(region) = region {
            let outcome = pointing_game(&saliency, &partition, &region)?;
            *slot = Some(outcome.hit);
            record.point = [outcome.point.0, outcome.point.1];
            record.region = outcome.region;
        }
    }
    Ok(SampleMetrics {
        bundle: bundle_path.to_path_buf(),
        insertion_auc: faithfulness.insertion_auc,
        deletion_auc: faithfulness.deletion_auc,
        avg_highest: faithfulness.avg_highest,
        pointing: record,
    })
}

/// Per-sample metrics and their means over a manifest.
pub fn metrics_for_manifest(
    config: &RunConfig,
    manifest: &Manifest,
    base: &Path,
) -> Result<MetricsBundle> {
    if manifest.samples.is_empty() {
        return Err(Error::Usage("manifest has no samples".into()));
    }
    let samples = manifest
        .samples
        .iter()
        .map(|entry| {
            let truth: GroundTruthFile = canonical::read_file(&resolve(base, &entry.ground_truth))?;
            sample_metrics(&resolve(base, &entry.bundle), &truth)
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = MetricAggregate::of(&samples)?;
    Ok(MetricsBundle {
        schema_version: SCHEMA_VERSION.into(),
        x_axis: config.metrics.x_axis,
        samples,
        aggregate,
    })
}

pub fn run_metrics(config: &RunConfig, manifest: &Manifest, base: &Path) -> Result<PathBuf> {
    let bundle = metrics_for_manifest(config, manifest, base)?;
    create_dir(&config.out_dir)?;
    let path = config.out_dir.join(METRICS_FILE);
    canonical::write_file(&path, &bundle)?;
    Ok(path)
}

/// Counterfactual attribution and minimal correction of every case.
pub fn hallucinate(
    config: &RunConfig,
    cases: &[CaseRecord],
    base: &Path,
    source: Option<&OracleSource>,
) -> Result<HallucinationBundle> {
    if cases.is_empty() {
        return Err(Error::Usage("case file has no cases".into()));
    }
    let mut results = Vec::with_capacity(cases.len());
    let mut oracle_record = OracleRecord::new(None, Default::default());
    for (i, record) in cases.iter().enumerate() {
        let label = record
            .id
            .clone()
            .unwrap_or_else(|| format!("case {}", i + 1));
        let case = record.to_case();
        case.validate()?;
        let image_path = record.image_path(base);
        let image = load_image(&image_path)?;
        let partition = partition_image(config, &image)?;
        let oracle = match (&record.oracle, source) {
            (Some(descriptor), _) => descriptor.build(&partition, config.fill)?,
            (None, Some(source)) => source.connect(&partition, config.fill)?,
            (None, None) => {
                return Err(Error::Usage(format!(
                    "{label}: no oracle configured for this case"
                )))
            }
        };
        let gateway = Gateway::new(oracle, config.oracle.gateway());
        let scene = Scene::new(&image, &partition, config.fill)?;
        let attribution = counterfactual_attribute(&gateway, scene, &case)?;
        let outcome = minimal_correction(
            &gateway,
            scene,
            &case,
            &attribution,
            config.metrics.amcr_mode,
        )?;
        oracle_record.add(&OracleRecord::new(gateway.model_id(), gateway.stats()));
        results.push(CaseResult {
            id: record.id.clone(),
            image: record.image.display().to_string(),
            region_count: partition.region_count(),
            model_answer: case.model_answer,
            ground_truth: case.ground_truth,
            order: attribution.order,
            outcome,
        });
    }
    let outcomes: Vec<_> = results.iter().map(|r| r.outcome.clone()).collect();
    let mut snapshot = config.clone();
    snapshot.out_dir = PathBuf::from(".");
    Ok(HallucinationBundle {
        schema_version: SCHEMA_VERSION.into(),
        config: snapshot,
        case_count: results.len(),
        corrected_count: outcomes.iter().filter(|o| o.corrected).count(),
        amcr: amcr(&outcomes)?,
        csr_at_10pct: csr_at_budget(&outcomes, 0.10)?,
        csr_budget: config.metrics.csr_budget,
        csr_at_budget: csr_at_budget(&outcomes, config.metrics.csr_budget)?,
        cases: results,
        oracle: oracle_record,
    })
}

pub fn run_hallucinate(
    config: &RunConfig,
    case_file: &Path,
    source: Option<&OracleSource>,
) -> Result<PathBuf> {
    let cases = read_cases(case_file)?;
    let base = case_file.parent().unwrap_or(Path::new("."));
    let bundle = hallucinate(config, &cases, base, source)?;
    create_dir(&config.out_dir)?;
    let path = config.out_dir.join(HALLUCINATION_FILE);
    canonical::write_file(&path, &bundle)?;
    Ok(path)
}
