//! Planted-object benchmark over generated images and a coverage oracle.

use eagle_core::{
    pointing_game, rasterize_saliency, GroundTruthRegion, Image, Scene, TokenTargets,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::SCHEMA_VERSION;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::BboxRecord;
use crate::gateway::Gateway;
use crate::pipeline::{explain, partition_image};
use crate::synthetic::OracleDescriptor;

/// A generated image with one saturated rectangle on a muted gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedObject {
    pub image: Image,
    pub bbox: BboxRecord,
}

fn jitter(rng: &mut impl Rng, value: f64) -> u8 {
    (value + rng.random_range(-8.0..=8.0))
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Object sides are 30% to 45% of the image sides.
pub fn planted_object_image(
    rng: &mut impl Rng,
    width: usize,
    height: usize,
) -> Result<PlantedObject> {
    if width < 8 || height < 8 {
        return Err(Error::Invalid(format!(
            "planted-object images need at least 8x8 pixels, got {width}x{height}"
        )));
    }
    let mut muted = || -> [f64; 3] { [0; 3].map(|_: u8| rng.random_range(70.0..150.0)) };
    let (left, right) = (muted(), muted());
    let mut object = [40.0, 40.0, 40.0];
    object[rng.random_range(0..3)] = 235.0;
    let ow = rng.random_range(width * 3 / 10..=width * 9 / 20).max(2);
    let oh = rng.random_range(height * 3 / 10..=height * 9 / 20).max(2);
    let bbox = BboxRecord {
        x: rng.random_range(0..=width - ow),
        y: rng.random_range(0..=height - oh),
        w: ow,
        h: oh,
    };
    let image = Image::from_fn(width, height, |x, y| {
        let inside = x >= bbox.x && x < bbox.x + bbox.w && y >= bbox.y && y < bbox.y + bbox.h;
        let t = x as f64 / (width - 1) as f64;
        let base = if inside {
            object
        } else {
            [0, 1, 2].map(|c| left[c] * (1.0 - t) + right[c] * t)
        };
        base.map(|v| jitter(rng, v))
    })?;
    Ok(PlantedObject { image, bbox })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthBenchOptions {
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for SynthBenchOptions {
    fn default() -> Self {
        Self {
            images: 20,
            width: 64,
            height: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBenchCase {
    pub bbox: BboxRecord,
    pub region_count: usize,
    /// Region holding the most object pixels.
    pub planted_region: usize,
    pub top_region: usize,
    pub pointing_hit: bool,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub candidate_evaluations: usize,
    pub upstream_forwards: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBenchReport {
    pub schema_version: String,
    pub options: SynthBenchOptions,
    pub region_count: usize,
    pub cases: Vec<SynthBenchCase>,
    pub pointing_hit_rate: f64,
    pub top_region_rate: f64,
    pub mean_insertion_auc: f64,
    pub mean_deletion_auc: f64,
}

fn planted_region(partition: &eagle_core::RegionPartition, bbox: &BboxRecord) -> usize {
    let mut hits = vec![0usize; partition.region_count()];
    for y in bbox.y..bbox.y + bbox.h {
        for x in bbox.x..bbox.x + bbox.w {
            hits[partition.label_at(x, y)] += 1;
        }
    }
    let mut best = 0;
    for (r, &h) in hits.iter().enumerate() {
        if h > hits[best] {
            best = r;
        }
    }
    best
}

/// Runs the full pipeline on `options.images` planted-object images; image
/// `i` is generated from seed `options.seed + i`.
pub fn synth_bench(config: &RunConfig, options: &SynthBenchOptions) -> Result<SynthBenchReport> {
    if options.images == 0 {
        return Err(Error::Usage("synth-bench needs at least one image".into()));
    }
    let targets = TokenTargets::factual("", vec![0], [0])?;
    let mut cases = Vec::with_capacity(options.images);
    for i in 0..options.images {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(i as u64));
        let planted = planted_object_image(&mut rng, options.width, options.height)?;
        let partition = partition_image(config, &planted.image)?;
        let oracle = OracleDescriptor::Coverage {
            object_pixels: None,
            bbox: Some(planted.bbox),
        }
        .build(&partition, config.fill)?;
        let gateway = Gateway::new(oracle, config.oracle.gateway());
        let scene = Scene::new(&planted.image, &partition, config.fill)?;
        let explanation = explain(config, &gateway, scene, &targets)?;
        let saliency = rasterize_saliency(&partition, &explanation.region_scores)?;
        let b = planted.bbox;
        let pointing = pointing_game(
            &saliency,
            &partition,
            &GroundTruthRegion::Bbox {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
            },
        )?;
        let (insertion_auc, deletion_auc) = explanation
            .curves
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |c| {
                (c.insertion.auc(), c.deletion.auc())
            });
        cases.push(SynthBenchCase {
            bbox: b,
            region_count: partition.region_count(),
            planted_region: planted_region(&partition, &b),
            top_region: explanation.attribution.order[0],
            pointing_hit: pointing.hit,
            insertion_auc,
            deletion_auc,
            candidate_evaluations: explanation.attribution.candidate_evaluations,
            upstream_forwards: gateway.stats().upstream_forwards,
        });
    }
    let n = cases.len() as f64;
    let rate =
        |f: &dyn Fn(&SynthBenchCase) -> bool| cases.iter().filter(|c| f(c)).count() as f64 / n;
    Ok(SynthBenchReport {
        schema_version: SCHEMA_VERSION.into(),
        options: *options,
        region_count: config.region_count,
        pointing_hit_rate: rate(&|c| c.pointing_hit),
        top_region_rate: rate(&|c| c.top_region == c.planted_region),
        mean_insertion_auc: cases.iter().map(|c| c.insertion_auc).sum::<f64>() / n,
        mean_deletion_auc: cases.iter().map(|c| c.deletion_auc).sum::<f64>() / n,
        cases,
    })
}
