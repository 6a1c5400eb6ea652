//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use eagle::bench::planted_object_image;
use eagle::config::RunConfig;
use eagle::formats::{BboxRecord, CaseRecord, PartitionFile};
use eagle::gateway::{Gateway, GatewayConfig};
use eagle::pipeline::{explain, hallucinate, partition_image};
use eagle::synthetic::OracleDescriptor;
use eagle_core::image::MID_GRAY;
use eagle_core::synthetic::{
    make_coverage_oracle, make_interaction_oracle, make_modular_oracle, FnModel, SyntheticOracle,
};
use eagle_core::{
    attribution_scores, csr_at_budget, deletion_curve, influence_of_series, insertion_curve,
    pointing_game, rasterize_saliency, slico_partition, Answer, Explainer, GroundTruthRegion,
    Image, InfluenceVariant, KeepSet, ObjectiveMode, ProbOracle, RegionPartition, Scene,
    TokenTargets,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// `cols x rows` rectangular cells of `cell x cell` pixels, labeled row-major.
fn grid_partition(cols: usize, rows: usize, cell: usize) -> RegionPartition {
    let (w, h) = (cols * cell, rows * cell);
    let labels = (0..w * h)
        .map(|i| ((i / w) / cell * cols + (i % w) / cell) as u32)
        .collect();
    RegionPartition::from_labels(w, h, labels).unwrap()
}

/// `n` vertical strips, two pixels wide and two high.
fn strip_partition(n: usize) -> RegionPartition {
    let labels = (0..4 * n).map(|i| ((i % (2 * n)) / 2) as u32).collect();
    RegionPartition::from_labels(2 * n, 2, labels).unwrap()
}

fn picture(partition: &RegionPartition) -> Image {
    let (w, h) = partition.dimensions();
    Image::from_fn(w, h, |x, y| [(x * 7 % 256) as u8, (y * 5 % 256) as u8, 17]).unwrap()
}

fn descending(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    order
}

/// Best objective over all subsets of each size, by enumeration.
fn best_by_size<O: ProbOracle + ?Sized>(
    explainer: &Explainer<'_, O>,
    n: usize,
) -> Result<Vec<f64>, String> {
    let mut best = vec![f64::NEG_INFINITY; n + 1];
    for mask in 1u64..(1 << n) {
        let value = explainer
            .objective(&KeepSet::from_mask(n, mask))
            .map_err(fail)?
            .total;
        let k = mask.count_ones() as usize;
        best[k] = best[k].max(value);
    }
    Ok(best)
}

fn modular_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..50 {
        let n = rng.random_range(4..=10);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bias = rng.random_range(-1.0..1.0);
        let target_count = rng.random_range(1..=3);
        let partition = strip_partition(n);
        let image = picture(&partition);
        let oracle =
            make_modular_oracle(&partition, MID_GRAY, weights.clone(), bias).map_err(fail)?;
        let targets =
            TokenTargets::all_tokens("describe", (0..target_count).collect()).map_err(fail)?;
        let scene = Scene::new(&image, &partition, MID_GRAY).map_err(fail)?;
        let explainer = Explainer::new(&oracle, scene, &targets).map_err(fail)?;
        let greedy = explainer.greedy(n).map_err(fail)?;
        ensure(greedy.order == descending(&weights), || {
            format!("case {case}: order {:?}, weights {weights:?}", greedy.order)
        })?;
        let best = best_by_size(&explainer, n)?;
        for (k, (&value, &optimum)) in greedy.step_values.iter().zip(&best[1..]).enumerate() {
            ensure(value == optimum, || {
                format!(
                    "case {case}: prefix {} scores {value} but the best subset scores {optimum}",
                    k + 1
                )
            })?;
        }
    }
    Ok("50 oracles, orderings and every prefix exact".into())
}

/// Monotone submodular set cover: each region covers a random subset of
/// `elements` concepts; the probability is the covered share.
fn set_cover_oracle(
    rng: &mut ChaCha8Rng,
    partition: &RegionPartition,
) -> SyntheticOracle<FnModel<impl Fn(&KeepSet, &TokenTargets) -> Vec<f64>>> {
    let elements = rng.random_range(6..=24);
    let covers: Vec<Vec<bool>> = (0..partition.region_count())
        .map(|_| (0..elements).map(|_| rng.random_bool(0.3)).collect())
        .collect();
    let model = FnModel(move |keep: &KeepSet, targets: &TokenTargets| {
        let covered = (0..elements)
            .filter(|&e| keep.iter().any(|r| covers[r][e]))
            .count();
        vec![covered as f64 / elements as f64; targets.len()]
    });
    SyntheticOracle::new(model, partition.clone(), MID_GRAY, "set-cover")
}

fn approximation_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let ratio = 1.0 - (-1.0f64).exp();
    let targets = TokenTargets::all_tokens("describe", vec![0]).map_err(fail)?;
    let mut tightest = f64::INFINITY;
    for case in 0..30 {
        let n = rng.random_range(2..=8);
        let partition = strip_partition(n);
        let image = picture(&partition);
        let scene = Scene::new(&image, &partition, MID_GRAY).map_err(fail)?;
        let check = |oracle: &dyn ProbOracle, tightest: &mut f64| -> Result<(), String> {
            let explainer = Explainer::new(oracle, scene, &targets)
                .map_err(fail)?
                .with_mode(ObjectiveMode::InsightOnly);
            let greedy = explainer.greedy(n).map_err(fail)?;
            let best = best_by_size(&explainer, n)?;
            for (k, (&value, &optimum)) in greedy.step_values.iter().zip(&best[1..]).enumerate() {
                ensure(value >= ratio * optimum, || {
                    format!(
                        "case {case}: prefix {} scores {value}, optimum {optimum}",
                        k + 1
                    )
                })?;
                if optimum > 0.0 {
                    *tightest = tightest.min(value / optimum);
                }
            }
            Ok(())
        };
        if case % 2 == 0 {
            check(&set_cover_oracle(&mut rng, &partition), &mut tightest)?;
        } else {
            let (w, h) = partition.dimensions();
            let pixels: Vec<(usize, usize)> = (0..w * h)
                .filter(|_| rng.random_bool(0.4))
                .map(|i| (i % w, i / w))
                .collect();
            let pixels = if pixels.is_empty() {
                vec![(0, 0)]
            } else {
                pixels
            };
            check(
                &make_coverage_oracle(&partition, MID_GRAY, pixels).map_err(fail)?,
                &mut tightest,
            )?;
        }
    }
    Ok(format!(
        "30 oracles, no violations, smallest prefix/optimum ratio {tightest:.4}"
    ))
}

fn gamma_estimator() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let targets = TokenTargets::all_tokens("describe", vec![0, 1]).map_err(fail)?;
    let mut worst = 0.0f64;
    for case in 0..20 {
        let n = rng.random_range(2..=8);
        let partition = strip_partition(n);
        let image = picture(&partition);
        let scene = Scene::new(&image, &partition, MID_GRAY).map_err(fail)?;
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.1)).collect();
        let bias = rng.random_range(0.0..0.15);
        let linear = FnModel(move |keep: &KeepSet, targets: &TokenTargets| {
            vec![keep.iter().fold(bias, |acc, r| acc + weights[r]); targets.len()]
        });
        let oracle = SyntheticOracle::new(linear, partition.clone(), MID_GRAY, "additive");
        let estimate = Explainer::new(&oracle, scene, &targets)
            .map_err(fail)?
            .submodularity_ratio(8)
            .map_err(fail)?;
        let error = (estimate.raw_min_ratio - 1.0).abs();
        ensure(estimate.admissible_pairs > 0 && error <= 1e-12, || {
            format!(
                "case {case}: raw ratio {} over {} pairs",
                estimate.raw_min_ratio, estimate.admissible_pairs
            )
        })?;
        worst = worst.max(error);
    }

    let partition = strip_partition(3);
    let image = picture(&partition);
    let scene = Scene::new(&image, &partition, MID_GRAY).map_err(fail)?;
    let mut pairs = vec![vec![0.0; 3]; 3];
    pairs[0][1] = 3.0;
    pairs[1][0] = 3.0;
    let oracle =
        make_interaction_oracle(&partition, MID_GRAY, vec![0.1; 3], pairs, -2.0).map_err(fail)?;
    let estimate = Explainer::new(&oracle, scene, &targets)
        .map_err(fail)?
        .with_mode(ObjectiveMode::InsightOnly)
        .submodularity_ratio(8)
        .map_err(fail)?;
    ensure(estimate.gamma < 1.0, || {
        format!("supermodular oracle gave gamma {}", estimate.gamma)
    })?;
    Ok(format!(
        "additive: max |ratio - 1| = {worst:.1e}; supermodular: gamma = {:.4}",
        estimate.gamma
    ))
}

fn recurrence_property() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let sequences = prop_oneof![
        3 => prop::collection::vec(-50.0f64..50.0, 1..40),
        1 => (-50.0f64..50.0, 1usize..40).prop_map(|(v, n)| vec![v; n]),
    ];
    runner
        .run(&sequences, |values| {
            let (raw, norm) =
                attribution_scores(&values).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(raw.len(), values.len());
            prop_assert_eq!(norm.len(), values.len());
            prop_assert_eq!(raw[0], 0.0);
            for i in 1..values.len() {
                prop_assert_eq!(raw[i], raw[i - 1] - (values[i] - values[i - 1]).abs());
                prop_assert!(raw[i] <= raw[i - 1]);
            }
            prop_assert!(norm.iter().all(|s| (0.0..=1.0).contains(s)));
            if values.iter().all(|&v| v == values[0]) {
                prop_assert!(norm.iter().all(|&s| s == 1.0));
            }
            Ok(())
        })
        .map_err(fail)?;
    Ok("10000 sequences".into())
}

fn influence_variants() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 2_000,
        failure_persistence: None,
        ..Config::default()
    });
    let series = prop_oneof![
        3 => prop::collection::vec(0.0f64..=1.0, 1..20),
        1 => (0.0f64..=1.0, 1usize..20).prop_map(|(p, n)| vec![p; n]),
    ];
    runner
        .run(&series, |probs| {
            let constant = probs.iter().all(|&p| p == probs[0]);
            for variant in [InfluenceVariant::MinAnchored, InfluenceVariant::MaxAnchored] {
                let value = influence_of_series(&probs, variant);
                prop_assert!(value >= 0.0);
                prop_assert_eq!(value == 0.0, constant);
            }
            Ok(())
        })
        .map_err(fail)?;
    let fixture = [0.1, 0.1, 0.9];
    let body = influence_of_series(&fixture, InfluenceVariant::MinAnchored);
    let listing = influence_of_series(&fixture, InfluenceVariant::MaxAnchored);
    ensure(body == 0.8 && listing == 1.6, || {
        format!("fixture gave {body} and {listing}")
    })?;
    Ok(format!(
        "2000 random series; fixture gives {body} and {listing}"
    ))
}

fn metric_closed_forms() -> Check {
    let mut details = Vec::new();
    let targets = TokenTargets::all_tokens("describe", vec![0]).map_err(fail)?;
    for (cols, rows) in [(2, 2), (4, 2), (8, 8)] {
        let n = cols * rows;
        let cell = 4;
        let partition = grid_partition(cols, rows, cell);
        let image = picture(&partition);
        let object_region = n / 2 + 1;
        let (ox, oy) = ((object_region % cols) * cell, (object_region / cols) * cell);
        let pixels = (oy + 1..oy + 3).flat_map(|y| (ox + 1..ox + 4).map(move |x| (x, y)));
        let oracle = make_coverage_oracle(&partition, MID_GRAY, pixels).map_err(fail)?;
        let scene = Scene::new(&image, &partition, MID_GRAY).map_err(fail)?;
        let explainer = Explainer::new(&oracle, scene, &targets).map_err(fail)?;
        let order = explainer.greedy(n).map_err(fail)?.order;
        ensure(order[0] == object_region, || {
            format!("|V| = {n}: first region {} is not the object", order[0])
        })?;
        let insertion = insertion_curve(&explainer, &order).map_err(fail)?;
        let deletion = deletion_curve(&explainer, &order).map_err(fail)?;
        let expected = 1.0 - 1.0 / (2.0 * n as f64);
        ensure((insertion.auc() - expected).abs() <= 1e-12, || {
            format!("|V| = {n}: insertion AUC {} vs {expected}", insertion.auc())
        })?;
        ensure((deletion.auc() - (1.0 - expected)).abs() <= 1e-12, || {
            format!(
                "|V| = {n}: deletion AUC {} vs {}",
                deletion.auc(),
                1.0 - expected
            )
        })?;
        let max = insertion
            .ys
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(insertion.average_highest() == max, || {
            format!("|V| = {n}: average_highest is not the curve max")
        })?;
        details.push(format!("|V|={n}: {:.6}", insertion.auc()));
    }
    Ok(format!("insertion AUC {}", details.join(", ")))
}

fn planted_localization() -> Check {
    let config = RunConfig::default();
    let targets = TokenTargets::factual("", vec![0], [0]).map_err(fail)?;
    let (mut pointing_hits, mut top_hits) = (0, 0);
    let images = 100;
    for i in 0..images {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + i);
        let planted = planted_object_image(&mut rng, 64, 64).map_err(fail)?;
        let b = planted.bbox;
        let partition = partition_image(&config, &planted.image).map_err(fail)?;
        let oracle = OracleDescriptor::Coverage {
            object_pixels: None,
            bbox: Some(b),
        }
        .build(&partition, config.fill)
        .map_err(fail)?;
        let gateway = Gateway::new(oracle, config.oracle.gateway());
        let scene = Scene::new(&planted.image, &partition, config.fill).map_err(fail)?;
        let explanation = explain(&config, &gateway, scene, &targets).map_err(fail)?;

        let mut hits = vec![0usize; partition.region_count()];
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                hits[partition.label_at(x, y)] += 1;
            }
        }
        let most = *hits.iter().max().unwrap_or(&0);
        if hits[explanation.attribution.order[0]] == most {
            top_hits += 1;
        }

        let saliency = rasterize_saliency(&partition, &explanation.region_scores).map_err(fail)?;
        let truth = GroundTruthRegion::Bbox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        };
        let outcome = pointing_game(&saliency, &partition, &truth).map_err(fail)?;
        let (px, py) = outcome.point;
        let inside = px >= b.x && px < b.x + b.w && py >= b.y && py < b.y + b.h;
        ensure(inside == outcome.hit, || {
            format!("image {i}: pointing verdict disagrees with the box")
        })?;
        if inside {
            pointing_hits += 1;
        }
    }
    let pointing = pointing_hits as f64 / images as f64;
    let top = top_hits as f64 / images as f64;
    ensure(pointing >= 0.95 && top >= 0.95, || {
        format!("pointing {pointing:.2}, top region {top:.2}")
    })?;
    Ok(format!(
        "{images} images, pointing hit rate {pointing:.2}, top region = planted in {top:.2}"
    ))
}

fn hallucination_correction() -> Check {
    let dir = tempfile::TempDir::new().map_err(fail)?;
    let config = RunConfig {
        region_count: 36,
        ..RunConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut cases = Vec::new();
    let mut largest_area = 0.0f64;
    for i in 0..50 {
        let image = planted_object_image(&mut rng, 64, 64).map_err(fail)?.image;
        let name = format!("case{i}.png");
        std::fs::write(dir.path().join(&name), eagle::imaging::encode_png(&image)).map_err(fail)?;
        let partition = partition_image(&config, &image).map_err(fail)?;
        let total = partition.pixel_count() as f64;
        let count = 1 + i % 2;
        let mut suppressors: Vec<usize> = Vec::new();
        let mut area = 0;
        for _ in 0..1000 {
            if suppressors.len() == count {
                break;
            }
            let r = rng.random_range(0..partition.region_count());
            let pixels = partition
                .labels()
                .iter()
                .filter(|&&l| l as usize == r)
                .count();
            if !suppressors.contains(&r) && (area + pixels) as f64 <= 0.10 * total {
                suppressors.push(r);
                area += pixels;
            }
        }
        ensure(suppressors.len() == count, || {
            format!("case {i}: no suppressor set within 10% of the image")
        })?;
        largest_area = largest_area.max(area as f64 / total);
        cases.push(CaseRecord {
            id: Some(format!("case{i}")),
            image: name.into(),
            question: "Is there a dog in the image?".into(),
            prompt: None,
            model_answer: Answer::Yes,
            ground_truth: Answer::No,
            counterfactual_vocab_id: 2,
            answer_position: 0,
            generated_ids: vec![1, 3],
            oracle: Some(OracleDescriptor::YesNo {
                yes_logits: None,
                suppressor_regions: Some(suppressors),
                suppressor_points: None,
                strength: 4.0,
                bias: -2.0,
                vocab: Default::default(),
            }),
        });
    }
    let report = hallucinate(&config, &cases, dir.path(), None).map_err(fail)?;
    let outcomes: Vec<_> = report.cases.iter().map(|c| c.outcome.clone()).collect();
    let csr = csr_at_budget(&outcomes, 0.10).map_err(fail)?;
    ensure(csr == 1.0 && report.amcr <= 0.10, || {
        format!("CSR@0.10 {csr}, AMCR {}", report.amcr)
    })?;
    Ok(format!(
        "50 cases, largest suppressor area {largest_area:.3}, CSR@0.10 = {csr}, AMCR = {:.4}",
        report.amcr
    ))
}

fn random_image(rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (rng.random_range(32..=80), rng.random_range(32..=80));
    match rng.random_range(0..4) {
        0 => Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap(),
        1 => {
            let (a, b): ([u8; 3], [u8; 3]) = (rng.random(), rng.random());
            Image::from_fn(w, h, |x, _| {
                let t = x as f64 / (w - 1) as f64;
                [0, 1, 2].map(|c| (a[c] as f64 * (1.0 - t) + b[c] as f64 * t) as u8)
            })
            .unwrap()
        }
        2 => planted_object_image(rng, w, h).unwrap().image,
        _ => {
            let block = rng.random_range(3..12);
            let colors: Vec<[u8; 3]> = (0..400).map(|_| rng.random()).collect();
            Image::from_fn(w, h, |x, y| {
                colors[(y / block * 20 + x / block) % colors.len()]
            })
            .unwrap()
        }
    }
}

/// Number of 4-connected components of each label.
fn components(partition: &RegionPartition) -> Vec<usize> {
    let (w, h) = partition.dimensions();
    let labels = partition.labels();
    let mut seen = vec![false; w * h];
    let mut counts = vec![0usize; partition.region_count()];
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        counts[labels[start] as usize] += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut neighbors = Vec::with_capacity(4);
            if x > 0 {
                neighbors.push(i - 1);
            }
            if x + 1 < w {
                neighbors.push(i + 1);
            }
            if y > 0 {
                neighbors.push(i - w);
            }
            if y + 1 < h {
                neighbors.push(i + w);
            }
            for j in neighbors {
                if !seen[j] && labels[j] == labels[i] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    counts
}

fn partition_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (mut fewest, mut most) = (f64::INFINITY, 0.0f64);
    for i in 0..200 {
        let image = random_image(&mut rng);
        let (w, h) = image.dimensions();
        for n in [16, 36, 50, 64] {
            let partition = slico_partition(&image, n, 10).map_err(fail)?;
            let k = partition.region_count();
            ensure(partition.labels().len() == w * h, || {
                format!("image {i}, N={n}: unlabeled pixels")
            })?;
            ensure(partition.labels().iter().all(|&l| (l as usize) < k), || {
                format!("image {i}, N={n}: label out of range")
            })?;
            let mut sizes = vec![0usize; k];
            for &l in partition.labels() {
                sizes[l as usize] += 1;
            }
            ensure(sizes.iter().all(|&s| s > 0), || {
                format!("image {i}, N={n}: empty region")
            })?;
            let pieces = components(&partition);
            ensure(pieces.iter().all(|&c| c == 1), || {
                format!("image {i} ({w}x{h}), N={n}: disconnected region")
            })?;
            let ratio = k as f64 / n as f64;
            ensure((0.75..=1.25).contains(&ratio), || {
                format!("image {i} ({w}x{h}), N={n}: {k} regions")
            })?;
            fewest = fewest.min(ratio);
            most = most.max(ratio);
            let again = slico_partition(&image, n, 10).map_err(fail)?;
            let bytes = |p: &RegionPartition| {
                eagle::canonical::to_string(&PartitionFile::from_partition(p)).unwrap()
            };
            ensure(bytes(&partition) == bytes(&again), || {
                format!("image {i}, N={n}: labels differ between runs")
            })?;
        }
    }
    Ok(format!(
        "200 images x 4 targets, region count / N within [{fewest:.2}, {most:.2}]"
    ))
}

fn query_budget() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut details = Vec::new();
    for (cols, rows) in [(2, 2), (3, 3), (4, 4), (5, 5), (8, 8)] {
        let n = cols * rows;
        let partition = grid_partition(cols, rows, 3);
        let image = picture(&partition);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = make_modular_oracle(&partition, MID_GRAY, weights, 0.0).map_err(fail)?;
        let targets = TokenTargets::all_tokens("describe", vec![4, 5]).map_err(fail)?;
        let expected = n * (n + 1) / 2;
        for (mode, per_candidate) in [(ObjectiveMode::Full, 2), (ObjectiveMode::InsightOnly, 1)] {
            let gateway = Gateway::new(&oracle, GatewayConfig::default());
            let scene = Scene::new(&image, &partition, MID_GRAY).map_err(fail)?;
            let explainer = Explainer::new(&gateway, scene, &targets)
                .map_err(fail)?
                .with_mode(mode);
            let greedy = explainer.greedy(n).map_err(fail)?;
            let stats = gateway.stats();
            ensure(greedy.candidate_evaluations == expected, || {
                format!(
                    "|V| = {n}: {} candidate evaluations, expected {expected}",
                    greedy.candidate_evaluations
                )
            })?;
            ensure(stats.queries == per_candidate * expected, || {
                format!(
                    "|V| = {n}, {mode:?}: gateway counted {} queries for {expected} candidates",
                    stats.queries
                )
            })?;
            ensure(stats.upstream_forwards <= 2 * expected, || {
                format!(
                    "|V| = {n}: {} forwards exceed {}",
                    stats.upstream_forwards,
                    2 * expected
                )
            })?;
            if mode == ObjectiveMode::Full {
                details.push(format!(
                    "|V|={n}: {expected} evaluations, {} forwards",
                    stats.upstream_forwards
                ));
            }
        }
    }
    Ok(details.join("; "))
}

fn cli_determinism() -> Check {
    let dir = tempfile::TempDir::new().map_err(fail)?;
    let image = planted_object_image(&mut ChaCha8Rng::seed_from_u64(1111), 48, 40).map_err(fail)?;
    let image_path = dir.path().join("scene.png");
    std::fs::write(&image_path, eagle::imaging::encode_png(&image.image)).map_err(fail)?;
    let config_path = dir.path().join("config.json");
    let b = image.bbox;
    let descriptor = serde_json::json!({
        "region_count": 16,
        "oracle": { "synthetic": { "kind": "coverage", "bbox": BboxRecord { x: b.x, y: b.y, w: b.w, h: b.h } } }
    });
    std::fs::write(&config_path, descriptor.to_string()).map_err(fail)?;
    let run = |out: &Path| -> Result<Vec<u8>, String> {
        let output = Command::new(env!("CARGO_BIN_EXE_eagle"))
            .arg("--config")
            .arg(&config_path)
            .arg("attribute")
            .arg(&image_path)
            .arg("--out")
            .arg(out)
            .env_remove("EAGLE_ORACLE_URL")
            .output()
            .map_err(fail)?;
        ensure(output.status.success(), || {
            String::from_utf8_lossy(&output.stderr).into_owned()
        })?;
        std::fs::read(out.join("bundle.json")).map_err(fail)
    };
    let first = run(&dir.path().join("a"))?;
    let second = run(&dir.path().join("b"))?;
    ensure(first == second, || {
        "bundle.json differs between runs".into()
    })?;
    Ok(format!("two runs, {} identical bytes", first.len()))
}

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Option<Duration>,
    check: fn() -> Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        title: "modular-oracle exactness",
        limit: Some(Duration::from_secs(10)),
        check: modular_exactness,
    },
    Criterion {
        id: 2,
        title: "submodular approximation bound",
        limit: Some(Duration::from_secs(60)),
        check: approximation_bound,
    },
    Criterion {
        id: 3,
        title: "submodularity-ratio estimator",
        limit: Some(Duration::from_secs(30)),
        check: gamma_estimator,
    },
    Criterion {
        id: 4,
        title: "score recurrence and normalization",
        limit: None,
        check: recurrence_property,
    },
    Criterion {
        id: 5,
        title: "influence variants",
        limit: None,
        check: influence_variants,
    },
    Criterion {
        id: 6,
        title: "metric closed forms",
        limit: None,
        check: metric_closed_forms,
    },
    Criterion {
        id: 7,
        title: "planted-object localization",
        limit: Some(Duration::from_secs(120)),
        check: planted_localization,
    },
    Criterion {
        id: 8,
        title: "hallucination correction",
        limit: None,
        check: hallucination_correction,
    },
    Criterion {
        id: 9,
        title: "partition invariants",
        limit: None,
        check: partition_invariants,
    },
    Criterion {
        id: 10,
        title: "query budget",
        limit: None,
        check: query_budget,
    },
    Criterion {
        id: 11,
        title: "bundle determinism",
        limit: None,
        check: cli_determinism,
    },
];

fn main() -> ExitCode {
    let mut failures = 0;
    for criterion in CRITERIA {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(criterion.check))
            .unwrap_or_else(|panic| {
                let message = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                Err(message)
            })
            .and_then(|detail| match criterion.limit {
                Some(limit) if started.elapsed() > limit => Err(format!(
                    "{detail}; took {:.1?}, limit {limit:?}",
                    started.elapsed()
                )),
                _ => Ok(detail),
            });
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "criterion {:>2}: PASS  {} ({detail}; {elapsed:.2} s)",
                criterion.id, criterion.title
            ),
            Err(reason) => {
                failures += 1;
                println!(
                    "criterion {:>2}: FAIL  {} ({reason}; {elapsed:.2} s)",
                    criterion.id, criterion.title
                );
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        CRITERIA.len() - failures,
        CRITERIA.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
