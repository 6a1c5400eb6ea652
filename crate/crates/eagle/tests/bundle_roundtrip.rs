mod common;

use std::path::Path;

use eagle::bundle::{HallucinationBundle, ResultBundle};
use eagle::canonical;
use eagle::config::RunConfig;
use eagle::formats::CaseRecord;
use eagle::pipeline::{attribute, hallucinate, write_attribution, OracleSource, TargetRequest};
use eagle::synthetic::OracleDescriptor;
use eagle::targets::TargetSpec;
use eagle_core::{Answer, Image};
use tempfile::TempDir;

fn picture() -> Image {
    Image::from_fn(24, 24, |x, y| {
        [(x * 9) as u8, (y * 9) as u8, ((x * y) % 256) as u8]
    })
    .unwrap()
}

fn config(descriptor: OracleDescriptor) -> RunConfig {
    let mut config = RunConfig {
        region_count: 9,
        max_new_tokens: 3,
        ..RunConfig::default()
    };
    config.oracle.synthetic = Some(descriptor);
    config
}

fn assert_typed_round_trip(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let bundle = ResultBundle::read(path).unwrap();
    assert_eq!(
        format!("{}\n", canonical::to_string(&bundle).unwrap()),
        text
    );
}

fn write_run(config: &RunConfig, request: &TargetRequest, out: &Path) -> std::path::PathBuf {
    let source = OracleSource::from_config(&config.oracle).unwrap();
    let run = attribute(config, &picture(), "picture", &source, request).unwrap();
    write_attribution(&run, &picture(), out).unwrap()
}

#[test]
fn full_ordering_bundle_reserializes_identically() {
    let dir = TempDir::new().unwrap();
    let config = config(OracleDescriptor::Modular {
        weights: None,
        seed: Some(3),
        bias: -0.25,
    });
    let path = write_run(&config, &TargetRequest::default(), dir.path());
    assert_typed_round_trip(&path);
}

#[test]
fn budgeted_bundle_reserializes_identically() {
    let dir = TempDir::new().unwrap();
    let mut config = config(OracleDescriptor::Modular {
        weights: None,
        seed: Some(4),
        bias: 0.0,
    });
    config.budget = Some(3);
    let request = TargetRequest {
        selection: TargetSpec::Positions(vec![0, 2]),
        ..TargetRequest::default()
    };
    let path = write_run(&config, &request, dir.path());
    let bundle = ResultBundle::read(&path).unwrap();
    assert_eq!(bundle.attribution.order.len(), 3);
    assert!(bundle.curves.is_none());
    assert_typed_round_trip(&path);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let config = config(OracleDescriptor::Modular {
        weights: None,
        seed: Some(9),
        bias: 0.1,
    });
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let first = std::fs::read(write_run(&config, &TargetRequest::default(), a.path())).unwrap();
    let second = std::fs::read(write_run(&config, &TargetRequest::default(), b.path())).unwrap();
    assert_eq!(first, second);
}

#[test]
fn foreign_schema_version_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = config(OracleDescriptor::Constant { p: 0.5 });
    let path = write_run(&config, &TargetRequest::default(), dir.path());
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"schema_version\":\"1\"", "\"schema_version\":\"0\"");
    std::fs::write(&path, text).unwrap();
    assert!(ResultBundle::read(&path).is_err());
}

#[test]
fn hallucination_bundle_reserializes_identically() {
    let dir = TempDir::new().unwrap();
    common::save_png(&picture(), &dir.path().join("p.png"));
    let case = CaseRecord {
        id: Some("c1".into()),
        image: "p.png".into(),
        question: "Is there a cat?".into(),
        prompt: None,
        model_answer: Answer::Yes,
        ground_truth: Answer::No,
        counterfactual_vocab_id: 2,
        answer_position: 0,
        generated_ids: vec![1, 3],
        oracle: Some(OracleDescriptor::YesNo {
            yes_logits: None,
            suppressor_regions: None,
            suppressor_points: Some(vec![[2, 2]]),
            strength: 4.0,
            bias: -2.0,
            vocab: Default::default(),
        }),
    };
    let report = hallucinate(&RunConfig::default(), &[case], dir.path(), None).unwrap();
    let path = dir.path().join("h.json");
    canonical::write_file(&path, &report).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back: HallucinationBundle = canonical::read_file(&path).unwrap();
    assert_eq!(back, report);
    assert_eq!(format!("{}\n", canonical::to_string(&back).unwrap()), text);
}
