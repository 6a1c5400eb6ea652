//! Black-box region attribution for autoregressive multimodal models.
//!
//! The crate explains which image regions drive selected output tokens of a
//! model that is only reachable through a probability oracle. An image is
//! split into superpixels ([`slico`]), regions are ranked by a greedy search
//! over an insight + necessity objective ([`attribution`]), and the ranking
//! is evaluated with faithfulness and localization metrics ([`metrics`]) or
//! used to diagnose and correct hallucinated yes/no answers
//! ([`hallucination`]).
//!
//! Everything here is pure computation over an abstract [`ProbOracle`]; the
//! crate is `no_std` and only needs `alloc`. IO, HTTP transport, caching and
//! concurrency live in the `eagle` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attribution;
pub mod error;
pub mod hallucination;
pub mod image;
pub mod metrics;
pub mod oracle;
pub mod partition;
pub mod slico;
pub mod synthetic;

pub use attribution::{
    attribution_scores, influence_from_prefix_probs, influence_of_series, Explainer,
    InfluenceReport, InfluenceVariant, ObjectiveMode, ObjectiveValue, OrderedAttribution, Scene,
    SubmodularityEstimate,
};
pub use error::{Error, OracleError, Result};
pub use hallucination::{
    amcr, counterfactual_attribute, csr_at_budget, minimal_correction, parse_answer, vqa_prompt,
    Answer, AreaMode, CorrectionOutcome, HallucinationCase,
};
pub use image::{Image, Rgb};
pub use metrics::{
    auc, average_highest, deletion_curve, insertion_curve, pointing_game, CurveKind,
    FaithfulnessCurve, GroundTruthRegion, PointingOutcome,
};
pub use oracle::{
    GenerateRequest, Generation, ProbOracle, ProbQuery, ProbResponse, Target, TokenTargets,
};
pub use partition::{
    compose_masked_image, rasterize_saliency, KeepSet, RegionPartition, SaliencyMap,
};
pub use slico::{slico_partition, SlicoParams};
