//! Counterfactual attribution and correction of wrong yes/no answers.
//!
//! A case is explained with respect to the correct answer token, so regions
//! that support the correct answer are ranked first and regions that
//! suppress it end up at the tail of the ordering. Correction removes
//! regions from that tail one at a time until regenerating the answer
//! yields the ground truth.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attribution::{Explainer, OrderedAttribution, Scene};
use crate::error::{Error, Result};
use crate::oracle::{GenerateRequest, ProbOracle, Target, TokenTargets};
use crate::partition::KeepSet;

/// Default captioning prompt.
pub const CAPTION_PROMPT: &str =
    "Describe the image in one factual English sentence of no more than 20 words. \
Do not include information that is not clearly visible.";

/// Yes/no question template; `{question}` is replaced by the question text.
pub const VQA_PROMPT_TEMPLATE: &str = "You are asked a visual question answering task. \n\
First, answer strictly with \"Yes\" or \"No\". \n\
Then, provide a short explanation if necessary.\n\
\n\
Question: {question}\n\
Answer:";

/// Token budget for regenerating an answer during correction.
pub const ANSWER_MAX_TOKENS: usize = 8;

pub fn vqa_prompt(question: &str) -> String {
    VQA_PROMPT_TEMPLATE.replace("{question}", question)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Answer {
    Yes,
    No,
}

/// Reads the leading word of a generation as an answer, ignoring case and
/// surrounding punctuation.
pub fn parse_answer(text: &str) -> Option<Answer> {
    let word = text.split_whitespace().next()?;
    let word = word.trim_matches(|c: char| !c.is_alphanumeric());
    if word.eq_ignore_ascii_case("yes") {
        Some(Answer::Yes)
    } else if word.eq_ignore_ascii_case("no") {
        Some(Answer::No)
    } else {
        None
    }
}

/// A wrong answer to explain and correct.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HallucinationCase {
    pub question: String,
    /// Full prompt sent to the model.
    pub prompt: String,
    pub model_answer: Answer,
    pub ground_truth: Answer,
    /// Vocabulary id of the correct answer's leading token.
    pub counterfactual_vocab_id: u32,
    /// Position of the answer token in `generated_ids`.
    pub answer_position: usize,
    /// The model's generated sequence.
    pub generated_ids: Vec<u32>,
}

impl HallucinationCase {
    pub fn validate(&self) -> Result<()> {
        if self.model_answer == self.ground_truth {
            return Err(Error::InvalidArgument(
                "model answer already equals the ground truth".into(),
            ));
        }
        if self.answer_position >= self.generated_ids.len() {
            return Err(Error::InvalidTargets(format!(
                "answer position {} beyond {} generated tokens",
                self.answer_position,
                self.generated_ids.len()
            )));
        }
        Ok(())
    }

    /// The single counterfactual target: the correct answer token at the answer position.
    pub fn targets(&self) -> Result<TokenTargets> {
        self.validate()?;
        TokenTargets::new(
            self.prompt.clone(),
            self.generated_ids.clone(),
            vec![Target {
                position: self.answer_position,
                vocab_id: self.counterfactual_vocab_id,
            }],
        )
    }
}

/// How the size of a removal set is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum AreaMode {
    /// Fraction of image pixels.
    #[default]
    Area,
    /// Fraction of regions.
    RegionCount,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrectionOutcome {
    pub corrected: bool,
    /// Removed regions in removal order.
    pub removed_regions: Vec<usize>,
    /// Size of the removal set; 1.0 when uncorrected.
    pub removed_area_fraction: f64,
    /// Probability of the correct token after 0, 1, 2, ... removals.
    pub probability_trace: Vec<f64>,
}

/// Greedy ordering of every region with respect to the correct answer.
pub fn counterfactual_attribute<O: ProbOracle + ?Sized>(
    oracle: &O,
    scene: Scene<'_>,
    case: &HallucinationCase,
) -> Result<OrderedAttribution> {
    let targets = case.targets()?;
    Explainer::new(oracle, scene, &targets)?.greedy(scene.region_count())
}

/// Removes regions from the tail of `attribution.order` until the regenerated
/// answer matches the ground truth.
///
/// Step 0 checks the unmodified image. Each step issues one probability
/// query and one generation on the current masked image.
pub fn minimal_correction<O: ProbOracle + ?Sized>(
    oracle: &O,
    scene: Scene<'_>,
    case: &HallucinationCase,
    attribution: &OrderedAttribution,
    mode: AreaMode,
) -> Result<CorrectionOutcome> {
    let n = scene.region_count();
    if attribution.order.len() != n {
        return Err(Error::InvalidArgument(format!(
            "correction needs a full ordering of {n} regions, got {}",
            attribution.order.len()
        )));
    }
    let targets = case.targets()?;
    let explainer = Explainer::new(oracle, scene, &targets)?;
    let mut removed = KeepSet::empty(n);
    let mut removed_regions = Vec::new();
    let mut trace = Vec::with_capacity(n + 1);
    let mut tail = attribution.order.iter().rev();
    loop {
        let keep = removed.complement();
        trace.push(explainer.probs(&keep)?[0]);
        let generation = oracle.generate(&GenerateRequest {
            image: scene.masked(&keep)?,
            prompt: &case.prompt,
            max_tokens: ANSWER_MAX_TOKENS,
            keep: Some(keep),
        })?;
        if parse_answer(&generation.text) == Some(case.ground_truth) {
            let removed_area_fraction = match mode {
                AreaMode::Area => scene.partition.area_fraction(&removed),
                AreaMode::RegionCount => removed.len() as f64 / n as f64,
            };
            return Ok(CorrectionOutcome {
                corrected: true,
                removed_regions,
                removed_area_fraction,
                probability_trace: trace,
            });
        }
        let Some(&next) = tail.next() else {
            return Ok(CorrectionOutcome {
                corrected: false,
                removed_regions,
                removed_area_fraction: 1.0,
                probability_trace: trace,
            });
        };
        removed.insert(next);
        removed_regions.push(next);
    }
}

/// Mean removal fraction; uncorrected cases count as 1.0.
pub fn amcr(outcomes: &[CorrectionOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no outcomes".into()));
    }
    let total: f64 = outcomes
        .iter()
        .map(|o| {
            if o.corrected {
                o.removed_area_fraction
            } else {
                1.0
            }
        })
        .sum();
    Ok(total / outcomes.len() as f64)
}

/// Share of cases corrected with a removal fraction of at most `budget`.
pub fn csr_at_budget(outcomes: &[CorrectionOutcome], budget: f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no outcomes".into()));
    }
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} outside (0, 1]"
        )));
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.corrected && o.removed_area_fraction <= budget)
        .count();
    Ok(hits as f64 / outcomes.len() as f64)
}
