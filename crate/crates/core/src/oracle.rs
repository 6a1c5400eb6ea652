//! The probability-oracle abstraction every computation in the crate runs against.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, OracleError, Result};
use crate::image::Image;
use crate::partition::KeepSet;

/// One token to explain: its position in the generated sequence and the
/// vocabulary id whose probability is read there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Target {
    pub position: usize,
    pub vocab_id: u32,
}

/// What is being explained: prompt, full generated sequence, and the
/// (position, vocabulary id) pairs whose probabilities are scored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenTargets {
    pub prompt: String,
    pub generated_ids: Vec<u32>,
    pub targets: Vec<Target>,
}

impl TokenTargets {
    /// Positions must be strictly increasing and inside `generated_ids`.
    /// Vocabulary ids may differ from the generated token (counterfactual targets).
    pub fn new(
        prompt: impl Into<String>,
        generated_ids: Vec<u32>,
        targets: Vec<Target>,
    ) -> Result<Self> {
        let t = Self {
            prompt: prompt.into(),
            generated_ids,
            targets,
        };
        t.validate()?;
        Ok(t)
    }

    /// Targets whose vocabulary ids are the generated tokens at `positions`.
    pub fn factual(
        prompt: impl Into<String>,
        generated_ids: Vec<u32>,
        positions: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut targets = Vec::new();
        for position in positions {
            let vocab_id = *generated_ids.get(position).ok_or_else(|| {
                Error::InvalidTargets(format!(
                    "position {position} beyond {} generated tokens",
                    generated_ids.len()
                ))
            })?;
            targets.push(Target { position, vocab_id });
        }
        Self::new(prompt, generated_ids, targets)
    }

    /// Every generated token as a factual target.
    pub fn all_tokens(prompt: impl Into<String>, generated_ids: Vec<u32>) -> Result<Self> {
        let n = generated_ids.len();
        Self::factual(prompt, generated_ids, 0..n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::InvalidTargets("no targets".into()));
        }
        for pair in self.targets.windows(2) {
            if pair[1].position <= pair[0].position {
                return Err(Error::InvalidTargets(format!(
                    "positions not strictly increasing at {}",
                    pair[1].position
                )));
            }
        }
        let last = self.targets[self.targets.len() - 1].position;
        if last >= self.generated_ids.len() {
            return Err(Error::InvalidTargets(format!(
                "position {last} beyond {} generated tokens",
                self.generated_ids.len()
            )));
        }
        Ok(())
    }

    /// Whether every target asks for the token that was actually generated.
    pub fn is_factual(&self) -> bool {
        self.targets
            .iter()
            .all(|t| self.generated_ids[t.position] == t.vocab_id)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Same prompt and sequence restricted to the targets selected by `keep`.
    pub fn subset(&self, mut keep: impl FnMut(usize, &Target) -> bool) -> Self {
        let targets = self
            .targets
            .iter()
            .enumerate()
            .filter(|(i, t)| keep(*i, t))
            .map(|(_, t)| *t)
            .collect();
        Self {
            prompt: self.prompt.clone(),
            generated_ids: self.generated_ids.clone(),
            targets,
        }
    }
}

/// A scoring request: an already-masked image plus the targets.
///
/// `keep` optionally tells in-process synthetic oracles which regions are
/// visible; transports ignore it and send only the pixels.
#[derive(Debug, Clone)]
pub struct ProbQuery<'a> {
    pub image: Image,
    pub targets: &'a TokenTargets,
    pub keep: Option<KeepSet>,
}

/// Per-target probabilities, aligned with the query's targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbResponse {
    pub probs: Vec<f64>,
    pub model_id: String,
}

impl ProbResponse {
    /// Checks length and range; NaN is rejected.
    pub fn validate(&self, expected: usize) -> core::result::Result<(), OracleError> {
        if self.probs.len() != expected {
            return Err(OracleError::Malformed(format!(
                "{} probabilities for {expected} targets",
                self.probs.len()
            )));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(OracleError::Malformed(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Greedy-decoding request.
#[derive(Debug, Clone)]
pub struct GenerateRequest<'a> {
    pub image: Image,
    pub prompt: &'a str,
    pub max_tokens: usize,
    pub keep: Option<KeepSet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Generation {
    pub text: String,
    pub token_ids: Vec<u32>,
}

/// Model-agnostic access to `p(y_t = v | image, prompt, y_<t)`.
///
/// Implementations must be deterministic: the same query always yields the
/// same response.
pub trait ProbOracle {
    /// Scores every query; errors are reported per position.
    fn score_batch(
        &self,
        queries: &[ProbQuery<'_>],
    ) -> Vec<core::result::Result<ProbResponse, OracleError>>;

    fn score_targets(
        &self,
        query: &ProbQuery<'_>,
    ) -> core::result::Result<ProbResponse, OracleError> {
        self.score_batch(core::slice::from_ref(query))
            .pop()
            .unwrap_or_else(|| Err(OracleError::Malformed("empty batch response".into())))
    }

    /// Greedy (argmax) decoding.
    fn generate(
        &self,
        request: &GenerateRequest<'_>,
    ) -> core::result::Result<Generation, OracleError>;
}

impl<O: ProbOracle + ?Sized> ProbOracle for &O {
    fn score_batch(
        &self,
        queries: &[ProbQuery<'_>],
    ) -> Vec<core::result::Result<ProbResponse, OracleError>> {
        (**self).score_batch(queries)
    }

    fn score_targets(
        &self,
        query: &ProbQuery<'_>,
    ) -> core::result::Result<ProbResponse, OracleError> {
        (**self).score_targets(query)
    }

    fn generate(
        &self,
        request: &GenerateRequest<'_>,
    ) -> core::result::Result<Generation, OracleError> {
        (**self).generate(request)
    }
}

impl<O: ProbOracle + ?Sized> ProbOracle for alloc::boxed::Box<O> {
    fn score_batch(
        &self,
        queries: &[ProbQuery<'_>],
    ) -> Vec<core::result::Result<ProbResponse, OracleError>> {
        (**self).score_batch(queries)
    }

    fn score_targets(
        &self,
        query: &ProbQuery<'_>,
    ) -> core::result::Result<ProbResponse, OracleError> {
        (**self).score_targets(query)
    }

    fn generate(
        &self,
        request: &GenerateRequest<'_>,
    ) -> core::result::Result<Generation, OracleError> {
        (**self).generate(request)
    }
}

impl<O: ProbOracle + ?Sized> ProbOracle for alloc::sync::Arc<O> {
    fn score_batch(
        &self,
        queries: &[ProbQuery<'_>],
    ) -> Vec<core::result::Result<ProbResponse, OracleError>> {
        (**self).score_batch(queries)
    }

    fn score_targets(
        &self,
        query: &ProbQuery<'_>,
    ) -> core::result::Result<ProbResponse, OracleError> {
        (**self).score_targets(query)
    }

    fn generate(
        &self,
        request: &GenerateRequest<'_>,
    ) -> core::result::Result<Generation, OracleError> {
        (**self).generate(request)
    }
}
