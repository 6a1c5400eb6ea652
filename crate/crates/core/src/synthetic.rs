//! In-process oracles with known ground truth.
//!
//! A synthetic oracle is a function of the visible region set only. It is
//! built together with the partition and fill color it will be probed with:
//! when the caller passes the keep-set alongside the masked image it is used
//! directly, otherwise the set is recovered from the pixels (a region counts
//! as removed iff every one of its pixels equals the fill color).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, OracleError, Result};
use crate::image::{Image, Rgb};
use crate::oracle::{
    GenerateRequest, Generation, ProbOracle, ProbQuery, ProbResponse, TokenTargets,
};
use crate::partition::{KeepSet, RegionPartition};

type OracleResult<T> = core::result::Result<T, OracleError>;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// A model whose output depends only on which regions are visible.
pub trait KeepSetModel {
    fn target_probs(&self, keep: &KeepSet, targets: &TokenTargets) -> OracleResult<Vec<f64>>;

    /// Deterministic placeholder caption `t0 t1 ...` with token ids `0, 1, ...`.
    fn generate(
        &self,
        _keep: &KeepSet,
        _prompt: &str,
        max_tokens: usize,
    ) -> OracleResult<Generation> {
        let token_ids: Vec<u32> = (0..max_tokens as u32).collect();
        let words: Vec<String> = token_ids.iter().map(|i| format!("t{i}")).collect();
        Ok(Generation {
            text: words.join(" "),
            token_ids,
        })
    }
}

/// Adapts a [`KeepSetModel`] to the [`ProbOracle`] interface.
#[derive(Debug, Clone)]
pub struct SyntheticOracle<M> {
    model: M,
    partition: RegionPartition,
    fill: Rgb,
    model_id: String,
}

impl<M: KeepSetModel> SyntheticOracle<M> {
    pub fn new(
        model: M,
        partition: RegionPartition,
        fill: Rgb,
        model_id: impl Into<String>,
    ) -> Self {
        Self {
            model,
            partition,
            fill,
            model_id: model_id.into(),
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn partition(&self) -> &RegionPartition {
        &self.partition
    }

    /// Regions with at least one pixel differing from the fill color.
    pub fn recover_keep(&self, image: &Image) -> OracleResult<KeepSet> {
        if image.dimensions() != self.partition.dimensions() {
            return Err(OracleError::Shim(format!(
                "image is {:?}, oracle partition is {:?}",
                image.dimensions(),
                self.partition.dimensions()
            )));
        }
        let mut keep = self.partition.empty_set();
        for (px, &label) in image.pixels().iter().zip(self.partition.labels()) {
            if *px != self.fill {
                keep.insert(label as usize);
            }
        }
        Ok(keep)
    }

    fn resolve_keep(&self, image: &Image, hint: Option<&KeepSet>) -> OracleResult<KeepSet> {
        match hint {
            Some(k) if k.universe() == self.partition.region_count() => Ok(k.clone()),
            Some(k) => Err(OracleError::Shim(format!(
                "keep-set over {} regions, oracle has {}",
                k.universe(),
                self.partition.region_count()
            ))),
            None => self.recover_keep(image),
        }
    }
}

impl<M: KeepSetModel> ProbOracle for SyntheticOracle<M> {
    fn score_batch(&self, queries: &[ProbQuery<'_>]) -> Vec<OracleResult<ProbResponse>> {
        queries
            .iter()
            .map(|q| {
                let keep = self.resolve_keep(&q.image, q.keep.as_ref())?;
                let probs = self.model.target_probs(&keep, q.targets)?;
                let response = ProbResponse {
                    probs,
                    model_id: self.model_id.clone(),
                };
                response.validate(q.targets.len())?;
                Ok(response)
            })
            .collect()
    }

    fn generate(&self, request: &GenerateRequest<'_>) -> OracleResult<Generation> {
        if request.max_tokens == 0 {
            return Err(OracleError::Shim("max_tokens must be at least 1".into()));
        }
        let keep = self.resolve_keep(&request.image, request.keep.as_ref())?;
        self.model
            .generate(&keep, request.prompt, request.max_tokens)
    }
}

/// `p = sigmoid(bias + sum of weights over visible regions)` for every target.
#[derive(Debug, Clone, PartialEq)]
pub struct ModularModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ModularModel {
    pub fn logit(&self, keep: &KeepSet) -> f64 {
        keep.iter().fold(self.bias, |acc, r| acc + self.weights[r])
    }
}

impl KeepSetModel for ModularModel {
    fn target_probs(&self, keep: &KeepSet, targets: &TokenTargets) -> OracleResult<Vec<f64>> {
        Ok(vec![sigmoid(self.logit(keep)); targets.len()])
    }
}

pub fn make_modular_oracle(
    partition: &RegionPartition,
    fill: Rgb,
    weights: Vec<f64>,
    bias: f64,
) -> Result<SyntheticOracle<ModularModel>> {
    if weights.len() != partition.region_count() {
        return Err(Error::LengthMismatch {
            expected: partition.region_count(),
            found: weights.len(),
        });
    }
    Ok(SyntheticOracle::new(
        ModularModel { weights, bias },
        partition.clone(),
        fill,
        "synthetic-modular",
    ))
}

/// `p = visible object pixels / object pixels`; monotone and submodular in the keep-set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageModel {
    /// Object pixels falling in each region.
    pub region_hits: Vec<usize>,
    pub object_size: usize,
}

impl CoverageModel {
    pub fn coverage(&self, keep: &KeepSet) -> f64 {
        let covered: usize = keep.iter().map(|r| self.region_hits[r]).sum();
        covered as f64 / self.object_size as f64
    }
}

impl KeepSetModel for CoverageModel {
    fn target_probs(&self, keep: &KeepSet, targets: &TokenTargets) -> OracleResult<Vec<f64>> {
        Ok(vec![self.coverage(keep); targets.len()])
    }
}

/// Coverage oracle over the pixel set `object_pixels` given as `(x, y)`.
pub fn make_coverage_oracle(
    partition: &RegionPartition,
    fill: Rgb,
    object_pixels: impl IntoIterator<Item = (usize, usize)>,
) -> Result<SyntheticOracle<CoverageModel>> {
    let (w, h) = partition.dimensions();
    let mut inside = vec![false; w * h];
    for (x, y) in object_pixels {
        if x >= w || y >= h {
            return Err(Error::InvalidArgument(format!(
                "object pixel ({x}, {y}) outside {w}x{h}"
            )));
        }
        inside[y * w + x] = true;
    }
    let mut region_hits = vec![0usize; partition.region_count()];
    let mut object_size = 0;
    for (i, &hit) in inside.iter().enumerate() {
        if hit {
            region_hits[partition.labels()[i] as usize] += 1;
            object_size += 1;
        }
    }
    if object_size == 0 {
        return Err(Error::InvalidArgument("empty object pixel set".into()));
    }
    Ok(SyntheticOracle::new(
        CoverageModel {
            region_hits,
            object_size,
        },
        partition.clone(),
        fill,
        "synthetic-coverage",
    ))
}

/// `p = sigmoid(bias + sum_i w_i + sum_{i<j} pair[i][j])` over visible regions.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionModel {
    pub weights: Vec<f64>,
    pub pairs: Vec<Vec<f64>>,
    pub bias: f64,
}

impl InteractionModel {
    pub fn logit(&self, keep: &KeepSet) -> f64 {
        let members: Vec<usize> = keep.iter().collect();
        let mut z = self.bias;
        for (k, &i) in members.iter().enumerate() {
            z += self.weights[i];
            for &j in &members[k + 1..] {
                z += self.pairs[i][j];
            }
        }
        z
    }
}

impl KeepSetModel for InteractionModel {
    fn target_probs(&self, keep: &KeepSet, targets: &TokenTargets) -> OracleResult<Vec<f64>> {
        Ok(vec![sigmoid(self.logit(keep)); targets.len()])
    }
}

pub fn make_interaction_oracle(
    partition: &RegionPartition,
    fill: Rgb,
    weights: Vec<f64>,
    pairs: Vec<Vec<f64>>,
    bias: f64,
) -> Result<SyntheticOracle<InteractionModel>> {
    let n = partition.region_count();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: weights.len(),
        });
    }
    if pairs.len() != n || pairs.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "pair matrix must be {n}x{n}"
        )));
    }
    for (i, row) in pairs.iter().enumerate() {
        if row[i] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "pair matrix diagonal at {i} is non-zero"
            )));
        }
        for (j, &value) in row.iter().enumerate().take(i) {
            if value != pairs[j][i] {
                return Err(Error::InvalidArgument(format!(
                    "pair matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(SyntheticOracle::new(
        InteractionModel {
            weights,
            pairs,
            bias,
        },
        partition.clone(),
        fill,
        "synthetic-interaction",
    ))
}

/// Vocabulary of the yes/no model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YesNoVocab {
    pub yes: u32,
    pub no: u32,
    pub period: u32,
}

impl Default for YesNoVocab {
    fn default() -> Self {
        Self {
            yes: 1,
            no: 2,
            period: 3,
        }
    }
}

/// Binary-answer model: `p(Yes) = sigmoid(bias + sum of visible logits)`,
/// `p(No) = 1 - p(Yes)`, any other token 0. Generation answers by argmax
/// (ties go to "No") followed by a period.
#[derive(Debug, Clone, PartialEq)]
pub struct YesNoModel {
    pub yes_logits: Vec<f64>,
    pub bias: f64,
    pub vocab: YesNoVocab,
}

impl YesNoModel {
    pub fn p_yes(&self, keep: &KeepSet) -> f64 {
        sigmoid(
            keep.iter()
                .fold(self.bias, |acc, r| acc + self.yes_logits[r]),
        )
    }
}

impl KeepSetModel for YesNoModel {
    fn target_probs(&self, keep: &KeepSet, targets: &TokenTargets) -> OracleResult<Vec<f64>> {
        let p_yes = self.p_yes(keep);
        Ok(targets
            .targets
            .iter()
            .map(|t| match t.vocab_id {
                v if v == self.vocab.yes => p_yes,
                v if v == self.vocab.no => 1.0 - p_yes,
                _ => 0.0,
            })
            .collect())
    }

    fn generate(
        &self,
        keep: &KeepSet,
        _prompt: &str,
        max_tokens: usize,
    ) -> OracleResult<Generation> {
        let (word, id) = if self.p_yes(keep) > 0.5 {
            ("Yes", self.vocab.yes)
        } else {
            ("No", self.vocab.no)
        };
        if max_tokens == 1 {
            return Ok(Generation {
                text: word.to_string(),
                token_ids: vec![id],
            });
        }
        Ok(Generation {
            text: format!("{word}."),
            token_ids: vec![id, self.vocab.period],
        })
    }
}

pub fn make_yes_no_oracle(
    partition: &RegionPartition,
    fill: Rgb,
    yes_logits: Vec<f64>,
    bias: f64,
    vocab: YesNoVocab,
) -> Result<SyntheticOracle<YesNoModel>> {
    if yes_logits.len() != partition.region_count() {
        return Err(Error::LengthMismatch {
            expected: partition.region_count(),
            found: yes_logits.len(),
        });
    }
    Ok(SyntheticOracle::new(
        YesNoModel {
            yes_logits,
            bias,
            vocab,
        },
        partition.clone(),
        fill,
        "synthetic-yes-no",
    ))
}

/// Returns `p` for every target regardless of the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel(pub f64);

impl KeepSetModel for ConstantModel {
    fn target_probs(&self, _keep: &KeepSet, targets: &TokenTargets) -> OracleResult<Vec<f64>> {
        Ok(vec![self.0; targets.len()])
    }
}

/// Model defined by a closure over (keep-set, targets).
pub struct FnModel<F>(pub F);

impl<F> KeepSetModel for FnModel<F>
where
    F: Fn(&KeepSet, &TokenTargets) -> Vec<f64>,
{
    fn target_probs(&self, keep: &KeepSet, targets: &TokenTargets) -> OracleResult<Vec<f64>> {
        Ok((self.0)(keep, targets))
    }
}
