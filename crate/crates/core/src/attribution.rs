//! Region attribution by greedy ordered-subset search.
//!
//! The objective of a visible set `S` adds how much `S` alone supports the
//! targets (insight: summed target probability on the image reduced to `S`)
//! and how much the targets depend on `S` (necessity: summed probability
//! lost when `S` is removed). Regions are appended one at a time, each round
//! picking the candidate with the largest objective. Saliency scores start
//! at zero for the first pick and decrease by the absolute objective change
//! of every later pick.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, OracleError, Result};
use crate::image::{Image, Rgb};
use crate::oracle::{ProbOracle, ProbQuery, TokenTargets};
use crate::partition::{compose_masked_image, KeepSet, RegionPartition};

/// Image, its partition, and the color painted over removed regions.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub image: &'a Image,
    pub partition: &'a RegionPartition,
    pub fill: Rgb,
}

impl<'a> Scene<'a> {
    pub fn new(image: &'a Image, partition: &'a RegionPartition, fill: Rgb) -> Result<Self> {
        partition.check_dims(image.width(), image.height())?;
        Ok(Self {
            image,
            partition,
            fill,
        })
    }

    pub fn region_count(&self) -> usize {
        self.partition.region_count()
    }

    /// The image with every region outside `keep` painted with the fill color.
    pub fn masked(&self, keep: &KeepSet) -> Result<Image> {
        compose_masked_image(self.image, self.partition, keep, self.fill)
    }
}

/// Which objective terms drive the search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum ObjectiveMode {
    #[default]
    Full,
    InsightOnly,
    NecessityOnly,
}

impl ObjectiveMode {
    fn uses_insight(self) -> bool {
        !matches!(self, Self::NecessityOnly)
    }

    fn uses_necessity(self) -> bool {
        !matches!(self, Self::InsightOnly)
    }
}

/// Objective of one region set. Disabled terms are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveValue {
    pub insight: f64,
    pub necessity: f64,
    pub total: f64,
}

impl ObjectiveValue {
    fn from_probs(kept: Option<&[f64]>, removed: Option<&[f64]>) -> Self {
        let insight = kept.map_or(0.0, |p| p.iter().sum());
        let necessity = removed.map_or(0.0, |p| p.iter().map(|p| 1.0 - p).sum());
        Self {
            insight,
            necessity,
            total: insight + necessity,
        }
    }
}

/// Result of the greedy search.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrderedAttribution {
    /// Region indices in selection order.
    pub order: Vec<usize>,
    /// Objective of each prefix `order[..=r]`.
    pub step_values: Vec<f64>,
    /// `|step_values[i] - step_values[i - 1]|` for `i >= 1`.
    pub gains: Vec<f64>,
    pub raw_scores: Vec<f64>,
    pub norm_scores: Vec<f64>,
    /// Per-prefix, per-target probabilities with only the prefix visible.
    /// Empty when the objective ran without its insight term.
    pub prefix_probs: Vec<Vec<f64>>,
    /// Number of `objective(order ∪ {candidate})` evaluations performed.
    pub candidate_evaluations: usize,
}

impl OrderedAttribution {
    /// Normalized score per region index; regions outside the order get 0.
    pub fn region_scores(&self, region_count: usize) -> Vec<f64> {
        let mut scores = vec![0.0; region_count];
        for (&r, &s) in self.order.iter().zip(&self.norm_scores) {
            scores[r] = s;
        }
        scores
    }
}

/// Turns prefix objective values into raw and min-max normalized saliency.
///
/// `raw[0] = 0`, `raw[i] = raw[i-1] - |v[i] - v[i-1]|`. If every raw score is
/// equal the normalized scores are all one.
pub fn attribution_scores(step_values: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if step_values.is_empty() {
        return Err(Error::InvalidArgument("no step values".into()));
    }
    if step_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite step value".into()));
    }
    let mut raw = Vec::with_capacity(step_values.len());
    raw.push(0.0);
    for pair in step_values.windows(2) {
        let prev = raw[raw.len() - 1];
        raw.push(prev - libm::fabs(pair[1] - pair[0]));
    }
    // raw is non-increasing: max is raw[0] = 0, min is the last entry.
    let max = raw[0];
    let min = raw[raw.len() - 1];
    let norm = if max == min {
        vec![1.0; raw.len()]
    } else {
        raw.iter().map(|r| (r - min) / (max - min)).collect()
    };
    Ok((raw, norm))
}

/// Anchor of the influence score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum InfluenceVariant {
    /// `sum_r (p_r - min_j p_j)`
    #[default]
    MinAnchored,
    /// `sum_r (max_j p_j - p_r)`
    MaxAnchored,
}

impl InfluenceVariant {
    pub fn other(self) -> Self {
        match self {
            Self::MinAnchored => Self::MaxAnchored,
            Self::MaxAnchored => Self::MinAnchored,
        }
    }
}

/// How strongly each target's probability moves as the ordered regions are revealed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InfluenceReport {
    pub variant: InfluenceVariant,
    pub raw: Vec<f64>,
    /// `raw / max(raw)`; stays all-zero when every raw value is zero.
    pub norm: Vec<f64>,
}

/// Influence of one token from its probabilities over the prefixes.
pub fn influence_of_series(series: &[f64], variant: InfluenceVariant) -> f64 {
    let Some(&first) = series.first() else {
        return 0.0;
    };
    match variant {
        InfluenceVariant::MinAnchored => {
            let min = series.iter().copied().fold(first, f64::min);
            series.iter().map(|p| p - min).sum()
        }
        InfluenceVariant::MaxAnchored => {
            let max = series.iter().copied().fold(first, f64::max);
            series.iter().map(|p| max - p).sum()
        }
    }
}

/// Influence for every target from `prefix_probs[r][target]`.
pub fn influence_from_prefix_probs(
    prefix_probs: &[Vec<f64>],
    variant: InfluenceVariant,
) -> Result<InfluenceReport> {
    let Some(first) = prefix_probs.first() else {
        return Err(Error::InvalidArgument("no prefix probabilities".into()));
    };
    let targets = first.len();
    if let Some(row) = prefix_probs.iter().find(|row| row.len() != targets) {
        return Err(Error::LengthMismatch {
            expected: targets,
            found: row.len(),
        });
    }
    let raw: Vec<f64> = (0..targets)
        .map(|t| {
            let series: Vec<f64> = prefix_probs.iter().map(|row| row[t]).collect();
            influence_of_series(&series, variant)
        })
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    let norm = if max > 0.0 {
        raw.iter().map(|r| r / max).collect()
    } else {
        vec![0.0; targets]
    };
    Ok(InfluenceReport { variant, raw, norm })
}

/// Outcome of the exhaustive submodularity-ratio estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubmodularityEstimate {
    /// `min(1, raw_min_ratio)`
    pub gamma: f64,
    /// Smallest ratio of summed singleton gains to joint gain; infinite when
    /// no pair has a positive joint gain.
    pub raw_min_ratio: f64,
    pub admissible_pairs: usize,
    /// Pairs skipped because the joint gain was not positive.
    pub skipped_pairs: usize,
}

/// Default cap on regions for exhaustive enumeration.
pub const DEFAULT_MAX_ENUMERATION_REGIONS: usize = 8;

/// Scores region sets for a fixed scene and target set.
pub struct Explainer<'a, O: ?Sized> {
    oracle: &'a O,
    scene: Scene<'a>,
    targets: &'a TokenTargets,
    mode: ObjectiveMode,
}

impl<'a, O: ProbOracle + ?Sized> Explainer<'a, O> {
    pub fn new(oracle: &'a O, scene: Scene<'a>, targets: &'a TokenTargets) -> Result<Self> {
        targets.validate()?;
        Ok(Self {
            oracle,
            scene,
            targets,
            mode: ObjectiveMode::Full,
        })
    }

    pub fn with_mode(mut self, mode: ObjectiveMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn scene(&self) -> &Scene<'a> {
        &self.scene
    }

    pub fn targets(&self) -> &'a TokenTargets {
        self.targets
    }

    pub fn oracle(&self) -> &'a O {
        self.oracle
    }

    pub fn mode(&self) -> ObjectiveMode {
        self.mode
    }

    fn query(&self, keep: &KeepSet) -> Result<ProbQuery<'a>> {
        Ok(ProbQuery {
            image: self.scene.masked(keep)?,
            targets: self.targets,
            keep: Some(keep.clone()),
        })
    }

    /// One batch of queries; each entry holds that keep-set's per-target probabilities.
    pub(crate) fn probs_each(
        &self,
        keeps: &[KeepSet],
    ) -> Result<Vec<core::result::Result<Vec<f64>, OracleError>>> {
        let queries = keeps
            .iter()
            .map(|k| self.query(k))
            .collect::<Result<Vec<_>>>()?;
        let responses = self.oracle.score_batch(&queries);
        if responses.len() != queries.len() {
            return Err(OracleError::Malformed(format!(
                "{} responses for {} queries",
                responses.len(),
                queries.len()
            ))
            .into());
        }
        Ok(responses
            .into_iter()
            .map(|r| {
                let r = r?;
                r.validate(self.targets.len())?;
                Ok(r.probs)
            })
            .collect())
    }

    /// Like [`Self::probs_each`] but fails on the first error.
    pub(crate) fn probs_all(&self, keeps: &[KeepSet]) -> Result<Vec<Vec<f64>>> {
        self.probs_each(keeps)?
            .into_iter()
            .map(|r| r.map_err(Error::from))
            .collect()
    }

    /// Per-target probabilities with only `keep` visible.
    pub fn probs(&self, keep: &KeepSet) -> Result<Vec<f64>> {
        self.scene.partition.check_set(keep)?;
        Ok(self.probs_all(core::slice::from_ref(keep))?.remove(0))
    }

    /// Summed target probability with only `keep` visible.
    pub fn insight_score(&self, keep: &KeepSet) -> Result<f64> {
        Ok(ObjectiveValue::from_probs(Some(&self.probs(keep)?), None).insight)
    }

    /// Summed probability lost by the targets when `removed` is masked out.
    pub fn necessity_score(&self, removed: &KeepSet) -> Result<f64> {
        self.scene.partition.check_set(removed)?;
        Ok(ObjectiveValue::from_probs(None, Some(&self.probs(&removed.complement())?)).necessity)
    }

    fn objective_keeps(&self, s: &KeepSet) -> Vec<KeepSet> {
        let mut keeps = Vec::with_capacity(2);
        if self.mode.uses_insight() {
            keeps.push(s.clone());
        }
        if self.mode.uses_necessity() {
            keeps.push(s.complement());
        }
        keeps
    }

    fn objective_from(&self, probs: &[Vec<f64>]) -> ObjectiveValue {
        match self.mode {
            ObjectiveMode::Full => ObjectiveValue::from_probs(Some(&probs[0]), Some(&probs[1])),
            ObjectiveMode::InsightOnly => ObjectiveValue::from_probs(Some(&probs[0]), None),
            ObjectiveMode::NecessityOnly => ObjectiveValue::from_probs(None, Some(&probs[0])),
        }
    }

    /// Objective of `s` under the configured mode (two oracle queries for the full objective).
    pub fn objective(&self, s: &KeepSet) -> Result<ObjectiveValue> {
        self.scene.partition.check_set(s)?;
        let probs = self.probs_all(&self.objective_keeps(s))?;
        Ok(self.objective_from(&probs))
    }

    /// Greedy ordering of `budget` regions.
    ///
    /// Every round evaluates the objective of the current prefix plus each
    /// remaining region in one oracle batch and appends the best candidate,
    /// breaking ties toward the lowest region index.
    pub fn greedy(&self, budget: usize) -> Result<OrderedAttribution> {
        let n = self.scene.region_count();
        if budget == 0 || budget > n {
            return Err(Error::InvalidBudget { budget, regions: n });
        }
        let per_candidate = self.objective_keeps(&KeepSet::empty(n)).len();
        let mut chosen = KeepSet::empty(n);
        let mut order = Vec::with_capacity(budget);
        let mut step_values = Vec::with_capacity(budget);
        let mut prefix_probs = Vec::new();
        let mut evaluations = 0;

        for round in 1..=budget {
            let candidates: Vec<usize> = (0..n).filter(|&r| !chosen.contains(r)).collect();
            let keeps: Vec<KeepSet> = candidates
                .iter()
                .flat_map(|&c| self.objective_keeps(&chosen.with(c)))
                .collect();
            let results = self.probs_each(&keeps)?;
            let failed = results.iter().filter(|r| r.is_err()).count();
            if let Some(Err(first)) = results.iter().find(|r| r.is_err()) {
                return Err(Error::OracleRound {
                    round,
                    failed,
                    total: results.len(),
                    first: first.clone(),
                });
            }
            let probs: Vec<Vec<f64>> = results.into_iter().map(|r| r.unwrap_or_default()).collect();
            evaluations += candidates.len();

            let mut best: Option<(usize, f64)> = None;
            for (k, _) in candidates.iter().enumerate() {
                let value = self
                    .objective_from(&probs[k * per_candidate..(k + 1) * per_candidate])
                    .total;
                if best.is_none_or(|(_, b)| value > b) {
                    best = Some((k, value));
                }
            }
            let (k, value) = best.expect("at least one candidate per round");
            chosen.insert(candidates[k]);
            order.push(candidates[k]);
            step_values.push(value);
            if self.mode.uses_insight() {
                prefix_probs.push(probs[k * per_candidate].clone());
            }
        }

        let gains = step_values
            .windows(2)
            .map(|w| libm::fabs(w[1] - w[0]))
            .collect();
        let (raw_scores, norm_scores) = attribution_scores(&step_values)?;
        Ok(OrderedAttribution {
            order,
            step_values,
            gains,
            raw_scores,
            norm_scores,
            prefix_probs,
            candidate_evaluations: evaluations,
        })
    }

    fn check_order(&self, order: &[usize]) -> Result<()> {
        let n = self.scene.region_count();
        let mut seen = KeepSet::empty(n);
        for &r in order {
            if r >= n || seen.contains(r) {
                return Err(Error::InvalidArgument(format!(
                    "order is not a sequence of distinct regions below {n}"
                )));
            }
            seen.insert(r);
        }
        Ok(())
    }

    /// `prefixes(order)[r]` is the set of the first `r` regions, `r = 0..=len`.
    pub(crate) fn prefixes(&self, order: &[usize]) -> Result<Vec<KeepSet>> {
        self.check_order(order)?;
        let mut current = KeepSet::empty(self.scene.region_count());
        let mut sets = Vec::with_capacity(order.len() + 1);
        sets.push(current.clone());
        for &r in order {
            current.insert(r);
            sets.push(current.clone());
        }
        Ok(sets)
    }

    /// Per-target probabilities for each non-empty prefix of `order`.
    pub fn prefix_probs(&self, order: &[usize]) -> Result<Vec<Vec<f64>>> {
        if order.is_empty() {
            return Err(Error::InvalidArgument("empty order".into()));
        }
        let prefixes = self.prefixes(order)?;
        self.probs_all(&prefixes[1..])
    }

    pub fn influence(&self, order: &[usize], variant: InfluenceVariant) -> Result<InfluenceReport> {
        influence_from_prefix_probs(&self.prefix_probs(order)?, variant)
    }

    /// Targets whose probability drops by more than `threshold` when the whole image is masked.
    pub fn sensitive_tokens(&self, threshold: f64) -> Result<TokenTargets> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        let n = self.scene.region_count();
        let probs = self.probs_all(&[KeepSet::full(n), KeepSet::empty(n)])?;
        Ok(self
            .targets
            .subset(|i, _| probs[0][i] - probs[1][i] > threshold))
    }

    /// Exhaustive submodularity ratio over all `L ⊆ V` and non-empty `S ⊆ V \ L`.
    pub fn submodularity_ratio(&self, max_regions: usize) -> Result<SubmodularityEstimate> {
        let n = self.scene.region_count();
        if n > max_regions || n > 20 {
            return Err(Error::TooManyRegions {
                regions: n,
                max: max_regions.min(20),
            });
        }
        let sets = 1usize << n;
        let keeps: Vec<KeepSet> = (0..sets)
            .flat_map(|m| self.objective_keeps(&KeepSet::from_mask(n, m as u64)))
            .collect();
        let probs = self.probs_all(&keeps)?;
        let per = keeps.len() / sets;
        let value: Vec<f64> = (0..sets)
            .map(|m| self.objective_from(&probs[m * per..(m + 1) * per]).total)
            .collect();

        let full = sets - 1;
        let mut raw_min = f64::INFINITY;
        let (mut admissible, mut skipped) = (0, 0);
        for l in 0..sets {
            let rest = full & !l;
            let mut s = rest;
            while s != 0 {
                let joint = value[l | s] - value[l];
                if joint > 0.0 {
                    let singles: f64 = (0..n)
                        .filter(|i| s & (1 << i) != 0)
                        .map(|i| value[l | (1 << i)] - value[l])
                        .sum();
                    raw_min = raw_min.min(singles / joint);
                    admissible += 1;
                } else {
                    skipped += 1;
                }
                s = (s - 1) & rest;
            }
        }
        Ok(SubmodularityEstimate {
            gamma: raw_min.min(1.0),
            raw_min_ratio: raw_min,
            admissible_pairs: admissible,
            skipped_pairs: skipped,
        })
    }
}
