//! Serializable descriptions of the in-process synthetic oracles.

use std::sync::Arc;

use eagle_core::synthetic::{
    make_coverage_oracle, make_interaction_oracle, make_modular_oracle, make_yes_no_oracle,
    ConstantModel, SyntheticOracle, YesNoVocab,
};
use eagle_core::{ProbOracle, RegionPartition, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::BboxRecord;

pub type SharedOracle = Arc<dyn ProbOracle + Send + Sync>;

/// Token ids the yes/no oracle answers with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabRecord {
    pub yes: u32,
    pub no: u32,
    pub period: u32,
}

impl Default for VocabRecord {
    fn default() -> Self {
        let v = YesNoVocab::default();
        Self {
            yes: v.yes,
            no: v.no,
            period: v.period,
        }
    }
}

fn default_suppressor_strength() -> f64 {
    4.0
}

fn default_yes_no_bias() -> f64 {
    -2.0
}

/// A synthetic oracle, built against the partition and fill color of the run.
///
/// ```json
/// {"kind": "modular", "weights": [0.2, -0.1, 0.4], "bias": 0.0}
/// {"kind": "coverage", "bbox": {"x": 4, "y": 4, "w": 8, "h": 8}}
/// {"kind": "yes_no", "suppressor_regions": [5]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleDescriptor {
    /// `sigmoid(bias + sum of visible weights)`. Without explicit weights,
    /// one weight per region is drawn uniformly from [-1, 1) with `seed`.
    Modular {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        bias: f64,
    },
    /// Visible fraction of an object given as pixels `[x, y]` or a box.
    Coverage {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object_pixels: Option<Vec<[usize; 2]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bbox: Option<BboxRecord>,
    },
    Interaction {
        weights: Vec<f64>,
        pairs: Vec<Vec<f64>>,
        #[serde(default)]
        bias: f64,
    },
    /// Yes/no answerer. Per-region yes-logits are given directly, or built
    /// by giving every suppressor region (listed, or containing one of the
    /// listed `[x, y]` points) a logit of `strength`.
    YesNo {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        yes_logits: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        suppressor_regions: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        suppressor_points: Option<Vec<[usize; 2]>>,
        #[serde(default = "default_suppressor_strength")]
        strength: f64,
        #[serde(default = "default_yes_no_bias")]
        bias: f64,
        #[serde(default)]
        vocab: VocabRecord,
    },
    /// Every target gets probability `p`.
    Constant { p: f64 },
}

/// Uniform weights in [-1, 1), one per region in index order.
pub fn seeded_weights(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(-1.0..1.0)).collect()
}

impl OracleDescriptor {
    pub fn build(&self, partition: &RegionPartition, fill: Rgb) -> Result<SharedOracle> {
        let n = partition.region_count();
        let (w, h) = partition.dimensions();
        Ok(match self {
            Self::Modular {
                weights,
                seed,
                bias,
            } => {
                let weights = match (weights, seed) {
                    (Some(_), Some(_)) => {
                        return Err(Error::Invalid(
                            "modular oracle takes weights or a seed, not both".into(),
                        ))
                    }
                    (Some(w), None) => w.clone(),
                    (None, s) => seeded_weights(s.unwrap_or(0), n),
                };
                Arc::new(make_modular_oracle(partition, fill, weights, *bias)?)
            }
            Self::Coverage {
                object_pixels,
                bbox,
            } => {
                let pixels: Vec<(usize, usize)> = match (object_pixels, bbox) {
                    (Some(p), None) => p.iter().map(|&[x, y]| (x, y)).collect(),
                    (None, Some(b)) => {
                        if b.x + b.w > w || b.y + b.h > h {
                            return Err(Error::Invalid(format!(
                                "coverage box {b:?} outside {w}x{h}"
                            )));
                        }
                        (b.y..b.y + b.h)
                            .flat_map(|y| (b.x..b.x + b.w).map(move |x| (x, y)))
                            .collect()
                    }
                    _ => {
                        return Err(Error::Invalid(
                            "coverage oracle takes exactly one of object_pixels or bbox".into(),
                        ))
                    }
                };
                Arc::new(make_coverage_oracle(partition, fill, pixels)?)
            }
            Self::Interaction {
                weights,
                pairs,
                bias,
            } => Arc::new(make_interaction_oracle(
                partition,
                fill,
                weights.clone(),
                pairs.clone(),
                *bias,
            )?),
            Self::YesNo {
                yes_logits,
                suppressor_regions,
                suppressor_points,
                strength,
                bias,
                vocab,
            } => {
                let logits = match (yes_logits, suppressor_regions, suppressor_points) {
                    (Some(l), None, None) => l.clone(),
                    (None, regions, points) if regions.is_some() || points.is_some() => {
                        let mut logits = vec![0.0; n];
                        for &r in regions.iter().flatten() {
                            if r >= n {
                                return Err(Error::Invalid(format!(
                                    "suppressor region {r} of {n}"
                                )));
                            }
                            logits[r] = *strength;
                        }
                        for &[x, y] in points.iter().flatten() {
                            if x >= w || y >= h {
                                return Err(Error::Invalid(format!(
                                    "suppressor point ({x}, {y}) outside {w}x{h}"
                                )));
                            }
                            logits[partition.label_at(x, y)] = *strength;
                        }
                        logits
                    }
                    _ => {
                        return Err(Error::Invalid(
                            "yes/no oracle takes yes_logits or suppressor regions/points".into(),
                        ))
                    }
                };
                let vocab = YesNoVocab {
                    yes: vocab.yes,
                    no: vocab.no,
                    period: vocab.period,
                };
                Arc::new(make_yes_no_oracle(partition, fill, logits, *bias, vocab)?)
            }
            Self::Constant { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Invalid(format!(
                        "constant probability {p} outside [0, 1]"
                    )));
                }
                Arc::new(SyntheticOracle::new(
                    ConstantModel(*p),
                    partition.clone(),
                    fill,
                    "synthetic-constant",
                ))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use eagle_core::{compose_masked_image, Image, KeepSet, ProbQuery, TokenTargets};

    fn strips(n: usize) -> RegionPartition {
        RegionPartition::from_labels(n, 1, (0..n as u32).collect()).unwrap()
    }

    fn prob(oracle: &SharedOracle, p: &RegionPartition, keep: &[usize]) -> f64 {
        let img = Image::filled(p.width(), p.height(), [7, 7, 7]).unwrap();
        let keep = KeepSet::from_indices(p.region_count(), keep.iter().copied()).unwrap();
        let masked = compose_masked_image(&img, p, &keep, [0, 0, 0]).unwrap();
        let t = TokenTargets::factual("", vec![1], [0]).unwrap();
        oracle
            .score_targets(&ProbQuery {
                image: masked,
                targets: &t,
                keep: None,
            })
            .unwrap()
            .probs[0]
    }

    #[test]
    fn modular_descriptor_matches_hand_value() {
        let d: OracleDescriptor =
            serde_json::from_str(r#"{"kind":"modular","weights":[0.2,-0.1,0.4]}"#).unwrap();
        let p = strips(3);
        let o = d.build(&p, [0, 0, 0]).unwrap();
        let expected = 1.0 / (1.0 + (-0.6f64).exp());
        assert!((prob(&o, &p, &[0, 2]) - expected).abs() < 1e-12);
    }

    #[test]
    fn seeded_weights_are_reproducible() {
        assert_eq!(seeded_weights(9, 5), seeded_weights(9, 5));
        assert_ne!(seeded_weights(9, 5), seeded_weights(10, 5));
        assert!(seeded_weights(1, 100)
            .iter()
            .all(|w| (-1.0..1.0).contains(w)));
    }

    #[test]
    fn coverage_bbox_and_suppressor_points() {
        let p = strips(4);
        let cov = OracleDescriptor::Coverage {
            object_pixels: None,
            bbox: Some(BboxRecord {
                x: 1,
                y: 0,
                w: 2,
                h: 1,
            }),
        };
        let o = cov.build(&p, [0, 0, 0]).unwrap();
        assert_eq!(prob(&o, &p, &[1]), 0.5);
        let yn: OracleDescriptor =
            serde_json::from_str(r#"{"kind":"yes_no","suppressor_points":[[3,0]]}"#).unwrap();
        let o = yn.build(&p, [0, 0, 0]).unwrap();
        let p_yes_with = prob(&o, &p, &[3]);
        assert!(p_yes_with > 0.5);
        assert!(prob(&o, &p, &[0, 1, 2]) < 0.5);
    }

    #[test]
    fn rejects_bad_descriptors() {
        let p = strips(2);
        let both = OracleDescriptor::Modular {
            weights: Some(vec![0.0; 2]),
            seed: Some(1),
            bias: 0.0,
        };
        assert!(both.build(&p, [0; 3]).is_err());
        assert!(OracleDescriptor::Constant { p: 1.5 }
            .build(&p, [0; 3])
            .is_err());
        assert!(
            serde_json::from_str::<OracleDescriptor>(r#"{"kind":"constant","p":0.5,"q":1}"#)
                .is_err()
        );
        let short = OracleDescriptor::Modular {
            weights: Some(vec![0.0]),
            seed: None,
            bias: 0.0,
        };
        assert!(short.build(&p, [0; 3]).is_err());
    }
}
