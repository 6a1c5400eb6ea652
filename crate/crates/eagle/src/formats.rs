//! On-disk records exchanged by the subcommands.

use std::path::{Path, PathBuf};

use eagle_core::hallucination::vqa_prompt;
use eagle_core::{Answer, GroundTruthRegion, HallucinationCase, RegionPartition};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::OracleDescriptor;

/// Partition export: row-major region labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub width: usize,
    pub height: usize,
    pub region_count: usize,
    pub labels: Vec<u32>,
}

impl PartitionFile {
    pub fn from_partition(p: &RegionPartition) -> Self {
        Self {
            width: p.width(),
            height: p.height(),
            region_count: p.region_count(),
            labels: p.labels().to_vec(),
        }
    }

    pub fn into_partition(self) -> Result<RegionPartition> {
        let p = RegionPartition::from_labels(self.width, self.height, self.labels)?;
        if p.region_count() != self.region_count {
            return Err(Error::Invalid(format!(
                "partition file declares {} regions, labels contain {}",
                self.region_count,
                p.region_count()
            )));
        }
        Ok(p)
    }
}

/// Per-region saliency export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoresFile {
    pub region_count: usize,
    pub order: Vec<usize>,
    pub raw_scores: Vec<f64>,
    pub norm_scores: Vec<f64>,
    /// Normalized score indexed by region; unranked regions get 0.
    pub region_scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BboxRecord {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Binary mask as alternating run lengths in row-major order, starting with
/// a run of `start` values (default `false`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub start: bool,
    pub counts: Vec<usize>,
}

impl RleMask {
    pub fn decode(&self) -> Result<Vec<bool>> {
        let total: usize = self.counts.iter().sum();
        if total != self.width * self.height {
            return Err(Error::Invalid(format!(
                "mask runs cover {total} pixels, image has {}",
                self.width * self.height
            )));
        }
        let mut pixels = Vec::with_capacity(total);
        let mut value = self.start;
        for &run in &self.counts {
            pixels.extend(std::iter::repeat_n(value, run));
            value = !value;
        }
        Ok(pixels)
    }

    pub fn encode(width: usize, height: usize, pixels: &[bool]) -> Self {
        let start = pixels.first().copied().unwrap_or(false);
        let mut counts = Vec::new();
        let mut current = start;
        let mut run = 0;
        for &p in pixels {
            if p == current {
                run += 1;
            } else {
                counts.push(run);
                current = p;
                run = 1;
            }
        }
        counts.push(run);
        Self {
            width,
            height,
            start,
            counts,
        }
    }
}

/// Ground-truth annotation: a box, a mask, or both.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BboxRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
}

impl GroundTruthFile {
    pub fn regions(&self) -> Result<(Option<GroundTruthRegion>, Option<GroundTruthRegion>)> {
        if self.bbox.is_none() && self.mask.is_none() {
            return Err(Error::Invalid("ground truth needs a bbox or a mask".into()));
        }
        let bbox = self.bbox.map(|b| GroundTruthRegion::Bbox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        });
        let mask = match &self.mask {
            Some(m) => Some(GroundTruthRegion::Mask {
                width: m.width,
                height: m.height,
                pixels: m.decode()?,
            }),
            None => None,
        };
        Ok((bbox, mask))
    }
}

/// One line of a hallucination case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// Image path, relative to the case file's directory unless absolute.
    pub image: PathBuf,
    pub question: String,
    /// Full prompt; defaults to the yes/no template filled with `question`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub model_answer: Answer,
    pub ground_truth: Answer,
    pub counterfactual_vocab_id: u32,
    pub answer_position: usize,
    pub generated_ids: Vec<u32>,
    /// Per-case synthetic oracle, overriding the run's oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleDescriptor>,
}

impl CaseRecord {
    pub fn to_case(&self) -> HallucinationCase {
        HallucinationCase {
            question: self.question.clone(),
            prompt: self
                .prompt
                .clone()
                .unwrap_or_else(|| vqa_prompt(&self.question)),
            model_answer: self.model_answer,
            ground_truth: self.ground_truth,
            counterfactual_vocab_id: self.counterfactual_vocab_id,
            answer_position: self.answer_position,
            generated_ids: self.generated_ids.clone(),
        }
    }

    pub fn image_path(&self, base: &Path) -> PathBuf {
        if self.image.is_absolute() {
            self.image.clone()
        } else {
            base.join(&self.image)
        }
    }
}

/// Reads a JSON-lines case file; blank lines are skipped.
pub fn read_cases(path: &Path) -> Result<Vec<CaseRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))
        })
        .collect()
}

/// One entry of a metrics manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Bundle path, relative to the manifest's directory unless absolute.
    pub bundle: PathBuf,
    pub ground_truth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub samples: Vec<ManifestEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip() {
        let pixels = [false, false, true, true, true, false, true, true, false];
        let rle = RleMask::encode(3, 3, &pixels);
        assert_eq!(rle.counts, vec![2, 3, 1, 2, 1]);
        assert_eq!(rle.decode().unwrap(), pixels);
        let starts_true = RleMask {
            width: 2,
            height: 1,
            start: true,
            counts: vec![1, 1],
        };
        assert_eq!(starts_true.decode().unwrap(), vec![true, false]);
        let short = RleMask {
            width: 2,
            height: 2,
            start: false,
            counts: vec![3],
        };
        assert!(short.decode().is_err());
    }

    #[test]
    fn ground_truth_parsing() {
        let gt: GroundTruthFile =
            serde_json::from_str(r#"{"bbox":{"x":1,"y":2,"w":3,"h":4}}"#).unwrap();
        let (bbox, mask) = gt.regions().unwrap();
        assert_eq!(
            bbox,
            Some(GroundTruthRegion::Bbox {
                x: 1,
                y: 2,
                w: 3,
                h: 4
            })
        );
        assert!(mask.is_none());
        assert!(GroundTruthFile::default().regions().is_err());
        assert!(serde_json::from_str::<GroundTruthFile>(r#"{"box":{}}"#).is_err());
    }

    #[test]
    fn partition_file_checks_count() {
        let p = RegionPartition::from_labels(2, 1, vec![0, 1]).unwrap();
        let mut f = PartitionFile::from_partition(&p);
        assert_eq!(f.clone().into_partition().unwrap(), p);
        f.region_count = 3;
        assert!(f.into_partition().is_err());
    }

    #[test]
    fn case_defaults() {
        let line = r#"{"image":"a.png","question":"Is there a dog?","model_answer":"Yes","ground_truth":"No","counterfactual_vocab_id":2,"answer_position":0,"generated_ids":[1,3]}"#;
        let record: CaseRecord = serde_json::from_str(line).unwrap();
        let case = record.to_case();
        assert!(case.prompt.contains("Question: Is there a dog?"));
        assert_eq!(
            record.image_path(Path::new("/data")),
            PathBuf::from("/data/a.png")
        );
    }
}
