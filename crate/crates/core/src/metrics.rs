//! Faithfulness curves and localization.
//!
//! Curves step through an ordering one region at a time, so the x axis is
//! the fraction of regions revealed (insertion) or removed (deletion), and
//! each point is the mean probability over the explained targets.

use alloc::format;
use alloc::vec::Vec;

use crate::attribution::Explainer;
use crate::error::{Error, Result};
use crate::oracle::ProbOracle;
use crate::partition::{RegionPartition, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum CurveKind {
    Insertion,
    Deletion,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FaithfulnessCurve {
    pub kind: CurveKind,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl FaithfulnessCurve {
    /// Curve with uniform spacing `xs[r] = r / (len - 1)`.
    pub fn new(kind: CurveKind, ys: Vec<f64>) -> Result<Self> {
        if ys.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "curve needs at least 2 points, got {}",
                ys.len()
            )));
        }
        if let Some(y) = ys.iter().find(|y| !(0.0..=1.0).contains(*y)) {
            return Err(Error::InvalidArgument(format!(
                "curve value {y} outside [0, 1]"
            )));
        }
        let steps = (ys.len() - 1) as f64;
        let xs = (0..ys.len()).map(|r| r as f64 / steps).collect();
        Ok(Self { kind, xs, ys })
    }

    pub fn auc(&self) -> f64 {
        auc(self)
    }

    pub fn average_highest(&self) -> f64 {
        average_highest(self)
    }
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &FaithfulnessCurve) -> f64 {
    curve
        .xs
        .windows(2)
        .zip(curve.ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Highest point of the curve.
pub fn average_highest(curve: &FaithfulnessCurve) -> f64 {
    curve.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn curve<O: ProbOracle + ?Sized>(
    explainer: &Explainer<'_, O>,
    order: &[usize],
    kind: CurveKind,
) -> Result<FaithfulnessCurve> {
    let n = explainer.scene().region_count();
    if order.len() != n {
        return Err(Error::InvalidArgument(format!(
            "curve needs a full ordering of {n} regions, got {}",
            order.len()
        )));
    }
    let mut keeps = explainer.prefixes(order)?;
    if kind == CurveKind::Deletion {
        keeps.iter_mut().for_each(|k| *k = k.complement());
    }
    let ys = explainer
        .probs_all(&keeps)?
        .iter()
        .map(|p| p.iter().sum::<f64>() / p.len() as f64)
        .collect();
    FaithfulnessCurve::new(kind, ys)
}

/// Mean target probability with the first `r` regions of `order` visible, `r = 0..=|V|`.
pub fn insertion_curve<O: ProbOracle + ?Sized>(
    explainer: &Explainer<'_, O>,
    order: &[usize],
) -> Result<FaithfulnessCurve> {
    curve(explainer, order, CurveKind::Insertion)
}

/// Mean target probability with the first `r` regions of `order` removed, `r = 0..=|V|`.
pub fn deletion_curve<O: ProbOracle + ?Sized>(
    explainer: &Explainer<'_, O>,
    order: &[usize],
) -> Result<FaithfulnessCurve> {
    curve(explainer, order, CurveKind::Deletion)
}

/// Annotated object location.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case")
)]
pub enum GroundTruthRegion {
    Bbox {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    },
    /// Row-major pixel membership.
    Mask {
        width: usize,
        height: usize,
        pixels: Vec<bool>,
    },
}

impl GroundTruthRegion {
    /// Checks the region is non-empty and lies inside a `width` x `height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        match self {
            Self::Bbox { x, y, w, h } => {
                if *w == 0 || *h == 0 {
                    return Err(Error::InvalidArgument("empty bounding box".into()));
                }
                if x + w > width || y + h > height {
                    return Err(Error::InvalidArgument(format!(
                        "bounding box ({x}, {y}, {w}, {h}) outside {width}x{height} image"
                    )));
                }
            }
            Self::Mask {
                width: mw,
                height: mh,
                pixels,
            } => {
                if (*mw, *mh) != (width, height) {
                    return Err(Error::DimensionMismatch {
                        expected: (width, height),
                        found: (*mw, *mh),
                    });
                }
                if pixels.len() != mw * mh {
                    return Err(Error::LengthMismatch {
                        expected: mw * mh,
                        found: pixels.len(),
                    });
                }
                if !pixels.iter().any(|&p| p) {
                    return Err(Error::InvalidArgument("empty mask".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        match self {
            Self::Bbox { x, y, w, h } => (*x..x + w).contains(&px) && (*y..y + h).contains(&py),
            Self::Mask {
                width,
                height,
                pixels,
            } => px < *width && py < *height && pixels[py * width + px],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointingOutcome {
    pub hit: bool,
    /// Representative pixel `(x, y)` of the top region.
    pub point: (usize, usize),
    pub region: usize,
}

/// Index of the highest score; ties go to the lowest index.
pub fn top_region(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Pixel of `region` closest to its centroid; ties go to the first pixel in row-major order.
pub fn representative_point(partition: &RegionPartition, region: usize) -> (usize, usize) {
    let width = partition.width();
    let pixels = partition.region_pixels(region);
    let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(sx, sy), &i| {
        (sx + (i % width) as f64, sy + (i / width) as f64)
    });
    let (cx, cy) = (sx / pixels.len() as f64, sy / pixels.len() as f64);
    let mut best = (f64::INFINITY, 0);
    for &i in &pixels {
        let (dx, dy) = ((i % width) as f64 - cx, (i / width) as f64 - cy);
        let d = dx * dx + dy * dy;
        if d < best.0 {
            best = (d, i);
        }
    }
    (best.1 % width, best.1 / width)
}

/// Whether the most salient region's representative point falls inside `truth`.
pub fn pointing_game(
    saliency: &SaliencyMap,
    partition: &RegionPartition,
    truth: &GroundTruthRegion,
) -> Result<PointingOutcome> {
    partition.check_dims(saliency.width(), saliency.height())?;
    truth.validate(partition.width(), partition.height())?;
    let mut region_scores = alloc::vec![f64::NEG_INFINITY; partition.region_count()];
    for (&label, &s) in partition.labels().iter().zip(saliency.scores()) {
        let slot = &mut region_scores[label as usize];
        *slot = slot.max(s);
    }
    let region = top_region(&region_scores).expect("partitions have at least one region");
    let point = representative_point(partition, region);
    Ok(PointingOutcome {
        hit: truth.contains(point.0, point.1),
        point,
        region,
    })
}
