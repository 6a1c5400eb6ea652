//! Region partitions, keep-sets, masked-image composition and saliency rasters.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Image, Rgb};

/// Labeling of every pixel of a `width x height` raster into one of
/// `region_count` non-empty, 4-connected regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    areas: Vec<usize>,
}

impl RegionPartition {
    /// Validates a raw label map. Region count is `max(label) + 1`; every
    /// label below it must occur and form a single 4-connected component.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidPartition(format!(
                "empty raster {width}x{height}"
            )));
        }
        if labels.len() != width * height {
            return Err(Error::InvalidPartition(format!(
                "{} labels for a {width}x{height} raster",
                labels.len()
            )));
        }
        let region_count = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut areas = vec![0usize; region_count];
        for &l in &labels {
            areas[l as usize] += 1;
        }
        if let Some(r) = areas.iter().position(|&a| a == 0) {
            return Err(Error::InvalidPartition(format!("region {r} is empty")));
        }
        let partition = Self {
            width,
            height,
            labels,
            areas,
        };
        let components = partition.component_count();
        if components != region_count {
            return Err(Error::InvalidPartition(format!(
                "{components} connected components for {region_count} regions"
            )));
        }
        Ok(partition)
    }

    /// Number of 4-connected same-label components.
    fn component_count(&self) -> usize {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut queue = VecDeque::new();
        let mut count = 0;
        for start in 0..w * h {
            if seen[start] {
                continue;
            }
            count += 1;
            let label = self.labels[start];
            seen[start] = true;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % w, i / w);
                for n in neighbors4(x, y, w, h) {
                    if !seen[n] && self.labels[n] == label {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        count
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.labels.len()
    }

    pub fn region_count(&self) -> usize {
        self.areas.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_areas(&self) -> &[usize] {
        &self.areas
    }

    pub fn label_at(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// Row-major pixel indices of `region`.
    pub fn region_pixels(&self, region: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l as usize == region)
            .map(|(i, _)| i)
            .collect()
    }

    /// Fraction of all pixels covered by the regions in `set`.
    pub fn area_fraction(&self, set: &KeepSet) -> f64 {
        let covered: usize = set.iter().map(|r| self.areas[r]).sum();
        covered as f64 / self.pixel_count() as f64
    }

    pub fn full_set(&self) -> KeepSet {
        KeepSet::full(self.region_count())
    }

    pub fn empty_set(&self) -> KeepSet {
        KeepSet::empty(self.region_count())
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if (width, height) != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: (width, height),
            });
        }
        Ok(())
    }

    pub(crate) fn check_set(&self, set: &KeepSet) -> Result<()> {
        if set.universe() != self.region_count() {
            return Err(Error::LengthMismatch {
                expected: self.region_count(),
                found: set.universe(),
            });
        }
        Ok(())
    }
}

pub(crate) fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let left = (x > 0).then(|| y * w + x - 1);
    let right = (x + 1 < w).then(|| y * w + x + 1);
    let up = (y > 0).then(|| (y - 1) * w + x);
    let down = (y + 1 < h).then(|| (y + 1) * w + x);
    [left, right, up, down].into_iter().flatten()
}

/// Bitset over the region indices `0..universe`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeepSet {
    universe: usize,
    words: Vec<u64>,
}

impl KeepSet {
    pub fn empty(universe: usize) -> Self {
        Self {
            universe,
            words: vec![0; universe.div_ceil(64)],
        }
    }

    pub fn full(universe: usize) -> Self {
        let mut set = Self::empty(universe);
        for r in 0..universe {
            set.insert(r);
        }
        set
    }

    pub fn from_indices(universe: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut set = Self::empty(universe);
        for r in indices {
            if r >= universe {
                return Err(Error::InvalidArgument(format!(
                    "region {r} out of range for {universe} regions"
                )));
            }
            set.insert(r);
        }
        Ok(set)
    }

    /// Set whose membership is given by bit `i` of `mask` (`universe <= 64`).
    pub fn from_mask(universe: usize, mask: u64) -> Self {
        debug_assert!(universe <= 64);
        let mut set = Self::empty(universe);
        if universe > 0 {
            let valid = if universe == 64 {
                u64::MAX
            } else {
                (1u64 << universe) - 1
            };
            set.words[0] = mask & valid;
        }
        set
    }

    /// Number of regions the set ranges over (not its cardinality).
    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn contains(&self, region: usize) -> bool {
        region < self.universe && self.words[region / 64] & (1 << (region % 64)) != 0
    }

    pub fn insert(&mut self, region: usize) {
        assert!(region < self.universe, "region {region} out of range");
        self.words[region / 64] |= 1 << (region % 64);
    }

    pub fn remove(&mut self, region: usize) {
        if region < self.universe {
            self.words[region / 64] &= !(1 << (region % 64));
        }
    }

    pub fn with(&self, region: usize) -> Self {
        let mut set = self.clone();
        set.insert(region);
        set
    }

    pub fn complement(&self) -> Self {
        let mut out = Self::empty(self.universe);
        for r in 0..self.universe {
            if !self.contains(r) {
                out.insert(r);
            }
        }
        out
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.universe == other.universe
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.universe).filter(move |&r| self.contains(r))
    }
}

/// Copies pixels of kept regions verbatim and paints every other pixel with `fill`.
pub fn compose_masked_image(
    image: &Image,
    partition: &RegionPartition,
    keep: &KeepSet,
    fill: Rgb,
) -> Result<Image> {
    partition.check_dims(image.width(), image.height())?;
    partition.check_set(keep)?;
    let mut out = image.clone();
    for (px, &label) in out.pixels_mut().iter_mut().zip(partition.labels()) {
        if !keep.contains(label as usize) {
            *px = fill;
        }
    }
    Ok(out)
}

/// Per-pixel saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                found: scores.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!(
                "saliency score {s} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            scores,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.width + x]
    }
}

/// Paints each pixel with its region's score.
pub fn rasterize_saliency(
    partition: &RegionPartition,
    region_scores: &[f64],
) -> Result<SaliencyMap> {
    if region_scores.len() != partition.region_count() {
        return Err(Error::LengthMismatch {
            expected: partition.region_count(),
            found: region_scores.len(),
        });
    }
    let scores = partition
        .labels()
        .iter()
        .map(|&l| region_scores[l as usize])
        .collect();
    SaliencyMap::new(partition.width(), partition.height(), scores)
}
