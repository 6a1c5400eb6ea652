//! Zero-parameter SLIC (SLICO) superpixels.
//!
//! Clusters live in a 5-D space of CIELAB color and pixel position. Each
//! cluster normalizes its color distance by the largest color distance it
//! has seen so far, so compactness adapts per cluster and no user-tuned
//! weight is needed. Seeds start on a regular grid, move to the
//! lowest-gradient pixel of their 3x3 neighborhood, and after the k-means
//! iterations every stray component is merged into its largest neighbor so
//! that each output region is 4-connected.

use alloc::collections::{BTreeSet, BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};
use crate::image::{Image, Rgb};
use crate::partition::{neighbors4, RegionPartition};

/// Parameters of a SLICO run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlicoParams {
    pub region_count: usize,
    pub iterations: usize,
}

impl Default for SlicoParams {
    fn default() -> Self {
        Self {
            region_count: 64,
            iterations: 10,
        }
    }
}

/// Initial color normalizer (squared), as in the reference SLICO.
const INITIAL_MAX_LAB: f64 = 10.0 * 10.0;

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Partitions `image` into roughly `region_count` connected superpixels.
pub fn slico_partition(
    image: &Image,
    region_count: usize,
    iterations: usize,
) -> Result<RegionPartition> {
    let (w, h) = image.dimensions();
    if region_count == 0 || region_count > w * h {
        return Err(Error::RegionCountOutOfRange {
            requested: region_count,
            max: w * h,
        });
    }
    if iterations == 0 {
        return Err(Error::InvalidIterations);
    }

    let lab = to_lab(image);
    let (nx, ny) = grid_shape(w, h, region_count);
    let step_x = w as f64 / nx as f64;
    let step_y = h as f64 / ny as f64;
    let inv_spatial = 1.0 / (step_x * step_y);
    let step = if step_x > step_y { step_x } else { step_y };
    let reach = if step < 10.0 { 1.5 * step } else { step };
    let reach = libm::ceil(reach) as isize;

    let mut centers = seed_centers(&lab, w, h, nx, ny);
    let k = centers.len();
    let mut max_lab = vec![INITIAL_MAX_LAB; k];
    let mut labels = vec![usize::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    let mut dist_lab = vec![0.0f64; w * h];

    for iter in 0..iterations {
        dist.fill(f64::INFINITY);
        labels.fill(usize::MAX);
        for (c, center) in centers.iter().enumerate() {
            let cx = libm::round(center.x) as isize;
            let cy = libm::round(center.y) as isize;
            let x0 = (cx - reach).max(0) as usize;
            let x1 = ((cx + reach) as usize).min(w - 1);
            let y0 = (cy - reach).max(0) as usize;
            let y1 = ((cy + reach) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let dl = sq_dist(&lab[i], &center.lab);
                    let dx = x as f64 - center.x;
                    let dy = y as f64 - center.y;
                    let d = dl / max_lab[c] + (dx * dx + dy * dy) * inv_spatial;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = c;
                        dist_lab[i] = dl;
                    }
                }
            }
        }
        // Pixels outside every search window go to the spatially nearest center.
        for i in 0..w * h {
            if labels[i] == usize::MAX {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let mut best = (f64::INFINITY, 0);
                for (c, center) in centers.iter().enumerate() {
                    let d = (x - center.x) * (x - center.x) + (y - center.y) * (y - center.y);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                labels[i] = best.1;
                dist_lab[i] = sq_dist(&lab[i], &centers[best.1].lab);
            }
        }

        if iter == 0 {
            max_lab.fill(1.0);
        }
        for i in 0..w * h {
            let c = labels[i];
            if max_lab[c] < dist_lab[i] {
                max_lab[c] = dist_lab[i];
            }
        }

        let mut sums = vec![[0.0f64; 6]; k];
        for i in 0..w * h {
            let s = &mut sums[labels[i]];
            s[0] += lab[i][0];
            s[1] += lab[i][1];
            s[2] += lab[i][2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            s[5] += 1.0;
        }
        for (center, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                center.lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                center.x = s[3] / s[5];
                center.y = s[4] / s[5];
            }
        }
    }

    let final_labels = enforce_connectivity(w, h, &labels, k);
    RegionPartition::from_labels(w, h, final_labels)
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// Grid of `nx * ny` seeds closest to `n`, preferring the aspect ratio of
/// the image and, on ties, more columns.
fn grid_shape(w: usize, h: usize, n: usize) -> (usize, usize) {
    let ideal_rows = libm::sqrt(n as f64 * h as f64 / w as f64);
    let image_aspect = libm::log(w as f64 / h as f64);
    let lo = (libm::floor(ideal_rows) as usize).max(1);
    let hi = (libm::ceil(ideal_rows) as usize).max(1);
    let mut best = (usize::MAX, f64::INFINITY, (1, 1));
    for ny in [lo, hi, lo.saturating_sub(1).max(1), hi + 1] {
        let ny = ny.min(h);
        let nx = (libm::round(n as f64 / ny as f64) as usize).clamp(1, w);
        let count_err = (nx * ny).abs_diff(n);
        let aspect_err = libm::fabs(libm::log(nx as f64 / ny as f64) - image_aspect);
        let (best_count, best_aspect, (best_nx, _)) = best;
        let same_aspect = libm::fabs(aspect_err - best_aspect) <= 1e-12;
        let better = count_err < best_count
            || (count_err == best_count
                && (aspect_err < best_aspect - 1e-12 || (same_aspect && nx > best_nx)));
        if better {
            best = (count_err, aspect_err, (nx, ny));
        }
    }
    best.2
}

fn seed_centers(lab: &[[f64; 3]], w: usize, h: usize, nx: usize, ny: usize) -> Vec<Center> {
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;
    let perturb = cell_w >= 3.0 && cell_h >= 3.0;
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (i as f64 + 0.5) * cell_w - 0.5;
            let cy = (j as f64 + 0.5) * cell_h - 0.5;
            let px = (libm::round(cx) as usize).min(w - 1);
            let py = (libm::round(cy) as usize).min(h - 1);
            let moved = if perturb {
                lowest_gradient(lab, w, h, px, py)
            } else {
                None
            };
            centers.push(match moved {
                Some((x, y)) => Center {
                    lab: lab[y * w + x],
                    x: x as f64,
                    y: y as f64,
                },
                None => Center {
                    lab: lab[py * w + px],
                    x: cx,
                    y: cy,
                },
            });
        }
    }
    centers
}

/// Neighbor in the 3x3 window with a strictly lower gradient than `(x, y)`, if any.
fn lowest_gradient(
    lab: &[[f64; 3]],
    w: usize,
    h: usize,
    x: usize,
    y: usize,
) -> Option<(usize, usize)> {
    let grad = |x: usize, y: usize| {
        let at = |x: usize, y: usize| &lab[y * w + x];
        let horiz = sq_dist(at((x + 1).min(w - 1), y), at(x.saturating_sub(1), y));
        let vert = sq_dist(at(x, (y + 1).min(h - 1)), at(x, y.saturating_sub(1)));
        horiz + vert
    };
    let mut best = (grad(x, y), x, y);
    let start = (x, y);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let g = grad(nx as usize, ny as usize);
            if g < best.0 {
                best = (g, nx as usize, ny as usize);
            }
        }
    }
    ((best.1, best.2) != start).then_some((best.1, best.2))
}

/// Relabels `raw` so every region is a single 4-connected component.
///
/// Components are merged smallest first into their largest adjacent group
/// while there are more groups than `clusters`. Groups smaller than a
/// quarter of the nominal superpixel area keep merging after that, but never
/// below nine tenths of `clusters` groups. Output labels are dense and
/// ordered by first pixel in row-major order.
fn enforce_connectivity(w: usize, h: usize, raw: &[usize], clusters: usize) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![u32::MAX; n];
    let mut area: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = area.len() as u32;
        let label = raw[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for nb in neighbors4(i % w, i / w, w, h) {
                if comp[nb] == u32::MAX && raw[nb] == label {
                    comp[nb] = id;
                    queue.push_back(nb);
                }
            }
        }
        area.push(size);
    }
    let comps = area.len();

    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); comps];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x] as usize;
            let right = (x + 1 < w).then(|| comp[y * w + x + 1] as usize);
            let down = (y + 1 < h).then(|| comp[(y + 1) * w + x] as usize);
            for b in [right, down].into_iter().flatten() {
                if a != b {
                    adjacency[a].insert(b);
                    adjacency[b].insert(a);
                }
            }
        }
    }

    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }

    let min_size = (n / clusters.max(1) / 4).max(1);
    let floor_groups = (9 * clusters).div_ceil(10).max(1);
    let mut parent: Vec<usize> = (0..comps).collect();
    let mut groups = comps;
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..comps).map(|c| Reverse((area[c], c))).collect();
    while let Some(Reverse((size, c))) = heap.pop() {
        if parent[c] != c || area[c] != size {
            continue;
        }
        if groups <= clusters && (size >= min_size || groups <= floor_groups) {
            break;
        }
        let members: Vec<usize> = core::mem::take(&mut adjacency[c]).into_iter().collect();
        let mut target: Option<usize> = None;
        let mut neighbors = BTreeSet::new();
        for nb in members {
            let r = find(&mut parent, nb);
            if r == c {
                continue;
            }
            neighbors.insert(r);
            target = match target {
                Some(t) if area[t] > area[r] || (area[t] == area[r] && t < r) => Some(t),
                _ => Some(r),
            };
        }
        let Some(t) = target else { break };
        parent[c] = t;
        area[t] += area[c];
        neighbors.remove(&t);
        adjacency[t].extend(neighbors);
        groups -= 1;
        heap.push(Reverse((area[t], t)));
    }

    let mut dense = vec![u32::MAX; comps];
    let mut next = 0u32;
    let mut out = Vec::with_capacity(n);
    for &cid in comp.iter() {
        let root = find(&mut parent, cid as usize);
        if dense[root] == u32::MAX {
            dense[root] = next;
            next += 1;
        }
        out.push(dense[root]);
    }
    out
}

fn srgb_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        libm::pow((v + 0.055) / 1.055, 2.4)
    }
}

/// sRGB (D65) to CIELAB.
pub fn rgb_to_lab(rgb: Rgb) -> [f64; 3] {
    lab_from_linear([
        srgb_to_linear(rgb[0]),
        srgb_to_linear(rgb[1]),
        srgb_to_linear(rgb[2]),
    ])
}

fn lab_from_linear([r, g, b]: [f64; 3]) -> [f64; 3] {
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_456;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b) / 1.088_754;
    let f = |t: f64| {
        if t > 0.008_856 {
            libm::cbrt(t)
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn to_lab(image: &Image) -> Vec<[f64; 3]> {
    let lut: Vec<f64> = (0..=255u8).map(srgb_to_linear).collect();
    image
        .pixels()
        .iter()
        .map(|p| lab_from_linear([lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]]))
        .collect()
}
