//! SLIC superpixels on a single grayscale channel.
//!
//! Clustering runs in a 3-D `(intensity, row, col)` feature space. Centers
//! are seeded on a regular grid, nudged to the lowest-gradient pixel of their
//! 3x3 neighbourhood, and refined by localised k-means inside a `2S x 2S`
//! window. A final pass absorbs fragments smaller than a quarter of the
//! expected region size into their largest 4-adjacent neighbour, so every
//! output region is 4-connected.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Intensities in `[0, 1]` are stretched to the `[0, 100]` range of a CIELAB
/// lightness channel before clustering, which is the scale the usual
/// compactness values are calibrated against.
pub const INTENSITY_SCALE: f64 = 100.0;

/// Pixels per superpixel used to derive a default `k_target` from image size
/// (100 regions on a 256x256 slice).
pub const PIXELS_PER_REGION: f64 = 655.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub k_target: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            k_target: 100,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// Default region count for an `height x width` image.
pub fn default_k_target(height: usize, width: usize) -> usize {
    ((height * width) as f64 / PIXELS_PER_REGION).round().max(1.0) as usize
}

/// Labelling of every pixel with a region id in `0..num_regions`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelPartition {
    height: usize,
    width: usize,
    region_ids: Vec<u32>,
    num_regions: usize,
}

impl SuperpixelPartition {
    /// Builds a partition, checking that ids are dense, every region is
    /// nonempty and 4-connected.
    pub fn new(height: usize, width: usize, region_ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || region_ids.len() != height * width {
            return Err(Error::shape(height * width, region_ids.len()));
        }
        let num_regions = region_ids.iter().map(|&r| r as usize + 1).max().unwrap_or(0);
        let part = SuperpixelPartition {
            height,
            width,
            region_ids,
            num_regions,
        };
        part.validate()?;
        Ok(part)
    }

    /// One region covering the whole image.
    pub fn single(height: usize, width: usize) -> Self {
        SuperpixelPartition {
            height,
            width,
            region_ids: vec![0; height * width],
            num_regions: 1,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn region_ids(&self) -> &[u32] {
        &self.region_ids
    }

    #[inline]
    pub fn region_of(&self, r: usize, c: usize) -> u32 {
        self.region_ids[r * self.width + c]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_regions];
        for &id in &self.region_ids {
            sizes[id as usize] += 1;
        }
        sizes
    }

    /// Checks the partition contract: dense ids, nonempty and connected regions.
    pub fn validate(&self) -> Result<()> {
        let sizes = self.region_sizes();
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::param("region_ids", format!("region {empty} is empty")));
        }
        let mut seen = vec![false; self.region_ids.len()];
        let mut region_done = vec![false; self.num_regions];
        for start in 0..self.region_ids.len() {
            if seen[start] {
                continue;
            }
            let id = self.region_ids[start] as usize;
            if region_done[id] {
                return Err(Error::param("region_ids", format!("region {id} is not 4-connected")));
            }
            region_done[id] = true;
            flood(self.height, self.width, &self.region_ids, start, &mut seen, |_| {});
        }
        Ok(())
    }

    /// Plain-text grid: one row per line, ids separated by single spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.region_ids.len() * 3);
        for row in self.region_ids.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (height, width, ids) = parse_int_grid(text)?;
        Self::new(height, width, ids)
    }
}

/// Parses whitespace-separated integer rows into `(height, width, values)`.
pub(crate) fn parse_int_grid(text: &str) -> Result<(usize, usize, Vec<u32>)> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let mut count = 0;
            for tok in trimmed.split_whitespace() {
                let v = tok.parse::<u32>().map_err(|e| Error::Parse {
                    offset,
                    reason: format!("`{tok}`: {e}"),
                })?;
                values.push(v);
                count += 1;
            }
            match width {
                None => width = Some(count),
                Some(w) if w != count => {
                    return Err(Error::Parse {
                        offset,
                        reason: format!("row {height} has {count} values, expected {w}"),
                    })
                }
                _ => {}
            }
            height += 1;
        }
        offset += line.len();
    }
    match width {
        Some(w) => Ok((height, w, values)),
        None => Err(Error::Parse {
            offset: 0,
            reason: "empty grid".into(),
        }),
    }
}

/// Breadth-first fill over 4-neighbours sharing `labels[start]`.
fn flood<L: PartialEq + Copy>(
    height: usize,
    width: usize,
    labels: &[L],
    start: usize,
    seen: &mut [bool],
    mut visit: impl FnMut(usize),
) {
    let target = labels[start];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        visit(i);
        let (r, c) = (i / width, i % width);
        let mut push = |j: usize| {
            if !seen[j] && labels[j] == target {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if r > 0 {
            push(i - width);
        }
        if r + 1 < height {
            push(i + width);
        }
        if c > 0 {
            push(i - 1);
        }
        if c + 1 < width {
            push(i + 1);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Center {
    intensity: f64,
    row: f64,
    col: f64,
}

/// Regular-grid seed layout: `rows x cols` cells with `rows * cols <= k`.
fn seed_grid(height: usize, width: usize, k: usize) -> (usize, usize) {
    let rows = ((k as f64 * height as f64 / width as f64).sqrt().round() as usize).clamp(1, k.min(height));
    let cols = (k / rows).clamp(1, width);
    (rows, cols)
}

fn squared_gradient(img: &Grid2D, r: usize, c: usize) -> f64 {
    let (h, w) = img.shape();
    let dx = img.get(r, (c + 1).min(w - 1)) - img.get(r, c.saturating_sub(1));
    let dy = img.get((r + 1).min(h - 1), c) - img.get(r.saturating_sub(1), c);
    dx * dx + dy * dy
}

fn initial_centers(img: &Grid2D, k: usize) -> Vec<Center> {
    let (h, w) = img.shape();
    let (rows, cols) = seed_grid(h, w, k);
    let mut centers = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut row = (i as f64 + 0.5) * h as f64 / rows as f64 - 0.5;
            let mut col = (j as f64 + 0.5) * w as f64 / cols as f64 - 0.5;
            let pr = (row.round() as usize).min(h - 1);
            let pc = (col.round() as usize).min(w - 1);
            let mut best = (squared_gradient(img, pr, pc), pr, pc);
            for r in pr.saturating_sub(1)..=(pr + 1).min(h - 1) {
                for c in pc.saturating_sub(1)..=(pc + 1).min(w - 1) {
                    let g = squared_gradient(img, r, c);
                    if g < best.0 {
                        best = (g, r, c);
                    }
                }
            }
            if (best.1, best.2) != (pr, pc) {
                row = best.1 as f64;
                col = best.2 as f64;
            }
            centers.push(Center {
                intensity: img.get(best.1, best.2) * INTENSITY_SCALE,
                row,
                col,
            });
        }
    }
    centers
}

/// Partitions `img` into at most `params.k_target` connected superpixels.
///
/// `img` must already be normalised to `[0, 1]`. Output is deterministic and
/// region ids are numbered in raster order of each region's first pixel.
pub fn slic_partition(img: &Grid2D, params: &SlicParams) -> Result<SuperpixelPartition> {
    let (h, w) = img.shape();
    let n = h * w;
    let k = params.k_target;
    if k == 0 || k > n {
        return Err(Error::param("k_target", format!("{k} not in 1..={n}")));
    }
    if !(params.compactness > 0.0 && params.compactness.is_finite()) {
        return Err(Error::param("compactness", "must be positive"));
    }
    if params.iterations == 0 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    if !img.is_normalized() {
        return Err(Error::param("image", "intensities must lie in [0, 1]"));
    }

    let step = (n as f64 / k as f64).sqrt();
    let spatial_weight = (params.compactness / step).powi(2);
    let features: Vec<f64> = img.values().iter().map(|v| v * INTENSITY_SCALE).collect();
    let mut centers = initial_centers(img, k);

    let distance = |ctr: &Center, i: usize| {
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        let di = features[i] - ctr.intensity;
        let dr = r - ctr.row;
        let dc = c - ctr.col;
        di * di + spatial_weight * (dr * dr + dc * dc)
    };

    let mut assignment = vec![u32::MAX; n];
    let mut best = vec![f64::INFINITY; n];
    for _ in 0..params.iterations {
        assignment.fill(u32::MAX);
        best.fill(f64::INFINITY);
        for (ci, ctr) in centers.iter().enumerate() {
            let r0 = (ctr.row - step).ceil().max(0.0) as usize;
            let r1 = ((ctr.row + step).floor().max(0.0) as usize).min(h - 1);
            let c0 = (ctr.col - step).ceil().max(0.0) as usize;
            let c1 = ((ctr.col + step).floor().max(0.0) as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let i = r * w + c;
                    let d = distance(ctr, i);
                    if d < best[i] {
                        best[i] = d;
                        assignment[i] = ci as u32;
                    }
                }
            }
        }
        // Pixels outside every window fall back to the globally nearest center.
        for (i, a) in assignment.iter_mut().enumerate() {
            if *a == u32::MAX {
                let mut nearest = (f64::INFINITY, 0);
                for (ci, ctr) in centers.iter().enumerate() {
                    let d = distance(ctr, i);
                    if d < nearest.0 {
                        nearest = (d, ci);
                    }
                }
                *a = nearest.1 as u32;
            }
        }

        let mut sums = vec![[0.0f64; 4]; centers.len()];
        for (i, &a) in assignment.iter().enumerate() {
            let s = &mut sums[a as usize];
            s[0] += features[i];
            s[1] += (i / w) as f64;
            s[2] += (i % w) as f64;
            s[3] += 1.0;
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[3] > 0.0 {
                *ctr = Center {
                    intensity: s[0] / s[3],
                    row: s[1] / s[3],
                    col: s[2] / s[3],
                };
            }
        }
    }

    let min_size = n as f64 / k as f64 / 4.0;
    let region_ids = enforce_connectivity(h, w, &assignment, min_size, k);
    let num_regions = region_ids.iter().map(|&r| r as usize + 1).max().unwrap_or(1);
    Ok(SuperpixelPartition {
        height: h,
        width: w,
        region_ids,
        num_regions,
    })
}

/// Splits clusters into 4-connected components, merges components smaller
/// than `min_size` into their largest neighbour and renumbers in raster order.
///
/// Splitting can leave more than `max_regions` components even after the
/// small ones are gone; merging of the smallest then continues until the
/// count is back within `max_regions`.
fn enforce_connectivity(h: usize, w: usize, assignment: &[u32], min_size: f64, max_regions: usize) -> Vec<u32> {
    let n = h * w;
    let mut comp = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let id = members.len();
        let mut pixels = Vec::new();
        flood(h, w, assignment, start, &mut seen, |i| pixels.push(i));
        for &i in &pixels {
            comp[i] = id;
        }
        members.push(pixels);
    }

    // Smallest fragment first, ties to the lowest id. Entries go stale when
    // a component grows or is absorbed and are skipped on pop.
    let mut queue: BinaryHeap<Reverse<(usize, usize)>> = members
        .iter()
        .enumerate()
        .map(|(id, m)| Reverse((m.len(), id)))
        .collect();
    let mut live = members.len();
    while let Some(Reverse((size, small))) = queue.pop() {
        if members[small].len() != size {
            continue;
        }
        if (size as f64) >= min_size && live <= max_regions {
            break;
        }
        let mut target: Option<usize> = None;
        for &i in &members[small] {
            let (r, c) = (i / w, i % w);
            let neighbours = [
                (r > 0).then(|| i - w),
                (r + 1 < h).then(|| i + w),
                (c > 0).then(|| i - 1),
                (c + 1 < w).then(|| i + 1),
            ];
            for j in neighbours.into_iter().flatten() {
                let other = comp[j];
                if other == small {
                    continue;
                }
                target = match target {
                    Some(t) if (members[t].len(), Reverse(t)) >= (members[other].len(), Reverse(other)) => Some(t),
                    _ => Some(other),
                };
            }
        }
        let Some(target) = target else { continue };
        let moved = std::mem::take(&mut members[small]);
        for &i in &moved {
            comp[i] = target;
        }
        members[target].extend(moved);
        live -= 1;
        queue.push(Reverse((members[target].len(), target)));
    }

    let mut renumber = vec![u32::MAX; members.len()];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            if renumber[c] == u32::MAX {
                renumber[c] = next;
                next += 1;
            }
            renumber[c]
        })
        .collect()
}
