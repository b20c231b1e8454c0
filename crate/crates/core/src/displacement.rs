//! Uncertainty-guided contour-aware displacement.
//!
//! The source image is split into superpixels, each region is scored by the
//! mean predictive entropy of the teacher inside it, a temperature softmax
//! over those scores drives sampling of `N` distinct regions, and the
//! selected regions are pasted from the source into the destination image
//! (and label map).

use crate::error::{Error, Result};
use crate::grid::{Grid2D, LabelMap, ProbMap};
use crate::rng::RngStream;
use crate::superpixel::{parse_int_grid, slic_partition, SlicParams, SuperpixelPartition};

/// Binary per-pixel selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::shape(height * width, bits.len()));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::param("mask", "values must be 0 or 1"));
        }
        Ok(Mask {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c) as u8);
            }
        }
        Mask {
            height,
            width,
            bits,
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

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn is_set(&self, i: usize) -> bool {
        self.bits[i] == 1
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// `1 - M`.
    pub fn complement(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.bits.len() * 2);
        for row in self.bits.chunks(self.width) {
            let line: Vec<&str> = row.iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, w, values) = parse_int_grid(text)?;
        let bits = values
            .into_iter()
            .map(|v| u8::try_from(v).map_err(|_| Error::param("mask", "values must be 0 or 1")))
            .collect::<Result<Vec<u8>>>()?;
        Self::new(h, w, bits)
    }

    pub(crate) fn ensure_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.shape() != (height, width) {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

/// Which image the pasted regions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Labeled regions pasted into an unlabeled image.
    LabeledIntoUnlabeled,
    /// Unlabeled regions pasted into a labeled image.
    UnlabeledIntoLabeled,
}

/// A displaced training sample. Pixels with `mask == 1` come from the source.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub image: Grid2D,
    pub label: LabelMap,
    pub mask: Mask,
    pub direction: Direction,
}

impl MixedSample {
    /// Pixels whose content came from the labeled image.
    pub fn labeled_region(&self) -> Mask {
        match self.direction {
            Direction::LabeledIntoUnlabeled => self.mask.clone(),
            Direction::UnlabeledIntoLabeled => self.mask.complement(),
        }
    }

    /// Pixels whose content came from the unlabeled image.
    pub fn unlabeled_region(&self) -> Mask {
        self.labeled_region().complement()
    }
}

/// Per-pixel Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy_map(p: &ProbMap) -> Grid2D {
    let values = p.probs().chunks_exact(p.num_classes()).map(entropy).collect();
    Grid2D::new(p.height(), p.width(), values).expect("entropy of a valid ProbMap is finite")
}

#[inline]
pub(crate) fn entropy(px: &[f64]) -> f64 {
    let h: f64 = px.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
    h.max(0.0)
}

/// Mean entropy `U(s)` of every superpixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionUncertainty(pub Vec<f64>);

pub fn region_uncertainty(h: &Grid2D, part: &SuperpixelPartition) -> Result<RegionUncertainty> {
    h.ensure_shape(part.height(), part.width())?;
    let k = part.num_regions();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&id, &v) in part.region_ids().iter().zip(h.values()) {
        sums[id as usize] += v;
        counts[id as usize] += 1;
    }
    Ok(RegionUncertainty(
        sums.iter()
            .zip(&counts)
            .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect(),
    ))
}

/// Categorical distribution over regions.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementDistribution {
    probs: Vec<f64>,
    temperature: Option<f64>,
}

impl DisplacementDistribution {
    pub fn uniform(k: usize) -> Self {
        DisplacementDistribution {
            probs: vec![1.0 / k as f64; k],
            temperature: None,
        }
    }

    /// Wraps explicit probabilities; they must be nonnegative and sum to 1.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param("probs", format!("not a distribution (sum {sum})")));
        }
        Ok(DisplacementDistribution {
            probs,
            temperature: None,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn temperature(&self) -> Option<f64> {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Temperature softmax of region uncertainties.
pub fn displacement_distribution(u: &RegionUncertainty, temperature: f64) -> Result<DisplacementDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param("temperature", format!("{temperature} must be positive")));
    }
    let max = u.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = u.0.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(DisplacementDistribution {
        probs: exps.iter().map(|e| e / sum).collect(),
        temperature: Some(temperature),
    })
}

/// Draws `n` distinct region ids, renormalising over the remaining regions
/// after every draw. Ids are returned in draw order.
pub fn sample_regions(d: &DisplacementDistribution, n: usize, rng: &mut RngStream) -> Result<Vec<u32>> {
    let k = d.len();
    if n > k {
        return Err(Error::param("n", format!("cannot draw {n} distinct regions from {k}")));
    }
    let mut weights = d.probs.clone();
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = weights.iter().sum();
        let choice = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut choice = None;
            let mut last_positive = 0;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    last_positive = i;
                    if target < acc {
                        choice = Some(i);
                        break;
                    }
                }
            }
            choice.unwrap_or(last_positive)
        } else {
            // Every remaining region has underflowed to zero weight.
            let remaining: Vec<usize> = (0..k).filter(|i| !picked.contains(&(*i as u32))).collect();
            remaining[rng.below(remaining.len())]
        };
        weights[choice] = 0.0;
        picked.push(choice as u32);
    }
    Ok(picked)
}

pub fn build_mask(part: &SuperpixelPartition, selected: &[u32]) -> Result<Mask> {
    let k = part.num_regions();
    let mut chosen = vec![false; k];
    for &s in selected {
        if s as usize >= k {
            return Err(Error::param("selected", format!("region {s} not in 0..{k}")));
        }
        chosen[s as usize] = true;
    }
    Ok(Mask {
        height: part.height(),
        width: part.width(),
        bits: part.region_ids().iter().map(|&id| chosen[id as usize] as u8).collect(),
    })
}

/// `M * xa + (1 - M) * xb`.
pub fn mix_images(xa: &Grid2D, xb: &Grid2D, m: &Mask) -> Result<Grid2D> {
    xb.ensure_shape(xa.height(), xa.width())?;
    m.ensure_shape(xa.height(), xa.width())?;
    let values = xa
        .values()
        .iter()
        .zip(xb.values())
        .zip(&m.bits)
        .map(|((&a, &b), &bit)| if bit == 1 { a } else { b })
        .collect();
    Grid2D::new(xa.height(), xa.width(), values)
}

pub fn mix_labels(ya: &LabelMap, yb: &LabelMap, m: &Mask) -> Result<LabelMap> {
    ya.ensure_compatible(yb)?;
    m.ensure_shape(ya.height(), ya.width())?;
    let labels = ya
        .labels()
        .iter()
        .zip(yb.labels())
        .zip(&m.bits)
        .map(|((&a, &b), &bit)| if bit == 1 { a } else { b })
        .collect();
    LabelMap::new(ya.height(), ya.width(), ya.num_classes(), labels)
}

/// How many superpixels to displace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionCount {
    /// `ceil(K / 4)`.
    Quarter,
    /// A fixed count, capped at `K`.
    Fixed(usize),
}

impl RegionCount {
    pub fn resolve(self, k: usize) -> usize {
        match self {
            RegionCount::Quarter => k.div_ceil(4),
            RegionCount::Fixed(n) => n.min(k),
        }
    }
}

/// How regions are chosen once the partition exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Temperature softmax over mean teacher entropy.
    Uncertainty,
    /// Uniform over regions, ignoring the teacher.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementConfig {
    pub slic: SlicParams,
    pub temperature: f64,
    pub regions: RegionCount,
    pub selection: Selection,
}

impl Default for DisplacementConfig {
    fn default() -> Self {
        DisplacementConfig {
            slic: SlicParams::default(),
            temperature: 0.5,
            regions: RegionCount::Quarter,
            selection: Selection::Uncertainty,
        }
    }
}

/// Borrowed inputs of one displacement: regions of `x_src` are pasted into
/// `x_dst`. `p_src` is the teacher's prediction on the source image.
#[derive(Debug, Clone, Copy)]
pub struct PairView<'a> {
    pub x_src: &'a Grid2D,
    pub y_src: &'a LabelMap,
    pub x_dst: &'a Grid2D,
    pub y_dst: &'a LabelMap,
    pub p_src: &'a ProbMap,
}

impl PairView<'_> {
    fn check(&self) -> Result<()> {
        let (h, w) = self.x_src.shape();
        self.x_dst.ensure_shape(h, w)?;
        self.y_src.ensure_compatible(self.y_dst)?;
        if self.y_src.shape() != (h, w) || self.p_src.shape() != (h, w) {
            return Err(Error::shape(format!("{h}x{w}"), "mismatched pair"));
        }
        if self.p_src.num_classes() != self.y_src.num_classes() {
            return Err(Error::shape(self.y_src.num_classes(), self.p_src.num_classes()));
        }
        Ok(())
    }
}

/// A region-mixing strategy used by the trainer.
pub trait Displacer {
    fn displace(&self, pair: PairView<'_>, direction: Direction, rng: &mut RngStream) -> Result<MixedSample>;
}

/// Superpixel displacement (uncertainty-guided or uniform selection).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SuperpixelDisplacer {
    pub config: DisplacementConfig,
}

impl SuperpixelDisplacer {
    pub fn new(config: DisplacementConfig) -> Self {
        SuperpixelDisplacer { config }
    }

    /// Mask for `pair`, together with the partition it was drawn from.
    pub fn select(&self, pair: PairView<'_>, rng: &mut RngStream) -> Result<(SuperpixelPartition, Mask)> {
        pair.check()?;
        let part = slic_partition(pair.x_src, &self.config.slic)?;
        let dist = match self.config.selection {
            Selection::Uncertainty => {
                let h = entropy_map(pair.p_src);
                let u = region_uncertainty(&h, &part)?;
                displacement_distribution(&u, self.config.temperature)?
            }
            Selection::Uniform => DisplacementDistribution::uniform(part.num_regions()),
        };
        let n = self.config.regions.resolve(part.num_regions());
        let selected = sample_regions(&dist, n, rng)?;
        let mask = build_mask(&part, &selected)?;
        Ok((part, mask))
    }
}

impl Displacer for SuperpixelDisplacer {
    fn displace(&self, pair: PairView<'_>, direction: Direction, rng: &mut RngStream) -> Result<MixedSample> {
        let (_, mask) = self.select(pair, rng)?;
        mix_pair(pair, mask, direction)
    }
}

/// Applies `mask` to a pair (source where set, destination elsewhere).
pub fn mix_pair(pair: PairView<'_>, mask: Mask, direction: Direction) -> Result<MixedSample> {
    pair.check()?;
    Ok(MixedSample {
        image: mix_images(pair.x_src, pair.x_dst, &mask)?,
        label: mix_labels(pair.y_src, pair.y_dst, &mask)?,
        mask,
        direction,
    })
}

/// Runs the full pipeline with the uncertainty-guided defaults of `cfg`.
pub fn displace_pair(
    pair: PairView<'_>,
    cfg: &DisplacementConfig,
    direction: Direction,
    rng: &mut RngStream,
) -> Result<MixedSample> {
    SuperpixelDisplacer::new(*cfg).displace(pair, direction, rng)
}
