//! The four ablation strategies and the rectangular baseline displacer.

use std::fmt;
use std::str::FromStr;

use ucad::displacement::{mix_pair, Direction, Displacer, Mask, MixedSample, PairView, RegionCount, SuperpixelDisplacer};
use ucad::rng::RngStream;
use ucad::superpixel::{slic_partition, SlicParams};
use ucad::train::TrainConfig;

use crate::error::CliError;

/// Ablation rows, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Rectangles instead of superpixels, no consistency loss.
    BaseRect,
    /// Superpixels chosen uniformly, no consistency loss.
    Cad,
    /// Superpixels chosen by teacher entropy, no consistency loss.
    CadUgs,
    /// Entropy-guided superpixels plus the uncertainty-weighted consistency loss.
    Full,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::BaseRect, Strategy::Cad, Strategy::CadUgs, Strategy::Full];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::BaseRect => "base-rect",
            Strategy::Cad => "cad",
            Strategy::CadUgs => "cad+ugs",
            Strategy::Full => "full",
        }
    }

    /// Displacer matching this strategy for a resolved trainer config.
    pub fn displacer(self, cfg: &TrainConfig) -> Box<dyn Displacer + Send + Sync> {
        match self {
            Strategy::BaseRect => Box::new(RectDisplacer {
                slic: cfg.displacement.slic,
                regions: cfg.displacement.regions,
            }),
            _ => Box::new(SuperpixelDisplacer::new(cfg.displacement)),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| {
                CliError::Config(format!(
                    "--strategy must be one of base-rect, cad, cad+ugs, full (got `{}`)",
                    s.trim()
                ))
            })
    }
}

const ASPECT_MIN: f64 = 0.5;
const ASPECT_MAX: f64 = 2.0;
const PLACEMENT_TRIES: usize = 50;

/// Pastes `N` axis-aligned rectangles, each covering about `HW/K` pixels,
/// where `K` and `N` come from the same superpixel settings as the
/// contour-aware variant. The masked area therefore matches the expected
/// area of `N` superpixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectDisplacer {
    pub slic: SlicParams,
    pub regions: RegionCount,
}

impl RectDisplacer {
    /// Rectangle mask with `n` boxes of target area `area`. A box is redrawn
    /// up to a fixed number of times while it overlaps earlier boxes; the
    /// last draw is kept if none is free.
    pub fn mask(height: usize, width: usize, n: usize, area: f64, rng: &mut RngStream) -> Mask {
        let mut bits = vec![0u8; height * width];
        for _ in 0..n {
            let mut placed = None;
            for _ in 0..PLACEMENT_TRIES {
                let aspect = (rng.uniform_range(ASPECT_MIN.ln(), ASPECT_MAX.ln())).exp();
                let rh = ((area * aspect).sqrt().round() as usize).clamp(1, height);
                let rw = ((area / aspect).sqrt().round() as usize).clamp(1, width);
                let r0 = rng.below(height - rh + 1);
                let c0 = rng.below(width - rw + 1);
                let rect = (r0, c0, rh, rw);
                placed = Some(rect);
                let free = (r0..r0 + rh).all(|r| bits[r * width + c0..r * width + c0 + rw].iter().all(|&b| b == 0));
                if free {
                    break;
                }
            }
            if let Some((r0, c0, rh, rw)) = placed {
                for r in r0..r0 + rh {
                    bits[r * width + c0..r * width + c0 + rw].fill(1);
                }
            }
        }
        Mask::new(height, width, bits).expect("bits are 0/1 and sized h*w")
    }
}

impl Displacer for RectDisplacer {
    fn displace(&self, pair: PairView<'_>, direction: Direction, rng: &mut RngStream) -> ucad::Result<MixedSample> {
        let (h, w) = pair.x_src.shape();
        let k = slic_partition(pair.x_src, &self.slic)?.num_regions();
        let n = self.regions.resolve(k);
        let mask = RectDisplacer::mask(h, w, n, (h * w) as f64 / k as f64, rng);
        mix_pair(pair, mask, direction)
    }
}
