//! Synthetic anatomy-like segmentation data.
//!
//! Each sample is a noisy grayscale image of wavy star-convex blobs on a
//! background. Blob boundaries follow `r(theta) = r0 (1 + a sin(k theta + phi))`
//! so regions have curved, irregular contours. Later blobs overwrite earlier
//! ones.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, LabelMap};
use crate::pgm;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub blobs_min: usize,
    pub blobs_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Boundary wave amplitude in pixels.
    pub waviness: f64,
    /// `(mean, std)` of the region intensity for each class, background first.
    pub class_intensity: Vec<(f64, f64)>,
    pub noise_std: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_val: usize,
    pub seed: u64,
}

/// Evenly spaced class means in `[0.2, 0.8]` with a small per-region spread.
pub fn default_intensities(num_classes: usize) -> Vec<(f64, f64)> {
    (0..num_classes)
        .map(|c| (0.2 + 0.6 * c as f64 / (num_classes - 1).max(1) as f64, 0.04))
        .collect()
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            height: 64,
            width: 64,
            num_classes: 3,
            blobs_min: 2,
            blobs_max: 4,
            radius_min: 6.0,
            radius_max: 14.0,
            waviness: 3.0,
            class_intensity: default_intensities(3),
            noise_std: 0.08,
            n_labeled: 2,
            n_unlabeled: 38,
            n_val: 10,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::param("size", "image must be at least 1x1"));
        }
        if !(2..=crate::grid::MAX_CLASSES).contains(&self.num_classes) {
            return Err(Error::param("classes", format!("{} not in 2..=256", self.num_classes)));
        }
        if self.blobs_min > self.blobs_max {
            return Err(Error::param("blobs", "min exceeds max"));
        }
        let limit = self.height.min(self.width) as f64 / 2.0;
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max < limit) {
            return Err(Error::param(
                "radius",
                format!("need 0 < min <= max < {limit}, got {}..{}", self.radius_min, self.radius_max),
            ));
        }
        if !(self.waviness >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::param("waviness", "amplitudes must be nonnegative"));
        }
        if self.class_intensity.len() != self.num_classes {
            return Err(Error::param(
                "class_intensity",
                format!("{} entries for {} classes", self.class_intensity.len(), self.num_classes),
            ));
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let intens: Vec<String> = self.class_intensity.iter().map(|(m, sd)| format!("{m}:{sd}")).collect();
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "blobs_min={}", self.blobs_min);
        let _ = writeln!(s, "blobs_max={}", self.blobs_max);
        let _ = writeln!(s, "radius_min={}", self.radius_min);
        let _ = writeln!(s, "radius_max={}", self.radius_max);
        let _ = writeln!(s, "waviness={}", self.waviness);
        let _ = writeln!(s, "class_intensity={}", intens.join(","));
        let _ = writeln!(s, "noise_std={}", self.noise_std);
        let _ = writeln!(s, "n_labeled={}", self.n_labeled);
        let _ = writeln!(s, "n_unlabeled={}", self.n_unlabeled);
        let _ = writeln!(s, "n_val={}", self.n_val);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse {
                    offset,
                    reason: format!("expected key=value, got `{t}`"),
                })?;
                map.insert(k.trim().to_string(), (v.trim().to_string(), offset));
            }
            offset += line.len();
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, (String, usize)>, key: &str) -> Result<T> {
            let (v, off) = map.get(key).ok_or_else(|| Error::Parse {
                offset: 0,
                reason: format!("manifest missing `{key}`"),
            })?;
            v.parse().map_err(|_| Error::Parse {
                offset: *off,
                reason: format!("bad value for `{key}`: `{v}`"),
            })
        }
        let (intens_raw, intens_off) = map.get("class_intensity").cloned().ok_or_else(|| Error::Parse {
            offset: 0,
            reason: "manifest missing `class_intensity`".into(),
        })?;
        let class_intensity = intens_raw
            .split(',')
            .map(|pair| {
                let (m, s) = pair.split_once(':')?;
                Some((m.parse().ok()?, s.parse().ok()?))
            })
            .collect::<Option<Vec<(f64, f64)>>>()
            .ok_or_else(|| Error::Parse {
                offset: intens_off,
                reason: format!("bad class_intensity `{intens_raw}`"),
            })?;
        let spec = DatasetSpec {
            height: get(&map, "height")?,
            width: get(&map, "width")?,
            num_classes: get(&map, "num_classes")?,
            blobs_min: get(&map, "blobs_min")?,
            blobs_max: get(&map, "blobs_max")?,
            radius_min: get(&map, "radius_min")?,
            radius_max: get(&map, "radius_max")?,
            waviness: get(&map, "waviness")?,
            class_intensity,
            noise_std: get(&map, "noise_std")?,
            n_labeled: get(&map, "n_labeled")?,
            n_unlabeled: get(&map, "n_unlabeled")?,
            n_val: get(&map, "n_val")?,
            seed: get(&map, "seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One image and its ground-truth labels.
pub fn generate_sample(spec: &DatasetSpec, rng: &mut RngStream) -> (Grid2D, LabelMap) {
    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![0u8; h * w];
    let mut levels = vec![0.0; h * w];
    let (bg_mean, bg_std) = spec.class_intensity[0];
    levels.fill(rng.normal(bg_mean, bg_std));

    let blobs = rng.between(spec.blobs_min, spec.blobs_max);
    for _ in 0..blobs {
        let class = 1 + rng.below(spec.num_classes - 1);
        let r0 = rng.uniform_range(spec.radius_min, spec.radius_max);
        let amp = (spec.waviness / r0).min(0.9);
        let lobes = rng.between(2, 5) as f64;
        let phase = rng.uniform_range(0.0, TAU);
        let cy = rng.uniform_range(r0, h as f64 - r0);
        let cx = rng.uniform_range(r0, w as f64 - r0);
        let (mean, std) = spec.class_intensity[class];
        let level = rng.normal(mean, std);
        for r in 0..h {
            for c in 0..w {
                let dy = r as f64 - cy;
                let dx = c as f64 - cx;
                let radius = r0 * (1.0 + amp * (lobes * dy.atan2(dx) + phase).sin());
                if dx * dx + dy * dy <= radius * radius {
                    labels[r * w + c] = class as u8;
                    levels[r * w + c] = level;
                }
            }
        }
    }

    let values = levels
        .into_iter()
        .map(|lv| (lv + rng.normal(0.0, spec.noise_std)).clamp(0.0, 1.0))
        .collect();
    (
        Grid2D::new(h, w, values).expect("clamped values are finite"),
        LabelMap::new(h, w, spec.num_classes, labels).expect("blob classes are below C"),
    )
}

/// Unlabeled images. Their ground truth is kept for evaluation only and is
/// reachable solely through [`UnlabeledSplit::evaluation_truth`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledSplit {
    images: Vec<Grid2D>,
    truth: Vec<LabelMap>,
}

impl UnlabeledSplit {
    pub fn new(images: Vec<Grid2D>, truth: Vec<LabelMap>) -> Result<Self> {
        if images.len() != truth.len() {
            return Err(Error::shape(images.len(), truth.len()));
        }
        Ok(UnlabeledSplit { images, truth })
    }

    /// Training-facing accessor: images only.
    pub fn images(&self) -> &[Grid2D] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Held-out labels paired with their images, for metrics only.
    pub fn evaluation_truth(&self) -> Vec<(Grid2D, LabelMap)> {
        self.images.iter().cloned().zip(self.truth.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub labeled: Vec<(Grid2D, LabelMap)>,
    pub unlabeled: UnlabeledSplit,
    pub validation: Vec<(Grid2D, LabelMap)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Unlabeled,
    Validation,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Validation => "val",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Labeled => 1,
            Split::Unlabeled => 2,
            Split::Validation => 3,
        }
    }
}

/// Deterministic function of `spec`; each sample uses its own forked stream.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let split = |s: Split, n: usize| -> Vec<(Grid2D, LabelMap)> {
        (0..n)
            .map(|i| generate_sample(spec, &mut root.fork((s.stream() << 32) | i as u64)))
            .collect()
    };
    let (images, truth) = split(Split::Unlabeled, spec.n_unlabeled).into_iter().unzip();
    Ok(Dataset {
        labeled: split(Split::Labeled, spec.n_labeled),
        unlabeled: UnlabeledSplit { images, truth },
        validation: split(Split::Validation, spec.n_val),
    })
}

fn sample_paths(root: &Path, split: Split, i: usize) -> (PathBuf, PathBuf) {
    let dir = root.join(split.dir_name());
    (dir.join(format!("img_{i:04}.pgm")), dir.join(format!("lab_{i:04}.pgm")))
}

/// Writes `root/{labeled,unlabeled,val}/{img,lab}_NNNN.pgm` and `manifest.txt`.
pub fn save_dataset(root: impl AsRef<Path>, spec: &DatasetSpec, data: &Dataset) -> Result<()> {
    let root = root.as_ref();
    let unlabeled = data.unlabeled.evaluation_truth();
    for (split, items) in [
        (Split::Labeled, &data.labeled),
        (Split::Unlabeled, &unlabeled),
        (Split::Validation, &data.validation),
    ] {
        fs::create_dir_all(root.join(split.dir_name()))?;
        for (i, (img, lab)) in items.iter().enumerate() {
            let (ip, lp) = sample_paths(root, split, i);
            pgm::save_image(ip, img)?;
            pgm::save_labels(lp, lab)?;
        }
    }
    fs::write(root.join("manifest.txt"), spec.to_manifest())?;
    Ok(())
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<(DatasetSpec, Dataset)> {
    let root = root.as_ref();
    let spec = DatasetSpec::from_manifest(&fs::read_to_string(root.join("manifest.txt"))?)?;
    let load = |split: Split, n: usize| -> Result<Vec<(Grid2D, LabelMap)>> {
        (0..n)
            .map(|i| {
                let (ip, lp) = sample_paths(root, split, i);
                let img = pgm::load_image(&ip)?;
                let lab = pgm::load_labels(&lp, spec.num_classes)?;
                if img.shape() != (spec.height, spec.width) || lab.shape() != img.shape() {
                    return Err(Error::shape(
                        format!("{}x{}", spec.height, spec.width),
                        format!("{} is {}x{}", ip.display(), img.height(), img.width()),
                    ));
                }
                Ok((img, lab))
            })
            .collect()
    };
    let (images, truth) = load(Split::Unlabeled, spec.n_unlabeled)?.into_iter().unzip();
    let data = Dataset {
        labeled: load(Split::Labeled, spec.n_labeled)?,
        unlabeled: UnlabeledSplit { images, truth },
        validation: load(Split::Validation, spec.n_val)?,
    };
    Ok((spec, data))
}
