//! Dense row-major grids shared by every stage of the pipeline.
//!
//! Pixel `(r, c)` lives at index `r * width + c`. Per-class fields
//! ([`Logits`], [`ProbMap`]) store the `C` values of a pixel contiguously, so
//! pixel `i`, class `k` is at `i * C + k`.

use crate::error::{Error, Result};

/// Largest class count a [`LabelMap`] can hold (labels are stored as bytes).
pub const MAX_CLASSES: usize = 256;

/// Tolerance for the per-pixel sum of a [`ProbMap`].
pub const PROB_SUM_TOL: f64 = 1e-6;

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::param("shape", format!("{height}x{width} grid is empty")));
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// A single scalar channel: image, entropy map, feature plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        check_finite(&values)?;
        Ok(Grid2D {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// True when every value lies in `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub(crate) fn ensure_shape(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

/// Integer class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if !(2..=MAX_CLASSES).contains(&num_classes) {
            return Err(Error::param(
                "num_classes",
                format!("{num_classes} not in 2..={MAX_CLASSES}"),
            ));
        }
        if labels.len() != height * width {
            return Err(Error::shape(height * width, labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::param(
                "labels",
                format!("label {bad} out of range for {num_classes} classes"),
            ));
        }
        Ok(LabelMap {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, label: u8) -> Result<Self> {
        Self::new(height, width, num_classes, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.width + c]
    }

    /// Number of pixels carrying `class`.
    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub(crate) fn ensure_compatible(&self, other: &LabelMap) -> Result<()> {
        if self.shape() != other.shape() || self.num_classes != other.num_classes {
            return Err(Error::shape(
                format!("{}x{} C={}", self.height, self.width, self.num_classes),
                format!("{}x{} C={}", other.height, other.width, other.num_classes),
            ));
        }
        Ok(())
    }
}

/// Unnormalised per-pixel class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    height: usize,
    width: usize,
    num_classes: usize,
    values: Vec<f64>,
}

impl Logits {
    pub fn new(height: usize, width: usize, num_classes: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if num_classes == 0 {
            return Err(Error::param("num_classes", "must be at least 1"));
        }
        if values.len() != height * width * num_classes {
            return Err(Error::shape(height * width * num_classes, values.len()));
        }
        check_finite(&values)?;
        Ok(Logits {
            height,
            width,
            num_classes,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_classes..(i + 1) * self.num_classes]
    }
}

/// Per-pixel categorical distributions over `num_classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    /// Validates nonnegativity and per-pixel normalisation.
    pub fn new(height: usize, width: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if num_classes < 2 {
            return Err(Error::param("num_classes", "must be at least 2"));
        }
        if probs.len() != height * width * num_classes {
            return Err(Error::shape(height * width * num_classes, probs.len()));
        }
        check_finite(&probs)?;
        for (i, px) in probs.chunks_exact(num_classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::param(
                    "probs",
                    format!("pixel {i} is not a distribution (sum {sum})"),
                ));
            }
        }
        Ok(ProbMap {
            height,
            width,
            num_classes,
            probs,
        })
    }

    /// Every pixel `1/C`.
    pub fn uniform(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        let p = 1.0 / num_classes as f64;
        Self::new(height, width, num_classes, vec![p; height * width * num_classes])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub(crate) fn ensure_compatible(&self, other: &ProbMap) -> Result<()> {
        if self.shape() != other.shape() || self.num_classes != other.num_classes {
            return Err(Error::shape(
                format!("{}x{} C={}", self.height, self.width, self.num_classes),
                format!("{}x{} C={}", other.height, other.width, other.num_classes),
            ));
        }
        Ok(())
    }
}

/// Per-pixel softmax over the class axis, stabilised by max-subtraction.
pub fn softmax_channels(logits: &Logits) -> Result<ProbMap> {
    let c = logits.num_classes;
    if c < 2 {
        return Err(Error::param("num_classes", "softmax needs at least 2 classes"));
    }
    check_finite(&logits.values)?;
    let mut probs = Vec::with_capacity(logits.values.len());
    for px in logits.values.chunks_exact(c) {
        let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = probs.len();
        let mut sum = 0.0;
        for &z in px {
            let e = (z - max).exp();
            sum += e;
            probs.push(e);
        }
        for p in &mut probs[start..] {
            *p /= sum;
        }
    }
    Ok(ProbMap {
        height: logits.height,
        width: logits.width,
        num_classes: c,
        probs,
    })
}

/// Per-pixel argmax; ties resolve to the lowest class index.
pub fn argmax_labels(p: &ProbMap) -> LabelMap {
    let labels = p
        .probs
        .chunks_exact(p.num_classes)
        .map(|px| {
            let mut best = 0;
            for (k, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap {
        height: p.height,
        width: p.width,
        num_classes: p.num_classes,
        labels,
    }
}

pub fn one_hot(y: &LabelMap) -> ProbMap {
    let c = y.num_classes;
    let mut probs = vec![0.0; y.labels.len() * c];
    for (i, &l) in y.labels.iter().enumerate() {
        probs[i * c + l as usize] = 1.0;
    }
    ProbMap {
        height: y.height,
        width: y.width,
        num_classes: c,
        probs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(h: usize, w: usize, c: usize, v: Vec<f64>) -> Logits {
        Logits::new(h, w, c, v).unwrap()
    }

    #[test]
    fn zero_logits_give_uniform() {
        let p = softmax_channels(&logits(2, 3, 4, vec![0.0; 24])).unwrap();
        assert!(p.probs().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn softmax_analytic_pair() {
        let p = softmax_channels(&logits(1, 1, 2, vec![0.0, 3f64.ln()])).unwrap();
        assert!((p.pixel(0)[0] - 0.25).abs() < 1e-15);
        assert!((p.pixel(0)[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let bad = Logits {
            height: 1,
            width: 1,
            num_classes: 2,
            values: vec![0.0, f64::NAN],
        };
        assert_eq!(softmax_channels(&bad), Err(Error::NonFinite { index: 1 }));
        assert!(Logits::new(1, 1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn argmax_examples() {
        let p = ProbMap::new(1, 2, 3, vec![0.2, 0.5, 0.3, 0.4, 0.3, 0.3]).unwrap();
        assert_eq!(argmax_labels(&p).labels(), &[1, 0]);
        let tie = ProbMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_labels(&tie).labels(), &[0]);
    }

    #[test]
    fn one_hot_examples() {
        let y = LabelMap::new(1, 1, 3, vec![2]).unwrap();
        assert_eq!(one_hot(&y).probs(), &[0.0, 0.0, 1.0]);
        let z = LabelMap::filled(2, 2, 2, 0).unwrap();
        assert_eq!(one_hot(&z).probs(), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn constructors_validate() {
        assert!(Grid2D::new(0, 3, vec![]).is_err());
        assert!(Grid2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(LabelMap::new(1, 2, 2, vec![0, 2]).is_err());
        assert!(LabelMap::new(1, 1, 1, vec![0]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![0.6, 0.6]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![1.5, -0.5]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            zs in proptest::collection::vec(-20.0f64..20.0, 12),
            shifts in proptest::collection::vec(-50.0f64..50.0, 4),
        ) {
            let base = softmax_channels(&logits(2, 2, 3, zs.clone())).unwrap();
            let shifted: Vec<f64> = zs
                .iter()
                .enumerate()
                .map(|(i, z)| z + shifts[i / 3])
                .collect();
            let moved = softmax_channels(&logits(2, 2, 3, shifted)).unwrap();
            for (a, b) in base.probs().iter().zip(moved.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for px in base.probs().chunks(3) {
                prop_assert!((px.iter().sum::<f64>() - 1.0).abs() <= PROB_SUM_TOL);
            }
        }

        #[test]
        fn argmax_inverts_one_hot(
            c in 2usize..6,
            raw in proptest::collection::vec(0u8..255, 20),
        ) {
            let labels = raw.iter().map(|l| l % c as u8).collect();
            let y = LabelMap::new(4, 5, c, labels).unwrap();
            prop_assert_eq!(argmax_labels(&one_hot(&y)), y);
        }
    }
}
