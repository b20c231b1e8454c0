//! Per-pixel two-layer network, SGD with momentum, and the EMA teacher.
//!
//! The network sees six fixed features per pixel and shares its weights
//! across all pixels:
//!
//! ```text
//! features f (6) -> ReLU(W1^T f + b1) (hidden) -> W2^T h + b2 (C logits)
//! ```
//!
//! Parameters are a single flat vector in the order `W1` (F x hidden, row
//! major), `b1`, `W2` (hidden x C, row major), `b2`. The checkpoint format
//! writes them in exactly that order.

use std::io::{Read, Write};

use crate::displacement::entropy_map;
use crate::error::{Error, Result};
use crate::grid::{argmax_labels, softmax_channels, Grid2D, LabelMap, Logits, ProbMap};
use crate::rng::RngStream;

pub const NUM_FEATURES: usize = 6;
/// Leading features that depend on image content; the rest are coordinates.
const APPEARANCE_FEATURES: usize = 4;
pub const DEFAULT_HIDDEN: usize = 16;
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"UCAD1";

/// Fixed per-pixel features, `NUM_FEATURES` values per pixel.
///
/// Order: intensity, 3x3 box mean, 7x7 box mean, central-difference gradient
/// magnitude, row / (H-1), col / (W-1). Box means average only in-bounds
/// pixels; differences clamp at the border.
///
/// The three intensity features are stored as `4 (v - 0.5)` and the gradient
/// magnitude is multiplied by 4. Both are affine, so the model class is the
/// same as with raw values, but plain SGD converges much faster on inputs
/// centred at zero with unit-order spread.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn extract(img: &Grid2D) -> FeatureMap {
        let (h, w) = img.shape();
        let blur1 = box_mean(img, 1);
        let blur3 = box_mean(img, 3);
        let mut values = Vec::with_capacity(h * w * NUM_FEATURES);
        let row_scale = if h > 1 { 1.0 / (h - 1) as f64 } else { 0.0 };
        let col_scale = if w > 1 { 1.0 / (w - 1) as f64 } else { 0.0 };
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let gx = 0.5 * (img.get(r, (c + 1).min(w - 1)) - img.get(r, c.saturating_sub(1)));
                let gy = 0.5 * (img.get((r + 1).min(h - 1), c) - img.get(r.saturating_sub(1), c));
                values.extend_from_slice(&[
                    INTENSITY_GAIN * (img.values()[i] - 0.5),
                    INTENSITY_GAIN * (blur1[i] - 0.5),
                    INTENSITY_GAIN * (blur3[i] - 0.5),
                    GRADIENT_GAIN * (gx * gx + gy * gy).sqrt(),
                    r as f64 * row_scale,
                    c as f64 * col_scale,
                ]);
            }
        }
        FeatureMap {
            height: h,
            width: w,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * NUM_FEATURES..(i + 1) * NUM_FEATURES]
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const INTENSITY_GAIN: f64 = 4.0;
const GRADIENT_GAIN: f64 = 4.0;

/// Mean over the in-bounds `(2r+1)^2` window, accumulated as offsets from
/// the centre value so flat regions come out exactly flat.
fn box_mean(img: &Grid2D, radius: usize) -> Vec<f64> {
    let (h, w) = img.shape();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(h - 1));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(w - 1));
            let centre = img.get(r, c);
            let mut offset = 0.0;
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    offset += img.get(rr, cc) - centre;
                }
            }
            out.push(centre + offset / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64);
        }
    }
    out
}

/// Flat parameter vector plus its layer dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    features: usize,
    hidden: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn param_count(features: usize, hidden: usize, classes: usize) -> usize {
        features * hidden + hidden + hidden * classes + classes
    }

    pub fn zeros(hidden: usize, classes: usize) -> Self {
        ModelParams {
            features: NUM_FEATURES,
            hidden,
            classes,
            data: vec![0.0; Self::param_count(NUM_FEATURES, hidden, classes)],
        }
    }

    /// He-scaled Gaussian weights for the appearance features, zero weights
    /// for the two coordinate features, zero biases. Starting the coordinate
    /// weights at zero keeps the initial model translation invariant.
    pub fn init(hidden: usize, classes: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(hidden, classes);
        let s1 = (2.0 / APPEARANCE_FEATURES as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let w2 = p.w2_range();
        for v in &mut p.data[..APPEARANCE_FEATURES * hidden] {
            *v = rng.normal(0.0, s1);
        }
        for v in &mut p.data[w2] {
            *v = rng.normal(0.0, s2);
        }
        p
    }

    pub fn from_vec(features: usize, hidden: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if features != NUM_FEATURES {
            return Err(Error::shape(NUM_FEATURES, features));
        }
        if hidden == 0 || classes < 2 {
            return Err(Error::param("dims", format!("hidden={hidden} classes={classes}")));
        }
        let want = Self::param_count(features, hidden, classes);
        if data.len() != want {
            return Err(Error::shape(want, data.len()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ModelParams {
            features,
            hidden,
            classes,
            data,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.features * self.hidden
    }

    fn b1_range(&self) -> std::ops::Range<usize> {
        let s = self.features * self.hidden;
        s..s + self.hidden
    }

    fn w2_range(&self) -> std::ops::Range<usize> {
        let s = self.b1_range().end;
        s..s + self.hidden * self.classes
    }

    fn b2_range(&self) -> std::ops::Range<usize> {
        let s = self.w2_range().end;
        s..s + self.classes
    }

    /// Order-sensitive FNV-1a hash of the parameter bits.
    pub fn checksum(&self) -> u64 {
        self.data.iter().fold(0xcbf2_9ce4_8422_2325, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    fn same_dims(&self, other: &ModelParams) -> Result<()> {
        if (self.features, self.hidden, self.classes) != (other.features, other.hidden, other.classes) {
            return Err(Error::shape(
                format!("({}, {}, {})", self.features, self.hidden, self.classes),
                format!("({}, {}, {})", other.features, other.hidden, other.classes),
            ));
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        for dim in [self.features, self.hidden, self.classes] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(17 + 8 * self.data.len());
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |offset: usize, what: &str| Error::Parse {
            offset,
            reason: format!("truncated checkpoint while reading {what}"),
        };
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(truncated(bytes.len(), "magic"));
        }
        if &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                reason: "bad magic, expected UCAD1".into(),
            });
        }
        let mut offset = 5;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let chunk = bytes.get(offset..offset + 4).ok_or_else(|| truncated(offset, "dimensions"))?;
            *d = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
            offset += 4;
        }
        let [features, hidden, classes] = dims;
        let count = Self::param_count(features, hidden, classes);
        let body = &bytes[offset..];
        if body.len() != count * 8 {
            return Err(if body.len() < count * 8 {
                truncated(bytes.len(), "parameters")
            } else {
                Error::Parse {
                    offset: offset + count * 8,
                    reason: "trailing bytes after parameters".into(),
                }
            });
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_vec(features, hidden, classes, data)
    }
}

/// Logits and softmax probabilities for every pixel of `img`.
pub fn forward(params: &ModelParams, img: &Grid2D) -> Result<(Logits, ProbMap)> {
    let feats = FeatureMap::extract(img);
    forward_features(params, &feats)
}

pub fn forward_features(params: &ModelParams, feats: &FeatureMap) -> Result<(Logits, ProbMap)> {
    let (h, w) = feats.shape();
    let (hd, c) = (params.hidden, params.classes);
    let mut logits = Vec::with_capacity(h * w * c);
    let mut hidden = vec![0.0; hd];
    for i in 0..feats.len() {
        hidden_layer(params, feats.pixel(i), &mut hidden);
        let w2 = &params.data[params.w2_range()];
        let b2 = &params.data[params.b2_range()];
        for k in 0..c {
            let mut z = b2[k];
            for (j, &a) in hidden.iter().enumerate() {
                z += a * w2[j * c + k];
            }
            logits.push(z);
        }
    }
    let logits = Logits::new(h, w, c, logits)?;
    let probs = softmax_channels(&logits)?;
    Ok((logits, probs))
}

fn hidden_layer(params: &ModelParams, f: &[f64], out: &mut [f64]) {
    let hd = params.hidden;
    let w1 = &params.data[params.w1_range()];
    let b1 = &params.data[params.b1_range()];
    for j in 0..hd {
        let mut a = b1[j];
        for (fi, &x) in f.iter().enumerate() {
            a += x * w1[fi * hd + j];
        }
        out[j] = a.max(0.0);
    }
}

/// Parameter gradient given `dL/dz` for every logit of `img`.
pub fn backward(params: &ModelParams, img: &Grid2D, grad_logits: &[f64]) -> Result<ModelParams> {
    backward_features(params, &FeatureMap::extract(img), grad_logits)
}

pub fn backward_features(params: &ModelParams, feats: &FeatureMap, grad_logits: &[f64]) -> Result<ModelParams> {
    let (hd, c) = (params.hidden, params.classes);
    if grad_logits.len() != feats.len() * c {
        return Err(Error::shape(feats.len() * c, grad_logits.len()));
    }
    let mut grad = ModelParams::zeros(hd, c);
    let (r_w1, r_b1, r_w2, r_b2) = (params.w1_range(), params.b1_range(), params.w2_range(), params.b2_range());
    let w2 = &params.data[r_w2.clone()];
    let mut hidden = vec![0.0; hd];
    let mut dpre = vec![0.0; hd];
    for i in 0..feats.len() {
        let dz = &grad_logits[i * c..(i + 1) * c];
        if dz.iter().all(|&g| g == 0.0) {
            continue;
        }
        let f = feats.pixel(i);
        hidden_layer(params, f, &mut hidden);
        let g = &mut grad.data;
        for k in 0..c {
            g[r_b2.start + k] += dz[k];
        }
        for j in 0..hd {
            let mut back = 0.0;
            for k in 0..c {
                g[r_w2.start + j * c + k] += hidden[j] * dz[k];
                back += w2[j * c + k] * dz[k];
            }
            // ReLU derivative, taken as 0 at the kink.
            dpre[j] = if hidden[j] > 0.0 { back } else { 0.0 };
            g[r_b1.start + j] += dpre[j];
        }
        for (fi, &x) in f.iter().enumerate() {
            for j in 0..hd {
                g[r_w1.start + fi * hd + j] += x * dpre[j];
            }
        }
    }
    Ok(grad)
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl OptimState {
    pub fn new(params: &ModelParams, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimState {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; params.data.len()],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// `g' = g + wd * p; v = momentum * v + g'; p -= lr * v`.
///
/// Non-finite gradients leave both `params` and `opt` untouched.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, opt: &mut OptimState) -> Result<()> {
    params.same_dims(grads)?;
    if opt.velocity.len() != params.data.len() {
        return Err(Error::shape(params.data.len(), opt.velocity.len()));
    }
    if let Some(index) = grads.data.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {index}")));
    }
    for ((p, &g), v) in params.data.iter_mut().zip(&grads.data).zip(&mut opt.velocity) {
        let g = g + opt.weight_decay * *p;
        *v = opt.momentum * *v + g;
        *p -= opt.lr * *v;
    }
    Ok(())
}

/// `alpha * teacher + (1 - alpha) * student`, element-wise.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, alpha: f64) -> Result<ModelParams> {
    teacher.same_dims(student)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("{alpha} not in [0, 1]")));
    }
    let data = teacher
        .data
        .iter()
        .zip(&student.data)
        .map(|(t, s)| alpha * t + (1.0 - alpha) * s)
        .collect();
    Ok(ModelParams {
        features: teacher.features,
        hidden: teacher.hidden,
        classes: teacher.classes,
        data,
    })
}

/// Teacher pseudo-label (argmax) and its per-pixel entropy.
pub fn pseudo_label(teacher: &ModelParams, x_u: &Grid2D) -> Result<(LabelMap, Grid2D)> {
    let (_, probs) = forward(teacher, x_u)?;
    Ok((argmax_labels(&probs), entropy_map(&probs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: f64) -> ModelParams {
        let mut p = ModelParams::zeros(2, 2);
        p.data.fill(v);
        p
    }

    #[test]
    fn zero_params_predict_uniform() {
        let img = Grid2D::from_fn(5, 4, |r, c| (r * 4 + c) as f64 / 20.0).unwrap();
        let (_, p) = forward(&ModelParams::zeros(8, 3), &img).unwrap();
        assert!(p.probs().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn constant_image_without_coordinates_is_spatially_constant() {
        let mut rng = RngStream::new(4);
        let mut p = ModelParams::init(8, 3, &mut rng);
        // zero the row/col feature weights
        for fi in 4..6 {
            for j in 0..8 {
                p.data[fi * 8 + j] = 0.0;
            }
        }
        let img = Grid2D::filled(6, 7, 0.3).unwrap();
        let (logits, _) = forward(&p, &img).unwrap();
        let first = logits.pixel(0).to_vec();
        for i in 0..42 {
            assert_eq!(logits.pixel(i), first.as_slice());
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = RngStream::new(9);
        let p = ModelParams::init(16, 3, &mut rng);
        let img = Grid2D::from_fn(8, 8, |_, _| rng.uniform()).unwrap();
        assert_eq!(forward(&p, &img).unwrap(), forward(&p, &img).unwrap());
    }

    #[test]
    fn features_on_ramp() {
        let img = Grid2D::from_fn(3, 5, |_, c| c as f64 / 4.0).unwrap();
        let f = FeatureMap::extract(&img);
        let px = f.pixel(7); // (1, 2)
        assert_eq!(px[0], 0.0);
        assert!(px[1].abs() < 1e-14);
        assert!((px[3] - 1.0).abs() < 1e-14);
        assert_eq!(px[4], 0.5);
        assert_eq!(px[5], 0.5);
        // border: 3x3 window clipped to 2x2 at the corner, mean 0.125
        assert!((f.pixel(0)[1] + 1.5).abs() < 1e-14);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = RngStream::new(1);
        let p = ModelParams::init(4, 3, &mut rng);
        let img = Grid2D::from_fn(4, 4, |_, _| rng.uniform()).unwrap();
        let g = backward(&p, &img, &vec![0.0; 48]).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(backward(&p, &img, &[0.0; 5]).is_err());
    }

    #[test]
    fn duplicated_pixel_doubles_the_gradient() {
        let mut rng = RngStream::new(2);
        let p = ModelParams::init(5, 3, &mut rng);
        let f: Vec<f64> = (0..NUM_FEATURES).map(|_| rng.normal(0.0, 1.0)).collect();
        let g: Vec<f64> = (0..3).map(|_| rng.normal(0.0, 1.0)).collect();
        let one = FeatureMap { height: 1, width: 1, values: f.clone() };
        let two = FeatureMap { height: 1, width: 2, values: [f.clone(), f].concat() };
        let g1 = backward_features(&p, &one, &g).unwrap();
        let g2 = backward_features(&p, &two, &[g.clone(), g].concat()).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn sgd_hand_cases() {
        let run = |momentum: f64, wd: f64, steps: usize| {
            let mut p = ModelParams::from_vec(6, 1, 2, vec![1.0; 11]).unwrap();
            let g = ModelParams::from_vec(6, 1, 2, vec![1.0; 11]).unwrap();
            let mut opt = OptimState::new(&p, 0.1, momentum, wd);
            let mut trace = Vec::new();
            for _ in 0..steps {
                sgd_step(&mut p, &g, &mut opt).unwrap();
                trace.push((p.data[0], opt.velocity()[0]));
            }
            trace
        };
        assert_eq!(run(0.0, 0.0, 1)[0].0, 0.9);
        assert_eq!(run(0.0, 1e-4, 1)[0].0, 0.89999);
        assert_eq!(run(0.9, 0.0, 2), vec![(0.9, 1.0), (0.71, 1.9)]);
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut p = params(1.0);
        let mut g = params(1.0);
        g.data[3] = f64::NAN;
        let mut opt = OptimState::new(&p, 0.1, 0.9, 0.0);
        let before = p.clone();
        assert!(matches!(sgd_step(&mut p, &g, &mut opt), Err(Error::Numeric(_))));
        assert_eq!(p, before);
        assert!(opt.velocity().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ema_hand_cases() {
        let t = params(0.0);
        let s = params(1.0);
        assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
        assert_eq!(ema_update(&t, &s, 1.0).unwrap(), t);
        // 1 - 0.9 is the representable value of (1 - alpha) for alpha = 0.9.
        let mixed = ema_update(&t, &s, 0.9).unwrap();
        assert!(mixed.data().iter().all(|&v| v == 1.0 - 0.9));
        assert!(ema_update(&t, &s, 1.5).is_err());
        assert!(ema_update(&t, &ModelParams::zeros(3, 2), 0.5).is_err());
    }

    #[test]
    fn pseudo_label_from_zero_teacher() {
        let img = Grid2D::filled(3, 3, 0.5).unwrap();
        let (labels, h) = pseudo_label(&ModelParams::zeros(4, 3), &img).unwrap();
        assert!(labels.labels().iter().all(|&l| l == 0));
        assert!(h.values().iter().all(|&v| (v - 3f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn pseudo_label_from_confident_teacher() {
        // b2 huge on class 1: saturated one-hot output.
        let mut p = ModelParams::zeros(4, 3);
        let b2 = p.b2_range();
        p.data[b2.start + 1] = 1000.0;
        let img = Grid2D::filled(3, 3, 0.5).unwrap();
        let (labels, h) = pseudo_label(&p, &img).unwrap();
        assert!(labels.labels().iter().all(|&l| l == 1));
        assert!(h.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let mut rng = RngStream::new(5);
        let p = ModelParams::init(16, 3, &mut rng);
        let bytes = p.to_checkpoint_bytes();
        assert_eq!(&bytes[..5], b"UCAD1");
        assert_eq!(&bytes[5..9], &6u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &16u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &3u32.to_le_bytes());
        assert_eq!(&bytes[17..25], &p.data()[0].to_le_bytes());
        assert_eq!(bytes.len(), 17 + 8 * ModelParams::param_count(6, 16, 3));
        assert_eq!(ModelParams::from_checkpoint_bytes(&bytes).unwrap(), p);

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(ModelParams::from_checkpoint_bytes(cut), Err(Error::Parse { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            ModelParams::from_checkpoint_bytes(&bad),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(ModelParams::from_checkpoint_bytes(&bytes[..7]).is_err());
    }
}
