//! Training objectives and their gradients with respect to student logits.
//!
//! Every loss takes the student's softmax output and returns the scalar
//! together with `dL/dz`, laid out like [`Logits`](crate::grid::Logits)
//! (pixel-major, `C` values per pixel). Gradients are first formed with
//! respect to the probabilities and then pulled back through the softmax
//! Jacobian `dp_k/dz_j = p_k (1[k=j] - p_j)`.

use crate::displacement::{entropy, Mask};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, ProbMap};

/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// Weight of the Dice term in the Dice+CE mix (CE gets `1 - DICE_WEIGHT`).
pub const DICE_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient with respect to the student logits.
    pub grad: Vec<f64>,
}

impl LossValue {
    pub fn zero(len: usize) -> Self {
        LossValue {
            value: 0.0,
            grad: vec![0.0; len],
        }
    }

    /// `self + k * other`.
    pub fn add_scaled(&self, other: &LossValue, k: f64) -> Result<LossValue> {
        if self.grad.len() != other.grad.len() {
            return Err(Error::shape(self.grad.len(), other.grad.len()));
        }
        Ok(LossValue {
            value: self.value + k * other.value,
            grad: self.grad.iter().zip(&other.grad).map(|(a, b)| a + k * b).collect(),
        })
    }

    pub fn scaled(&self, k: f64) -> LossValue {
        LossValue {
            value: k * self.value,
            grad: self.grad.iter().map(|g| k * g).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_labeled: f64,
    pub w_unlabeled: f64,
    pub lambda: f64,
    pub beta_max: f64,
    pub beta_min: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_labeled: 1.0,
            w_unlabeled: 0.5,
            lambda: 0.2,
            beta_max: 1.0,
            beta_min: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("w_l", self.w_labeled),
            ("w_u", self.w_unlabeled),
            ("lambda", self.lambda),
            ("beta_max", self.beta_max),
            ("beta_min", self.beta_min),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Pulls a probability-space gradient back to logits, in place.
fn softmax_pullback(p: &[f64], g: &mut [f64]) {
    let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
    for (gk, &pk) in g.iter_mut().zip(p) {
        *gk = pk * (*gk - dot);
    }
}

fn check_masked(pred: &ProbMap, target: &LabelMap, m: &Mask) -> Result<()> {
    if pred.shape() != target.shape() || pred.num_classes() != target.num_classes() {
        return Err(Error::shape(
            format!("{}x{} C={}", pred.height(), pred.width(), pred.num_classes()),
            format!("{}x{} C={}", target.height(), target.width(), target.num_classes()),
        ));
    }
    m.ensure_shape(pred.height(), pred.width())
}

/// Equal-weight soft Dice + cross-entropy over the pixels where `m` is set.
///
/// An empty mask yields exactly zero with a zero gradient.
pub fn dice_ce_masked(pred: &ProbMap, target: &LabelMap, m: &Mask) -> Result<LossValue> {
    check_masked(pred, target, m)?;
    let c = pred.num_classes();
    let n = m.count();
    let mut out = LossValue::zero(pred.probs().len());
    if n == 0 {
        return Ok(out);
    }
    let inv_n = 1.0 / n as f64;

    let mut inter = vec![0.0; c];
    let mut psum = vec![0.0; c];
    let mut ysum = vec![0.0; c];
    let mut ce = 0.0;
    for (i, &t) in target.labels().iter().enumerate() {
        if !m.is_set(i) {
            continue;
        }
        let px = pred.pixel(i);
        let t = t as usize;
        ce -= px[t].max(f64::MIN_POSITIVE).ln();
        inter[t] += px[t];
        ysum[t] += 1.0;
        for k in 0..c {
            psum[k] += px[k];
        }
    }
    ce *= inv_n;

    let denom: Vec<f64> = (0..c).map(|k| psum[k] + ysum[k] + DICE_EPS).collect();
    let dice = (0..c)
        .map(|k| 1.0 - (2.0 * inter[k] + DICE_EPS) / denom[k])
        .sum::<f64>()
        / c as f64;
    out.value = DICE_WEIGHT * dice + (1.0 - DICE_WEIGHT) * ce;

    // dDice_k/dp_{x,k} = -(2 y_{x,k} D_k - (2 I_k + eps)) / D_k^2, averaged over classes.
    let dice_scale = DICE_WEIGHT / c as f64;
    let ce_scale = (1.0 - DICE_WEIGHT) * inv_n;
    let mut g = vec![0.0; c];
    for (i, &t) in target.labels().iter().enumerate() {
        if !m.is_set(i) {
            continue;
        }
        let px = pred.pixel(i);
        let t = t as usize;
        for k in 0..c {
            let y = (k == t) as u8 as f64;
            g[k] = -dice_scale * (2.0 * y * denom[k] - (2.0 * inter[k] + DICE_EPS)) / (denom[k] * denom[k]);
        }
        softmax_pullback(px, &mut g);
        // Cross-entropy pulled back analytically: (p - onehot) / n.
        for k in 0..c {
            let y = (k == t) as u8 as f64;
            g[k] += ce_scale * (px[k] - y);
        }
        out.grad[i * c..(i + 1) * c].copy_from_slice(&g);
    }
    Ok(out)
}

/// Mean cross-entropy `-ln p[target]` over the set pixels of `m` (0 if empty).
pub fn masked_cross_entropy(pred: &ProbMap, target: &LabelMap, m: &Mask) -> Result<f64> {
    check_masked(pred, target, m)?;
    let (sum, n) = target
        .labels()
        .iter()
        .enumerate()
        .filter(|(i, _)| m.is_set(*i))
        .fold((0.0, 0usize), |(s, n), (i, &t)| {
            (s - pred.pixel(i)[t as usize].max(f64::MIN_POSITIVE).ln(), n + 1)
        });
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Weighted Dice+CE on the labeled region `m` and the pseudo-labeled rest.
pub fn seg_loss(pred: &ProbMap, y_l: &LabelMap, y_p: &LabelMap, m: &Mask, w: &LossWeights) -> Result<LossValue> {
    let labeled = dice_ce_masked(pred, y_l, m)?;
    let unlabeled = dice_ce_masked(pred, y_p, &m.complement())?;
    labeled.scaled(w.w_labeled).add_scaled(&unlabeled, w.w_unlabeled)
}

/// Entropy-weighted student/teacher consistency over `region`.
///
/// Per pixel: `|p_s - p_t|^2 / (exp(b H_s) + exp(b H_t)) + b (H_s + H_t)`,
/// averaged over the set pixels. The teacher is treated as a constant.
pub fn unc_loss(p_s: &ProbMap, p_t: &ProbMap, region: &Mask, beta: f64) -> Result<LossValue> {
    p_s.ensure_compatible(p_t)?;
    region.ensure_shape(p_s.height(), p_s.width())?;
    let c = p_s.num_classes();
    let n = region.count();
    let mut out = LossValue::zero(p_s.probs().len());
    if n == 0 {
        return Ok(out);
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut g_sq = vec![0.0; c];
    for i in 0..p_s.len() {
        if !region.is_set(i) {
            continue;
        }
        let ps = p_s.pixel(i);
        let pt = p_t.pixel(i);
        let hs = entropy(ps);
        let ht = entropy(pt);
        let es = (beta * hs).exp();
        let den = es + (beta * ht).exp();
        let sq: f64 = ps.iter().zip(pt).map(|(a, b)| (a - b) * (a - b)).sum();
        total += sq / den + beta * (hs + ht);

        // d|ps - pt|^2 / dz through the softmax.
        for k in 0..c {
            g_sq[k] = 2.0 * (ps[k] - pt[k]);
        }
        softmax_pullback(ps, &mut g_sq);
        // dH_s/dz_k = -p_k (ln p_k + H_s), with 0 ln 0 = 0.
        let coef_h = beta - sq * beta * es / (den * den);
        let grad = &mut out.grad[i * c..(i + 1) * c];
        for k in 0..c {
            let dh = if ps[k] > 0.0 { -ps[k] * (ps[k].ln() + hs) } else { 0.0 };
            grad[k] = inv_n * (g_sq[k] / den + coef_h * dh);
        }
    }
    out.value = total * inv_n;
    Ok(out)
}

/// Linear anneal from `beta_max` at step 0 to `beta_min` at `total_steps`.
pub fn beta_schedule(step: usize, total_steps: usize, w: &LossWeights) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::param("total_steps", "must be at least 1"));
    }
    if step > total_steps {
        return Err(Error::param("step", format!("{step} exceeds {total_steps}")));
    }
    let t = step as f64 / total_steps as f64;
    Ok(w.beta_max * (1.0 - t) + w.beta_min * t)
}

/// `seg + lambda * unc`.
pub fn total_loss(seg: &LossValue, unc: &LossValue, lambda: f64) -> Result<LossValue> {
    seg.add_scaled(unc, lambda)
}
