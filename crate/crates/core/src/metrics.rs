//! Dice similarity and average surface distance.
//!
//! Surfaces are 4-connected boundaries: a class pixel is on the boundary if
//! any 4-neighbour is outside the class, with the image border counting as
//! outside. Distances are exact Euclidean pixel distances, obtained from an
//! exact squared distance transform.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{argmax_labels, Grid2D, LabelMap};
use crate::model::{forward, ModelParams};

fn check(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            format!("{}x{}", gt.height(), gt.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    Ok(())
}

/// `2|A n B| / (|A| + |B|)` for `class`; 1 when both masks are empty.
pub fn dsc(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<f64> {
    check(pred, gt)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (ip, ig) = (p == class, g == class);
        a += ip as usize;
        b += ig as usize;
        both += (ip && ig) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Boundary pixels of `class`, as a boolean grid.
pub fn boundary(y: &LabelMap, class: u8) -> Vec<bool> {
    let (h, w) = y.shape();
    let inside = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && y.get(r as usize, c as usize) == class
    };
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if y.get(r, c) != class {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            out[r * w + c] =
                !(inside(ri - 1, ci) && inside(ri + 1, ci) && inside(ri, ci - 1) && inside(ri, ci + 1));
        }
    }
    out
}

const FAR: f64 = 1e18;

/// Exact 1-D squared distance transform of a sampled function (lower
/// envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let parabola = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = parabola(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `true` pixel.
fn squared_distance_transform(seeds: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = h.max(w);
    let (mut f, mut out, mut v, mut z) = (vec![0.0; n], vec![0.0; n], vec![0usize; n], vec![0.0; n + 1]);
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn mean_distance(from: &[bool], to_sq: &[f64]) -> f64 {
    let (sum, n) = from
        .iter()
        .zip(to_sq)
        .filter(|(f, _)| **f)
        .fold((0.0, 0usize), |(s, n), (_, d)| (s + d.sqrt(), n + 1));
    sum / n as f64
}

/// Symmetric average surface distance for `class`, in pixels.
///
/// `Some(0.0)` when both masks are empty, `None` when exactly one is.
pub fn asd(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<Option<f64>> {
    check(pred, gt)?;
    let (h, w) = pred.shape();
    let bp = boundary(pred, class);
    let bg = boundary(gt, class);
    let (np, ng) = (bp.iter().any(|&b| b), bg.iter().any(|&b| b));
    match (np, ng) {
        (false, false) => return Ok(Some(0.0)),
        (true, false) | (false, true) => return Ok(None),
        _ => {}
    }
    let to_gt = squared_distance_transform(&bg, h, w);
    let to_pred = squared_distance_transform(&bp, h, w);
    Ok(Some(0.5 * (mean_distance(&bp, &to_gt) + mean_distance(&bg, &to_pred))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub dsc: f64,
    /// Mean over images where ASD is defined; `None` if it never is.
    pub asd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Mean DSC over classes `1..C`.
    pub mean_dsc: f64,
    /// Mean ASD over foreground classes with a defined ASD.
    pub mean_asd: Option<f64>,
}

impl MetricsReport {
    /// CSV with header `class,dsc,asd,defined`; a final `mean_fg` row holds
    /// the foreground means. Undefined ASD is written as an empty field.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,dsc,asd,defined\n");
        let fmt_asd = |a: Option<f64>| a.map(|v| format!("{v:.6}")).unwrap_or_default();
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(s, "{c},{:.6},{},{}", m.dsc, fmt_asd(m.asd), m.asd.is_some());
        }
        let _ = writeln!(
            s,
            "mean_fg,{:.6},{},{}",
            self.mean_dsc,
            fmt_asd(self.mean_asd),
            self.mean_asd.is_some()
        );
        s
    }
}

/// Averages per-image metrics over `(prediction, truth)` pairs.
pub fn evaluate_labels(pairs: &[(LabelMap, LabelMap)]) -> Result<MetricsReport> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::param("split", "cannot evaluate an empty split"));
    };
    let c = first.num_classes();
    let mut dsc_sum = vec![0.0; c];
    let mut asd_sum = vec![0.0; c];
    let mut asd_n = vec![0usize; c];
    for (pred, gt) in pairs {
        for class in 0..c {
            dsc_sum[class] += dsc(pred, gt, class as u8)?;
            if let Some(a) = asd(pred, gt, class as u8)? {
                asd_sum[class] += a;
                asd_n[class] += 1;
            }
        }
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| ClassMetrics {
            dsc: dsc_sum[k] / pairs.len() as f64,
            asd: (asd_n[k] > 0).then(|| asd_sum[k] / asd_n[k] as f64),
        })
        .collect();
    let fg = &per_class[1..];
    let mean_dsc = fg.iter().map(|m| m.dsc).sum::<f64>() / fg.len() as f64;
    let defined: Vec<f64> = fg.iter().filter_map(|m| m.asd).collect();
    let mean_asd = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MetricsReport {
        per_class,
        mean_dsc,
        mean_asd,
    })
}

/// Runs `params` on every image of `split` and scores the argmax labels.
pub fn evaluate(params: &ModelParams, split: &[(Grid2D, LabelMap)]) -> Result<MetricsReport> {
    let pairs = split
        .iter()
        .map(|(img, gt)| {
            let (_, probs) = forward(params, img)?;
            Ok((argmax_labels(&probs), gt.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_labels(&pairs)
}
