//! Analytic gradients against central finite differences.
//!
//! Agreement is measured as `|a - n| / max(|a| + |n|, 1e-8)` over the whole
//! gradient vector, which stays meaningful when single entries are tiny.

use ucad::displacement::Mask;
use ucad::grid::{softmax_channels, Grid2D, LabelMap, Logits, ProbMap};
use ucad::losses::{dice_ce_masked, seg_loss, total_loss, unc_loss, LossWeights};
use ucad::model::{backward, forward, ModelParams};
use ucad::rng::RngStream;

const H: usize = 4;
const W: usize = 4;
const C: usize = 3;
const INSTANCES: u64 = 25;
const TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / (norm(a) + norm(n)).max(1e-8)
}

fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn probs_of(z: &[f64]) -> ProbMap {
    softmax_channels(&Logits::new(H, W, C, z.to_vec()).unwrap()).unwrap()
}

fn random_logits(rng: &mut RngStream) -> Vec<f64> {
    (0..H * W * C).map(|_| rng.normal(0.0, 1.5)).collect()
}

fn random_labels(rng: &mut RngStream) -> LabelMap {
    LabelMap::new(H, W, C, (0..H * W).map(|_| rng.below(C) as u8).collect()).unwrap()
}

fn random_mask(rng: &mut RngStream) -> Mask {
    loop {
        let m = Mask::from_fn(H, W, |_, _| rng.uniform() < 0.6);
        if m.count() > 0 {
            return m;
        }
    }
}

#[test]
fn dice_ce_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = RngStream::new(seed);
        let z = random_logits(&mut rng);
        let y = random_labels(&mut rng);
        let m = random_mask(&mut rng);
        let analytic = dice_ce_masked(&probs_of(&z), &y, &m).unwrap().grad;
        let numeric = numeric_grad(&z, |z| dice_ce_masked(&probs_of(z), &y, &m).unwrap().value);
        let e = rel_err(&analytic, &numeric);
        assert!(e <= TOL, "seed {seed}: relative error {e}");
    }
}

#[test]
fn unc_loss_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = RngStream::new(100 + seed);
        let z = random_logits(&mut rng);
        let p_t = probs_of(&random_logits(&mut rng));
        let m = random_mask(&mut rng);
        let beta = rng.uniform_range(0.0, 2.0);
        let analytic = unc_loss(&probs_of(&z), &p_t, &m, beta).unwrap().grad;
        let numeric = numeric_grad(&z, |z| unc_loss(&probs_of(z), &p_t, &m, beta).unwrap().value);
        let e = rel_err(&analytic, &numeric);
        assert!(e <= TOL, "seed {seed}: relative error {e}");
    }
}

#[test]
fn total_loss_gradient_through_model_matches_finite_differences() {
    let weights = LossWeights::default();
    for seed in 0..INSTANCES {
        let mut rng = RngStream::new(200 + seed);
        let img = Grid2D::from_fn(H, W, |_, _| rng.uniform()).unwrap();
        let mut params = ModelParams::init(8, C, &mut rng);
        // Give the coordinate rows nonzero weights so they are exercised too.
        for v in params.data_mut().iter_mut() {
            if *v == 0.0 {
                *v = rng.normal(0.0, 0.3);
            }
        }
        let y_l = random_labels(&mut rng);
        let y_p = random_labels(&mut rng);
        let m = random_mask(&mut rng);
        let p_t = probs_of(&random_logits(&mut rng));
        let beta = rng.uniform_range(0.1, 1.0);

        let loss = |p: &ModelParams| {
            let (_, probs) = forward(p, &img).unwrap();
            let seg = seg_loss(&probs, &y_l, &y_p, &m, &weights).unwrap();
            let unc = unc_loss(&probs, &p_t, &m.complement(), beta).unwrap();
            total_loss(&seg, &unc, weights.lambda).unwrap()
        };
        let analytic = backward(&params, &img, &loss(&params).grad).unwrap();
        let numeric = numeric_grad(params.data(), |x| {
            let p = ModelParams::from_vec(params.features(), params.hidden(), C, x.to_vec()).unwrap();
            loss(&p).value
        });
        let e = rel_err(analytic.data(), &numeric);
        assert!(e <= TOL, "seed {seed}: relative error {e}");
    }
}
