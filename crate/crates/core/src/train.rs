//! Mean-teacher training with bidirectional region displacement.
//!
//! Each step draws a labeled and an unlabeled image, lets the teacher
//! pseudo-label them, builds one mixed sample in each direction, and trains
//! the student on both with the segmentation loss plus the entropy-weighted
//! consistency loss. The teacher then follows the student by EMA.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::displacement::{Direction, DisplacementConfig, Displacer, MixedSample, PairView};
use crate::error::{Error, Result};
use crate::grid::{argmax_labels, Grid2D, LabelMap};
use crate::losses::{beta_schedule, dice_ce_masked, seg_loss, total_loss, unc_loss, LossWeights};
use crate::metrics::evaluate;
use crate::model::{
    backward_features, ema_update, forward, forward_features, sgd_step, FeatureMap, ModelParams, OptimState,
    DEFAULT_HIDDEN,
};
use crate::displacement::Mask;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub displacement: DisplacementConfig,
    pub weights: LossWeights,
    /// When false the consistency loss is still computed and logged but does
    /// not enter the total.
    pub use_unc_loss: bool,
    pub ema_alpha: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN,
            displacement: DisplacementConfig::default(),
            weights: LossWeights::default(),
            use_unc_loss: true,
            ema_alpha: 0.99,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_steps: 200,
            total_steps: 2000,
            eval_every: 100,
            batch: 1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.hidden == 0 {
            return Err(Error::param("hidden", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::param("alpha", format!("{} not in [0, 1]", self.ema_alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param("weight_decay", "must be nonnegative"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
        if !(self.displacement.temperature > 0.0 && self.displacement.temperature.is_finite()) {
            return Err(Error::param("temperature", "must be positive"));
        }
        if self.displacement.slic.compactness.is_nan() || self.displacement.slic.compactness <= 0.0 {
            return Err(Error::param("compactness", "must be positive"));
        }
        if self.displacement.slic.k_target == 0 {
            return Err(Error::param("k_target", "must be at least 1"));
        }
        if self.displacement.slic.iterations == 0 {
            return Err(Error::param("slic_iterations", "must be at least 1"));
        }
        Ok(())
    }

    fn effective_lambda(&self) -> f64 {
        if self.use_unc_loss {
            self.weights.lambda
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_seg: f64,
    pub l_unc: f64,
    pub l_total: f64,
    pub beta: f64,
    pub val_dsc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,l_seg,l_unc,l_total,beta,val_dsc\n");
        for r in &self.records {
            let dsc = r.val_dsc.map(|d| format!("{d:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:.9},{:.9},{:.9},{:.6},{}",
                r.step, r.l_seg, r.l_unc, r.l_total, r.beta, dsc
            );
        }
        s
    }

    pub fn last_val_dsc(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_dsc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub history: TrainHistory,
}

/// Losses of one mixed sample and the parameter gradient they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionLoss {
    pub l_seg: f64,
    pub l_unc: f64,
    pub l_total: f64,
    pub grad: ModelParams,
}

/// Segmentation + consistency loss of the student on one mixed sample.
///
/// The teacher re-infers the mixed image; the consistency term covers the
/// pixels that came from the unlabeled image.
pub fn mixed_sample_loss(
    student: &ModelParams,
    teacher: &ModelParams,
    mixed: &MixedSample,
    weights: &LossWeights,
    beta: f64,
    lambda: f64,
) -> Result<DirectionLoss> {
    let feats = FeatureMap::extract(&mixed.image);
    let (_, p_s) = forward_features(student, &feats)?;
    let (_, p_t) = forward_features(teacher, &feats)?;
    let labeled = mixed.labeled_region();
    let seg = seg_loss(&p_s, &mixed.label, &mixed.label, &labeled, weights)?;
    let unc = unc_loss(&p_s, &p_t, &labeled.complement(), beta)?;
    let total = total_loss(&seg, &unc, lambda)?;
    if !total.value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (seg {}, unc {})",
            seg.value, unc.value
        )));
    }
    Ok(DirectionLoss {
        l_seg: seg.value,
        l_unc: unc.value,
        l_total: total.value,
        grad: backward_features(student, &feats, &total.grad)?,
    })
}

/// Both mixed samples for one labeled/unlabeled pair: unlabeled regions
/// pasted into the labeled image, then labeled regions pasted into the
/// unlabeled image. Each direction draws its own mask.
pub fn displace_both(
    displacer: &dyn Displacer,
    teacher: &ModelParams,
    labeled: (&Grid2D, &LabelMap),
    unlabeled: &Grid2D,
    rng: &mut RngStream,
) -> Result<[MixedSample; 2]> {
    let (x_l, y_l) = labeled;
    let (_, p_u) = forward(teacher, unlabeled)?;
    let y_p = argmax_labels(&p_u);
    let (_, p_l) = forward(teacher, x_l)?;
    let forward_dir = displacer.displace(
        PairView {
            x_src: unlabeled,
            y_src: &y_p,
            x_dst: x_l,
            y_dst: y_l,
            p_src: &p_u,
        },
        Direction::UnlabeledIntoLabeled,
        rng,
    )?;
    let reverse_dir = displacer.displace(
        PairView {
            x_src: x_l,
            y_src: y_l,
            x_dst: unlabeled,
            y_dst: &y_p,
            p_src: &p_l,
        },
        Direction::LabeledIntoUnlabeled,
        rng,
    )?;
    Ok([forward_dir, reverse_dir])
}

fn accumulate(acc: &mut ModelParams, g: &ModelParams, scale: f64) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += scale * b;
    }
}

const WARMUP_STREAM: u64 = 1;
const MAIN_STREAM: u64 = 2;

fn member_stream(root: &RngStream, phase: u64, step: usize, member: usize) -> RngStream {
    root.fork((phase << 56) | ((step as u64) << 16) | member as u64)
}

/// Runs warm-up and the mean-teacher loop.
pub fn train(cfg: &TrainConfig, data: &Dataset, displacer: &dyn Displacer) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::param("labeled", "training needs at least one labeled image"));
    }
    if data.unlabeled.is_empty() {
        return Err(Error::param("unlabeled", "training needs at least one unlabeled image"));
    }
    let classes = data.labeled[0].1.num_classes();
    let root = RngStream::new(cfg.seed);
    let mut student = ModelParams::init(cfg.hidden, classes, &mut root.fork(0));
    let mut opt = OptimState::new(&student, cfg.lr, cfg.momentum, cfg.weight_decay);
    let inv_batch = 1.0 / cfg.batch as f64;

    for step in 0..cfg.warmup_steps {
        let mut grad = ModelParams::zeros(cfg.hidden, classes);
        for m in 0..cfg.batch {
            let mut rng = member_stream(&root, WARMUP_STREAM, step, m);
            let (x, y) = &data.labeled[rng.below(data.labeled.len())];
            let feats = FeatureMap::extract(x);
            let (_, p) = forward_features(&student, &feats)?;
            let loss = dice_ce_masked(&p, y, &Mask::ones(x.height(), x.width()))?;
            if !loss.value.is_finite() {
                return Err(Error::Numeric(format!("non-finite warm-up loss at step {step}")));
            }
            accumulate(&mut grad, &backward_features(&student, &feats, &loss.grad)?, inv_batch);
        }
        sgd_step(&mut student, &grad, &mut opt)?;
    }

    let mut teacher = student.clone();
    let mut history = TrainHistory::default();
    let lambda = cfg.effective_lambda();
    let unlabeled = data.unlabeled.images();
    let scale = inv_batch * 0.5;

    for step in 0..cfg.total_steps {
        let beta = beta_schedule(step, cfg.total_steps, &cfg.weights)?;
        let mut grad = ModelParams::zeros(cfg.hidden, classes);
        let (mut l_seg, mut l_unc, mut l_total) = (0.0, 0.0, 0.0);
        for m in 0..cfg.batch {
            let mut rng = member_stream(&root, MAIN_STREAM, step, m);
            let (x_l, y_l) = &data.labeled[rng.below(data.labeled.len())];
            let x_u = &unlabeled[rng.below(unlabeled.len())];
            let mixed = displace_both(displacer, &teacher, (x_l, y_l), x_u, &mut rng)?;
            for sample in &mixed {
                let d = mixed_sample_loss(&student, &teacher, sample, &cfg.weights, beta, lambda)?;
                l_seg += scale * d.l_seg;
                l_unc += scale * d.l_unc;
                l_total += scale * d.l_total;
                accumulate(&mut grad, &d.grad, scale);
            }
        }

        let teacher_sum = teacher.checksum();
        sgd_step(&mut student, &grad, &mut opt)
            .map_err(|e| Error::Numeric(format!("step {}: {e}", step + 1)))?;
        debug_assert_eq!(teacher.checksum(), teacher_sum, "optimizer touched the teacher");
        let student_sum = student.checksum();
        teacher = ema_update(&teacher, &student, cfg.ema_alpha)?;
        debug_assert_eq!(student.checksum(), student_sum, "EMA touched the student");

        let done = step + 1;
        let val_dsc = if !data.validation.is_empty() && (done % cfg.eval_every == 0 || done == cfg.total_steps) {
            Some(evaluate(&student, &data.validation)?.mean_dsc)
        } else {
            None
        };
        history.records.push(StepRecord {
            step: done,
            l_seg,
            l_unc,
            l_total,
            beta,
            val_dsc,
        });
    }

    Ok(TrainOutcome {
        student,
        teacher,
        history,
    })
}
