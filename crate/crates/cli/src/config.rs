//! Run configuration: every tunable of the pipeline in one flat record.
//!
//! The text form is one `key=value` per line; `#` starts a comment. Command
//! line flags are the same keys with dashes (`weight_decay` is
//! `--weight-decay`) and are applied after the file, so flags win.

use std::fmt;
use std::str::FromStr;

use ucad::displacement::{DisplacementConfig, RegionCount, Selection};
use ucad::losses::LossWeights;
use ucad::model::DEFAULT_HIDDEN;
use ucad::superpixel::{default_k_target, SlicParams};
use ucad::train::TrainConfig;

use crate::error::{CliError, CliResult};
use crate::strategy::Strategy;

/// Superpixel count: derived from the image size or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KTarget {
    Auto,
    Fixed(usize),
}

impl KTarget {
    pub fn resolve(self, height: usize, width: usize) -> usize {
        match self {
            KTarget::Auto => default_k_target(height, width),
            KTarget::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k_target: KTarget,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub temperature: f64,
    pub regions: RegionCount,
    pub w_l: f64,
    pub w_u: f64,
    pub lambda: f64,
    pub beta_max: f64,
    pub beta_min: f64,
    pub alpha: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

/// Keys in canonical dump order.
pub const KEYS: [&str; 21] = [
    "strategy",
    "seed",
    "k_target",
    "compactness",
    "slic_iterations",
    "temperature",
    "regions",
    "w_l",
    "w_u",
    "lambda",
    "beta_max",
    "beta_min",
    "alpha",
    "lr",
    "momentum",
    "weight_decay",
    "warmup_steps",
    "total_steps",
    "eval_every",
    "batch",
    "hidden",
];

impl Default for RunConfig {
    fn default() -> Self {
        let slic = SlicParams::default();
        let disp = DisplacementConfig::default();
        let w = LossWeights::default();
        let t = TrainConfig::default();
        RunConfig {
            k_target: KTarget::Auto,
            compactness: slic.compactness,
            slic_iterations: slic.iterations,
            temperature: disp.temperature,
            regions: disp.regions,
            w_l: w.w_labeled,
            w_u: w.w_unlabeled,
            lambda: w.lambda,
            beta_max: w.beta_max,
            beta_min: w.beta_min,
            alpha: t.ema_alpha,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            warmup_steps: t.warmup_steps,
            total_steps: t.total_steps,
            eval_every: t.eval_every,
            batch: t.batch,
            hidden: DEFAULT_HIDDEN,
            seed: t.seed,
            strategy: Strategy::Full,
        }
    }
}

fn flag(key: &str) -> String {
    format!("--{}", key.replace('_', "-"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{}: cannot parse `{value}`", flag(key))))
}

fn check(ok: bool, key: &str, rule: &str, value: impl fmt::Display) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} must be {rule} (got {value})", flag(key))))
    }
}

impl RunConfig {
    /// Sets one key from its text value. Range checks happen in
    /// [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "strategy" => self.strategy = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "k_target" => {
                self.k_target = match value.trim() {
                    "auto" => KTarget::Auto,
                    v => KTarget::Fixed(parse(key, v)?),
                }
            }
            "compactness" => self.compactness = parse(key, value)?,
            "slic_iterations" => self.slic_iterations = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "regions" => {
                self.regions = match value.trim() {
                    "quarter" => RegionCount::Quarter,
                    v => RegionCount::Fixed(parse(key, v)?),
                }
            }
            "w_l" => self.w_l = parse(key, value)?,
            "w_u" => self.w_u = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta_max" => self.beta_max = parse(key, value)?,
            "beta_min" => self.beta_min = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "strategy" => self.strategy.to_string(),
            "seed" => self.seed.to_string(),
            "k_target" => match self.k_target {
                KTarget::Auto => "auto".into(),
                KTarget::Fixed(k) => k.to_string(),
            },
            "compactness" => self.compactness.to_string(),
            "slic_iterations" => self.slic_iterations.to_string(),
            "temperature" => self.temperature.to_string(),
            "regions" => match self.regions {
                RegionCount::Quarter => "quarter".into(),
                RegionCount::Fixed(n) => n.to_string(),
            },
            "w_l" => self.w_l.to_string(),
            "w_u" => self.w_u.to_string(),
            "lambda" => self.lambda.to_string(),
            "beta_max" => self.beta_max.to_string(),
            "beta_min" => self.beta_min.to_string(),
            "alpha" => self.alpha.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "batch" => self.batch.to_string(),
            "hidden" => self.hidden.to_string(),
            _ => return None,
        })
    }

    /// Applies a `key=value` document on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| e.context(format!("line {}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical dump: every key, fixed order, values that parse back
    /// to the same config.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("every listed key has a value")))
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let nonneg = |key: &str, v: f64| check(v >= 0.0 && v.is_finite(), key, "a finite value >= 0", v);
        let positive = |key: &str, v: f64| check(v > 0.0 && v.is_finite(), key, "a finite value > 0", v);
        if let KTarget::Fixed(k) = self.k_target {
            check(k >= 1, "k_target", "at least 1 or `auto`", k)?;
        }
        positive("compactness", self.compactness)?;
        check(self.slic_iterations >= 1, "slic_iterations", "at least 1", self.slic_iterations)?;
        positive("temperature", self.temperature)?;
        nonneg("w_l", self.w_l)?;
        nonneg("w_u", self.w_u)?;
        nonneg("lambda", self.lambda)?;
        nonneg("beta_max", self.beta_max)?;
        nonneg("beta_min", self.beta_min)?;
        check(self.beta_min <= self.beta_max, "beta_min", "<= beta_max", self.beta_min)?;
        check((0.0..=1.0).contains(&self.alpha), "alpha", "in [0, 1]", self.alpha)?;
        positive("lr", self.lr)?;
        check((0.0..1.0).contains(&self.momentum), "momentum", "in [0, 1)", self.momentum)?;
        nonneg("weight_decay", self.weight_decay)?;
        check(self.eval_every >= 1, "eval_every", "at least 1", self.eval_every)?;
        check(self.batch >= 1, "batch", "at least 1", self.batch)?;
        check(self.hidden >= 1, "hidden", "at least 1", self.hidden)?;
        Ok(())
    }

    /// Trainer settings for images of the given size.
    pub fn train_config(&self, height: usize, width: usize) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            displacement: DisplacementConfig {
                slic: SlicParams {
                    k_target: self.k_target.resolve(height, width),
                    compactness: self.compactness,
                    iterations: self.slic_iterations,
                },
                temperature: self.temperature,
                regions: self.regions,
                selection: if self.strategy == Strategy::Cad {
                    Selection::Uniform
                } else {
                    Selection::Uncertainty
                },
            },
            weights: LossWeights {
                w_labeled: self.w_l,
                w_unlabeled: self.w_u,
                lambda: self.lambda,
                beta_max: self.beta_max,
                beta_min: self.beta_min,
            },
            use_unc_loss: self.strategy == Strategy::Full,
            ema_alpha: self.alpha,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
            eval_every: self.eval_every,
            batch: self.batch,
            seed: self.seed,
        }
    }
}
