//! Subcommand definitions and their implementations.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ucad::data::{default_intensities, generate_dataset, load_dataset, save_dataset, Dataset, DatasetSpec};
use ucad::grid::{argmax_labels, Grid2D, LabelMap};
use ucad::metrics::{evaluate, MetricsReport};
use ucad::model::{forward, ModelParams};
use ucad::train::train;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::strategy::Strategy;

#[derive(Debug, Parser)]
#[command(name = "ucad", version, about = "Superpixel displacement semi-supervised segmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train one strategy and write checkpoints plus a loss history.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Run every strategy over several seeds.
    Ablate(AblateArgs),
    /// Print the resolved configuration in canonical form.
    PrintConfig(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub labeled: usize,
    #[arg(long, default_value_t = 38)]
    pub unlabeled: usize,
    #[arg(long, default_value_t = 10)]
    pub val: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Standard deviation of the additive pixel noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

/// Configuration file plus per-key overrides. Values are kept as text and
/// parsed by [`RunConfig::set`] so every error names its flag.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key=value` file applied before the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub strategy: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub seed: Option<String>,
    /// Superpixel count, or `auto` for one region per ~655 pixels.
    #[arg(long, allow_hyphen_values = true)]
    pub k_target: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub compactness: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub slic_iterations: Option<String>,
    /// Sampling temperature of the region distribution.
    #[arg(long, allow_hyphen_values = true)]
    pub temperature: Option<String>,
    /// Regions displaced per sample, or `quarter`.
    #[arg(long, allow_hyphen_values = true)]
    pub regions: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub w_l: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub w_u: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_max: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_min: Option<String>,
    /// EMA decay of the teacher.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub momentum: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub weight_decay: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub warmup_steps: Option<String>,
    #[arg(long, alias = "steps", allow_hyphen_values = true)]
    pub total_steps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub eval_every: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub batch: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub hidden: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 21] {
        [
            ("strategy", &self.strategy),
            ("seed", &self.seed),
            ("k_target", &self.k_target),
            ("compactness", &self.compactness),
            ("slic_iterations", &self.slic_iterations),
            ("temperature", &self.temperature),
            ("regions", &self.regions),
            ("w_l", &self.w_l),
            ("w_u", &self.w_u),
            ("lambda", &self.lambda),
            ("beta_max", &self.beta_max),
            ("beta_min", &self.beta_min),
            ("alpha", &self.alpha),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("warmup_steps", &self.warmup_steps),
            ("total_steps", &self.total_steps),
            ("eval_every", &self.eval_every),
            ("batch", &self.batch),
            ("hidden", &self.hidden),
        ]
    }

    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("--config {}: {e}", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| e.context(format!("--config {}", path.display())))?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Labeled,
    Unlabeled,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Also write image | prediction | truth triptychs as PGM.
    #[arg(long)]
    pub overlays: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
    /// A count `n` (seeds 1..=n) or a comma-separated list.
    #[arg(long, default_value = "5")]
    pub seeds: String,
    /// Worker threads; the output does not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a, out),
        Command::Train(a) => train_cmd(&a, out),
        Command::Eval(a) => eval_cmd(&a, out),
        Command::Ablate(a) => ablate(&a, out),
        Command::PrintConfig(a) => {
            let cfg = a.resolve()?;
            out.write_all(cfg.to_text().as_bytes())?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> CliResult<(DatasetSpec, Dataset)> {
    load_dataset(path).map_err(|e| CliError::from(e).context(format!("dataset {}", path.display())))
}

pub fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.labeled == 0 {
        return Err(CliError::Config("--labeled must be at least 1".into()));
    }
    if a.unlabeled == 0 {
        return Err(CliError::Config("--unlabeled must be at least 1".into()));
    }
    if a.classes < 2 {
        return Err(CliError::Config(format!("--classes must be at least 2 (got {})", a.classes)));
    }
    if a.size < 8 {
        return Err(CliError::Config(format!("--size must be at least 8 (got {})", a.size)));
    }
    let mut spec = DatasetSpec {
        height: a.size,
        width: a.size,
        num_classes: a.classes,
        class_intensity: default_intensities(a.classes),
        n_labeled: a.labeled,
        n_unlabeled: a.unlabeled,
        n_val: a.val,
        seed: a.seed,
        ..DatasetSpec::default()
    };
    // Blob radii are tuned for 64 px images; scale them with the side length.
    let scale = a.size as f64 / 64.0;
    spec.radius_min *= scale;
    spec.radius_max *= scale;
    spec.waviness *= scale;
    if let Some(noise) = a.noise {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(CliError::Config(format!("--noise must be a finite value >= 0 (got {noise})")));
        }
        spec.noise_std = noise;
    }
    spec.validate()?;
    let data = generate_dataset(&spec)?;
    save_dataset(&a.out, &spec, &data).map_err(|e| CliError::from(e).context(a.out.display()))?;
    out.write_all(spec.to_manifest().as_bytes())?;
    Ok(())
}

pub fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = a.config.resolve()?;
    let (spec, data) = load(&a.data)?;
    let tc = cfg.train_config(spec.height, spec.width);
    let outcome = train(&tc, &data, cfg.strategy.displacer(&tc).as_ref())?;
    create_dir(&a.out)?;
    write_file(&a.out.join("student.ckpt"), &outcome.student.to_checkpoint_bytes())?;
    write_file(&a.out.join("teacher.ckpt"), &outcome.teacher.to_checkpoint_bytes())?;
    write_file(&a.out.join("history.csv"), outcome.history.to_csv().as_bytes())?;
    write_file(&a.out.join("config.txt"), cfg.to_text().as_bytes())?;
    match outcome.history.last_val_dsc() {
        Some(d) => writeln!(out, "strategy={} seed={} final_val_dsc={d:.6}", cfg.strategy, cfg.seed)?,
        None => writeln!(out, "strategy={} seed={} (no validation split)", cfg.strategy, cfg.seed)?,
    }
    Ok(())
}

fn split_items(data: &Dataset, split: SplitArg) -> Vec<(Grid2D, LabelMap)> {
    match split {
        SplitArg::Val => data.validation.clone(),
        SplitArg::Labeled => data.labeled.clone(),
        SplitArg::Unlabeled => data.unlabeled.evaluation_truth(),
    }
}

fn split_name(split: SplitArg) -> &'static str {
    match split {
        SplitArg::Val => "val",
        SplitArg::Labeled => "labeled",
        SplitArg::Unlabeled => "unlabeled",
    }
}

/// Three panels side by side: image, prediction, truth. Labels are spread
/// over the 8-bit range.
pub fn triptych(img: &Grid2D, pred: &LabelMap, truth: &LabelMap) -> Vec<u8> {
    let (h, w) = img.shape();
    let top = (truth.num_classes() - 1).max(1) as u32;
    let level = |l: u8| ((l as u32 * 255 + top / 2) / top) as u8;
    let mut bytes = format!("P5\n{} {h}\n255\n", 3 * w).into_bytes();
    for r in 0..h {
        bytes.extend((0..w).map(|c| (img.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8));
        bytes.extend((0..w).map(|c| level(pred.get(r, c))));
        bytes.extend((0..w).map(|c| level(truth.get(r, c))));
    }
    bytes
}

pub fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let bytes = fs::read(&a.checkpoint).map_err(|e| CliError::Data(format!("checkpoint {}: {e}", a.checkpoint.display())))?;
    let params = ModelParams::from_checkpoint_bytes(&bytes)
        .map_err(|e| CliError::from(e).context(format!("checkpoint {}", a.checkpoint.display())))?;
    let (spec, data) = load(&a.data)?;
    if params.classes() != spec.num_classes {
        return Err(CliError::Data(format!(
            "checkpoint predicts {} classes but the dataset has {}",
            params.classes(),
            spec.num_classes
        )));
    }
    let items = split_items(&data, a.split);
    if items.is_empty() {
        return Err(CliError::Data(format!("split `{}` is empty", split_name(a.split))));
    }
    let report = evaluate(&params, &items)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("metrics.csv"), report.to_csv().as_bytes())?;
    if a.overlays {
        let dir = a.out.join("overlays");
        create_dir(&dir)?;
        for (i, (img, truth)) in items.iter().enumerate() {
            let (_, probs) = forward(&params, img)?;
            let name = format!("{}_{i:04}.pgm", split_name(a.split));
            write_file(&dir.join(name), &triptych(img, &argmax_labels(&probs), truth))?;
        }
    }
    out.write_all(report.to_csv().as_bytes())?;
    Ok(())
}

/// Parses `--seeds`: a count `n` means `1..=n`, a list is used as given.
pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Config(format!("--seeds must be a count or a comma-separated list (got `{text}`)"));
    let seeds: Vec<u64> = if text.contains(',') {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    } else {
        let n: u64 = text.trim().parse().map_err(|_| bad())?;
        (1..=n).collect()
    };
    if seeds.is_empty() {
        return Err(CliError::Config("--seeds must select at least one seed".into()));
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub dsc: f64,
    pub asd: Option<f64>,
}

/// Median of a non-empty list (mean of the two middle values when even).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Runs every strategy for every seed on `data`, using up to `jobs`
/// threads. Rows come back in table order, then seed order.
pub fn run_ablation(base: &RunConfig, data: &Dataset, height: usize, width: usize, seeds: &[u64], jobs: usize) -> CliResult<Vec<AblationRow>> {
    let cells: Vec<(Strategy, u64)> = Strategy::ALL
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let slots: Vec<Mutex<Option<CliResult<AblationRow>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let run_cell = |(strategy, seed): (Strategy, u64)| -> CliResult<AblationRow> {
        let cfg = RunConfig {
            strategy,
            seed,
            ..base.clone()
        };
        let tc = cfg.train_config(height, width);
        let outcome = train(&tc, data, strategy.displacer(&tc).as_ref())
            .map_err(|e| CliError::from(e).context(format!("{strategy} seed {seed}")))?;
        let report: MetricsReport = evaluate(&outcome.student, &data.validation)?;
        Ok(AblationRow {
            strategy,
            seed,
            dsc: report.mean_dsc,
            asd: report.mean_asd,
        })
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let result = run_cell(cell);
                *slots[i].lock().expect("no worker panics while holding a slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("workers finished").expect("every cell ran"))
        .collect()
}

/// CSV body: one row per run, then one `median` row per strategy.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let fmt_asd = |a: Option<f64>| a.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut s = String::from("strategy,seed,dsc,asd\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{}", r.strategy, r.seed, r.dsc, fmt_asd(r.asd));
    }
    for strategy in Strategy::ALL {
        let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
        if mine.is_empty() {
            continue;
        }
        let dsc: Vec<f64> = mine.iter().map(|r| r.dsc).collect();
        let asd: Vec<f64> = mine.iter().filter_map(|r| r.asd).collect();
        let _ = writeln!(
            s,
            "{strategy},median,{:.6},{}",
            median(&dsc).expect("non-empty"),
            fmt_asd(median(&asd))
        );
    }
    s
}

pub fn ablate(a: &AblateArgs, out: &mut dyn Write) -> CliResult<()> {
    let base = a.config.resolve()?;
    let seeds = parse_seeds(&a.seeds)?;
    let jobs = match a.jobs {
        Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let (spec, data) = load(&a.data)?;
    if data.validation.is_empty() {
        return Err(CliError::Data("ablation needs a non-empty validation split".into()));
    }
    let rows = run_ablation(&base, &data, spec.height, spec.width, &seeds, jobs)?;
    let csv = ablation_csv(&rows);
    create_dir(&a.out)?;
    write_file(&a.out.join("ablation.csv"), csv.as_bytes())?;
    write_file(&a.out.join("config.txt"), base.to_text().as_bytes())?;
    out.write_all(csv.as_bytes())?;
    Ok(())
}
