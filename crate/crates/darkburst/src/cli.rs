//! Command-line front end: `synth`, `train`, `denoise` and `eval`.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use darkburst_core::model::{build_model, forward_burst, ArchitectureConfig};
use darkburst_core::raw::{preprocess_burst, BayerPattern};
use darkburst_core::synth::{procedural_scene, synthesize_burst, NoiseModel, DEFAULT_BLACK_LEVEL, DEFAULT_WHITE_LEVEL};
use darkburst_core::train::{evaluate_burst, EpochRecord, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::dataset::{self, MANIFEST};
use crate::dbraw;
use crate::kv::KeyValues;
use crate::ppm;

pub const SEED_ENV: &str = "DARKBURST_SEED";
pub const LOG_HEADER: &str = "epoch,lr,train_loss,eval_psnr,eval_ssim";
pub const EVAL_HEADER: &str = "burst,frame,psnr_m,ssim_m,psnr_s,ssim_s,psnr_baseline,ssim_baseline";

pub const CKPT_BEST: &str = "ckpt_best.dbw";
pub const CKPT_LAST: &str = "ckpt_last.dbw";
pub const LOG_CSV: &str = "log.csv";
const MOMENTS: &str = "adam_moments.dbw";
const STATE: &str = "train_state.txt";

#[derive(Debug, Parser)]
#[command(name = "darkburst", version, about = "Recurrent denoising of dark raw bursts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic dark bursts from procedural scenes or PPM images.
    Synth(SynthArgs),
    /// Train a model on a directory of bursts with references.
    Train(TrainArgs),
    /// Denoise one burst into PPM images.
    Denoise(DenoiseArgs),
    /// Score a checkpoint on a directory of bursts with references.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").args(["procedural", "src", "config"]).multiple(true).required(true)))]
pub struct SynthArgs {
    /// Number of procedural scenes to generate.
    #[arg(long, value_name = "N")]
    pub procedural: Option<usize>,
    /// Directory of P6 PPM clean images.
    #[arg(long, value_name = "DIR")]
    pub src: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// key=value file; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Frames per burst.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub frames: Option<u16>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side of procedural scenes in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub read_noise: Option<f64>,
    #[arg(long)]
    pub shot_gain: Option<f64>,
    #[arg(long)]
    pub underexposure: Option<f64>,
    /// rggb, bggr, grbg or gbrg.
    #[arg(long)]
    pub pattern: Option<String>,
    #[arg(long)]
    pub black: Option<u16>,
    #[arg(long)]
    pub white: Option<u16>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training bursts.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Held-out bursts for per-epoch evaluation (defaults to the training set).
    #[arg(long, value_name = "DIR")]
    pub eval_data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// key=value file, e.g. a previous run's manifest; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Continue from the state saved in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_halving: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub frames: Option<u16>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub ratio: Option<f32>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Amplification ratio; read from the input directory's manifest if absent.
    #[arg(long)]
    pub ratio: Option<f32>,
    /// Write every multi-frame output as out_01.ppm, out_02.ppm, ...
    #[arg(long)]
    pub emit_all_frames: bool,
    /// Expected network depth; checked against the checkpoint.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Expected base width; checked against the checkpoint.
    #[arg(long)]
    pub base: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub ratio: Option<f32>,
}

/// Parses `args` (including the program name) and runs the command. Usage
/// errors exit the process with status 2 through clap.
pub fn run_from<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(Cli::parse_from(args))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Denoise(a) => denoise(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not a seed"))?)),
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<KeyValues> {
    match path {
        Some(p) => KeyValues::read(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(KeyValues::new()),
    }
}

/// Keys that identify a manifest rather than configure a run.
const PROVENANCE_KEYS: &[&str] = &["tool", "version", "command"];

fn check_keys(kv: &KeyValues, known: &[&str]) -> anyhow::Result<()> {
    for k in kv.keys() {
        if !known.contains(&k) && !PROVENANCE_KEYS.contains(&k) {
            bail!("unknown config key `{k}`");
        }
    }
    Ok(())
}

/// Flag, else config entry, else default.
fn pick<T: std::str::FromStr>(flag: Option<T>, kv: &KeyValues, key: &str, default: T) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => v,
        None => kv.parsed(key)?.unwrap_or(default),
    })
}

fn pick_path(flag: &Option<PathBuf>, kv: &KeyValues, key: &str) -> Option<PathBuf> {
    flag.clone().or_else(|| kv.get(key).filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn provenance(command: &str) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("tool", "darkburst");
    kv.set("version", env!("CARGO_PKG_VERSION"));
    kv.set("command", command);
    kv
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

const SYNTH_KEYS: &[&str] = &[
    "procedural",
    "src",
    "out",
    "frames",
    "seed",
    "size",
    "read_noise_sigma",
    "shot_noise_gain",
    "underexposure_factor",
    "amplification_ratio",
    "pattern",
    "black_level",
    "white_level",
    "count",
];

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let kv = load_config(a.config.as_deref())?;
    check_keys(&kv, SYNTH_KEYS)?;
    let out = pick_path(&a.out, &kv, "out").context("missing --out")?;
    let src = pick_path(&a.src, &kv, "src");
    let procedural: Option<usize> = match a.procedural {
        Some(n) => Some(n),
        None if src.is_none() => kv.parsed("procedural")?,
        None => None,
    };
    if src.is_some() && procedural.is_some() {
        bail!("--procedural and --src are mutually exclusive");
    }
    let frames: u16 = pick(a.frames, &kv, "frames", 4)?;
    ensure!(frames >= 1, "frames must be at least 1");
    let seed = match a.seed.or(kv.parsed("seed")?) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let size: usize = pick(a.size, &kv, "size", 128)?;
    let defaults = NoiseModel::default();
    let noise = NoiseModel {
        read_noise_sigma: pick(a.read_noise, &kv, "read_noise_sigma", defaults.read_noise_sigma)?,
        shot_noise_gain: pick(a.shot_gain, &kv, "shot_noise_gain", defaults.shot_noise_gain)?,
        underexposure_factor: pick(a.underexposure, &kv, "underexposure_factor", defaults.underexposure_factor)?,
    };
    noise.validate()?;
    let pattern = BayerPattern::from_name(&pick(a.pattern.clone(), &kv, "pattern", "rggb".to_owned())?)?;
    let black: u16 = pick(a.black, &kv, "black_level", DEFAULT_BLACK_LEVEL)?;
    let white: u16 = pick(a.white, &kv, "white_level", DEFAULT_WHITE_LEVEL)?;

    let scenes: Vec<Box<dyn Fn(&mut ChaCha8Rng) -> anyhow::Result<darkburst_core::Image>>> = match (&src, procedural) {
        (Some(dir), _) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .with_context(|| format!("cannot read source directory {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no .ppm images in {}", dir.display());
            }
            paths
                .into_iter()
                .map(|p| {
                    Box::new(move |_: &mut ChaCha8Rng| {
                        let img = ppm::read(&p).with_context(|| format!("reading {}", p.display()))?;
                        Ok(even_crop(&img))
                    }) as Box<dyn Fn(&mut ChaCha8Rng) -> _>
                })
                .collect()
        }
        (None, Some(n)) => {
            ensure!(size >= 2 && size.is_multiple_of(2), "--size must be even and at least 2");
            (0..n)
                .map(|_| Box::new(move |rng: &mut ChaCha8Rng| Ok(procedural_scene(size, size, rng))) as Box<dyn Fn(&mut ChaCha8Rng) -> _>)
                .collect()
        }
        (None, None) => bail!("one of --procedural or --src is required"),
    };

    ensure_dir(&out)?;
    for (i, scene) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let clean = scene(&mut rng)?;
        let burst = synthesize_burst(&clean, &noise, frames as usize, pattern, black, white, &mut rng)?;
        dbraw::write(out.join(format!("burst_{i:04}.{}", dbraw::EXTENSION)), &burst)?;
    }

    let mut m = provenance("synth");
    match (&src, procedural) {
        (Some(dir), _) => m.set("src", dir.display()),
        (None, Some(n)) => m.set("procedural", n),
        _ => unreachable!(),
    }
    m.set("out", out.display());
    m.set("frames", frames);
    m.set("seed", seed);
    m.set("size", size);
    m.set("read_noise_sigma", noise.read_noise_sigma);
    m.set("shot_noise_gain", noise.shot_noise_gain);
    m.set("underexposure_factor", noise.underexposure_factor);
    m.set("amplification_ratio", noise.amplification_ratio());
    m.set("pattern", pattern.name());
    m.set("black_level", black);
    m.set("white_level", white);
    m.set("count", scenes.len());
    m.write(out.join(MANIFEST))?;
    eprintln!("wrote {} bursts to {}", scenes.len(), out.display());
    Ok(())
}

/// Drops a trailing row or column so both extents are even.
fn even_crop(img: &darkburst_core::Image) -> darkburst_core::Image {
    let (h, w) = (img.height & !1, img.width & !1);
    darkburst_core::Image::from_fn(img.channels, h, w, |c, y, x| img.get(c, y, x))
}

const TRAIN_KEYS: &[&str] = &[
    "data",
    "eval_data",
    "out",
    "epochs",
    "initial_lr",
    "lr_halving_period",
    "patch_size",
    "frames_per_burst",
    "depth",
    "base_channels",
    "seed",
    "augment",
    "amplification_ratio",
];

/// Fully resolved `train` settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub data: PathBuf,
    pub eval_data: Option<PathBuf>,
    pub out: PathBuf,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub ratio: f32,
}

impl TrainPlan {
    pub fn manifest(&self) -> KeyValues {
        let mut m = provenance("train");
        m.set("data", self.data.display());
        m.set(
            "eval_data",
            self.eval_data.as_ref().map_or_else(String::new, |p| p.display().to_string()),
        );
        m.set("out", self.out.display());
        m.set("depth", self.arch.depth);
        m.set("base_channels", self.arch.base_channels);
        m.set("epochs", self.train.epochs);
        m.set("initial_lr", self.train.initial_lr);
        m.set("lr_halving_period", self.train.lr_halving_period);
        m.set("patch_size", self.train.patch_size);
        m.set("frames_per_burst", self.train.frames_per_burst);
        m.set("seed", self.train.seed);
        m.set("augment", self.train.augment);
        m.set("amplification_ratio", self.ratio);
        m
    }
}

pub fn plan_train(a: &TrainArgs) -> anyhow::Result<TrainPlan> {
    let config_path = match (&a.config, a.resume, &a.out) {
        (Some(p), _, _) => Some(p.clone()),
        (None, true, Some(out)) => Some(out.join(MANIFEST)),
        _ => None,
    };
    let kv = load_config(config_path.as_deref())?;
    check_keys(&kv, TRAIN_KEYS)?;
    let data = pick_path(&a.data, &kv, "data").context("missing --data")?;
    let out = pick_path(&a.out, &kv, "out").context("missing --out")?;
    let eval_data = pick_path(&a.eval_data, &kv, "eval_data");
    let defaults = TrainConfig::default();
    let arch_default = ArchitectureConfig::default();
    let arch = ArchitectureConfig::new(
        pick(a.depth, &kv, "depth", arch_default.depth)?,
        pick(a.base, &kv, "base_channels", arch_default.base_channels)?,
    )?;
    let seed = match a.seed.or(kv.parsed("seed")?) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(defaults.seed),
    };
    let augment = if a.no_augment { false } else { kv.parsed("augment")?.unwrap_or(defaults.augment) };
    let train = TrainConfig {
        patch_size: pick(a.patch, &kv, "patch_size", defaults.patch_size)?,
        epochs: pick(a.epochs, &kv, "epochs", defaults.epochs)?,
        initial_lr: pick(a.lr, &kv, "initial_lr", defaults.initial_lr)?,
        lr_halving_period: pick(a.lr_halving, &kv, "lr_halving_period", defaults.lr_halving_period)?,
        seed,
        frames_per_burst: pick(a.frames.map(usize::from), &kv, "frames_per_burst", defaults.frames_per_burst)?,
        augment,
    };
    train.validate(&arch)?;
    let ratio = dataset::resolve_ratio(a.ratio.or(kv.parsed("amplification_ratio")?), &data)?;
    Ok(TrainPlan {
        data,
        eval_data,
        out,
        arch,
        train,
        ratio,
    })
}

fn log_line(r: &EpochRecord) -> String {
    format!("{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.eval_psnr, r.eval_ssim)
}

fn save_state(out: &Path, t: &Trainer) -> anyhow::Result<()> {
    checkpoint::save(out.join(CKPT_LAST), &t.params)?;
    fs::write(out.join(MOMENTS), checkpoint::encode_moments(&t.params, &t.adam)?)?;
    let mut s = KeyValues::new();
    s.set("epoch", t.epoch);
    s.set("adam_step", t.adam.t);
    s.set("best_psnr", t.best_psnr);
    s.write(out.join(STATE))?;
    Ok(())
}

fn load_state(out: &Path, plan: &TrainPlan) -> anyhow::Result<Trainer> {
    let state = KeyValues::read(out.join(STATE)).context("no saved training state to resume from")?;
    let epoch: usize = state.parsed("epoch")?.context("state lacks `epoch`")?;
    let step: u64 = state.parsed("adam_step")?.context("state lacks `adam_step`")?;
    let best_psnr: f64 = state.parsed("best_psnr")?.context("state lacks `best_psnr`")?;
    let params = checkpoint::load(out.join(CKPT_LAST)).context("loading ckpt_last")?;
    let best = checkpoint::load(out.join(CKPT_BEST)).context("loading ckpt_best")?;
    if *params.config() != plan.arch {
        bail!(
            "checkpoint architecture {:?} differs from the configured {:?}",
            params.config(),
            plan.arch
        );
    }
    let moments = fs::read(out.join(MOMENTS)).context("reading optimizer moments")?;
    let adam = checkpoint::decode_moments(&moments, &params, step, plan.train.initial_lr)?;
    Ok(Trainer::resume(params, adam, best, best_psnr, epoch, plan.train)?)
}

pub fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let plan = plan_train(a)?;
    let train_set = dataset::load_training_set(&plan.data, plan.ratio)?;
    let eval_set = match &plan.eval_data {
        Some(dir) => dataset::load_training_set(dir, plan.ratio)?,
        None => train_set.clone(),
    };
    ensure_dir(&plan.out)?;
    let out = plan.out.clone();
    let mut trainer = if a.resume {
        load_state(&out, &plan)?
    } else {
        let t = Trainer::new(build_model(plan.arch, plan.train.seed)?, plan.train, &eval_set)?;
        checkpoint::save(out.join(CKPT_BEST), &t.best)?;
        save_state(&out, &t)?;
        fs::write(out.join(LOG_CSV), format!("{LOG_HEADER}\n"))?;
        t
    };
    plan.manifest().write(out.join(MANIFEST))?;
    eprintln!(
        "training {} bursts ({} params) from epoch {} to {}",
        train_set.len(),
        trainer.params.count_params(),
        trainer.epoch,
        plan.train.epochs
    );
    trainer.fit(&train_set, &eval_set, |t, rec, improved| -> anyhow::Result<()> {
        let mut log = OpenOptions::new()
            .append(true)
            .open(out.join(LOG_CSV))
            .context("opening the training log")?;
        writeln!(log, "{}", log_line(rec))?;
        if improved {
            checkpoint::save(out.join(CKPT_BEST), &t.best)?;
        }
        save_state(&out, t)?;
        eprintln!(
            "epoch {:>4}  lr {:.3e}  loss {:.5}  psnr {:.3}  ssim {:.4}{}",
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.eval_psnr,
            rec.eval_ssim,
            if improved { "  *" } else { "" }
        );
        Ok(())
    })?;
    Ok(())
}

fn load_checked(ckpt: &Path, depth: Option<usize>, base: Option<usize>) -> anyhow::Result<darkburst_core::RfcnParams<f32>> {
    let params = checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let cfg = params.config();
    if depth.is_some_and(|d| d != cfg.depth) || base.is_some_and(|b| b != cfg.base_channels) {
        bail!(
            "checkpoint has depth {} and base width {}, which does not match the requested configuration",
            cfg.depth,
            cfg.base_channels
        );
    }
    Ok(params)
}

pub fn denoise(a: &DenoiseArgs) -> anyhow::Result<()> {
    let params = load_checked(&a.ckpt, a.depth, a.base)?;
    let container = dbraw::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let dir = a.input.parent().unwrap_or(Path::new("."));
    let ratio = dataset::resolve_ratio(a.ratio, dir)?;
    let burst = preprocess_burst(&container.frames()?, ratio)?;
    let seq = forward_burst(&params, &burst)?;
    ensure_dir(&a.out)?;
    if a.emit_all_frames {
        let digits = seq.multi.len().to_string().len().max(2);
        for (t, img) in seq.multi.iter().enumerate() {
            ppm::write(a.out.join(format!("out_{:0digits$}.ppm", t + 1)), img)?;
        }
    } else {
        ppm::write(a.out.join("out.ppm"), seq.multi.last().expect("non-empty burst"))?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let params = load_checked(&a.ckpt, None, None)?;
    let ratio = dataset::resolve_ratio(a.ratio, &a.data)?;
    let mut csv = format!("{EVAL_HEADER}\n");
    let mut sums = [0.0f64; 6];
    let mut rows = 0usize;
    let mut per_frame: Vec<(f64, usize)> = Vec::new();
    let mut evaluated = 0usize;
    for (name, c) in dataset::load_bursts(&a.data)? {
        let Some(target) = c.ground_truth_image() else {
            eprintln!("warning: skipping {name}: no ground truth");
            continue;
        };
        let burst = preprocess_burst(&c.frames()?, ratio).with_context(|| format!("preprocessing {name}"))?;
        let ev = evaluate_burst(&params, &burst, &target)?;
        for t in 0..ev.frames() {
            let vals = [
                ev.psnr_m[t],
                ev.ssim_m[t],
                ev.psnr_s[t],
                ev.ssim_s[t],
                ev.psnr_baseline,
                ev.ssim_baseline,
            ];
            csv.push_str(&format!("{name},{}", t + 1));
            for (s, v) in sums.iter_mut().zip(vals) {
                csv.push_str(&format!(",{v}"));
                *s += v;
            }
            csv.push('\n');
            rows += 1;
            if per_frame.len() <= t {
                per_frame.resize(t + 1, (0.0, 0));
            }
            per_frame[t].0 += ev.psnr_m[t];
            per_frame[t].1 += 1;
        }
        evaluated += 1;
    }
    ensure!(evaluated > 0, "no burst in {} has ground truth", a.data.display());
    csv.push_str("mean,");
    for s in sums {
        csv.push_str(&format!(",{}", s / rows as f64));
    }
    csv.push('\n');
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(&a.out, csv).with_context(|| format!("writing {}", a.out.display()))?;
    println!("evaluated {evaluated} bursts");
    println!("frame  mean psnr_m");
    for (t, (s, n)) in per_frame.iter().enumerate() {
        println!("{:>5}  {:.3}", t + 1, s / *n as f64);
    }
    println!(
        "mean psnr_m {:.3}  psnr_s {:.3}  psnr_baseline {:.3}",
        sums[0] / rows as f64,
        sums[2] / rows as f64,
        sums[4] / rows as f64
    );
    Ok(())
}
