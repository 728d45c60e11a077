//! Acceptance suite. Runs every criterion at full tolerance, prints one
//! PASS/FAIL line each and exits nonzero if any failed.
//!
//! Set `ACCEPTANCE_ONLY=1,4` to run a subset.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use darkburst::{dbraw, ppm};
use darkburst_core::gradcheck::{loss_check, op_suite, GradCheckConfig};
use darkburst_core::image::Image;
use darkburst_core::metrics::{ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use darkburst_core::model::build_model;
use darkburst_core::raw::{canonicalize, pack_bayer, preprocess_burst, unpack_bayer, BayerPattern, RawFrame};
use darkburst_core::synth::{procedural_scene, synthesize_burst, NoiseModel};
use darkburst_core::train::{
    crop_at, evaluate_burst, lr_at_epoch, train_step, Dihedral, TrainConfig, Trainer, TrainingBurst,
};
use darkburst_core::{AdamState, ArchitectureConfig, Graph, RfcnParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = Vec::new();
    let mut ok = true;
    for (precision, reports) in [
        ("f64", op_suite::<f64>(GradCheckConfig::high_precision(), 100)),
        ("f32", op_suite::<f32>(GradCheckConfig::standard(), 100)),
    ] {
        let reports = reports.expect("op suite runs");
        for (name, r) in &reports {
            if !r.passed() {
                ok = false;
                worst.push(format!("{precision} {name} {:.2e}", r.max_relative_error()));
            }
        }
        let max = reports.iter().map(|(_, r)| r.max_relative_error()).fold(0.0, f64::max);
        worst.push(format!("{precision} ops max {max:.2e}"));
    }
    let arch = ArchitectureConfig::new(2, 2).unwrap();
    let hi = loss_check::<f64>(arch, 16, 2, GradCheckConfig::high_precision(), 100).unwrap();
    let lo = loss_check::<f32>(arch, 16, 2, GradCheckConfig::standard(), 100).unwrap();
    ok &= hi.passed() && lo.passed();
    worst.push(format!(
        "loss f64 {:.2e} over {} coords, f32 {:.2e}",
        hi.max_relative_error(),
        hi.checked(),
        lo.max_relative_error()
    ));
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(120);
    outcome(ok, format!("{} ({:.1}s)", worst.join("; "), secs(elapsed)))
}

// ---------------------------------------------------------------- 2

/// Zero-padded cross-correlation by nested loops, in f64.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f32],
    (b, ci, h, w): (usize, usize, usize, usize),
    k: &[f32],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f32],
) -> Vec<f64> {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; b * co * h * w];
    for n in 0..b {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias[o] as f64;
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (sy, sx) = (y as isize + i as isize - ph, xx as isize + j as isize - pw);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xv = x[((n * ci + c) * h + sy as usize) * w + sx as usize] as f64;
                                let kv = k[((o * ci + c) * kh + i) * kw + j] as f64;
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((n * co + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

/// 2x2 max and the flat index it came from, first maximum in row-major
/// window order.
fn maxpool_oracle(x: &[f32], (b, c, h, w): (usize, usize, usize, usize)) -> (Vec<f32>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut vals = Vec::with_capacity(b * c * oh * ow);
    let mut idx = Vec::with_capacity(b * c * oh * ow);
    for p in 0..b * c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (f32::NEG_INFINITY, 0);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = (p * h + 2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > best.0 {
                        best = (x[i], i);
                    }
                }
                vals.push(best.0);
                idx.push(best.1);
            }
        }
    }
    (vals, idx)
}

/// SSIM straight from its definition: for every valid window, Gaussian
/// weighted moments about the local mean.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let n = SSIM_WINDOW;
    let c = (n / 2) as f64;
    let mut wts = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let d2 = (u as f64 - c).powi(2) + (v as f64 - c).powi(2);
            wts[u * n + v] = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (SSIM_K1.powi(2), SSIM_K2.powi(2));
    let mut per_channel = 0.0;
    for ch in 0..a.channels {
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in 0..=a.height - n {
            for x in 0..=a.width - n {
                let at = |img: &Image, u: usize, v: usize| img.get(ch, y + u, x + v) as f64;
                let (mut mx, mut my) = (0.0, 0.0);
                for u in 0..n {
                    for v in 0..n {
                        mx += wts[u * n + v] * at(a, u, v);
                        my += wts[u * n + v] * at(b, u, v);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for u in 0..n {
                    for v in 0..n {
                        let (dx, dy) = (at(a, u, v) - mx, at(b, u, v) - my);
                        vx += wts[u * n + v] * dx * dx;
                        vy += wts[u * n + v] * dy * dy;
                        cov += wts[u * n + v] * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        per_channel += acc / count as f64;
    }
    per_channel / a.channels as f64
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut conv_err = 0.0f64;
    let mut pool_ok = true;
    for _ in 0..50 {
        let b = rng.random_range(1..=2);
        let ci = rng.random_range(1..=8);
        let co = rng.random_range(1..=8);
        let h = 2 * rng.random_range(1..=8);
        let w = 2 * rng.random_range(1..=8);
        let kh = [1, 3, 5][rng.random_range(0..3)];
        let kw = [1, 3, 5][rng.random_range(0..3)];
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let x = draw(b * ci * h * w);
        let k = draw(co * ci * kh * kw);
        let bias = draw(co);

        let mut g = Graph::<f32>::new();
        let xv = g.param(Tensor::new(&[b, ci, h, w], x.clone()).unwrap());
        let kv = g.constant(Tensor::new(&[co, ci, kh, kw], k.clone()).unwrap());
        let bv = g.constant(Tensor::new(&[co], bias.clone()).unwrap());
        let y = g.conv2d(xv, kv, bv).unwrap();
        let expected = conv_oracle(&x, (b, ci, h, w), &k, (co, kh, kw), &bias);
        for (got, want) in g.value(y).data().iter().zip(&expected) {
            conv_err = conv_err.max((*got as f64 - want).abs());
        }

        let p = g.maxpool2x2(xv).unwrap();
        let (vals, idx) = maxpool_oracle(&x, (b, ci, h, w));
        pool_ok &= g.value(p).data() == vals.as_slice();
        let s = g.sum(p);
        g.backward(s).unwrap();
        let grad = g.grad(xv).unwrap();
        let mut routed = vec![0.0f32; x.len()];
        for i in idx {
            routed[i] += 1.0;
        }
        pool_ok &= grad == routed.as_slice();
    }
    let mut ssim_err = 0.0f64;
    for _ in 0..20 {
        let a = Image::from_fn(3, 32, 32, |_, _, _| rng.random());
        let b = Image::from_fn(3, 32, 32, |_, _, _| rng.random());
        ssim_err = ssim_err.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
    }
    let ok = conv_err <= 1e-5 && pool_ok && ssim_err <= 1e-6;
    outcome(
        ok,
        format!("conv max abs err {conv_err:.2e}, maxpool exact {pool_ok}, ssim max abs err {ssim_err:.2e}"),
    )
}

// ---------------------------------------------------------------- 3

fn raw_frame(pattern: BayerPattern, h: usize, w: usize, samples: Vec<u16>, black: u16, white: u16) -> RawFrame {
    RawFrame {
        width: w,
        height: h,
        samples,
        pattern,
        black_level: black,
        white_level: white,
        exposure_time: 0.1,
    }
}

fn raw_pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut round_trips = 0;
    let mut ok = true;
    for _ in 0..100 {
        for p in BayerPattern::ALL {
            let (h, w) = (2 * rng.random_range(1..=16), 2 * rng.random_range(1..=16));
            let samples: Vec<u16> = (0..h * w).map(|_| rng.random()).collect();
            let f = raw_frame(p, h, w, samples.clone(), 0, u16::MAX);
            ok &= unpack_bayer(&pack_bayer(&f).unwrap()) == samples;
            round_trips += 1;
        }
    }
    let round_trip_ok = ok;

    // Equal normalized signal under different absolute levels.
    let mut black_ok = true;
    for _ in 0..100 {
        let range: u16 = rng.random_range(1..400);
        let values: Vec<u16> = (0..64).map(|_| rng.random_range(0..=range)).collect();
        let under: Vec<bool> = (0..64).map(|_| rng.random_bool(0.2)).collect();
        let ratio: f32 = rng.random_range(1.0..300.0);
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let b: u16 = rng.random_range(0..2048);
            let k: u16 = rng.random_range(1..30);
            let s = values
                .iter()
                .zip(&under)
                .map(|(&v, &neg)| if neg { b - b.min(v) } else { b + v * k })
                .collect();
            let burst = preprocess_burst(&[raw_frame(BayerPattern::Rggb, 8, 8, s, b, b + range * k)], ratio).unwrap();
            outputs.push(burst.frames[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        black_ok &= outputs[0] == outputs[1];
    }

    // One scene under each layout canonicalizes to the same planes.
    let mut pattern_ok = true;
    for _ in 0..100 {
        let (hh, hw) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let n = hh * hw;
        let planes: Vec<u16> = (0..4 * n).map(|_| rng.random()).collect();
        for p in BayerPattern::ALL {
            let (ry, rx) = match p {
                BayerPattern::Rggb => (0, 0),
                BayerPattern::Grbg => (0, 1),
                BayerPattern::Gbrg => (1, 0),
                BayerPattern::Bggr => (1, 1),
            };
            let (h, w) = (2 * hh, 2 * hw);
            let samples = (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    let color = match (y % 2 == ry, x % 2 == rx) {
                        (true, true) => 0,
                        (true, false) => 1,
                        (false, true) => 2,
                        (false, false) => 3,
                    };
                    planes[color * n + (y / 2) * hw + x / 2]
                })
                .collect();
            let f = raw_frame(p, h, w, samples, 0, u16::MAX);
            pattern_ok &= canonicalize(&pack_bayer(&f).unwrap(), p).data == planes;
        }
    }
    outcome(
        round_trip_ok && black_ok && pattern_ok,
        format!(
            "{round_trips} round trips exact {round_trip_ok}, black-level invariance {black_ok}, pattern invariance {pattern_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 4

const OVERFIT_STEPS: usize = 2000;
const OVERFIT_LR: f64 = 1e-3;

fn fixed_burst(seed: u64, size: usize, frames: usize, noise: &NoiseModel) -> TrainingBurst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = procedural_scene(size, size, &mut rng);
    let b = synthesize_burst(&clean, noise, frames, BayerPattern::Rggb, 512, 16383, &mut rng).unwrap();
    let packed = preprocess_burst(&b.frames().unwrap(), noise.amplification_ratio() as f32).unwrap();
    TrainingBurst::new(packed, b.ground_truth_image().unwrap()).unwrap()
}

fn overfit_trace(steps: usize, seed: u64) -> Vec<f64> {
    let cfg = TrainConfig::default();
    let data = fixed_burst(400, cfg.patch_size, cfg.frames_per_burst, &NoiseModel::default());
    let sample = crop_at(&data, cfg.frames_per_burst, cfg.patch_size, 0, 0, Dihedral::IDENTITY).unwrap();
    let mut params: RfcnParams<f32> = build_model(ArchitectureConfig::default(), seed).unwrap();
    let mut adam = AdamState::new(OVERFIT_LR, params.params());
    (0..steps)
        .map(|_| train_step(&mut params, &mut adam, &sample).unwrap())
        .collect()
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let trace = overfit_trace(OVERFIT_STEPS + 1, 1);
    let first = trace[0];
    let hit = trace.iter().position(|&l| l < 0.1 * first);
    let elapsed = start.elapsed();
    let replay = overfit_trace(50, 1);
    let deterministic = replay.iter().zip(&trace).all(|(a, b)| a.to_bits() == b.to_bits());
    let ok = hit.is_some_and(|s| s <= OVERFIT_STEPS) && deterministic && elapsed < Duration::from_secs(600);
    outcome(
        ok,
        format!(
            "E0 {first:.4}, E{OVERFIT_STEPS} {:.4} ({:.1}%), first below 10% at step {}, replay bit-identical {deterministic} ({:.1}s)",
            trace[OVERFIT_STEPS],
            100.0 * trace[OVERFIT_STEPS] / first,
            hit.map_or("never".to_owned(), |s| s.to_string()),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 5, 6, 7

const DESK_SCENE: usize = 128;
const DESK_VALIDATION_BURSTS: usize = 6;
const DESK_TEST_BURSTS: usize = 40;
const DESK_EVAL_FRAMES: usize = 10;
const DESK_LR: f64 = 1e-3;
const DESK_HALVING: usize = 10;
/// Desk default burst length, trained on `DESK_SHORT_BURSTS` bursts.
const DESK_SHORT_FRAMES: usize = 4;
const DESK_SHORT_BURSTS: usize = 200;
/// Full-length bursts, scored for the multi-frame criteria.
const DESK_LONG_FRAMES: usize = 10;
const DESK_LONG_BURSTS: usize = 400;

fn synthetic_set(n: usize, frames: usize, seed: u64) -> Vec<TrainingBurst> {
    let noise = NoiseModel::default();
    (0..n)
        .map(|i| fixed_burst(seed.wrapping_mul(1_000_003) + i as u64, DESK_SCENE, frames, &noise))
        .collect()
}

struct DeskResult {
    frames_per_burst: usize,
    elapsed: Duration,
    /// Means over the test bursts, per frame index, at F = 10.
    psnr_m: Vec<f64>,
    psnr_s: Vec<f64>,
    psnr_baseline: f64,
    /// Mean I_m^F when the same bursts are cut to F = 1 and F = 2.
    short_bursts: Vec<Option<f64>>,
}

/// 30 epochs on freshly synthesized bursts, checkpoint chosen on a separate
/// validation set, scored on the shared held-out test set.
fn desk_run(frames_per_burst: usize, train_bursts: usize, test: &[TrainingBurst]) -> DeskResult {
    let start = Instant::now();
    let cfg = TrainConfig {
        initial_lr: DESK_LR,
        lr_halving_period: DESK_HALVING,
        frames_per_burst,
        seed: 5,
        ..TrainConfig::default()
    };
    let train = synthetic_set(train_bursts, frames_per_burst, 10 + frames_per_burst as u64);
    let validation = synthetic_set(DESK_VALIDATION_BURSTS, frames_per_burst, 20 + frames_per_burst as u64);
    let params = build_model(ArchitectureConfig::default(), cfg.seed).unwrap();
    let mut trainer = Trainer::new(params, cfg, &validation).unwrap();
    trainer
        .fit(&train, &validation, |_, r, improved| {
            eprintln!(
                "  F={frames_per_burst} epoch {:>2} loss {:.4} validation psnr {:.3}{}",
                r.epoch,
                r.train_loss,
                r.eval_psnr,
                if improved { " *" } else { "" }
            );
            Ok::<(), darkburst_core::Error>(())
        })
        .unwrap();

    let model = &trainer.best;
    let n = test.len() as f64;
    let mut psnr_m = vec![0.0; DESK_EVAL_FRAMES];
    let mut psnr_s = vec![0.0; DESK_EVAL_FRAMES];
    let mut psnr_baseline = 0.0;
    let mut short_bursts = vec![Some(0.0); 2];
    for t in test {
        let ev = evaluate_burst(model, &t.burst, &t.target).unwrap();
        for i in 0..DESK_EVAL_FRAMES {
            psnr_m[i] += ev.psnr_m[i] / n;
            psnr_s[i] += ev.psnr_s[i] / n;
        }
        psnr_baseline += ev.psnr_baseline / n;
        // Shorter bursts run on their own through the same parameters.
        for (slot, f) in short_bursts.iter_mut().zip([1, 2]) {
            *slot = match (slot.take(), evaluate_burst(model, &t.burst.prefix(f), &t.target)) {
                (Some(acc), Ok(e)) if e.psnr_m.len() == f && e.psnr_m[f - 1].is_finite() => {
                    Some(acc + e.psnr_m[f - 1] / n)
                }
                _ => None,
            };
        }
    }
    DeskResult {
        frames_per_burst,
        elapsed: start.elapsed(),
        psnr_m,
        psnr_s,
        psnr_baseline,
        short_bursts,
    }
}

fn multi_frame_advantage(r: &DeskResult) -> Outcome {
    let m = r.psnr_m[DESK_EVAL_FRAMES - 1];
    let s = r.psnr_s.iter().sum::<f64>() / r.psnr_s.len() as f64;
    let ok = m - r.psnr_baseline > 0.0 && m - s > 0.3 && r.elapsed < Duration::from_secs(45 * 60);
    outcome(
        ok,
        format!(
            "trained F={}: I_m^10 {m:.3} dB vs baseline {:.3} dB ({:+.3}) vs I_s {s:.3} dB ({:+.3}); {:.0}s",
            r.frames_per_burst,
            r.psnr_baseline,
            m - r.psnr_baseline,
            m - s,
            secs(r.elapsed)
        ),
    )
}

fn rising_steps(seq: &[f64]) -> usize {
    seq.windows(2).filter(|w| w[1] >= w[0]).count()
}

fn per_frame_trend(r: &DeskResult) -> Outcome {
    let rising = rising_steps(&r.psnr_m);
    let ok = r.psnr_m[DESK_EVAL_FRAMES - 1] > r.psnr_m[0] && rising >= 7;
    let seq: Vec<String> = r.psnr_m.iter().map(|v| format!("{v:.3}")).collect();
    outcome(
        ok,
        format!(
            "trained F={}: I_m^t [{}], non-decreasing steps {rising}/9",
            r.frames_per_burst,
            seq.join(", ")
        ),
    )
}

fn sequence_length(r: &DeskResult) -> Outcome {
    let (f10, f1) = (r.psnr_m[DESK_EVAL_FRAMES - 1], r.psnr_m[0]);
    let ran = r.short_bursts.iter().all(Option::is_some);
    let ok = r.frames_per_burst == DESK_SHORT_FRAMES && ran && f10 >= f1;
    let short: Vec<String> = r
        .short_bursts
        .iter()
        .zip([1, 2])
        .map(|(v, f)| v.map_or(format!("F={f} failed"), |v| format!("F={f} {v:.3}")))
        .collect();
    outcome(
        ok,
        format!(
            "trained F={}: {}, F=10 {f10:.3} vs F=1 {f1:.3} dB",
            r.frames_per_burst,
            short.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 8

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_darkburst"))
        .args(args)
        .env_remove("DARKBURST_SEED")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> bool {
    names
        .iter()
        .all(|n| matches!((fs::read(a.join(n)), fs::read(b.join(n))), (Ok(x), Ok(y)) if x == y))
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let (data, first, second) = (root.join("data"), root.join("first"), root.join("second"));
    let mut ok = cli(&["synth", "--procedural", "3", "--size", "64", "--frames", "4", "--seed", "8", "--out", &s(&data)]);
    ok &= cli(&[
        "train", "--data", &s(&data), "--out", &s(&first), "--epochs", "3", "--patch", "32", "--lr", "1e-3", "--seed", "8",
    ]);
    ok &= cli(&["train", "--config", &s(&first.join("manifest.txt")), "--out", &s(&second)]);
    let rerun = ok && same_files(&first, &second, &["ckpt_best.dbw", "ckpt_last.dbw", "log.csv"]);

    // Container round trips through the public codecs.
    let mut codec = true;
    for entry in fs::read_dir(&data).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == dbraw::EXTENSION) {
            let bytes = fs::read(&path).unwrap();
            let c = dbraw::decode(&bytes).unwrap();
            codec &= dbraw::encode(&c).unwrap() == bytes;
            let gt = c.ground_truth_image().unwrap();
            let encoded = ppm::encode(&gt).unwrap();
            let back = ppm::decode(&encoded).unwrap();
            codec &= back == gt && ppm::encode(&back).unwrap() == encoded;
        }
    }
    outcome(
        rerun && codec,
        format!("manifest rerun bit-identical {rerun}, DBRAW/PPM round trips exact {codec}"),
    )
}

// ---------------------------------------------------------------- 9

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let got = [0, 1000, 2000].map(|e| lr_at_epoch(e, &cfg));
    let ok = got == [5e-5, 2.5e-5, 1.25e-5] && lr_at_epoch(999, &cfg) == 5e-5;
    outcome(ok, format!("epochs 0/1000/2000 -> {:e}/{:e}/{:e}", got[0], got[1], got[2]))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let names = [
        "gradient suite",
        "oracle equivalence",
        "raw-pipeline exactness",
        "overfit convergence",
        "multi-frame advantage",
        "per-frame PSNR trend",
        "sequence-length freedom",
        "reproducibility",
        "lr schedule",
    ];
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut run = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        if wanted(n) {
            eprintln!("running criterion {n}: {}", names[n - 1]);
            results.push((n, f()));
        }
    };
    run(1, &mut gradient_suite);
    run(2, &mut oracle_equivalence);
    run(3, &mut raw_pipeline);
    run(4, &mut overfit);
    if wanted(5) || wanted(6) || wanted(7) {
        let test = synthetic_set(DESK_TEST_BURSTS, DESK_EVAL_FRAMES, 30);
        if wanted(5) || wanted(6) {
            eprintln!("desk training on {DESK_LONG_FRAMES}-frame bursts for criteria 5 and 6");
            let long = desk_run(DESK_LONG_FRAMES, DESK_LONG_BURSTS, &test);
            run(5, &mut || multi_frame_advantage(&long));
            run(6, &mut || per_frame_trend(&long));
        }
        if wanted(7) {
            eprintln!("desk training on {DESK_SHORT_FRAMES}-frame bursts for criterion 7");
            let short = desk_run(DESK_SHORT_FRAMES, DESK_SHORT_BURSTS, &test);
            run(7, &mut || sequence_length(&short));
        }
    }
    run(8, &mut reproducibility);
    run(9, &mut schedule);

    results.sort_by_key(|(n, _)| *n);
    let mut failed = 0;
    for (n, o) in &results {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {n} {verdict}: {} - {}", names[n - 1], o.detail);
        failed += usize::from(!o.passed);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
