//! Patch sampling, dihedral augmentation, the dual L1 training step, the
//! learning-rate schedule and the epoch loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::Image;
use crate::metrics;
use crate::model::{burst_loss, forward_frames, ArchitectureConfig, RfcnParams};
use crate::optim::AdamState;
use crate::raw::PackedBurst;
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_INITIAL_LR: f64 = 5e-5;
pub const DEFAULT_HALVING_PERIOD: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Side of the square full-resolution crop.
    pub patch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_halving_period: usize,
    pub seed: u64,
    pub frames_per_burst: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            epochs: 30,
            initial_lr: DEFAULT_INITIAL_LR,
            lr_halving_period: DEFAULT_HALVING_PERIOD,
            seed: 0,
            frames_per_burst: 4,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, arch: &ArchitectureConfig) -> Result<()> {
        let unit = 2 * arch.divisor();
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "patch size {} must be a positive multiple of {unit} for depth {}",
                self.patch_size, arch.depth
            )));
        }
        // Zero is accepted so that a run can be replayed without updates.
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.initial_lr)));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::Config("learning-rate halving period must be positive".into()));
        }
        if self.frames_per_burst == 0 {
            return Err(Error::Config("frames per burst must be positive".into()));
        }
        Ok(())
    }
}

/// `initial_lr * 0.5^floor(epoch / lr_halving_period)`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halving_period).min(i32::MAX as usize) as i32;
    cfg.initial_lr * num_traits::Float::powi(0.5f64, halvings)
}

/// A preprocessed burst and its shared long-exposure reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBurst {
    pub burst: PackedBurst,
    pub target: Image,
}

impl TrainingBurst {
    pub fn new(burst: PackedBurst, target: Image) -> Result<Self> {
        if burst.is_empty() {
            return Err(Error::EmptyBurst);
        }
        let (h, w) = burst.packed_dims();
        if target.channels != 3 || target.height != 2 * h || target.width != 2 * w {
            return Err(Error::shape(
                "training_burst",
                format!(
                    "target {}x{}x{} does not cover packed {h}x{w}",
                    target.channels, target.height, target.width
                ),
            ));
        }
        Ok(Self { burst, target })
    }
}

/// One training crop: `F` packed frames of `4 x p/2 x p/2` and the `3 x p x p`
/// target covering the same sensor region.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub frames: Vec<Tensor<f32>>,
    pub target: Image,
}

/// Element of the dihedral group of the square, encoded in three bits:
/// bit 2 transposes, then bit 1 flips rows and bit 0 flips columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral(pub u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);
    pub const FLIP_X: Dihedral = Dihedral(1);

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn transposes(self) -> bool {
        self.0 & 4 != 0
    }

    fn out_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.transposes() {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source coordinate of output pixel `(y, x)` for an `h x w` input.
    fn source(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = self.out_dims(h, w);
        let y1 = if self.0 & 2 != 0 { oh - 1 - y } else { y };
        let x1 = if self.0 & 1 != 0 { ow - 1 - x } else { x };
        if self.transposes() {
            (x1, y1)
        } else {
            (y1, x1)
        }
    }

    fn plane<V: Copy>(self, src: &[V], h: usize, w: usize, out: &mut Vec<V>) {
        let (oh, ow) = self.out_dims(h, w);
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = self.source(y, x, h, w);
                out.push(src[sy * w + sx]);
            }
        }
    }

    pub fn apply_image(self, img: &Image) -> Image {
        let (h, w) = (img.height, img.width);
        let mut data = Vec::with_capacity(img.data.len());
        for c in 0..img.channels {
            self.plane(img.plane(c), h, w, &mut data);
        }
        let (oh, ow) = self.out_dims(h, w);
        Image::new(img.channels, oh, ow, data).expect("permutation keeps the length")
    }

    /// Transforms a canonical `4 x h x w` packed frame. The two greens trade
    /// places under transposition: the green sharing a row with red ends up
    /// sharing a column with it.
    pub fn apply_packed<T: Real>(self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = match frame.shape() {
            &[c, h, w] => (c, h, w),
            other => return Err(Error::shape("dihedral", format!("expected c x h x w, got {other:?}"))),
        };
        if c != 4 {
            return Err(Error::shape("dihedral", format!("expected 4 packed channels, got {c}")));
        }
        let order: [usize; 4] = if self.transposes() { [0, 2, 1, 3] } else { [0, 1, 2, 3] };
        let mut data = Vec::with_capacity(frame.numel());
        for &k in &order {
            self.plane(&frame.data()[k * h * w..(k + 1) * h * w], h, w, &mut data);
        }
        let (oh, ow) = self.out_dims(h, w);
        Tensor::new(&[4, oh, ow], data)
    }

    pub fn apply_sample(self, s: &TrainSample) -> Result<TrainSample> {
        Ok(TrainSample {
            frames: s.frames.iter().map(|f| self.apply_packed(f)).collect::<Result<_>>()?,
            target: self.apply_image(&s.target),
        })
    }
}

/// Deterministic crop at packed offset `(py, px)` of `frames` packed frames,
/// followed by `transform`.
pub fn crop_at(
    data: &TrainingBurst,
    frames: usize,
    patch_size: usize,
    py: usize,
    px: usize,
    transform: Dihedral,
) -> Result<TrainSample> {
    let (h, w) = data.burst.packed_dims();
    if !patch_size.is_multiple_of(2) || patch_size == 0 {
        return Err(Error::Config(format!("patch size {patch_size} must be even and positive")));
    }
    let q = patch_size / 2;
    if py + q > h || px + q > w {
        return Err(Error::shape(
            "crop",
            format!(
                "patch {patch_size} at packed ({py}, {px}) exceeds image {}x{}",
                2 * h,
                2 * w
            ),
        ));
    }
    let n = frames.min(data.burst.len());
    let mut out_frames = Vec::with_capacity(n);
    for frame in &data.burst.frames[..n] {
        let src = frame.data();
        let mut crop = Vec::with_capacity(4 * q * q);
        for k in 0..4 {
            for y in py..py + q {
                let row = (k * h + y) * w;
                crop.extend_from_slice(&src[row + px..row + px + q]);
            }
        }
        out_frames.push(transform.apply_packed(&Tensor::new(&[4, q, q], crop)?)?);
    }
    let target = Image::from_fn(3, patch_size, patch_size, |c, y, x| {
        data.target.get(c, 2 * py + y, 2 * px + x)
    });
    Ok(TrainSample {
        frames: out_frames,
        target: transform.apply_image(&target),
    })
}

/// Random aligned crop of the first `frames` frames, plus a random dihedral
/// transform when `augment` is set.
pub fn crop_augment<R: Rng + ?Sized>(
    data: &TrainingBurst,
    frames: usize,
    patch_size: usize,
    augment: bool,
    rng: &mut R,
) -> Result<TrainSample> {
    let (h, w) = data.burst.packed_dims();
    let q = patch_size / 2;
    if q == 0 || !patch_size.is_multiple_of(2) || q > h || q > w {
        return Err(Error::shape(
            "crop",
            format!("patch {patch_size} does not fit image {}x{}", 2 * h, 2 * w),
        ));
    }
    let py = rng.random_range(0..=h - q);
    let px = rng.random_range(0..=w - q);
    let t = if augment { Dihedral(rng.random_range(0..8)) } else { Dihedral::IDENTITY };
    crop_at(data, frames, patch_size, py, px, t)
}

/// Loss value of one sample without touching the parameters.
pub fn sample_loss<T: Real>(params: &RfcnParams<T>, sample: &TrainSample) -> Result<f64> {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let frames: Vec<Tensor<T>> = sample.frames.iter().map(|f| f.cast()).collect();
    let (singles, multis) = params.sequence_graph(&mut g, &b, &frames)?;
    let target = g.constant(sample.target.to_tensor().cast());
    let loss = burst_loss(&mut g, &singles, &multis, target)?;
    Ok(g.value(loss).data()[0].as_f64())
}

/// Forward over the whole sample, dual L1 loss, backpropagation through time
/// and one Adam update. Returns the loss before the update.
pub fn train_step<T: Real>(params: &mut RfcnParams<T>, adam: &mut AdamState<T>, sample: &TrainSample) -> Result<f64> {
    params.zero_grad();
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let frames: Vec<Tensor<T>> = sample.frames.iter().map(|f| f.cast()).collect();
    let (singles, multis) = params.sequence_graph(&mut g, &b, &frames)?;
    let target = g.constant(sample.target.to_tensor().cast());
    let loss = burst_loss(&mut g, &singles, &multis, target)?;
    let value = g.value(loss).data()[0].as_f64();
    g.backward(loss)?;
    params.accumulate_grads(&g, &b);
    adam.step(params.params_mut())?;
    Ok(value)
}

/// Per-frame quality of one burst against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstEvaluation {
    pub psnr_m: Vec<f64>,
    pub ssim_m: Vec<f64>,
    pub psnr_s: Vec<f64>,
    pub ssim_s: Vec<f64>,
    pub psnr_baseline: f64,
    pub ssim_baseline: f64,
}

impl BurstEvaluation {
    pub fn frames(&self) -> usize {
        self.psnr_m.len()
    }
}

fn mean_image(images: &[Image]) -> Image {
    let first = &images[0];
    let mut acc = vec![0.0f64; first.data.len()];
    for img in images {
        for (a, &v) in acc.iter_mut().zip(&img.data) {
            *a += v as f64;
        }
    }
    let n = images.len() as f64;
    let data = acc.iter().map(|&s| ((s / n) as f32).clamp(0.0, 1.0)).collect();
    Image::new(first.channels, first.height, first.width, data).expect("same extents")
}

/// Runs both networks over the burst and scores every multi-frame output,
/// every single-frame output and the average of the single-frame outputs.
pub fn evaluate_burst<T: Real>(params: &RfcnParams<T>, burst: &PackedBurst, target: &Image) -> Result<BurstEvaluation> {
    let frames: Vec<Tensor<T>> = burst.frames.iter().map(|f| f.cast()).collect();
    let seq = forward_frames(params, &frames)?;
    let mut ev = BurstEvaluation {
        psnr_m: Vec::with_capacity(seq.multi.len()),
        ssim_m: Vec::with_capacity(seq.multi.len()),
        psnr_s: Vec::with_capacity(seq.single.len()),
        ssim_s: Vec::with_capacity(seq.single.len()),
        psnr_baseline: 0.0,
        ssim_baseline: 0.0,
    };
    for (m, s) in seq.multi.iter().zip(&seq.single) {
        let qm = metrics::quality(m, target)?;
        let qs = metrics::quality(s, target)?;
        ev.psnr_m.push(qm.psnr);
        ev.ssim_m.push(qm.ssim);
        ev.psnr_s.push(qs.psnr);
        ev.ssim_s.push(qs.ssim);
    }
    let q = metrics::quality(&mean_image(&seq.single), target)?;
    ev.psnr_baseline = q.psnr;
    ev.ssim_baseline = q.ssim;
    Ok(ev)
}

/// Mean PSNR and SSIM of the last multi-frame output over a set.
pub fn evaluate_set<T: Real>(params: &RfcnParams<T>, set: &[TrainingBurst]) -> Result<metrics::QualityReport> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut p, mut s) = (0.0, 0.0);
    for item in set {
        let frames: Vec<Tensor<T>> = item.burst.frames.iter().map(|f| f.cast()).collect();
        let seq = forward_frames(params, &frames)?;
        let q = metrics::quality(seq.multi.last().expect("non-empty"), &item.target)?;
        p += q.psnr;
        s += q.ssim;
    }
    let n = set.len() as f64;
    Ok(metrics::QualityReport { psnr: p / n, ssim: s / n })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's steps.
    pub train_loss: f64,
    pub eval_psnr: f64,
    pub eval_ssim: f64,
}

/// Mutable training state: parameters, optimizer, epoch counter and the best
/// parameters seen so far by eval PSNR.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: RfcnParams<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub best: RfcnParams<f32>,
    pub best_psnr: f64,
}

impl Trainer {
    /// Fresh state. The initial parameters count as the first best candidate,
    /// scored on `eval` (if any).
    pub fn new(params: RfcnParams<f32>, config: TrainConfig, eval: &[TrainingBurst]) -> Result<Self> {
        config.validate(params.config())?;
        let best_psnr = if eval.is_empty() {
            f64::NEG_INFINITY
        } else {
            evaluate_set(&params, eval)?.psnr
        };
        let adam = AdamState::new(lr_at_epoch(0, &config), params.params());
        Ok(Self {
            config,
            best: params.clone(),
            params,
            adam,
            epoch: 0,
            best_psnr,
        })
    }

    /// Restores a state saved after `epoch` completed epochs.
    pub fn resume(
        params: RfcnParams<f32>,
        adam: AdamState<f32>,
        best: RfcnParams<f32>,
        best_psnr: f64,
        epoch: usize,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate(params.config())?;
        if best.config() != params.config() {
            return Err(Error::ParamMismatch("best and current parameters differ in architecture".into()));
        }
        if adam.m.len() != params.params().len() {
            return Err(Error::ParamMismatch(format!(
                "optimizer state tracks {} tensors, model has {}",
                adam.m.len(),
                params.params().len()
            )));
        }
        Ok(Self {
            config,
            params,
            adam,
            epoch,
            best,
            best_psnr,
        })
    }

    /// Generator for an epoch's shuffle and crops, independent of how many
    /// epochs ran in this process.
    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// One pass over `train` in shuffled order, one random crop per burst,
    /// then evaluation on `eval`. Returns the record and whether the
    /// parameters became the new best.
    pub fn run_epoch(&mut self, train: &[TrainingBurst], eval: &[TrainingBurst]) -> Result<(EpochRecord, bool)> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let e = self.epoch;
        let lr = lr_at_epoch(e, &self.config);
        self.adam.learning_rate = lr;
        let mut rng = self.epoch_rng(e);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let sample = crop_augment(
                &train[i],
                self.config.frames_per_burst,
                self.config.patch_size,
                self.config.augment,
                &mut rng,
            )?;
            total += train_step(&mut self.params, &mut self.adam, &sample)?;
        }
        let (eval_psnr, eval_ssim) = if eval.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let q = evaluate_set(&self.params, eval)?;
            (q.psnr, q.ssim)
        };
        let improved = eval.is_empty() || eval_psnr > self.best_psnr;
        if improved {
            self.best = self.params.clone();
            if !eval.is_empty() {
                self.best_psnr = eval_psnr;
            }
        }
        self.epoch += 1;
        Ok((
            EpochRecord {
                epoch: e,
                lr,
                train_loss: total / train.len() as f64,
                eval_psnr,
                eval_ssim,
            },
            improved,
        ))
    }

    /// Runs epochs until `config.epochs` have completed, calling `on_epoch`
    /// after each one.
    pub fn fit<E: From<Error>>(
        &mut self,
        train: &[TrainingBurst],
        eval: &[TrainingBurst],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord, bool) -> Result<(), E>,
    ) -> Result<Vec<EpochRecord>, E> {
        if train.is_empty() {
            return Err(Error::EmptyDataset.into());
        }
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let (rec, improved) = self.run_epoch(train, eval)?;
            on_epoch(self, &rec, improved)?;
            log.push(rec);
        }
        Ok(log)
    }
}

/// Trains `params` for `config.epochs` epochs and returns the best
/// parameters with the per-epoch log.
pub fn fit(
    params: RfcnParams<f32>,
    train: &[TrainingBurst],
    eval: &[TrainingBurst],
    config: TrainConfig,
) -> Result<(RfcnParams<f32>, Vec<EpochRecord>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(params, config, eval)?;
    let log = trainer.fit::<Error>(train, eval, |_, _, _| Ok(()))?;
    Ok((trainer.best, log))
}
