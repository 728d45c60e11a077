//! Synthetic dark bursts: procedural clean scenes, a heteroscedastic Gaussian
//! sensor noise model, and the in-memory burst container.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::raw::{BayerPattern, CfaColor, RawFrame};

/// Exponent approximating the sRGB transfer curve.
pub const GAMMA: f64 = 2.2;

/// Reference exposure of the clean "long exposure" image, in seconds. A burst
/// synthesized with underexposure factor `f` records an exposure time of
/// `f * LONG_EXPOSURE_S`.
pub const LONG_EXPOSURE_S: f64 = 10.0;

pub const DEFAULT_BLACK_LEVEL: u16 = 512;
pub const DEFAULT_WHITE_LEVEL: u16 = 16383;

/// Sensor noise in normalized raw units, i.e. fractions of `white - black`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub read_noise_sigma: f64,
    /// Variance added per unit of (underexposed, normalized) signal.
    pub shot_noise_gain: f64,
    /// Fraction of the reference exposure captured by each burst frame.
    pub underexposure_factor: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            read_noise_sigma: 0.004,
            shot_noise_gain: 0.002,
            underexposure_factor: 0.01,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.read_noise_sigma, self.shot_noise_gain, self.underexposure_factor]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.read_noise_sigma < 0.0 || self.shot_noise_gain < 0.0 {
            return Err(Error::Config(format!("noise parameters must be finite and non-negative: {self:?}")));
        }
        if !(self.underexposure_factor > 0.0 && self.underexposure_factor <= 1.0) {
            return Err(Error::Config(format!(
                "underexposure factor {} must lie in (0, 1]",
                self.underexposure_factor
            )));
        }
        Ok(())
    }

    /// Variance of a normalized sample whose expected value is `signal`.
    pub fn variance(&self, signal: f64) -> f64 {
        self.read_noise_sigma * self.read_noise_sigma + self.shot_noise_gain * signal.max(0.0)
    }

    /// The amplification ratio that restores the reference brightness.
    pub fn amplification_ratio(&self) -> f64 {
        1.0 / self.underexposure_factor
    }
}

/// A burst of mosaics sharing sensor metadata, with an optional 8-bit sRGB
/// reference image.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstContainer {
    pub width: usize,
    pub height: usize,
    pub pattern: BayerPattern,
    pub black_level: u16,
    pub white_level: u16,
    pub exposure_time: f32,
    pub mosaics: Vec<Vec<u16>>,
    /// Interleaved RGB bytes, `height x width x 3`.
    pub ground_truth: Option<Vec<u8>>,
}

impl BurstContainer {
    pub fn frame_count(&self) -> usize {
        self.mosaics.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mosaics.is_empty() {
            return Err(Error::EmptyBurst);
        }
        if self.mosaics.len() > u16::MAX as usize {
            return Err(Error::Raw(format!("{} frames exceed the container limit", self.mosaics.len())));
        }
        for (t, m) in self.mosaics.iter().enumerate() {
            if m.len() != self.width * self.height {
                return Err(Error::Raw(format!(
                    "frame {t} holds {} samples, expected {}",
                    m.len(),
                    self.width * self.height
                )));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != self.width * self.height * 3 {
                return Err(Error::Raw(format!(
                    "ground truth holds {} bytes, expected {}",
                    gt.len(),
                    self.width * self.height * 3
                )));
            }
        }
        self.frame(0)?.validate()
    }

    pub fn frame(&self, t: usize) -> Result<RawFrame> {
        let samples = self
            .mosaics
            .get(t)
            .ok_or_else(|| Error::Raw(format!("frame {t} out of range")))?
            .clone();
        Ok(RawFrame {
            width: self.width,
            height: self.height,
            samples,
            pattern: self.pattern,
            black_level: self.black_level,
            white_level: self.white_level,
            exposure_time: self.exposure_time,
        })
    }

    pub fn frames(&self) -> Result<Vec<RawFrame>> {
        (0..self.frame_count()).map(|t| self.frame(t)).collect()
    }

    pub fn ground_truth_image(&self) -> Option<Image> {
        self.ground_truth
            .as_ref()
            .map(|gt| Image::from_interleaved_u8(3, self.height, self.width, gt).expect("validated length"))
    }
}

fn rgb_index(color: CfaColor) -> usize {
    match color {
        CfaColor::R => 0,
        CfaColor::G1 | CfaColor::G2 => 1,
        CfaColor::B => 2,
    }
}

/// Linearizes `clean`, samples it through the color filter array, scales it
/// by the underexposure factor and draws `frames` independent noisy
/// exposures quantized between the black and white levels.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_burst<R: Rng + ?Sized>(
    clean: &Image,
    noise: &NoiseModel,
    frames: usize,
    pattern: BayerPattern,
    black_level: u16,
    white_level: u16,
    rng: &mut R,
) -> Result<BurstContainer> {
    noise.validate()?;
    if clean.channels != 3 {
        return Err(Error::Config(format!("clean image must have 3 channels, got {}", clean.channels)));
    }
    if clean.height == 0 || clean.width == 0 || !clean.height.is_multiple_of(2) || !clean.width.is_multiple_of(2) {
        return Err(Error::Raw(format!(
            "clean image {}x{} must have even positive extents",
            clean.height, clean.width
        )));
    }
    if frames == 0 {
        return Err(Error::EmptyBurst);
    }
    if black_level >= white_level {
        return Err(Error::Raw(format!("black level {black_level} must be below white level {white_level}")));
    }
    let (h, w) = (clean.height, clean.width);
    let quad = pattern.quad();
    let signal: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let c = rgb_index(quad[(y % 2) * 2 + x % 2]);
            let v = clean.get(c, y, x).clamp(0.0, 1.0) as f64;
            v.powf(GAMMA) * noise.underexposure_factor
        })
        .collect();
    let std: Vec<f64> = signal.iter().map(|&s| noise.variance(s).sqrt()).collect();
    let range = (white_level - black_level) as f64;
    let mosaics = (0..frames)
        .map(|_| {
            signal
                .iter()
                .zip(&std)
                .map(|(&s, &sd)| {
                    let z: f64 = StandardNormal.sample(rng);
                    let v = s + sd * z;
                    let dn = (black_level as f64 + v * range).round();
                    dn.clamp(0.0, white_level as f64) as u16
                })
                .collect()
        })
        .collect();
    Ok(BurstContainer {
        width: w,
        height: h,
        pattern,
        black_level,
        white_level,
        exposure_time: (noise.underexposure_factor * LONG_EXPOSURE_S) as f32,
        mosaics,
        ground_truth: Some(clean.to_interleaved_u8()),
    })
}

/// Procedural test scene: a color gradient with flat patches, discs and rows
/// of small glyph-like strokes, quantized to 8 bits.
pub fn procedural_scene<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Image {
    let color = |rng: &mut R| -> [f32; 3] { [rng.random(), rng.random(), rng.random()] };
    let (c0, c1) = (color(rng), color(rng));
    let angle: f32 = rng.random_range(0.0..core::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let span = (width as f32).hypot(height as f32).max(1.0);
    let mut img = Image::from_fn(3, height, width, |c, y, x| {
        let t = ((x as f32 * dx + y as f32 * dy) / span + 0.5).clamp(0.0, 1.0);
        c0[c] * (1.0 - t) + c1[c] * t
    });

    let patches = rng.random_range(2..6);
    for _ in 0..patches {
        let col = color(rng);
        let (ph, pw) = (
            rng.random_range(height / 8..=height / 3 + 1),
            rng.random_range(width / 8..=width / 3 + 1),
        );
        let (y0, x0) = (rng.random_range(0..height), rng.random_range(0..width));
        for y in y0..(y0 + ph).min(height) {
            for x in x0..(x0 + pw).min(width) {
                for (c, v) in col.iter().enumerate() {
                    img.set(c, y, x, *v);
                }
            }
        }
    }

    let discs = rng.random_range(1..4);
    for _ in 0..discs {
        let col = color(rng);
        let r = rng.random_range(2.0..(height.min(width) as f32 / 5.0).max(3.0));
        let (cy, cx) = (
            rng.random_range(0.0..height as f32),
            rng.random_range(0.0..width as f32),
        );
        for y in 0..height {
            for x in 0..width {
                if (y as f32 - cy).hypot(x as f32 - cx) <= r {
                    for (c, v) in col.iter().enumerate() {
                        img.set(c, y, x, *v);
                    }
                }
            }
        }
    }

    // Text-like rows: two-pixel strokes on a fixed baseline.
    let lines = rng.random_range(1..4);
    for _ in 0..lines {
        let ink = if rng.random_bool(0.5) { [0.05f32; 3] } else { [0.95f32; 3] };
        let glyph_h = rng.random_range(6..12).min(height);
        let y0 = rng.random_range(0..height.saturating_sub(glyph_h).max(1));
        let mut x = rng.random_range(0..(width / 4).max(1));
        while x + 6 < width {
            let gw = rng.random_range(4..8);
            let strokes = rng.random_range(1u32..16);
            for (bit, (sy, sx, vertical)) in [
                (0, 0, true),
                (0, gw - 2, true),
                (0, 0, false),
                ((glyph_h / 2).saturating_sub(1), 0, false),
            ]
            .into_iter()
            .enumerate()
            {
                if strokes & (1 << bit) == 0 {
                    continue;
                }
                let len = if vertical { glyph_h - sy } else { gw };
                for k in 0..len {
                    for d in 0..2 {
                        let (py, px) = if vertical {
                            (y0 + sy + k, x + sx + d)
                        } else {
                            (y0 + sy + d, x + sx + k)
                        };
                        if py < height && px < width {
                            for (c, v) in ink.iter().enumerate() {
                                img.set(c, py, px, *v);
                            }
                        }
                    }
                }
            }
            x += gw + rng.random_range(2..5);
        }
    }

    let bytes = img.to_interleaved_u8();
    Image::from_interleaved_u8(3, height, width, &bytes).expect("same extents")
}
