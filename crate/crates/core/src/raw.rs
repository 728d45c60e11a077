//! Bayer mosaic packing, channel canonicalization, black-level normalization
//! and amplification.
//!
//! Packing places each position of the 2x2 quad in its own half-resolution
//! channel. Canonicalization then reorders channels to `(R, G1, G2, B)`
//! regardless of the sensor's pattern, where G1 shares a row with R and G2
//! shares a row with B. A model trained on one sensor layout therefore sees
//! the same channel semantics from any of the four standard layouts.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four standard 2x2 color filter array layouts, named in reading order
/// of the top-left quad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

/// Canonical color of a quad position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfaColor {
    R,
    G1,
    G2,
    B,
}

impl CfaColor {
    pub const fn canonical_index(self) -> usize {
        match self {
            CfaColor::R => 0,
            CfaColor::G1 => 1,
            CfaColor::G2 => 2,
            CfaColor::B => 3,
        }
    }
}

impl BayerPattern {
    pub const ALL: [BayerPattern; 4] = [
        BayerPattern::Rggb,
        BayerPattern::Bggr,
        BayerPattern::Grbg,
        BayerPattern::Gbrg,
    ];

    /// Container code: 0=RGGB, 1=BGGR, 2=GRBG, 3=GBRG.
    pub const fn code(self) -> u8 {
        match self {
            BayerPattern::Rggb => 0,
            BayerPattern::Bggr => 1,
            BayerPattern::Grbg => 2,
            BayerPattern::Gbrg => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Raw(format!("unknown bayer pattern code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Raw(format!("unsupported bayer pattern `{name}`")))
    }

    /// Colors of quad positions (0,0), (0,1), (1,0), (1,1).
    ///
    /// The green sharing a row with red is G1, the one sharing a row with
    /// blue is G2.
    pub const fn quad(self) -> [CfaColor; 4] {
        use CfaColor::*;
        match self {
            BayerPattern::Rggb => [R, G1, G2, B],
            BayerPattern::Bggr => [B, G2, G1, R],
            BayerPattern::Grbg => [G1, R, B, G2],
            BayerPattern::Gbrg => [G2, B, R, G1],
        }
    }

    /// For each canonical channel `(R, G1, G2, B)`, the packed channel it is
    /// taken from.
    pub const fn canonical_permutation(self) -> [usize; 4] {
        match self {
            BayerPattern::Rggb => [0, 1, 2, 3],
            BayerPattern::Bggr => [3, 2, 1, 0],
            BayerPattern::Grbg => [1, 0, 3, 2],
            BayerPattern::Gbrg => [2, 3, 0, 1],
        }
    }
}

impl core::fmt::Display for BayerPattern {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// One Bayer-mosaic exposure with its sensor metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u16>,
    pub pattern: BayerPattern,
    pub black_level: u16,
    pub white_level: u16,
    pub exposure_time: f32,
}

impl RawFrame {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::Raw(format!(
                "dimensions {}x{} must be even and positive",
                self.width, self.height
            )));
        }
        if self.samples.len() != self.width * self.height {
            return Err(Error::Raw(format!(
                "{} samples for a {}x{} mosaic",
                self.samples.len(),
                self.width,
                self.height
            )));
        }
        if self.black_level >= self.white_level {
            return Err(Error::Raw(format!(
                "black level {} must be below white level {}",
                self.black_level, self.white_level
            )));
        }
        if !(self.exposure_time > 0.0) {
            return Err(Error::Raw(format!("exposure time {} must be positive", self.exposure_time)));
        }
        Ok(())
    }

    fn same_metadata(&self, other: &RawFrame) -> bool {
        (self.width, self.height, self.pattern, self.black_level, self.white_level)
            == (other.width, other.height, other.pattern, other.black_level, other.white_level)
    }
}

/// Four half-resolution planes in the mosaic's own quad order, raw-valued.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedPlanes<S> {
    pub height: usize,
    pub width: usize,
    /// `4 x height x width`, planar.
    pub data: Vec<S>,
}

impl<S: Copy> PackedPlanes<S> {
    pub fn plane(&self, k: usize) -> &[S] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> S {
        self.data[(k * self.height + i) * self.width + j]
    }
}

/// Splits the mosaic into four planes; channel `k` at `(i, j)` is quad
/// position `k` (reading order) of the quad at `(2i, 2j)`.
pub fn pack_bayer(frame: &RawFrame) -> Result<PackedPlanes<u16>> {
    frame.validate()?;
    pack_mosaic(frame.width, frame.height, &frame.samples)
}

fn pack_mosaic(width: usize, height: usize, samples: &[u16]) -> Result<PackedPlanes<u16>> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::Raw(format!("dimensions {width}x{height} must be even")));
    }
    let (h, w) = (height / 2, width / 2);
    let mut data = Vec::with_capacity(width * height);
    for k in 0..4 {
        let (dy, dx) = (k / 2, k % 2);
        for i in 0..h {
            let row = &samples[(2 * i + dy) * width..][..width];
            data.extend((0..w).map(|j| row[2 * j + dx]));
        }
    }
    Ok(PackedPlanes { height: h, width: w, data })
}

/// Inverse of [`pack_bayer`]: returns the row-major mosaic.
pub fn unpack_bayer<S: Copy + Default>(packed: &PackedPlanes<S>) -> Vec<S> {
    let (h, w) = (packed.height, packed.width);
    let width = 2 * w;
    let mut out = alloc::vec![S::default(); 4 * h * w];
    for k in 0..4 {
        let (dy, dx) = (k / 2, k % 2);
        let plane = packed.plane(k);
        for i in 0..h {
            for j in 0..w {
                out[(2 * i + dy) * width + 2 * j + dx] = plane[i * w + j];
            }
        }
    }
    out
}

/// Reorders packed channels to `(R, G1, G2, B)`.
pub fn canonicalize<S: Copy>(packed: &PackedPlanes<S>, pattern: BayerPattern) -> PackedPlanes<S> {
    let perm = pattern.canonical_permutation();
    let mut data = Vec::with_capacity(packed.data.len());
    for &src in &perm {
        data.extend_from_slice(packed.plane(src));
    }
    PackedPlanes {
        height: packed.height,
        width: packed.width,
        data,
    }
}

/// Inverse of [`canonicalize`].
pub fn decanonicalize<S: Copy>(canonical: &PackedPlanes<S>, pattern: BayerPattern) -> PackedPlanes<S> {
    let perm = pattern.canonical_permutation();
    let mut inverse = [0usize; 4];
    for (dst, &src) in perm.iter().enumerate() {
        inverse[src] = dst;
    }
    canonicalize_with(canonical, inverse)
}

fn canonicalize_with<S: Copy>(packed: &PackedPlanes<S>, perm: [usize; 4]) -> PackedPlanes<S> {
    let mut data = Vec::with_capacity(packed.data.len());
    for &src in &perm {
        data.extend_from_slice(packed.plane(src));
    }
    PackedPlanes {
        height: packed.height,
        width: packed.width,
        data,
    }
}

/// Network input: black-level-subtracted, normalized, amplified and clipped
/// canonical planes for each frame of a burst.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBurst {
    /// Each `4 x (H/2) x (W/2)`, channel order `(R, G1, G2, B)`, values in `[0, 1]`.
    pub frames: Vec<Tensor<f32>>,
    pub amplification_ratio: f32,
    pub pattern: BayerPattern,
    pub black_level: u16,
    pub white_level: u16,
}

impl PackedBurst {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Packed `(height, width)`.
    pub fn packed_dims(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }

    /// The first `n` frames.
    pub fn prefix(&self, n: usize) -> PackedBurst {
        PackedBurst {
            frames: self.frames[..n.min(self.frames.len())].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> PackedBurst {
        PackedBurst {
            frames: Vec::new(),
            amplification_ratio: self.amplification_ratio,
            pattern: self.pattern,
            black_level: self.black_level,
            white_level: self.white_level,
        }
    }
}

/// `min(max((sample - black) / (white - black), 0) * ratio, 1)`.
#[inline]
pub fn normalize_sample(sample: u16, black: u16, white: u16, ratio: f32) -> f32 {
    let range = (white - black) as f32;
    let x = ((sample as f32 - black as f32) / range).max(0.0);
    (x * ratio).min(1.0)
}

/// pack -> canonicalize -> normalize -> amplify -> clip, for every frame.
pub fn preprocess_burst(frames: &[RawFrame], amplification_ratio: f32) -> Result<PackedBurst> {
    let first = frames.first().ok_or(Error::EmptyBurst)?;
    if !(amplification_ratio > 0.0) || !amplification_ratio.is_finite() {
        return Err(Error::Raw(format!(
            "amplification ratio {amplification_ratio} must be positive"
        )));
    }
    let mut out = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        frame.validate()?;
        if !frame.same_metadata(first) {
            return Err(Error::Raw(format!(
                "frame {t} metadata differs from frame 0 (dimensions, pattern or levels)"
            )));
        }
        let canonical = canonicalize(&pack_bayer(frame)?, frame.pattern);
        let data = canonical
            .data
            .iter()
            .map(|&s| normalize_sample(s, frame.black_level, frame.white_level, amplification_ratio))
            .collect();
        out.push(Tensor::new(&[4, canonical.height, canonical.width], data)?);
    }
    Ok(PackedBurst {
        frames: out,
        amplification_ratio,
        pattern: first.pattern,
        black_level: first.black_level,
        white_level: first.white_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame(pattern: BayerPattern, width: usize, height: usize, samples: Vec<u16>) -> RawFrame {
        RawFrame {
            width,
            height,
            samples,
            pattern,
            black_level: 512,
            white_level: 16383,
            exposure_time: 0.1,
        }
    }

    #[test]
    fn pack_single_quad() {
        let f = frame(BayerPattern::Rggb, 2, 2, vec![10, 20, 30, 40]);
        let p = pack_bayer(&f).unwrap();
        assert_eq!((p.height, p.width), (1, 1));
        assert_eq!(p.data, vec![10, 20, 30, 40]);
    }

    #[test]
    fn pack_index_formula_matches_brute_force() {
        let (w, h) = (4, 4);
        let samples: Vec<u16> = (0..16).collect();
        let p = pack_bayer(&frame(BayerPattern::Rggb, w, h, samples.clone())).unwrap();
        assert_eq!(p.get(0, 1, 1), samples[2 * w + 2]);
        for k in 0..4 {
            for i in 0..2 {
                for j in 0..2 {
                    let (y, x) = (2 * i + k / 2, 2 * j + k % 2);
                    assert_eq!(p.get(k, i, j), samples[y * w + x]);
                }
            }
        }
    }

    #[test]
    fn pack_rejects_odd_dimensions() {
        let f = frame(BayerPattern::Rggb, 3, 2, vec![0; 6]);
        assert!(matches!(pack_bayer(&f), Err(Error::Raw(_))));
    }

    #[test]
    fn canonicalize_bggr_quad() {
        // [[b, g_b], [g_r, r]]: the green on the red row is G1.
        let (b, g_b, g_r, r) = (1u16, 2, 3, 4);
        let f = frame(BayerPattern::Bggr, 2, 2, vec![b, g_b, g_r, r]);
        let c = canonicalize(&pack_bayer(&f).unwrap(), BayerPattern::Bggr);
        assert_eq!(c.data, vec![r, g_r, g_b, b]);
    }

    #[test]
    fn canonical_permutation_agrees_with_quad_colors() {
        for p in BayerPattern::ALL {
            let quad = p.quad();
            let perm = p.canonical_permutation();
            for (canonical, &src) in perm.iter().enumerate() {
                assert_eq!(quad[src].canonical_index(), canonical, "{p}");
            }
        }
    }

    #[test]
    fn canonicalize_labels_every_pattern() {
        use CfaColor::*;
        // Label each mosaic position by its physical color per pattern and
        // check that canonical channels come out in R, G1, G2, B order.
        for p in BayerPattern::ALL {
            let quad = p.quad();
            let samples: Vec<u16> = quad.iter().map(|c| c.canonical_index() as u16).collect();
            let c = canonicalize(&pack_bayer(&frame(p, 2, 2, samples)).unwrap(), p);
            assert_eq!(
                c.data,
                vec![
                    R.canonical_index() as u16,
                    G1.canonical_index() as u16,
                    G2.canonical_index() as u16,
                    B.canonical_index() as u16
                ],
                "{p}"
            );
        }
    }

    #[test]
    fn rggb_is_identity() {
        let f = frame(BayerPattern::Rggb, 4, 2, (0..8).collect());
        let p = pack_bayer(&f).unwrap();
        assert_eq!(canonicalize(&p, BayerPattern::Rggb), p);
    }

    #[test]
    fn normalization_example() {
        let v = normalize_sample(600, 512, 16383, 100.0);
        let expected = (100.0f64 * 88.0 / 15871.0).min(1.0);
        assert!((v as f64 - expected).abs() < 1e-6);
        assert!((v - 0.5545).abs() < 1e-4);
        assert_eq!(normalize_sample(512, 512, 16383, 250.0), 0.0);
        assert_eq!(normalize_sample(10, 512, 16383, 250.0), 0.0);
        assert_eq!(normalize_sample(16383, 512, 16383, 2.0), 1.0);
    }

    #[test]
    fn preprocess_rejects_bad_bursts() {
        assert_eq!(preprocess_burst(&[], 10.0).unwrap_err(), Error::EmptyBurst);
        let a = frame(BayerPattern::Rggb, 2, 2, vec![600; 4]);
        let mut b = a.clone();
        b.black_level = 64;
        assert!(preprocess_burst(&[a.clone(), b], 10.0).is_err());
        assert!(preprocess_burst(std::slice::from_ref(&a), 0.0).is_err());
        let mut c = a;
        c.black_level = 20000;
        assert!(preprocess_burst(&[c], 1.0).is_err());
    }

    #[test]
    fn preprocess_black_level_cancels() {
        let a = RawFrame {
            black_level: 512,
            white_level: 16383,
            ..frame(BayerPattern::Rggb, 2, 2, vec![600, 700, 800, 900])
        };
        let b = RawFrame {
            black_level: 64,
            white_level: 16383 - 448,
            ..frame(BayerPattern::Rggb, 2, 2, vec![152, 252, 352, 452])
        };
        let pa = preprocess_burst(&[a], 100.0).unwrap();
        let pb = preprocess_burst(&[b], 100.0).unwrap();
        assert_eq!(pa.frames, pb.frames);
    }
}
