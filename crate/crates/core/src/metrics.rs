//! PSNR and single-scale SSIM on images with unit dynamic range.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::Image;

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            op,
            format!(
                "{}x{}x{} vs {}x{}x{}",
                a.channels, a.height, a.width, b.channels, b.height, b.width
            ),
        ));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same("mse", a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(1 / MSE)` over all channels and pixels, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter over valid window positions only.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM of one channel pair.
fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, taps: &[f64]) -> f64 {
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(&x, h, w, taps);
    let mu_y = filter_valid(&y, h, w, taps);
    let e_xx = filter_valid(&xx, h, w, taps);
    let e_yy = filter_valid(&yy, h, w, taps);
    let e_xy = filter_valid(&xy, h, w, taps);

    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    total / n as f64
}

/// Single-scale SSIM: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid window positions and then
/// over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same("ssim", a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!(
                "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                a.height, a.width
            ),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let total: f64 = (0..a.channels)
        .map(|c| ssim_plane(a.plane(c), b.plane(c), a.height, a.width, &taps))
        .sum();
    Ok(total / a.channels as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn quality(a: &Image, b: &Image) -> Result<QualityReport> {
    Ok(QualityReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f32, h: usize, w: usize) -> Image {
        Image::new(3, h, w, vec![v; 3 * h * w]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = constant(0.3, 12, 12);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = Image::new(1, 1, 2, vec![0.2, 0.7]).unwrap();
        let c = Image::new(1, 1, 2, vec![0.3, 0.8]).unwrap();
        assert!((psnr(&b, &c).unwrap() - 20.0).abs() < 1e-5);
        let d = Image::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let e = Image::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert!((psnr(&d, &e).unwrap() - 6.0206).abs() < 1e-4);
        assert!(psnr(&a, &constant(0.3, 12, 11)).is_err());
    }

    #[test]
    fn ssim_constant_images() {
        let a = constant(0.25, 16, 16);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &a.clone()).unwrap(), 1.0);
        let b = constant(0.75, 16, 16);
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = constant(0.5, 10, 16);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn taps_are_normalized() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }
}
