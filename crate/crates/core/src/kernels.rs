//! Slice-level forward and backward kernels behind the graph operations.
//!
//! All kernels work on a single batch element at a time with planar
//! channel-major storage. Convolutions are lowered to GEMM through an
//! explicit column buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Gathers zero-padded shifted copies of `input` (`cin x h x w`) into
/// `col` (`cin*kh*kw x h*w`).
fn im2col<T: Real>(g: &ConvGeom, input: &[T], col: &mut [T]) {
    let (h, w) = (g.h, g.w);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - ph as isize;
                let dx = kx as isize - pw as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out.fill(T::zero());
                        continue;
                    }
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let src = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&plane[src + sx0..src + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto `grad_input`; adjoint of [`im2col`].
fn col2im_add<T: Real>(g: &ConvGeom, col: &[T], grad_input: &mut [T]) {
    let (h, w) = (g.h, g.w);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &mut grad_input[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - ph as isize;
                let dx = kx as isize - pw as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    let d = &mut plane[dst + sx0..dst + sx0 + (x1 - x0)];
                    for (d, s) in d.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let hw = g.hw();
    let rows = g.rows();
    let mut out = vec![T::zero(); batch * g.cout * hw];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * hw]
    };
    for b in 0..batch {
        let x = &input[b * g.cin * hw..(b + 1) * g.cin * hw];
        let y = &mut out[b * g.cout * hw..(b + 1) * g.cout * hw];
        for (co, plane) in y.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        let col_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut col);
            &col
        };
        T::gemm(
            g.cout,
            rows,
            hw,
            T::one(),
            kernel,
            rows as isize,
            1,
            col_ref,
            hw as isize,
            1,
            T::one(),
            y,
            hw as isize,
            1,
        );
    }
    out
}

/// Returns `(grad_input, grad_kernel, grad_bias)` for the requested parts.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    want: [bool; 3],
) -> [Option<Vec<T>>; 3] {
    let hw = g.hw();
    let rows = g.rows();
    let mut gi = want[0].then(|| vec![T::zero(); batch * g.cin * hw]);
    let mut gk = want[1].then(|| vec![T::zero(); g.cout * rows]);
    let mut gb = want[2].then(|| vec![T::zero(); g.cout]);
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * hw }];
    let mut dcol = if want[0] && !g.is_pointwise() {
        vec![T::zero(); rows * hw]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let x = &input[b * g.cin * hw..(b + 1) * g.cin * hw];
        let dy = &grad_out[b * g.cout * hw..(b + 1) * g.cout * hw];
        if let Some(gb) = gb.as_mut() {
            for (co, plane) in dy.chunks_exact(hw).enumerate() {
                gb[co] += plane.iter().copied().sum::<T>();
            }
        }
        if let Some(gk) = gk.as_mut() {
            let col_ref: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut col);
                &col
            };
            // gk[cout, rows] += dy[cout, hw] * col^T[hw, rows]
            T::gemm(
                g.cout,
                hw,
                rows,
                T::one(),
                dy,
                hw as isize,
                1,
                col_ref,
                1,
                hw as isize,
                T::one(),
                gk,
                rows as isize,
                1,
            );
        }
        if let Some(gi) = gi.as_mut() {
            let gi_b = &mut gi[b * g.cin * hw..(b + 1) * g.cin * hw];
            let target: &mut [T] = if g.is_pointwise() { gi_b } else { &mut dcol };
            // dcol[rows, hw] = kernel^T[rows, cout] * dy[cout, hw]
            T::gemm(
                rows,
                g.cout,
                hw,
                T::one(),
                kernel,
                1,
                rows as isize,
                dy,
                hw as isize,
                1,
                T::zero(),
                target,
                hw as isize,
                1,
            );
            if !g.is_pointwise() {
                col2im_add(g, &dcol, gi_b);
            }
        }
    }
    [gi, gk, gb]
}

/// 2x2 stride-2 transposed convolution, kernel laid out `cin x cout x 2 x 2`.
pub(crate) fn tconv_forward<T: Real>(
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    input: &[T],
    kernel: &[T],
) -> Vec<T> {
    let hw = h * w;
    let q = cout * 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); batch * cout * oh * ow];
    let mut y = vec![T::zero(); q * hw];
    for b in 0..batch {
        let x = &input[b * cin * hw..(b + 1) * cin * hw];
        // y[q, hw] = kernel^T[q, cin] * x[cin, hw]
        T::gemm(
            q,
            cin,
            hw,
            T::one(),
            kernel,
            1,
            q as isize,
            x,
            hw as isize,
            1,
            T::zero(),
            &mut y,
            hw as isize,
            1,
        );
        let o = &mut out[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            for di in 0..2 {
                for dj in 0..2 {
                    let src = &y[(co * 4 + di * 2 + dj) * hw..][..hw];
                    for i in 0..h {
                        let row = &mut o[co * oh * ow + (2 * i + di) * ow..][..ow];
                        for j in 0..w {
                            row[2 * j + dj] = src[i * w + j];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv_backward<T: Real>(
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    want: [bool; 2],
) -> [Option<Vec<T>>; 2] {
    let hw = h * w;
    let q = cout * 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut gi = want[0].then(|| vec![T::zero(); batch * cin * hw]);
    let mut gk = want[1].then(|| vec![T::zero(); cin * q]);
    let mut dy = vec![T::zero(); q * hw];
    for b in 0..batch {
        let go = &grad_out[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            for di in 0..2 {
                for dj in 0..2 {
                    let dst = &mut dy[(co * 4 + di * 2 + dj) * hw..][..hw];
                    for i in 0..h {
                        let row = &go[co * oh * ow + (2 * i + di) * ow..][..ow];
                        for j in 0..w {
                            dst[i * w + j] = row[2 * j + dj];
                        }
                    }
                }
            }
        }
        let x = &input[b * cin * hw..(b + 1) * cin * hw];
        if let Some(gk) = gk.as_mut() {
            // gk[cin, q] += x[cin, hw] * dy^T[hw, q]
            T::gemm(
                cin,
                hw,
                q,
                T::one(),
                x,
                hw as isize,
                1,
                &dy,
                1,
                hw as isize,
                T::one(),
                gk,
                q as isize,
                1,
            );
        }
        if let Some(gi) = gi.as_mut() {
            // gi[cin, hw] = kernel[cin, q] * dy[q, hw]
            T::gemm(
                cin,
                q,
                hw,
                T::one(),
                kernel,
                q as isize,
                1,
                &dy,
                hw as isize,
                1,
                T::zero(),
                &mut gi[b * cin * hw..(b + 1) * cin * hw],
                hw as isize,
                1,
            );
        }
    }
    [gi, gk]
}

/// Returns pooled values and, per output element, the flat input index of the
/// window maximum. Ties resolve to the first element in row-major window order.
pub(crate) fn maxpool_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let candidates = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = candidates[0];
                for &c in &candidates[1..] {
                    if input[c] > input[best] {
                        best = c;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// `(b, 4c, h, w) -> (b, c, 2h, 2w)`.
pub(crate) fn depth_to_space<T: Real>(b: usize, c4: usize, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let c = c4 / 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); b * c * oh * ow];
    for n in 0..b * c {
        for k in 0..4 {
            let (di, dj) = (k / 2, k % 2);
            let src = &x[(n * 4 + k) * h * w..][..h * w];
            for i in 0..h {
                let row = &mut out[n * oh * ow + (2 * i + di) * ow..][..ow];
                for j in 0..w {
                    row[2 * j + dj] = src[i * w + j];
                }
            }
        }
    }
    out
}

/// `(b, c, 2h, 2w) -> (b, 4c, h, w)`; inverse of [`depth_to_space`].
pub(crate) fn space_to_depth<T: Real>(b: usize, c: usize, h2: usize, w2: usize, x: &[T]) -> Vec<T> {
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![T::zero(); b * c * 4 * h * w];
    for n in 0..b * c {
        for k in 0..4 {
            let (di, dj) = (k / 2, k % 2);
            let dst = &mut out[(n * 4 + k) * h * w..][..h * w];
            for i in 0..h {
                let row = &x[n * h2 * w2 + (2 * i + di) * w2..][..w2];
                for j in 0..w {
                    dst[i * w + j] = row[2 * j + dj];
                }
            }
        }
    }
    out
}

/// Concatenates along channels for each batch element.
pub(crate) fn concat_channels<T: Real>(b: usize, ca: usize, cb: usize, hw: usize, a: &[T], bb: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(b * (ca + cb) * hw);
    for n in 0..b {
        out.extend_from_slice(&a[n * ca * hw..(n + 1) * ca * hw]);
        out.extend_from_slice(&bb[n * cb * hw..(n + 1) * cb * hw]);
    }
    out
}
