//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Graph`] owns every tensor produced while it is alive. Operations are
//! appended in execution order, so the tape is topologically sorted by
//! construction and [`Graph::backward`] simply walks it in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a tensor recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var },
    TransposedConv2d { input: Var, kernel: Var },
    MaxPool2x2 { input: Var, argmax: Vec<u32> },
    LeakyRelu { input: Var, slope: T },
    Concat { a: Var, b: Var },
    DepthToSpace { input: Var },
    SpaceToDepth { input: Var },
    L1Loss { pred: Var, target: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { input: Var },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients
    /// flow into it.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let mut tensor = tensor;
        tensor.zero_grad();
        self.push(tensor, Op::Leaf)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: &[usize], data: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let value = Tensor::new(shape, data)
            .expect("kernel produced data matching its shape")
            .with_requires_grad(rg);
        self.push(value, op)
    }

    fn dims4(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize, usize)> {
        self.value(v)
            .dims4()
            .ok_or_else(|| Error::shape(op, format!("expected a rank-4 tensor, got {:?}", self.shape(v))))
    }

    /// Same-size cross-correlation with zero padding `(k-1)/2` and stride 1.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (b, cin, h, w) = self.dims4("conv2d", input)?;
        let (cout, kcin, kh, kw) = self.dims4("conv2d", kernel)?;
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but kernel expects {kcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel extents {kh}x{kw} must be odd")));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match {cout} output channels", self.shape(bias)),
            ));
        }
        let geom = ConvGeom { cin, cout, h, w, kh, kw };
        let out = kernels::conv2d_forward(
            &geom,
            b,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        Ok(self.derived(
            &[b, cout, h, w],
            out,
            &[input, kernel, bias],
            Op::Conv2d { input, kernel, bias },
        ))
    }

    /// 2x2 stride-2 transposed convolution; kernel is `cin x cout x 2 x 2`.
    pub fn transposed_conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let (b, cin, h, w) = self.dims4("transposed_conv2d", input)?;
        let (kcin, cout, kh, kw) = self.dims4("transposed_conv2d", kernel)?;
        if (kh, kw) != (2, 2) {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("kernel must be 2x2, got {kh}x{kw}"),
            ));
        }
        if kcin != cin {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("input has {cin} channels but kernel expects {kcin}"),
            ));
        }
        let out = kernels::tconv_forward(b, cin, cout, h, w, self.value(input).data(), self.value(kernel).data());
        Ok(self.derived(
            &[b, cout, 2 * h, 2 * w],
            out,
            &[input, kernel],
            Op::TransposedConv2d { input, kernel },
        ))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.dims4("maxpool2x2", input)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2x2", format!("extents {h}x{w} must be even")));
        }
        let (out, argmax) = kernels::maxpool_forward(b * c, h, w, self.value(input).data());
        Ok(self.derived(
            &[b, c, h / 2, w / 2],
            out,
            &[input],
            Op::MaxPool2x2 { input, argmax },
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let out = x
            .data()
            .iter()
            .map(|&v| if v >= T::zero() { v } else { slope * v })
            .collect();
        self.derived(&shape, out, &[input], Op::LeakyRelu { input, slope })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.dims4("concat_channels", a)?;
        let (nb, cb, hb, wb) = self.dims4("concat_channels", b)?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("cannot concatenate {:?} with {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = kernels::concat_channels(na, ca, cb, ha * wa, self.value(a).data(), self.value(b).data());
        Ok(self.derived(&[na, ca + cb, ha, wa], out, &[a, b], Op::Concat { a, b }))
    }

    /// Channel group `4c..4c+4` at `(i, j)` becomes channel `c` at
    /// `(2i, 2j), (2i, 2j+1), (2i+1, 2j), (2i+1, 2j+1)`.
    pub fn depth_to_space(&mut self, input: Var) -> Result<Var> {
        let (b, c4, h, w) = self.dims4("depth_to_space", input)?;
        if c4 % 4 != 0 {
            return Err(Error::shape(
                "depth_to_space",
                format!("channel count {c4} is not divisible by 4"),
            ));
        }
        let out = kernels::depth_to_space(b, c4, h, w, self.value(input).data());
        Ok(self.derived(&[b, c4 / 4, 2 * h, 2 * w], out, &[input], Op::DepthToSpace { input }))
    }

    pub fn space_to_depth(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.dims4("space_to_depth", input)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("space_to_depth", format!("extents {h}x{w} must be even")));
        }
        let out = kernels::space_to_depth(b, c, h, w, self.value(input).data());
        Ok(self.derived(&[b, 4 * c, h / 2, w / 2], out, &[input], Op::SpaceToDepth { input }))
    }

    /// Mean absolute difference. The target must not require gradient.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(
                "l1_loss",
                format!("prediction {:?} vs target {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        if self.requires_grad(target) {
            return Err(Error::shape("l1_loss", "target must not require gradient"));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let total: T = p.iter().zip(t).map(|(&a, &b)| (a - b).abs()).sum();
        let mean = total / T::of(p.len() as f64);
        Ok(self.derived(&[], vec![mean], &[pred], Op::L1Loss { pred, target }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(&shape, out, &[a, b], Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(&shape, out, &[a, b], Op::Mul { a, b }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        self.derived(&[], vec![total], &[input], Op::Sum { input })
    }

    /// Adds `dLoss/dx` into the gradient of every reachable tensor that
    /// requires gradient. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            for (input, delta) in self.input_grads(i, &gout) {
                match &mut grads[input.0] {
                    Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += *d),
                    slot @ None => *slot = Some(delta),
                }
            }
            self.nodes[i].value.accumulate_grad_owned(gout);
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, gout: &[T]) -> Vec<(Var, Vec<T>)> {
        let rg = |v: Var| self.requires_grad(v);
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { input, kernel, bias } => {
                let (b, cin, h, w) = self.value(input).dims4().unwrap();
                let (cout, _, kh, kw) = self.value(kernel).dims4().unwrap();
                let geom = ConvGeom { cin, cout, h, w, kh, kw };
                let [gi, gk, gb] = kernels::conv2d_backward(
                    &geom,
                    b,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    gout,
                    [rg(input), rg(kernel), rg(bias)],
                );
                for (v, g) in [(input, gi), (kernel, gk), (bias, gb)] {
                    if let Some(g) = g {
                        out.push((v, g));
                    }
                }
            }
            &Op::TransposedConv2d { input, kernel } => {
                let (b, cin, h, w) = self.value(input).dims4().unwrap();
                let cout = self.value(kernel).shape()[1];
                let [gi, gk] = kernels::tconv_backward(
                    b,
                    cin,
                    cout,
                    h,
                    w,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    gout,
                    [rg(input), rg(kernel)],
                );
                for (v, g) in [(input, gi), (kernel, gk)] {
                    if let Some(g) = g {
                        out.push((v, g));
                    }
                }
            }
            Op::MaxPool2x2 { input, argmax } => {
                if rg(*input) {
                    let mut g = vec![T::zero(); self.value(*input).numel()];
                    for (&a, &d) in argmax.iter().zip(gout) {
                        g[a as usize] += d;
                    }
                    out.push((*input, g));
                }
            }
            &Op::LeakyRelu { input, slope } => {
                if rg(input) {
                    let g = self
                        .value(input)
                        .data()
                        .iter()
                        .zip(gout)
                        .map(|(&x, &d)| if x >= T::zero() { d } else { slope * d })
                        .collect();
                    out.push((input, g));
                }
            }
            &Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(a).dims4().unwrap();
                let cb = self.value(b).shape()[1];
                let hw = h * w;
                let stride = (ca + cb) * hw;
                if rg(a) {
                    let g = (0..n)
                        .flat_map(|k| gout[k * stride..k * stride + ca * hw].iter().copied())
                        .collect();
                    out.push((a, g));
                }
                if rg(b) {
                    let g = (0..n)
                        .flat_map(|k| gout[k * stride + ca * hw..(k + 1) * stride].iter().copied())
                        .collect();
                    out.push((b, g));
                }
            }
            &Op::DepthToSpace { input } => {
                if rg(input) {
                    let (b, c, h2, w2) = node.value.dims4().unwrap();
                    out.push((input, kernels::space_to_depth(b, c, h2, w2, gout)));
                }
            }
            &Op::SpaceToDepth { input } => {
                if rg(input) {
                    let (b, c4, h, w) = node.value.dims4().unwrap();
                    out.push((input, kernels::depth_to_space(b, c4, h, w, gout)));
                }
            }
            &Op::L1Loss { pred, target } => {
                if rg(pred) {
                    let p = self.value(pred).data();
                    let t = self.value(target).data();
                    let scale = gout[0] / T::of(p.len() as f64);
                    let g = p
                        .iter()
                        .zip(t)
                        .map(|(&a, &b)| {
                            let d = a - b;
                            if d > T::zero() {
                                scale
                            } else if d < T::zero() {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    out.push((pred, g));
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if rg(v) {
                        out.push((v, gout.to_vec()));
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (da, db) = (self.value(a).data(), self.value(b).data());
                if rg(a) {
                    out.push((a, gout.iter().zip(db).map(|(&g, &y)| g * y).collect()));
                }
                if rg(b) {
                    out.push((b, gout.iter().zip(da).map(|(&g, &x)| g * x).collect()));
                }
            }
            &Op::Sum { input } => {
                if rg(input) {
                    out.push((input, vec![gout[0]; self.value(input).numel()]));
                }
            }
        }
        out
    }

    /// Hash of every data-dependent branch taken in the recorded forward pass:
    /// activation signs, pooling winners, and L1 residual signs.
    ///
    /// Two evaluations with equal fingerprints lie on the same smooth piece of
    /// a piecewise-smooth function, which is what finite differences need.
    pub fn branch_fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { input, .. } => {
                    for &x in self.value(*input).data() {
                        mix((x >= T::zero()) as u64);
                    }
                }
                Op::MaxPool2x2 { argmax, .. } => argmax.iter().for_each(|&a| mix(a as u64)),
                Op::L1Loss { pred, target } => {
                    for (&p, &t) in self.value(*pred).data().iter().zip(self.value(*target).data()) {
                        let d = p - t;
                        mix(if d > T::zero() { 2 } else if d < T::zero() { 1 } else { 0 });
                    }
                }
                _ => {}
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(&shape, data).unwrap()
    }

    #[test]
    fn conv2d_ones_center_and_corner() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b).unwrap();
        let out = g.value(y).data();
        assert_eq!(out[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(out[corner], 4.0);
        }
        assert_eq!(out[1], 6.0);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = Graph::<f32>::new();
        let data: Vec<f32> = (0..2 * 3 * 5 * 4).map(|i| (i as f32 * 0.37).sin()).collect();
        let x = g.constant(Tensor::new(&[2, 1, 5, 12], data.clone()).unwrap());
        let k = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let k = g.constant(Tensor::zeros(&[2, 2, 3, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        let err = g.conv2d(x, k, b).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "conv2d", .. }), "{err}");
        assert!(err.to_string().contains("3 channels"));
    }

    #[test]
    fn transposed_conv_scatter() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t4([1, 1, 1, 1], vec![5.0]));
        let k = g.constant(t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.transposed_conv2d(x, k).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[5.0, 10.0, 15.0, 20.0]);

        let z = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let y = g.transposed_conv2d(x, z).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let bad = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(g.transposed_conv2d(x, bad).is_err());
    }

    #[test]
    fn maxpool_values_and_tie_break() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);

        let c = g.param(Tensor::full(&[1, 1, 2, 2], 7.0));
        let y = g.maxpool2x2(c).unwrap();
        assert_eq!(g.value(y).data(), &[7.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(c).unwrap(), &[1.0, 0.0, 0.0, 0.0]);

        let odd = g.constant(Tensor::zeros(&[1, 1, 3, 2]));
        assert!(g.maxpool2x2(odd).is_err());
    }

    #[test]
    fn leaky_relu_definition() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[3], vec![3.0, -1.0, 0.0]).unwrap());
        let y = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(y).data(), &[3.0, -0.2, 0.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.2, 1.0]);
    }

    #[test]
    fn concat_shapes_and_gradient_split() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full(&[1, 2, 4, 4], 1.0));
        let b = g.param(Tensor::full(&[1, 3, 4, 4], 2.0));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(c), &[1, 5, 4, 4]);
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert!(g.grad(a).unwrap().iter().all(|&v| v == 1.0));
        assert!(g.grad(b).unwrap().iter().all(|&v| v == 1.0));

        let empty = g.constant(Tensor::zeros(&[1, 0, 4, 4]));
        let same = g.concat_channels(a, empty).unwrap();
        assert_eq!(g.value(same).data(), g.value(a).data());
        assert_eq!(g.shape(same), g.shape(a));

        let wrong = g.constant(Tensor::zeros(&[1, 1, 2, 4]));
        assert!(g.concat_channels(a, wrong).is_err());
    }

    #[test]
    fn depth_to_space_layout() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t4([1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.depth_to_space(x).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let bad = g.constant(Tensor::zeros(&[1, 6, 2, 2]));
        assert!(g.depth_to_space(bad).is_err());
    }

    #[test]
    fn l1_loss_values() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::new(&[2], vec![1.0, 3.0]).unwrap());
        let t = g.constant(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        let l = g.l1_loss(p, t).unwrap();
        assert_eq!(g.value(l).data(), &[1.5]);
        let same = g.l1_loss(p, p);
        assert!(same.is_err(), "target requiring grad is rejected");
        let p2 = g.constant(Tensor::new(&[2], vec![1.0, 3.0]).unwrap());
        let z = g.l1_loss(p2, p2).unwrap();
        assert_eq!(g.value(z).data(), &[0.0]);
        let wrong = g.constant(Tensor::zeros(&[3]));
        assert!(g.l1_loss(p, wrong).is_err());
    }

    #[test]
    fn backward_accumulates_over_shared_uses() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::new(&[2], vec![0.5, -1.5]).unwrap());
        let x = g.constant(Tensor::new(&[2], vec![2.0, 3.0]).unwrap());
        let y = g.constant(Tensor::new(&[2], vec![-1.0, 4.0]).unwrap());
        let wx = g.mul(w, x).unwrap();
        let wy = g.mul(w, y).unwrap();
        let both = g.add(wx, wy).unwrap();
        let loss = g.sum(both);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 7.0]);

        // A second backward adds the same path gradients again.
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, 14.0]);
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_ignores_constants() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));

        let c = g.constant(Tensor::full(&[3], 1.0));
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn ops_are_deterministic() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.constant(Tensor::from_fn(&[2, 3, 8, 8], |i| ((i * 7919) % 97) as f32 / 97.0 - 0.5));
            let k = g.param(Tensor::from_fn(&[5, 3, 3, 3], |i| ((i * 104729) % 89) as f32 / 89.0 - 0.5));
            let b = g.param(Tensor::from_fn(&[5], |i| i as f32 * 0.1));
            let y = g.conv2d(x, k, b).unwrap();
            let y = g.leaky_relu(y, 0.2);
            let s = g.sum(y);
            g.backward(s).unwrap();
            (g.value(y).data().to_vec(), g.grad(k).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }
}
