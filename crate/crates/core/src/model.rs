//! Dual recurrent fully convolutional network.
//!
//! A single-frame U-Net `S` denoises each packed frame on its own and exposes
//! its encoder features at every scale. A multi-frame U-Net `M` consumes, at
//! each encoder scale, the matching `S` feature, its own output at that scale
//! from the previous frame, and the pooled flow from the scale above. Its
//! per-scale unit outputs are carried to the next frame as recurrent state.
//! Both networks decode through transposed convolutions with skip connections
//! and a 12-channel head rearranged by depth-to-space into full-resolution
//! RGB. One parameter set serves every frame index, so bursts of any length
//! run through the same model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::optim::Param;
use crate::raw::PackedBurst;
use crate::real::Real;
use crate::tensor::Tensor;

pub const INPUT_CHANNELS: usize = 4;
pub const HEAD_CHANNELS: usize = 12;
pub const OUTPUT_CHANNELS: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchitectureConfig {
    /// Number of U-Net scales.
    pub depth: usize,
    /// Channels at the top scale; doubled at every scale below.
    pub base_channels: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
        }
    }
}

impl ArchitectureConfig {
    pub fn new(depth: usize, base_channels: usize) -> Result<Self> {
        let c = Self { depth, base_channels };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.depth > 12 {
            return Err(Error::Config(format!("depth {} is unreasonably large", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        Ok(())
    }

    /// Channel width at scale `s`; scale `depth` is the bottleneck.
    pub fn channels(&self, scale: usize) -> usize {
        self.base_channels << scale
    }

    /// Packed extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn check_extents(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if height == 0 || width == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(Error::shape(
                "rfcn",
                format!("packed extents {height}x{width} must be positive multiples of {d}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvRef {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockRef {
    first: ConvRef,
    second: ConvRef,
}

#[derive(Debug, Clone, Copy)]
struct DecoderRef {
    up: usize,
    block: BlockRef,
}

#[derive(Debug, Clone)]
struct UNetRef {
    encoder: Vec<BlockRef>,
    bottleneck: BlockRef,
    /// Indexed by scale; `decoder[s]` upsamples from scale `s + 1` to `s`.
    decoder: Vec<DecoderRef>,
    head: ConvRef,
}

#[derive(Debug, Clone)]
struct Layout {
    single: UNetRef,
    multi: UNetRef,
}

/// Receives every parameter declaration in canonical order.
trait ParamSink {
    fn declare(&mut self, name: String, shape: [usize; 4], fan_in: usize) -> usize;
    fn declare_bias(&mut self, name: String, len: usize) -> usize;
}

fn conv_ref(sink: &mut impl ParamSink, name: &str, cin: usize, cout: usize, k: usize) -> ConvRef {
    ConvRef {
        weight: sink.declare(format!("{name}.weight"), [cout, cin, k, k], cin * k * k),
        bias: sink.declare_bias(format!("{name}.bias"), cout),
    }
}

fn block_ref(sink: &mut impl ParamSink, name: &str, cin: usize, cout: usize) -> BlockRef {
    BlockRef {
        first: conv_ref(sink, &format!("{name}.conv0"), cin, cout, 3),
        second: conv_ref(sink, &format!("{name}.conv1"), cout, cout, 3),
    }
}

fn unet_ref(sink: &mut impl ParamSink, cfg: &ArchitectureConfig, prefix: &str, recurrent: bool) -> UNetRef {
    let l = cfg.depth;
    let encoder = (0..l)
        .map(|s| {
            let c = cfg.channels(s);
            let cin = if recurrent {
                // single-frame feature + previous state + pooled flow from above
                2 * c + if s > 0 { cfg.channels(s - 1) } else { 0 }
            } else if s == 0 {
                INPUT_CHANNELS
            } else {
                cfg.channels(s - 1)
            };
            block_ref(sink, &format!("{prefix}.enc{s}"), cin, c)
        })
        .collect();
    let bottleneck = block_ref(
        sink,
        &format!("{prefix}.bottleneck"),
        cfg.channels(l - 1),
        cfg.channels(l),
    );
    let mut decoder: Vec<Option<DecoderRef>> = vec![None; l];
    for s in (0..l).rev() {
        let (c, below) = (cfg.channels(s), cfg.channels(s + 1));
        let up = sink.declare(format!("{prefix}.dec{s}.up.weight"), [below, c, 2, 2], below * 4);
        let block = block_ref(sink, &format!("{prefix}.dec{s}"), 2 * c, c);
        decoder[s] = Some(DecoderRef { up, block });
    }
    let head = conv_ref(sink, &format!("{prefix}.head"), cfg.channels(0), HEAD_CHANNELS, 1);
    UNetRef {
        encoder,
        bottleneck,
        decoder: decoder.into_iter().map(|d| d.expect("every scale declared")).collect(),
        head,
    }
}

fn layout(cfg: &ArchitectureConfig, sink: &mut impl ParamSink) -> Layout {
    Layout {
        single: unet_ref(sink, cfg, "s", false),
        multi: unet_ref(sink, cfg, "m", true),
    }
}

#[derive(Default)]
struct ShapeSink {
    specs: Vec<(String, Vec<usize>, usize)>,
}

impl ParamSink for ShapeSink {
    fn declare(&mut self, name: String, shape: [usize; 4], fan_in: usize) -> usize {
        self.specs.push((name, shape.to_vec(), fan_in));
        self.specs.len() - 1
    }

    fn declare_bias(&mut self, name: String, len: usize) -> usize {
        self.specs.push((name, vec![len], 0));
        self.specs.len() - 1
    }
}

/// Names and shapes of every parameter in canonical order.
pub fn parameter_specs(cfg: &ArchitectureConfig) -> Vec<(String, Vec<usize>)> {
    let mut sink = ShapeSink::default();
    layout(cfg, &mut sink);
    sink.specs.into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Total scalar parameter count for a configuration.
pub fn param_count(cfg: &ArchitectureConfig) -> usize {
    parameter_specs(cfg)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// All learnable weights of both networks, shared across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RfcnParams<T> {
    config: ArchitectureConfig,
    params: Vec<Param<T>>,
    layout: LayoutHandle,
}

// Layout is derived from the config; keep it out of equality and debug noise.
#[derive(Clone)]
struct LayoutHandle(Layout);

impl PartialEq for LayoutHandle {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl core::fmt::Debug for LayoutHandle {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("Layout")
    }
}

/// He-normal weights, zero biases, drawn in canonical parameter order.
pub fn build_model<T: Real>(config: ArchitectureConfig, seed: u64) -> Result<RfcnParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sink = ShapeSink::default();
    let layout = layout(&config, &mut sink);
    let params = sink
        .specs
        .into_iter()
        .map(|(name, shape, fan_in)| {
            let tensor = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                let std = num_traits::Float::sqrt(2.0 / fan_in as f64);
                let normal = Normal::new(0.0, std).expect("finite positive std");
                Tensor::from_fn(&shape, |_| T::of(normal.sample(&mut rng)))
            };
            Param::new(name, tensor)
        })
        .collect();
    Ok(RfcnParams {
        config,
        params,
        layout: LayoutHandle(layout),
    })
}

impl<T: Real> RfcnParams<T> {
    /// Assembles parameters from named tensors, validating names, order and
    /// shapes against the configuration.
    pub fn from_tensors(config: ArchitectureConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let mut sink = ShapeSink::default();
        let layout = layout(&config, &mut sink);
        if sink.specs.len() != tensors.len() {
            return Err(Error::ParamMismatch(format!(
                "configuration expects {} tensors, got {}",
                sink.specs.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(tensors.len());
        for ((name, shape, _), (got_name, tensor)) in sink.specs.into_iter().zip(tensors) {
            if name != got_name {
                return Err(Error::ParamMismatch(format!("expected `{name}`, found `{got_name}`")));
            }
            if tensor.shape() != &shape[..] {
                return Err(Error::ParamMismatch(format!(
                    "`{name}` expects shape {shape:?}, found {:?}",
                    tensor.shape()
                )));
            }
            params.push(Param::new(name, tensor));
        }
        Ok(Self {
            config,
            params,
            layout: LayoutHandle(layout),
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> RfcnParams<U> {
        RfcnParams {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| Param::new(p.name.clone(), p.tensor.cast()))
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Records every parameter as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph<T>) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| graph.param(p.tensor.clone())).collect(),
        }
    }

    /// Adds the graph gradients of `bound` into each parameter's gradient.
    /// Parameters the loss did not reach receive zeros.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, bound: &BoundParams) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            match graph.grad(v) {
                Some(g) => p.tensor.accumulate_grad(g),
                None => {
                    let zeros = vec![T::zero(); p.tensor.numel()];
                    p.tensor.accumulate_grad_owned(zeros);
                }
            }
        }
    }

    fn slope(&self) -> T {
        T::of(LEAKY_SLOPE)
    }

    fn conv(&self, g: &mut Graph<T>, b: &BoundParams, c: ConvRef, x: Var) -> Result<Var> {
        g.conv2d(x, b.vars[c.weight], b.vars[c.bias])
    }

    fn block(&self, g: &mut Graph<T>, b: &BoundParams, blk: BlockRef, x: Var) -> Result<Var> {
        let y = self.conv(g, b, blk.first, x)?;
        let y = g.leaky_relu(y, self.slope());
        let y = self.conv(g, b, blk.second, y)?;
        Ok(g.leaky_relu(y, self.slope()))
    }

    /// Bottom-up decoder with skip connections and the depth-to-space head.
    fn decode(&self, g: &mut Graph<T>, b: &BoundParams, net: &UNetRef, bottom: Var, skips: &[Var]) -> Result<Var> {
        let mut x = bottom;
        for s in (0..self.config.depth).rev() {
            let dec = net.decoder[s];
            let up = g.transposed_conv2d(x, b.vars[dec.up])?;
            let cat = g.concat_channels(up, skips[s])?;
            x = self.block(g, b, dec.block, cat)?;
        }
        let head = self.conv(g, b, net.head, x)?;
        g.depth_to_space(head)
    }

    /// Single-frame network on a `1 x 4 x h x w` input. Returns the encoder
    /// features (post-activation, pre-pooling) and the unclamped image.
    pub fn single_frame_graph(&self, g: &mut Graph<T>, b: &BoundParams, input: Var) -> Result<(Vec<Var>, Var)> {
        let (_, c, h, w) = g
            .value(input)
            .dims4()
            .ok_or_else(|| Error::shape("single_frame", "expected a rank-4 input"))?;
        if c != INPUT_CHANNELS {
            return Err(Error::shape("single_frame", format!("expected 4 input channels, got {c}")));
        }
        self.config.check_extents(h, w)?;
        let net = &self.layout.0.single;
        let mut features = Vec::with_capacity(self.config.depth);
        let mut x = input;
        for blk in &net.encoder {
            let f = self.block(g, b, *blk, x)?;
            features.push(f);
            x = g.maxpool2x2(f)?;
        }
        let bottom = self.block(g, b, net.bottleneck, x)?;
        let out = self.decode(g, b, net, bottom, &features)?;
        Ok((features, out))
    }

    /// One frame of the multi-frame network. Returns the unclamped image and
    /// the next per-scale state.
    pub fn recurrent_graph(
        &self,
        g: &mut Graph<T>,
        b: &BoundParams,
        features: &[Var],
        prev: &[Var],
    ) -> Result<(Var, Vec<Var>)> {
        let l = self.config.depth;
        if features.len() != l || prev.len() != l {
            return Err(Error::shape(
                "recurrent_step",
                format!(
                    "expected {l} features and {l} states, got {} and {}",
                    features.len(),
                    prev.len()
                ),
            ));
        }
        for s in 0..l {
            if g.shape(features[s]) != g.shape(prev[s]) {
                return Err(Error::shape(
                    "recurrent_step",
                    format!(
                        "scale {s}: feature {:?} vs state {:?}",
                        g.shape(features[s]),
                        g.shape(prev[s])
                    ),
                ));
            }
        }
        let net = &self.layout.0.multi;
        let mut next = Vec::with_capacity(l);
        let mut flow: Option<Var> = None;
        for s in 0..l {
            let mut unit_in = g.concat_channels(features[s], prev[s])?;
            if let Some(f) = flow {
                unit_in = g.concat_channels(unit_in, f)?;
            }
            let unit = self.block(g, b, net.encoder[s], unit_in)?;
            next.push(unit);
            flow = Some(g.maxpool2x2(unit)?);
        }
        let bottom = self.block(g, b, net.bottleneck, flow.expect("depth >= 2"))?;
        let out = self.decode(g, b, net, bottom, &next)?;
        Ok((out, next))
    }

    /// Runs both networks over a whole sequence inside one graph (for
    /// training). Returns the unclamped single-frame and multi-frame outputs.
    pub fn sequence_graph(
        &self,
        g: &mut Graph<T>,
        b: &BoundParams,
        frames: &[Tensor<T>],
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        if frames.is_empty() {
            return Err(Error::EmptyBurst);
        }
        let mut singles = Vec::with_capacity(frames.len());
        let mut multis = Vec::with_capacity(frames.len());
        let mut state: Option<Vec<Var>> = None;
        for frame in frames {
            let x = g.constant(as_batch(frame)?);
            let (features, out_s) = self.single_frame_graph(g, b, x)?;
            let prev = match state.take() {
                Some(s) => s,
                None => features
                    .iter()
                    .map(|&f| {
                        let shape = g.shape(f).to_vec();
                        g.constant(Tensor::zeros(&shape))
                    })
                    .collect(),
            };
            let (out_m, next) = self.recurrent_graph(g, b, &features, &prev)?;
            singles.push(out_s);
            multis.push(out_m);
            state = Some(next);
        }
        Ok((singles, multis))
    }
}

/// Parameter handles inside one [`Graph`], in canonical order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Per-scale hidden state of the multi-frame network.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub scales: Vec<Tensor<T>>,
}

impl<T: Real> RecurrentState<T> {
    /// The all-zero state seen by the first frame, for packed extents `h x w`.
    pub fn zeros(config: &ArchitectureConfig, height: usize, width: usize) -> Self {
        let scales = (0..config.depth)
            .map(|s| Tensor::zeros(&[1, config.channels(s), height >> s, width >> s]))
            .collect();
        Self { scales }
    }
}

/// Per-frame outputs of [`forward_burst`], clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedSequence {
    pub single: Vec<Image>,
    pub multi: Vec<Image>,
}

/// Accepts `c x h x w` or `1 x c x h x w`.
fn as_batch<T: Real>(frame: &Tensor<T>) -> Result<Tensor<T>> {
    match frame.shape() {
        &[c, h, w] => frame.clone().with_requires_grad(false).reshape(&[1, c, h, w]),
        &[1, _, _, _] => Ok(frame.clone().with_requires_grad(false)),
        other => Err(Error::shape(
            "rfcn",
            format!("expected a c x h x w frame, got {other:?}"),
        )),
    }
}

fn clamp_tensor<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = t.clone().with_requires_grad(false);
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.max(T::zero()).min(T::one()));
    out
}

fn to_image<T: Real>(t: &Tensor<T>) -> Image {
    let (_, c, h, w) = t.dims4().expect("rank-4 network output");
    Image::new(c, h, w, t.data().iter().map(|v| v.as_f64() as f32).collect()).expect("extents match")
}

/// Output of [`single_frame_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SingleFrameOutput<T> {
    pub features: Vec<Tensor<T>>,
    /// Unclamped `1 x 3 x 2h x 2w` image.
    pub raw_image: Tensor<T>,
    /// The same image clamped to `[0, 1]`.
    pub image: Tensor<T>,
}

pub fn single_frame_forward<T: Real>(params: &RfcnParams<T>, frame: &Tensor<T>) -> Result<SingleFrameOutput<T>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let x = g.constant(as_batch(frame)?);
    let (features, out) = params.single_frame_graph(&mut g, &b, x)?;
    let raw_image = g.value(out).clone().with_requires_grad(false);
    Ok(SingleFrameOutput {
        features: features.iter().map(|&f| g.value(f).clone().with_requires_grad(false)).collect(),
        image: clamp_tensor(&raw_image),
        raw_image,
    })
}

/// Returns the clamped multi-frame image and the next state.
pub fn recurrent_step<T: Real>(
    params: &RfcnParams<T>,
    features: &[Tensor<T>],
    prev: &RecurrentState<T>,
) -> Result<(Tensor<T>, RecurrentState<T>)> {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let fv: Vec<Var> = features.iter().map(|f| g.constant(f.clone())).collect();
    let pv: Vec<Var> = prev.scales.iter().map(|s| g.constant(s.clone())).collect();
    let (out, next) = params.recurrent_graph(&mut g, &b, &fv, &pv)?;
    let next = RecurrentState {
        scales: next.iter().map(|&v| g.value(v).clone().with_requires_grad(false)).collect(),
    };
    Ok((clamp_tensor(g.value(out)), next))
}

/// Denoises every frame of a burst with both networks, threading the
/// recurrent state from frame to frame.
pub fn forward_burst<T: Real>(params: &RfcnParams<T>, burst: &PackedBurst) -> Result<DenoisedSequence> {
    let frames: Vec<Tensor<T>> = burst.frames.iter().map(|f| f.cast()).collect();
    forward_frames(params, &frames)
}

pub fn forward_frames<T: Real>(params: &RfcnParams<T>, frames: &[Tensor<T>]) -> Result<DenoisedSequence> {
    if frames.is_empty() {
        return Err(Error::EmptyBurst);
    }
    let mut single = Vec::with_capacity(frames.len());
    let mut multi = Vec::with_capacity(frames.len());
    let mut state: Option<RecurrentState<T>> = None;
    for frame in frames {
        let sf = single_frame_forward(params, frame)?;
        let prev = match state.take() {
            Some(s) => s,
            None => RecurrentState {
                scales: sf.features.iter().map(|f| Tensor::zeros(f.shape())).collect(),
            },
        };
        let (im, next) = recurrent_step(params, &sf.features, &prev)?;
        single.push(to_image(&sf.image));
        multi.push(to_image(&im));
        state = Some(next);
    }
    Ok(DenoisedSequence { single, multi })
}

/// Mean of the single-frame outputs over the burst: the per-frame denoise
/// then average baseline.
pub fn baseline_average<T: Real>(params: &RfcnParams<T>, burst: &PackedBurst) -> Result<Image> {
    if burst.is_empty() {
        return Err(Error::EmptyBurst);
    }
    let mut acc: Option<(usize, usize, usize, Vec<f64>)> = None;
    for frame in &burst.frames {
        let out = single_frame_forward(params, &frame.cast::<T>())?;
        let (_, c, h, w) = out.image.dims4().expect("rank-4 output");
        let entry = acc.get_or_insert_with(|| (c, h, w, vec![0.0; c * h * w]));
        for (a, v) in entry.3.iter_mut().zip(out.image.data()) {
            *a += v.as_f64();
        }
    }
    let (c, h, w, sum) = acc.expect("non-empty burst");
    let n = burst.len() as f64;
    let data = sum.iter().map(|&s| ((s / n) as f32).clamp(0.0, 1.0)).collect();
    Image::new(c, h, w, data)
}

/// Dual L1 objective: sum over frames of `l1(I_s^t, target) + l1(I_m^t, target)`.
pub fn burst_loss<T: Real>(g: &mut Graph<T>, singles: &[Var], multis: &[Var], target: Var) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&s, &m) in singles.iter().zip(multis) {
        for out in [s, m] {
            let term = g.l1_loss(out, target)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
    }
    total.ok_or(Error::EmptyBurst)
}
