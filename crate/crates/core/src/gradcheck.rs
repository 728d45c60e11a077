//! Finite-difference verification of analytic gradients.
//!
//! Analytic gradients are computed in the precision under test; the central
//! differences they are compared against are always evaluated in `f64`, since
//! an `f32` difference quotient is dominated by rounding noise.
//!
//! Every recorded operation is piecewise smooth. A coordinate is only compared
//! when both perturbed evaluations take exactly the same branches as the base
//! evaluation (see [`Graph::branch_fingerprint`]); coordinates whose
//! perturbation crosses a kink are reported as skipped rather than compared.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::{burst_loss, build_model, ArchitectureConfig, BoundParams, LEAKY_SLOPE};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that gradients
    /// that are zero up to rounding are judged on an absolute scale.
    pub denominator_floor: f64,
    /// Check at most this many evenly spaced coordinates per input.
    pub max_coords_per_input: Option<usize>,
}

impl GradCheckConfig {
    /// Settings for `f64` gradients: step 1e-4, tolerance 1e-6. Below the
    /// floor, the difference quotient of an O(1) loss carries rounding noise
    /// of order 1e-11, which is then judged on an absolute scale.
    pub const fn high_precision() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-6,
            denominator_floor: 3e-5,
            max_coords_per_input: None,
        }
    }

    /// Settings for `f32` gradients: step 1e-4, tolerance 1e-3.
    pub const fn standard() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-3,
            denominator_floor: 1e-4,
            max_coords_per_input: None,
        }
    }

    pub const fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub const fn with_max_coords(mut self, n: usize) -> Self {
        self.max_coords_per_input = Some(n);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation changed a branch decision.
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checked() > 0 && self.inputs.iter().all(|r| r.passed)
    }

    pub fn checked(&self) -> usize {
        self.inputs.iter().map(|r| r.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.inputs.iter().map(|r| r.skipped).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Draws inputs uniformly from `[-1, 1]` and checks `op` on them.
pub fn gradient_check_shapes<T, F, R>(
    op: F,
    reference: R,
    input_shapes: &[&[usize]],
    config: GradCheckConfig,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
    R: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = input_shapes
        .iter()
        .map(|shape| Tensor::from_fn(shape, |_| rng.random_range(-1.0..=1.0)))
        .collect();
    gradient_check(op, reference, &inputs, config)
}

/// Compares the analytic gradient of the scalar `op(inputs)`, computed in
/// `T`, against central finite differences of `reference`, the same
/// computation in `f64`, for every input tensor.
pub fn gradient_check<T, F, R>(
    op: F,
    reference: R,
    inputs: &[Tensor<f64>],
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
    R: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.cast())).collect();
    let loss = op(&mut graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match graph.grad(v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => alloc::vec![0.0; t.numel()],
        })
        .collect();
    drop(graph);

    let evaluate = |xs: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = reference(&mut g, &vs)?;
        Ok((g.value(out).data()[0], g.branch_fingerprint()))
    };
    let (_, base_branches) = evaluate(inputs)?;

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let h = config.step;
    let mut reports = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let n = inputs[k].numel();
        let coords: Vec<usize> = match config.max_coords_per_input {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        let mut report = InputReport {
            max_relative_error: 0.0,
            checked: 0,
            skipped: 0,
            passed: true,
        };
        for j in coords {
            let orig = inputs[k].data()[j];
            let (xp, xm) = (orig + h, orig - h);
            work[k].data_mut()[j] = xp;
            let (fp, bp) = evaluate(&work)?;
            work[k].data_mut()[j] = xm;
            let (fm, bm) = evaluate(&work)?;
            work[k].data_mut()[j] = orig;
            if bp != base_branches || bm != base_branches {
                report.skipped += 1;
                continue;
            }
            // Divide by the step actually representable around `orig`.
            let numeric = (fp - fm) / (xp - xm);
            let err = relative_error(analytic[k][j], numeric, config.denominator_floor);
            report.max_relative_error = report.max_relative_error.max(err);
            report.checked += 1;
        }
        report.passed = report.max_relative_error <= config.tolerance;
        reports.push(report);
    }
    Ok(GradCheckReport {
        inputs: reports,
        tolerance: config.tolerance,
    })
}

/// Scalarizes `out` as `sum(out * w)` with fixed pseudo-random weights, so
/// that every output element contributes a distinct gradient.
fn weighted_sum<T: Real>(g: &mut Graph<T>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(random_tensor(&shape, seed ^ 0x5eed_0000));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn random_tensor<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-1.0..=1.0)))
}

fn conv3<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.conv2d(v[0], v[1], v[2])?;
    weighted_sum(g, y, 1)
}

fn conv1<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.conv2d(v[0], v[1], v[2])?;
    weighted_sum(g, y, 2)
}

fn tconv<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.transposed_conv2d(v[0], v[1])?;
    weighted_sum(g, y, 3)
}

fn maxpool<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.maxpool2x2(v[0])?;
    weighted_sum(g, y, 4)
}

fn leaky<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.leaky_relu(v[0], T::of(LEAKY_SLOPE));
    weighted_sum(g, y, 5)
}

fn concat<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.concat_channels(v[0], v[1])?;
    weighted_sum(g, y, 6)
}

fn d2s<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.depth_to_space(v[0])?;
    weighted_sum(g, y, 7)
}

fn s2d<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.space_to_depth(v[0])?;
    weighted_sum(g, y, 8)
}

fn l1<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let shape = g.shape(v[0]).to_vec();
    let t = g.constant(random_tensor(&shape, 0x7a59e7));
    g.l1_loss(v[0], t)
}

fn add<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.add(v[0], v[1])?;
    weighted_sum(g, y, 10)
}

fn mul<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.mul(v[0], v[1])?;
    weighted_sum(g, y, 11)
}

fn sum<T: Real>(g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
    let y = g.sum(v[0]);
    let two = g.constant(Tensor::scalar(T::of(2.0)));
    g.mul(y, two)
}

type OpFn<T> = fn(&mut Graph<T>, &[Var]) -> Result<Var>;

/// Gradient checks of every differentiable graph operation on small random
/// inputs, one named report per operation.
pub fn op_suite<T: Real>(config: GradCheckConfig, seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let cases: [(&'static str, &[&[usize]], OpFn<T>, OpFn<f64>); 12] = [
        ("conv2d_3x3", &[&[2, 3, 5, 6], &[4, 3, 3, 3], &[4]], conv3, conv3),
        ("conv2d_1x1", &[&[1, 3, 4, 4], &[5, 3, 1, 1], &[5]], conv1, conv1),
        ("transposed_conv2d", &[&[2, 3, 3, 4], &[3, 2, 2, 2]], tconv, tconv),
        ("maxpool2x2", &[&[2, 2, 4, 6]], maxpool, maxpool),
        ("leaky_relu", &[&[2, 3, 4, 4]], leaky, leaky),
        ("concat_channels", &[&[1, 2, 3, 3], &[1, 3, 3, 3]], concat, concat),
        ("depth_to_space", &[&[1, 8, 3, 2]], d2s, d2s),
        ("space_to_depth", &[&[1, 2, 4, 6]], s2d, s2d),
        ("l1_loss", &[&[1, 3, 4, 4]], l1, l1),
        ("add", &[&[3, 4], &[3, 4]], add, add),
        ("mul", &[&[3, 4], &[3, 4]], mul, mul),
        ("sum", &[&[2, 5]], sum, sum),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, op, reference))| {
            Ok((name, gradient_check_shapes(op, reference, shapes, config, seed + i as u64)?))
        })
        .collect()
}

/// Checks the gradient of the summed dual L1 loss with respect to every
/// network parameter, for a random burst of `frames` frames and a random
/// `patch x patch` target.
pub fn loss_check<T: Real>(
    arch: ArchitectureConfig,
    patch: usize,
    frames: usize,
    config: GradCheckConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    let reference = build_model::<f64>(arch, seed)?;
    let model = reference.cast::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let q = patch / 2;
    let burst: Vec<Tensor<f64>> = (0..frames)
        .map(|_| Tensor::from_fn(&[4, q, q], |_| rng.random_range(0.0..=1.0)))
        .collect();
    let target = Tensor::from_fn(&[1, 3, patch, patch], |_| rng.random_range(0.0..=1.0));
    let burst_t: Vec<Tensor<T>> = burst.iter().map(|f| f.cast()).collect();
    let target_t: Tensor<T> = target.cast();
    let inputs: Vec<Tensor<f64>> = reference.params().iter().map(|p| p.tensor.clone()).collect();
    gradient_check(
        |g: &mut Graph<T>, vars: &[Var]| {
            let b = BoundParams { vars: vars.to_vec() };
            let (singles, multis) = model.sequence_graph(g, &b, &burst_t)?;
            let t = g.constant(target_t.clone());
            burst_loss(g, &singles, &multis, t)
        },
        |g: &mut Graph<f64>, vars: &[Var]| {
            let b = BoundParams { vars: vars.to_vec() };
            let (singles, multis) = reference.sequence_graph(g, &b, &burst)?;
            let t = g.constant(target.clone());
            burst_loss(g, &singles, &multis, t)
        },
        &inputs,
        config,
    )
}
